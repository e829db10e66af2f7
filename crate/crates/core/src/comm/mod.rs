//! Rank/world handle and the collectives that persistent filters and the
//! parallel writer rely on.
//!
//! All transports share one star topology: rank 0 talks to every rank, the
//! others talk only to rank 0. Every collective is a gather to the root
//! followed (where needed) by a broadcast back, so reductions always happen
//! on the root in rank order `0, 1, 2, ...` and every rank receives the same
//! bytes.
//!
//! Collectives are blocking and must be entered by every rank in the same
//! order.

mod frame;
mod inproc;
mod socket;

use std::net::SocketAddr;
use std::time::{Duration, Instant};

pub use frame::{Frame, FrameKind};
pub use socket::{connect, SocketRendezvous};

use crate::error::{Error, Result};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

pub(crate) enum RecvError {
    Timeout,
    Closed(String),
}

/// Point-to-point frame delivery between a rank and its star neighbours.
pub(crate) trait Link: Send {
    fn send(&self, peer: usize, frame: Frame) -> Result<()>;
    fn recv(&self, peer: usize, timeout: Duration) -> std::result::Result<Frame, RecvError>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Min,
    Max,
}

/// A value that can travel through [`Communicator::all_reduce`].
pub trait Element: Copy + Send + 'static {
    const WIDTH: usize;
    fn put_le(self, out: &mut Vec<u8>);
    fn get_le(bytes: &[u8]) -> Self;
    fn combine(self, other: Self, op: ReduceOp) -> Self;
}

macro_rules! element {
    ($t:ty, $sum:expr) => {
        impl Element for $t {
            const WIDTH: usize = std::mem::size_of::<$t>();

            fn put_le(self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.to_le_bytes());
            }

            fn get_le(bytes: &[u8]) -> Self {
                <$t>::from_le_bytes(bytes.try_into().expect("element width"))
            }

            fn combine(self, other: Self, op: ReduceOp) -> Self {
                match op {
                    ReduceOp::Sum => $sum(self, other),
                    ReduceOp::Min => {
                        if other < self {
                            other
                        } else {
                            self
                        }
                    }
                    ReduceOp::Max => {
                        if other > self {
                            other
                        } else {
                            self
                        }
                    }
                }
            }
        }
    };
}

element!(f64, |a: f64, b: f64| a + b);
element!(i64, |a: i64, b: i64| a.wrapping_add(b));
element!(u64, |a: u64, b: u64| a.wrapping_add(b));
element!(u128, |a: u128, b: u128| a.wrapping_add(b));

/// Transport selection for [`comm_init`].
#[derive(Clone, Debug)]
pub enum TransportConfig {
    /// Single rank, no I/O.
    Loopback,
    /// Local TCP rendezvous. Rank 0 binds `addr`; others connect to it.
    Socket { addr: SocketAddr, timeout: Duration },
}

/// Creates a communicator for transports addressed by configuration.
/// In-process groups are built together with [`Communicator::in_process_group`].
pub fn comm_init(world_size: usize, rank: usize, config: &TransportConfig) -> Result<Communicator> {
    if rank >= world_size {
        return Err(Error::Handshake(format!(
            "rank {rank} is outside a world of {world_size}"
        )));
    }
    match config {
        TransportConfig::Loopback => {
            if world_size != 1 {
                return Err(Error::Handshake(format!(
                    "loopback transport supports world size 1, got {world_size}"
                )));
            }
            Ok(Communicator::loopback())
        }
        TransportConfig::Socket { addr, timeout } => {
            if rank == 0 {
                SocketRendezvous::bind(*addr)?.accept(world_size, *timeout)
            } else {
                connect(*addr, rank, world_size, *timeout)
            }
        }
    }
}

pub struct Communicator {
    rank: usize,
    world_size: usize,
    timeout: Duration,
    link: Option<Box<dyn Link>>,
}

impl std::fmt::Debug for Communicator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Communicator")
            .field("rank", &self.rank)
            .field("world_size", &self.world_size)
            .field("timeout", &self.timeout)
            .finish()
    }
}

impl Communicator {
    /// World of one: every collective is the identity.
    pub fn loopback() -> Self {
        Communicator {
            rank: 0,
            world_size: 1,
            timeout: DEFAULT_TIMEOUT,
            link: None,
        }
    }

    /// One communicator per rank, connected by channels. Move each into its
    /// own thread.
    pub fn in_process_group(world_size: usize, timeout: Duration) -> Vec<Communicator> {
        assert!(world_size >= 1, "world size must be at least 1");
        if world_size == 1 {
            return vec![Communicator::loopback().with_timeout(timeout)];
        }
        inproc::star(world_size)
            .into_iter()
            .enumerate()
            .map(|(rank, link)| Communicator::from_link(rank, world_size, timeout, Box::new(link)))
            .collect()
    }

    pub(crate) fn from_link(rank: usize, world_size: usize, timeout: Duration, link: Box<dyn Link>) -> Self {
        Communicator {
            rank,
            world_size,
            timeout,
            link: Some(link),
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn world_size(&self) -> usize {
        self.world_size
    }

    pub fn is_root(&self) -> bool {
        self.rank == 0
    }

    pub fn timeout(&self) -> Duration {
        self.timeout
    }

    fn link(&self) -> &dyn Link {
        self.link.as_deref().expect("multi-rank communicator has a link")
    }

    /// Root side of a gather: one frame of `kind` from every other rank.
    fn collect(&self, kind: FrameKind, operation: &'static str) -> Result<Vec<Vec<u8>>> {
        let deadline = Instant::now() + self.timeout;
        let mut received = vec![Vec::new(); self.world_size];
        let mut missing = Vec::new();
        for (peer, slot) in received.iter_mut().enumerate().skip(1) {
            let wait = deadline.saturating_duration_since(Instant::now());
            match self.link().recv(peer, wait.max(Duration::from_millis(1))) {
                Ok(frame) if frame.kind == kind => *slot = frame.payload,
                Ok(frame) => {
                    return Err(Error::Protocol(format!(
                        "{operation}: rank {peer} sent a {:?} frame, expected {kind:?}",
                        frame.kind
                    )))
                }
                Err(RecvError::Timeout) => missing.push(peer),
                Err(RecvError::Closed(msg)) => return Err(Error::Transport(msg)),
            }
        }
        if missing.is_empty() {
            Ok(received)
        } else {
            Err(Error::Timeout { operation, missing })
        }
    }

    fn recv_from_root(&self, kind: FrameKind, operation: &'static str) -> Result<Vec<u8>> {
        match self.link().recv(0, self.timeout) {
            Ok(frame) if frame.kind == kind => Ok(frame.payload),
            Ok(frame) => Err(Error::Protocol(format!(
                "{operation}: root sent a {:?} frame, expected {kind:?}",
                frame.kind
            ))),
            Err(RecvError::Timeout) => Err(Error::Timeout {
                operation,
                missing: vec![0],
            }),
            Err(RecvError::Closed(msg)) => Err(Error::Transport(msg)),
        }
    }

    fn send_to_all(&self, kind: FrameKind, payload: &[u8]) -> Result<()> {
        for peer in 1..self.world_size {
            self.link().send(peer, Frame::new(kind, payload.to_vec()))?;
        }
        Ok(())
    }

    /// Rank 0 receives every rank's payload in rank order; other ranks get
    /// `None`.
    pub fn gather_to_root(&self, value: &[u8]) -> Result<Option<Vec<Vec<u8>>>> {
        if self.world_size == 1 {
            return Ok(Some(vec![value.to_vec()]));
        }
        if self.is_root() {
            let mut all = self.collect(FrameKind::Collective, "gather")?;
            all[0] = value.to_vec();
            Ok(Some(all))
        } else {
            self.link()
                .send(0, Frame::new(FrameKind::Collective, value.to_vec()))?;
            Ok(None)
        }
    }

    /// Every rank returns rank 0's `value`; the argument is ignored elsewhere.
    pub fn broadcast_from_root(&self, value: &[u8]) -> Result<Vec<u8>> {
        if self.world_size == 1 {
            return Ok(value.to_vec());
        }
        if self.is_root() {
            self.send_to_all(FrameKind::Collective, value)?;
            Ok(value.to_vec())
        } else {
            self.recv_from_root(FrameKind::Collective, "broadcast")
        }
    }

    /// Elementwise reduction over all ranks, evaluated on the root in rank
    /// order, so floating-point sums are reproducible run to run.
    pub fn all_reduce<T: Element>(&self, values: &[T], op: ReduceOp) -> Result<Vec<T>> {
        if self.world_size == 1 {
            return Ok(values.to_vec());
        }
        let mut bytes = Vec::with_capacity(values.len() * T::WIDTH);
        values.iter().for_each(|v| v.put_le(&mut bytes));
        let gathered = self.gather_to_root(&bytes)?;

        // replies carry a status byte so a length mismatch fails every rank
        let reply = match gathered {
            Some(all) => {
                let result = if let Some(bad) = all.iter().position(|p| p.len() != bytes.len()) {
                    Err(format!(
                        "all_reduce length mismatch: rank {bad} sent {} elements, root has {}",
                        all[bad].len() / T::WIDTH,
                        values.len()
                    ))
                } else {
                    let mut acc: Vec<T> = values.to_vec();
                    for payload in &all[1..] {
                        for (a, chunk) in acc.iter_mut().zip(payload.chunks_exact(T::WIDTH)) {
                            *a = a.combine(T::get_le(chunk), op);
                        }
                    }
                    Ok(acc)
                };
                let mut out = Vec::new();
                match &result {
                    Ok(acc) => {
                        out.push(0);
                        acc.iter().for_each(|v| v.put_le(&mut out));
                    }
                    Err(msg) => {
                        out.push(1);
                        out.extend_from_slice(msg.as_bytes());
                    }
                }
                self.broadcast_from_root(&out)?
            }
            None => self.broadcast_from_root(&[])?,
        };
        match reply.first() {
            Some(0) => Ok(reply[1..].chunks_exact(T::WIDTH).map(T::get_le).collect()),
            Some(1) => Err(Error::Protocol(String::from_utf8_lossy(&reply[1..]).into_owned())),
            _ => Err(Error::Protocol("malformed all_reduce reply".into())),
        }
    }

    /// Returns only after every rank has entered. On timeout the root reports
    /// the ranks that never arrived; other ranks report the root.
    pub fn barrier(&self) -> Result<()> {
        if self.world_size == 1 {
            return Ok(());
        }
        if self.is_root() {
            self.collect(FrameKind::Barrier, "barrier")?;
            self.send_to_all(FrameKind::Barrier, &[])
        } else {
            self.link().send(0, Frame::new(FrameKind::Barrier, Vec::new()))?;
            self.recv_from_root(FrameKind::Barrier, "barrier").map(|_| ())
        }
    }
}
