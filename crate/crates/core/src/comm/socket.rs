//! Multi-process transport over local TCP streams. Rank 0 listens at the
//! rendezvous address; every other rank connects to it and introduces itself
//! with a handshake frame carrying `(rank, world_size)`.

use std::io::ErrorKind;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::thread;
use std::time::{Duration, Instant};

use super::frame::{Frame, FrameKind};
use super::{Communicator, Link, RecvError};
use crate::error::{Error, Result};

pub(crate) struct SocketLink {
    peers: Vec<Option<TcpStream>>,
}

impl Link for SocketLink {
    fn send(&self, peer: usize, frame: Frame) -> Result<()> {
        let mut stream = self.stream(peer).map_err(Error::Transport)?;
        frame
            .write_to(&mut stream)
            .map_err(|e| Error::Transport(format!("send to rank {peer}: {e}")))
    }

    fn recv(&self, peer: usize, timeout: Duration) -> std::result::Result<Frame, RecvError> {
        let mut stream = self.stream(peer).map_err(RecvError::Closed)?;
        stream
            .set_read_timeout(Some(timeout.max(Duration::from_millis(1))))
            .map_err(|e| RecvError::Closed(e.to_string()))?;
        Frame::read_from(&mut stream).map_err(|e| match e.kind() {
            ErrorKind::WouldBlock | ErrorKind::TimedOut => RecvError::Timeout,
            _ => RecvError::Closed(format!("rank {peer}: {e}")),
        })
    }
}

impl SocketLink {
    fn stream(&self, peer: usize) -> std::result::Result<&TcpStream, String> {
        self.peers
            .get(peer)
            .and_then(Option::as_ref)
            .ok_or_else(|| format!("no connection to rank {peer}"))
    }
}

fn encode_hello(rank: usize, world_size: usize) -> Vec<u8> {
    let mut p = Vec::with_capacity(8);
    p.extend_from_slice(&(rank as u32).to_le_bytes());
    p.extend_from_slice(&(world_size as u32).to_le_bytes());
    p
}

fn reply(stream: &mut TcpStream, status: Result<(), String>) {
    let payload = match status {
        Ok(()) => vec![0],
        Err(msg) => {
            let mut p = vec![1];
            p.extend_from_slice(msg.as_bytes());
            p
        }
    };
    // best effort: the peer may already be gone
    let _ = Frame::new(FrameKind::Handshake, payload).write_to(stream);
}

/// Listening side of the rendezvous, held by rank 0.
pub struct SocketRendezvous {
    listener: TcpListener,
}

impl SocketRendezvous {
    /// Binds the rendezvous address. Port 0 picks a free port; read it back
    /// with [`SocketRendezvous::local_addr`] and hand it to the other ranks.
    pub fn bind(addr: SocketAddr) -> Result<Self> {
        let listener = TcpListener::bind(addr)
            .map_err(|e| Error::Transport(format!("bind {addr}: {e}")))?;
        Ok(SocketRendezvous { listener })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        self.listener
            .local_addr()
            .map_err(|e| Error::Transport(e.to_string()))
    }

    /// Waits for ranks `1..world_size` to connect and handshake, then
    /// returns rank 0's communicator.
    pub fn accept(self, world_size: usize, timeout: Duration) -> Result<Communicator> {
        if world_size == 0 {
            return Err(Error::Handshake("world size must be at least 1".into()));
        }
        let deadline = Instant::now() + timeout;
        self.listener
            .set_nonblocking(true)
            .map_err(|e| Error::Transport(e.to_string()))?;
        let mut peers: Vec<Option<TcpStream>> = (0..world_size).map(|_| None).collect();
        let mut joined = 1;
        while joined < world_size {
            match self.listener.accept() {
                Ok((mut stream, _)) => {
                    stream
                        .set_nonblocking(false)
                        .and_then(|_| stream.set_nodelay(true))
                        .map_err(|e| Error::Transport(e.to_string()))?;
                    let remaining = deadline.saturating_duration_since(Instant::now());
                    stream
                        .set_read_timeout(Some(remaining.max(Duration::from_millis(10))))
                        .map_err(|e| Error::Transport(e.to_string()))?;
                    let hello = Frame::read_from(&mut stream)
                        .map_err(|e| Error::Handshake(format!("reading hello: {e}")))?;
                    if hello.kind != FrameKind::Handshake || hello.payload.len() != 8 {
                        reply(&mut stream, Err("malformed handshake".into()));
                        return Err(Error::Handshake("malformed handshake frame".into()));
                    }
                    let rank = u32::from_le_bytes(hello.payload[0..4].try_into().unwrap()) as usize;
                    let their_world =
                        u32::from_le_bytes(hello.payload[4..8].try_into().unwrap()) as usize;
                    if their_world != world_size {
                        let msg = format!(
                            "rank {rank} expects world size {their_world}, rendezvous has {world_size}"
                        );
                        reply(&mut stream, Err(msg.clone()));
                        return Err(Error::Handshake(msg));
                    }
                    if rank == 0 || rank >= world_size || peers[rank].is_some() {
                        let msg = format!("invalid or duplicate rank {rank}");
                        reply(&mut stream, Err(msg.clone()));
                        return Err(Error::Handshake(msg));
                    }
                    peers[rank] = Some(stream);
                    joined += 1;
                }
                Err(e) if e.kind() == ErrorKind::WouldBlock => {
                    if Instant::now() >= deadline {
                        let missing = (1..world_size).filter(|&r| peers[r].is_none()).collect();
                        return Err(Error::Timeout {
                            operation: "handshake",
                            missing,
                        });
                    }
                    thread::sleep(Duration::from_millis(5));
                }
                Err(e) => return Err(Error::Transport(format!("accept: {e}"))),
            }
        }
        for stream in peers.iter_mut().flatten() {
            reply(stream, Ok(()));
        }
        Ok(Communicator::from_link(
            0,
            world_size,
            timeout,
            Box::new(SocketLink { peers }),
        ))
    }
}

/// Joins the group as `rank` (≥ 1) by connecting to rank 0 at `addr`,
/// retrying until `timeout` elapses.
pub fn connect(addr: SocketAddr, rank: usize, world_size: usize, timeout: Duration) -> Result<Communicator> {
    if rank == 0 || rank >= world_size {
        return Err(Error::Handshake(format!(
            "rank {rank} cannot join a world of {world_size} by connecting"
        )));
    }
    let deadline = Instant::now() + timeout;
    let mut stream = loop {
        match TcpStream::connect_timeout(&addr, Duration::from_millis(200)) {
            Ok(s) => break s,
            Err(e) => {
                if Instant::now() >= deadline {
                    return Err(Error::Handshake(format!(
                        "rendezvous {addr} unreachable: {e}"
                    )));
                }
                thread::sleep(Duration::from_millis(20));
            }
        }
    };
    stream
        .set_nodelay(true)
        .map_err(|e| Error::Transport(e.to_string()))?;
    Frame::new(FrameKind::Handshake, encode_hello(rank, world_size))
        .write_to(&mut stream)
        .map_err(|e| Error::Handshake(format!("sending hello: {e}")))?;
    let remaining = deadline.saturating_duration_since(Instant::now());
    stream
        .set_read_timeout(Some(remaining.max(Duration::from_millis(10))))
        .map_err(|e| Error::Transport(e.to_string()))?;
    let ack = Frame::read_from(&mut stream)
        .map_err(|e| Error::Handshake(format!("waiting for rendezvous ack: {e}")))?;
    match ack.payload.first() {
        Some(0) if ack.kind == FrameKind::Handshake => {}
        Some(1) => {
            return Err(Error::Handshake(
                String::from_utf8_lossy(&ack.payload[1..]).into_owned(),
            ))
        }
        _ => return Err(Error::Handshake("malformed rendezvous ack".into())),
    }
    let mut peers: Vec<Option<TcpStream>> = (0..world_size).map(|_| None).collect();
    peers[0] = Some(stream);
    Ok(Communicator::from_link(
        rank,
        world_size,
        timeout,
        Box::new(SocketLink { peers }),
    ))
}
