use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender};
use std::time::Duration;

use super::frame::Frame;
use super::{Link, RecvError};
use crate::error::{Error, Result};

/// Channel-backed link for ranks that live in the same process. Only the
/// root is connected to everyone; other ranks talk to the root alone.
pub(crate) struct InProcessLink {
    to: Vec<Option<Sender<Frame>>>,
    from: Vec<Option<Receiver<Frame>>>,
}

/// Builds the links for a star of `world_size` ranks, indexed by rank.
pub(crate) fn star(world_size: usize) -> Vec<InProcessLink> {
    let mut links: Vec<InProcessLink> = (0..world_size)
        .map(|_| InProcessLink {
            to: (0..world_size).map(|_| None).collect(),
            from: (0..world_size).map(|_| None).collect(),
        })
        .collect();
    for r in 1..world_size {
        let (up_tx, up_rx) = channel();
        let (down_tx, down_rx) = channel();
        links[r].to[0] = Some(up_tx);
        links[0].from[r] = Some(up_rx);
        links[0].to[r] = Some(down_tx);
        links[r].from[0] = Some(down_rx);
    }
    links
}

impl Link for InProcessLink {
    fn send(&self, peer: usize, frame: Frame) -> Result<()> {
        let tx = self
            .to
            .get(peer)
            .and_then(Option::as_ref)
            .ok_or_else(|| Error::Transport(format!("no channel to rank {peer}")))?;
        tx.send(frame)
            .map_err(|_| Error::Transport(format!("rank {peer} has left the group")))
    }

    fn recv(&self, peer: usize, timeout: Duration) -> std::result::Result<Frame, RecvError> {
        let rx = self
            .from
            .get(peer)
            .and_then(Option::as_ref)
            .ok_or_else(|| RecvError::Closed(format!("no channel from rank {peer}")))?;
        rx.recv_timeout(timeout).map_err(|e| match e {
            RecvTimeoutError::Timeout => RecvError::Timeout,
            RecvTimeoutError::Disconnected => {
                RecvError::Closed(format!("rank {peer} has left the group"))
            }
        })
    }
}
