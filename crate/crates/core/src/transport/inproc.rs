//! In-process backend: one FIFO channel per direction of every master-worker link.

use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::time::{Duration, Instant};

use super::{check_link, Comm, Endpoint, Message, Rank, TransportError, DEFAULT_TIMEOUT};

struct Link {
    tx: Sender<Message>,
    rx: Receiver<Message>,
}

pub struct InProcEndpoint {
    rank: Rank,
    // indexed by peer rank; `None` where no link exists
    links: Vec<Option<Link>>,
    timeout: Option<Duration>,
    epoch: Instant,
}

/// Builder for a world of in-process endpoints.
pub struct InProcWorld {
    world_size: u16,
    timeout: Option<Duration>,
}

impl InProcWorld {
    pub fn new(world_size: u16) -> Self {
        InProcWorld {
            world_size,
            timeout: Some(DEFAULT_TIMEOUT),
        }
    }

    /// `None` blocks forever.
    pub fn timeout(mut self, timeout: Option<Duration>) -> Self {
        self.timeout = timeout;
        self
    }

    /// Returns endpoints indexed by rank.
    ///
    /// # Panics
    /// If `world_size < 2`.
    pub fn build(self) -> Vec<InProcEndpoint> {
        let n = self.world_size;
        assert!(n >= 2, "a farm world needs at least two ranks");
        let epoch = Instant::now();
        let mut eps: Vec<InProcEndpoint> = (0..n)
            .map(|id| InProcEndpoint {
                rank: Rank::new(id, n).unwrap(),
                links: (0..n).map(|_| None).collect(),
                timeout: self.timeout,
                epoch,
            })
            .collect();
        for w in 1..n as usize {
            let (to_worker, from_master) = mpsc::channel();
            let (to_master, from_worker) = mpsc::channel();
            eps[0].links[w] = Some(Link {
                tx: to_worker,
                rx: from_worker,
            });
            eps[w].links[0] = Some(Link {
                tx: to_master,
                rx: from_master,
            });
        }
        eps
    }

    pub fn into_comms(self) -> Vec<Comm<InProcEndpoint>> {
        self.build().into_iter().map(Comm::new).collect()
    }
}

impl InProcEndpoint {
    fn link(&self, peer: u16) -> Result<&Link, TransportError> {
        check_link(self.rank, peer)?;
        Ok(self.links[peer as usize].as_ref().expect("star link"))
    }
}

impl Endpoint for InProcEndpoint {
    fn rank(&self) -> Rank {
        self.rank
    }

    fn send(&mut self, to: u16, msg: &Message) -> Result<(), TransportError> {
        self.link(to)?
            .tx
            .send(msg.clone())
            .map_err(|_| TransportError::Disconnected { peer: to })
    }

    fn recv(&mut self, from: u16) -> Result<Message, TransportError> {
        let link = self.link(from)?;
        match self.timeout {
            None => link
                .rx
                .recv()
                .map_err(|_| TransportError::Disconnected { peer: from }),
            Some(t) => link.rx.recv_timeout(t).map_err(|e| match e {
                RecvTimeoutError::Timeout => TransportError::Timeout {
                    peer: from,
                    waited: t,
                },
                RecvTimeoutError::Disconnected => TransportError::Disconnected { peer: from },
            }),
        }
    }

    fn now(&self) -> f64 {
        self.epoch.elapsed().as_secs_f64()
    }
}
