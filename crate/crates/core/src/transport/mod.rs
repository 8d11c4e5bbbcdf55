//! Message passing between the master (rank 0) and workers (ranks 1..=K).
//!
//! The topology is a star: every worker has exactly one link, to the master.
//! Three backends implement [`Endpoint`]: in-process channels, TCP with
//! length-prefixed frames, and a virtual-clock network that charges the farm
//! cost model for every message instead of measuring wall time.
//!
//! [`Comm`] layers the collectives used by the farm on top of an endpoint:
//! sequential [`distribute`](Comm::distribute), rank-ordered
//! [`gather`](Comm::gather) and a master-coordinated [`barrier`](Comm::barrier).

use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub mod frame;
pub mod inproc;
pub mod tcp;
pub mod virtual_net;

pub use frame::FrameError;
pub use inproc::{InProcEndpoint, InProcWorld};
pub use tcp::TcpEndpoint;
pub use virtual_net::{VirtualCost, VirtualEndpoint, VirtualNetwork};

/// Default wall-clock timeout for blocking receives on real backends.
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, thiserror::Error)]
pub enum TransportError {
    #[error("peer {peer} disconnected")]
    Disconnected { peer: u16 },

    #[error("timed out after {waited:?} waiting for rank {peer}")]
    Timeout { peer: u16, waited: Duration },

    #[error("no link from rank {from} to rank {to} (world size {world_size})")]
    NoLink { from: u16, to: u16, world_size: u16 },

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error(transparent)]
    Frame(#[from] FrameError),

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Position of a process in a farm world. Rank 0 is the master.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rank {
    id: u16,
    world_size: u16,
}

impl Rank {
    pub fn new(id: u16, world_size: u16) -> Result<Self, TransportError> {
        if world_size < 2 {
            return Err(TransportError::Protocol(format!(
                "a farm world needs a master and at least one worker, got size {world_size}"
            )));
        }
        if id >= world_size {
            return Err(TransportError::Protocol(format!(
                "rank {id} outside world of size {world_size}"
            )));
        }
        Ok(Rank { id, world_size })
    }

    pub fn id(self) -> u16 {
        self.id
    }

    pub fn world_size(self) -> u16 {
        self.world_size
    }

    pub fn workers(self) -> u16 {
        self.world_size - 1
    }

    pub fn is_master(self) -> bool {
        self.id == 0
    }

    /// Worker ranks `1..=K`.
    pub fn worker_ranks(self) -> impl Iterator<Item = u16> {
        1..self.world_size
    }
}

impl fmt::Display for Rank {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.id, self.world_size)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Tag {
    Job = 0,
    Result = 1,
    Barrier = 2,
    Control = 3,
}

impl TryFrom<u8> for Tag {
    type Error = FrameError;

    fn try_from(b: u8) -> Result<Self, FrameError> {
        Ok(match b {
            0 => Tag::Job,
            1 => Tag::Result,
            2 => Tag::Barrier,
            3 => Tag::Control,
            other => return Err(FrameError::UnknownTag(other)),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Message {
    pub tag: Tag,
    pub payload: Vec<u8>,
}

impl Message {
    pub fn new(tag: Tag, payload: impl Into<Vec<u8>>) -> Self {
        Message {
            tag,
            payload: payload.into(),
        }
    }

    pub fn job(payload: impl Into<Vec<u8>>) -> Self {
        Self::new(Tag::Job, payload)
    }

    pub fn result(payload: impl Into<Vec<u8>>) -> Self {
        Self::new(Tag::Result, payload)
    }

    pub fn control(payload: impl Into<Vec<u8>>) -> Self {
        Self::new(Tag::Control, payload)
    }

    pub(crate) fn expect(self, tag: Tag, from: u16) -> Result<Self, TransportError> {
        if self.tag != tag {
            return Err(TransportError::Protocol(format!(
                "expected {tag:?} from rank {from}, got {:?}",
                self.tag
            )));
        }
        Ok(self)
    }
}

/// Local work a rank reports to its clock.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Work {
    /// A worker executed its job.
    Compute,
    /// The master processed gathered results.
    Reduce,
    /// The master waited for workers whose slowest compute took this long.
    AwaitWorkers(f64),
}

/// One rank's view of the world. Owned by exactly one execution context.
pub trait Endpoint: Send {
    fn rank(&self) -> Rank;

    fn send(&mut self, to: u16, msg: &Message) -> Result<(), TransportError>;

    /// Blocks until the next message from `from` arrives. Messages from one
    /// sender are delivered in send order.
    fn recv(&mut self, from: u16) -> Result<Message, TransportError>;

    /// Current time on this rank's clock.
    fn now(&self) -> f64;

    /// Accounts local work that took `measured` on the wall clock and
    /// returns the duration charged to this rank. Real clocks have already
    /// advanced, so they return the measurement unchanged and charge nothing
    /// for waiting.
    fn charge(&mut self, work: Work, measured: f64) -> f64 {
        match work {
            Work::AwaitWorkers(_) => 0.0,
            Work::Compute | Work::Reduce => measured,
        }
    }
}

impl<E: Endpoint + ?Sized> Endpoint for Box<E> {
    fn rank(&self) -> Rank {
        (**self).rank()
    }

    fn send(&mut self, to: u16, msg: &Message) -> Result<(), TransportError> {
        (**self).send(to, msg)
    }

    fn recv(&mut self, from: u16) -> Result<Message, TransportError> {
        (**self).recv(from)
    }

    fn now(&self) -> f64 {
        (**self).now()
    }

    fn charge(&mut self, work: Work, measured: f64) -> f64 {
        (**self).charge(work, measured)
    }
}

pub(crate) fn check_link(me: Rank, peer: u16) -> Result<(), TransportError> {
    let ok = peer < me.world_size() && peer != me.id() && (me.is_master() || peer == 0);
    if ok {
        Ok(())
    } else {
        Err(TransportError::NoLink {
            from: me.id(),
            to: peer,
            world_size: me.world_size(),
        })
    }
}

/// Collectives over an [`Endpoint`].
pub struct Comm<E> {
    ep: E,
    barrier_epoch: u64,
}

impl<E: Endpoint> Comm<E> {
    pub fn new(ep: E) -> Self {
        Comm {
            ep,
            barrier_epoch: 0,
        }
    }

    pub fn rank(&self) -> Rank {
        self.ep.rank()
    }

    pub fn endpoint(&mut self) -> &mut E {
        &mut self.ep
    }

    pub fn into_inner(self) -> E {
        self.ep
    }

    pub fn now(&self) -> f64 {
        self.ep.now()
    }

    pub fn charge(&mut self, work: Work, measured: f64) -> f64 {
        self.ep.charge(work, measured)
    }

    pub fn send(&mut self, to: u16, msg: &Message) -> Result<(), TransportError> {
        self.ep.send(to, msg)
    }

    pub fn recv(&mut self, from: u16) -> Result<Message, TransportError> {
        self.ep.recv(from)
    }

    /// Number of barriers completed so far.
    pub fn barrier_epoch(&self) -> u64 {
        self.barrier_epoch
    }

    fn require_master(&self, op: &str) -> Result<(), TransportError> {
        if self.rank().is_master() {
            Ok(())
        } else {
            Err(TransportError::Protocol(format!(
                "{op} must be called by the master, not rank {}",
                self.rank().id()
            )))
        }
    }

    /// Sends the same message to every worker, one after another in rank order.
    pub fn distribute(&mut self, msg: &Message) -> Result<(), TransportError> {
        self.require_master("distribute")?;
        for r in self.rank().worker_ranks() {
            self.ep.send(r, msg)?;
        }
        Ok(())
    }

    /// Receives one `Result` message from every worker, ordered by rank.
    pub fn gather(&mut self) -> Result<Vec<Message>, TransportError> {
        self.require_master("gather")?;
        self.rank()
            .worker_ranks()
            .map(|r| self.ep.recv(r)?.expect(Tag::Result, r))
            .collect()
    }

    /// Global barrier: no rank returns before every rank has entered.
    pub fn barrier(&mut self) -> Result<(), TransportError> {
        self.barrier_with(&[]).map(|_| ())
    }

    /// Barrier in which every worker attaches a report for the master.
    ///
    /// Workers send `Barrier(epoch ++ report)` and wait for the master's
    /// `Barrier(epoch)` reply. The master returns the reports in rank order;
    /// workers get an empty list.
    pub fn barrier_with(&mut self, report: &[u8]) -> Result<Vec<Vec<u8>>, TransportError> {
        let epoch = self.barrier_epoch;
        let rank = self.rank();
        let reports = if rank.is_master() {
            let mut reports = Vec::with_capacity(rank.workers() as usize);
            for r in rank.worker_ranks() {
                let msg = self.ep.recv(r)?.expect(Tag::Barrier, r)?;
                let (e, rest) = split_epoch(&msg.payload)?;
                if e != epoch {
                    return Err(TransportError::Protocol(format!(
                        "rank {r} entered barrier {e} while master is in barrier {epoch}"
                    )));
                }
                reports.push(rest.to_vec());
            }
            let release = Message::new(Tag::Barrier, epoch.to_be_bytes());
            for r in rank.worker_ranks() {
                self.ep.send(r, &release)?;
            }
            reports
        } else {
            let mut payload = epoch.to_be_bytes().to_vec();
            payload.extend_from_slice(report);
            self.ep.send(0, &Message::new(Tag::Barrier, payload))?;
            let msg = self.ep.recv(0)?.expect(Tag::Barrier, 0)?;
            let (e, _) = split_epoch(&msg.payload)?;
            if e != epoch {
                return Err(TransportError::Protocol(format!(
                    "released from barrier {e} while waiting in barrier {epoch}"
                )));
            }
            Vec::new()
        };
        self.barrier_epoch += 1;
        Ok(reports)
    }
}

fn split_epoch(payload: &[u8]) -> Result<(u64, &[u8]), TransportError> {
    if payload.len() < 8 {
        return Err(TransportError::Protocol(
            "barrier message shorter than its epoch counter".into(),
        ));
    }
    let (head, rest) = payload.split_at(8);
    Ok((u64::from_be_bytes(head.try_into().unwrap()), rest))
}
