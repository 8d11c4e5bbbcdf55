//! Virtual-clock network: in-process channels whose clocks are driven by the
//! farm cost model instead of wall time.
//!
//! The master is the serialization point of the star, so it pays for every
//! `Job` and `Result` message it sends or receives: `L + bytes · per_byte`.
//! Barriers are free and `Control` messages are free unless
//! [`VirtualCost::charge_control`] is set. Worker compute is charged `t_w/K`
//! and master result processing `t_p`, regardless of how long the callbacks
//! really ran.
//!
//! With `per_byte · job_bytes = t_s` and `per_byte · total_result_bytes = t_r`
//! one farm iteration advances the master clock by exactly
//! `K(L + t_s) + t_w/K + K·L + t_r + t_p`.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::inproc::{InProcEndpoint, InProcWorld};
use super::{Comm, Endpoint, Message, Rank, Tag, TransportError, Work};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VirtualCost {
    pub latency: f64,
    pub per_byte: f64,
    /// Total compute per iteration on one worker; each of `K` workers is charged `work / K`.
    pub work: f64,
    pub processing: f64,
    pub charge_control: bool,
}

impl VirtualCost {
    pub fn message_cost(&self, msg: &Message) -> f64 {
        match msg.tag {
            Tag::Job | Tag::Result => self.latency + msg.payload.len() as f64 * self.per_byte,
            Tag::Control if self.charge_control => {
                self.latency + msg.payload.len() as f64 * self.per_byte
            }
            Tag::Control | Tag::Barrier => 0.0,
        }
    }
}

pub struct VirtualNetwork {
    cost: VirtualCost,
    world_size: u16,
    timeout: Option<Duration>,
}

impl VirtualNetwork {
    pub fn new(cost: VirtualCost, world_size: u16) -> Self {
        VirtualNetwork {
            cost,
            world_size,
            timeout: None,
        }
    }

    /// Wall-clock timeout for the underlying channels; infinite by default.
    pub fn timeout(mut self, timeout: Option<Duration>) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn build(self) -> Vec<VirtualEndpoint> {
        let cost = self.cost;
        InProcWorld::new(self.world_size)
            .timeout(self.timeout)
            .build()
            .into_iter()
            .map(|inner| VirtualEndpoint {
                inner,
                clock: 0.0,
                cost,
            })
            .collect()
    }

    pub fn into_comms(self) -> Vec<Comm<VirtualEndpoint>> {
        self.build().into_iter().map(Comm::new).collect()
    }
}

pub struct VirtualEndpoint {
    inner: InProcEndpoint,
    clock: f64,
    cost: VirtualCost,
}

impl VirtualEndpoint {
    pub fn cost(&self) -> &VirtualCost {
        &self.cost
    }
}

impl Endpoint for VirtualEndpoint {
    fn rank(&self) -> Rank {
        self.inner.rank()
    }

    fn send(&mut self, to: u16, msg: &Message) -> Result<(), TransportError> {
        self.inner.send(to, msg)?;
        if self.rank().is_master() {
            self.clock += self.cost.message_cost(msg);
        }
        Ok(())
    }

    fn recv(&mut self, from: u16) -> Result<Message, TransportError> {
        let msg = self.inner.recv(from)?;
        if self.rank().is_master() {
            self.clock += self.cost.message_cost(&msg);
        }
        Ok(msg)
    }

    fn now(&self) -> f64 {
        self.clock
    }

    fn charge(&mut self, work: Work, _measured: f64) -> f64 {
        let dt = match work {
            Work::Compute => self.cost.work / self.rank().workers() as f64,
            Work::Reduce => self.cost.processing,
            Work::AwaitWorkers(d) => d,
        };
        self.clock += dt;
        dt
    }
}
