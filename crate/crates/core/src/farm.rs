//! The bulk-synchronous farm skeleton.
//!
//! A run is initialization on every rank and a barrier, then iterations of
//!
//! 1. distribute: the master builds one job and sends it to every worker,
//! 2. compute: each worker processes its rank-determined slice of the data,
//! 3. gather: workers send partial results, followed by a global barrier,
//! 4. reduce: the master folds the partials and tests the exit condition,
//!
//! and finally `finalize` on the master. The exit test follows `reduce`, so
//! every run performs at least one iteration. The continue/stop decision
//! reaches workers as a one-byte `Control` message (1 = continue, 0 = stop).

use std::net::{SocketAddr, TcpListener};
use std::ops::Range;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{FarmError, Phase, ProblemError};
use crate::transport::{
    Comm, Endpoint, InProcWorld, Message, Tag, TcpEndpoint, TransportError, VirtualCost,
    VirtualNetwork, Work, DEFAULT_TIMEOUT,
};

/// Byte encoding of jobs and partial results.
pub trait Payload: Sized {
    fn to_bytes(&self) -> Vec<u8>;
    fn from_bytes(bytes: &[u8]) -> Result<Self, ProblemError>;
}

impl Payload for Vec<u8> {
    fn to_bytes(&self) -> Vec<u8> {
        self.clone()
    }

    fn from_bytes(bytes: &[u8]) -> Result<Self, ProblemError> {
        Ok(bytes.to_vec())
    }
}

/// Big-endian IEEE-754 bit patterns, so NaN payloads survive unchanged.
impl Payload for Vec<f64> {
    fn to_bytes(&self) -> Vec<u8> {
        self.iter()
            .flat_map(|x| x.to_bits().to_be_bytes())
            .collect()
    }

    fn from_bytes(bytes: &[u8]) -> Result<Self, ProblemError> {
        if !bytes.len().is_multiple_of(8) {
            return Err(ProblemError::new(format!(
                "f64 vector payload of {} bytes is not a multiple of 8",
                bytes.len()
            )));
        }
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_bits(u64::from_be_bytes(c.try_into().unwrap())))
            .collect())
    }
}

impl Payload for () {
    fn to_bytes(&self) -> Vec<u8> {
        Vec::new()
    }

    fn from_bytes(_: &[u8]) -> Result<Self, ProblemError> {
        Ok(())
    }
}

/// Identity of a worker inside a farm of `workers` workers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WorkerId {
    /// `1..=workers`
    pub rank: u16,
    pub workers: u16,
}

impl WorkerId {
    /// Contiguous block of `len` items owned by this worker:
    /// `[⌊(r−1)·len/K⌋, ⌊r·len/K⌋)`.
    pub fn block(&self, len: usize) -> Range<usize> {
        let k = self.workers as usize;
        let r = self.rank as usize;
        (r - 1) * len / k..r * len / k
    }
}

/// A BSF program: the callbacks the skeleton drives.
///
/// `worker_step` must not communicate and may only touch the data slice
/// selected by its [`WorkerId`]. `make_job` does not see `K`: every worker
/// gets the same job.
pub trait FarmProblem: Sync {
    type MasterState;
    type WorkerState;
    type Job: Payload;
    type Partial: Payload;
    type Output;

    fn init_master(&self, workers: u16) -> Result<Self::MasterState, ProblemError>;

    fn init_worker(&self, worker: WorkerId) -> Result<Self::WorkerState, ProblemError>;

    fn make_job(&self, state: &Self::MasterState) -> Result<Self::Job, ProblemError>;

    fn worker_step(
        &self,
        job: &Self::Job,
        worker: WorkerId,
        state: &mut Self::WorkerState,
    ) -> Result<Self::Partial, ProblemError>;

    /// Receives exactly `K` partials, in rank order.
    fn reduce(
        &self,
        state: &mut Self::MasterState,
        partials: Vec<Self::Partial>,
    ) -> Result<(), ProblemError>;

    fn exit_condition(&self, state: &Self::MasterState) -> bool;

    fn finalize(&self, state: Self::MasterState) -> Result<Self::Output, ProblemError>;
}

/// Per-iteration timings on the master's clock.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub iteration: u64,
    pub start: f64,
    pub distribute: f64,
    /// Slowest worker's compute time; the master idles meanwhile.
    pub compute: f64,
    pub gather: f64,
    pub barrier: f64,
    /// Result processing on the master; workers idle meanwhile.
    pub reduce: f64,
    /// Broadcast of the continue/stop flag.
    pub control: f64,
    /// Compute duration of each worker, rank order.
    pub worker_compute: Vec<f64>,
}

impl IterationTrace {
    /// distribute + compute + gather + reduce.
    pub fn model_time(&self) -> f64 {
        self.distribute + self.compute + self.gather + self.reduce
    }

    pub fn total(&self) -> f64 {
        self.model_time() + self.barrier + self.control
    }

    /// Rows of `iteration,phase,rank,duration`. Master phases are reported
    /// on rank 0, compute once per worker rank.
    pub fn csv_rows(&self) -> Vec<(u64, &'static str, u16, f64)> {
        let mut rows = vec![(self.iteration, "distribute", 0, self.distribute)];
        for (i, &c) in self.worker_compute.iter().enumerate() {
            rows.push((self.iteration, "compute", i as u16 + 1, c));
        }
        rows.extend([
            (self.iteration, "gather", 0, self.gather),
            (self.iteration, "barrier", 0, self.barrier),
            (self.iteration, "reduce", 0, self.reduce),
            (self.iteration, "control", 0, self.control),
        ]);
        rows
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FarmOutcome<O> {
    pub output: O,
    pub workers: u16,
    pub iteration_count: u64,
    pub traces: Vec<IterationTrace>,
    /// Master clock from start of initialization to end of finalization.
    pub wall_time: f64,
}

impl<O> FarmOutcome<O> {
    /// Time spent in the iterative process, initialization and termination excluded.
    pub fn iteration_time(&self) -> f64 {
        self.traces.iter().map(IterationTrace::total).sum()
    }

    pub fn mean_iteration_time(&self) -> f64 {
        self.iteration_time() / self.iteration_count.max(1) as f64
    }

    pub fn map<U>(self, f: impl FnOnce(O) -> U) -> FarmOutcome<U> {
        FarmOutcome {
            output: f(self.output),
            workers: self.workers,
            iteration_count: self.iteration_count,
            traces: self.traces,
            wall_time: self.wall_time,
        }
    }

    pub fn write_trace_csv<W: std::io::Write>(&self, out: W) -> Result<(), crate::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iteration", "phase", "rank", "duration"])?;
        for t in &self.traces {
            for (it, phase, rank, d) in t.csv_rows() {
                w.write_record([
                    it.to_string(),
                    phase.to_string(),
                    rank.to_string(),
                    format!("{d:.9e}"),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Backend {
    /// Threads and channels in this process, wall-clock timings.
    InProcess,
    /// Workers run as threads of this process but talk to the master over
    /// TCP connections to `bind` (port 0 picks a free port).
    Tcp(SocketAddr),
    /// In-process threads timed by the virtual cost clock.
    Virtual(VirtualCost),
}

impl Backend {
    pub fn tcp_loopback() -> Self {
        Backend::Tcp(SocketAddr::from(([127, 0, 0, 1], 0)))
    }
}

fn transport(phase: Phase, rank: u16) -> impl FnOnce(TransportError) -> FarmError {
    move |source| FarmError::Transport {
        phase,
        rank,
        source,
    }
}

fn callback(phase: Phase, rank: u16) -> impl FnOnce(ProblemError) -> FarmError {
    move |e| FarmError::Callback {
        phase,
        rank,
        message: e.0,
    }
}

/// Master side of a farm run.
pub fn run_master<P, E>(problem: &P, mut comm: Comm<E>) -> Result<FarmOutcome<P::Output>, FarmError>
where
    P: FarmProblem + ?Sized,
    E: Endpoint,
{
    let rank = comm.rank();
    if !rank.is_master() {
        return Err(FarmError::Config(format!(
            "run_master called on rank {}",
            rank.id()
        )));
    }
    let k = rank.workers();
    let start = comm.now();
    let mut state = problem.init_master(k).map_err(callback(Phase::Init, 0))?;
    comm.barrier().map_err(transport(Phase::Init, 0))?;

    let mut traces = Vec::new();
    loop {
        let it_start = comm.now();
        let job = problem
            .make_job(&state)
            .map_err(callback(Phase::Distribute, 0))?;
        comm.distribute(&Message::job(job.to_bytes()))
            .map_err(transport(Phase::Distribute, 0))?;
        let t_distributed = comm.now();

        let results = comm.gather().map_err(transport(Phase::Gather, 0))?;
        let t_gathered = comm.now();
        let reports = comm
            .barrier_with(&[])
            .map_err(transport(Phase::Barrier, 0))?;
        let t_barrier = comm.now();

        let worker_compute = reports
            .iter()
            .map(|r| decode_duration(r))
            .collect::<Result<Vec<_>, _>>()
            .map_err(transport(Phase::Barrier, 0))?;
        let slowest = worker_compute.iter().copied().fold(0.0, f64::max);
        comm.charge(Work::AwaitWorkers(slowest), 0.0);
        let barrier = t_barrier - t_gathered;
        let waited = (comm.now() - t_distributed - barrier).max(0.0);
        let compute = slowest.min(waited);
        let gather = waited - compute;

        let r0 = comm.now();
        let wall = Instant::now();
        let partials = results
            .iter()
            .map(|m| P::Partial::from_bytes(&m.payload))
            .collect::<Result<Vec<_>, _>>()
            .map_err(callback(Phase::Reduce, 0))?;
        problem
            .reduce(&mut state, partials)
            .map_err(callback(Phase::Reduce, 0))?;
        comm.charge(Work::Reduce, wall.elapsed().as_secs_f64());
        let reduce = comm.now() - r0;

        let stop = problem.exit_condition(&state);
        let c0 = comm.now();
        comm.distribute(&Message::control([u8::from(!stop)]))
            .map_err(transport(Phase::Control, 0))?;
        let control = comm.now() - c0;

        traces.push(IterationTrace {
            iteration: traces.len() as u64,
            start: it_start - start,
            distribute: t_distributed - it_start,
            compute,
            gather,
            barrier,
            reduce,
            control,
            worker_compute,
        });
        if stop {
            break;
        }
    }

    let output = problem
        .finalize(state)
        .map_err(callback(Phase::Finalize, 0))?;
    Ok(FarmOutcome {
        output,
        workers: k,
        iteration_count: traces.len() as u64,
        traces,
        wall_time: comm.now() - start,
    })
}

/// Worker side of a farm run. Returns when the master signals stop.
pub fn run_worker<P, E>(problem: &P, mut comm: Comm<E>) -> Result<(), FarmError>
where
    P: FarmProblem + ?Sized,
    E: Endpoint,
{
    let rank = comm.rank();
    let id = rank.id();
    if rank.is_master() {
        return Err(FarmError::Config("run_worker called on the master".into()));
    }
    let me = WorkerId {
        rank: id,
        workers: rank.workers(),
    };
    let mut state = problem.init_worker(me).map_err(callback(Phase::Init, id))?;
    comm.barrier().map_err(transport(Phase::Init, id))?;

    loop {
        let msg = comm
            .recv(0)
            .and_then(|m| m.expect(Tag::Job, 0))
            .map_err(transport(Phase::Distribute, id))?;
        let job = P::Job::from_bytes(&msg.payload).map_err(callback(Phase::Compute, id))?;
        let wall = Instant::now();
        let partial = problem
            .worker_step(&job, me, &mut state)
            .map_err(callback(Phase::Compute, id))?;
        let charged = comm.charge(Work::Compute, wall.elapsed().as_secs_f64());

        comm.send(0, &Message::result(partial.to_bytes()))
            .map_err(transport(Phase::Gather, id))?;
        comm.barrier_with(&charged.to_be_bytes())
            .map_err(transport(Phase::Barrier, id))?;

        let ctl = comm
            .recv(0)
            .and_then(|m| m.expect(Tag::Control, 0))
            .map_err(transport(Phase::Control, id))?;
        match ctl.payload.as_slice() {
            [1] => continue,
            [0] => return Ok(()),
            other => {
                return Err(FarmError::Transport {
                    phase: Phase::Control,
                    rank: id,
                    source: TransportError::Protocol(format!("bad continue flag {other:?}")),
                })
            }
        }
    }
}

fn decode_duration(report: &[u8]) -> Result<f64, TransportError> {
    let bytes: [u8; 8] = report.try_into().map_err(|_| {
        TransportError::Protocol(format!("compute report of {} bytes", report.len()))
    })?;
    Ok(f64::from_be_bytes(bytes))
}

/// Picks the most specific failure: a worker's own callback error or panic
/// explains the transport error the master saw when that worker vanished.
fn settle<O>(
    master: Result<FarmOutcome<O>, FarmError>,
    workers: Vec<Result<(), FarmError>>,
) -> Result<FarmOutcome<O>, FarmError> {
    let mut worker_errors = workers
        .into_iter()
        .filter_map(Result::err)
        .collect::<Vec<_>>();
    match master {
        Ok(out) if worker_errors.is_empty() => Ok(out),
        Ok(_) => Err(worker_errors.remove(0)),
        Err(e) => {
            let specific = worker_errors
                .into_iter()
                .find(|w| matches!(w, FarmError::Callback { .. } | FarmError::Panicked { .. }));
            Err(specific.unwrap_or(e))
        }
    }
}

fn run_threads<P, E>(problem: &P, comms: Vec<Comm<E>>) -> Result<FarmOutcome<P::Output>, FarmError>
where
    P: FarmProblem,
    E: Endpoint,
{
    let mut comms = comms.into_iter();
    let master = comms.next().expect("world has a master");
    thread::scope(|s| {
        let handles: Vec<_> = comms
            .map(|c| {
                let rank = c.rank().id();
                (rank, s.spawn(move || run_worker(problem, c)))
            })
            .collect();
        let outcome = run_master(problem, master);
        let workers = handles
            .into_iter()
            .map(|(rank, h)| h.join().unwrap_or(Err(FarmError::Panicked { rank })))
            .collect();
        settle(outcome, workers)
    })
}

/// Runs `problem` on a master and `workers` workers over `backend`.
pub fn run_farm<P: FarmProblem>(
    problem: &P,
    backend: &Backend,
    workers: u16,
) -> Result<FarmOutcome<P::Output>, FarmError> {
    if workers < 1 || workers == u16::MAX {
        return Err(FarmError::Config(format!(
            "worker count must be in 1..65535, got {workers}"
        )));
    }
    let world = workers + 1;
    match backend {
        Backend::InProcess => run_threads(problem, InProcWorld::new(world).into_comms()),
        Backend::Virtual(cost) => {
            run_threads(problem, VirtualNetwork::new(*cost, world).into_comms())
        }
        Backend::Tcp(bind) => run_tcp(problem, *bind, workers, Some(DEFAULT_TIMEOUT)),
    }
}

fn run_tcp<P: FarmProblem>(
    problem: &P,
    bind: SocketAddr,
    workers: u16,
    timeout: Option<Duration>,
) -> Result<FarmOutcome<P::Output>, FarmError> {
    let listener = TcpListener::bind(bind).map_err(|e| transport(Phase::Init, 0)(e.into()))?;
    let addr = listener
        .local_addr()
        .map_err(|e| transport(Phase::Init, 0)(e.into()))?;
    thread::scope(|s| {
        let handles: Vec<_> = (1..=workers)
            .map(|id| {
                let h = s.spawn(move || {
                    let ep = TcpEndpoint::connect(addr, id, workers + 1, timeout)
                        .map_err(transport(Phase::Init, id))?;
                    run_worker(problem, Comm::new(ep))
                });
                (id, h)
            })
            .collect();
        let outcome = TcpEndpoint::accept(&listener, workers, timeout)
            .map_err(transport(Phase::Init, 0))
            .and_then(|ep| run_master(problem, Comm::new(ep)));
        drop(listener);
        let results = handles
            .into_iter()
            .map(|(rank, h)| h.join().unwrap_or(Err(FarmError::Panicked { rank })))
            .collect();
        settle(outcome, results)
    })
}

/// The one-worker baseline used for speedup: [`run_farm`] with `K = 1` in process.
pub fn run_single<P: FarmProblem>(problem: &P) -> Result<FarmOutcome<P::Output>, FarmError> {
    run_farm(problem, &Backend::InProcess, 1)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedupSample {
    pub workers: u16,
    /// Iterative-process time of the run.
    pub time: f64,
    pub speedup: f64,
    pub efficiency: f64,
}

/// Measures speedup `time(K=1)/time(K)` for every `K` in `ks`.
///
/// The baseline is a `K = 1` run on the same backend; on
/// [`Backend::InProcess`] that is exactly [`run_single`]. Times are those of
/// the iterative process, excluding initialization and termination.
pub fn measure_speedup<P: FarmProblem>(
    problem: &P,
    backend: &Backend,
    ks: &[u16],
) -> Result<Vec<SpeedupSample>, FarmError> {
    if ks.is_empty() {
        return Err(FarmError::Config("empty worker-count list".into()));
    }
    let base = run_farm(problem, backend, 1)?.iteration_time();
    ks.iter()
        .map(|&k| {
            let time = if k == 1 {
                base
            } else {
                run_farm(problem, backend, k)?.iteration_time()
            };
            let speedup = base / time;
            Ok(SpeedupSample {
                workers: k,
                time,
                speedup,
                efficiency: speedup / k as f64,
            })
        })
        .collect()
}
