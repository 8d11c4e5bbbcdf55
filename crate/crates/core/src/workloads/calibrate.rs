//! Ping-pong calibration of message latency and per-byte transfer cost.
//!
//! The master sends a `Job` of `s` bytes to a single worker, which echoes it
//! back as a `Result`. The median round trip per size is fitted as
//! `rtt(s) = c + m·s`; one message costs half of that, so `L = c/2` and the
//! per-byte rate is `m/2`.

use std::net::TcpListener;
use std::thread;

use serde::{Deserialize, Serialize};

use crate::cost_model::CostParams;
use crate::error::{invalid, Result};
use crate::farm::{Backend, FarmOutcome};
use crate::transport::{
    Comm, Endpoint, InProcWorld, Message, Tag, TcpEndpoint, TransportError, VirtualNetwork,
    DEFAULT_TIMEOUT,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSample {
    pub bytes: usize,
    pub median_round_trip: f64,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    /// Estimated message initiation latency `L` (clamped at 0).
    pub latency: f64,
    /// Estimated transfer time per payload byte.
    pub per_byte: f64,
    /// Raw fit: round trip at zero bytes and slope per byte.
    pub intercept: f64,
    pub slope: f64,
    pub r_squared: f64,
    pub samples: Vec<CalibrationSample>,
    pub repetitions: usize,
}

impl CalibrationReport {
    /// Send time of a `bytes`-byte job, latency excluded (`t_s`).
    pub fn job_send(&self, bytes: usize) -> f64 {
        self.per_byte * bytes as f64
    }

    pub fn max_abs_residual(&self) -> f64 {
        self.samples
            .iter()
            .map(|s| s.residual.abs())
            .fold(0.0, f64::max)
    }
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Ordinary least squares `y = c + m·x`. Returns `(c, m, r²)`.
pub fn linear_fit(points: &[(f64, f64)]) -> Result<(f64, f64, f64)> {
    let n = points.len() as f64;
    if points.len() < 2 {
        return Err(invalid("a linear fit needs at least two points"));
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(invalid("degenerate fit: all payload sizes are equal"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 {
        1.0
    } else {
        sxy * sxy / (sxx * syy)
    };
    Ok((intercept, slope, r_squared))
}

fn echo<E: Endpoint>(mut worker: Comm<E>) -> Result<(), TransportError> {
    loop {
        let msg = worker.recv(0)?;
        match msg.tag {
            Tag::Job => worker.send(0, &Message::result(msg.payload))?,
            Tag::Control => return Ok(()),
            other => {
                return Err(TransportError::Protocol(format!(
                    "unexpected {other:?} during calibration"
                )))
            }
        }
    }
}

fn ping_pong<E: Endpoint>(
    master: &mut Comm<E>,
    sizes: &[usize],
    repetitions: usize,
) -> Result<Vec<(usize, f64)>, TransportError> {
    let mut out = Vec::with_capacity(sizes.len());
    for &size in sizes {
        let ping = Message::job(vec![0xA5; size]);
        let mut rtts = Vec::with_capacity(repetitions);
        // one unrecorded warm-up exchange per size
        for rep in 0..=repetitions {
            let t0 = master.now();
            master.send(1, &ping)?;
            let pong = master.recv(1)?.expect(Tag::Result, 1)?;
            let rtt = master.now() - t0;
            if pong.payload.len() != size {
                return Err(TransportError::Protocol(
                    "echo changed the payload size".into(),
                ));
            }
            if rep > 0 {
                rtts.push(rtt);
            }
        }
        out.push((size, median(&mut rtts)));
    }
    master.send(1, &Message::control([0]))?;
    Ok(out)
}

fn measure_pair<E: Endpoint>(
    mut comms: Vec<Comm<E>>,
    sizes: &[usize],
    repetitions: usize,
) -> Result<Vec<(usize, f64)>, TransportError> {
    let worker = comms.pop().expect("two ranks");
    let mut master = comms.pop().expect("two ranks");
    thread::scope(|s| {
        let h = s.spawn(move || echo(worker));
        let res = ping_pong(&mut master, sizes, repetitions);
        drop(master);
        let echoed = h
            .join()
            .unwrap_or_else(|_| Err(TransportError::Protocol("echo worker panicked".into())));
        let samples = res?;
        echoed?;
        Ok(samples)
    })
}

/// Measures round trips over `backend` for each payload size.
pub fn calibrate(
    backend: &Backend,
    sizes: &[usize],
    repetitions: usize,
) -> Result<CalibrationReport> {
    let mut distinct = sizes.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(invalid(format!(
            "calibration needs at least 3 distinct payload sizes, got {}",
            distinct.len()
        )));
    }
    if repetitions < 5 {
        return Err(invalid(format!(
            "calibration needs at least 5 repetitions per size, got {repetitions}"
        )));
    }
    let raw = match backend {
        Backend::InProcess => measure_pair(InProcWorld::new(2).into_comms(), sizes, repetitions)?,
        Backend::Virtual(cost) => measure_pair(
            VirtualNetwork::new(*cost, 2).into_comms(),
            sizes,
            repetitions,
        )?,
        Backend::Tcp(bind) => {
            let listener = TcpListener::bind(bind)?;
            let addr = listener.local_addr()?;
            thread::scope(|s| -> Result<Vec<(usize, f64)>> {
                let h = s.spawn(move || {
                    TcpEndpoint::connect(addr, 1, 2, Some(DEFAULT_TIMEOUT))
                        .and_then(|ep| echo(Comm::new(ep)))
                });
                let master = TcpEndpoint::accept(&listener, 1, Some(DEFAULT_TIMEOUT))?;
                let mut master = Comm::new(master);
                let res = ping_pong(&mut master, sizes, repetitions);
                drop(master);
                let echoed = h.join().unwrap_or_else(|_| {
                    Err(TransportError::Protocol("echo worker panicked".into()))
                });
                let samples = res?;
                echoed?;
                Ok(samples)
            })?
        }
    };
    fit_report(&raw, repetitions)
}

/// Fits `(bytes, median round trip)` samples.
pub fn fit_report(samples: &[(usize, f64)], repetitions: usize) -> Result<CalibrationReport> {
    let points: Vec<(f64, f64)> = samples.iter().map(|&(s, t)| (s as f64, t)).collect();
    let (intercept, slope, r_squared) = linear_fit(&points)?;
    let samples = samples
        .iter()
        .map(|&(bytes, rtt)| CalibrationSample {
            bytes,
            median_round_trip: rtt,
            residual: rtt - (intercept + slope * bytes as f64),
        })
        .collect();
    Ok(CalibrationReport {
        latency: (intercept / 2.0).max(0.0),
        per_byte: (slope / 2.0).max(0.0),
        intercept,
        slope,
        r_squared,
        samples,
        repetitions,
    })
}

/// Model parameters for a farm measured with one worker: `L` and the byte
/// rate from calibration, `t_w` and `t_p` from the mean compute and reduce
/// times in the traces.
pub fn estimate_params<O>(
    calibration: &CalibrationReport,
    single: &FarmOutcome<O>,
    job_bytes: usize,
    result_bytes: usize,
) -> Result<CostParams> {
    if single.traces.is_empty() {
        return Err(invalid("no iterations to estimate from"));
    }
    let n = single.traces.len() as f64;
    let work = single
        .traces
        .iter()
        .map(|t| t.worker_compute.iter().sum::<f64>())
        .sum::<f64>()
        / n;
    let processing = single.traces.iter().map(|t| t.reduce).sum::<f64>() / n;
    CostParams::new(
        calibration.latency,
        calibration.job_send(job_bytes),
        calibration.per_byte * result_bytes as f64,
        processing,
        work,
    )
}
