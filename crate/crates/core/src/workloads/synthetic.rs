//! Parameter-controlled synthetic farm: workers busy-spin for `t_w/K` and
//! return a fixed share of the result payload.

use std::hint::black_box;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::calibrate::{estimate_params, CalibrationReport};
use crate::cost_model::CostParams;
use crate::error::{invalid, Error, FarmError, ProblemError, Result};
use crate::farm::{run_farm, Backend, FarmProblem, WorkerId};
use crate::simulator::{adequacy_report, AdequacyReport};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    /// Target compute per iteration on one worker, in seconds.
    pub work: f64,
    pub job_bytes: usize,
    /// Total result payload, split across workers by rank block.
    pub result_bytes: usize,
    pub iterations: u64,
}

impl SyntheticSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: SyntheticSpec = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.work.is_finite() && self.work >= 0.0) {
            return Err(invalid(format!(
                "synthetic work must be >= 0, got {}",
                self.work
            )));
        }
        if self.iterations < 1 {
            return Err(invalid("synthetic run needs at least one iteration"));
        }
        Ok(())
    }
}

const CHUNK: u64 = 4096;

#[inline(never)]
fn spin_kernel(rounds: u64, seed: u64) -> u64 {
    let mut x = seed | 1;
    for i in 0..rounds {
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        x = x.wrapping_add(i);
    }
    x
}

/// Throughput of the spin kernel on this host.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpinCalibration {
    pub rounds_per_second: f64,
}

impl SpinCalibration {
    /// Times the kernel over five ~60 ms windows and keeps the median rate.
    pub fn measure() -> Self {
        spin_kernel(CHUNK * 64, 3);
        let mut rates: Vec<f64> = (0..5)
            .map(|_| {
                let start = Instant::now();
                let mut rounds = 0u64;
                while start.elapsed().as_secs_f64() < 0.06 {
                    black_box(spin_kernel(CHUNK, rounds));
                    rounds += CHUNK;
                }
                rounds as f64 / start.elapsed().as_secs_f64()
            })
            .collect();
        rates.sort_by(f64::total_cmp);
        SpinCalibration {
            rounds_per_second: rates[2],
        }
    }

    /// Busy-works for about `seconds` of CPU time.
    pub fn spin(&self, seconds: f64) -> u64 {
        let rounds = (self.rounds_per_second * seconds).round() as u64;
        black_box(spin_kernel(black_box(rounds), 7))
    }
}

pub struct SyntheticProblem {
    spec: SyntheticSpec,
    spin: SpinCalibration,
}

/// Builds the synthetic farm. Spin-work has to be calibrated first.
pub fn make_synthetic(
    spec: SyntheticSpec,
    spin: Option<SpinCalibration>,
) -> Result<SyntheticProblem> {
    spec.validate()?;
    let spin = spin.ok_or(Error::NotCalibrated)?;
    if !(spin.rounds_per_second.is_finite() && spin.rounds_per_second > 0.0) {
        return Err(Error::NotCalibrated);
    }
    Ok(SyntheticProblem { spec, spin })
}

impl SyntheticProblem {
    pub fn spec(&self) -> &SyntheticSpec {
        &self.spec
    }
}

impl FarmProblem for SyntheticProblem {
    type MasterState = u64;
    type WorkerState = ();
    type Job = Vec<u8>;
    type Partial = Vec<u8>;
    type Output = u64;

    fn init_master(&self, _: u16) -> Result<u64, ProblemError> {
        Ok(0)
    }

    fn init_worker(&self, _: WorkerId) -> Result<(), ProblemError> {
        Ok(())
    }

    fn make_job(&self, iteration: &u64) -> Result<Vec<u8>, ProblemError> {
        Ok(vec![*iteration as u8; self.spec.job_bytes])
    }

    fn worker_step(
        &self,
        job: &Vec<u8>,
        worker: WorkerId,
        _: &mut (),
    ) -> Result<Vec<u8>, ProblemError> {
        if job.len() != self.spec.job_bytes {
            return Err(ProblemError::new("job payload has the wrong size"));
        }
        self.spin.spin(self.spec.work / worker.workers as f64);
        Ok(vec![
            worker.rank as u8;
            worker.block(self.spec.result_bytes).len()
        ])
    }

    fn reduce(&self, iteration: &mut u64, partials: Vec<Vec<u8>>) -> Result<(), ProblemError> {
        let total: usize = partials.iter().map(Vec::len).sum();
        if total != self.spec.result_bytes {
            return Err(ProblemError::new(format!(
                "gathered {total} result bytes, expected {}",
                self.spec.result_bytes
            )));
        }
        *iteration += 1;
        Ok(())
    }

    fn exit_condition(&self, iteration: &u64) -> bool {
        *iteration >= self.spec.iterations
    }

    fn finalize(&self, iteration: u64) -> Result<u64, ProblemError> {
        Ok(iteration)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedupCheck {
    pub workers: u16,
    pub measured_time: f64,
    pub measured_speedup: f64,
    pub measured_efficiency: f64,
    pub predicted_speedup: f64,
    pub relative_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticAdequacy {
    /// Model parameters estimated from calibration and the one-worker run.
    pub params: CostParams,
    pub baseline_time: f64,
    pub checks: Vec<SpeedupCheck>,
    /// Observed mean iteration times against the model's `T_K`.
    pub times: AdequacyReport,
    pub max_speedup_error: f64,
    pub threshold: f64,
    pub adequate: bool,
    pub available_parallelism: usize,
}

/// Runs the synthetic farm for `K = 1` and every `K` in `ks`, estimates the
/// model parameters from `calibration` and the `K = 1` traces, and compares
/// measured with predicted speedup.
pub fn synthetic_adequacy(
    problem: &SyntheticProblem,
    backend: &Backend,
    ks: &[u16],
    calibration: &CalibrationReport,
    threshold: f64,
) -> Result<SyntheticAdequacy> {
    if ks.is_empty() {
        return Err(FarmError::Config("empty worker-count list".into()).into());
    }
    let spec = problem.spec();
    let base = run_farm(problem, backend, 1)?;
    let params = estimate_params(calibration, &base, spec.job_bytes, spec.result_bytes)?;
    let baseline_time = base.mean_iteration_time();

    let mut checks = Vec::with_capacity(ks.len());
    let mut observed = vec![(1u64, baseline_time)];
    for &k in ks {
        let time = if k == 1 {
            baseline_time
        } else {
            run_farm(problem, backend, k)?.mean_iteration_time()
        };
        if k != 1 {
            observed.push((k as u64, time));
        }
        let measured = baseline_time / time;
        let predicted = params.speedup(k as u64)?;
        checks.push(SpeedupCheck {
            workers: k,
            measured_time: time,
            measured_speedup: measured,
            measured_efficiency: measured / k as f64,
            predicted_speedup: predicted,
            relative_error: ((measured - predicted) / predicted).abs(),
        });
    }
    let times = adequacy_report(&params, &observed, threshold)?;
    let max_speedup_error = checks.iter().map(|c| c.relative_error).fold(0.0, f64::max);
    Ok(SyntheticAdequacy {
        params,
        baseline_time,
        checks,
        times,
        max_speedup_error,
        threshold,
        adequate: max_speedup_error <= threshold,
        available_parallelism: std::thread::available_parallelism().map_or(1, |n| n.get()),
    })
}
