//! Virtual-clock replay of the farm iteration timeline.
//!
//! `PhaseSequential` follows the cost model's accounting: the master sends
//! `K` jobs one after another, all workers compute `t_w/K` after the last send,
//! results arrive one after another (`L + t_r/K` each), then the master
//! processes for `t_p`. `Overlapped` lets worker `i` start computing as soon
//! as its own job arrives, which shows how conservative the sequential
//! accounting is.
//!
//! Noise is a multiplicative factor uniform on `[1 − ρ, 1 + ρ]` applied to
//! every phase event: each send, each result transfer, the compute superstep
//! and the reduction. Workers are homogeneous, so the compute superstep draws
//! a single factor. Draws come from a ChaCha stream keyed by `(seed,
//! iteration)` in a fixed order (compute, reduce, then send/gather per worker
//! rank), so runs with different `K` share their common random numbers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cost_model::{CostParams, CurveSeries, KRange, Metric};
use crate::error::{invalid, Result};

/// Default maximum relative error for an "adequate" verdict.
pub const DEFAULT_ADEQUACY_THRESHOLD: f64 = 0.3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimMode {
    PhaseSequential,
    Overlapped,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub params: CostParams,
    pub workers: u64,
    pub iterations: u64,
    pub mode: SimMode,
    /// Relative noise amplitude ρ in `[0, 1)`.
    pub noise: f64,
    pub seed: u64,
}

impl SimConfig {
    pub fn new(params: CostParams, workers: u64) -> Self {
        SimConfig {
            params,
            workers,
            iterations: 1,
            mode: SimMode::PhaseSequential,
            noise: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers < 1 {
            return Err(invalid("simulated worker count must be >= 1"));
        }
        if self.iterations < 1 {
            return Err(invalid("simulation needs at least one iteration"));
        }
        if !(0.0..1.0).contains(&self.noise) {
            return Err(invalid(format!(
                "noise must be in [0, 1), got {}",
                self.noise
            )));
        }
        Ok(())
    }
}

/// Where the time of an iteration went, from the master's point of view.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseBreakdown {
    pub distribute: f64,
    pub compute: f64,
    pub gather: f64,
    pub reduce: f64,
}

impl PhaseBreakdown {
    pub fn total(&self) -> f64 {
        self.distribute + self.compute + self.gather + self.reduce
    }

    fn add(&mut self, other: &PhaseBreakdown) {
        self.distribute += other.distribute;
        self.compute += other.compute;
        self.gather += other.gather;
        self.reduce += other.reduce;
    }

    fn scale(&mut self, s: f64) {
        self.distribute *= s;
        self.compute *= s;
        self.gather *= s;
        self.reduce *= s;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub config: SimConfig,
    /// Simulated `T_K` of every iteration.
    pub iteration_times: Vec<f64>,
    pub per_iteration: Vec<PhaseBreakdown>,
    pub mean_time: f64,
    /// Mean phase durations over all iterations.
    pub breakdown: PhaseBreakdown,
    /// Mean iteration time of the same simulation with one worker.
    pub baseline_time: f64,
    pub speedup: f64,
    pub efficiency: f64,
    /// `T_K` predicted by the cost model.
    pub model_time: f64,
    /// `|mean_time − model_time| / model_time`.
    pub relative_error: f64,
}

struct Draws {
    rng: ChaCha8Rng,
    noise: f64,
}

impl Draws {
    fn new(seed: u64, iteration: u64, noise: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(iteration);
        Draws { rng, noise }
    }

    fn factor(&mut self) -> f64 {
        let u: f64 = self.rng.gen_range(-1.0..=1.0);
        1.0 + self.noise * u
    }
}

fn simulate_iteration(cfg: &SimConfig, workers: u64, iteration: u64) -> PhaseBreakdown {
    let p = &cfg.params;
    let k = workers as f64;
    let mut draws = Draws::new(cfg.seed, iteration, cfg.noise);

    let compute = p.work / k * draws.factor();
    let reduce = p.result_processing * draws.factor();
    let mut sends = Vec::with_capacity(workers as usize);
    let mut transfers = Vec::with_capacity(workers as usize);
    for _ in 0..workers {
        sends.push((p.latency + p.job_send) * draws.factor());
        transfers.push((p.latency + p.result_transfer / k) * draws.factor());
    }

    match cfg.mode {
        SimMode::PhaseSequential => PhaseBreakdown {
            distribute: sends.iter().sum(),
            compute,
            gather: transfers.iter().sum(),
            reduce,
        },
        SimMode::Overlapped => {
            // worker i holds its job once the first i sends are done
            let mut arrival = 0.0;
            let mut master = 0.0;
            let mut first_ready = f64::INFINITY;
            let mut ready = Vec::with_capacity(sends.len());
            for s in &sends {
                arrival += s;
                ready.push(arrival + compute);
            }
            let distribute = arrival;
            master += distribute;
            for (r, t) in ready.iter().zip(&transfers) {
                first_ready = first_ready.min(*r);
                master = master.max(*r) + t;
            }
            let idle = (first_ready - distribute).max(0.0);
            PhaseBreakdown {
                distribute,
                compute: idle,
                gather: master - distribute - idle,
                reduce,
            }
        }
    }
}

fn mean_run(cfg: &SimConfig, workers: u64) -> (Vec<f64>, Vec<PhaseBreakdown>) {
    let phases: Vec<PhaseBreakdown> = (0..cfg.iterations)
        .map(|i| simulate_iteration(cfg, workers, i))
        .collect();
    (phases.iter().map(PhaseBreakdown::total).collect(), phases)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn simulate(cfg: &SimConfig) -> Result<SimReport> {
    cfg.validate()?;
    let (iteration_times, per_iteration) = mean_run(cfg, cfg.workers);
    let (baseline, _) = mean_run(cfg, 1);

    let mean_time = mean(&iteration_times);
    let baseline_time = mean(&baseline);
    let mut breakdown = PhaseBreakdown::default();
    for b in &per_iteration {
        breakdown.add(b);
    }
    breakdown.scale(1.0 / per_iteration.len() as f64);

    let model_time = cfg.params.iteration_time_k(cfg.workers)?;
    let speedup = baseline_time / mean_time;
    Ok(SimReport {
        config: *cfg,
        iteration_times,
        per_iteration,
        mean_time,
        breakdown,
        baseline_time,
        speedup,
        efficiency: speedup / cfg.workers as f64,
        model_time,
        relative_error: ((mean_time - model_time) / model_time).abs(),
    })
}

/// Simulated speedup `mean T_1 / mean T_K` over `range`, each point averaged
/// over `iterations` iterations.
pub fn simulated_speedup_sweep(
    params: &CostParams,
    range: KRange,
    mode: SimMode,
    noise: f64,
    seed: u64,
    iterations: u64,
) -> Result<CurveSeries> {
    let range = KRange::new(range.lo, range.hi, range.step)?;
    let base_cfg = SimConfig {
        params: *params,
        workers: 1,
        iterations,
        mode,
        noise,
        seed,
    };
    base_cfg.validate()?;
    let baseline = mean(&mean_run(&base_cfg, 1).0);
    let points = range
        .iter()
        .map(|k| (k, baseline / mean(&mean_run(&base_cfg, k).0)))
        .collect();
    Ok(CurveSeries {
        metric: Metric::Speedup,
        params: *params,
        points,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdequacyRow {
    pub workers: u64,
    pub observed: f64,
    pub predicted: f64,
    pub relative_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdequacyReport {
    pub rows: Vec<AdequacyRow>,
    pub max_error: f64,
    pub threshold: f64,
    pub adequate: bool,
}

/// Compares observed iteration times with the model's `T_K`.
pub fn adequacy_report(
    model: &CostParams,
    observed: &[(u64, f64)],
    threshold: f64,
) -> Result<AdequacyReport> {
    if observed.is_empty() {
        return Err(invalid("no observations to compare"));
    }
    if !(threshold.is_finite() && threshold >= 0.0) {
        return Err(invalid(format!("bad adequacy threshold {threshold}")));
    }
    let rows = observed
        .iter()
        .map(|&(k, obs)| {
            if !(obs.is_finite() && obs > 0.0) {
                return Err(invalid(format!(
                    "observed time at K={k} must be > 0, got {obs}"
                )));
            }
            let predicted = model.iteration_time_k(k)?;
            Ok(AdequacyRow {
                workers: k,
                observed: obs,
                predicted,
                relative_error: ((obs - predicted) / predicted).abs(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let max_error = rows.iter().map(|r| r.relative_error).fold(0.0, f64::max);
    Ok(AdequacyReport {
        rows,
        max_error,
        threshold,
        adequate: max_error <= threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost_model::{emit_curve, VRatio};

    fn eq11(v: f64) -> CostParams {
        CostParams::with_v(0.5, VRatio(v), 1e4, 1e4, 1e12).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn noiseless_matches_model() {
        let p = eq11(5.0);
        let r = simulate(&SimConfig::new(p, 100)).unwrap();
        assert!(rel(r.iteration_times[0], p.iteration_time_k(100).unwrap()) < 1e-9);
        assert!(r.relative_error < 1e-9);
        let r = simulate(&SimConfig::new(p, 1)).unwrap();
        assert!(rel(r.mean_time, p.iteration_time_single()) < 1e-12);
        assert_eq!(r.speedup, 1.0);
    }

    #[test]
    fn breakdown_sums_to_total() {
        let cfg = SimConfig {
            iterations: 10,
            noise: 0.3,
            seed: 11,
            ..SimConfig::new(eq11(4.0), 37)
        };
        for mode in [SimMode::PhaseSequential, SimMode::Overlapped] {
            let r = simulate(&SimConfig { mode, ..cfg }).unwrap();
            for (b, t) in r.per_iteration.iter().zip(&r.iteration_times) {
                assert_eq!(b.total(), *t);
                assert!(b.distribute >= 0.0 && b.compute >= 0.0 && b.gather >= 0.0);
            }
        }
    }

    #[test]
    fn seeded_runs_are_identical() {
        let cfg = SimConfig {
            iterations: 20,
            noise: 0.2,
            seed: 99,
            ..SimConfig::new(eq11(5.0), 64)
        };
        assert_eq!(simulate(&cfg).unwrap(), simulate(&cfg).unwrap());
        let other = simulate(&SimConfig { seed: 100, ..cfg }).unwrap();
        assert_ne!(
            other.iteration_times,
            simulate(&cfg).unwrap().iteration_times
        );
    }

    #[test]
    fn overlapped_is_never_slower() {
        let p = CostParams::new(0.5, 3.0, 2.0, 1.0, 400.0).unwrap();
        let seq = simulate(&SimConfig::new(p, 8)).unwrap();
        let ovl = simulate(&SimConfig {
            mode: SimMode::Overlapped,
            ..SimConfig::new(p, 8)
        })
        .unwrap();
        assert!(ovl.mean_time < seq.mean_time);
    }

    #[test]
    fn config_validation() {
        let p = eq11(5.0);
        assert!(simulate(&SimConfig {
            noise: 1.0,
            ..SimConfig::new(p, 2)
        })
        .is_err());
        assert!(simulate(&SimConfig {
            iterations: 0,
            ..SimConfig::new(p, 2)
        })
        .is_err());
        assert!(simulate(&SimConfig::new(p, 0)).is_err());
    }

    #[test]
    fn noiseless_sweep_equals_model_curve() {
        let p = eq11(5.0);
        let range = KRange::new(1, 600, 1).unwrap();
        let sim = simulated_speedup_sweep(&p, range, SimMode::PhaseSequential, 0.0, 1, 1).unwrap();
        let model = emit_curve(&p, Metric::Speedup, range).unwrap();
        for (s, m) in sim.points.iter().zip(&model.points) {
            assert_eq!(s.0, m.0);
            assert!(rel(s.1, m.1) < 1e-9);
        }
        let (k, _) = sim.peak().unwrap();
        assert!((315..=317).contains(&k));

        let one = simulated_speedup_sweep(
            &p,
            KRange::new(1, 1, 1).unwrap(),
            SimMode::PhaseSequential,
            0.0,
            1,
            1,
        )
        .unwrap();
        assert_eq!(one.points, vec![(1, 1.0)]);
    }

    #[test]
    fn noisy_sweep_peak_stays_near_bound() {
        let p = eq11(5.0);
        let sweep = simulated_speedup_sweep(
            &p,
            KRange::new(1, 600, 1).unwrap(),
            SimMode::PhaseSequential,
            0.05,
            2024,
            50,
        )
        .unwrap();
        let (k, _) = sweep.peak().unwrap();
        assert!((k as f64 - 316.0).abs() <= 31.6, "peak at {k}");
    }

    #[test]
    fn noisy_mean_is_unbiased() {
        let p = CostParams::new(1.0, 5.0, 3.0, 2.0, 1000.0).unwrap();
        let r = simulate(&SimConfig {
            iterations: 4000,
            noise: 0.2,
            seed: 5,
            ..SimConfig::new(p, 6)
        })
        .unwrap();
        // std of one iteration is below 0.2/sqrt(3) of its mean; 4000 samples
        assert!(r.relative_error < 0.01, "{}", r.relative_error);
    }

    #[test]
    fn adequacy_verdicts() {
        let p = eq11(5.0);
        let obs: Vec<(u64, f64)> = [1u64, 10, 100]
            .iter()
            .map(|&k| (k, simulate(&SimConfig::new(p, k)).unwrap().mean_time))
            .collect();
        let r = adequacy_report(&p, &obs, DEFAULT_ADEQUACY_THRESHOLD).unwrap();
        assert!(r.adequate && r.max_error <= 1e-9);

        let doubled: Vec<(u64, f64)> = obs.iter().map(|&(k, t)| (k, 2.0 * t)).collect();
        let r = adequacy_report(&p, &doubled, DEFAULT_ADEQUACY_THRESHOLD).unwrap();
        assert!(!r.adequate);
        assert!((r.max_error - 1.0).abs() < 1e-9);

        assert!(adequacy_report(&p, &[], 0.3).is_err());
        assert!(adequacy_report(&p, &[(2, 0.0)], 0.3).is_err());
        assert!(adequacy_report(&p, &[(2, -1.0)], 0.3).is_err());
    }

    #[test]
    fn adequacy_under_noise() {
        let p = eq11(5.0);
        let obs: Vec<(u64, f64)> = [1u64, 4, 16, 64, 256]
            .iter()
            .map(|&k| {
                let cfg = SimConfig {
                    noise: 0.2,
                    seed: k,
                    ..SimConfig::new(p, k)
                };
                (k, simulate(&cfg).unwrap().mean_time)
            })
            .collect();
        let r = adequacy_report(&p, &obs, DEFAULT_ADEQUACY_THRESHOLD).unwrap();
        assert!(r.max_error <= 0.2, "{}", r.max_error);
        assert!(r.adequate);
    }
}
