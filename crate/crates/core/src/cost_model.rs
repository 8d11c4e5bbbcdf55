//! Analytical cost model of the bulk-synchronous farm.
//!
//! One iteration of a farm with a master and `K` workers costs
//!
//! ```text
//! T_1 = 2L + t_s + t_r + t_p + t_w
//! T_K = K(L + t_s) + t_w/K + K·L + t_r + t_p
//!     = K(2L + t_s) + t_r + t_p + t_w/K
//! ```
//!
//! where `L` is the per-message initiation latency, `t_s` the time to send a
//! job to one worker, `t_r` the total time to move all results to the master,
//! `t_p` the master's processing time and `t_w` the compute time of the whole
//! iteration on a single worker. From these follow the speedup `a = T_1/T_K`,
//! its derivative, the efficiency `e = T_1/(K·T_K)`, and the worker count
//! maximizing speedup:
//!
//! ```text
//! K* = sqrt(t_w / (2L + t_s))
//! ```
//!
//! `K*` does not depend on `t_r` or `t_p`. All formulas are evaluated in the
//! factored forms above; the magnitudes involved routinely span 13 decades.
//!
//! The general BSP cost `T = W + H·g + L·S` is provided as a reference.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

fn check_time(name: &str, v: f64) -> Result<()> {
    if !v.is_finite() || v < 0.0 {
        return Err(invalid(format!("{name} must be finite and >= 0, got {v}")));
    }
    Ok(())
}

fn check_workers(k: u64) -> Result<()> {
    if k < 1 {
        return Err(invalid("worker count K must be >= 1"));
    }
    Ok(())
}

// BSP reference formulas

/// Time of one BSP superstep: `w + g·h + L`.
pub fn bsp_superstep_time(work: f64, packets: f64, gap: f64, latency: f64) -> Result<f64> {
    check_time("w", work)?;
    check_time("h", packets)?;
    check_time("g", gap)?;
    check_time("L", latency)?;
    Ok(work + gap * packets + latency)
}

/// Parameters of a whole BSP program with `S` supersteps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BspParams {
    /// Maximum local compute time of each superstep.
    pub work: Vec<f64>,
    /// Maximum packets sent or received by a processor in each superstep.
    pub packets: Vec<f64>,
    /// Time per packet.
    pub gap: f64,
    /// Barrier / initiation latency.
    pub latency: f64,
}

impl BspParams {
    pub fn new(work: Vec<f64>, packets: Vec<f64>, gap: f64, latency: f64) -> Result<Self> {
        let p = BspParams {
            work,
            packets,
            gap,
            latency,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn superstep_count(&self) -> usize {
        self.work.len()
    }

    fn validate(&self) -> Result<()> {
        if self.work.len() != self.packets.len() {
            return Err(invalid(format!(
                "superstep lists differ in length: {} compute maxima vs {} packet maxima",
                self.work.len(),
                self.packets.len()
            )));
        }
        if self.work.is_empty() {
            return Err(invalid("a BSP program needs at least one superstep"));
        }
        for (&w, &h) in self.work.iter().zip(&self.packets) {
            check_time("w_i", w)?;
            check_time("h_i", h)?;
        }
        check_time("g", self.gap)?;
        check_time("L", self.latency)
    }
}

/// Total BSP time `W + H·g + L·S`.
pub fn bsp_total_time(p: &BspParams) -> Result<f64> {
    p.validate()?;
    let w: f64 = p.work.iter().sum();
    let h: f64 = p.packets.iter().sum();
    Ok(w + h * p.gap + p.latency * p.superstep_count() as f64)
}

// Farm cost parameters

/// The five parameters of the farm cost model, in abstract time units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCostParams")]
pub struct CostParams {
    /// Message initiation latency `L`, charged once per message.
    pub latency: f64,
    /// Time to send one job to one worker, latency excluded (`t_s`).
    pub job_send: f64,
    /// Time to move the total result payload to the master (`t_r`).
    pub result_transfer: f64,
    /// Master's result processing time (`t_p`).
    pub result_processing: f64,
    /// Compute time of one iteration on a single worker (`t_w`).
    pub work: f64,
}

#[derive(Deserialize)]
struct RawCostParams {
    latency: f64,
    job_send: f64,
    result_transfer: f64,
    result_processing: f64,
    work: f64,
}

impl TryFrom<RawCostParams> for CostParams {
    type Error = Error;

    fn try_from(r: RawCostParams) -> Result<Self> {
        CostParams::new(
            r.latency,
            r.job_send,
            r.result_transfer,
            r.result_processing,
            r.work,
        )
    }
}

impl CostParams {
    pub fn new(
        latency: f64,
        job_send: f64,
        result_transfer: f64,
        result_processing: f64,
        work: f64,
    ) -> Result<Self> {
        check_time("L", latency)?;
        check_time("t_s", job_send)?;
        check_time("t_r", result_transfer)?;
        check_time("t_p", result_processing)?;
        check_time("t_w", work)?;
        if work == 0.0 {
            return Err(invalid("t_w must be > 0: an iteration performs work"));
        }
        Ok(CostParams {
            latency,
            job_send,
            result_transfer,
            result_processing,
            work,
        })
    }

    /// Builds parameters with `t_s` derived from the v-ratio: `t_s = 10^-v · t_w`.
    pub fn with_v(
        latency: f64,
        v: VRatio,
        result_transfer: f64,
        result_processing: f64,
        work: f64,
    ) -> Result<Self> {
        let job_send = v_to_ts(work, v.0)?;
        Self::new(latency, job_send, result_transfer, result_processing, work)
    }

    /// `2L + t_s`, the per-worker communication cost that grows with `K`.
    pub fn per_worker_overhead(&self) -> f64 {
        2.0 * self.latency + self.job_send
    }

    /// `t_r + t_p`, the overhead independent of `K`.
    pub fn fixed_overhead(&self) -> f64 {
        self.result_transfer + self.result_processing
    }

    /// Iteration time with one worker, `T_1`.
    pub fn iteration_time_single(&self) -> f64 {
        self.per_worker_overhead() + self.fixed_overhead() + self.work
    }

    /// Iteration time with `k` workers, `T_K = K(2L + t_s) + t_r + t_p + t_w/K`.
    pub fn iteration_time_k(&self, k: u64) -> Result<f64> {
        check_workers(k)?;
        Ok(self.iteration_time_at(k as f64))
    }

    fn iteration_time_at(&self, k: f64) -> f64 {
        k * self.per_worker_overhead() + self.fixed_overhead() + self.work / k
    }

    /// Speedup `a(K) = T_1/T_K`.
    pub fn speedup(&self, k: u64) -> Result<f64> {
        check_workers(k)?;
        if k == 1 {
            return Ok(1.0);
        }
        Ok(self.iteration_time_single() / self.iteration_time_at(k as f64))
    }

    /// Derivative of the speedup with respect to a continuous worker count.
    ///
    /// ```text
    /// a'(K) = T_1·(t_w/K² − 2L − t_s) / (K(2L + t_s) + t_r + t_p + t_w/K)²
    /// ```
    pub fn speedup_derivative(&self, k: f64) -> Result<f64> {
        if !k.is_finite() || k < 1.0 {
            return Err(invalid(format!("K must be finite and >= 1, got {k}")));
        }
        let denom = self.iteration_time_at(k);
        let numer =
            self.iteration_time_single() * (self.work / (k * k) - self.per_worker_overhead());
        Ok(numer / (denom * denom))
    }

    /// The continuous maximizer of speedup, `K* = sqrt(t_w / (2L + t_s))`.
    pub fn scalability_bound(&self) -> Result<f64> {
        let overhead = self.per_worker_overhead();
        if overhead == 0.0 {
            return Err(Error::UnboundedScalability);
        }
        Ok((self.work / overhead).sqrt())
    }

    /// Brute-force scan of integer `K` in `[1, k_max]`. Returns the smallest
    /// maximizing `K` and the speedup there.
    pub fn argmax_speedup_grid(&self, k_max: u64) -> Result<(u64, f64)> {
        check_workers(k_max)?;
        let mut best = (1, 1.0);
        for k in 2..=k_max {
            let a = self.speedup(k)?;
            if a > best.1 {
                best = (k, a);
            }
        }
        Ok(best)
    }

    /// Efficiency `e(K) = T_1/(K·T_K)`.
    pub fn efficiency_exact(&self, k: u64) -> Result<f64> {
        check_workers(k)?;
        if k == 1 {
            return Ok(1.0);
        }
        let k = k as f64;
        let scaled = k * k * self.per_worker_overhead() + k * self.fixed_overhead() + self.work;
        Ok(self.iteration_time_single() / scaled)
    }

    /// Large-`K` efficiency approximation
    /// `1 / (1 + (K²(2L + t_s) + K(t_r + t_p)) / t_w)`.
    ///
    /// Drops the `2L + t_s + t_r + t_p` part of `T_1`, so it sits below
    /// [`efficiency_exact`](Self::efficiency_exact) and converges to it as `K` grows.
    pub fn efficiency_approx(&self, k: u64) -> Result<f64> {
        check_workers(k)?;
        let k = k as f64;
        let overhead = k * k * self.per_worker_overhead() + k * self.fixed_overhead();
        Ok(1.0 / (1.0 + overhead / self.work))
    }

    /// The v-ratio `lg(t_w/t_s)` of these parameters.
    pub fn v_ratio(&self) -> Result<VRatio> {
        ts_to_v(self.work, self.job_send)
    }

    pub fn evaluate(&self, metric: Metric, k: u64) -> Result<f64> {
        match metric {
            Metric::Speedup => self.speedup(k),
            Metric::Derivative => {
                check_workers(k)?;
                self.speedup_derivative(k as f64)
            }
            Metric::EfficiencyExact => self.efficiency_exact(k),
            Metric::EfficiencyApprox => self.efficiency_approx(k),
        }
    }
}

// v-ratio

/// Decimal logarithm of the compute-to-send ratio, `v = lg(t_w/t_s)`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct VRatio(pub f64);

impl VRatio {
    pub fn new(v: f64) -> Result<Self> {
        if !v.is_finite() {
            return Err(invalid(format!("v must be finite, got {v}")));
        }
        Ok(VRatio(v))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// `t_s = 10^-v · t_w`.
pub fn v_to_ts(work: f64, v: f64) -> Result<f64> {
    if !work.is_finite() || work <= 0.0 {
        return Err(invalid(format!("t_w must be > 0, got {work}")));
    }
    if !v.is_finite() {
        return Err(invalid(format!("v must be finite, got {v}")));
    }
    Ok(10f64.powf(-v) * work)
}

/// `v = lg(t_w/t_s)`.
pub fn ts_to_v(work: f64, job_send: f64) -> Result<VRatio> {
    if !work.is_finite() || work <= 0.0 {
        return Err(invalid(format!("t_w must be > 0, got {work}")));
    }
    if job_send == 0.0 {
        return Err(Error::UndefinedRatio(
            "t_s = 0 gives an infinite v-ratio".into(),
        ));
    }
    if !job_send.is_finite() || job_send < 0.0 {
        return Err(invalid(format!("t_s must be > 0, got {job_send}")));
    }
    Ok(VRatio(work.log10() - job_send.log10()))
}

// Scaling laws

/// Asymptotic growth of `t_s ~ n^alpha` and `t_w ~ n^beta` in the problem size `n`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingLaw {
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    WellScalable,
    LimitedScalable,
    PoorlyScalable,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::WellScalable => "well-scalable",
            Verdict::LimitedScalable => "limited-scalable",
            Verdict::PoorlyScalable => "poorly-scalable",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalabilityClass {
    pub verdict: Verdict,
    /// Growth exponent of the bound: `K* ~ n^((beta - alpha)/2)`.
    pub bound_exponent: f64,
}

/// Classifies how the scalability bound grows with problem size.
///
/// The bound grows as `n^((beta - alpha)/2)`: at least linearly is well
/// scalable, sublinearly limited, and not at all poorly scalable.
pub fn classify_scaling(law: ScalingLaw) -> Result<ScalabilityClass> {
    if !law.alpha.is_finite() || !law.beta.is_finite() {
        return Err(invalid("scaling exponents must be finite"));
    }
    let bound_exponent = (law.beta - law.alpha) / 2.0;
    let verdict = if bound_exponent >= 1.0 {
        Verdict::WellScalable
    } else if bound_exponent > 0.0 {
        Verdict::LimitedScalable
    } else {
        Verdict::PoorlyScalable
    };
    Ok(ScalabilityClass {
        verdict,
        bound_exponent,
    })
}

// Curves

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Speedup,
    Derivative,
    EfficiencyExact,
    EfficiencyApprox,
}

impl Metric {
    pub const ALL: [Metric; 4] = [
        Metric::Speedup,
        Metric::Derivative,
        Metric::EfficiencyExact,
        Metric::EfficiencyApprox,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Speedup => "speedup",
            Metric::Derivative => "derivative",
            Metric::EfficiencyExact => "efficiency_exact",
            Metric::EfficiencyApprox => "efficiency_approx",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| invalid(format!("unknown metric {s:?}")))
    }
}

/// Inclusive worker-count range `lo, lo+step, ..., <= hi`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KRange {
    pub lo: u64,
    pub hi: u64,
    pub step: u64,
}

impl KRange {
    pub fn new(lo: u64, hi: u64, step: u64) -> Result<Self> {
        if lo < 1 || hi < lo || step < 1 {
            return Err(invalid(format!(
                "empty worker range {lo}:{hi}:{step} (need 1 <= lo <= hi, step >= 1)"
            )));
        }
        Ok(KRange { lo, hi, step })
    }

    pub fn iter(&self) -> impl Iterator<Item = u64> {
        (self.lo..=self.hi).step_by(self.step as usize)
    }
}

/// Parses `lo:hi` or `lo:hi:step`.
impl FromStr for KRange {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |t: &str| {
            t.trim()
                .parse::<u64>()
                .map_err(|_| invalid(format!("bad worker range {s:?}")))
        };
        match parts.as_slice() {
            [lo, hi] => KRange::new(num(lo)?, num(hi)?, 1),
            [lo, hi, step] => KRange::new(num(lo)?, num(hi)?, num(step)?),
            _ => Err(invalid(format!(
                "bad worker range {s:?}, expected lo:hi[:step]"
            ))),
        }
    }
}

/// A metric sampled over a range of worker counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveSeries {
    pub metric: Metric,
    pub params: CostParams,
    pub points: Vec<(u64, f64)>,
}

impl CurveSeries {
    /// The point with the largest value; ties resolve to the smallest `K`.
    pub fn peak(&self) -> Option<(u64, f64)> {
        self.points
            .iter()
            .copied()
            .fold(None, |best: Option<(u64, f64)>, p| match best {
                Some(b) if b.1 >= p.1 => Some(b),
                _ => Some(p),
            })
    }

    /// Writes `K,<metric>` followed by one row per point in scientific notation
    /// with 16 significant digits.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["K", self.metric.name()])?;
        for &(k, v) in &self.points {
            w.write_record([k.to_string(), format!("{v:.15e}")])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is ascii"))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Samples `metric` at every `K` of `range`.
pub fn emit_curve(p: &CostParams, metric: Metric, range: KRange) -> Result<CurveSeries> {
    let range = KRange::new(range.lo, range.hi, range.step)?;
    let points = range
        .iter()
        .map(|k| p.evaluate(metric, k).map(|v| (k, v)))
        .collect::<Result<Vec<_>>>()?;
    Ok(CurveSeries {
        metric,
        params: *p,
        points,
    })
}
