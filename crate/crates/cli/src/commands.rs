use std::fs;
use std::path::PathBuf;

use anyhow::Context;
use bsf_core::workloads::{
    calibrate as run_calibration, fixture, load_system, make_quadratic, make_synthetic,
    synthetic_adequacy, SpinCalibration, SyntheticSpec,
};
use bsf_core::{
    classify_scaling, emit_curve, run_farm, simulate as run_simulation, simulated_speedup_sweep,
    CostParams, FarmOutcome, Metric, ScalingLaw, SimConfig,
};
use serde::Serialize;

use crate::{
    CalibrateArgs, ClassifyArgs, Format, ModelArgs, RunArgs, SimulateArgs, SweepArgs, Usage,
    Verdict, Workload,
};

/// Relative agreement required between worker counts of the quadratic run.
const CROSS_K_TOLERANCE: f64 = 1e-6;

fn write_or_print(out: Option<&PathBuf>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            fs::write(path, text).with_context(|| format!("writing {}", path.display()))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> anyhow::Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

#[derive(Serialize)]
struct ModelSummary {
    v: Option<f64>,
    params: CostParams,
    scalability_bound: f64,
    grid_argmax: u64,
    peak_speedup: f64,
    files: Vec<String>,
}

pub fn model(a: &ModelArgs) -> anyhow::Result<()> {
    let sets = a.params.param_sets()?;
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let ext = match a.format {
        Format::Csv => "csv",
        Format::Json => "json",
    };
    let mut summaries = Vec::new();
    for (v, p) in sets {
        let bound = p.scalability_bound()?;
        let mut files = Vec::new();
        let mut peak = (1, 1.0);
        for metric in Metric::ALL {
            let curve = emit_curve(&p, metric, a.range)?;
            if metric == Metric::Speedup {
                peak = curve.peak().expect("non-empty range");
            }
            let name = match v {
                Some(v) => format!("{}_v{v}.{ext}", metric.name()),
                None => format!("{}.{ext}", metric.name()),
            };
            let text = match a.format {
                Format::Csv => curve.to_csv_string()?,
                Format::Json => curve.to_json()? + "\n",
            };
            fs::write(a.out_dir.join(&name), text).with_context(|| format!("writing {name}"))?;
            files.push(name);
        }
        let label = v.map(|v| format!("v={v}: ")).unwrap_or_default();
        println!(
            "{label}K* = {bound:.4}, grid argmax over {}:{} = {} (speedup {:.6e})",
            a.range.lo, a.range.hi, peak.0, peak.1
        );
        summaries.push(ModelSummary {
            v,
            params: p,
            scalability_bound: bound,
            grid_argmax: peak.0,
            peak_speedup: peak.1,
            files,
        });
    }
    fs::write(a.out_dir.join("summary.json"), to_json(&summaries)?)?;
    Ok(())
}

pub fn classify(a: &ClassifyArgs) -> anyhow::Result<()> {
    let class = classify_scaling(ScalingLaw {
        alpha: a.alpha,
        beta: a.beta,
    })?;
    if a.json {
        print!("{}", to_json(&class)?);
    } else {
        println!(
            "{} (bound grows as n^{})",
            class.verdict, class.bound_exponent
        );
    }
    Ok(())
}

pub fn simulate(a: &SimulateArgs) -> anyhow::Result<()> {
    let cfg = SimConfig {
        params: a.params.single()?,
        workers: a.workers,
        iterations: a.sim.iterations,
        mode: a.sim.mode.into(),
        noise: a.sim.noise,
        seed: a.sim.seed,
    };
    let report = run_simulation(&cfg)?;
    if a.out.is_some() {
        println!(
            "K = {}: simulated T_K = {:.15e}, model T_K = {:.15e}, relative error {:.3e}, speedup {:.15e}",
            cfg.workers, report.mean_time, report.model_time, report.relative_error, report.speedup
        );
    }
    write_or_print(a.out.as_ref(), &to_json(&report)?)
}

pub fn sweep(a: &SweepArgs) -> anyhow::Result<()> {
    let p = a.params.single()?;
    let curve = simulated_speedup_sweep(
        &p,
        a.range,
        a.sim.mode.into(),
        a.sim.noise,
        a.sim.seed,
        a.sim.iterations,
    )?;
    if a.out.is_some() {
        let (k, s) = curve.peak().expect("non-empty range");
        println!("simulated speedup peaks at K = {k} (speedup {s:.15e})");
    }
    write_or_print(a.out.as_ref(), &curve.to_csv_string()?)
}

fn write_trace<O>(dir: Option<&PathBuf>, name: &str, out: &FarmOutcome<O>) -> anyhow::Result<()> {
    if let Some(dir) = dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(name);
        let file =
            fs::File::create(&path).with_context(|| format!("writing {}", path.display()))?;
        out.write_trace_csv(file)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct QuadraticRun {
    workers: u16,
    iterations: u64,
    final_gradient_norm: f64,
    iteration_time: f64,
    mean_iteration_time: f64,
    /// Largest componentwise difference from the first run's solution.
    max_diff_from_first: f64,
    x: Vec<f64>,
}

#[derive(Serialize)]
struct QuadraticReport {
    workload: &'static str,
    source: String,
    backend: &'static str,
    runs: Vec<QuadraticRun>,
    max_cross_k_diff: f64,
    tolerance: f64,
    agree: bool,
}

fn run_quadratic(a: &RunArgs) -> anyhow::Result<()> {
    let (q, source) = match (&a.fixture, &a.matrix, &a.rhs) {
        (Some(name), _, _) => (fixture(name)?, name.clone()),
        (None, Some(m), Some(b)) => (
            load_system(m, b)?,
            format!("{} {}", m.display(), b.display()),
        ),
        _ => (fixture("small64x16")?, "small64x16".into()),
    };
    let problem = make_quadratic(q)?;
    let backend = a.backend.backend()?;
    let mut runs: Vec<QuadraticRun> = Vec::new();
    for &k in &a.workers {
        let out = run_farm(&problem, &backend, k)?;
        write_trace(a.trace_dir.as_ref(), &format!("trace_K{k}.csv"), &out)?;
        let diff = runs.first().map_or(0.0, |first| {
            first
                .x
                .iter()
                .zip(&out.output.x)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        });
        println!(
            "K = {k}: {} iterations, |g| = {:.3e}, max diff from first run {diff:.3e}",
            out.iteration_count,
            out.output
                .gradient_norms
                .last()
                .copied()
                .unwrap_or(f64::NAN)
        );
        runs.push(QuadraticRun {
            workers: k,
            iterations: out.iteration_count,
            final_gradient_norm: out
                .output
                .gradient_norms
                .last()
                .copied()
                .unwrap_or(f64::NAN),
            iteration_time: out.iteration_time(),
            mean_iteration_time: out.mean_iteration_time(),
            max_diff_from_first: diff,
            x: out.output.x,
        });
    }
    let max_cross_k_diff = runs
        .iter()
        .map(|r| r.max_diff_from_first)
        .fold(0.0, f64::max);
    let report = QuadraticReport {
        workload: "quadratic",
        source,
        backend: a.backend.name(),
        agree: max_cross_k_diff <= CROSS_K_TOLERANCE,
        runs,
        max_cross_k_diff,
        tolerance: CROSS_K_TOLERANCE,
    };
    write_or_print(a.out.as_ref(), &to_json(&report)?)?;
    if !report.agree {
        return Err(Verdict(format!(
            "solutions differ by {max_cross_k_diff:.3e} across worker counts"
        ))
        .into());
    }
    Ok(())
}

fn run_synthetic(a: &RunArgs) -> anyhow::Result<()> {
    let path = a
        .config
        .as_ref()
        .ok_or_else(|| Usage("--workload synthetic needs --config <spec.json>".into()))?;
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let spec = SyntheticSpec::from_json(&text)?;
    let backend = a.backend.backend()?;
    let calibration = run_calibration(&backend, &[64, 4_096, 65_536, 262_144], 7)?;
    let problem = make_synthetic(spec, Some(SpinCalibration::measure()))?;
    let report = synthetic_adequacy(&problem, &backend, &a.workers, &calibration, a.threshold)?;
    for c in &report.checks {
        println!(
            "K = {}: measured speedup {:.3}, predicted {:.3}, error {:.1}%",
            c.workers,
            c.measured_speedup,
            c.predicted_speedup,
            100.0 * c.relative_error
        );
    }
    write_or_print(a.out.as_ref(), &to_json(&report)?)?;
    if !report.adequate {
        return Err(Verdict(format!(
            "measured speedup deviates {:.1}% from the model (threshold {:.0}%, {} CPU(s) available)",
            100.0 * report.max_speedup_error,
            100.0 * report.threshold,
            report.available_parallelism
        ))
        .into());
    }
    Ok(())
}

pub fn run(a: &RunArgs) -> anyhow::Result<()> {
    if a.workers.is_empty() {
        return Err(Usage("--K needs at least one worker count".into()).into());
    }
    match a.workload {
        Workload::Quadratic => run_quadratic(a),
        Workload::Synthetic => run_synthetic(a),
    }
}

pub fn calibrate(a: &CalibrateArgs) -> anyhow::Result<()> {
    let report = run_calibration(&a.backend.backend()?, &a.sizes, a.reps)?;
    if a.out.is_some() {
        println!(
            "L = {:.6e}, per byte = {:.6e}, R² = {:.6}",
            report.latency, report.per_byte, report.r_squared
        );
    }
    write_or_print(a.out.as_ref(), &to_json(&report)?)
}
