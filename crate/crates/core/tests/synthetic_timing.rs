//! Wall-clock properties of the synthetic workload. The tests share one lock
//! so they never compete with each other for the CPU.

use std::sync::Mutex;
use std::time::Instant;

use bsf_core::workloads::calibrate::linear_fit;
use bsf_core::workloads::{make_synthetic, SpinCalibration, SyntheticSpec};
use bsf_core::{run_farm, Backend, FarmProblem, WorkerId};

static CPU: Mutex<()> = Mutex::new(());

fn spec(work: f64, job_bytes: usize, iterations: u64) -> SyntheticSpec {
    SyntheticSpec {
        work,
        job_bytes,
        result_bytes: 64,
        iterations,
    }
}

/// Median of five runs.
fn timed_step(p: &bsf_core::workloads::SyntheticProblem, job: &Vec<u8>, worker: WorkerId) -> f64 {
    let mut times: Vec<f64> = (0..5)
        .map(|_| {
            let t = Instant::now();
            p.worker_step(job, worker, &mut ()).unwrap();
            t.elapsed().as_secs_f64()
        })
        .collect();
    times.sort_by(f64::total_cmp);
    times[2]
}

/// The host's clock speed drifts by ~15% within seconds, so spin-work is
/// recalibrated right before each measurement and a measurement that straddles
/// a speed step is retried.
#[test]
fn worker_compute_scales_as_one_over_k() {
    let _cpu = CPU.lock().unwrap_or_else(|e| e.into_inner());
    let job = vec![0u8; 16];
    for k in [1u16, 2, 4, 8] {
        let target = 0.2 / k as f64;
        let mut attempts = Vec::new();
        for _ in 0..3 {
            let p = make_synthetic(spec(0.2, 16, 1), Some(SpinCalibration::measure())).unwrap();
            let took = timed_step(
                &p,
                &job,
                WorkerId {
                    rank: 1,
                    workers: k,
                },
            );
            attempts.push(took);
            if ((took - target) / target).abs() <= 0.2 {
                break;
            }
        }
        let took = *attempts.last().unwrap();
        assert!(
            ((took - target) / target).abs() <= 0.2,
            "K={k}: {attempts:?} against {target:.4}s"
        );
    }
}

#[test]
fn distribute_time_grows_linearly_with_job_size() {
    let _cpu = CPU.lock().unwrap_or_else(|e| e.into_inner());
    let spin = SpinCalibration {
        rounds_per_second: 1.0,
    };
    let mut points = Vec::new();
    // large payloads keep scheduler ticks small next to the copy cost
    for mib in [8usize, 16, 24, 32, 40, 48] {
        let bytes = mib << 20;
        let p = make_synthetic(spec(0.0, bytes, 5), Some(spin)).unwrap();
        let out = run_farm(&p, &Backend::InProcess, 2).unwrap();
        let fastest = out
            .traces
            .iter()
            .map(|t| t.distribute)
            .fold(f64::INFINITY, f64::min);
        points.push((bytes as f64, fastest));
    }
    let (_, slope, r2) = linear_fit(&points).unwrap();
    assert!(slope > 0.0);
    assert!(r2 >= 0.9, "R² = {r2}, points {points:?}");
}
