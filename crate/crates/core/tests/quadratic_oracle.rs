use std::path::Path;

use bsf_core::workloads::{fixture, load_system, make_quadratic, QuadraticProblem};
use bsf_core::{run_farm, Backend};
use nalgebra::{DMatrix, DVector};

/// Direct dense least-squares solve through SVD.
fn oracle(q: &QuadraticProblem) -> Vec<f64> {
    let a = DMatrix::from_row_slice(q.a.rows(), q.a.cols(), q.a.as_slice());
    let b = DVector::from_column_slice(&q.b);
    let x = a.svd(true, true).solve(&b, 1e-14).unwrap();
    x.iter().copied().collect()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[test]
fn cross_k_agreement_and_direct_solve() {
    let q = fixture("small64x16").unwrap();
    let expected = oracle(&q);
    let p = make_quadratic(q).unwrap();
    let base = run_farm(&p, &Backend::InProcess, 1).unwrap().output;
    assert!(*base.gradient_norms.last().unwrap() < 1e-10);
    // ‖x − x*‖ ≤ ‖g‖ / λ_min(AᵀA), and λ_min is O(1) for this tall random A
    assert!(
        max_diff(&base.x, &expected) < 1e-8,
        "{}",
        max_diff(&base.x, &expected)
    );
    for k in [2, 4, 8] {
        let out = run_farm(&p, &Backend::InProcess, k).unwrap().output;
        assert!(max_diff(&out.x, &base.x) < 1e-6, "K={k}");
        assert!(max_diff(&out.x, &expected) < 1e-8, "K={k}");
    }
}

#[test]
fn in_process_and_tcp_agree_exactly() {
    let p = make_quadratic(fixture("small64x16").unwrap()).unwrap();
    for k in [1, 3, 4] {
        let a = run_farm(&p, &Backend::InProcess, k).unwrap();
        let b = run_farm(&p, &Backend::tcp_loopback(), k).unwrap();
        assert_eq!(a.output, b.output, "K={k}");
        assert_eq!(a.iteration_count, b.iteration_count);
    }
}

#[test]
fn committed_fixture_files_match_the_generator() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let loaded = load_system(&dir.join("small64x16_a.txt"), &dir.join("small64x16_b.txt")).unwrap();
    let generated = fixture("small64x16").unwrap();
    assert_eq!(loaded.a, generated.a);
    assert_eq!(loaded.b, generated.b);
}

#[test]
fn medium_fixture_converges_with_uneven_blocks() {
    let q = fixture("medium512x64").unwrap();
    let expected = oracle(&q);
    let p = make_quadratic(q).unwrap();
    // 512 rows over 7 workers leaves blocks of 73 and 74 rows
    let out = run_farm(&p, &Backend::InProcess, 7).unwrap().output;
    assert!(max_diff(&out.x, &expected) < 1e-8);
}
