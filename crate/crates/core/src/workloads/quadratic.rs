//! Least-squares gradient descent as a farm: minimize `½‖Ax − b‖²`.
//!
//! The job is the current iterate `x`. Worker `r` owns a contiguous block of
//! rows `A_r`, `b_r` and returns `A_rᵀ(A_r x − b_r)`. The master sums the
//! partials in rank order into `g = Aᵀ(Ax − b)`, steps `x ← x − λg`, and stops
//! once `‖g‖₂ < ε` or after `max_iterations`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::matrix::{norm2, Matrix};
use crate::error::{invalid, ProblemError, Result};
use crate::farm::{FarmProblem, WorkerId};

#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticProblem {
    pub a: Matrix,
    pub b: Vec<f64>,
    pub step: f64,
    pub tolerance: f64,
    pub max_iterations: u64,
    /// Starting point; zero when `None`.
    pub x0: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadraticSolution {
    pub x: Vec<f64>,
    pub iterations: u64,
    /// `‖g‖₂` observed at every iteration.
    pub gradient_norms: Vec<f64>,
}

pub struct Quadratic {
    q: QuadraticProblem,
}

pub fn make_quadratic(q: QuadraticProblem) -> Result<Quadratic> {
    if q.a.rows() != q.b.len() {
        return Err(invalid(format!(
            "A has {} rows but b has {} entries",
            q.a.rows(),
            q.b.len()
        )));
    }
    if q.a.rows() == 0 || q.a.cols() == 0 {
        return Err(invalid("empty least-squares system"));
    }
    if let Some(x0) = &q.x0 {
        if x0.len() != q.a.cols() {
            return Err(invalid(format!(
                "x0 has {} entries, A has {} columns",
                x0.len(),
                q.a.cols()
            )));
        }
    }
    if !(q.step.is_finite() && q.step > 0.0) {
        return Err(invalid(format!("step size must be > 0, got {}", q.step)));
    }
    if !(q.tolerance.is_finite() && q.tolerance > 0.0) {
        return Err(invalid(format!(
            "tolerance must be > 0, got {}",
            q.tolerance
        )));
    }
    if q.max_iterations < 1 {
        return Err(invalid("max_iterations must be >= 1"));
    }
    Ok(Quadratic { q })
}

impl Quadratic {
    pub fn problem(&self) -> &QuadraticProblem {
        &self.q
    }
}

pub struct MasterState {
    x: Vec<f64>,
    gradient_norms: Vec<f64>,
}

pub struct RowBlock {
    a: Matrix,
    b: Vec<f64>,
}

impl FarmProblem for Quadratic {
    type MasterState = MasterState;
    type WorkerState = RowBlock;
    type Job = Vec<f64>;
    type Partial = Vec<f64>;
    type Output = QuadraticSolution;

    fn init_master(&self, _workers: u16) -> Result<MasterState, ProblemError> {
        Ok(MasterState {
            x: self
                .q
                .x0
                .clone()
                .unwrap_or_else(|| vec![0.0; self.q.a.cols()]),
            gradient_norms: Vec::new(),
        })
    }

    fn init_worker(&self, worker: WorkerId) -> Result<RowBlock, ProblemError> {
        let rows = worker.block(self.q.a.rows());
        Ok(RowBlock {
            b: self.q.b[rows.clone()].to_vec(),
            a: self.q.a.row_block(rows),
        })
    }

    fn make_job(&self, state: &MasterState) -> Result<Vec<f64>, ProblemError> {
        Ok(state.x.clone())
    }

    fn worker_step(
        &self,
        x: &Vec<f64>,
        _worker: WorkerId,
        block: &mut RowBlock,
    ) -> Result<Vec<f64>, ProblemError> {
        if x.len() != block.a.cols() {
            return Err(ProblemError::new(format!(
                "iterate has {} entries, expected {}",
                x.len(),
                block.a.cols()
            )));
        }
        let residual: Vec<f64> = block
            .a
            .mul_vec(x)
            .iter()
            .zip(&block.b)
            .map(|(ax, b)| ax - b)
            .collect();
        Ok(block.a.tr_mul_vec(&residual))
    }

    fn reduce(&self, state: &mut MasterState, partials: Vec<Vec<f64>>) -> Result<(), ProblemError> {
        let mut g = vec![0.0; state.x.len()];
        for p in &partials {
            if p.len() != g.len() {
                return Err(ProblemError::new("partial gradient has the wrong length"));
            }
            for (gi, pi) in g.iter_mut().zip(p) {
                *gi += pi;
            }
        }
        for (xi, gi) in state.x.iter_mut().zip(&g) {
            *xi -= self.q.step * gi;
        }
        state.gradient_norms.push(norm2(&g));
        Ok(())
    }

    fn exit_condition(&self, state: &MasterState) -> bool {
        let last = state
            .gradient_norms
            .last()
            .copied()
            .unwrap_or(f64::INFINITY);
        last < self.q.tolerance || state.gradient_norms.len() as u64 >= self.q.max_iterations
    }

    fn finalize(&self, state: MasterState) -> Result<QuadraticSolution, ProblemError> {
        Ok(QuadraticSolution {
            iterations: state.gradient_norms.len() as u64,
            x: state.x,
            gradient_norms: state.gradient_norms,
        })
    }
}

/// Largest eigenvalue of `AᵀA` by power iteration.
pub fn max_eigen_ata(a: &Matrix, iterations: usize) -> f64 {
    let mut v = vec![1.0; a.cols()];
    let mut lambda = 0.0;
    for _ in 0..iterations {
        let w = a.tr_mul_vec(&a.mul_vec(&v));
        let n = norm2(&w);
        if n == 0.0 {
            return 0.0;
        }
        lambda = n / norm2(&v);
        v = w.into_iter().map(|x| x / n).collect();
    }
    lambda
}

/// Step `1 / (1.01·λ_max(AᵀA))`: every eigenvalue of `I − λAᵀA` lies in
/// `[0, 1)`, so `‖g‖` never increases.
pub fn contractive_step(a: &Matrix) -> f64 {
    1.0 / (1.01 * max_eigen_ata(a, 200))
}

/// Names of the built-in fixtures.
pub const FIXTURES: [&str; 3] = ["identity2", "small64x16", "medium512x64"];

/// Built-in systems. Random ones have entries uniform on `[-1, 1]` from a
/// fixed ChaCha seed, which keeps `AᵀA` well conditioned for tall shapes.
pub fn fixture(name: &str) -> Result<QuadraticProblem> {
    match name {
        "identity2" => Ok(QuadraticProblem {
            a: Matrix::identity(2),
            b: vec![1.0, 1.0],
            step: 1.0,
            tolerance: 1e-12,
            max_iterations: 100,
            x0: None,
        }),
        "small64x16" => Ok(random_system(64, 16, 0x5EED_6416)),
        "medium512x64" => Ok(random_system(512, 64, 0x5EED_5126)),
        other => Err(invalid(format!(
            "unknown fixture {other:?}; built-in fixtures are {FIXTURES:?}"
        ))),
    }
}

pub fn random_system(m: usize, n: usize, seed: u64) -> QuadraticProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f64> = (0..m * n).map(|_| rng.gen_range(-1.0..=1.0)).collect();
    let b: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..=1.0)).collect();
    let a = Matrix::from_rows(m, n, data).expect("sized");
    let step = contractive_step(&a);
    QuadraticProblem {
        a,
        b,
        step,
        tolerance: 1e-10,
        max_iterations: 20_000,
        x0: None,
    }
}

/// Loads `A` and `b` (an `m 1` matrix) from fixture files.
pub fn load_system(a_path: &std::path::Path, b_path: &std::path::Path) -> Result<QuadraticProblem> {
    let a = Matrix::load(a_path)?;
    let b = Matrix::load(b_path)?;
    if b.cols() != 1 {
        return Err(invalid("right-hand side file must have a single column"));
    }
    let step = contractive_step(&a);
    Ok(QuadraticProblem {
        a,
        b: b.into_vec(),
        step,
        tolerance: 1e-10,
        max_iterations: 20_000,
        x0: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::farm::{run_farm, run_single, Backend};

    #[test]
    fn identity_system_lands_in_one_step() {
        let p = make_quadratic(fixture("identity2").unwrap()).unwrap();
        let out = run_single(&p).unwrap();
        // the first step lands on (1, 1); the second sees g = 0 and stops
        assert_eq!(out.output.x, vec![1.0, 1.0]);
        assert_eq!(out.output.gradient_norms[1], 0.0);
        assert_eq!(out.iteration_count, 2);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let mut q = fixture("identity2").unwrap();
        q.b.push(3.0);
        assert!(make_quadratic(q).is_err());
        let mut q = fixture("identity2").unwrap();
        q.step = 0.0;
        assert!(make_quadratic(q).is_err());
        let mut q = fixture("identity2").unwrap();
        q.x0 = Some(vec![0.0; 3]);
        assert!(make_quadratic(q).is_err());
        assert!(fixture("nope").is_err());
    }

    #[test]
    fn gradient_norm_never_increases() {
        let p = make_quadratic(fixture("small64x16").unwrap()).unwrap();
        let out = run_farm(&p, &Backend::InProcess, 3).unwrap();
        let norms = &out.output.gradient_norms;
        assert!(norms.windows(2).all(|w| w[1] <= w[0]));
        assert!(*norms.last().unwrap() < 1e-10);
    }

    #[test]
    fn power_iteration_on_diagonal() {
        let a = Matrix::from_rows(2, 2, vec![3.0, 0.0, 0.0, 1.0]).unwrap();
        assert!((max_eigen_ata(&a, 100) - 9.0).abs() < 1e-9);
    }
}
