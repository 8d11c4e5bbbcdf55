//! Concrete farm problems and the calibration that turns measured runs into
//! cost-model parameters.

pub mod calibrate;
pub mod matrix;
pub mod quadratic;
pub mod synthetic;

pub use calibrate::{calibrate, estimate_params, CalibrationReport, CalibrationSample};
pub use matrix::Matrix;
pub use quadratic::{
    fixture, load_system, make_quadratic, Quadratic, QuadraticProblem, QuadraticSolution,
};
pub use synthetic::{
    make_synthetic, synthetic_adequacy, SpeedupCheck, SpinCalibration, SyntheticAdequacy,
    SyntheticProblem, SyntheticSpec,
};
