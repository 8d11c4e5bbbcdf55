//! Shared inputs for the criterion benches.

use bsf_core::CostParams;

/// The reference parameter set used across benches: `L = 0.5`, `t_w = 1e12`,
/// a moderate job send and fixed reduce cost.
pub fn reference_params() -> CostParams {
    CostParams::new(0.5, 1e7, 1e9, 1e9, 1e12).expect("valid reference parameters")
}
