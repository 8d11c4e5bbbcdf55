//! Bulk-synchronous farm (BSF): a master-worker skeleton executed as
//! barrier-separated supersteps, an analytical cost model predicting its
//! speedup, efficiency and scalability bound, a virtual-clock simulator, and
//! calibration tooling that checks the model against real runs.

pub mod cost_model;
pub mod error;
pub mod farm;
pub mod simulator;
pub mod transport;
pub mod workloads;

pub use cost_model::{
    bsp_superstep_time, bsp_total_time, classify_scaling, emit_curve, ts_to_v, v_to_ts, BspParams,
    CostParams, CurveSeries, KRange, Metric, ScalabilityClass, ScalingLaw, VRatio, Verdict,
};
pub use error::{Error, FarmError, Phase, ProblemError, Result};
pub use farm::{
    measure_speedup, run_farm, run_master, run_single, run_worker, Backend, FarmOutcome,
    FarmProblem, IterationTrace, Payload, SpeedupSample, WorkerId,
};
pub use simulator::{
    adequacy_report, simulate, simulated_speedup_sweep, AdequacyReport, SimConfig, SimMode,
    SimReport,
};
pub use transport::{Comm, Endpoint, Message, Rank, Tag, TransportError};
