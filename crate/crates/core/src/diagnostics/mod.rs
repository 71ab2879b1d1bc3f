//! Spectral quantities, variance and mixing diagnostics, quadrature TV,
//! covering times and the cost functional.

pub mod anticoncentration;
pub mod cost;
pub mod covering;
pub mod iat;
pub mod spectral;
pub mod tv;

pub use anticoncentration::{anticoncentration_check, max_window_mass, AntiConcentration};
pub use cost::{cost, fit_line, scaling_experiment, DiagnosticsReport, ScalingCase, ScalingResult, ScalingRow, TvEntry};
pub use covering::{coupon_sim, covering_time, empirical_quantile, CoveringResult, CoveringSpec};
pub use iat::{iat_ess, IatEstimate};
pub use spectral::{
    discretize, pseudo_spectral_gap, random_reversible, spectral_gap, spectral_gap_general, spectral_gap_reversible,
    worst_case_asvar, AsvarResult, GridSpec, TransitionMatrix,
};
pub use tv::{log_normaliser, tv_distance, QuadratureSpec};
