//! Randomized replication of the two numerical examples: true-system draws,
//! H₂ evaluation with mode matching, and result files.

mod generate;
mod h2;
mod run;

pub use generate::{
    draw_example1_model, draw_example2_model, draw_model, draw_sticky_pi, perturb_model,
    random_orthogonal, DrawRanges, Range,
};
pub use h2::{
    discrete_lyapunov, frequency_response, h2_error, h2_norm, log_grid, match_modes,
    spectral_radius, H2Report, MAX_MATCH_MODES,
};
pub use run::{
    read_aggregate, read_repeat_curve, repeat_rng, run_experiment, AggregateRow, Example,
    ExperimentConfig, ExperimentSummary, RepeatSummary, BODE_OMEGA_MAX, BODE_OMEGA_MIN,
};
