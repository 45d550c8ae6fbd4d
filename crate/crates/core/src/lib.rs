//! Identification of jump Markov linear systems with Rao-Blackwellized
//! particle stochastic-approximation EM.
//!
//! The continuous state is marginalized with Kalman recursions, the mode
//! sequence is sampled by a conditional particle filter with ancestor
//! sampling, and the parameters are updated in closed form from running
//! averages of sufficient statistics.

pub mod backward;
pub mod cpf;
pub mod error;
pub mod experiments;
pub mod io;
pub mod kalman;
pub mod linalg;
pub mod model;
pub mod psaem;
pub mod testing;

pub use backward::{ancestor_logweights, backward_recursion, AncestorWeightInputs, BackwardInfo};
pub use cpf::{
    mcmc_smoother, mode_indicator, rb_cpf_as, rb_cpf_as_with, CpfOptions, KernelOutput, McmcOutput,
    Particle,
};
pub use error::{JmlsError, Result};
pub use experiments::{h2_error, match_modes, run_experiment, ExperimentConfig, H2Report};
pub use kalman::{kalman_filter, smooth_sequence, GaussianBelief, KalmanTrack};
pub use model::{
    generate_input, simulate, validate_model, Dataset, Dims, JmlsModel, ModeParams, ModeSeq,
    Trajectory,
};
pub use psaem::{
    compute_suffstats, m_step, q_hat_value, rb_psaem, resume_psaem, sa_update, IterationReport,
    OccupancyDivisor, PsaemConfig, PsaemState, SmoothedStats, StepSchedule, SuffStats,
};
