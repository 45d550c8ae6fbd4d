//! Rao-Blackwellized particle stochastic-approximation EM.
//!
//! Each iteration runs one conditional particle filter sweep under the
//! current parameters, turns all weighted particles into sufficient
//! statistics, blends them into the running average and re-maximizes.

mod mstep;
mod stats;

pub use mstep::{
    m_step, q_hat_constant, q_hat_value, row_normalize, MStepOutput, OccupancyDivisor,
    OCCUPANCY_EPS_REL, PSD_FLOOR_REL,
};
pub use stats::{compute_suffstats, sa_update, SmoothedStats, StatsLayout, SuffStats};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cpf::{rb_cpf_as_with, sample_prior_modes, CpfOptions, KernelOutput};
use crate::error::{JmlsError, Result};
use crate::model::{ensure_valid, Dataset, JmlsModel, ModeSeq};

/// Consecutive starved iterations tolerated before giving up.
pub const MAX_STARVED_ITERATIONS: usize = 50;

/// `γ_k = 1` for `k <= burn_in`, then `(k - burn_in)^(-exponent)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub burn_in: usize,
    pub exponent: f64,
}

impl Default for StepSchedule {
    fn default() -> Self {
        Self {
            burn_in: 100,
            exponent: 0.7,
        }
    }
}

impl StepSchedule {
    /// A schedule with `γ_k = 1` for every iteration.
    pub fn constant_one() -> Self {
        Self {
            burn_in: usize::MAX,
            exponent: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.exponent > 0.5 && self.exponent <= 1.0) {
            return Err(JmlsError::InvalidArgument(format!(
                "step exponent {} outside (0.5, 1]",
                self.exponent
            )));
        }
        Ok(())
    }

    /// Step size for the 1-based iteration `k`.
    pub fn gamma(&self, k: usize) -> f64 {
        if k <= self.burn_in {
            1.0
        } else {
            ((k - self.burn_in) as f64).powf(-self.exponent)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsaemConfig {
    pub n_particles: usize,
    pub n_iters: usize,
    pub schedule: StepSchedule,
    pub divisor: OccupancyDivisor,
    /// Keep at most this many parameter iterates in the state history.
    pub history_cap: usize,
}

impl PsaemConfig {
    pub fn new(n_particles: usize, n_iters: usize) -> Self {
        Self {
            n_particles,
            n_iters,
            schedule: StepSchedule::default(),
            divisor: OccupancyDivisor::Split,
            history_cap: 0,
        }
    }
}

/// Everything needed to continue the iteration.
#[derive(Debug, Clone)]
pub struct PsaemState {
    pub theta: JmlsModel,
    /// `None` before the first iteration (`𝕊⁰ = 0`).
    pub stats: Option<SmoothedStats>,
    pub reference: ModeSeq,
    pub iteration: usize,
    pub history: Vec<JmlsModel>,
    /// Consecutive starved iterations per mode.
    pub starved_run: Vec<usize>,
}

impl PsaemState {
    /// Fresh state: `θ₀`, no statistics and a reference drawn from the prior
    /// mode chain under `θ₀`, so it has positive probability even when `Pi`
    /// has zero entries.
    pub fn init<R: Rng + ?Sized>(model0: JmlsModel, t_len: usize, rng: &mut R) -> Result<Self> {
        ensure_valid(&model0)?;
        let reference = sample_prior_modes(&model0, t_len, rng);
        let k = model0.dims.k;
        Ok(Self {
            theta: model0,
            stats: None,
            reference,
            iteration: 0,
            history: Vec::new(),
            starved_run: vec![0; k],
        })
    }
}

/// Passed to the per-iteration callback.
#[derive(Debug)]
pub struct IterationReport<'a> {
    pub k: usize,
    pub gamma: f64,
    pub theta: &'a JmlsModel,
    pub previous: &'a JmlsModel,
    pub starved: &'a [usize],
    pub kernel: &'a KernelOutput,
}

/// One iteration: kernel sweep, statistics, SA blend, maximization.
pub fn psaem_step<R, F>(
    state: &mut PsaemState,
    data: &Dataset,
    cfg: &PsaemConfig,
    rng: &mut R,
    callback: &mut F,
) -> Result<()>
where
    R: Rng + ?Sized,
    F: FnMut(&IterationReport<'_>),
{
    let k = state.iteration + 1;
    let gamma = cfg.schedule.gamma(k);
    let kernel = rb_cpf_as_with(
        &state.theta,
        data,
        &state.reference,
        CpfOptions::new(cfg.n_particles),
        rng,
    )?;
    let fresh = compute_suffstats(&kernel, data, &state.theta.dims)?;
    let smoothed = match &state.stats {
        None => sa_update(&SuffStats::zeros(&state.theta.dims), &fresh, gamma)?,
        Some(prev) => sa_update(prev, &fresh, gamma)?,
    };
    let out = m_step(&smoothed, &state.theta, cfg.divisor)?;
    for n in 0..state.starved_run.len() {
        if out.starved.contains(&n) {
            state.starved_run[n] += 1;
            if state.starved_run[n] > MAX_STARVED_ITERATIONS {
                return Err(JmlsError::PersistentStarvation {
                    mode: n + 1,
                    iterations: state.starved_run[n],
                    k,
                });
            }
        } else {
            state.starved_run[n] = 0;
        }
    }
    let previous = std::mem::replace(&mut state.theta, out.model);
    callback(&IterationReport {
        k,
        gamma,
        theta: &state.theta,
        previous: &previous,
        starved: &out.starved,
        kernel: &kernel,
    });
    if cfg.history_cap > 0 {
        if state.history.len() == cfg.history_cap {
            state.history.remove(0);
        }
        state.history.push(state.theta.clone());
    }
    state.stats = Some(smoothed);
    state.reference = kernel.reference;
    state.iteration = k;
    Ok(())
}

/// Runs `cfg.n_iters` iterations from `model0`.
pub fn rb_psaem<R, F>(
    model0: JmlsModel,
    data: &Dataset,
    cfg: &PsaemConfig,
    rng: &mut R,
    mut callback: F,
) -> Result<PsaemState>
where
    R: Rng + ?Sized,
    F: FnMut(&IterationReport<'_>),
{
    let state = PsaemState::init(model0, data.len(), rng)?;
    resume_psaem(state, data, cfg, rng, &mut callback)
}

/// Continues `state` until `cfg.n_iters` total iterations have run.
pub fn resume_psaem<R, F>(
    mut state: PsaemState,
    data: &Dataset,
    cfg: &PsaemConfig,
    rng: &mut R,
    callback: &mut F,
) -> Result<PsaemState>
where
    R: Rng + ?Sized,
    F: FnMut(&IterationReport<'_>),
{
    cfg.schedule.validate()?;
    if cfg.n_particles < 2 {
        return Err(JmlsError::InvalidArgument(
            "RB-PSAEM needs at least 2 particles".into(),
        ));
    }
    data.check_dims(&state.theta.dims)?;
    if state.reference.len() != data.len() {
        return Err(JmlsError::DimensionMismatch {
            context: "reference length",
            expected: data.len(),
            got: state.reference.len(),
        });
    }
    while state.iteration < cfg.n_iters {
        psaem_step(&mut state, data, cfg, rng, callback)?;
    }
    Ok(state)
}
