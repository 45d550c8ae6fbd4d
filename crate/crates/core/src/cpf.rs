//! Rao-Blackwellized conditional particle filter with ancestor sampling, and
//! the MCMC smoother built from it.
//!
//! Particles carry only the discrete mode path; the continuous state is
//! marginalized with one Kalman filter per particle. One particle is pinned to
//! the reference trajectory and its history is redrawn at every step with
//! weights that account for the whole future of the reference.

use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::Distribution;

use crate::backward::{
    ancestor_logweights, backward_recursion, AncestorWeightInputs, BackwardInfo,
};
use crate::error::{JmlsError, Result};
use crate::kalman::{
    finish_with_cross, kf_predict, kf_update, rts_smooth, GaussianBelief, KalmanTrack,
};
use crate::linalg::normalize_log_weights;
use crate::model::{sample_categorical, Dataset, JmlsModel, ModeSeq};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CpfOptions {
    pub n_particles: usize,
    /// Use the backward information recursion for ancestor sampling. When
    /// false the ancestor weights reduce to `w · π` (ablation only; the
    /// resulting kernel does not target the marginal mode posterior).
    pub rao_blackwellize: bool,
    /// Run the RTS smoother and lag-one recursion on every final particle.
    pub smooth: bool,
}

impl CpfOptions {
    pub fn new(n_particles: usize) -> Self {
        Self {
            n_particles,
            rao_blackwellize: true,
            smooth: true,
        }
    }
}

/// One complete particle: its mode path and the Kalman quantities along it.
#[derive(Debug, Clone)]
pub struct Particle {
    pub path: ModeSeq,
    pub track: KalmanTrack,
}

/// Result of one kernel application.
#[derive(Debug, Clone)]
pub struct KernelOutput {
    /// The draw `s_{1:T}[k+1]`.
    pub reference: ModeSeq,
    /// Index of the particle the reference was taken from.
    pub selected: usize,
    pub particles: Vec<Particle>,
    /// Normalized final weights `w_T`.
    pub weights: Vec<f64>,
    /// `ancestors[t][i]` is the parent at `t - 1` of particle `i` at `t`;
    /// row 0 is the identity.
    pub ancestors: Vec<Vec<usize>>,
}

struct StepStore {
    modes: Vec<Vec<usize>>,
    ancestors: Vec<Vec<usize>>,
    predicted: Vec<Vec<GaussianBelief>>,
    filtered: Vec<Vec<GaussianBelief>>,
    loglik: Vec<Vec<f64>>,
    gains: Vec<Vec<nalgebra::DMatrix<f64>>>,
}

/// One application of the kernel with default options.
pub fn rb_cpf_as<R: Rng + ?Sized>(
    model: &JmlsModel,
    data: &Dataset,
    reference: &[usize],
    n_particles: usize,
    rng: &mut R,
) -> Result<KernelOutput> {
    rb_cpf_as_with(model, data, reference, CpfOptions::new(n_particles), rng)
}

pub fn rb_cpf_as_with<R: Rng + ?Sized>(
    model: &JmlsModel,
    data: &Dataset,
    reference: &[usize],
    opts: CpfOptions,
    rng: &mut R,
) -> Result<KernelOutput> {
    let n = opts.n_particles;
    let t_len = data.len();
    if n < 2 {
        return Err(JmlsError::InvalidArgument(format!(
            "conditional particle filter needs N >= 2, got {n}"
        )));
    }
    if reference.len() != t_len {
        return Err(JmlsError::DimensionMismatch {
            context: "reference length",
            expected: t_len,
            got: reference.len(),
        });
    }
    if let Some(&bad) = reference.iter().find(|&&m| m >= model.dims.k) {
        return Err(JmlsError::InvalidArgument(format!(
            "reference mode {} out of range",
            bad + 1
        )));
    }
    data.check_dims(&model.dims)?;
    let pinned = n - 1;

    let mut modes0: Vec<usize> = (0..pinned)
        .map(|_| sample_categorical(model.p_s1.iter().cloned(), rng))
        .collect();

    let info = if opts.rao_blackwellize {
        backward_recursion(model, reference, data)?
    } else {
        BackwardInfo::zeros(t_len, model.dims.n_z)
    };

    modes0.push(reference[0]);
    let prior = GaussianBelief::new(model.mu1.clone(), model.p1.clone());
    let mut store = StepStore {
        modes: Vec::with_capacity(t_len),
        ancestors: Vec::with_capacity(t_len),
        predicted: Vec::with_capacity(t_len),
        filtered: Vec::with_capacity(t_len),
        loglik: Vec::with_capacity(t_len),
        gains: Vec::with_capacity(t_len),
    };
    let mut filt0 = Vec::with_capacity(n);
    let mut ll0 = Vec::with_capacity(n);
    let mut gain0 = Vec::with_capacity(n);
    for &m in &modes0 {
        let (f, ll, g) = kf_update(&prior, model.mode(m), &data.u[0], &data.y[0])?;
        filt0.push(f);
        ll0.push(ll);
        gain0.push(g);
    }
    let (mut weights, _) = normalize_log_weights(&ll0).ok_or(JmlsError::WeightCollapse { t: 1 })?;
    store.modes.push(modes0);
    store.ancestors.push((0..n).collect());
    store.predicted.push(vec![prior; n]);
    store.filtered.push(filt0);
    store.loglik.push(ll0);
    store.gains.push(gain0);

    for t in 1..t_len {
        let prev_modes = &store.modes[t - 1];
        let prev_filt = &store.filtered[t - 1];

        let resample = WeightedIndex::new(&weights).map_err(|_| JmlsError::WeightCollapse { t })?;
        let mut anc: Vec<usize> = (0..pinned).map(|_| resample.sample(rng)).collect();
        let mut modes_t: Vec<usize> = anc
            .iter()
            .map(|&a| sample_categorical(model.pi.row(prev_modes[a]).iter().cloned(), rng))
            .collect();

        let ref_mode = reference[t];
        let inputs: Vec<AncestorWeightInputs<'_>> = (0..n)
            .map(|i| AncestorWeightInputs::new(&prev_filt[i], prev_modes[i], weights[i].ln()))
            .collect();
        let logw = ancestor_logweights(&info, t, &inputs, model, ref_mode)?;
        let (as_w, _) =
            normalize_log_weights(&logw).ok_or(JmlsError::WeightCollapse { t: t + 1 })?;
        anc.push(sample_categorical(as_w, rng));
        modes_t.push(ref_mode);

        let mut pred_t = Vec::with_capacity(n);
        let mut filt_t = Vec::with_capacity(n);
        let mut ll_t = Vec::with_capacity(n);
        let mut gain_t = Vec::with_capacity(n);
        for i in 0..n {
            let mode = model.mode(modes_t[i]);
            let pred = kf_predict(&prev_filt[anc[i]], mode, &data.u[t - 1])?;
            let (f, ll, g) = kf_update(&pred, mode, &data.u[t], &data.y[t])?;
            pred_t.push(pred);
            filt_t.push(f);
            ll_t.push(ll);
            gain_t.push(g);
        }
        let (w, _) = normalize_log_weights(&ll_t).ok_or(JmlsError::WeightCollapse { t: t + 1 })?;
        weights = w;
        store.modes.push(modes_t);
        store.ancestors.push(anc);
        store.predicted.push(pred_t);
        store.filtered.push(filt_t);
        store.loglik.push(ll_t);
        store.gains.push(gain_t);
    }

    let selected = sample_categorical(weights.iter().cloned(), rng);

    let mut particles = Vec::with_capacity(n);
    for i in 0..n {
        let mut idx = vec![0usize; t_len];
        idx[t_len - 1] = i;
        for t in (1..t_len).rev() {
            idx[t - 1] = store.ancestors[t][idx[t]];
        }
        let path: ModeSeq = (0..t_len).map(|t| store.modes[t][idx[t]]).collect();
        let track = KalmanTrack {
            predicted: (0..t_len)
                .map(|t| store.predicted[t][idx[t]].clone())
                .collect(),
            filtered: (0..t_len)
                .map(|t| store.filtered[t][idx[t]].clone())
                .collect(),
            loglik: (0..t_len).map(|t| store.loglik[t][idx[t]]).collect(),
            gains: (0..t_len).map(|t| store.gains[t][idx[t]].clone()).collect(),
            ..Default::default()
        };
        let track = if opts.smooth {
            finish_with_cross(rts_smooth(track, &path, model)?, &path, model)?
        } else {
            track
        };
        particles.push(Particle { path, track });
    }

    Ok(KernelOutput {
        reference: particles[selected].path.clone(),
        selected,
        particles,
        weights,
        ancestors: store.ancestors,
    })
}

/// Draws a mode sequence from the prior chain `p_s1`, `Pi`.
pub fn sample_prior_modes<R: Rng + ?Sized>(
    model: &JmlsModel,
    t_len: usize,
    rng: &mut R,
) -> ModeSeq {
    let mut s = Vec::with_capacity(t_len);
    if t_len == 0 {
        return s;
    }
    s.push(sample_categorical(model.p_s1.iter().cloned(), rng));
    for t in 1..t_len {
        s.push(sample_categorical(
            model.pi.row(s[t - 1]).iter().cloned(),
            rng,
        ));
    }
    s
}

#[derive(Debug, Clone)]
pub struct McmcOutput {
    /// `s_{1:T}[1..=n_iters]`.
    pub chain: Vec<ModeSeq>,
    /// Ergodic average of the supplied functional over post-burn-in samples.
    pub average: Vec<f64>,
}

/// Iterates the kernel `n_iters` times from a prior draw and averages `h`
/// over the samples after `burn_in`.
pub fn mcmc_smoother<R, H>(
    model: &JmlsModel,
    data: &Dataset,
    n_particles: usize,
    n_iters: usize,
    burn_in: usize,
    rng: &mut R,
    mut h: H,
) -> Result<McmcOutput>
where
    R: Rng + ?Sized,
    H: FnMut(&[usize]) -> Vec<f64>,
{
    if n_iters <= burn_in {
        return Err(JmlsError::InvalidArgument(format!(
            "n_iters ({n_iters}) must exceed burn_in ({burn_in})"
        )));
    }
    let opts = CpfOptions {
        smooth: false,
        ..CpfOptions::new(n_particles)
    };
    let mut current = sample_prior_modes(model, data.len(), rng);
    let mut chain = Vec::with_capacity(n_iters);
    let mut sum: Vec<f64> = Vec::new();
    for k in 1..=n_iters {
        current = rb_cpf_as_with(model, data, &current, opts, rng)?.reference;
        if k > burn_in {
            let v = h(&current);
            if sum.is_empty() {
                sum = vec![0.0; v.len()];
            }
            for (acc, x) in sum.iter_mut().zip(v) {
                *acc += x;
            }
        }
        chain.push(current.clone());
    }
    let count = (n_iters - burn_in) as f64;
    Ok(McmcOutput {
        chain,
        average: sum.into_iter().map(|x| x / count).collect(),
    })
}

/// Posterior mode marginals `p(s_t = n | y)` as a `T × K` row-major vector,
/// usable as the functional for [`mcmc_smoother`].
pub fn mode_indicator(k: usize) -> impl Fn(&[usize]) -> Vec<f64> {
    move |s: &[usize]| {
        let mut v = vec![0.0; s.len() * k];
        for (t, &m) in s.iter().enumerate() {
            v[t * k + m] = 1.0;
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModeParams;
    use nalgebra::{DMatrix, DVector};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy() -> (JmlsModel, Dataset) {
        let model = JmlsModel::new(
            vec![
                ModeParams::scalar(0.9, 1.0, 1.0, 0.0, 0.1, 0.2),
                ModeParams::scalar(-0.5, -1.0, 2.0, 0.0, 0.2, 0.1),
            ],
            DMatrix::from_row_slice(2, 2, &[0.8, 0.2, 0.3, 0.7]),
        );
        let u: Vec<_> = (0..8)
            .map(|t| DVector::from_element(1, (t as f64 * 0.7).sin()))
            .collect();
        let y: Vec<_> = (0..8)
            .map(|t| DVector::from_element(1, (t as f64 * 0.4).cos()))
            .collect();
        (model, Dataset::new(u, y).unwrap())
    }

    #[test]
    fn single_mode_returns_constant_path() {
        let model = JmlsModel::new(
            vec![ModeParams::scalar(0.5, 1.0, 1.0, 0.0, 0.1, 0.1)],
            DMatrix::from_element(1, 1, 1.0),
        );
        let data = Dataset::new(
            vec![DVector::from_element(1, 1.0); 5],
            vec![DVector::from_element(1, 0.3); 5],
        )
        .unwrap();
        for seed in 0..5 {
            let out = rb_cpf_as(
                &model,
                &data,
                &[0; 5],
                3,
                &mut ChaCha8Rng::seed_from_u64(seed),
            )
            .unwrap();
            assert_eq!(out.reference, vec![0; 5]);
        }
    }

    #[test]
    fn weights_normalized_and_paths_consistent() {
        let (model, data) = toy();
        let reference = vec![0, 0, 1, 1, 0, 0, 1, 1];
        let out = rb_cpf_as(
            &model,
            &data,
            &reference,
            4,
            &mut ChaCha8Rng::seed_from_u64(4),
        )
        .unwrap();
        assert!((out.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(out.particles[3].path[7], reference[7]);
        assert_eq!(out.reference, out.particles[out.selected].path);
        for p in &out.particles {
            assert_eq!(p.track.smoothed.len(), 8);
            assert_eq!(p.track.cross.len(), 8);
        }
    }

    #[test]
    fn kernel_is_deterministic_given_seed() {
        let (model, data) = toy();
        let reference = vec![1; 8];
        let a = rb_cpf_as(
            &model,
            &data,
            &reference,
            3,
            &mut ChaCha8Rng::seed_from_u64(9),
        )
        .unwrap();
        let b = rb_cpf_as(
            &model,
            &data,
            &reference,
            3,
            &mut ChaCha8Rng::seed_from_u64(9),
        )
        .unwrap();
        assert_eq!(a.reference, b.reference);
        assert_eq!(a.weights, b.weights);
        assert_eq!(a.ancestors, b.ancestors);
    }

    #[test]
    fn rejects_single_particle() {
        let (model, data) = toy();
        assert!(rb_cpf_as(&model, &data, &[0; 8], 1, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn infeasible_reference_reports_time() {
        let (mut model, data) = toy();
        model.pi = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        model.p_s1 = DVector::from_vec(vec![1.0, 0.0]);
        // Every particle starts in mode 1 and can never leave it, so the
        // reference's switch into mode 2 at t=3 has zero probability.
        let err = rb_cpf_as(
            &model,
            &data,
            &[0, 0, 1, 1, 1, 1, 1, 1],
            3,
            &mut ChaCha8Rng::seed_from_u64(0),
        );
        match err {
            Err(JmlsError::WeightCollapse { t }) => assert_eq!(t, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn smoother_requires_more_iterations_than_burn_in() {
        let (model, data) = toy();
        let r = mcmc_smoother(
            &model,
            &data,
            3,
            5,
            5,
            &mut ChaCha8Rng::seed_from_u64(0),
            mode_indicator(2),
        );
        assert!(r.is_err());
    }
}
