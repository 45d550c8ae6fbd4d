//! Backward information recursion along a reference mode sequence and the
//! Rao-Blackwellized ancestor weights it induces.
//!
//! For a fixed future `s'_{t+1:T}` the likelihood of `y_{t+1:T}` as a function
//! of `z_t` is proportional to `exp(-½ zᵀ Ω_t z + λ_tᵀ z)`. Integrating that
//! against a particle's filtered Gaussian `N(ẑ, ΓΓᵀ)` gives
//!
//! ```text
//! |Λ|^{-1/2} exp(-½ η),   Λ = Γᵀ Ω Γ + I,
//! η = ẑᵀ Ω ẑ - 2 λᵀ ẑ - ‖Γᵀ(λ - Ω ẑ)‖²_{Λ⁻¹}
//! ```
//!
//! up to a factor shared by all particles.
//!
//! All arrays are indexed by 0-based time.

use nalgebra::{DMatrix, DVector};

use crate::error::{JmlsError, Result};
use crate::kalman::GaussianBelief;
use crate::linalg::{log_det_chol, psd_sqrt, symmetrize};
use crate::model::{Dataset, JmlsModel};

#[derive(Debug, Clone)]
pub struct BackwardInfo {
    /// `Ω_t`: information about `z_t` carried by `y_{t+1:T}`.
    pub omega: Vec<DMatrix<f64>>,
    pub lambda: Vec<DVector<f64>>,
    /// `Ω̂_t = Ω_t + C_tᵀ R_t⁻¹ C_t`.
    pub omega_hat: Vec<DMatrix<f64>>,
    /// `λ̂_t = λ_t + C_tᵀ R_t⁻¹ (y_t - D_t u_t)`.
    pub lambda_hat: Vec<DVector<f64>>,
    /// `M_t = F_tᵀ Ω̂_t F_t + I` for `t >= 1`; identity at `t = 0`.
    pub m_mat: Vec<DMatrix<f64>>,
    /// `m_t = λ̂_{t+1} - Ω̂_{t+1} B_{t+1} u_t` for `t < T - 1`; zero at the end.
    pub m_vec: Vec<DVector<f64>>,
}

impl BackwardInfo {
    /// All-zero information: ancestor weights collapse to `w · π`.
    pub fn zeros(t_len: usize, n_z: usize) -> Self {
        Self {
            omega: vec![DMatrix::zeros(n_z, n_z); t_len],
            lambda: vec![DVector::zeros(n_z); t_len],
            omega_hat: vec![DMatrix::zeros(n_z, n_z); t_len],
            lambda_hat: vec![DVector::zeros(n_z); t_len],
            m_mat: vec![DMatrix::identity(n_z, n_z); t_len],
            m_vec: vec![DVector::zeros(n_z); t_len],
        }
    }

    pub fn len(&self) -> usize {
        self.omega.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omega.is_empty()
    }
}

/// Runs the information recursion backward from `Ω_T = 0`, `λ_T = 0` along
/// the reference `s_prime`.
pub fn backward_recursion(
    model: &JmlsModel,
    s_prime: &[usize],
    data: &Dataset,
) -> Result<BackwardInfo> {
    let t_len = data.len();
    if s_prime.len() != t_len {
        return Err(JmlsError::DimensionMismatch {
            context: "reference length",
            expected: t_len,
            got: s_prime.len(),
        });
    }
    let n_z = model.dims.n_z;
    let mut info = BackwardInfo::zeros(t_len, n_z);
    if t_len == 0 {
        return Ok(info);
    }

    // C^T R^{-1} C and C^T R^{-1} per mode.
    let mut ct_rinv = Vec::with_capacity(model.dims.k);
    let mut q_factor = Vec::with_capacity(model.dims.k);
    for mode in &model.modes {
        let chol = crate::linalg::cholesky_jittered(&mode.r, "measurement covariance")?;
        ct_rinv.push(chol.solve(&mode.c).transpose());
        q_factor.push(psd_sqrt(&mode.q));
    }
    let eye = DMatrix::<f64>::identity(n_z, n_z);

    for t in (0..t_len).rev() {
        let sm = s_prime[t];
        let mode = model.mode(sm);
        let mut oh = &info.omega[t] + &ct_rinv[sm] * &mode.c;
        symmetrize(&mut oh);
        let lh = &info.lambda[t] + &ct_rinv[sm] * (&data.y[t] - &mode.d * &data.u[t]);
        if t > 0 {
            let f = &q_factor[sm];
            let mut m = f.transpose() * &oh * f + &eye;
            symmetrize(&mut m);
            let chol = m.clone().cholesky().ok_or(JmlsError::NotPositiveDefinite {
                context: "backward information M_t",
            })?;
            // G = I - Ω̂ F M^{-1} F^T
            let g = &eye - &oh * f * chol.solve(&f.transpose());
            let m_prev = &lh - &oh * &mode.b * &data.u[t - 1];
            let at_g = mode.a.transpose() * g;
            let mut om = &at_g * &oh * &mode.a;
            symmetrize(&mut om);
            info.lambda[t - 1] = &at_g * &m_prev;
            info.omega[t - 1] = om;
            info.m_vec[t - 1] = m_prev;
            info.m_mat[t] = m;
        }
        info.omega_hat[t] = oh;
        info.lambda_hat[t] = lh;
    }
    Ok(info)
}

/// Per-particle inputs to the ancestor weight at time `t - 1`.
#[derive(Debug, Clone)]
pub struct AncestorWeightInputs<'a> {
    pub filtered: &'a GaussianBelief,
    /// `Γ` with `Γ Γᵀ = P_{f;t-1}`.
    pub factor: DMatrix<f64>,
    pub prev_mode: usize,
    pub log_weight: f64,
}

impl<'a> AncestorWeightInputs<'a> {
    pub fn new(filtered: &'a GaussianBelief, prev_mode: usize, log_weight: f64) -> Self {
        Self {
            factor: psd_sqrt(&filtered.cov),
            filtered,
            prev_mode,
            log_weight,
        }
    }
}

/// `-½ log|Λ| - ½ η` for one particle against `(Ω, λ)`.
pub fn future_log_factor(
    omega: &DMatrix<f64>,
    lambda: &DVector<f64>,
    mean: &DVector<f64>,
    factor: &DMatrix<f64>,
) -> Result<f64> {
    let n = factor.ncols();
    let gt = factor.transpose();
    let mut big_lambda = &gt * omega * factor + DMatrix::<f64>::identity(n, n);
    symmetrize(&mut big_lambda);
    let chol = big_lambda
        .cholesky()
        .ok_or(JmlsError::NotPositiveDefinite {
            context: "ancestor weight Λ",
        })?;
    let om_mean = omega * mean;
    let b = &gt * (lambda - &om_mean);
    let eta = mean.dot(&om_mean) - 2.0 * lambda.dot(mean) - b.dot(&chol.solve(&b));
    Ok(-0.5 * log_det_chol(&chol) - 0.5 * eta)
}

/// Unnormalized ancestor log-weights for the reference particle at time `t`
/// (0-based, `t >= 1`), whose mode is `ref_mode = s'_t`.
pub fn ancestor_logweights(
    info: &BackwardInfo,
    t: usize,
    particles: &[AncestorWeightInputs<'_>],
    model: &JmlsModel,
    ref_mode: usize,
) -> Result<Vec<f64>> {
    if t == 0 || t > info.len() {
        return Err(JmlsError::InvalidArgument(format!(
            "ancestor weights need 1 <= t <= T, got t={t}"
        )));
    }
    let omega = &info.omega[t - 1];
    let lambda = &info.lambda[t - 1];
    particles
        .iter()
        .map(|p| {
            let lpi = model.log_pi(p.prev_mode, ref_mode);
            if lpi == f64::NEG_INFINITY || p.log_weight == f64::NEG_INFINITY {
                return Ok(f64::NEG_INFINITY);
            }
            let lw =
                p.log_weight + lpi + future_log_factor(omega, lambda, &p.filtered.mean, &p.factor)?;
            if lw.is_nan() || lw == f64::INFINITY {
                return Err(JmlsError::NonFinite {
                    context: "ancestor weight",
                    t: t + 1,
                });
            }
            Ok(lw)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModeParams;

    fn toy(c: f64) -> (JmlsModel, Dataset) {
        let model = JmlsModel::new(
            vec![
                ModeParams::scalar(0.8, 1.0, c, 0.5, 0.2, 0.3),
                ModeParams::scalar(-0.4, 0.5, 2.0 * c, 0.0, 0.1, 0.2),
            ],
            DMatrix::from_row_slice(2, 2, &[0.7, 0.3, 0.4, 0.6]),
        );
        let u: Vec<_> = (0..6)
            .map(|t| DVector::from_element(1, (t as f64).cos()))
            .collect();
        let y: Vec<_> = (0..6)
            .map(|t| DVector::from_element(1, 0.3 * t as f64 - 0.5))
            .collect();
        (model, Dataset::new(u, y).unwrap())
    }

    #[test]
    fn terminal_conditions() {
        let (model, data) = toy(1.5);
        let s = [0, 1, 1, 0, 0, 1];
        let info = backward_recursion(&model, &s, &data).unwrap();
        let last = data.len() - 1;
        assert_eq!(info.omega[last], DMatrix::zeros(1, 1));
        assert_eq!(info.lambda[last], DVector::zeros(1));
        let m = model.mode(s[last]);
        let expected_oh = m.c[(0, 0)].powi(2) / m.r[(0, 0)];
        let expected_lh =
            m.c[(0, 0)] / m.r[(0, 0)] * (data.y[last][0] - m.d[(0, 0)] * data.u[last][0]);
        assert!((info.omega_hat[last][(0, 0)] - expected_oh).abs() < 1e-12);
        assert!((info.lambda_hat[last][0] - expected_lh).abs() < 1e-12);
        for om in &info.omega {
            assert!(crate::linalg::min_eigenvalue(om) >= -1e-12);
        }
    }

    #[test]
    fn blind_sensor_carries_no_information() {
        let (model, data) = toy(0.0);
        let info = backward_recursion(&model, &[1, 0, 1, 0, 1, 1], &data).unwrap();
        for t in 0..data.len() {
            assert_eq!(info.omega[t][(0, 0)], 0.0);
            assert_eq!(info.lambda[t][0], 0.0);
        }
    }

    #[test]
    fn zero_information_reduces_to_transition_weights() {
        let (model, _) = toy(1.0);
        let info = BackwardInfo::zeros(6, 1);
        let b1 = GaussianBelief::new(
            DVector::from_element(1, 0.3),
            DMatrix::from_element(1, 1, 0.5),
        );
        let b2 = GaussianBelief::new(
            DVector::from_element(1, -2.0),
            DMatrix::from_element(1, 1, 3.0),
        );
        let inputs = vec![
            AncestorWeightInputs::new(&b1, 0, 0.2f64.ln()),
            AncestorWeightInputs::new(&b2, 1, 0.8f64.ln()),
        ];
        let lw = ancestor_logweights(&info, 3, &inputs, &model, 1).unwrap();
        assert!((lw[0] - (0.2f64 * 0.3).ln()).abs() < 1e-14);
        assert!((lw[1] - (0.8f64 * 0.6).ln()).abs() < 1e-14);
    }

    #[test]
    fn identical_particles_get_identical_weights() {
        let (model, data) = toy(1.0);
        let info = backward_recursion(&model, &[0, 0, 1, 1, 0, 1], &data).unwrap();
        let b = GaussianBelief::new(
            DVector::from_element(1, 0.7),
            DMatrix::from_element(1, 1, 0.4),
        );
        let inputs = vec![
            AncestorWeightInputs::new(&b, 1, -1.0),
            AncestorWeightInputs::new(&b, 1, -1.0),
        ];
        let lw = ancestor_logweights(&info, 2, &inputs, &model, 1).unwrap();
        assert_eq!(lw[0], lw[1]);
    }

    #[test]
    fn factor_reproduces_covariance() {
        let b = GaussianBelief::new(
            DVector::zeros(2),
            DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]),
        );
        let inp = AncestorWeightInputs::new(&b, 0, 0.0);
        assert!((&inp.factor * inp.factor.transpose() - &b.cov).amax() < 1e-10);
    }
}
