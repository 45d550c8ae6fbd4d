//! Brute-force reference computations used to check the recursive algorithms.
//!
//! Everything here is deliberately naive: explicit joint Gaussians, forward
//! filtering over fixed futures, and exhaustive enumeration of mode sequences.

use nalgebra::{DMatrix, DVector};

use crate::error::{JmlsError, Result};
use crate::kalman::{kalman_filter, kf_predict, kf_update, GaussianBelief};
use crate::linalg::{cholesky_jittered, log_det_chol, LN_2PI};
use crate::model::{Dataset, JmlsModel, ModeSeq};

/// Upper bound on `T * n_z` accepted by [`joint_gaussian_oracle`].
pub const JOINT_ORACLE_LIMIT: usize = 400;
/// Upper bound on `K^T` accepted by [`enumerate_mode_posterior`].
pub const ENUMERATION_LIMIT: usize = 1 << 16;

/// Exact posterior of `z_{1:T}` given `s_{1:T}` and `y_{1:T}`.
#[derive(Debug, Clone)]
pub struct JointPosterior {
    pub n_z: usize,
    /// Stacked mean `(z_1, ..., z_T)`.
    pub mean: DVector<f64>,
    /// Full stacked covariance.
    pub cov: DMatrix<f64>,
    /// `log p(y_{1:T} | s_{1:T})`.
    pub loglik: f64,
}

impl JointPosterior {
    pub fn len(&self) -> usize {
        self.mean.len() / self.n_z
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn mean_at(&self, t: usize) -> DVector<f64> {
        self.mean.rows(t * self.n_z, self.n_z).into_owned()
    }

    pub fn cov_at(&self, t: usize) -> DMatrix<f64> {
        self.cov
            .view((t * self.n_z, t * self.n_z), (self.n_z, self.n_z))
            .into_owned()
    }

    /// `Cov(z_t, z_{t-1} | y)`, `t >= 1`.
    pub fn cross_at(&self, t: usize) -> DMatrix<f64> {
        self.cov
            .view((t * self.n_z, (t - 1) * self.n_z), (self.n_z, self.n_z))
            .into_owned()
    }
}

/// Builds the joint Gaussian of `(z_{1:T}, y_{1:T})` for a fixed mode
/// sequence and conditions it on the observed outputs.
pub fn joint_gaussian_oracle(
    model: &JmlsModel,
    s: &[usize],
    data: &Dataset,
) -> Result<JointPosterior> {
    let n_z = model.dims.n_z;
    let n_y = model.dims.n_y;
    let t_len = data.len();
    if t_len * n_z > JOINT_ORACLE_LIMIT {
        return Err(JmlsError::TooLarge {
            context: "joint Gaussian oracle",
            size: t_len * n_z,
            limit: JOINT_ORACLE_LIMIT,
        });
    }
    let nz_all = t_len * n_z;
    let ny_all = t_len * n_y;

    let mut m_z = DVector::zeros(nz_all);
    let mut s_z = DMatrix::zeros(nz_all, nz_all);
    m_z.rows_mut(0, n_z).copy_from(&model.mu1);
    s_z.view_mut((0, 0), (n_z, n_z)).copy_from(&model.p1);
    for t in 1..t_len {
        let mode = model.mode(s[t]);
        let prev_mean = m_z.rows((t - 1) * n_z, n_z).into_owned();
        m_z.rows_mut(t * n_z, n_z)
            .copy_from(&(&mode.a * prev_mean + &mode.b * &data.u[t - 1]));
        // Cov(z_t, z_r) = A_t Cov(z_{t-1}, z_r) for r < t.
        for r in 0..t {
            let prev = s_z.view(((t - 1) * n_z, r * n_z), (n_z, n_z)).into_owned();
            let blk = &mode.a * prev;
            s_z.view_mut((t * n_z, r * n_z), (n_z, n_z)).copy_from(&blk);
            s_z.view_mut((r * n_z, t * n_z), (n_z, n_z))
                .copy_from(&blk.transpose());
        }
        let prev_var = s_z
            .view(((t - 1) * n_z, (t - 1) * n_z), (n_z, n_z))
            .into_owned();
        let var = &mode.a * prev_var * mode.a.transpose() + &mode.q;
        s_z.view_mut((t * n_z, t * n_z), (n_z, n_z)).copy_from(&var);
    }

    let mut h = DMatrix::zeros(ny_all, nz_all);
    let mut m_y = DVector::zeros(ny_all);
    let mut r_all = DMatrix::zeros(ny_all, ny_all);
    let mut y_all = DVector::zeros(ny_all);
    for t in 0..t_len {
        let mode = model.mode(s[t]);
        h.view_mut((t * n_y, t * n_z), (n_y, n_z))
            .copy_from(&mode.c);
        r_all
            .view_mut((t * n_y, t * n_y), (n_y, n_y))
            .copy_from(&mode.r);
        let mz = m_z.rows(t * n_z, n_z).into_owned();
        m_y.rows_mut(t * n_y, n_y)
            .copy_from(&(&mode.c * mz + &mode.d * &data.u[t]));
        y_all.rows_mut(t * n_y, n_y).copy_from(&data.y[t]);
    }
    let s_zy = &s_z * h.transpose();
    let s_y = &h * &s_zy + r_all;
    let chol = cholesky_jittered(&s_y, "joint output covariance")?;
    let resid = y_all - m_y;
    let alpha = chol.solve(&resid);
    let mean = m_z + &s_zy * &alpha;
    let cov = &s_z - &s_zy * chol.solve(&s_zy.transpose());
    let cov = 0.5 * (&cov + cov.transpose());
    let loglik = -0.5 * (ny_all as f64 * LN_2PI + log_det_chol(&chol) + resid.dot(&alpha));
    Ok(JointPosterior {
        n_z,
        mean,
        cov,
        loglik,
    })
}

/// `log p(y_{t:T}, s'_{t:T} | s_{t-1} = prev_mode, filtered belief at t-1)`
/// computed by running a Kalman filter forward over the fixed future modes.
///
/// `t` is the 0-based index of the first future step (`t >= 1`) and
/// `s_future` holds `s'_t, ..., s'_T`.
pub fn ancestor_weight_oracle(
    model: &JmlsModel,
    filtered_prev: &GaussianBelief,
    prev_mode: usize,
    s_future: &[usize],
    data: &Dataset,
    t: usize,
) -> Result<f64> {
    if t == 0 || t + s_future.len() != data.len() {
        return Err(JmlsError::InvalidArgument(
            "future mode sequence must cover t..T with t >= 1".into(),
        ));
    }
    let mut lp = model.log_pi(prev_mode, s_future[0]);
    for w in s_future.windows(2) {
        lp += model.log_pi(w[0], w[1]);
    }
    let mut filt = filtered_prev.clone();
    for (k, &mode_idx) in s_future.iter().enumerate() {
        let tt = t + k;
        let mode = model.mode(mode_idx);
        let pred = kf_predict(&filt, mode, &data.u[tt - 1])?;
        let (f, ll, _) = kf_update(&pred, mode, &data.u[tt], &data.y[tt])?;
        lp += ll;
        filt = f;
    }
    Ok(lp)
}

/// `log p(s_{1:T}, y_{1:T})`.
pub fn log_joint_modes(model: &JmlsModel, s: &[usize], data: &Dataset) -> Result<f64> {
    Ok(model.mode_seq_log_prior(s) + kalman_filter(model, s, data)?.total_loglik())
}

/// Every mode sequence index in lexicographic order (`s_1` most significant).
pub fn mode_sequence_from_index(mut idx: usize, k: usize, t_len: usize) -> ModeSeq {
    let mut s = vec![0; t_len];
    for slot in s.iter_mut().rev() {
        *slot = idx % k;
        idx /= k;
    }
    s
}

pub fn mode_sequence_index(s: &[usize], k: usize) -> usize {
    s.iter().fold(0, |acc, &m| acc * k + m)
}

/// Exact posterior `p(s_{1:T} | y_{1:T})` by enumerating all `K^T` sequences.
/// Entry `i` corresponds to [`mode_sequence_from_index`]`(i, K, T)`.
pub fn enumerate_mode_posterior(model: &JmlsModel, data: &Dataset) -> Result<Vec<f64>> {
    let k = model.dims.k;
    let t_len = data.len();
    let count = (k as f64).powi(t_len as i32);
    if count > ENUMERATION_LIMIT as f64 {
        return Err(JmlsError::TooLarge {
            context: "mode enumeration",
            size: count as usize,
            limit: ENUMERATION_LIMIT,
        });
    }
    let count = count as usize;
    let mut logp = Vec::with_capacity(count);
    for i in 0..count {
        let s = mode_sequence_from_index(i, k, t_len);
        logp.push(log_joint_modes(model, &s, data)?);
    }
    let (p, _) =
        crate::linalg::normalize_log_weights(&logp).ok_or(JmlsError::WeightCollapse { t: 0 })?;
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModeParams;

    #[test]
    fn index_round_trip() {
        for i in 0..27 {
            let s = mode_sequence_from_index(i, 3, 3);
            assert_eq!(mode_sequence_index(&s, 3), i);
        }
        assert_eq!(mode_sequence_from_index(1, 2, 3), vec![0, 0, 1]);
    }

    #[test]
    fn oracle_size_guard() {
        let model = JmlsModel::new(
            vec![ModeParams::scalar(0.5, 0.0, 1.0, 0.0, 1.0, 1.0)],
            DMatrix::from_element(1, 1, 1.0),
        );
        let data =
            Dataset::new(vec![DVector::zeros(1); 401], vec![DVector::zeros(1); 401]).unwrap();
        assert!(matches!(
            joint_gaussian_oracle(&model, &[0; 401], &data),
            Err(JmlsError::TooLarge { .. })
        ));
    }
}
