//! Mode-conditional Kalman filtering and RTS smoothing.
//!
//! Given a fixed mode sequence the model is linear-Gaussian, so the
//! continuous state is handled exactly. Time indices are 0-based here:
//! `predicted[0]` is the prior `N(mu1, P1)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{JmlsError, Result};
use crate::linalg::{cholesky_jittered, log_det_chol, symmetrize, LN_2PI};
use crate::model::{Dataset, JmlsModel, ModeParams};

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianBelief {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Self {
        Self { mean, cov }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Filter (and optionally smoother) output along one mode sequence.
#[derive(Debug, Clone, Default)]
pub struct KalmanTrack {
    pub predicted: Vec<GaussianBelief>,
    pub filtered: Vec<GaussianBelief>,
    /// `log p(y_t | s_{1:t}, y_{1:t-1})` for each `t`.
    pub loglik: Vec<f64>,
    /// Kalman gain used at each update.
    pub gains: Vec<DMatrix<f64>>,
    pub smoothed: Vec<GaussianBelief>,
    /// `J_t`, length `T - 1`.
    pub smoother_gains: Vec<DMatrix<f64>>,
    /// `cross[t] = Cov(z_t, z_{t-1} | y_{1:T})` for `t >= 1`; `cross[0]` is zero.
    pub cross: Vec<DMatrix<f64>>,
}

impl KalmanTrack {
    pub fn len(&self) -> usize {
        self.filtered.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filtered.is_empty()
    }

    pub fn total_loglik(&self) -> f64 {
        self.loglik.iter().sum()
    }

    pub fn is_smoothed(&self) -> bool {
        !self.smoothed.is_empty() && self.smoothed.len() == self.filtered.len()
    }
}

fn dim_check(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(JmlsError::DimensionMismatch {
            context,
            expected,
            got,
        });
    }
    Ok(())
}

/// One-step prediction through mode `mode` with input `u`.
pub fn kf_predict(
    belief: &GaussianBelief,
    mode: &ModeParams,
    u: &DVector<f64>,
) -> Result<GaussianBelief> {
    dim_check("predict state", mode.a.ncols(), belief.dim())?;
    dim_check("predict input", mode.b.ncols(), u.len())?;
    let mean = &mode.a * &belief.mean + &mode.b * u;
    let mut cov = &mode.a * &belief.cov * mode.a.transpose() + &mode.q;
    symmetrize(&mut cov);
    Ok(GaussianBelief { mean, cov })
}

/// Measurement update. Returns the posterior, `log N(e; 0, S)` and the gain.
pub fn kf_update(
    belief: &GaussianBelief,
    mode: &ModeParams,
    u: &DVector<f64>,
    y: &DVector<f64>,
) -> Result<(GaussianBelief, f64, DMatrix<f64>)> {
    dim_check("update state", mode.c.ncols(), belief.dim())?;
    dim_check("update input", mode.d.ncols(), u.len())?;
    dim_check("update output", mode.c.nrows(), y.len())?;
    let n_z = belief.dim();
    let innovation = y - &mode.c * &belief.mean - &mode.d * u;
    let pct = &belief.cov * mode.c.transpose();
    let mut s = &mode.c * &pct + &mode.r;
    symmetrize(&mut s);
    let chol = cholesky_jittered(&s, "innovation covariance")?;
    // K = P C^T S^{-1}  =>  K^T = S^{-1} C P
    let gain = chol.solve(&pct.transpose()).transpose();
    let mean = &belief.mean + &gain * &innovation;
    let i_kc = DMatrix::identity(n_z, n_z) - &gain * &mode.c;
    let mut cov = &i_kc * &belief.cov * i_kc.transpose() + &gain * &mode.r * gain.transpose();
    symmetrize(&mut cov);
    let quad = innovation.dot(&chol.solve(&innovation));
    let ll = -0.5 * (y.len() as f64 * LN_2PI + log_det_chol(&chol) + quad);
    Ok((GaussianBelief { mean, cov }, ll, gain))
}

/// `log N(y; C m + D u, C P Cᵀ + R)` for a one-step predictive belief.
pub fn predictive_loglik(
    belief_pred: &GaussianBelief,
    mode: &ModeParams,
    u: &DVector<f64>,
    y: &DVector<f64>,
) -> Result<f64> {
    dim_check("predictive output", mode.c.nrows(), y.len())?;
    let e = y - &mode.c * &belief_pred.mean - &mode.d * u;
    let mut s = &mode.c * &belief_pred.cov * mode.c.transpose() + &mode.r;
    symmetrize(&mut s);
    crate::linalg::gaussian_logpdf(&e, &s)
}

/// Forward filter along the fixed mode sequence `s`.
pub fn kalman_filter(model: &JmlsModel, s: &[usize], data: &Dataset) -> Result<KalmanTrack> {
    let prior = GaussianBelief::new(model.mu1.clone(), model.p1.clone());
    kalman_filter_from(model, s, data, prior)
}

/// Forward filter starting from an arbitrary predicted belief for the first
/// time step of `data`.
pub fn kalman_filter_from(
    model: &JmlsModel,
    s: &[usize],
    data: &Dataset,
    first_predicted: GaussianBelief,
) -> Result<KalmanTrack> {
    dim_check("mode sequence length", data.len(), s.len())?;
    let t_len = data.len();
    let mut track = KalmanTrack {
        predicted: Vec::with_capacity(t_len),
        filtered: Vec::with_capacity(t_len),
        loglik: Vec::with_capacity(t_len),
        gains: Vec::with_capacity(t_len),
        ..Default::default()
    };
    let mut pred = first_predicted;
    for t in 0..t_len {
        if t > 0 {
            pred = kf_predict(&track.filtered[t - 1], model.mode(s[t]), &data.u[t - 1])?;
        }
        let (filt, ll, gain) = kf_update(&pred, model.mode(s[t]), &data.u[t], &data.y[t])?;
        track.predicted.push(pred.clone());
        track.filtered.push(filt);
        track.loglik.push(ll);
        track.gains.push(gain);
    }
    Ok(track)
}

/// Backward RTS pass; fills `smoothed` and `smoother_gains`.
pub fn rts_smooth(mut track: KalmanTrack, s: &[usize], model: &JmlsModel) -> Result<KalmanTrack> {
    let t_len = track.len();
    dim_check("smoother mode sequence", t_len, s.len())?;
    if t_len == 0 {
        return Ok(track);
    }
    let mut smoothed = vec![track.filtered[t_len - 1].clone(); t_len];
    let mut gains = vec![DMatrix::zeros(0, 0); t_len.saturating_sub(1)];
    for t in (0..t_len - 1).rev() {
        let filt = &track.filtered[t];
        let pred_next = &track.predicted[t + 1];
        let a_next = &model.mode(s[t + 1]).a;
        let chol = cholesky_jittered(&pred_next.cov, "predicted covariance")?;
        // J = P_f A^T P_p^{-1}  =>  J^T = P_p^{-1} A P_f
        let j = chol.solve(&(a_next * &filt.cov)).transpose();
        let mean = &filt.mean + &j * (&smoothed[t + 1].mean - &pred_next.mean);
        let mut cov = &filt.cov + &j * (&smoothed[t + 1].cov - &pred_next.cov) * j.transpose();
        symmetrize(&mut cov);
        smoothed[t] = GaussianBelief { mean, cov };
        gains[t] = j;
    }
    track.smoothed = smoothed;
    track.smoother_gains = gains;
    Ok(track)
}

/// Lag-one smoothed cross-covariances `Cov(z_t, z_{t-1} | y_{1:T})`.
///
/// Initialized at the final time with `(I - K_T C_T) A_T P_{f;T-1}` and run
/// backward with
/// `P_{t,t-1} = P_{f;t} J_{t-1}ᵀ + J_t (P_{t+1,t} - A_{t+1} P_{f;t}) J_{t-1}ᵀ`.
pub fn lag_one_cross_cov(
    track: &KalmanTrack,
    s: &[usize],
    model: &JmlsModel,
) -> Result<Vec<DMatrix<f64>>> {
    let t_len = track.len();
    if !track.is_smoothed() {
        return Err(JmlsError::InvalidArgument(
            "lag-one covariances need a smoothed track".into(),
        ));
    }
    let n_z = model.dims.n_z;
    let mut cross = vec![DMatrix::zeros(n_z, n_z); t_len];
    if t_len < 2 {
        return Ok(cross);
    }
    let last = t_len - 1;
    let mode_last = model.mode(s[last]);
    let i_kc = DMatrix::identity(n_z, n_z) - &track.gains[last] * &mode_last.c;
    cross[last] = i_kc * &mode_last.a * &track.filtered[last - 1].cov;
    for t in (1..last).rev() {
        let j_t = &track.smoother_gains[t];
        let j_prev_t = track.smoother_gains[t - 1].transpose();
        let a_next = &model.mode(s[t + 1]).a;
        let p_f = &track.filtered[t].cov;
        cross[t] = p_f * &j_prev_t + j_t * (&cross[t + 1] - a_next * p_f) * &j_prev_t;
    }
    Ok(cross)
}

/// Filter, smooth and attach lag-one cross-covariances in one go.
pub fn smooth_sequence(model: &JmlsModel, s: &[usize], data: &Dataset) -> Result<KalmanTrack> {
    let track = rts_smooth(kalman_filter(model, s, data)?, s, model)?;
    finish_with_cross(track, s, model)
}

pub(crate) fn finish_with_cross(
    mut track: KalmanTrack,
    s: &[usize],
    model: &JmlsModel,
) -> Result<KalmanTrack> {
    track.cross = lag_one_cross_cov(&track, s, model)?;
    Ok(track)
}
