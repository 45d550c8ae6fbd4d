//! Closed-form maximization of the stochastic-approximation objective.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::stats::{SmoothedStats, StatsLayout};
use crate::error::{JmlsError, Result};
use crate::linalg::{cholesky_jittered, log_det_chol, psd_project, LN_2PI};
use crate::model::{JmlsModel, ModeParams};

/// Eigenvalue floor (relative to the trace) applied to updated Q and R.
pub const PSD_FLOOR_REL: f64 = 1e-12;
/// Occupancy below `OCCUPANCY_EPS_REL * T` leaves a mode's parameters untouched.
pub const OCCUPANCY_EPS_REL: f64 = 1e-6;

/// Which occupancy count divides the process-noise residual.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OccupancyDivisor {
    /// Transitions (`t >= 2`) for Q, measurements (`t >= 1`) for R.
    #[default]
    Split,
    /// One occupancy count (`t >= 1`) for both.
    Shared,
}

impl OccupancyDivisor {
    fn q_count(self, stats: &SmoothedStats, n: usize) -> f64 {
        match self {
            OccupancyDivisor::Split => stats.s2q[n],
            OccupancyDivisor::Shared => stats.s2m[n],
        }
    }
}

#[derive(Debug, Clone)]
pub struct MStepOutput {
    pub model: JmlsModel,
    /// Modes whose parameters were carried over (0-based).
    pub starved: Vec<usize>,
}

fn block(m: &DMatrix<f64>, r: usize, c: usize, nr: usize, nc: usize) -> DMatrix<f64> {
    m.view((r, c), (nr, nc)).into_owned()
}

/// Solves the weighted least-squares problem behind one regression block:
/// returns `Cross · Gram⁻¹` and `(Own - Cross Gram⁻¹ Crossᵀ) / count`.
fn regress(
    own: &DMatrix<f64>,
    cross: &DMatrix<f64>,
    gram: &DMatrix<f64>,
    count: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if gram.nrows() == 0 {
        return Ok((
            DMatrix::zeros(own.nrows(), 0),
            psd_project(&(own / count), PSD_FLOOR_REL),
        ));
    }
    let chol = cholesky_jittered(gram, "regression Gram matrix")?;
    let coef = chol.solve(&cross.transpose()).transpose();
    let resid = own - &coef * cross.transpose();
    Ok((coef, psd_project(&(resid / count), PSD_FLOOR_REL)))
}

/// Parameters maximizing `⟨stats, η(θ)⟩`. Initial-state quantities and any
/// starved mode are copied from `prev`.
pub fn m_step(
    stats: &SmoothedStats,
    prev: &JmlsModel,
    divisor: OccupancyDivisor,
) -> Result<MStepOutput> {
    let dims = prev.dims;
    let lay = stats.layout;
    if lay != StatsLayout::new(&dims) || stats.k() != dims.k {
        return Err(JmlsError::InvalidArgument(
            "statistics do not match model dimensions".into(),
        ));
    }
    let k = dims.k;
    let (n_z, n_u, n_y) = (dims.n_z, dims.n_u, dims.n_y);
    let p = lay.regressor_dim();
    let horizon = stats.s2m.sum();
    let eps = OCCUPANCY_EPS_REL * horizon.max(1.0);

    let mut model = prev.clone();
    for n in 0..k {
        let row_sum: f64 = stats.s1.row(n).sum();
        if row_sum > 0.0 {
            for m in 0..k {
                model.pi[(n, m)] = stats.s1[(n, m)] / row_sum;
            }
        }
    }

    let mut starved = Vec::new();
    for n in 0..k {
        let q_count = divisor.q_count(stats, n);
        let r_count = stats.s2m[n];
        if q_count < eps || r_count < eps {
            starved.push(n);
            continue;
        }
        let s3 = &stats.s3[n];
        let oq = lay.transition_regressor();
        let oy = lay.y();
        let om = lay.measurement_regressor();
        let phi = block(s3, 0, 0, n_z, n_z);
        let psi = block(s3, 0, oq, n_z, p);
        let sigma = block(s3, oq, oq, p, p);
        let omega = block(s3, oy, oy, n_y, n_y);
        let lam = block(s3, oy, om, n_y, p);
        let xi = block(s3, om, om, p, p);

        let fitted = regress(&phi, &psi, &sigma, q_count)
            .and_then(|(ab, q)| regress(&omega, &lam, &xi, r_count).map(|(cd, r)| (ab, q, cd, r)));
        let Ok((ab, q, cd, r)) = fitted else {
            starved.push(n);
            continue;
        };
        model.modes[n] = ModeParams {
            a: ab.columns(0, n_z).into_owned(),
            b: ab.columns(n_z, n_u).into_owned(),
            c: cd.columns(0, n_z).into_owned(),
            d: cd.columns(n_z, n_u).into_owned(),
            q,
            r,
        };
    }
    Ok(MStepOutput { model, starved })
}

/// Residual selector `[I, -A, -B]` (or `[I, -C, -D]`).
fn residual_map(lead: usize, m1: &DMatrix<f64>, m2: &DMatrix<f64>) -> DMatrix<f64> {
    let cols = lead + m1.ncols() + m2.ncols();
    let mut l = DMatrix::zeros(lead, cols);
    l.view_mut((0, 0), (lead, lead)).fill_with_identity();
    l.view_mut((0, lead), (lead, m1.ncols())).copy_from(&(-m1));
    l.view_mut((0, lead + m1.ncols()), (lead, m2.ncols()))
        .copy_from(&(-m2));
    l
}

/// `Tr(Σ⁻¹ L S Lᵀ)` and `log|Σ|`.
fn quadratic_term(noise: &DMatrix<f64>, l: &DMatrix<f64>, s: &DMatrix<f64>) -> Result<(f64, f64)> {
    let chol = noise
        .clone()
        .cholesky()
        .ok_or(JmlsError::NotPositiveDefinite {
            context: "objective noise covariance",
        })?;
    let lsl = l * s * l.transpose();
    Ok((chol.solve(&lsl).trace(), log_det_chol(&chol)))
}

/// The objective `⟨stats, η(θ)⟩` without additive constants:
///
/// `Σ S¹ log π - ½ Σ_n [S²q log|Q| + S²m log|R| + Tr(H_n S³_n)]`
///
/// where `H_n` is the residual quadratic form of mode `n`.
pub fn q_hat_value(
    stats: &SmoothedStats,
    theta: &JmlsModel,
    divisor: OccupancyDivisor,
) -> Result<f64> {
    let dims = theta.dims;
    let lay = stats.layout;
    let k = dims.k;
    let mut value = 0.0;
    for n in 0..k {
        for m in 0..k {
            let c = stats.s1[(n, m)];
            if c != 0.0 {
                value += c * theta.pi[(n, m)].ln();
            }
        }
    }
    let td = lay.transition_dim();
    let md = lay.n_y + lay.regressor_dim();
    for n in 0..k {
        let mode = theta.mode(n);
        let s3 = &stats.s3[n];
        let s_q = block(s3, 0, 0, td, td);
        let s_m = block(s3, lay.y(), lay.y(), md, md);
        let (tr_q, ld_q) =
            quadratic_term(&mode.q, &residual_map(dims.n_z, &mode.a, &mode.b), &s_q)?;
        let (tr_r, ld_r) =
            quadratic_term(&mode.r, &residual_map(dims.n_y, &mode.c, &mode.d), &s_m)?;
        value -= 0.5 * (divisor.q_count(stats, n) * ld_q + stats.s2m[n] * ld_r + tr_q + tr_r);
    }
    Ok(value)
}

/// The Gaussian normalizing constants dropped by [`q_hat_value`].
pub fn q_hat_constant(stats: &SmoothedStats, divisor: OccupancyDivisor) -> f64 {
    let lay = stats.layout;
    (0..stats.k())
        .map(|n| {
            -0.5 * LN_2PI
                * (divisor.q_count(stats, n) * lay.n_z as f64 + stats.s2m[n] * lay.n_y as f64)
        })
        .sum()
}

/// Row-normalizes a nonnegative matrix; zero rows become uniform.
pub fn row_normalize(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for i in 0..m.nrows() {
        let s: f64 = m.row(i).sum();
        for j in 0..m.ncols() {
            out[(i, j)] = if s > 0.0 {
                m[(i, j)] / s
            } else {
                1.0 / m.ncols() as f64
            };
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Dims;
    use crate::psaem::stats::SuffStats;
    use nalgebra::DVector;

    fn model_k2() -> JmlsModel {
        JmlsModel::new(
            vec![
                ModeParams::scalar(0.5, 1.0, 1.0, 0.0, 0.1, 0.1),
                ModeParams::scalar(0.2, 1.0, 1.0, 0.0, 0.1, 0.1),
            ],
            DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]),
        )
    }

    #[test]
    fn pi_is_row_normalized_counts() {
        let mut s = SuffStats::zeros(&Dims::new(1, 1, 1, 2));
        s.s1 = DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 2.0, 2.0]);
        // Both modes starve: only Pi moves.
        let out = m_step(&s, &model_k2(), OccupancyDivisor::Split).unwrap();
        assert_eq!(
            out.model.pi,
            DMatrix::from_row_slice(2, 2, &[0.75, 0.25, 0.5, 0.5])
        );
        assert_eq!(out.starved, vec![0, 1]);
        assert_eq!(out.model.modes, model_k2().modes);
    }

    #[test]
    fn noise_free_regression_is_exact() {
        // z_t = 0.7 z_{t-1} + 0.3 u_{t-1}, y_t = 2 z_t + 0.1 noise
        let dims = Dims::new(1, 1, 1, 1);
        let mut s = SuffStats::zeros(&dims);
        let mut z = 1.0;
        let mut zs = vec![z];
        let us: Vec<f64> = (0..40).map(|t| ((t * 7 % 11) as f64 - 5.0) / 3.0).collect();
        for t in 1..40 {
            z = 0.7 * z + 0.3 * us[t - 1];
            zs.push(z);
        }
        for t in 0..40 {
            let noise = if t % 2 == 0 { 0.1 } else { -0.1 };
            let y = 2.0 * zs[t] + noise;
            let xi = if t == 0 {
                DVector::from_vec(vec![0.0, 0.0, 0.0, y, zs[t], us[t]])
            } else {
                DVector::from_vec(vec![zs[t], zs[t - 1], us[t - 1], y, zs[t], us[t]])
            };
            s.s3[0] += &xi * xi.transpose();
            s.s2m[0] += 1.0;
            if t > 0 {
                s.s2q[0] += 1.0;
                s.s1[(0, 0)] += 1.0;
            }
        }
        let prev = JmlsModel::new(
            vec![ModeParams::scalar(0.1, 0.1, 1.0, 0.0, 1.0, 1.0)],
            DMatrix::from_element(1, 1, 1.0),
        );
        let out = m_step(&s, &prev, OccupancyDivisor::Split).unwrap();
        let m = &out.model.modes[0];
        assert!((m.a[(0, 0)] - 0.7).abs() < 1e-10);
        assert!((m.b[(0, 0)] - 0.3).abs() < 1e-10);
        assert!(m.q[(0, 0)].abs() < 1e-10);
        assert!(out.starved.is_empty());
    }

    #[test]
    fn scaling_q_costs_log_det() {
        let dims = Dims::new(2, 1, 1, 1);
        let mut s = SuffStats::zeros(&dims);
        s.s2q[0] = 10.0;
        s.s2m[0] = 11.0;
        s.s1[(0, 0)] = 10.0;
        let mode = ModeParams {
            a: DMatrix::identity(2, 2) * 0.3,
            b: DMatrix::zeros(2, 1),
            c: DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            d: DMatrix::zeros(1, 1),
            q: DMatrix::identity(2, 2) * 0.2,
            r: DMatrix::identity(1, 1) * 0.4,
        };
        let theta = JmlsModel::new(vec![mode.clone()], DMatrix::from_element(1, 1, 1.0));
        let mut scaled = theta.clone();
        let c = 3.0;
        scaled.modes[0].q *= c;
        let v0 = q_hat_value(&s, &theta, OccupancyDivisor::Split).unwrap();
        let v1 = q_hat_value(&s, &scaled, OccupancyDivisor::Split).unwrap();
        assert!((v0 - v1 - 0.5 * 10.0 * 2.0 * c.ln()).abs() < 1e-12);
    }

    #[test]
    fn row_normalize_handles_zero_rows() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 3.0]);
        assert_eq!(
            row_normalize(&m),
            DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.25, 0.75])
        );
    }
}
