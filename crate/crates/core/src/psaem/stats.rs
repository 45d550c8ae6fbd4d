//! Sufficient statistics of the complete-data log-likelihood.
//!
//! Each mode `n` owns a `d × d` second-moment matrix over the stacked vector
//!
//! ```text
//! ξ_t = ( z_t | z_{t-1}, u_{t-1} | y_t | z_t, u_t ),   d = 3 n_z + 2 n_u + n_y
//! ```
//!
//! The first two blocks describe the transition into `z_t` and are summed over
//! `t = 2..T`; the last two describe the measurement and are summed over
//! `t = 1..T`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cpf::KernelOutput;
use crate::error::{JmlsError, Result};
use crate::model::{Dataset, Dims};

/// Block offsets inside `ξ_t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsLayout {
    pub n_z: usize,
    pub n_u: usize,
    pub n_y: usize,
}

impl StatsLayout {
    pub fn new(dims: &Dims) -> Self {
        Self {
            n_z: dims.n_z,
            n_u: dims.n_u,
            n_y: dims.n_y,
        }
    }

    pub fn dim(&self) -> usize {
        3 * self.n_z + 2 * self.n_u + self.n_y
    }

    /// Width of the regressor blocks `[z, u]`.
    pub fn regressor_dim(&self) -> usize {
        self.n_z + self.n_u
    }

    pub fn z_next(&self) -> usize {
        0
    }

    pub fn transition_regressor(&self) -> usize {
        self.n_z
    }

    pub fn y(&self) -> usize {
        2 * self.n_z + self.n_u
    }

    pub fn measurement_regressor(&self) -> usize {
        2 * self.n_z + self.n_u + self.n_y
    }

    /// Size of the transition part `(z_t | z_{t-1}, u_{t-1})`.
    pub fn transition_dim(&self) -> usize {
        2 * self.n_z + self.n_u
    }
}

/// The statistic triple `(S¹, S², S³)`, with `S²` split into measurement and
/// transition occupancies.
///
/// The same type holds the stochastic-approximation average; see
/// [`SmoothedStats`].
#[derive(Debug, Clone, PartialEq)]
pub struct SuffStats {
    pub layout: StatsLayout,
    /// `S¹[(n, m)]`: weighted count of transitions `n → m`.
    pub s1: DMatrix<f64>,
    /// Weighted occupancy over `t = 1..T`.
    pub s2m: DVector<f64>,
    /// Weighted occupancy over `t = 2..T`.
    pub s2q: DVector<f64>,
    pub s3: Vec<DMatrix<f64>>,
}

/// Running average `𝕊^k = (1 - γ_k) 𝕊^{k-1} + γ_k S^k`.
pub type SmoothedStats = SuffStats;

impl SuffStats {
    pub fn zeros(dims: &Dims) -> Self {
        let layout = StatsLayout::new(dims);
        let d = layout.dim();
        Self {
            layout,
            s1: DMatrix::zeros(dims.k, dims.k),
            s2m: DVector::zeros(dims.k),
            s2q: DVector::zeros(dims.k),
            s3: vec![DMatrix::zeros(d, d); dims.k],
        }
    }

    pub fn k(&self) -> usize {
        self.s2m.len()
    }

    fn same_shape(&self, other: &Self) -> bool {
        self.layout == other.layout
            && self.s1.shape() == other.s1.shape()
            && self.s2m.len() == other.s2m.len()
            && self.s2q.len() == other.s2q.len()
            && self.s3.len() == other.s3.len()
    }

    /// Accumulates `weight` times the statistics of one smoothed path.
    pub fn accumulate_path(
        &mut self,
        weight: f64,
        path: &[usize],
        track: &crate::kalman::KalmanTrack,
        data: &Dataset,
    ) -> Result<()> {
        let lay = self.layout;
        let (n_z, n_u, n_y) = (lay.n_z, lay.n_u, lay.n_y);
        let d = lay.dim();
        let mut xi = DVector::<f64>::zeros(d);
        let mut cov = DMatrix::<f64>::zeros(d, d);
        for t in 0..path.len() {
            let n = path[t];
            let sm = &track.smoothed[t];
            self.s2m[n] += weight;
            xi.fill(0.0);
            cov.fill(0.0);

            let oy = lay.y();
            let om = lay.measurement_regressor();
            xi.rows_mut(oy, n_y).copy_from(&data.y[t]);
            xi.rows_mut(om, n_z).copy_from(&sm.mean);
            xi.rows_mut(om + n_z, n_u).copy_from(&data.u[t]);
            cov.view_mut((om, om), (n_z, n_z)).copy_from(&sm.cov);

            if t > 0 {
                let prev = &track.smoothed[t - 1];
                let cross = &track.cross[t];
                let nm = path[t - 1];
                self.s1[(nm, n)] += weight;
                self.s2q[n] += weight;
                let oq = lay.transition_regressor();
                xi.rows_mut(0, n_z).copy_from(&sm.mean);
                xi.rows_mut(oq, n_z).copy_from(&prev.mean);
                xi.rows_mut(oq + n_z, n_u).copy_from(&data.u[t - 1]);
                let cross_t = cross.transpose();
                // Covariance of the stacked vector: z_t appears in blocks 1
                // and 5, z_{t-1} in block 2.
                cov.view_mut((0, 0), (n_z, n_z)).copy_from(&sm.cov);
                cov.view_mut((0, om), (n_z, n_z)).copy_from(&sm.cov);
                cov.view_mut((om, 0), (n_z, n_z)).copy_from(&sm.cov);
                cov.view_mut((oq, oq), (n_z, n_z)).copy_from(&prev.cov);
                cov.view_mut((0, oq), (n_z, n_z)).copy_from(cross);
                cov.view_mut((om, oq), (n_z, n_z)).copy_from(cross);
                cov.view_mut((oq, 0), (n_z, n_z)).copy_from(&cross_t);
                cov.view_mut((oq, om), (n_z, n_z)).copy_from(&cross_t);
            }
            let s3 = &mut self.s3[n];
            s3.ger(weight, &xi, &xi, 1.0);
            *s3 += weight * &cov;
        }
        Ok(())
    }
}

/// Sufficient statistics of one kernel output, using every particle with its
/// final weight.
pub fn compute_suffstats(
    kernel_out: &KernelOutput,
    data: &Dataset,
    dims: &Dims,
) -> Result<SuffStats> {
    let mut stats = SuffStats::zeros(dims);
    for (i, (p, &w)) in kernel_out
        .particles
        .iter()
        .zip(&kernel_out.weights)
        .enumerate()
    {
        if !p.track.is_smoothed() || p.track.cross.len() != p.path.len() {
            return Err(JmlsError::MissingSmoothed(i));
        }
        if w == 0.0 {
            continue;
        }
        stats.accumulate_path(w, &p.path, &p.track, data)?;
    }
    Ok(stats)
}

/// `(1 - γ) prev + γ new`.
pub fn sa_update(prev: &SmoothedStats, new: &SuffStats, gamma: f64) -> Result<SmoothedStats> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(JmlsError::InvalidArgument(format!(
            "step size {gamma} outside (0, 1]"
        )));
    }
    if !prev.same_shape(new) {
        return Err(JmlsError::InvalidArgument(
            "statistics shape mismatch".into(),
        ));
    }
    let keep = 1.0 - gamma;
    Ok(SuffStats {
        layout: new.layout,
        s1: &prev.s1 * keep + &new.s1 * gamma,
        s2m: &prev.s2m * keep + &new.s2m * gamma,
        s2q: &prev.s2q * keep + &new.s2q * gamma,
        s3: prev
            .s3
            .iter()
            .zip(&new.s3)
            .map(|(p, n)| p * keep + n * gamma)
            .collect(),
    })
}
