//! Jump Markov linear model: parameter types, validation and simulation.
//!
//! The model is
//!
//! ```text
//! s_{t+1} | s_t ~ Pi[s_t, ·]
//! z_{t+1} = A_{s_{t+1}} z_t + B_{s_{t+1}} u_t + w_t,   w_t ~ N(0, Q_{s_{t+1}})
//! y_t     = C_{s_t} z_t + D_{s_t} u_t + v_t,           v_t ~ N(0, R_{s_t})
//! ```
//!
//! with `s_1 ~ p_s1` and `z_1 ~ N(mu1, P1)`. Modes are 0-based in memory and
//! 1-based in every file and message.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{JmlsError, Result};
use crate::linalg::{min_eigenvalue, psd_sqrt};

/// A mode sequence `s_{1:T}`, 0-based.
pub type ModeSeq = Vec<usize>;

const ROW_SUM_TOL: f64 = 1e-12;
const PSD_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub n_z: usize,
    pub n_y: usize,
    pub n_u: usize,
    pub k: usize,
}

impl Dims {
    pub fn new(n_z: usize, n_y: usize, n_u: usize, k: usize) -> Self {
        Self { n_z, n_y, n_u, k }
    }
}

/// Per-mode system matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeParams {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    /// Process noise covariance, applied on entry into this mode.
    pub q: DMatrix<f64>,
    /// Measurement noise covariance.
    pub r: DMatrix<f64>,
}

impl ModeParams {
    /// Scalar single-input single-output mode.
    pub fn scalar(a: f64, b: f64, c: f64, d: f64, q: f64, r: f64) -> Self {
        let m = |v| DMatrix::from_element(1, 1, v);
        Self {
            a: m(a),
            b: m(b),
            c: m(c),
            d: m(d),
            q: m(q),
            r: m(r),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JmlsModel {
    pub dims: Dims,
    pub modes: Vec<ModeParams>,
    /// Row-stochastic transition matrix, `pi[(m, n)] = p(s_{t+1}=n | s_t=m)`.
    pub pi: DMatrix<f64>,
    pub p_s1: DVector<f64>,
    pub mu1: DVector<f64>,
    pub p1: DMatrix<f64>,
}

impl JmlsModel {
    /// Builds a model with the default initial-state prior: uniform `p_s1`,
    /// `mu1 = 0` and `P1 = I`. Dimensions are read off the first mode.
    pub fn new(modes: Vec<ModeParams>, pi: DMatrix<f64>) -> Self {
        let first = &modes[0];
        let dims = Dims::new(
            first.a.nrows(),
            first.c.nrows(),
            first.b.ncols(),
            modes.len(),
        );
        Self {
            dims,
            pi,
            p_s1: DVector::from_element(dims.k, 1.0 / dims.k as f64),
            mu1: DVector::zeros(dims.n_z),
            p1: DMatrix::identity(dims.n_z, dims.n_z),
            modes,
        }
    }

    pub fn mode(&self, s: usize) -> &ModeParams {
        &self.modes[s]
    }

    pub fn log_pi(&self, from: usize, to: usize) -> f64 {
        self.pi[(from, to)].ln()
    }

    /// Log prior probability of a complete mode sequence.
    pub fn mode_seq_log_prior(&self, s: &[usize]) -> f64 {
        let mut lp = self.p_s1[s[0]].ln();
        for w in s.windows(2) {
            lp += self.log_pi(w[0], w[1]);
        }
        lp
    }

    /// Returns a copy with modes reordered so that mode `n` of the result is
    /// mode `perm[n]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let k = self.dims.k;
        let modes = perm.iter().map(|&p| self.modes[p].clone()).collect();
        let pi = DMatrix::from_fn(k, k, |i, j| self.pi[(perm[i], perm[j])]);
        let p_s1 = DVector::from_fn(k, |i, _| self.p_s1[perm[i]]);
        Self {
            dims: self.dims,
            modes,
            pi,
            p_s1,
            mu1: self.mu1.clone(),
            p1: self.p1.clone(),
        }
    }
}

/// Observed data `u_{1:T}`, `y_{1:T}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub u: Vec<DVector<f64>>,
    pub y: Vec<DVector<f64>>,
}

impl Dataset {
    pub fn new(u: Vec<DVector<f64>>, y: Vec<DVector<f64>>) -> Result<Self> {
        if u.len() != y.len() {
            return Err(JmlsError::DimensionMismatch {
                context: "dataset length",
                expected: y.len(),
                got: u.len(),
            });
        }
        for (t, (ut, yt)) in u.iter().zip(&y).enumerate() {
            if ut.iter().chain(yt.iter()).any(|v| !v.is_finite()) {
                return Err(JmlsError::NonFinite {
                    context: "dataset",
                    t: t + 1,
                });
            }
        }
        Ok(Self { u, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn n_u(&self) -> usize {
        self.u.first().map_or(0, |v| v.len())
    }

    pub fn n_y(&self) -> usize {
        self.y.first().map_or(0, |v| v.len())
    }

    /// Checks that the dataset is shaped for `dims`.
    pub fn check_dims(&self, dims: &Dims) -> Result<()> {
        if self.is_empty() {
            return Err(JmlsError::InvalidArgument("empty dataset".into()));
        }
        for (ut, yt) in self.u.iter().zip(&self.y) {
            if ut.len() != dims.n_u {
                return Err(JmlsError::DimensionMismatch {
                    context: "input dimension",
                    expected: dims.n_u,
                    got: ut.len(),
                });
            }
            if yt.len() != dims.n_y {
                return Err(JmlsError::DimensionMismatch {
                    context: "output dimension",
                    expected: dims.n_y,
                    got: yt.len(),
                });
            }
        }
        Ok(())
    }

    /// The sub-dataset covering `range` (0-based time indices).
    pub fn slice(&self, range: std::ops::Range<usize>) -> Self {
        Self {
            u: self.u[range.clone()].to_vec(),
            y: self.y[range].to_vec(),
        }
    }
}

/// Latent trajectory `(s_{1:T}, z_{1:T})`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub s: ModeSeq,
    pub z: Vec<DVector<f64>>,
}

fn check_shape(
    out: &mut Vec<String>,
    what: &str,
    mode: usize,
    m: &DMatrix<f64>,
    rows: usize,
    cols: usize,
) -> bool {
    if m.nrows() != rows || m.ncols() != cols {
        out.push(format!(
            "{what} of mode {} has shape {}x{}, expected {rows}x{cols}",
            mode + 1,
            m.nrows(),
            m.ncols()
        ));
        return false;
    }
    if m.iter().any(|v| !v.is_finite()) {
        out.push(format!(
            "{what} of mode {} has non-finite entries",
            mode + 1
        ));
        return false;
    }
    true
}

/// Rounds to 12 significant digits so messages show `0.9`, not `0.8999999999999999`.
fn round_sig(v: f64) -> f64 {
    if v == 0.0 || !v.is_finite() {
        return v;
    }
    let scale = 10f64.powi(11 - v.abs().log10().floor() as i32);
    (v * scale).round() / scale
}

fn symmetric_enough(m: &DMatrix<f64>) -> bool {
    (m - m.transpose()).amax() <= PSD_TOL * (1.0 + m.amax())
}

/// Lists every invariant violation of `model`; empty when the model is usable.
pub fn validate_model(model: &JmlsModel) -> Vec<String> {
    let mut out = Vec::new();
    let Dims { n_z, n_y, n_u, k } = model.dims;
    if n_z == 0 {
        out.push("n_z must be at least 1".to_string());
    }
    if n_y == 0 {
        out.push("n_y must be at least 1".to_string());
    }
    if k == 0 {
        out.push("K must be at least 1".to_string());
    }
    if model.modes.len() != k {
        out.push(format!("expected {k} modes, found {}", model.modes.len()));
    }
    for (n, m) in model.modes.iter().enumerate() {
        check_shape(&mut out, "A", n, &m.a, n_z, n_z);
        check_shape(&mut out, "B", n, &m.b, n_z, n_u);
        check_shape(&mut out, "C", n, &m.c, n_y, n_z);
        check_shape(&mut out, "D", n, &m.d, n_y, n_u);
        if check_shape(&mut out, "Q", n, &m.q, n_z, n_z) {
            if !symmetric_enough(&m.q) {
                out.push(format!("Q of mode {} not symmetric", n + 1));
            } else if min_eigenvalue(&m.q) < -PSD_TOL * (1.0 + m.q.amax()) {
                out.push(format!("Q of mode {} not positive semi-definite", n + 1));
            }
        }
        if check_shape(&mut out, "R", n, &m.r, n_y, n_y) {
            if !symmetric_enough(&m.r) {
                out.push(format!("R of mode {} not symmetric", n + 1));
            } else if m.r.clone().cholesky().is_none() {
                out.push(format!("R of mode {} not positive definite", n + 1));
            }
        }
    }
    if model.pi.nrows() != k || model.pi.ncols() != k {
        out.push(format!(
            "Pi has shape {}x{}, expected {k}x{k}",
            model.pi.nrows(),
            model.pi.ncols()
        ));
    } else {
        for i in 0..k {
            let row = model.pi.row(i);
            if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                out.push(format!(
                    "row {} of Pi has negative or non-finite entries",
                    i + 1
                ));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                out.push(format!("row {} of Pi sums to {}", i + 1, round_sig(sum)));
            }
        }
    }
    if model.p_s1.len() != k {
        out.push(format!(
            "p_s1 has length {}, expected {k}",
            model.p_s1.len()
        ));
    } else {
        if model.p_s1.iter().any(|&p| !(p >= 0.0)) {
            out.push("p_s1 has negative or non-finite entries".to_string());
        }
        let sum = model.p_s1.sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            out.push(format!("p_s1 sums to {}", round_sig(sum)));
        }
    }
    if model.mu1.len() != n_z || model.mu1.iter().any(|v| !v.is_finite()) {
        out.push("mu1 malformed".to_string());
    }
    if model.p1.nrows() != n_z || model.p1.ncols() != n_z {
        out.push("P1 has wrong shape".to_string());
    } else if !symmetric_enough(&model.p1) {
        out.push("P1 not symmetric".to_string());
    } else if min_eigenvalue(&model.p1) < -PSD_TOL * (1.0 + model.p1.amax()) {
        out.push("P1 not positive semi-definite".to_string());
    }
    out
}

/// Fails with [`JmlsError::InvalidModel`] when `validate_model` reports anything.
pub fn ensure_valid(model: &JmlsModel) -> Result<()> {
    let v = validate_model(model);
    if v.is_empty() {
        Ok(())
    } else {
        Err(JmlsError::InvalidModel(v))
    }
}

pub(crate) fn sample_categorical<R: Rng + ?Sized>(
    probs: impl IntoIterator<Item = f64>,
    rng: &mut R,
) -> usize {
    let probs: Vec<f64> = probs.into_iter().collect();
    let total: f64 = probs.iter().sum();
    let mut x = rng.random::<f64>() * total;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            if x < p {
                return i;
            }
            x -= p;
            last_positive = i;
        }
    }
    last_positive
}

fn sample_gaussian<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    factor: &DMatrix<f64>,
    rng: &mut R,
) -> DVector<f64> {
    let e = DVector::from_fn(factor.ncols(), |_, _| StandardNormal.sample(rng));
    mean + factor * e
}

/// Draws `(Dataset, Trajectory)` from `model` driven by the inputs `u`.
pub fn simulate<R: Rng + ?Sized>(
    model: &JmlsModel,
    u: &[DVector<f64>],
    rng: &mut R,
) -> Result<(Dataset, Trajectory)> {
    ensure_valid(model)?;
    let dims = model.dims;
    if let Some(bad) = u.iter().find(|ut| ut.len() != dims.n_u) {
        return Err(JmlsError::DimensionMismatch {
            context: "simulate input",
            expected: dims.n_u,
            got: bad.len(),
        });
    }
    let t_len = u.len();
    if t_len == 0 {
        return Err(JmlsError::InvalidArgument("empty input sequence".into()));
    }
    let q_f: Vec<_> = model.modes.iter().map(|m| psd_sqrt(&m.q)).collect();
    let r_f: Vec<_> = model.modes.iter().map(|m| psd_sqrt(&m.r)).collect();

    let mut s = Vec::with_capacity(t_len);
    let mut z = Vec::with_capacity(t_len);
    let mut y = Vec::with_capacity(t_len);

    let mut st = sample_categorical(model.p_s1.iter().cloned(), rng);
    let mut zt = sample_gaussian(&model.mu1, &psd_sqrt(&model.p1), rng);
    for t in 0..t_len {
        let m = model.mode(st);
        let mean_y = &m.c * &zt + &m.d * &u[t];
        y.push(sample_gaussian(&mean_y, &r_f[st], rng));
        s.push(st);
        z.push(zt.clone());
        if t + 1 < t_len {
            st = sample_categorical(model.pi.row(st).iter().cloned(), rng);
            let m = model.mode(st);
            let mean_z = &m.a * &zt + &m.b * &u[t];
            zt = sample_gaussian(&mean_z, &q_f[st], rng);
        }
    }
    Ok((Dataset::new(u.to_vec(), y)?, Trajectory { s, z }))
}

/// Low-pass filtered white noise `u_t = pole * u_{t-1} + e_t`, `u_0 = 0`.
pub fn generate_input<R: Rng + ?Sized>(
    t_len: usize,
    n_u: usize,
    filter_pole: f64,
    rng: &mut R,
) -> Result<Vec<DVector<f64>>> {
    if !(filter_pole.abs() < 1.0) {
        return Err(JmlsError::InvalidArgument(format!(
            "filter pole {filter_pole} must satisfy |pole| < 1"
        )));
    }
    let mut prev = DVector::zeros(n_u);
    let mut out = Vec::with_capacity(t_len);
    for _ in 0..t_len {
        let e = DVector::from_fn(n_u, |_, _| StandardNormal.sample(rng));
        let next = prev * filter_pole + e;
        out.push(next.clone());
        prev = next;
    }
    Ok(out)
}
