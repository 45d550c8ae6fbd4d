#![allow(dead_code)]

use jmls_core::model::generate_input;
use jmls_core::{simulate, Dataset, JmlsModel, ModeParams};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_matrix<R: Rng>(
    rng: &mut R,
    rows: usize,
    cols: usize,
    lo: f64,
    hi: f64,
) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(lo..hi))
}

/// `L Lᵀ + floor·I` with `L` uniform in `[-1, 1]`.
pub fn random_spd<R: Rng>(rng: &mut R, n: usize, scale: f64, floor: f64) -> DMatrix<f64> {
    let l = uniform_matrix(rng, n, n, -1.0, 1.0);
    (&l * l.transpose()) * scale + DMatrix::identity(n, n) * floor
}

/// Matrix with spectral norm at most `radius`.
pub fn random_stable<R: Rng>(rng: &mut R, n: usize, radius: f64) -> DMatrix<f64> {
    let a = uniform_matrix(rng, n, n, -1.0, 1.0);
    let norm = a.clone().svd(false, false).singular_values.max().max(1e-12);
    a * (radius / norm)
}

pub fn random_pi<R: Rng>(rng: &mut R, k: usize) -> DMatrix<f64> {
    let mut pi = DMatrix::from_fn(k, k, |_, _| rng.random_range(0.05..1.0));
    for i in 0..k {
        pi[(i, i)] += 1.0;
        let s: f64 = pi.row(i).sum();
        for j in 0..k {
            pi[(i, j)] /= s;
        }
    }
    pi
}

pub fn random_model<R: Rng>(
    rng: &mut R,
    n_z: usize,
    n_y: usize,
    n_u: usize,
    k: usize,
) -> JmlsModel {
    let modes = (0..k)
        .map(|_| {
            let radius = rng.random_range(0.2..0.95);
            ModeParams {
                a: random_stable(rng, n_z, radius),
                b: uniform_matrix(rng, n_z, n_u, -1.0, 1.0),
                c: uniform_matrix(rng, n_y, n_z, -2.0, 2.0),
                d: uniform_matrix(rng, n_y, n_u, -0.5, 0.5),
                q: random_spd(rng, n_z, 0.1, 0.02),
                r: random_spd(rng, n_y, 0.1, 0.02),
            }
        })
        .collect();
    let mut model = JmlsModel::new(modes, random_pi(rng, k));
    let mut p = DVector::from_fn(k, |_, _| rng.random_range(0.1..1.0));
    p /= p.sum();
    model.p_s1 = p;
    model.mu1 = DVector::from_fn(n_z, |_, _| rng.random_range(-1.0..1.0));
    model.p1 = random_spd(rng, n_z, 0.5, 0.1);
    model
}

pub fn random_data<R: Rng>(rng: &mut R, model: &JmlsModel, t_len: usize) -> Dataset {
    let u = generate_input(t_len, model.dims.n_u, 0.5, rng).unwrap();
    simulate(model, &u, rng).unwrap().0
}

pub fn random_modes<R: Rng>(rng: &mut R, k: usize, t_len: usize) -> Vec<usize> {
    (0..t_len).map(|_| rng.random_range(0..k)).collect()
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}
