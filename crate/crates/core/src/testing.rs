//! Random parameter generators shared by unit, integration and acceptance
//! tests and the benchmarks. Not part of the stable API.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::factor::FactorModel;
use crate::gg::GGParams;
use crate::data::{MixedDataset, Schema};
use crate::numerics::{BitMask, SymMatrix};

pub fn random_spd<R: Rng>(rng: &mut R, n: usize, ridge: f64) -> SymMatrix {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-0.7..0.7));
    SymMatrix::new(&a * a.transpose() + DMatrix::identity(n, n) * ridge).expect("symmetric by construction")
}

/// Valid parameters through the diagonally dominant `Lambda` chart.
pub fn random_gg<R: Rng>(rng: &mut R, p: usize, q: usize) -> GGParams {
    let mu = DVector::from_fn(p, |_, _| rng.random_range(-1.0..1.0));
    let sigma = random_spd(rng, p, 0.5);
    let a = DVector::from_fn(q, |_, _| rng.random_range(-1.0..1.0));
    let off = DMatrix::from_fn(q, q, |_, _| rng.random_range(-0.5..0.5));
    let g = DMatrix::from_fn(q, p, |_, _| rng.random_range(-1.0..1.0));
    GGParams::from_diag_dominant(mu, sigma, &a, &off, g).expect("valid by construction")
}

pub fn random_unit_rows<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    let mut m = DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0));
    for mut r in m.row_iter_mut() {
        let n = r.norm();
        r /= n;
    }
    m
}

pub fn random_factor_model<R: Rng>(rng: &mut R, p_x: usize, q: usize, p_z: usize) -> FactorModel {
    let mu = DVector::from_fn(p_x, |_, _| rng.random_range(-1.0..1.0));
    let psi = DVector::from_fn(p_x, |_, _| rng.random_range(0.3..2.0));
    let b = DVector::from_fn(q, |_, _| rng.random_range(-1.0..1.0));
    let w = random_unit_rows(rng, p_x, p_z);
    let g = random_unit_rows(rng, q, p_z);
    let c = rng.random_range(0.2..1.5);
    FactorModel::new(mu, psi, b, w, g, c).expect("valid by construction")
}

/// Rows from `draws` with each cell dropped with probability `rate` (every
/// row keeps at least one observed cell) and random counts in `1..=max_count`.
pub fn dataset_with_missing<R: Rng>(
    rng: &mut R,
    draws: &[(DVector<f64>, BitMask)],
    rate: f64,
    max_count: u64,
) -> MixedDataset {
    let p_x = draws[0].0.len();
    let q = draws[0].1.width();
    let mut xs = Vec::with_capacity(draws.len());
    let mut ys = Vec::with_capacity(draws.len());
    for (x, y) in draws {
        let keep = rng.random_range(0..p_x + q);
        let mut xr: Vec<Option<f64>> = x.iter().map(|v| Some(*v)).collect();
        let mut yr: Vec<Option<bool>> = y.to_bools().into_iter().map(Some).collect();
        for (j, cell) in xr.iter_mut().enumerate() {
            if j != keep && rng.random_bool(rate) {
                *cell = None;
            }
        }
        for (j, cell) in yr.iter_mut().enumerate() {
            if p_x + j != keep && rng.random_bool(rate) {
                *cell = None;
            }
        }
        xs.push(xr);
        ys.push(yr);
    }
    let counts = (0..draws.len()).map(|_| rng.random_range(1..=max_count)).collect();
    MixedDataset::from_rows_counted(Schema::default_names(p_x, q), xs, ys, counts).expect("consistent rows")
}
