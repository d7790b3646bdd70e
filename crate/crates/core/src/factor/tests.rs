use super::*;
use crate::gg::IndexPartition;
use crate::numerics::{gauss_hermite_expectation, sigmoid};
use crate::testing::{random_factor_model, random_unit_rows};
use proptest::prelude::*;
use rand::Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn zero_model(p_x: usize, q: usize, p_z: usize) -> FactorModel {
    let mut ones = DMatrix::zeros(p_x, p_z);
    ones.column_mut(0).fill(1.0);
    let mut gones = DMatrix::zeros(q, p_z);
    gones.column_mut(0).fill(1.0);
    FactorModel::new(DVector::zeros(p_x), DVector::from_element(p_x, 1.0), DVector::zeros(q), ones, gones, 0.0).unwrap()
}

fn trapezoid(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
    let h = (hi - lo) / n as f64;
    (0..=n)
        .map(|i| {
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            w * f(lo + i as f64 * h)
        })
        .sum::<f64>()
        * h
}

/// Ising pmf with bias `b` and coupling `J`, `p(y) ∝ exp(bᵀy + yᵀJy)`.
fn ising_logpmf(b: &DVector<f64>, coupling: &DMatrix<f64>) -> Vec<f64> {
    let q = b.len();
    let e: Vec<f64> = BitMask::all(q)
        .unwrap()
        .map(|y| {
            let v = y.to_vector();
            b.dot(&v) + (v.transpose() * coupling * &v)[(0, 0)]
        })
        .collect();
    let z = logsumexp(&e);
    e.iter().map(|v| v - z).collect()
}

fn random_orthogonal<R: Rng>(r: &mut R, k: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(k, k, |_, _| r.sample::<f64, _>(StandardNormal));
    a.qr().q()
}

fn random_row<R: Rng>(r: &mut R, m: &FactorModel) -> (DVector<f64>, BitMask) {
    let x = DVector::from_fn(m.p_x(), |_, _| r.random_range(-2.0..2.0));
    let y = BitMask::from_bits_unchecked(r.random_range(0..1u32 << m.q()), m.q());
    (x, y)
}

#[test]
fn conditional_trivial_cases() {
    let m = zero_model(2, 3, 1);
    let z = DVector::from_element(1, 0.7);
    let x = DVector::from_column_slice(&[0.1, 0.2]);
    for bits in 0..8 {
        let y = BitMask::from_bits_unchecked(bits, 3);
        let v = m.conditional_logpdf(&x, y, &z).unwrap();
        let expect = -(LN_2PI) - 0.5 * (0.01 + 0.04) + 3.0 * 0.5f64.ln();
        assert!((v - expect).abs() < 1e-14);
    }
    let m = random_factor_model(&mut rng(1), 0, 2, 2);
    let z = DVector::zeros(2);
    let v = m.conditional_logpdf(&DVector::zeros(0), BitMask::from_bits_unchecked(0b01, 2), &z).unwrap();
    let expect = sigmoid(m.b()[0]).ln() + (1.0 - sigmoid(m.b()[1])).ln();
    assert!((v - expect).abs() < 1e-14);
}

#[test]
fn conditional_normalizes_on_grid() {
    let mut r = rng(2);
    let m = random_factor_model(&mut r, 1, 2, 1);
    for _ in 0..5 {
        let z = DVector::from_element(1, r.random_range(-2.0..2.0));
        let center = m.mu_x()[0] + (m.w() * &z)[0];
        let sd = m.psi()[0].sqrt();
        let mut total = 0.0;
        for y in BitMask::all(2).unwrap() {
            total += trapezoid(
                |x| m.conditional_logpdf(&DVector::from_element(1, x), y, &z).unwrap().exp(),
                center - 14.0 * sd,
                center + 14.0 * sd,
                4000,
            );
        }
        assert!((total - 1.0).abs() < 1e-12);
    }
}

#[test]
fn conditional_stable_for_large_arguments() {
    let m = FactorModel::new(
        DVector::zeros(0),
        DVector::zeros(0),
        DVector::from_column_slice(&[700.0, -700.0]),
        DMatrix::zeros(0, 1),
        DMatrix::from_element(2, 1, 1.0),
        0.0,
    )
    .unwrap();
    let v = m.conditional_logpdf(&DVector::zeros(0), BitMask::from_bits_unchecked(0b01, 2), &DVector::zeros(1)).unwrap();
    assert!(v.abs() < 1e-12);
    let v = m.conditional_logpdf(&DVector::zeros(0), BitMask::from_bits_unchecked(0b10, 2), &DVector::zeros(1)).unwrap();
    assert!((v + 1400.0).abs() < 1e-9);
}

#[test]
fn prior_without_interaction_is_standard_normal() {
    let mut m = zero_model(1, 2, 2);
    m.b = DVector::from_column_slice(&[1.5, -0.3]);
    let z = DVector::from_column_slice(&[0.4, -1.1]);
    let expect = -LN_2PI - 0.5 * z.norm_squared();
    assert!((m.prior_logpdf(&z).unwrap() - expect).abs() < 1e-14);
}

#[test]
fn prior_single_binary_weights() {
    let m = random_factor_model(&mut rng(3), 1, 1, 2);
    let lw = m.prior_log_weights().unwrap();
    let g = m.g();
    let eta = m.b()[0] + 0.5 * g.row(0).norm_squared();
    assert!((lw[1].exp() - sigmoid(eta)).abs() < 1e-15);
    assert!((lw[0].exp() + lw[1].exp() - 1.0).abs() < 1e-15);
}

#[test]
fn prior_integrates_to_one() {
    let m = random_factor_model(&mut rng(4), 2, 2, 1);
    let total = trapezoid(|z| m.prior_logpdf(&DVector::from_element(1, z)).unwrap().exp(), -15.0, 15.0, 6000);
    assert!((total - 1.0).abs() < 1e-12);
}

#[test]
fn observed_binary_only_is_ising() {
    let m = random_factor_model(&mut rng(5), 0, 2, 2);
    let g = m.g();
    let oracle = ising_logpmf(m.b(), &(&g * g.transpose() * 0.5));
    for y in BitMask::all(2).unwrap() {
        let v = m.observed_logpdf(&DVector::zeros(0), y).unwrap();
        assert!((v - oracle[y.bits() as usize]).abs() < 1e-12);
    }
}

#[test]
fn observed_without_loadings_factorizes() {
    let mut m = zero_model(2, 2, 1);
    m.b = DVector::from_column_slice(&[0.3, -1.2]);
    m.mu_x = DVector::from_column_slice(&[1.0, -1.0]);
    m.psi = DVector::from_column_slice(&[0.5, 2.0]);
    m.cache = OnceLock::new();
    let x = DVector::from_column_slice(&[0.2, 0.1]);
    let y = BitMask::from_bits_unchecked(0b10, 2);
    let mut expect = (1.0 - sigmoid(0.3)).ln() + sigmoid(-1.2).ln();
    for j in 0..2 {
        let r = x[j] - m.mu_x[j];
        expect += -0.5 * (LN_2PI + m.psi[j].ln()) - 0.5 * r * r / m.psi[j];
    }
    assert!((m.observed_logpdf(&x, y).unwrap() - expect).abs() < 1e-14);
}

#[test]
fn observed_matches_quadrature_over_z() {
    let m = random_factor_model(&mut rng(6), 1, 1, 1);
    let lw = m.prior_log_weights().unwrap();
    let shifts = m.cache().unwrap().shifts.clone();
    let id = SymMatrix::identity(1);
    for (xv, bits) in [(0.3, 0), (-1.2, 1), (2.0, 1)] {
        let x = DVector::from_element(1, xv);
        let y = BitMask::from_bits_unchecked(bits, 1);
        let mut dens = 0.0;
        for (k, w) in lw.iter().enumerate() {
            let mean = shifts.column(k).into_owned();
            let e = gauss_hermite_expectation(|z| m.conditional_logpdf(&x, y, z).unwrap().exp(), &mean, &id, 60).unwrap();
            dens += w.exp() * e;
        }
        let v = m.observed_logpdf(&x, y).unwrap();
        assert!((v.exp() - dens).abs() < 1e-6 * dens.max(1.0), "{} vs {}", v.exp(), dens);
    }
}

#[test]
fn missing_reduces_to_complete() {
    let m = random_factor_model(&mut rng(7), 3, 2, 2);
    let x = DVector::from_column_slice(&[0.3, -0.1, 1.0]);
    let y = BitMask::from_bits_unchecked(0b10, 2);
    let full = m.observed_logpdf(&x, y).unwrap();
    let xo: Vec<Option<f64>> = x.iter().map(|v| Some(*v)).collect();
    let yo: Vec<Option<bool>> = y.to_bools().into_iter().map(Some).collect();
    assert!((m.observed_logpdf_missing(&xo, &yo).unwrap() - full).abs() < 1e-12);

    // one bit missing
    let one = m.observed_logpdf_missing(&xo, &[None, Some(true)]).unwrap();
    let a = m.observed_logpdf(&x, BitMask::from_bits_unchecked(0b10, 2)).unwrap();
    let b = m.observed_logpdf(&x, BitMask::from_bits_unchecked(0b11, 2)).unwrap();
    assert!((one - logsumexp(&[a, b])).abs() < 1e-12);

    // every bit missing: Gaussian mixture over x_O only
    let mixture = m.observed_logpdf_missing(&[Some(0.3), None, Some(1.0)], &[None, None]).unwrap();
    let gg = m.to_gg().unwrap();
    // continuous block is (x0, x1, x2, z0, z1)
    let part = IndexPartition::from_sets(5, 2, &[], &[1, 3, 4], &[0, 2], &[], &[0, 1], &[]).unwrap();
    let oracle = gg.marginal_logpdf(&part, &DVector::from_column_slice(&[0.3, 1.0]), &[]).unwrap();
    assert!((mixture - oracle).abs() < 1e-9);

    assert!(matches!(m.observed_logpdf_missing(&[None; 3], &[None, None]), Err(Error::NothingObserved)));
}

#[test]
fn posterior_trivial_cases() {
    let m = zero_model(2, 2, 2);
    let post = m.posterior(&DVector::from_column_slice(&[1.0, 2.0]), BitMask::from_bits_unchecked(3, 2)).unwrap();
    assert!(post.mean.amax() < 1e-15);
    assert!((post.cov - DMatrix::identity(2, 2)).amax() < 1e-15);

    let m = random_factor_model(&mut rng(8), 0, 3, 2);
    let y = BitMask::from_bits_unchecked(0b101, 3);
    let post = m.posterior(&DVector::zeros(0), y).unwrap();
    let expect = m.g().transpose() * y.to_vector();
    assert!((post.mean - expect).amax() < 1e-15);
}

fn gaussian_logpdf(z: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    GaussianKernel::new(cov, "cov").unwrap().log_density(&(z - mean))
}

#[test]
fn posterior_satisfies_bayes_rule() {
    let mut r = rng(9);
    let m = random_factor_model(&mut r, 3, 3, 2);
    for _ in 0..20 {
        let (x, y) = random_row(&mut r, &m);
        let z = DVector::from_fn(2, |_, _| r.random_range(-2.0..2.0));
        let post = m.posterior(&x, y).unwrap();
        let lhs = m.conditional_logpdf(&x, y, &z).unwrap() + m.prior_logpdf(&z).unwrap() - m.observed_logpdf(&x, y).unwrap();
        let rhs = gaussian_logpdf(&z, &post.mean, &post.cov);
        assert!((lhs - rhs).abs() < 1e-10);
    }
}

#[test]
fn posterior_missing_averages_completions() {
    let m = random_factor_model(&mut rng(10), 2, 2, 2);
    let x = [Some(0.5), None];
    let y = [Some(true), None];
    let got = m.posterior_missing(&x, &y).unwrap();
    // oracle through the embedded joint: E[z | x0, y0]
    let gg = m.to_gg().unwrap();
    let t = gg.table().unwrap();
    let sigma = gg.sigma().as_matrix();
    let (mut num, mut den) = (DVector::zeros(2), 0.0);
    for bits in [0b01usize, 0b11] {
        let mean = t.means.column(bits);
        let w = t.log_weights[bits].exp() * (-(0.5 - mean[0]).powi(2) / (2.0 * sigma[(0, 0)])).exp();
        // E[z | x0] within the component
        let ez = DVector::from_fn(2, |i, _| mean[2 + i] + sigma[(2 + i, 0)] / sigma[(0, 0)] * (0.5 - mean[0]));
        num += ez * w;
        den += w;
    }
    assert!((got.mean - num / den).amax() < 1e-12);
}

#[test]
fn fix_rotation_single_factor() {
    let m = random_factor_model(&mut rng(11), 3, 2, 1);
    let (rot, s) = m.fix_rotation().unwrap();
    assert!((s.rotation[(0, 0)].abs() - 1.0).abs() < 1e-15);
    assert_eq!(s.contribution, vec![1.0]);
    let x = DVector::from_column_slice(&[0.1, 0.2, 0.3]);
    let y = BitMask::from_bits_unchecked(2, 2);
    assert!((rot.observed_logpdf(&x, y).unwrap() - m.observed_logpdf(&x, y).unwrap()).abs() < 1e-12);
    assert!(rot.rotation_fixed());
}

#[test]
fn fix_rotation_orthogonal_columns_is_signed_permutation() {
    // M columns already orthogonal: rows on the coordinate axes
    let w = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, -1.0]);
    let g = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
    let m = FactorModel::new(DVector::zeros(3), DVector::from_element(3, 1.0), DVector::zeros(1), w, g, 2.0).unwrap();
    let (_, s) = m.fix_rotation().unwrap();
    assert!((s.eigenvalues[0] - 6.0).abs() < 1e-12);
    assert!((s.eigenvalues[1] - 2.0).abs() < 1e-12);
    for v in s.rotation.iter() {
        assert!(v.abs() < 1e-12 || (v.abs() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn fix_rotation_invariance_and_structure() {
    let mut r = rng(12);
    let m = random_factor_model(&mut r, 4, 3, 3);
    let (rot, s) = m.fix_rotation().unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (x, y) = random_row(&mut r, &m);
        worst = worst.max((rot.observed_logpdf(&x, y).unwrap() - m.observed_logpdf(&x, y).unwrap()).abs());
    }
    assert!(worst < 1e-10, "{worst}");
    let mr = &s.m * &s.rotation;
    let d = mr.transpose() * &mr;
    for i in 0..3 {
        assert!((d[(i, i)] - s.eigenvalues[i]).abs() < 1e-10);
        for j in 0..3 {
            if i != j {
                assert!(d[(i, j)].abs() < 1e-8);
            }
        }
    }
    assert!(s.contribution.windows(2).all(|w| w[0] >= w[1]));
    assert!((s.contribution.iter().sum::<f64>() - 1.0).abs() < 1e-14);
    assert_eq!(*s.cumulative.last().unwrap(), 1.0);
}

#[test]
fn fix_rotation_zero_norm_is_degenerate() {
    let m = zero_model(2, 1, 2);
    assert!(matches!(m.fix_rotation(), Err(Error::Degenerate(_))));
}

#[test]
fn contribution_ratio_examples() {
    let (p, c) = contribution_ratios(&[3.0, 1.0]).unwrap();
    assert_eq!(p, vec![0.75, 0.25]);
    assert_eq!(c, vec![0.75, 1.0]);
    assert_eq!(contribution_ratios(&[2.5]).unwrap().0, vec![1.0]);
    assert!(contribution_ratios(&[0.0, 0.0]).is_err());
}

#[test]
fn contribution_from_either_gram_matrix() {
    let mut r = rng(13);
    let m = DMatrix::from_fn(6, 3, |_, _| r.random_range(-1.0..1.0));
    let small = sym_eigen_desc(&SymMatrix::new(symmetrize(m.transpose() * &m)).unwrap());
    let big = sym_eigen_desc(&SymMatrix::new(symmetrize(&m * m.transpose())).unwrap());
    let (p1, _) = contribution_ratios(small.values.as_slice()).unwrap();
    let big_vals: Vec<f64> = big.values.iter().take(3).copied().collect();
    let (p2, _) = contribution_ratios(&big_vals).unwrap();
    for (a, b) in p1.iter().zip(&p2) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn moments_match_embedding() {
    let m = random_factor_model(&mut rng(14), 2, 2, 2);
    let direct = m.moments().unwrap();
    let gg = m.to_gg().unwrap().moments().unwrap();
    assert!((&direct.mean_x - gg.mean_x.rows(0, 2)).amax() < 1e-12);
    assert!((&direct.cov_xx - gg.cov_xx.view((0, 0), (2, 2))).amax() < 1e-12);
    assert!((&direct.cov_xy - gg.cov_xy.rows(0, 2)).amax() < 1e-12);
    assert!((&direct.cov_yy - &gg.cov_yy).amax() < 1e-12);
}

#[test]
fn json_round_trip() {
    let m = random_factor_model(&mut rng(15), 3, 2, 2);
    let back = FactorModel::from_json(&m.to_json().unwrap()).unwrap();
    assert_eq!(m.to_file(), back.to_file());
}

#[test]
fn rejects_invalid_parameters() {
    let bad_psi = FactorModel::new(
        DVector::zeros(1),
        DVector::from_element(1, 0.0),
        DVector::zeros(0),
        DMatrix::from_element(1, 1, 1.0),
        DMatrix::zeros(0, 1),
        1.0,
    );
    assert!(bad_psi.is_err());
    let zero_row = FactorModel::new(
        DVector::zeros(1),
        DVector::from_element(1, 1.0),
        DVector::zeros(0),
        DMatrix::zeros(1, 1),
        DMatrix::zeros(0, 1),
        1.0,
    );
    assert!(zero_row.is_err());
}

#[test]
fn sampling_matches_moments() {
    let m = random_factor_model(&mut rng(16), 2, 2, 1);
    let n = 100_000;
    let draws = m.sample(n, 3).unwrap();
    let mom = m.moments().unwrap();
    for j in 0..2 {
        let mean = draws.iter().map(|(x, _)| x[j]).sum::<f64>() / n as f64;
        assert!((mean - mom.mean_x[j]).abs() < 4.0 * (mom.cov_xx[(j, j)] / n as f64).sqrt());
        let freq = draws.iter().filter(|(_, y)| y.get(j)).count() as f64 / n as f64;
        assert!((freq - mom.mean_y[j]).abs() < 4.0 * (mom.cov_yy[(j, j)] / n as f64).sqrt());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn likelihood_invariant_under_rotation(seed in 0u64..100_000, k in 1usize..=3) {
        let mut r = rng(seed);
        let m = random_factor_model(&mut r, 3, 2, k);
        let rot = random_orthogonal(&mut r, k);
        let turned = FactorModel::new(
            m.mu_x().clone(), m.psi().clone(), m.b().clone(),
            m.w_tilde() * &rot, m.g_tilde() * &rot, m.c(),
        ).unwrap();
        for _ in 0..5 {
            let (x, y) = random_row(&mut r, &m);
            prop_assert!((turned.observed_logpdf(&x, y).unwrap() - m.observed_logpdf(&x, y).unwrap()).abs() < 1e-10);
        }
        let (fixed, _) = m.fix_rotation().unwrap();
        for row in fixed.w_tilde().row_iter().chain(fixed.g_tilde().row_iter()) {
            prop_assert!((row.norm() - 1.0).abs() < ROW_NORM_TOL);
        }
    }

    #[test]
    fn covariance_structure(seed in 0u64..100_000, p_x in 1usize..=5, k in 1usize..=3) {
        let mut r = rng(seed);
        let m = random_factor_model(&mut r, p_x, 2, k);
        let sx = m.sigma_x();
        prop_assert!(sx.clone().cholesky().is_some());
        let w = m.w();
        let ww = &w * w.transpose();
        let decomposed = DMatrix::from_diagonal(&ww.diagonal()) / m.c() + &ww;
        prop_assert!((decomposed - &sx).amax() < 1e-10);
        let post = m.posterior(&DVector::zeros(p_x), BitMask::from_bits_unchecked(0, 2)).unwrap();
        let post2 = m.posterior(&DVector::from_element(p_x, 1.0), BitMask::from_bits_unchecked(3, 2)).unwrap();
        prop_assert!((&post.cov - &post2.cov).amax() < 1e-15);
        let eig = sym_eigen_desc(&SymMatrix::new(post.cov.clone()).unwrap());
        prop_assert!(eig.values[0] <= 1.0 + 1e-12);
        prop_assert!(eig.values[eig.values.len() - 1] > 0.0);
    }

    #[test]
    fn binary_only_model_is_ising(seed in 0u64..100_000, q in 1usize..=8, k in 1usize..=3) {
        let m = random_factor_model(&mut rng(seed), 0, q, k);
        let g = m.g();
        let oracle = ising_logpmf(m.b(), &(&g * g.transpose() * 0.5));
        for y in BitMask::all(q).unwrap() {
            prop_assert!((m.observed_logpdf(&DVector::zeros(0), y).unwrap() - oracle[y.bits() as usize]).abs() < 1e-10);
        }
    }

    #[test]
    fn embedding_reproduces_observed_density(seed in 0u64..100_000, p_x in 1usize..=3, q in 1usize..=3, k in 1usize..=2) {
        let mut r = rng(seed);
        let m = random_factor_model(&mut r, p_x, q, k);
        let gg = m.to_gg().unwrap();
        let xs: Vec<usize> = (0..p_x).collect();
        let zs: Vec<usize> = (p_x..p_x + k).collect();
        let ys: Vec<usize> = (0..q).collect();
        let part = IndexPartition::from_sets(p_x + k, q, &[], &zs, &xs, &[], &[], &ys).unwrap();
        for _ in 0..3 {
            let (x, y) = random_row(&mut r, &m);
            let a = m.observed_logpdf(&x, y).unwrap();
            let b = gg.marginal_logpdf(&part, &x, &y.to_bools()).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}

#[test]
fn unit_rows_helper() {
    let m = random_unit_rows(&mut rng(0), 4, 3);
    for row in m.row_iter() {
        assert!((row.norm() - 1.0).abs() < 1e-15);
    }
}
