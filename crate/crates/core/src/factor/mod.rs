//! Factor analysis for mixed continuous and binary observations.
//!
//! Given latent factors `z` (dimension `p_z`),
//!
//! ```text
//! x | z ~ N(mu_x + W z, Psi)
//! y_j | z ~ Bernoulli(sigmoid(b_j + g_jᵀ z))
//! ```
//!
//! with loadings constrained to `W = Psi^{1/2} W̃ sqrt(c)` and `G = G̃ sqrt(c)`,
//! where every row of `W̃` and `G̃` has unit norm. The prior on `z` is the
//! Gaussian mixture `sum_y pi_y N(z | Gᵀy, I)` with
//! `pi_y ∝ exp(bᵀy + ½‖Gᵀy‖²)`, which makes the observed distribution
//!
//! ```text
//! p(x, y) = pi_y N(x | mu_x + W Gᵀ y, Psi + W Wᵀ).
//! ```

use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gg::{binary_moments, row_major, symmetrize, GGParams, Moments};
use crate::numerics::{
    check_enumeration, log1p_exp, logsumexp, sym_eigen_desc, BitMask, GaussianKernel, SymMatrix, LN_2PI,
};

/// Tolerance on the unit-norm rows of `W̃` and `G̃`.
pub const ROW_NORM_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(into = "FactorModelFile", try_from = "FactorModelFile")]
pub struct FactorModel {
    mu_x: DVector<f64>,
    psi: DVector<f64>,
    b: DVector<f64>,
    w_tilde: DMatrix<f64>,
    g_tilde: DMatrix<f64>,
    c: f64,
    rotation_fixed: bool,
    cache: OnceLock<Arc<Cache>>,
}

#[derive(Debug)]
struct Cache {
    /// Normalized prior mixture weights, indexed by the bit pattern of `y`.
    log_weights: Vec<f64>,
    log_normalizer: f64,
    /// `Gᵀ 1_{R1}` per configuration (`p_z × 2^q`).
    shifts: DMatrix<f64>,
    sigma_x: GaussianKernel,
}

/// Gaussian posterior of `z` given a row.
#[derive(Debug, Clone)]
pub struct Posterior {
    /// Factor score.
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Result of rotation fixing.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoadingSummary {
    /// Combined loading matrix `[G; W̃ sqrt(c)]` before rotation, `(q + p_x) × p_z`.
    #[serde(with = "crate::numerics::serde_rows")]
    pub m: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
    #[serde(with = "crate::numerics::serde_rows")]
    pub rotation: DMatrix<f64>,
    pub contribution: Vec<f64>,
    pub cumulative: Vec<f64>,
    /// Rotated dimensionless binary loadings `g̃_j R sqrt(c)`, one row per binary variable.
    #[serde(with = "crate::numerics::serde_rows")]
    pub binary_loadings: DMatrix<f64>,
    /// Rotated dimensionless continuous loadings `w̃_j R sqrt(c)`.
    #[serde(with = "crate::numerics::serde_rows")]
    pub continuous_loadings: DMatrix<f64>,
}

fn normalize_rows(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let mut out = m.clone();
    for (i, mut row) in out.row_iter_mut().enumerate() {
        let n = row.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::InvalidParameter(format!("{what} row {i} has zero or non-finite norm")));
        }
        row /= n;
    }
    Ok(out)
}

fn check_vec(what: &'static str, expected: usize, v: &DVector<f64>) -> Result<()> {
    if v.len() != expected {
        Err(Error::dims(what, expected, v.len()))
    } else {
        Ok(())
    }
}

impl FactorModel {
    /// Rows of `w_tilde` and `g_tilde` are normalized to unit length; a zero
    /// row is rejected.
    pub fn new(
        mu_x: DVector<f64>,
        psi: DVector<f64>,
        b: DVector<f64>,
        w_tilde: DMatrix<f64>,
        g_tilde: DMatrix<f64>,
        c: f64,
    ) -> Result<Self> {
        let p_x = mu_x.len();
        let q = b.len();
        let p_z = w_tilde.ncols().max(g_tilde.ncols());
        if p_z == 0 {
            return Err(Error::InvalidParameter("latent dimension must be at least 1".into()));
        }
        check_vec("psi", p_x, &psi)?;
        if w_tilde.nrows() != p_x {
            return Err(Error::dims("w_tilde rows", p_x, w_tilde.nrows()));
        }
        if g_tilde.nrows() != q {
            return Err(Error::dims("g_tilde rows", q, g_tilde.nrows()));
        }
        if w_tilde.ncols() != p_z {
            return Err(Error::dims("w_tilde columns", p_z, w_tilde.ncols()));
        }
        if g_tilde.ncols() != p_z {
            return Err(Error::dims("g_tilde columns", p_z, g_tilde.ncols()));
        }
        if !mu_x.iter().chain(b.iter()).all(|v| v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite mean or intercept".into()));
        }
        if let Some(j) = psi.iter().position(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("psi[{j}] must be positive")));
        }
        if !(c >= 0.0) || !c.is_finite() {
            return Err(Error::InvalidParameter(format!("c = {c} must be nonnegative")));
        }
        check_enumeration(q)?;
        let w_tilde = normalize_rows(&w_tilde, "w_tilde")?;
        let g_tilde = normalize_rows(&g_tilde, "g_tilde")?;
        Ok(FactorModel {
            mu_x,
            psi,
            b,
            w_tilde,
            g_tilde,
            c,
            rotation_fixed: false,
            cache: OnceLock::new(),
        })
    }

    pub fn p_x(&self) -> usize {
        self.mu_x.len()
    }

    pub fn q(&self) -> usize {
        self.b.len()
    }

    pub fn p_z(&self) -> usize {
        self.w_tilde.ncols()
    }

    pub fn mu_x(&self) -> &DVector<f64> {
        &self.mu_x
    }

    pub fn psi(&self) -> &DVector<f64> {
        &self.psi
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn w_tilde(&self) -> &DMatrix<f64> {
        &self.w_tilde
    }

    pub fn g_tilde(&self) -> &DMatrix<f64> {
        &self.g_tilde
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn rotation_fixed(&self) -> bool {
        self.rotation_fixed
    }

    /// `W = Psi^{1/2} W̃ sqrt(c)`.
    pub fn w(&self) -> DMatrix<f64> {
        let sc = self.c.sqrt();
        let mut w = self.w_tilde.clone();
        for (j, mut row) in w.row_iter_mut().enumerate() {
            row *= self.psi[j].sqrt() * sc;
        }
        w
    }

    /// `G = G̃ sqrt(c)`.
    pub fn g(&self) -> DMatrix<f64> {
        &self.g_tilde * self.c.sqrt()
    }

    /// `Sigma_x = Psi + W Wᵀ`.
    pub fn sigma_x(&self) -> DMatrix<f64> {
        let w = self.w();
        DMatrix::from_diagonal(&self.psi) + &w * w.transpose()
    }

    fn cache(&self) -> Result<Arc<Cache>> {
        if let Some(c) = self.cache.get() {
            return Ok(c.clone());
        }
        let built = Arc::new(self.build_cache()?);
        Ok(self.cache.get_or_init(|| built).clone())
    }

    fn build_cache(&self) -> Result<Cache> {
        let q = self.q();
        let g = self.g();
        let n = 1usize << q;
        let mut shifts = DMatrix::zeros(self.p_z(), n);
        let mut log_unnorm = Vec::with_capacity(n);
        for y in BitMask::all(q)? {
            let mut h = DVector::zeros(self.p_z());
            let mut lin = 0.0;
            for a in y.ones() {
                h += g.row(a).transpose();
                lin += self.b[a];
            }
            log_unnorm.push(lin + 0.5 * h.norm_squared());
            shifts.set_column(y.bits() as usize, &h);
        }
        let log_normalizer = logsumexp(&log_unnorm);
        let log_weights = log_unnorm.iter().map(|v| v - log_normalizer).collect();
        let sigma_x = GaussianKernel::new(&self.sigma_x(), "Sigma_x")?;
        Ok(Cache {
            log_weights,
            log_normalizer,
            shifts,
            sigma_x,
        })
    }

    /// Prior mixture weights `pi_y` in log space, indexed by bit pattern.
    pub fn prior_log_weights(&self) -> Result<Vec<f64>> {
        Ok(self.cache()?.log_weights.clone())
    }

    /// `log sum_y exp(bᵀy + ½‖Gᵀy‖²)`.
    pub fn prior_log_normalizer(&self) -> Result<f64> {
        Ok(self.cache()?.log_normalizer)
    }

    fn check_row(&self, x: &DVector<f64>, y: BitMask) -> Result<()> {
        check_vec("x", self.p_x(), x)?;
        if y.width() != self.q() {
            return Err(Error::dims("y", self.q(), y.width()));
        }
        Ok(())
    }

    /// `log p(x, y | z)`.
    pub fn conditional_logpdf(&self, x: &DVector<f64>, y: BitMask, z: &DVector<f64>) -> Result<f64> {
        self.check_row(x, y)?;
        check_vec("z", self.p_z(), z)?;
        let r = x - &self.mu_x - self.w() * z;
        let mut acc = 0.0;
        for j in 0..self.p_x() {
            acc += -0.5 * (LN_2PI + self.psi[j].ln()) - 0.5 * r[j] * r[j] / self.psi[j];
        }
        let eta = &self.b + self.g() * z;
        for j in 0..self.q() {
            let e = eta[j];
            acc += if y.get(j) { e } else { 0.0 } - log1p_exp(e);
        }
        Ok(acc)
    }

    /// `log p(z)` under the Gaussian-mixture prior.
    pub fn prior_logpdf(&self, z: &DVector<f64>) -> Result<f64> {
        check_vec("z", self.p_z(), z)?;
        let cache = self.cache()?;
        let d = self.p_z() as f64;
        let terms: Vec<f64> = cache
            .log_weights
            .iter()
            .enumerate()
            .map(|(i, lw)| lw - 0.5 * d * LN_2PI - 0.5 * (z - cache.shifts.column(i)).norm_squared())
            .collect();
        Ok(logsumexp(&terms))
    }

    /// `log p(x, y)`.
    pub fn observed_logpdf(&self, x: &DVector<f64>, y: BitMask) -> Result<f64> {
        self.check_row(x, y)?;
        let cache = self.cache()?;
        let col = y.bits() as usize;
        if self.p_x() == 0 {
            return Ok(cache.log_weights[col]);
        }
        let mean = &self.mu_x + self.w() * cache.shifts.column(col);
        Ok(cache.log_weights[col] + cache.sigma_x.log_density(&(x - mean)))
    }

    /// `log p(x_O, y_V)` for a row with missing cells (`None`).
    pub fn observed_logpdf_missing(&self, x: &[Option<f64>], y: &[Option<bool>]) -> Result<f64> {
        let parts = self.missing_components(x, y)?;
        Ok(logsumexp(&parts.log_terms))
    }

    /// Per-completion terms of the missing-data likelihood.
    fn missing_components(&self, x: &[Option<f64>], y: &[Option<bool>]) -> Result<MissingParts> {
        if x.len() != self.p_x() {
            return Err(Error::dims("x", self.p_x(), x.len()));
        }
        if y.len() != self.q() {
            return Err(Error::dims("y", self.q(), y.len()));
        }
        let obs: Vec<usize> = (0..x.len()).filter(|&i| x[i].is_some()).collect();
        let missing_bits: Vec<usize> = (0..y.len()).filter(|&i| y[i].is_none()).collect();
        if obs.is_empty() && missing_bits.len() == y.len() {
            return Err(Error::NothingObserved);
        }
        let cache = self.cache()?;
        let w = self.w();
        let w_o = DMatrix::from_fn(obs.len(), self.p_z(), |r, c| w[(obs[r], c)]);
        let x_o = DVector::from_fn(obs.len(), |r, _| x[obs[r]].unwrap() - self.mu_x[obs[r]]);
        let cov_o = DMatrix::from_fn(obs.len(), obs.len(), |r, c| {
            let d = if r == c { self.psi[obs[r]] } else { 0.0 };
            d + w_o.row(r).dot(&w_o.row(c))
        });
        let kernel = GaussianKernel::new(&cov_o, "Sigma_x[O, O]")?;
        let mut base = 0u32;
        for (j, v) in y.iter().enumerate() {
            if *v == Some(true) {
                base |= 1 << j;
            }
        }
        let n = 1usize << missing_bits.len();
        let mut configs = Vec::with_capacity(n);
        let mut log_terms = Vec::with_capacity(n);
        for k in 0..n {
            let mut bits = base;
            for (t, &j) in missing_bits.iter().enumerate() {
                if k >> t & 1 == 1 {
                    bits |= 1 << j;
                }
            }
            let h = cache.shifts.column(bits as usize);
            let r = &x_o - &w_o * h;
            log_terms.push(cache.log_weights[bits as usize] + kernel.log_density(&r));
            configs.push(bits);
        }
        Ok(MissingParts {
            obs,
            configs,
            log_terms,
        })
    }

    /// Posterior of `z` given a complete row.
    pub fn posterior(&self, x: &DVector<f64>, y: BitMask) -> Result<Posterior> {
        self.check_row(x, y)?;
        let all: Vec<usize> = (0..self.p_x()).collect();
        let cov = self.posterior_cov(&all);
        let w = self.w();
        let mut rhs = self.g().transpose() * y.to_vector();
        for j in 0..self.p_x() {
            let s = (x[j] - self.mu_x[j]) / self.psi[j];
            rhs += w.row(j).transpose() * s;
        }
        Ok(Posterior { mean: &cov * rhs, cov })
    }

    /// `(I + W_Oᵀ Psi_O⁻¹ W_O)⁻¹` for the observed continuous coordinates `O`.
    fn posterior_cov(&self, obs: &[usize]) -> DMatrix<f64> {
        let w = self.w();
        let k = self.p_z();
        let mut prec = DMatrix::identity(k, k);
        for &j in obs {
            let row = w.row(j);
            prec += row.transpose() * row / self.psi[j];
        }
        let cov = prec.cholesky().expect("I + WᵀΨ⁻¹W is SPD").inverse();
        symmetrize(cov)
    }

    /// Posterior mean of `z` for a row with missing cells: the average of
    /// the per-completion factor scores weighted by `p(y_U | x_O, y_V)`.
    pub fn posterior_missing(&self, x: &[Option<f64>], y: &[Option<bool>]) -> Result<Posterior> {
        let parts = self.missing_components(x, y)?;
        let lz = logsumexp(&parts.log_terms);
        let cov = self.posterior_cov(&parts.obs);
        let w = self.w();
        let g = self.g();
        let mut rhs = DVector::zeros(self.p_z());
        for &j in &parts.obs {
            let s = (x[j].unwrap() - self.mu_x[j]) / self.psi[j];
            rhs += w.row(j).transpose() * s;
        }
        for (bits, lt) in parts.configs.iter().zip(&parts.log_terms) {
            let p = (lt - lz).exp();
            for a in BitMask::from_bits_unchecked(*bits, self.q()).ones() {
                rhs += g.row(a).transpose() * p;
            }
        }
        Ok(Posterior { mean: &cov * rhs, cov })
    }

    /// `log p(x, y, z) = log p(x, y | z) + log p(z)`.
    pub fn joint_logpdf(&self, x: &DVector<f64>, y: BitMask, z: &DVector<f64>) -> Result<f64> {
        Ok(self.conditional_logpdf(x, y, z)? + self.prior_logpdf(z)?)
    }

    /// Rotate `(W̃, G̃)` so the columns of the combined loading matrix are
    /// orthogonal, ordered by decreasing contribution.
    pub fn fix_rotation(&self) -> Result<(FactorModel, LoadingSummary)> {
        let sc = self.c.sqrt();
        let (q, p_x, k) = (self.q(), self.p_x(), self.p_z());
        let mut m = DMatrix::zeros(q + p_x, k);
        m.view_mut((0, 0), (q, k)).copy_from(&(&self.g_tilde * sc));
        m.view_mut((q, 0), (p_x, k)).copy_from(&(&self.w_tilde * sc));
        let mtm = SymMatrix::new(symmetrize(m.transpose() * &m))?;
        let eig = sym_eigen_desc(&mtm);
        let eigenvalues: Vec<f64> = eig.values.iter().map(|v| v.max(0.0)).collect();
        let (contribution, cumulative) = contribution_ratios(&eigenvalues)?;
        let r = eig.vectors;
        let mut rotated = self.clone();
        rotated.w_tilde = normalize_rows(&(&self.w_tilde * &r), "w_tilde")?;
        rotated.g_tilde = normalize_rows(&(&self.g_tilde * &r), "g_tilde")?;
        rotated.rotation_fixed = true;
        rotated.cache = OnceLock::new();
        let summary = LoadingSummary {
            binary_loadings: &rotated.g_tilde * sc,
            continuous_loadings: &rotated.w_tilde * sc,
            m,
            eigenvalues,
            rotation: r,
            contribution,
            cumulative,
        };
        Ok((rotated, summary))
    }

    /// Exact moments of `(x, y)`.
    pub fn moments(&self) -> Result<Moments> {
        let cache = self.cache()?;
        let (mean_y, second_y) = binary_moments(&cache.log_weights, self.q());
        let cov_yy = &second_y - &mean_y * mean_y.transpose();
        let wg = self.w() * self.g().transpose();
        let mean_x = &self.mu_x + &wg * &mean_y;
        let cov_xy = &wg * &cov_yy;
        let cov_xx = self.sigma_x() + &cov_xy * wg.transpose();
        Ok(Moments {
            mean_y,
            second_y,
            mean_x,
            cov_xx: symmetrize(cov_xx),
            cov_xy,
            cov_yy: symmetrize(cov_yy),
        })
    }

    /// Model Pearson correlations over `(x, y)`, continuous first.
    pub fn pearson_correlations(&self) -> Result<DMatrix<f64>> {
        self.moments()?.correlations()
    }

    /// The same distribution as a joint over continuous `(x, z)` and binary
    /// `y`: `Sigma = [[Psi + W Wᵀ, W], [Wᵀ, I]]`, `mu = (mu_x, 0)`,
    /// interaction `[0 | G]` and `Lambda - I = diag(exp(-b))`.
    pub fn to_gg(&self) -> Result<GGParams> {
        let (p_x, q, k) = (self.p_x(), self.q(), self.p_z());
        let p = p_x + k;
        let w = self.w();
        let mut sigma = DMatrix::identity(p, p);
        sigma.view_mut((0, 0), (p_x, p_x)).copy_from(&self.sigma_x());
        sigma.view_mut((0, p_x), (p_x, k)).copy_from(&w);
        sigma.view_mut((p_x, 0), (k, p_x)).copy_from(&w.transpose());
        let mut mu = DVector::zeros(p);
        mu.rows_mut(0, p_x).copy_from(&self.mu_x);
        let lambda = DMatrix::from_diagonal(&self.b.map(|v| 1.0 + (-v).exp()));
        let mut g = DMatrix::zeros(q, p);
        g.view_mut((0, p_x), (q, k)).copy_from(&self.g());
        GGParams::new(mu, SymMatrix::new(sigma)?, lambda, g)
    }

    /// Draws of `(x, y)`; `z` is drawn from its prior and discarded.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Vec<(DVector<f64>, BitMask)>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_with(n, &mut rng)
    }

    pub fn sample_with<R: Rng>(&self, n: usize, rng: &mut R) -> Result<Vec<(DVector<f64>, BitMask)>> {
        let cache = self.cache()?;
        let w = self.w();
        let (p_x, q, k) = (self.p_x(), self.q(), self.p_z());
        let mut cdf = Vec::with_capacity(cache.log_weights.len());
        let mut acc = 0.0;
        for lw in &cache.log_weights {
            acc += lw.exp();
            cdf.push(acc);
        }
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let u: f64 = rng.random::<f64>() * acc;
            let bits = cdf.iter().position(|&c| u < c).unwrap_or(cdf.len() - 1);
            let z = cache.shifts.column(bits) + DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
            let e = DVector::from_fn(p_x, |j, _| self.psi[j].sqrt() * rng.sample::<f64, _>(StandardNormal));
            let x = &self.mu_x + &w * z + e;
            out.push((x, BitMask::from_bits_unchecked(bits as u32, q)));
        }
        Ok(out)
    }

    pub fn to_file(&self) -> FactorModelFile {
        FactorModelFile {
            p_x: self.p_x(),
            q: self.q(),
            p_z: self.p_z(),
            mu_x: self.mu_x.as_slice().to_vec(),
            psi_diag: self.psi.as_slice().to_vec(),
            b: self.b.as_slice().to_vec(),
            w_tilde: row_major(&self.w_tilde),
            g_tilde: row_major(&self.g_tilde),
            c: self.c,
            rotation_fixed: self.rotation_fixed,
        }
    }

    pub fn from_file(f: &FactorModelFile) -> Result<Self> {
        let (p_x, q, k) = (f.p_x, f.q, f.p_z);
        if f.w_tilde.len() != p_x * k {
            return Err(Error::dims("w_tilde entries", p_x * k, f.w_tilde.len()));
        }
        if f.g_tilde.len() != q * k {
            return Err(Error::dims("g_tilde entries", q * k, f.g_tilde.len()));
        }
        if f.mu_x.len() != p_x {
            return Err(Error::dims("mu_x", p_x, f.mu_x.len()));
        }
        if f.b.len() != q {
            return Err(Error::dims("b", q, f.b.len()));
        }
        let w = DMatrix::from_row_slice(p_x, k, &f.w_tilde);
        let g = DMatrix::from_row_slice(q, k, &f.g_tilde);
        for (what, m) in [("w_tilde", &w), ("g_tilde", &g)] {
            for (i, row) in m.row_iter().enumerate() {
                if (row.norm() - 1.0).abs() > 1e-8 {
                    return Err(Error::InvalidParameter(format!("{what} row {i} does not have unit norm")));
                }
            }
        }
        let mut model = FactorModel::new(
            DVector::from_column_slice(&f.mu_x),
            DVector::from_column_slice(&f.psi_diag),
            DVector::from_column_slice(&f.b),
            w,
            g,
            f.c,
        )?;
        model.rotation_fixed = f.rotation_fixed;
        Ok(model)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_file(&serde_json::from_str(s)?)
    }
}

struct MissingParts {
    obs: Vec<usize>,
    configs: Vec<u32>,
    log_terms: Vec<f64>,
}

/// `P_s = lambda_s / sum_t lambda_t` and its cumulative sums.
pub fn contribution_ratios(eigenvalues: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let total: f64 = eigenvalues.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Degenerate("all loadings vanish; contribution ratios undefined".into()));
    }
    let p: Vec<f64> = eigenvalues.iter().map(|l| l / total).collect();
    let mut acc = 0.0;
    let mut cum: Vec<f64> = p
        .iter()
        .map(|v| {
            acc += v;
            acc
        })
        .collect();
    if let Some(last) = cum.last_mut() {
        *last = 1.0;
    }
    Ok((p, cum))
}

/// JSON layout of a [`FactorModel`]; matrices are row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorModelFile {
    pub p_x: usize,
    pub q: usize,
    pub p_z: usize,
    pub mu_x: Vec<f64>,
    pub psi_diag: Vec<f64>,
    pub b: Vec<f64>,
    pub w_tilde: Vec<f64>,
    pub g_tilde: Vec<f64>,
    pub c: f64,
    pub rotation_fixed: bool,
}

impl From<FactorModel> for FactorModelFile {
    fn from(m: FactorModel) -> Self {
        m.to_file()
    }
}

impl TryFrom<FactorModelFile> for FactorModel {
    type Error = Error;

    fn try_from(f: FactorModelFile) -> Result<Self> {
        FactorModel::from_file(&f)
    }
}

#[cfg(test)]
mod tests;
