//! Joint distribution of a continuous vector `x` (dimension `p`) and a binary
//! vector `y` (dimension `q`) in which `y` follows a Grassmann distribution
//! and shifts the Gaussian mean of `x` through the interaction matrix `G`.
//!
//! For a configuration `y = 1_{R1}` (with complement `R0`),
//!
//! ```text
//! p(x, y) = pi_{R1} N(x | mu + Sigma G^T y, Sigma)
//! pi_{R1} ∝ det((Lambda - I)[R0, R0]) exp(½ yᵀ G Sigma Gᵀ y)
//! ```
//!
//! so the `x`-marginal is a `2^q` Gaussian mixture with shared covariance.
//! Every sum over binary configurations is an exact enumeration carried out
//! in log space.

use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{
    check_enumeration, logsumexp, schur_complement, subvector, sym_inverse, BitMask, GaussianKernel, SymMatrix,
    LN_2PI,
};

/// Largest `q` for which a raw `Lambda` is validated by enumerating all
/// principal minors of `Lambda - I`.
pub const RAW_LAMBDA_CHECK_CAP: usize = 12;

/// Parameters `(mu, Sigma, Lambda, G)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(into = "GGParamsFile", try_from = "GGParamsFile")]
pub struct GGParams {
    mu: DVector<f64>,
    sigma: SymMatrix,
    lambda: DMatrix<f64>,
    g: DMatrix<f64>,
    table: OnceLock<Arc<MixtureComponentTable>>,
}

/// Per-configuration mixture weights and component means, indexed by the bit
/// pattern of `y` (bit `j` set means `y_j = 1`).
#[derive(Debug, Clone)]
pub struct MixtureComponentTable {
    q: usize,
    /// `log det((Lambda - I)[R0, R0])`, `-inf` for vanishing minors.
    pub log_minors: Vec<f64>,
    /// Normalized `log pi_{R1}`.
    pub log_weights: Vec<f64>,
    /// `log` of the normalizer of the mixing weights.
    pub log_normalizer: f64,
    /// Component means `mu + Sigma G^T 1_{R1}`, one column per configuration.
    pub means: DMatrix<f64>,
}

impl MixtureComponentTable {
    pub fn q(&self) -> usize {
        self.q
    }

    pub fn len(&self) -> usize {
        self.log_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_weights.is_empty()
    }

    pub fn weight(&self, y: BitMask) -> f64 {
        self.log_weights[y.bits() as usize].exp()
    }

    pub fn mean(&self, y: BitMask) -> DVector<f64> {
        self.means.column(y.bits() as usize).into_owned()
    }
}

/// Role of a variable in a density query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    /// Density variable (`J` for continuous, `S` for binary).
    Query,
    /// Missing, integrated or summed out (`L`, `U`).
    Latent,
    /// Conditioned on (`K`, `T`).
    Observed,
}

/// Split of continuous indices into `(J, L, K)` and binary indices into
/// `(S, U, T)`. Values for each set are passed separately, in ascending
/// index order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexPartition {
    cont: Vec<Role>,
    bin: Vec<Role>,
}

fn indices_with(roles: &[Role], role: Role) -> Vec<usize> {
    roles
        .iter()
        .enumerate()
        .filter(|(_, &r)| r == role)
        .map(|(i, _)| i)
        .collect()
}

impl IndexPartition {
    pub fn new(cont: Vec<Role>, bin: Vec<Role>) -> Self {
        IndexPartition { cont, bin }
    }

    /// Build from explicit index sets; the three sets on each side must
    /// partition `0..p` (resp. `0..q`).
    #[allow(clippy::too_many_arguments)]
    pub fn from_sets(
        p: usize,
        q: usize,
        j: &[usize],
        l: &[usize],
        k: &[usize],
        s: &[usize],
        u: &[usize],
        t: &[usize],
    ) -> Result<Self> {
        fn assign(n: usize, sets: [(&[usize], Role); 3], what: &str) -> Result<Vec<Role>> {
            let mut roles: Vec<Option<Role>> = vec![None; n];
            for (set, role) in sets {
                for &i in set {
                    if i >= n {
                        return Err(Error::InvalidPartition(format!("{what} index {i} out of range {n}")));
                    }
                    if roles[i].replace(role).is_some() {
                        return Err(Error::InvalidPartition(format!("{what} index {i} assigned twice")));
                    }
                }
            }
            roles
                .into_iter()
                .enumerate()
                .map(|(i, r)| r.ok_or_else(|| Error::InvalidPartition(format!("{what} index {i} unassigned"))))
                .collect()
        }
        let cont = assign(p, [(j, Role::Query), (l, Role::Latent), (k, Role::Observed)], "continuous")?;
        let bin = assign(q, [(s, Role::Query), (u, Role::Latent), (t, Role::Observed)], "binary")?;
        Ok(IndexPartition { cont, bin })
    }

    /// Everything observed.
    pub fn observed(p: usize, q: usize) -> Self {
        IndexPartition {
            cont: vec![Role::Observed; p],
            bin: vec![Role::Observed; q],
        }
    }

    pub fn cont_roles(&self) -> &[Role] {
        &self.cont
    }

    pub fn bin_roles(&self) -> &[Role] {
        &self.bin
    }

    /// `J`
    pub fn cont_query(&self) -> Vec<usize> {
        indices_with(&self.cont, Role::Query)
    }
    /// `L`
    pub fn cont_latent(&self) -> Vec<usize> {
        indices_with(&self.cont, Role::Latent)
    }
    /// `K`
    pub fn cont_observed(&self) -> Vec<usize> {
        indices_with(&self.cont, Role::Observed)
    }
    /// `S`
    pub fn bin_query(&self) -> Vec<usize> {
        indices_with(&self.bin, Role::Query)
    }
    /// `U`
    pub fn bin_latent(&self) -> Vec<usize> {
        indices_with(&self.bin, Role::Latent)
    }
    /// `T`
    pub fn bin_observed(&self) -> Vec<usize> {
        indices_with(&self.bin, Role::Observed)
    }

    fn check(&self, p: usize, q: usize) -> Result<()> {
        if self.cont.len() != p {
            return Err(Error::dims("partition continuous roles", p, self.cont.len()));
        }
        if self.bin.len() != q {
            return Err(Error::dims("partition binary roles", q, self.bin.len()));
        }
        Ok(())
    }
}

/// Bits fixed by an assignment of values to an index set: `(care, value)`.
fn fixed_bits(idx: &[usize], values: &[bool]) -> Result<(u32, u32)> {
    if idx.len() != values.len() {
        return Err(Error::dims("binary assignment", idx.len(), values.len()));
    }
    let mut care = 0u32;
    let mut val = 0u32;
    for (&i, &v) in idx.iter().zip(values) {
        care |= 1 << i;
        if v {
            val |= 1 << i;
        }
    }
    Ok((care, val))
}

fn check_len(what: &'static str, expected: usize, v: &DVector<f64>) -> Result<()> {
    if v.len() != expected {
        Err(Error::dims(what, expected, v.len()))
    } else {
        Ok(())
    }
}

/// `log det` of a square matrix via LU. `Ok(None)` for a nonpositive
/// determinant that is zero up to roundoff, `Err` when clearly negative.
fn log_det_nonneg(m: &DMatrix<f64>) -> Result<Option<f64>> {
    let n = m.nrows();
    if n == 0 {
        return Ok(Some(0.0));
    }
    let det = m.clone().lu().determinant();
    // Hadamard bound on |det| sets the roundoff scale.
    let bound: f64 = m.row_iter().map(|r| r.norm().max(f64::MIN_POSITIVE)).product();
    if det > 0.0 {
        Ok(Some(det.ln()))
    } else if det >= -1e-10 * bound {
        Ok(None)
    } else {
        Err(Error::InvalidParameter(format!(
            "principal minor of Lambda - I is negative ({det:e}); Lambda - I must be a P0 matrix"
        )))
    }
}

impl GGParams {
    /// Parameters with a raw `Lambda`. For `q <= 12` every principal minor of
    /// `Lambda - I` is checked to be nonnegative; for larger `q`, `Lambda - I`
    /// must be row diagonally dominant with nonnegative diagonal.
    pub fn new(mu: DVector<f64>, sigma: SymMatrix, lambda: DMatrix<f64>, g: DMatrix<f64>) -> Result<Self> {
        let params = Self::assemble(mu, sigma, lambda, g)?;
        let q = params.q();
        let m = params.lambda_minus_identity();
        if q <= RAW_LAMBDA_CHECK_CAP {
            for r1 in BitMask::all(q)? {
                let r0 = r1.zeros();
                log_det_nonneg(&crate::numerics::submatrix(&m, &r0, &r0))?;
            }
        } else {
            for i in 0..q {
                let off: f64 = (0..q).filter(|&k| k != i).map(|k| m[(i, k)].abs()).sum();
                if m[(i, i)] < off {
                    return Err(Error::InvalidParameter(format!(
                        "q = {q} > {RAW_LAMBDA_CHECK_CAP}: raw Lambda must be diagonally dominant (row {i})"
                    )));
                }
            }
        }
        Ok(params)
    }

    /// Diagonally dominant parameterization:
    /// `Lambda_jj = 1 + exp(a_j) + sum_{k != j} |Lambda_jk|` with free
    /// off-diagonal entries (the diagonal of `offdiag` is ignored).
    pub fn from_diag_dominant(
        mu: DVector<f64>,
        sigma: SymMatrix,
        log_excess: &DVector<f64>,
        offdiag: &DMatrix<f64>,
        g: DMatrix<f64>,
    ) -> Result<Self> {
        let q = log_excess.len();
        if offdiag.nrows() != q || offdiag.ncols() != q {
            return Err(Error::dims("Lambda off-diagonal", q, offdiag.nrows()));
        }
        let lambda = diag_dominant_lambda(log_excess, offdiag);
        Self::assemble(mu, sigma, lambda, g)
    }

    fn assemble(mu: DVector<f64>, sigma: SymMatrix, lambda: DMatrix<f64>, g: DMatrix<f64>) -> Result<Self> {
        let p = mu.len();
        let q = lambda.nrows();
        if sigma.dim() != p {
            return Err(Error::dims("Sigma", p, sigma.dim()));
        }
        if lambda.ncols() != q {
            return Err(Error::dims("Lambda columns", q, lambda.ncols()));
        }
        if g.nrows() != q {
            return Err(Error::dims("G rows", q, g.nrows()));
        }
        if g.ncols() != p {
            return Err(Error::dims("G columns", p, g.ncols()));
        }
        let finite = mu.iter().chain(sigma.as_matrix().iter()).chain(lambda.iter()).chain(g.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidParameter("non-finite entry".into()));
        }
        if !sigma.is_positive_definite() {
            return Err(Error::NotPositiveDefinite { what: "Sigma".into() });
        }
        Ok(GGParams {
            mu,
            sigma,
            lambda,
            g,
            table: OnceLock::new(),
        })
    }

    pub fn p(&self) -> usize {
        self.mu.len()
    }

    pub fn q(&self) -> usize {
        self.lambda.nrows()
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn sigma(&self) -> &SymMatrix {
        &self.sigma
    }

    pub fn lambda(&self) -> &DMatrix<f64> {
        &self.lambda
    }

    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn lambda_minus_identity(&self) -> DMatrix<f64> {
        let q = self.q();
        &self.lambda - DMatrix::identity(q, q)
    }

    /// Mixing weights and component means over all `2^q` configurations.
    /// Computed once and cached.
    pub fn table(&self) -> Result<Arc<MixtureComponentTable>> {
        if let Some(t) = self.table.get() {
            return Ok(t.clone());
        }
        let t = Arc::new(self.build_table()?);
        Ok(self.table.get_or_init(|| t).clone())
    }

    fn build_table(&self) -> Result<MixtureComponentTable> {
        let (p, q) = (self.p(), self.q());
        check_enumeration(q)?;
        let m = self.lambda_minus_identity();
        let sg = self.sigma.as_matrix() * self.g.transpose(); // p x q
        let quad = &self.g * &sg; // q x q
        let n = 1usize << q;
        let mut log_minors = Vec::with_capacity(n);
        let mut log_unnorm = Vec::with_capacity(n);
        let mut means = DMatrix::zeros(p, n);
        for r1 in BitMask::all(q)? {
            let ones = r1.ones();
            let zeros = r1.zeros();
            let lm = log_det_nonneg(&crate::numerics::submatrix(&m, &zeros, &zeros))?.unwrap_or(f64::NEG_INFINITY);
            let mut e = 0.0;
            for &a in &ones {
                for &b in &ones {
                    e += quad[(a, b)];
                }
            }
            log_minors.push(lm);
            log_unnorm.push(lm + 0.5 * e);
            let mut col = self.mu.clone();
            for &a in &ones {
                col += sg.column(a);
            }
            means.set_column(r1.bits() as usize, &col);
        }
        let log_normalizer = logsumexp(&log_unnorm);
        let log_weights = log_unnorm.iter().map(|v| v - log_normalizer).collect();
        Ok(MixtureComponentTable {
            q,
            log_minors,
            log_weights,
            log_normalizer,
            means,
        })
    }

    /// `log Z` of the unnormalized joint
    /// `det((Lambda-I)[R0,R0]) exp(yᵀG(x-mu) - ½(x-mu)ᵀSigma⁻¹(x-mu))`.
    pub fn log_partition(&self) -> Result<f64> {
        let t = self.table()?;
        let kernel = GaussianKernel::new(self.sigma.as_matrix(), "Sigma")?;
        Ok(0.5 * (self.p() as f64 * LN_2PI + kernel.log_det()) + t.log_normalizer)
    }

    /// Logarithm of the unnormalized joint whose integral is `exp(log_partition)`.
    pub fn log_joint_unnormalized(&self, x: &DVector<f64>, y: BitMask) -> Result<f64> {
        check_len("x", self.p(), x)?;
        self.check_mask(y)?;
        let t = self.table()?;
        let r = x - &self.mu;
        let h = self.g.transpose() * y.to_vector();
        let sinv_r = self.sigma.cholesky().expect("validated SPD").solve(&r);
        Ok(t.log_minors[y.bits() as usize] + h.dot(&r) - 0.5 * r.dot(&sinv_r))
    }

    fn check_mask(&self, y: BitMask) -> Result<()> {
        if y.width() != self.q() {
            Err(Error::dims("y", self.q(), y.width()))
        } else {
            Ok(())
        }
    }

    /// `log p(x, y)`.
    pub fn joint_logpdf(&self, x: &DVector<f64>, y: BitMask) -> Result<f64> {
        check_len("x", self.p(), x)?;
        self.check_mask(y)?;
        let t = self.table()?;
        let col = y.bits() as usize;
        let lw = t.log_weights[col];
        if self.p() == 0 {
            return Ok(lw);
        }
        let kernel = GaussianKernel::new(self.sigma.as_matrix(), "Sigma")?;
        let r = x - t.means.column(col);
        Ok(lw + kernel.log_density(&r))
    }

    /// `log p(x_K, y_T)` with every non-observed variable integrated or
    /// summed out. The partition must have no query variables.
    pub fn marginal_logpdf(&self, part: &IndexPartition, x_k: &DVector<f64>, y_t: &[bool]) -> Result<f64> {
        part.check(self.p(), self.q())?;
        if !part.cont_query().is_empty() || !part.bin_query().is_empty() {
            return Err(Error::InvalidPartition(
                "marginal density takes no query variables; mark them observed or latent".into(),
            ));
        }
        let k = part.cont_observed();
        let t_idx = part.bin_observed();
        if k.is_empty() && t_idx.is_empty() {
            return Err(Error::NothingObserved);
        }
        check_len("x_K", k.len(), x_k)?;
        let (care, val) = fixed_bits(&t_idx, y_t)?;
        let table = self.table()?;
        let kernel = GaussianKernel::new(&self.sigma.block(&k, &k), "Sigma_KK")?;
        let mut terms = Vec::new();
        for bits in 0..table.len() as u32 {
            if bits & care != val {
                continue;
            }
            let mean_k = DVector::from_fn(k.len(), |i, _| table.means[(k[i], bits as usize)]);
            terms.push(table.log_weights[bits as usize] + kernel.log_density(&(x_k - mean_k)));
        }
        Ok(logsumexp(&terms))
    }

    /// Log-density of the observed cells of one row (`None` marks a
    /// missing cell).
    pub fn observed_logpdf_missing(&self, x: &[Option<f64>], y: &[Option<bool>]) -> Result<f64> {
        if x.len() != self.p() {
            return Err(Error::dims("x", self.p(), x.len()));
        }
        if y.len() != self.q() {
            return Err(Error::dims("y", self.q(), y.len()));
        }
        let cont = x.iter().map(|v| if v.is_some() { Role::Observed } else { Role::Latent }).collect();
        let bin = y.iter().map(|v| if v.is_some() { Role::Observed } else { Role::Latent }).collect();
        let x_k: Vec<f64> = x.iter().flatten().copied().collect();
        let y_t: Vec<bool> = y.iter().flatten().copied().collect();
        self.marginal_logpdf(&IndexPartition::new(cont, bin), &DVector::from_vec(x_k), &y_t)
    }

    /// `log p(x_J, y_S | x_K, y_T)` with `x_L` integrated and `y_U` summed
    /// out, evaluated through the conditional mixture: weights
    /// `pi_{R1}(Sigma_{(J+L)|K}) exp(1ᵀ G Sigma_{IK} Sigma_KK⁻¹ (x_K - mu_K))`
    /// and Gaussian factor with covariance `Sigma_{J|K}`.
    pub fn conditional_logpdf(
        &self,
        part: &IndexPartition,
        x_j: &DVector<f64>,
        y_s: &[bool],
        x_k: &DVector<f64>,
        y_t: &[bool],
    ) -> Result<f64> {
        let (p, q) = (self.p(), self.q());
        part.check(p, q)?;
        check_enumeration(q)?;
        let j = part.cont_query();
        let l = part.cont_latent();
        let k = part.cont_observed();
        let s_idx = part.bin_query();
        let t_idx = part.bin_observed();
        check_len("x_J", j.len(), x_j)?;
        check_len("x_K", k.len(), x_k)?;
        let (care_t, val_t) = fixed_bits(&t_idx, y_t)?;
        let (care_s, val_s) = fixed_bits(&s_idx, y_s)?;

        let table = self.table()?;
        let sigma = self.sigma.as_matrix();

        // shift = Sigma_{IK} Sigma_KK⁻¹ (x_K - mu_K), a p-vector
        let shift = if k.is_empty() {
            DVector::zeros(p)
        } else {
            let kk = self.sigma.block(&k, &k);
            let inv = sym_inverse(&kk, || format!("Sigma_KK {k:?}"))?;
            let all: Vec<usize> = (0..p).collect();
            let s_ik = crate::numerics::submatrix(sigma, &all, &k);
            s_ik * (inv * (x_k - subvector(&self.mu, &k)))
        };
        let mut jl: Vec<usize> = j.iter().chain(&l).copied().collect();
        jl.sort_unstable();
        let s_jl = schur_complement(&self.sigma, &jl, &k)?;
        let g_jl = DMatrix::from_fn(q, jl.len(), |r, c| self.g[(r, jl[c])]);
        let quad = &g_jl * s_jl.as_matrix() * g_jl.transpose();
        let g_shift = &self.g * &shift;

        // positions of J inside the sorted J+L list
        let j_pos: Vec<usize> = j.iter().map(|a| jl.iter().position(|b| b == a).unwrap()).collect();
        let cross = DMatrix::from_fn(j.len(), jl.len(), |r, c| s_jl[(j_pos[r], c)]);
        let cond_cov = DMatrix::from_fn(j.len(), j.len(), |r, c| s_jl[(j_pos[r], j_pos[c])]);
        let kernel = GaussianKernel::new(&cond_cov, "Sigma_{J|K}")?;
        let base_j = subvector(&self.mu, &j) + subvector(&shift, &j);

        let mut num = Vec::new();
        let mut den = Vec::new();
        for bits in 0..table.len() as u32 {
            if bits & care_t != val_t {
                continue;
            }
            let y = BitMask::from_bits_unchecked(bits, q);
            let ones = y.ones();
            let mut e = 0.0;
            for &a in &ones {
                e += g_shift[a];
                for &b in &ones {
                    e += 0.5 * quad[(a, b)];
                }
            }
            let lw = table.log_minors[bits as usize] + e;
            den.push(lw);
            if bits & care_s != val_s {
                continue;
            }
            if j.is_empty() {
                num.push(lw);
            } else {
                let mut h = DVector::zeros(jl.len());
                for &a in &ones {
                    for c in 0..jl.len() {
                        h[c] += g_jl[(a, c)];
                    }
                }
                let mean = &base_j + &cross * h;
                num.push(lw + kernel.log_density(&(x_j - mean)));
            }
        }
        Ok(logsumexp(&num) - logsumexp(&den))
    }

    /// `log p(y_S | x, y_T)` when every continuous variable is observed,
    /// as a Grassmann distribution with kernel
    /// `(Lambda-I)_{S|T0} diag(exp(-g_s·(x-mu)))`.
    pub fn conditional_binary_logpmf(
        &self,
        part: &IndexPartition,
        y_s: &[bool],
        x: &DVector<f64>,
        y_t: &[bool],
    ) -> Result<f64> {
        let (p, q) = (self.p(), self.q());
        part.check(p, q)?;
        if part.cont_observed().len() != p {
            return Err(Error::InvalidPartition("all continuous variables must be observed".into()));
        }
        if !part.bin_latent().is_empty() {
            return Err(Error::InvalidPartition("binary variables must be query or observed".into()));
        }
        check_len("x", p, x)?;
        let s_idx = part.bin_query();
        let t_idx = part.bin_observed();
        if y_s.len() != s_idx.len() {
            return Err(Error::dims("y_S", s_idx.len(), y_s.len()));
        }
        if y_t.len() != t_idx.len() {
            return Err(Error::dims("y_T", t_idx.len(), y_t.len()));
        }
        let t0: Vec<usize> = t_idx.iter().zip(y_t).filter(|(_, &v)| !v).map(|(&i, _)| i).collect();
        let a = self.conditional_kernel(&s_idx, &t0)?;
        let r = x - &self.mu;
        let scale = DVector::from_fn(s_idx.len(), |i, _| (-self.g.row(s_idx[i]).transpose().dot(&r)).exp());
        let ns = s_idx.len();
        let b = DMatrix::from_fn(ns, ns, |i, j| a[(i, j)] * scale[j]);
        let s0: Vec<usize> = (0..ns).filter(|&i| !y_s[i]).collect();
        let num = crate::numerics::submatrix(&b, &s0, &s0).lu().determinant();
        let den = (DMatrix::identity(ns, ns) + &b).lu().determinant();
        let num = if s0.is_empty() { 1.0 } else { num };
        if num <= 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        Ok(num.ln() - den.ln())
    }

    /// `(Lambda - I)_{S|T0} = Lambda_SS - I - Lambda_{S,T0} (Lambda_{T0,T0} - I)⁻¹ Lambda_{T0,S}`.
    fn conditional_kernel(&self, s_idx: &[usize], t0: &[usize]) -> Result<DMatrix<f64>> {
        let m = self.lambda_minus_identity();
        let mss = crate::numerics::submatrix(&m, s_idx, s_idx);
        if t0.is_empty() {
            return Ok(mss);
        }
        let mtt = crate::numerics::submatrix(&m, t0, t0);
        let inv = mtt
            .lu()
            .try_inverse()
            .ok_or_else(|| Error::Singular { block: format!("Lambda_T0T0 - I {t0:?}") })?;
        let mst = crate::numerics::submatrix(&m, s_idx, t0);
        let mts = crate::numerics::submatrix(&m, t0, s_idx);
        Ok(mss - mst * inv * mts)
    }

    /// Exact ancestral draws: configuration from the mixing weights, then
    /// `x` from the matching Gaussian component.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Vec<(DVector<f64>, BitMask)>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_with(n, &mut rng)
    }

    pub fn sample_with<R: Rng>(&self, n: usize, rng: &mut R) -> Result<Vec<(DVector<f64>, BitMask)>> {
        let table = self.table()?;
        let q = self.q();
        let p = self.p();
        let cdf = cumulative(&table.log_weights);
        let l = self.sigma.cholesky().map(|c| c.l()).unwrap_or_else(|| DMatrix::zeros(0, 0));
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let u: f64 = rng.random();
            let bits = pick(&cdf, u);
            let eps = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
            let x = table.means.column(bits) + &l * eps;
            out.push((x, BitMask::from_bits_unchecked(bits as u32, q)));
        }
        Ok(out)
    }

    /// Exact moments by enumeration over the mixture.
    pub fn moments(&self) -> Result<Moments> {
        let table = self.table()?;
        let (p, q) = (self.p(), self.q());
        let (mean_y, second_y) = binary_moments(&table.log_weights, q);
        let cov_yy = &second_y - &mean_y * mean_y.transpose();
        let sg = self.sigma.as_matrix() * self.g.transpose();
        let mean_x = &self.mu + &sg * &mean_y;
        let cov_xy = &sg * &cov_yy;
        let cov_xx = self.sigma.as_matrix() + &cov_xy * sg.transpose();
        debug_assert_eq!(cov_xx.nrows(), p);
        Ok(Moments {
            mean_y,
            second_y,
            mean_x,
            cov_xx: symmetrize(cov_xx),
            cov_xy,
            cov_yy: symmetrize(cov_yy),
        })
    }

    /// Pearson correlation matrix over `(x, y)` (continuous first).
    pub fn pearson_correlations(&self) -> Result<DMatrix<f64>> {
        self.moments()?.correlations()
    }

    /// Partial correlation of `x_j` and `x_k` given all other variables.
    pub fn partial_correlation_xx(&self, j: usize, k: usize) -> Result<f64> {
        let p = self.p();
        if j >= p || k >= p || j == k {
            return Err(Error::InvalidPartition(format!("need two distinct continuous indices < {p}")));
        }
        let rest: Vec<usize> = (0..p).filter(|&i| i != j && i != k).collect();
        let s = schur_complement(&self.sigma, &[j, k], &rest)?;
        Ok(s[(0, 1)] / (s[(0, 0)] * s[(1, 1)]).sqrt())
    }

    /// Partial correlation of `y_s` and `y_t` given all of `x` and the other
    /// binary variables (`y_rest` in ascending index order).
    pub fn partial_correlation_yy(&self, s: usize, t: usize, x: &DVector<f64>, y_rest: &[bool]) -> Result<f64> {
        let (p, q) = (self.p(), self.q());
        if s >= q || t >= q || s == t {
            return Err(Error::InvalidPartition(format!("need two distinct binary indices < {q}")));
        }
        let mut bin = vec![Role::Observed; q];
        bin[s] = Role::Query;
        bin[t] = Role::Query;
        let part = IndexPartition::new(vec![Role::Observed; p], bin);
        // y_S values are ordered by index
        let lo_is_s = s < t;
        let mut prob = [[0.0; 2]; 2];
        for (a, row) in prob.iter_mut().enumerate() {
            for (b, cell) in row.iter_mut().enumerate() {
                let (ys, yt) = (a == 1, b == 1);
                let vals = if lo_is_s { [ys, yt] } else { [yt, ys] };
                *cell = self.conditional_binary_logpmf(&part, &vals, x, y_rest)?.exp();
            }
        }
        let es = prob[1][0] + prob[1][1];
        let et = prob[0][1] + prob[1][1];
        let cov = prob[1][1] - es * et;
        let var = es * (1.0 - es) * et * (1.0 - et);
        if !(var > 0.0) {
            return Err(Error::Degenerate("conditional binary variance is zero".into()));
        }
        Ok(cov / var.sqrt())
    }

    /// Partial correlation of `x_j` and `y_s` given the remaining continuous
    /// values `x_rest` and binary values `y_rest` (both ascending index order).
    pub fn partial_correlation_xy(&self, j: usize, s: usize, x_rest: &DVector<f64>, y_rest: &[bool]) -> Result<f64> {
        let (p, q) = (self.p(), self.q());
        if j >= p || s >= q {
            return Err(Error::InvalidPartition("index out of range".into()));
        }
        let mut cont = vec![Role::Observed; p];
        cont[j] = Role::Latent;
        let mut bin = vec![Role::Observed; q];
        bin[s] = Role::Query;
        let part = IndexPartition::new(cont, bin);
        let e = self
            .conditional_logpdf(&part, &DVector::zeros(0), &[true], x_rest, y_rest)?
            .exp();
        let var_y = e * (1.0 - e);
        if !(var_y > 0.0) {
            return Err(Error::Degenerate("conditional binary variance is zero".into()));
        }
        let rest: Vec<usize> = (0..p).filter(|&i| i != j).collect();
        let cond = schur_complement(&self.sigma, &[j], &rest)?[(0, 0)];
        let slope = cond * self.g[(s, j)];
        Ok((var_y / (cond + var_y * slope * slope)).sqrt() * slope)
    }

    pub fn to_file(&self) -> GGParamsFile {
        GGParamsFile {
            p: self.p(),
            q: self.q(),
            mu: self.mu.as_slice().to_vec(),
            sigma: row_major(self.sigma.as_matrix()),
            lambda: row_major(&self.lambda),
            g: row_major(&self.g),
        }
    }

    pub fn from_file(f: &GGParamsFile) -> Result<Self> {
        let (p, q) = (f.p, f.q);
        if f.mu.len() != p {
            return Err(Error::dims("mu", p, f.mu.len()));
        }
        if f.lambda.len() != q * q {
            return Err(Error::dims("lambda entries", q * q, f.lambda.len()));
        }
        if f.g.len() != q * p {
            return Err(Error::dims("g entries", q * p, f.g.len()));
        }
        GGParams::new(
            DVector::from_column_slice(&f.mu),
            SymMatrix::from_row_slice(p, &f.sigma)?,
            DMatrix::from_row_slice(q, q, &f.lambda),
            DMatrix::from_row_slice(q, p, &f.g),
        )
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: GGParamsFile = serde_json::from_str(s)?;
        Self::from_file(&f)
    }
}

pub(crate) fn diag_dominant_lambda(log_excess: &DVector<f64>, offdiag: &DMatrix<f64>) -> DMatrix<f64> {
    let q = log_excess.len();
    let mut lambda = DMatrix::zeros(q, q);
    for i in 0..q {
        let mut off = 0.0;
        for k in 0..q {
            if k != i {
                lambda[(i, k)] = offdiag[(i, k)];
                off += offdiag[(i, k)].abs();
            }
        }
        lambda[(i, i)] = 1.0 + log_excess[i].exp() + off;
    }
    lambda
}

pub(crate) fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

pub(crate) fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

fn cumulative(log_weights: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    log_weights
        .iter()
        .map(|lw| {
            acc += lw.exp();
            acc
        })
        .collect()
}

fn pick(cdf: &[f64], u: f64) -> usize {
    let total = *cdf.last().unwrap_or(&1.0);
    let target = u * total;
    cdf.iter().position(|&c| target < c).unwrap_or(cdf.len() - 1)
}

/// `E[y]` and `E[y yᵀ]` of a distribution over `2^q` configurations.
pub(crate) fn binary_moments(log_weights: &[f64], q: usize) -> (DVector<f64>, DMatrix<f64>) {
    let mut mean = DVector::zeros(q);
    let mut second = DMatrix::zeros(q, q);
    for (bits, lw) in log_weights.iter().enumerate() {
        let w = lw.exp();
        if w == 0.0 {
            continue;
        }
        let y = BitMask::from_bits_unchecked(bits as u32, q);
        let ones = y.ones();
        for &a in &ones {
            mean[a] += w;
            for &b in &ones {
                second[(a, b)] += w;
            }
        }
    }
    (mean, second)
}

/// Mean and covariance blocks of `(x, y)`.
#[derive(Debug, Clone)]
pub struct Moments {
    pub mean_y: DVector<f64>,
    pub second_y: DMatrix<f64>,
    pub mean_x: DVector<f64>,
    pub cov_xx: DMatrix<f64>,
    pub cov_xy: DMatrix<f64>,
    pub cov_yy: DMatrix<f64>,
}

impl Moments {
    /// Joint covariance matrix over `(x, y)`, continuous block first.
    pub fn joint_covariance(&self) -> DMatrix<f64> {
        let p = self.mean_x.len();
        let q = self.mean_y.len();
        let mut c = DMatrix::zeros(p + q, p + q);
        c.view_mut((0, 0), (p, p)).copy_from(&self.cov_xx);
        c.view_mut((0, p), (p, q)).copy_from(&self.cov_xy);
        c.view_mut((p, 0), (q, p)).copy_from(&self.cov_xy.transpose());
        c.view_mut((p, p), (q, q)).copy_from(&self.cov_yy);
        c
    }

    pub fn correlations(&self) -> Result<DMatrix<f64>> {
        covariance_to_correlation(&self.joint_covariance())
    }
}

pub fn covariance_to_correlation(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = cov.nrows();
    let sd: Vec<f64> = (0..n).map(|i| cov[(i, i)].sqrt()).collect();
    if let Some(i) = sd.iter().position(|s| !(*s > 0.0)) {
        return Err(Error::Degenerate(format!("variable {i} has zero variance")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0
        } else {
            cov[(i, j)] / (sd[i] * sd[j])
        }
    }))
}

/// JSON layout of [`GGParams`]; matrices are row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GGParamsFile {
    pub p: usize,
    pub q: usize,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub lambda: Vec<f64>,
    pub g: Vec<f64>,
}

impl From<GGParams> for GGParamsFile {
    fn from(p: GGParams) -> Self {
        p.to_file()
    }
}

impl TryFrom<GGParamsFile> for GGParams {
    type Error = Error;

    fn try_from(f: GGParamsFile) -> Result<Self> {
        GGParams::from_file(&f)
    }
}
