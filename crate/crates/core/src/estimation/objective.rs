//! Negative log-likelihoods and their analytic gradients in chart
//! coordinates.
//!
//! Complete rows are grouped by binary pattern and enter through centered
//! sufficient statistics (count, sum, scatter). Rows with missing cells are
//! evaluated one at a time by summing over completions of the missing bits,
//! in fixed-size chunks whose partial sums are combined in order so the
//! result does not depend on the thread count.

use std::collections::{BTreeMap, HashMap};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::chart::{Chart, GgParts, ParamVector};
use crate::data::MixedDataset;
use crate::error::{Error, Result};
use crate::numerics::{check_enumeration, logsumexp, submatrix, BitMask, GaussianKernel, LN_2PI};

const CHUNK: usize = 256;

/// Complete rows sharing one binary pattern, centered at `center`.
#[derive(Debug, Clone)]
struct PatternStats {
    bits: u32,
    n: f64,
    sum: DVector<f64>,
    scatter: DMatrix<f64>,
}

/// Dataset preprocessed for repeated likelihood evaluation.
#[derive(Debug, Clone)]
pub(crate) struct Prepared<'a> {
    data: &'a MixedDataset,
    center: DVector<f64>,
    groups: Vec<PatternStats>,
    partial: Vec<usize>,
    n_total: f64,
}

impl<'a> Prepared<'a> {
    pub fn new(data: &'a MixedDataset) -> Result<Self> {
        Self::build(data, true)
    }

    /// Every row through the per-row path; used to cross-check the
    /// grouped statistics.
    #[cfg(test)]
    pub fn per_row(data: &'a MixedDataset) -> Result<Self> {
        Self::build(data, false)
    }

    fn build(data: &'a MixedDataset, group: bool) -> Result<Self> {
        let (p, q) = (data.p_x(), data.q());
        check_enumeration(q)?;
        if data.n_rows() == 0 {
            return Err(Error::InvalidParameter("dataset has no rows".into()));
        }
        let (mean, _) = data.continuous_moments();
        let center = mean.map(|m| if m.is_finite() { m } else { 0.0 });
        let mut by_bits: BTreeMap<u32, PatternStats> = BTreeMap::new();
        let mut partial = Vec::new();
        for i in 0..data.n_rows() {
            if data.x_row(i).iter().all(Option::is_none) && data.y_row(i).iter().all(Option::is_none) {
                return Err(Error::NothingObserved);
            }
            match data.complete_row(i).filter(|_| group) {
                Some((x, y)) => {
                    let c = data.count(i) as f64;
                    let xc = x - &center;
                    let e = by_bits.entry(y.bits()).or_insert_with(|| PatternStats {
                        bits: y.bits(),
                        n: 0.0,
                        sum: DVector::zeros(p),
                        scatter: DMatrix::zeros(p, p),
                    });
                    e.n += c;
                    e.sum += &xc * c;
                    e.scatter += &xc * xc.transpose() * c;
                }
                None => partial.push(i),
            }
        }
        Ok(Prepared {
            data,
            center,
            groups: by_bits.into_values().collect(),
            partial,
            n_total: data.n_total() as f64,
        })
    }

    pub fn n_total(&self) -> f64 {
        self.n_total
    }

    /// Observed continuous indices, fixed bits and missing bits of a row.
    fn row_layout(&self, i: usize) -> (Vec<usize>, u32, Vec<usize>) {
        let obs = (0..self.data.p_x()).filter(|&j| self.data.x_row(i)[j].is_some()).collect();
        let mut base = 0u32;
        let mut missing = Vec::new();
        for (j, v) in self.data.y_row(i).iter().enumerate() {
            match v {
                Some(true) => base |= 1 << j,
                Some(false) => {}
                None => missing.push(j),
            }
        }
        (obs, base, missing)
    }

    fn observed_x(&self, i: usize, obs: &[usize]) -> DVector<f64> {
        DVector::from_fn(obs.len(), |r, _| self.data.x_row(i)[obs[r]].unwrap())
    }
}

/// Iterate over every completion of the missing bits.
fn completions(base: u32, missing: &[usize]) -> impl Iterator<Item = u32> + '_ {
    (0..1u32 << missing.len()).map(move |k| {
        let mut bits = base;
        for (t, &j) in missing.iter().enumerate() {
            if k >> t & 1 == 1 {
                bits |= 1 << j;
            }
        }
        bits
    })
}

fn embed(v: &DVector<f64>, idx: &[usize], n: usize) -> DVector<f64> {
    let mut out = DVector::zeros(n);
    for (k, &i) in idx.iter().enumerate() {
        out[i] = v[k];
    }
    out
}

fn add_embedded(target: &mut DMatrix<f64>, m: &DMatrix<f64>, idx: &[usize], scale: f64) {
    for (a, &i) in idx.iter().enumerate() {
        for (b, &j) in idx.iter().enumerate() {
            target[(i, j)] += scale * m[(a, b)];
        }
    }
}

/// Kernels keyed by the observed continuous pattern.
struct KernelCache<'m> {
    cov: &'m DMatrix<f64>,
    map: HashMap<Vec<usize>, (GaussianKernel, DMatrix<f64>)>,
}

impl<'m> KernelCache<'m> {
    fn new(cov: &'m DMatrix<f64>) -> Self {
        KernelCache {
            cov,
            map: HashMap::new(),
        }
    }

    fn get(&mut self, obs: &[usize]) -> Result<&(GaussianKernel, DMatrix<f64>)> {
        if !self.map.contains_key(obs) {
            let sub = submatrix(self.cov, obs, obs);
            let k = GaussianKernel::new(&sub, "observed covariance block")?;
            let inv = k.inverse();
            self.map.insert(obs.to_vec(), (k, inv));
        }
        Ok(&self.map[obs])
    }
}

fn sum_in_order<T, F>(parts: Vec<T>, mut add: F) -> Option<T>
where
    F: FnMut(&mut T, T),
{
    let mut it = parts.into_iter();
    let mut acc = it.next()?;
    for p in it {
        add(&mut acc, p);
    }
    Some(acc)
}

// ---------------------------------------------------------------------------
// factor model

/// Log-likelihood and its gradient with respect to the model quantities
/// `(mu_x, diag Psi, W, b, G)`; the covariance gradient is kept as `dS`
/// with respect to `Sigma_x` entries.
#[derive(Clone)]
struct FaAcc {
    ll: f64,
    mu: DVector<f64>,
    ds: DMatrix<f64>,
    w: DMatrix<f64>,
    b: DVector<f64>,
    g: DMatrix<f64>,
}

impl FaAcc {
    fn zeros(p: usize, q: usize, k: usize) -> Self {
        FaAcc {
            ll: 0.0,
            mu: DVector::zeros(p),
            ds: DMatrix::zeros(p, p),
            w: DMatrix::zeros(p, k),
            b: DVector::zeros(q),
            g: DMatrix::zeros(q, k),
        }
    }

    fn add(&mut self, o: FaAcc) {
        self.ll += o.ll;
        self.mu += o.mu;
        self.ds += o.ds;
        self.w += o.w;
        self.b += o.b;
        self.g += o.g;
    }
}

struct FaState {
    mu: DVector<f64>,
    psi: DVector<f64>,
    w: DMatrix<f64>,
    g: DMatrix<f64>,
    b: DVector<f64>,
    sigma_x: DMatrix<f64>,
    /// `bᵀy + ½‖Gᵀy‖²` per configuration.
    unnorm: Vec<f64>,
    shifts: DMatrix<f64>,
    log_norm: f64,
}

impl FaState {
    fn new(model: &crate::factor::FactorModel) -> Result<Self> {
        let q = model.q();
        let g = model.g();
        let n = 1usize << q;
        let mut shifts = DMatrix::zeros(model.p_z(), n);
        let mut unnorm = Vec::with_capacity(n);
        for y in BitMask::all(q)? {
            let mut h = DVector::zeros(model.p_z());
            let mut lin = 0.0;
            for a in y.ones() {
                h += g.row(a).transpose();
                lin += model.b()[a];
            }
            unnorm.push(lin + 0.5 * h.norm_squared());
            shifts.set_column(y.bits() as usize, &h);
        }
        let log_norm = logsumexp(&unnorm);
        Ok(FaState {
            mu: model.mu_x().clone(),
            psi: model.psi().clone(),
            w: model.w(),
            g,
            b: model.b().clone(),
            sigma_x: model.sigma_x(),
            unnorm,
            shifts,
            log_norm,
        })
    }
}

pub(crate) fn factor_loglik(prep: &Prepared, pv: &ParamVector, want_grad: bool) -> Result<(f64, Option<Vec<f64>>)> {
    let Chart::Factor { p_x, q, p_z } = pv.chart else {
        return Err(Error::InvalidParameter("not a factor-model chart".into()));
    };
    if prep.data.p_x() != p_x || prep.data.q() != q {
        return Err(Error::dims("dataset columns", p_x + q, prep.data.p_x() + prep.data.q()));
    }
    let model = pv.unpack_factor()?;
    let st = FaState::new(&model)?;
    let kernel = GaussianKernel::new(&st.sigma_x, "Sigma_x")?;
    let prec = kernel.inverse();
    let log_norm_x = -0.5 * (p_x as f64 * LN_2PI + kernel.log_det());

    let mut acc = FaAcc::zeros(p_x, q, p_z);
    for grp in &prep.groups {
        let y = BitMask::from_bits_unchecked(grp.bits, q);
        let h = st.shifts.column(grp.bits as usize).into_owned();
        let n = grp.n;
        let m_c = &st.mu + &st.w * &h - &prep.center;
        let sr = &grp.sum - &m_c * n;
        let r = &grp.scatter - &grp.sum * m_c.transpose() - &m_c * grp.sum.transpose() + &m_c * m_c.transpose() * n;
        acc.ll += n * st.unnorm[grp.bits as usize] + n * log_norm_x - 0.5 * prec.component_mul(&r).sum();
        if want_grad {
            let a = &prec * &sr;
            acc.ds += (&prec * &r * &prec - &prec * n) * 0.5;
            acc.mu += &a;
            acc.w += &a * h.transpose();
            let dh = &h * n + st.w.transpose() * &a;
            let yv = y.to_vector();
            acc.g += &yv * dh.transpose();
            acc.b += yv * n;
        }
    }

    let chunks: Vec<Result<FaAcc>> = prep
        .partial
        .par_chunks(CHUNK)
        .map(|rows| {
            let mut part = FaAcc::zeros(p_x, q, p_z);
            let mut cache = KernelCache::new(&st.sigma_x);
            for &i in rows {
                factor_row(prep, &st, &mut cache, i, want_grad, &mut part)?;
            }
            Ok(part)
        })
        .collect();
    let chunks = chunks.into_iter().collect::<Result<Vec<_>>>()?;
    if let Some(part) = sum_in_order(chunks, FaAcc::add) {
        acc.add(part);
    }

    let n_total = prep.n_total;
    acc.ll -= n_total * st.log_norm;
    if !want_grad {
        return Ok((-acc.ll, None));
    }
    // normalizer: E_pi[y] and E_pi[y yᵀ] G
    let (ey, eyy) = crate::gg::binary_moments(
        &st.unnorm.iter().map(|u| u - st.log_norm).collect::<Vec<_>>(),
        q,
    );
    acc.b -= ey * n_total;
    acc.g -= eyy * &st.g * n_total;
    acc.w += &acc.ds * &st.w * 2.0;

    // chain rule into chart coordinates
    let c = model.c();
    let sc = c.sqrt();
    let blocks = pv.chart.blocks();
    let mut grad = vec![0.0; pv.values.len()];
    for j in 0..p_x {
        grad[blocks[0].offset + j] = acc.mu[j];
        let dw_w: f64 = (0..p_z).map(|k| acc.w[(j, k)] * st.w[(j, k)]).sum();
        grad[blocks[1].offset + j] = st.psi[j] * acc.ds[(j, j)] + 0.5 * dw_w;
    }
    for j in 0..q {
        grad[blocks[2].offset + j] = acc.b[j];
    }
    let free_rows = |off: usize, rows: usize, dir: &DMatrix<f64>, scale: &dyn Fn(usize) -> f64, grad: &mut Vec<f64>| {
        for j in 0..rows {
            let v = DVector::from_column_slice(&pv.values[off + j * p_z..off + (j + 1) * p_z]);
            let norm = v.norm();
            let unit = &v / norm;
            let d = dir.row(j).transpose() * scale(j);
            let proj = (&d - &unit * unit.dot(&d)) / norm;
            grad[off + j * p_z..off + (j + 1) * p_z].copy_from_slice(proj.as_slice());
        }
    };
    free_rows(blocks[3].offset, p_x, &acc.w, &|j| st.psi[j].sqrt() * sc, &mut grad);
    free_rows(blocks[4].offset, q, &acc.g, &|_| sc, &mut grad);
    grad[blocks[5].offset] = 0.5 * acc.w.component_mul(&st.w).sum() + 0.5 * acc.g.component_mul(&st.g).sum();
    let _ = &st.b;
    for v in grad.iter_mut() {
        *v = -*v;
    }
    Ok((-acc.ll, Some(grad)))
}

fn factor_row(
    prep: &Prepared,
    st: &FaState,
    cache: &mut KernelCache,
    i: usize,
    want_grad: bool,
    acc: &mut FaAcc,
) -> Result<()> {
    let (obs, base, missing) = prep.row_layout(i);
    let p_x = st.mu.len();
    let q = st.b.len();
    let c = prep.data.count(i) as f64;
    let (kernel, prec) = cache.get(&obs)?;
    let x_o = prep.observed_x(i, &obs);
    let mu_o = DVector::from_fn(obs.len(), |r, _| st.mu[obs[r]]);
    let w_o = submatrix(&st.w, &obs, &(0..st.w.ncols()).collect::<Vec<_>>());
    let configs: Vec<u32> = completions(base, &missing).collect();
    let mut terms = Vec::with_capacity(configs.len());
    let mut resid = Vec::with_capacity(configs.len());
    for &bits in &configs {
        let h = st.shifts.column(bits as usize);
        let r = &x_o - &mu_o - &w_o * h;
        terms.push(st.unnorm[bits as usize] + kernel.log_density(&r));
        resid.push(r);
    }
    let ll = logsumexp(&terms);
    acc.ll += c * ll;
    if !want_grad {
        return Ok(());
    }
    let mut ds_o = DMatrix::zeros(obs.len(), obs.len());
    for ((bits, t), r) in configs.iter().zip(&terms).zip(&resid) {
        let rho = c * (t - ll).exp();
        let h = st.shifts.column(*bits as usize).into_owned();
        let a = prec * r;
        ds_o += (&a * a.transpose() - prec) * (0.5 * rho);
        let a_full = embed(&a, &obs, p_x);
        acc.mu += &a_full * rho;
        acc.w += &a_full * h.transpose() * rho;
        let dh = &h + w_o.transpose() * &a;
        let yv = BitMask::from_bits_unchecked(*bits, q).to_vector();
        acc.g += &yv * dh.transpose() * rho;
        acc.b += yv * rho;
    }
    add_embedded(&mut acc.ds, &ds_o, &obs, 1.0);
    Ok(())
}

// ---------------------------------------------------------------------------
// Gaussian × Grassmann

#[derive(Clone)]
struct GgAcc {
    ll: f64,
    mu: DVector<f64>,
    /// Gradient with respect to `Sigma` entries treated as independent.
    sigma: DMatrix<f64>,
    m: DMatrix<f64>,
    g: DMatrix<f64>,
}

impl GgAcc {
    fn zeros(p: usize, q: usize) -> Self {
        GgAcc {
            ll: 0.0,
            mu: DVector::zeros(p),
            sigma: DMatrix::zeros(p, p),
            m: DMatrix::zeros(q, q),
            g: DMatrix::zeros(q, p),
        }
    }

    fn add(&mut self, o: GgAcc) {
        self.ll += o.ll;
        self.mu += o.mu;
        self.sigma += o.sigma;
        self.m += o.m;
        self.g += o.g;
    }
}

struct Config {
    /// `log det M[R0, R0] + ½ hᵀ Sigma h`.
    unnorm: f64,
    h: DVector<f64>,
    sh: DVector<f64>,
    /// `(M[R0, R0]⁻¹)ᵀ` embedded in `q × q`.
    dlogdet: DMatrix<f64>,
}

struct GgState {
    parts: GgParts,
    configs: Vec<Config>,
    log_norm: f64,
}

impl GgState {
    fn new(parts: GgParts) -> Result<Self> {
        let q = parts.lambda.nrows();
        let m = &parts.lambda - DMatrix::identity(q, q);
        let mut configs = Vec::with_capacity(1 << q);
        for y in BitMask::all(q)? {
            let zeros = y.zeros();
            let sub = submatrix(&m, &zeros, &zeros);
            let (logdet, inv) = if zeros.is_empty() {
                (0.0, DMatrix::zeros(0, 0))
            } else {
                let lu = sub.lu();
                let det = lu.determinant();
                if !(det > 0.0) {
                    return Err(Error::InvalidParameter("nonpositive principal minor".into()));
                }
                (det.ln(), lu.try_inverse().ok_or_else(|| Error::Singular { block: "M[R0, R0]".into() })?)
            };
            let mut dlogdet = DMatrix::zeros(q, q);
            add_embedded(&mut dlogdet, &inv.transpose(), &zeros, 1.0);
            let h = parts.g.transpose() * y.to_vector();
            let sh = &parts.sigma * &h;
            configs.push(Config {
                unnorm: logdet + 0.5 * h.dot(&sh),
                h,
                sh,
                dlogdet,
            });
        }
        let log_norm = logsumexp(&configs.iter().map(|c| c.unnorm).collect::<Vec<_>>());
        Ok(GgState {
            parts,
            configs,
            log_norm,
        })
    }
}

pub(crate) fn gg_loglik(prep: &Prepared, pv: &ParamVector, want_grad: bool) -> Result<(f64, Option<Vec<f64>>)> {
    let Chart::Gg { p, q, fix_g_zero } = pv.chart else {
        return Err(Error::InvalidParameter("not a GG chart".into()));
    };
    if prep.data.p_x() != p || prep.data.q() != q {
        return Err(Error::dims("dataset columns", p + q, prep.data.p_x() + prep.data.q()));
    }
    let st = GgState::new(GgParts::from_values(&pv.chart, &pv.values)?)?;
    let sigma = &st.parts.sigma;
    let kernel = GaussianKernel::new(sigma, "Sigma")?;
    let prec = kernel.inverse();
    let log_norm_x = -0.5 * (p as f64 * LN_2PI + kernel.log_det());

    let mut acc = GgAcc::zeros(p, q);
    for grp in &prep.groups {
        let cfg = &st.configs[grp.bits as usize];
        let n = grp.n;
        let m_c = &st.parts.mu + &cfg.sh - &prep.center;
        let sr = &grp.sum - &m_c * n;
        let r = &grp.scatter - &grp.sum * m_c.transpose() - &m_c * grp.sum.transpose() + &m_c * m_c.transpose() * n;
        acc.ll += n * cfg.unnorm + n * log_norm_x - 0.5 * prec.component_mul(&r).sum();
        if want_grad {
            let a = &prec * &sr;
            acc.sigma += (&prec * &r * &prec - &prec * n) * 0.5 + &a * cfg.h.transpose() + &cfg.h * cfg.h.transpose() * (0.5 * n);
            acc.mu += &a;
            let dh = sigma * (&a + &cfg.h * n);
            let yv = BitMask::from_bits_unchecked(grp.bits, q).to_vector();
            acc.g += yv * dh.transpose();
            acc.m += &cfg.dlogdet * n;
        }
    }

    let chunks: Vec<Result<GgAcc>> = prep
        .partial
        .par_chunks(CHUNK)
        .map(|rows| {
            let mut part = GgAcc::zeros(p, q);
            let mut cache = KernelCache::new(sigma);
            for &i in rows {
                gg_row(prep, &st, &mut cache, i, want_grad, &mut part)?;
            }
            Ok(part)
        })
        .collect();
    let chunks = chunks.into_iter().collect::<Result<Vec<_>>>()?;
    if let Some(part) = sum_in_order(chunks, GgAcc::add) {
        acc.add(part);
    }

    let n_total = prep.n_total;
    acc.ll -= n_total * st.log_norm;
    if !want_grad {
        return Ok((-acc.ll, None));
    }
    for (bits, cfg) in st.configs.iter().enumerate() {
        let w = (cfg.unnorm - st.log_norm).exp() * n_total;
        if w == 0.0 {
            continue;
        }
        acc.sigma -= &cfg.h * cfg.h.transpose() * (0.5 * w);
        let yv = BitMask::from_bits_unchecked(bits as u32, q).to_vector();
        acc.g -= yv * cfg.sh.transpose() * w;
        acc.m -= &cfg.dlogdet * w;
    }

    let blocks = pv.chart.blocks();
    let mut grad = vec![0.0; pv.values.len()];
    grad[..p].copy_from_slice(acc.mu.as_slice());
    let l = &st.parts.chol;
    let dl = (&acc.sigma + acc.sigma.transpose()) * l;
    let mut k = blocks[1].offset;
    for i in 0..p {
        for j in 0..=i {
            grad[k] = if i == j { dl[(i, i)] * l[(i, i)] } else { dl[(i, j)] };
            k += 1;
        }
    }
    for i in 0..q {
        grad[blocks[2].offset + i] = acc.m[(i, i)] * st.parts.log_excess[i].exp();
    }
    let mut k = blocks[3].offset;
    for i in 0..q {
        for j in 0..q {
            if i != j {
                let o = st.parts.offdiag[(i, j)];
                grad[k] = acc.m[(i, j)] + acc.m[(i, i)] * o.signum() * if o == 0.0 { 0.0 } else { 1.0 };
                k += 1;
            }
        }
    }
    if !fix_g_zero {
        let off = blocks[4].offset;
        for i in 0..q {
            for j in 0..p {
                grad[off + i * p + j] = acc.g[(i, j)];
            }
        }
    }
    for v in grad.iter_mut() {
        *v = -*v;
    }
    Ok((-acc.ll, Some(grad)))
}

fn gg_row(prep: &Prepared, st: &GgState, cache: &mut KernelCache, i: usize, want_grad: bool, acc: &mut GgAcc) -> Result<()> {
    let (obs, base, missing) = prep.row_layout(i);
    let p = st.parts.mu.len();
    let q = st.parts.lambda.nrows();
    let c = prep.data.count(i) as f64;
    let (kernel, prec) = cache.get(&obs)?;
    let x_o = prep.observed_x(i, &obs);
    let configs: Vec<u32> = completions(base, &missing).collect();
    let mut terms = Vec::with_capacity(configs.len());
    let mut resid = Vec::with_capacity(configs.len());
    for &bits in &configs {
        let cfg = &st.configs[bits as usize];
        let r = DVector::from_fn(obs.len(), |k, _| x_o[k] - st.parts.mu[obs[k]] - cfg.sh[obs[k]]);
        terms.push(cfg.unnorm + kernel.log_density(&r));
        resid.push(r);
    }
    let ll = logsumexp(&terms);
    acc.ll += c * ll;
    if !want_grad {
        return Ok(());
    }
    let mut ds_o = DMatrix::zeros(obs.len(), obs.len());
    for ((bits, t), r) in configs.iter().zip(&terms).zip(&resid) {
        let rho = c * (t - ll).exp();
        let cfg = &st.configs[*bits as usize];
        let a = prec * r;
        ds_o += (&a * a.transpose() - prec) * (0.5 * rho);
        let a_full = embed(&a, &obs, p);
        acc.sigma += (&a_full * cfg.h.transpose() + &cfg.h * cfg.h.transpose() * 0.5) * rho;
        acc.mu += &a_full * rho;
        let dh = &st.parts.sigma * (&a_full + &cfg.h);
        let yv = BitMask::from_bits_unchecked(*bits, q).to_vector();
        acc.g += yv * dh.transpose() * rho;
        acc.m += &cfg.dlogdet * rho;
    }
    add_embedded(&mut acc.sigma, &ds_o, &obs, 1.0);
    Ok(())
}

/// `nll` (and optionally its gradient) for either chart.
pub(crate) fn evaluate(prep: &Prepared, pv: &ParamVector, want_grad: bool) -> Result<(f64, Option<Vec<f64>>)> {
    match pv.chart {
        Chart::Factor { .. } => factor_loglik(prep, pv, want_grad),
        Chart::Gg { .. } => gg_loglik(prep, pv, want_grad),
    }
}
