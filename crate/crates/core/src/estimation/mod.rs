//! Maximum-likelihood fitting of factor models and GG parameters, BIC model
//! selection over the latent dimension.

mod chart;
mod lbfgs;
mod objective;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use chart::{Block, Chart, ParamVector};
pub use lbfgs::Termination;

use crate::data::MixedDataset;
use crate::error::{Error, Result};
use crate::factor::{FactorModel, LoadingSummary};
use crate::gg::GGParams;
use crate::numerics::{sym_eigen_desc, SymMatrix};
use objective::{evaluate, Prepared};

const RESTART_STRIDE: u64 = 0x9E37_79B9_7F4A_7C15;
const LBFGS_MEMORY: usize = 10;

/// Anything whose negative log-likelihood can be evaluated on a dataset.
pub trait Likelihood {
    fn nll(&self, data: &MixedDataset) -> Result<f64>;
}

impl Likelihood for FactorModel {
    fn nll(&self, data: &MixedDataset) -> Result<f64> {
        check_dims(data, self.p_x(), self.q())?;
        let mut total = 0.0;
        for i in 0..data.n_rows() {
            total -= data.count(i) as f64 * self.observed_logpdf_missing(data.x_row(i), data.y_row(i))?;
        }
        Ok(total)
    }
}

impl Likelihood for GGParams {
    fn nll(&self, data: &MixedDataset) -> Result<f64> {
        check_dims(data, self.p(), self.q())?;
        let mut total = 0.0;
        for i in 0..data.n_rows() {
            total -= data.count(i) as f64 * self.observed_logpdf_missing(data.x_row(i), data.y_row(i))?;
        }
        Ok(total)
    }
}

impl Likelihood for ParamVector {
    fn nll(&self, data: &MixedDataset) -> Result<f64> {
        Ok(evaluate(&Prepared::new(data)?, self, false)?.0)
    }
}

/// Negative log-likelihood summed over rows (weighted by row counts).
pub fn nll<M: Likelihood + ?Sized>(model: &M, data: &MixedDataset) -> Result<f64> {
    model.nll(data)
}

/// Analytic gradient of [`nll`] in the chart coordinates of `params`.
pub fn nll_gradient(params: &ParamVector, data: &MixedDataset) -> Result<Vec<f64>> {
    let (_, g) = evaluate(&Prepared::new(data)?, params, true)?;
    Ok(g.expect("gradient requested"))
}

fn check_dims(data: &MixedDataset, p: usize, q: usize) -> Result<()> {
    if data.p_x() != p || data.q() != q {
        return Err(Error::dims("dataset columns", p + q, data.p_x() + data.q()));
    }
    Ok(())
}

/// Starting point of restart 0.
#[derive(Debug, Clone, Default, PartialEq)]
pub enum Init {
    /// Moment-matched start; factor loadings from principal components of
    /// the empirical correlation matrix.
    #[default]
    Moments,
    /// Start from the given coordinates; later restarts use the default
    /// randomized starts.
    Params(ParamVector),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub seed: u64,
    pub restarts: usize,
    pub max_iter: usize,
    /// Convergence threshold on the sup-norm of the per-observation
    /// gradient (`nll / n`).
    pub tol: f64,
    /// Relative objective decrease below which an iteration counts as flat
    /// unless the gradient sup-norm reaches a new low; ten flat iterations
    /// in a row stop the run without convergence.
    pub ftol: f64,
    pub init: Init,
    /// GG fits only: hold `G` at zero.
    pub fix_g_zero: bool,
}

impl FitOptions {
    pub fn new(seed: u64) -> Self {
        FitOptions {
            seed,
            restarts: 5,
            max_iter: 1000,
            tol: 1e-6,
            ftol: 1e-10,
            init: Init::Moments,
            fix_g_zero: false,
        }
    }
}

/// The fitted model of either family.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "snake_case")]
pub enum FittedModel {
    Factor(FactorModel),
    Gg(GGParams),
}

impl FittedModel {
    pub fn as_factor(&self) -> Option<&FactorModel> {
        match self {
            FittedModel::Factor(m) => Some(m),
            FittedModel::Gg(_) => None,
        }
    }

    pub fn as_gg(&self) -> Option<&GGParams> {
        match self {
            FittedModel::Gg(p) => Some(p),
            FittedModel::Factor(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartRecord {
    pub seed: u64,
    pub nll: f64,
    pub grad_sup_norm: f64,
    pub iterations: usize,
    pub termination: Termination,
    /// Total `nll` after every accepted step.
    pub history: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub model: FittedModel,
    /// Coordinates of `model` (after rotation fixing for factor models).
    pub params: ParamVector,
    pub nll: f64,
    /// Sup-norm of the per-observation gradient where the optimizer stopped.
    pub grad_sup_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub termination: Termination,
    pub n_obs: u64,
    pub n_params: usize,
    pub bic: f64,
    pub seed: u64,
    pub tol: f64,
    pub ftol: f64,
    pub max_iter: usize,
    pub best_restart: usize,
    pub restarts: Vec<RestartRecord>,
    pub loadings: Option<LoadingSummary>,
    /// Model-implied Pearson correlations over `(x, y)`, continuous first.
    #[serde(with = "crate::numerics::serde_rows::option")]
    pub model_correlations: Option<DMatrix<f64>>,
    /// The same computed from the complete rows of the data.
    #[serde(with = "crate::numerics::serde_rows::option")]
    pub empirical_correlations: Option<DMatrix<f64>>,
}

impl FitReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// `2 nll + k ln n`.
pub fn bic(nll: f64, n_params: usize, n_obs: u64) -> f64 {
    2.0 * nll + n_params as f64 * (n_obs as f64).ln()
}

/// Free parameters of a norm-constrained, rotation-fixed factor model.
pub fn factor_param_count(p_x: usize, q: usize, p_z: usize) -> usize {
    let rows = p_x + q;
    2 * p_x + q + 1 + p_z * rows - rows - p_z * (p_z - 1) / 2
}

pub fn gg_param_count(p: usize, q: usize, fix_g_zero: bool) -> usize {
    p + p * (p + 1) / 2 + q * q + if fix_g_zero { 0 } else { q * p }
}

/// Fit a factor model with `p_z` latent dimensions.
pub fn fit(data: &MixedDataset, p_z: usize, opts: &FitOptions) -> Result<FitReport> {
    if p_z == 0 {
        return Err(Error::InvalidParameter("p_z must be at least 1".into()));
    }
    crate::numerics::check_enumeration(data.q())?;
    data.check_degenerate()?;
    let chart = Chart::Factor {
        p_x: data.p_x(),
        q: data.q(),
        p_z,
    };
    let prep = Prepared::new(data)?;
    let start = FactorStart::new(data, p_z);
    let best = run_restarts(&prep, chart, opts, |i, rng| match (&opts.init, i) {
        (Init::Params(pv), 0) => Ok(pv.clone()),
        (_, 0) => start.pca(data).or_else(|_| start.random(rng)),
        _ => start.random(rng),
    })?;
    let (model, summary) = best.pv.unpack_factor()?.fix_rotation()?;
    let params = ParamVector::pack_factor(&model)?;
    let model_corr = model.pearson_correlations().ok();
    finish(
        data,
        best,
        params,
        FittedModel::Factor(model),
        factor_param_count(data.p_x(), data.q(), p_z),
        Some(summary),
        model_corr,
        opts,
    )
}

/// Fit `(mu, Sigma, Lambda, G)` of the joint distribution.
pub fn fit_gg(data: &MixedDataset, opts: &FitOptions) -> Result<FitReport> {
    crate::numerics::check_enumeration(data.q())?;
    data.check_degenerate()?;
    let (p, q) = (data.p_x(), data.q());
    let chart = Chart::Gg {
        p,
        q,
        fix_g_zero: opts.fix_g_zero,
    };
    let prep = Prepared::new(data)?;
    let (mean, var) = data.continuous_moments();
    let cov = complete_covariance(data, &mean).unwrap_or_else(|| DMatrix::from_diagonal(&var));
    let freq = data.binary_frequencies();
    let best = run_restarts(&prep, chart, opts, |i, rng| {
        if let (Init::Params(pv), 0) = (&opts.init, i) {
            return Ok(pv.clone());
        }
        let log_excess = freq.map(|f| ((1.0 - f) / f).ln().clamp(-10.0, 10.0));
        let mut g = DMatrix::zeros(q, p);
        if i > 0 && !opts.fix_g_zero {
            for j in 0..q {
                for k in 0..p {
                    let z: f64 = rng.sample(StandardNormal);
                    g[(j, k)] = 0.1 * z / var[k].sqrt();
                }
            }
        }
        let params = GGParams::from_diag_dominant(
            mean.clone(),
            SymMatrix::new(cov.clone())?,
            &log_excess,
            &DMatrix::zeros(q, q),
            g,
        )?;
        ParamVector::pack_gg(&params, opts.fix_g_zero)
    })?;
    let params = best.pv.unpack_gg()?;
    let model_corr = params.pearson_correlations().ok();
    finish(
        data,
        best.clone(),
        best.pv.clone(),
        FittedModel::Gg(params),
        gg_param_count(p, q, opts.fix_g_zero),
        None,
        model_corr,
        opts,
    )
}

/// Continuous-only factor model on the data with binary columns recoded as
/// numeric 0/1.
pub fn quantification_baseline(data: &MixedDataset, p_z: usize, opts: &FitOptions) -> Result<FitReport> {
    fit(&data.quantified(), p_z, opts)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DimCandidate {
    pub p_z: usize,
    pub nll: f64,
    pub n_params: usize,
    pub bic: f64,
    pub converged: bool,
    pub termination: Termination,
    /// Diverged fits do not take part in the selection.
    pub excluded: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DimSelection {
    pub best: usize,
    pub table: Vec<DimCandidate>,
    pub reports: Vec<FitReport>,
}

impl DimSelection {
    pub fn best_report(&self) -> &FitReport {
        let i = self.table.iter().position(|c| c.p_z == self.best).expect("best is a candidate");
        &self.reports[i]
    }
}

/// Fit every candidate dimension and pick the smallest BIC; ties go to the
/// smaller `p_z`.
pub fn select_dim(data: &MixedDataset, candidates: &[usize], opts: &FitOptions) -> Result<DimSelection> {
    if candidates.is_empty() {
        return Err(Error::InvalidParameter("no candidate dimensions".into()));
    }
    let mut sorted = candidates.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut table = Vec::new();
    let mut reports = Vec::new();
    for &p_z in &sorted {
        let r = fit(data, p_z, opts)?;
        table.push(DimCandidate {
            p_z,
            nll: r.nll,
            n_params: r.n_params,
            bic: r.bic,
            converged: r.converged,
            termination: r.termination,
            excluded: r.termination == Termination::Diverged || !r.bic.is_finite(),
        });
        reports.push(r);
    }
    let best = table
        .iter()
        .filter(|c| !c.excluded)
        .fold(None::<&DimCandidate>, |acc, c| match acc {
            Some(a) if a.bic <= c.bic => Some(a),
            _ => Some(c),
        })
        .ok_or_else(|| Error::Degenerate("every candidate fit diverged".into()))?
        .p_z;
    Ok(DimSelection { best, table, reports })
}

// ---------------------------------------------------------------------------

#[derive(Clone)]
struct BestRun {
    pv: ParamVector,
    nll: f64,
    grad_sup: f64,
    iterations: usize,
    termination: Termination,
    index: usize,
    records: Vec<RestartRecord>,
}

fn run_restarts<F>(prep: &Prepared, chart: Chart, opts: &FitOptions, mut start: F) -> Result<BestRun>
where
    F: FnMut(usize, &mut ChaCha8Rng) -> Result<ParamVector>,
{
    if opts.restarts == 0 {
        return Err(Error::InvalidParameter("restarts must be at least 1".into()));
    }
    let n = prep.n_total();
    let lopts = lbfgs::LbfgsOptions {
        max_iter: opts.max_iter,
        gtol: opts.tol,
        ftol: opts.ftol,
        memory: LBFGS_MEMORY,
    };
    let mut best: Option<BestRun> = None;
    let mut records = Vec::with_capacity(opts.restarts);
    for i in 0..opts.restarts {
        let seed = opts.seed.wrapping_add((i as u64).wrapping_mul(RESTART_STRIDE));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x0 = start(i, &mut rng)?;
        if x0.chart != chart {
            return Err(Error::InvalidParameter("initial parameters use a different chart".into()));
        }
        let res = lbfgs::minimize(x0.values, &lopts, |x| {
            let pv = ParamVector { chart, values: x.to_vec() };
            let (f, g) = evaluate(prep, &pv, true).ok()?;
            Some((f / n, g?.into_iter().map(|v| v / n).collect()))
        });
        let grad_sup = res.grad.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let nll = res.f * n;
        records.push(RestartRecord {
            seed,
            nll,
            grad_sup_norm: grad_sup,
            iterations: res.iterations,
            termination: res.termination,
            history: res.history.iter().map(|f| f * n).collect(),
        });
        let better = match &best {
            None => true,
            Some(b) => {
                let b_div = b.termination == Termination::Diverged;
                let r_div = res.termination == Termination::Diverged;
                (b_div && !r_div) || (b_div == r_div && nll < b.nll)
            }
        };
        if better {
            best = Some(BestRun {
                pv: ParamVector { chart, values: res.x },
                nll,
                grad_sup,
                iterations: res.iterations,
                termination: res.termination,
                index: i,
                records: Vec::new(),
            });
        }
    }
    let mut best = best.expect("at least one restart");
    best.records = records;
    Ok(best)
}

#[allow(clippy::too_many_arguments)]
fn finish(
    data: &MixedDataset,
    best: BestRun,
    params: ParamVector,
    model: FittedModel,
    n_params: usize,
    loadings: Option<LoadingSummary>,
    model_correlations: Option<DMatrix<f64>>,
    opts: &FitOptions,
) -> Result<FitReport> {
    let n_obs = data.n_total();
    Ok(FitReport {
        model,
        params,
        nll: best.nll,
        grad_sup_norm: best.grad_sup,
        iterations: best.iterations,
        converged: best.termination == Termination::Converged,
        termination: best.termination,
        n_obs,
        n_params,
        bic: bic(best.nll, n_params, n_obs),
        seed: opts.seed,
        tol: opts.tol,
        ftol: opts.ftol,
        max_iter: opts.max_iter,
        best_restart: best.index,
        restarts: best.records,
        loadings,
        model_correlations,
        empirical_correlations: data.pearson_correlations().ok(),
    })
}

/// Moment-based pieces shared by every factor-model start.
struct FactorStart {
    mean: DVector<f64>,
    var: DVector<f64>,
    b: DVector<f64>,
    p_z: usize,
    log_c: f64,
}

impl FactorStart {
    fn new(data: &MixedDataset, p_z: usize) -> Self {
        let (mean, var) = data.continuous_moments();
        let b = data.binary_frequencies().map(|f| (f / (1.0 - f)).ln().clamp(-10.0, 10.0));
        let log_c = match data.pearson_correlations().ok().and_then(|r| SymMatrix::new(r).ok()) {
            Some(r) => {
                let e = sym_eigen_desc(&r);
                let d = r.dim() as f64;
                let h: f64 = e.values.iter().take(p_z).map(|v| v.max(0.0)).sum::<f64>() / d;
                let h = h.clamp(1e-3, 1.0 - 1e-3);
                (h / (1.0 - h)).ln().clamp(-3.0, 3.0)
            }
            None => 0.0,
        };
        FactorStart {
            mean,
            var,
            b,
            p_z,
            log_c,
        }
    }

    fn pack(&self, w: DMatrix<f64>, g: DMatrix<f64>) -> Result<ParamVector> {
        let c = self.log_c.exp();
        let psi = self.var.map(|v| v / (1.0 + c));
        let model = FactorModel::new(self.mean.clone(), psi, self.b.clone(), w, g, c)?;
        ParamVector::pack_factor(&model)
    }

    fn random(&self, rng: &mut ChaCha8Rng) -> Result<ParamVector> {
        let (p_x, q) = (self.mean.len(), self.b.len());
        let mut draw = |rows| DMatrix::from_fn(rows, self.p_z, |_, _| rng.sample::<f64, _>(StandardNormal));
        let w = draw(p_x);
        let g = draw(q);
        self.pack(w, g)
    }

    /// Leading eigenvectors of the empirical correlation matrix, scaled by
    /// the root eigenvalues.
    fn pca(&self, data: &MixedDataset) -> Result<ParamVector> {
        let (p_x, q) = (self.mean.len(), self.b.len());
        let r = SymMatrix::new(data.pearson_correlations()?)?;
        let e = sym_eigen_desc(&r);
        let k = self.p_z.min(p_x + q);
        let mut l = DMatrix::from_fn(p_x + q, self.p_z, |i, s| {
            if s < k {
                e.vectors[(i, s)] * e.values[s].max(0.0).sqrt()
            } else {
                0.0
            }
        });
        for i in 0..p_x + q {
            if l.row(i).norm() < 1e-8 {
                // padding dimension or an uncorrelated variable
                let s = i % self.p_z;
                l[(i, s)] = 1.0;
            }
        }
        self.pack(l.rows(0, p_x).into_owned(), l.rows(p_x, q).into_owned())
    }
}

/// Weighted covariance of the continuous block over rows where every
/// continuous cell is present.
fn complete_covariance(data: &MixedDataset, mean: &DVector<f64>) -> Option<DMatrix<f64>> {
    let p = data.p_x();
    let mut total = 0.0;
    let mut s = DMatrix::zeros(p, p);
    for i in 0..data.n_rows() {
        let row = data.x_row(i);
        if row.iter().all(Option::is_some) {
            let x = DVector::from_iterator(p, row.iter().map(|v| v.unwrap())) - mean;
            let c = data.count(i) as f64;
            total += c;
            s += &x * x.transpose() * c;
        }
    }
    if total < 2.0 {
        return None;
    }
    let s = s / total;
    s.clone().cholesky().map(|_| s)
}
