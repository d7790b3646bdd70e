//! Unconstrained coordinates for the two model families.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factor::FactorModel;
use crate::gg::{diag_dominant_lambda, GGParams};
use crate::numerics::SymMatrix;

/// Layout of a [`ParamVector`].
///
/// * `Factor`: `mu_x`, `log psi`, `b`, free rows of `W̃` (row-major), free
///   rows of `G̃`, `log c`.
/// * `Gg`: `mu`, lower Cholesky factor of `Sigma` row by row with the
///   diagonal on log scale, `log(Lambda_jj - 1 - sum_k |Lambda_jk|)`, the
///   off-diagonal of `Lambda` row-major, then `G` row-major unless fixed at 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Chart {
    Factor { p_x: usize, q: usize, p_z: usize },
    Gg { p: usize, q: usize, fix_g_zero: bool },
}

/// Named contiguous block of coordinates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub name: &'static str,
    pub offset: usize,
    pub len: usize,
}

impl Chart {
    pub fn blocks(&self) -> Vec<Block> {
        let sizes: Vec<(&'static str, usize)> = match *self {
            Chart::Factor { p_x, q, p_z } => vec![
                ("mu_x", p_x),
                ("log_psi", p_x),
                ("b", q),
                ("w_free", p_x * p_z),
                ("g_free", q * p_z),
                ("log_c", 1),
            ],
            Chart::Gg { p, q, fix_g_zero } => vec![
                ("mu", p),
                ("sigma_chol", p * (p + 1) / 2),
                ("lambda_log_excess", q),
                ("lambda_offdiag", q * q.saturating_sub(1)),
                ("g", if fix_g_zero { 0 } else { q * p }),
            ],
        };
        let mut offset = 0;
        sizes
            .into_iter()
            .map(|(name, len)| {
                let b = Block { name, offset, len };
                offset += len;
                b
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.blocks().iter().map(|b| b.len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn block(&self, name: &str) -> Block {
        self.blocks().into_iter().find(|b| b.name == name).expect("known block")
    }
}

/// A flat coordinate vector plus the chart that interprets it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub chart: Chart,
    pub values: Vec<f64>,
}

impl ParamVector {
    pub fn new(chart: Chart, values: Vec<f64>) -> Result<Self> {
        if values.len() != chart.len() {
            return Err(Error::dims("parameter vector", chart.len(), values.len()));
        }
        Ok(ParamVector { chart, values })
    }

    pub fn pack_factor(model: &FactorModel) -> Result<Self> {
        if !(model.c() > 0.0) {
            return Err(Error::Degenerate("c = 0 has no log-scale coordinate".into()));
        }
        let chart = Chart::Factor {
            p_x: model.p_x(),
            q: model.q(),
            p_z: model.p_z(),
        };
        let mut v = Vec::with_capacity(chart.len());
        v.extend(model.mu_x().iter());
        v.extend(model.psi().iter().map(|p| p.ln()));
        v.extend(model.b().iter());
        v.extend(crate::gg::row_major(model.w_tilde()));
        v.extend(crate::gg::row_major(model.g_tilde()));
        v.push(model.c().ln());
        ParamVector::new(chart, v)
    }

    pub fn unpack_factor(&self) -> Result<FactorModel> {
        let Chart::Factor { p_x, q, p_z } = self.chart else {
            return Err(Error::InvalidParameter("not a factor-model chart".into()));
        };
        let v = &self.values;
        let get = |name: &str| {
            let b = self.chart.block(name);
            &v[b.offset..b.offset + b.len]
        };
        let psi = DVector::from_iterator(p_x, get("log_psi").iter().map(|t| t.exp()));
        let c = get("log_c")[0].exp();
        FactorModel::new(
            DVector::from_column_slice(get("mu_x")),
            psi,
            DVector::from_column_slice(get("b")),
            DMatrix::from_row_slice(p_x, p_z, get("w_free")),
            DMatrix::from_row_slice(q, p_z, get("g_free")),
            c,
        )
    }

    /// Fails unless `Lambda - I` is strictly row diagonally dominant with
    /// positive diagonal, the region covered by the chart.
    pub fn pack_gg(params: &GGParams, fix_g_zero: bool) -> Result<Self> {
        let (p, q) = (params.p(), params.q());
        if fix_g_zero && params.g().iter().any(|v| *v != 0.0) {
            return Err(Error::InvalidParameter("G must be zero when fixed".into()));
        }
        let chart = Chart::Gg { p, q, fix_g_zero };
        let mut v = Vec::with_capacity(chart.len());
        v.extend(params.mu().iter());
        let l = params
            .sigma()
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite { what: "Sigma".into() })?
            .l();
        for i in 0..p {
            for j in 0..=i {
                v.push(if i == j { l[(i, i)].ln() } else { l[(i, j)] });
            }
        }
        let lambda = params.lambda();
        let mut excess = Vec::with_capacity(q);
        let mut off = Vec::with_capacity(q * q.saturating_sub(1));
        for i in 0..q {
            let mut s = 0.0;
            for k in 0..q {
                if k != i {
                    off.push(lambda[(i, k)]);
                    s += lambda[(i, k)].abs();
                }
            }
            let e = lambda[(i, i)] - 1.0 - s;
            if !(e > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "Lambda row {i} is not strictly diagonally dominant over I"
                )));
            }
            excess.push(e.ln());
        }
        v.extend(excess);
        v.extend(off);
        if !fix_g_zero {
            v.extend(crate::gg::row_major(params.g()));
        }
        ParamVector::new(chart, v)
    }

    pub fn unpack_gg(&self) -> Result<GGParams> {
        let parts = GgParts::from_values(&self.chart, &self.values)?;
        GGParams::from_diag_dominant(parts.mu, SymMatrix::new(parts.sigma)?, &parts.log_excess, &parts.offdiag, parts.g)
    }
}

/// Decoded GG coordinates, kept together with the Cholesky factor needed by
/// the gradient chain rule.
pub(crate) struct GgParts {
    pub mu: DVector<f64>,
    pub chol: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
    pub log_excess: DVector<f64>,
    pub offdiag: DMatrix<f64>,
    pub lambda: DMatrix<f64>,
    pub g: DMatrix<f64>,
}

impl GgParts {
    pub fn from_values(chart: &Chart, v: &[f64]) -> Result<Self> {
        let Chart::Gg { p, q, fix_g_zero } = *chart else {
            return Err(Error::InvalidParameter("not a GG chart".into()));
        };
        if v.len() != chart.len() {
            return Err(Error::dims("parameter vector", chart.len(), v.len()));
        }
        let blocks = chart.blocks();
        let mu = DVector::from_column_slice(&v[..p]);
        let mut chol = DMatrix::zeros(p, p);
        let mut k = blocks[1].offset;
        for i in 0..p {
            for j in 0..=i {
                chol[(i, j)] = if i == j { v[k].exp() } else { v[k] };
                k += 1;
            }
        }
        let sigma = crate::gg::symmetrize(&chol * chol.transpose());
        let log_excess = DVector::from_column_slice(&v[blocks[2].offset..blocks[2].offset + q]);
        let mut offdiag = DMatrix::zeros(q, q);
        let mut k = blocks[3].offset;
        for i in 0..q {
            for j in 0..q {
                if i != j {
                    offdiag[(i, j)] = v[k];
                    k += 1;
                }
            }
        }
        let lambda = diag_dominant_lambda(&log_excess, &offdiag);
        let g = if fix_g_zero {
            DMatrix::zeros(q, p)
        } else {
            DMatrix::from_row_slice(q, p, &v[blocks[4].offset..blocks[4].offset + q * p])
        };
        if !v.iter().all(|x| x.is_finite()) || !sigma.iter().chain(lambda.iter()).all(|x| x.is_finite()) {
            return Err(Error::InvalidParameter("non-finite coordinates".into()));
        }
        Ok(GgParts {
            mu,
            chol,
            sigma,
            log_excess,
            offdiag,
            lambda,
            g,
        })
    }
}
