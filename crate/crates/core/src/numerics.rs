//! Small dense kernels shared by the distribution, factor and estimation
//! modules: symmetric matrices, Schur complements, stable log-sum-exp,
//! ordered symmetric eigendecomposition, Gauss–Hermite quadrature and
//! bit-mask enumeration of binary configurations.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Largest number of binary variables for which exact `2^q` enumeration is
/// attempted.
pub const ENUMERATION_CAP: usize = 20;

const SYMMETRY_TOL: f64 = 1e-12;

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub fn check_enumeration(q: usize) -> Result<()> {
    if q > ENUMERATION_CAP {
        Err(Error::EnumerationCap {
            q,
            cap: ENUMERATION_CAP,
        })
    } else {
        Ok(())
    }
}

/// Dense symmetric real matrix.
///
/// Construction checks symmetry to a relative tolerance of `1e-12` and then
/// stores the exactly symmetrized matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::dims("symmetric matrix columns", m.nrows(), m.ncols()));
        }
        let scale = m.iter().fold(0.0_f64, |a, v| a.max(v.abs())).max(1.0);
        let mut asym = 0.0_f64;
        for i in 0..m.nrows() {
            for j in 0..i {
                asym = asym.max((m[(i, j)] - m[(j, i)]).abs());
            }
        }
        if !(asym <= SYMMETRY_TOL * scale) {
            return Err(Error::NotSymmetric { asymmetry: asym });
        }
        let sym = (&m + m.transpose()) * 0.5;
        Ok(SymMatrix(sym))
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix(DMatrix::identity(n, n))
    }

    pub fn from_diagonal(d: &DVector<f64>) -> Self {
        SymMatrix(DMatrix::from_diagonal(d))
    }

    pub fn from_row_slice(n: usize, data: &[f64]) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::dims("symmetric matrix entries", n * n, data.len()));
        }
        SymMatrix::new(DMatrix::from_row_slice(n, n, data))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn cholesky(&self) -> Option<Cholesky<f64, Dyn>> {
        Cholesky::new(self.0.clone())
    }

    pub fn is_positive_definite(&self) -> bool {
        self.dim() == 0 || self.cholesky().is_some()
    }

    /// Principal submatrix on `idx` (in the given order).
    pub fn principal(&self, idx: &[usize]) -> SymMatrix {
        SymMatrix(submatrix(&self.0, idx, idx))
    }

    pub fn block(&self, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
        submatrix(&self.0, rows, cols)
    }
}

impl std::ops::Index<(usize, usize)> for SymMatrix {
    type Output = f64;
    fn index(&self, ij: (usize, usize)) -> &f64 {
        &self.0[ij]
    }
}

pub fn submatrix(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

pub fn subvector(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_fn(idx.len(), |i, _| v[idx[i]])
}

/// Inverse of a symmetric block, via Cholesky when it is positive definite
/// and LU otherwise.
pub(crate) fn sym_inverse(m: &DMatrix<f64>, label: impl Fn() -> String) -> Result<DMatrix<f64>> {
    if m.nrows() == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    if let Some(ch) = Cholesky::new(m.clone()) {
        return Ok(ch.inverse());
    }
    let lu = m.clone().lu();
    match lu.try_inverse() {
        Some(inv) if inv.iter().all(|v| v.is_finite()) => Ok(inv),
        _ => Err(Error::Singular { block: label() }),
    }
}

/// `S[keep,keep] - S[keep,given] S[given,given]^-1 S[given,keep]`.
pub fn schur_complement(s: &SymMatrix, keep: &[usize], given: &[usize]) -> Result<SymMatrix> {
    let n = s.dim();
    for &i in keep.iter().chain(given) {
        if i >= n {
            return Err(Error::InvalidPartition(format!("index {i} out of range for dimension {n}")));
        }
    }
    if keep.iter().any(|i| given.contains(i)) {
        return Err(Error::InvalidPartition("keep and given sets overlap".into()));
    }
    let skk = s.block(keep, keep);
    if given.is_empty() {
        return Ok(SymMatrix(skk));
    }
    let sgg = s.block(given, given);
    let skg = s.block(keep, given);
    let inv = sym_inverse(&sgg, || format!("given block {given:?}"))?;
    let out = skk - &skg * inv * skg.transpose();
    Ok(SymMatrix((&out + out.transpose()) * 0.5))
}

/// `log sum exp(t_i)` with max shift and compensated summation.
///
/// Returns `-inf` when every term is `-inf` (empty support) or when the
/// slice is empty.
pub fn logsumexp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    for &t in terms {
        let v = (t - max).exp();
        let s = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - s) + v;
        } else {
            comp += (v - s) + sum;
        }
        sum = s;
    }
    max + (sum + comp).ln()
}

/// `log(1 + e^t)` without overflow.
pub fn log1p_exp(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Symmetric eigendecomposition with eigenvalues in descending order.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: DVector<f64>,
    /// Orthonormal eigenvectors stored as columns, matching `values`.
    pub vectors: DMatrix<f64>,
}

/// Eigenvalues sorted descending (ties keep the solver's original index
/// order); each eigenvector is signed so that its largest-magnitude
/// component is nonnegative, the first such component winning ties.
pub fn sym_eigen_desc(s: &SymMatrix) -> SymEigen {
    let n = s.dim();
    if n == 0 {
        return SymEigen {
            values: DVector::zeros(0),
            vectors: DMatrix::zeros(0, 0),
        };
    }
    let eig = SymmetricEigen::new(s.as_matrix().clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let values = DVector::from_fn(n, |i, _| eig.eigenvalues[order[i]]);
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(src).into_owned();
        let max = col.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        let pivot = col
            .iter()
            .position(|v| v.abs() >= max - 1e-12)
            .unwrap_or(0);
        if col[pivot] < 0.0 {
            col = -col;
        }
        vectors.set_column(dst, &col);
    }
    SymEigen { values, vectors }
}

/// Gauss–Hermite nodes and weights for the weight function `exp(-t^2)`.
pub fn gauss_hermite_rule(order: usize) -> (Vec<f64>, Vec<f64>) {
    const PIM4: f64 = 0.751_125_544_464_942_5;
    let n = order;
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    let mut z = 0.0_f64;
    for i in 0..m {
        z = match i {
            0 => {
                let nf = (2 * n + 1) as f64;
                nf.sqrt() - 1.85575 * nf.powf(-0.16667)
            }
            1 => z - 1.14 * (n as f64).powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = PIM4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * n as f64).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    // reverse into ascending order
    x.reverse();
    w.reverse();
    (x, w)
}

/// Tensor-product Gauss–Hermite estimate of `E[f(z)]` for `z ~ N(mean, cov)`.
/// Intended as a test oracle; only `d <= 3` is supported.
pub fn gauss_hermite_expectation<F>(f: F, mean: &DVector<f64>, cov: &SymMatrix, order: usize) -> Result<f64>
where
    F: Fn(&DVector<f64>) -> f64,
{
    let d = mean.len();
    if d > 3 {
        return Err(Error::UnsupportedDimension { dim: d, max: 3 });
    }
    if cov.dim() != d {
        return Err(Error::dims("quadrature covariance", d, cov.dim()));
    }
    if order == 0 {
        return Err(Error::InvalidParameter("quadrature order must be >= 1".into()));
    }
    if d == 0 {
        return Ok(f(mean));
    }
    let chol = cov.cholesky().ok_or_else(|| Error::NotPositiveDefinite {
        what: "quadrature covariance".into(),
    })?;
    let l = chol.l();
    let (nodes, weights) = gauss_hermite_rule(order);
    let norm = PI.powf(-(d as f64) / 2.0);
    let total = order.pow(d as u32);
    let mut acc = 0.0;
    let mut t = DVector::zeros(d);
    for flat in 0..total {
        let mut rem = flat;
        let mut wprod = 1.0;
        for k in 0..d {
            let i = rem % order;
            rem /= order;
            t[k] = nodes[i] * std::f64::consts::SQRT_2;
            wprod *= weights[i];
        }
        let z = mean + &l * &t;
        acc += wprod * f(&z);
    }
    Ok(acc * norm)
}

/// Assignment of 0/1 values to `width` binary variables; bit `i` is
/// variable `i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BitMask {
    bits: u32,
    width: usize,
}

impl BitMask {
    pub fn new(bits: u32, width: usize) -> Result<Self> {
        check_enumeration(width)?;
        if width < 32 && bits >> width != 0 {
            return Err(Error::InvalidParameter(format!(
                "bits {bits:#b} exceed width {width}"
            )));
        }
        Ok(BitMask { bits, width })
    }

    pub fn from_bools(values: &[bool]) -> Result<Self> {
        check_enumeration(values.len())?;
        let bits = values
            .iter()
            .enumerate()
            .fold(0u32, |acc, (i, &v)| if v { acc | (1 << i) } else { acc });
        Ok(BitMask {
            bits,
            width: values.len(),
        })
    }

    pub fn from_bits_unchecked(bits: u32, width: usize) -> Self {
        BitMask { bits, width }
    }

    /// Every mask of the given width, in increasing numeric order.
    pub fn all(width: usize) -> Result<impl Iterator<Item = BitMask>> {
        check_enumeration(width)?;
        Ok((0..(1u32 << width)).map(move |bits| BitMask { bits, width }))
    }

    pub fn bits(self) -> u32 {
        self.bits
    }

    pub fn width(self) -> usize {
        self.width
    }

    pub fn get(self, i: usize) -> bool {
        self.bits >> i & 1 == 1
    }

    pub fn count_ones(self) -> usize {
        self.bits.count_ones() as usize
    }

    /// Indices set to one (`R_1`).
    pub fn ones(self) -> Vec<usize> {
        (0..self.width).filter(|&i| self.get(i)).collect()
    }

    /// Indices set to zero (`R_0`).
    pub fn zeros(self) -> Vec<usize> {
        (0..self.width).filter(|&i| !self.get(i)).collect()
    }

    pub fn to_vector(self) -> DVector<f64> {
        DVector::from_fn(self.width, |i, _| if self.get(i) { 1.0 } else { 0.0 })
    }

    pub fn to_bools(self) -> Vec<bool> {
        (0..self.width).map(|i| self.get(i)).collect()
    }
}

/// Gaussian log-density helper around a fixed covariance factorization.
#[derive(Debug, Clone)]
pub(crate) struct GaussianKernel {
    chol: Option<Cholesky<f64, Dyn>>,
    log_norm: f64,
    dim: usize,
}

impl GaussianKernel {
    pub fn new(cov: &DMatrix<f64>, what: &str) -> Result<Self> {
        let dim = cov.nrows();
        if dim == 0 {
            return Ok(GaussianKernel {
                chol: None,
                log_norm: 0.0,
                dim,
            });
        }
        let chol = Cholesky::new(cov.clone()).ok_or_else(|| Error::NotPositiveDefinite {
            what: what.to_string(),
        })?;
        let log_det: f64 = chol.l_dirty().diagonal().iter().take(dim).map(|d| 2.0 * d.ln()).sum();
        Ok(GaussianKernel {
            chol: Some(chol),
            log_norm: -0.5 * (dim as f64 * LN_2PI + log_det),
            dim,
        })
    }

    pub fn log_det(&self) -> f64 {
        -2.0 * self.log_norm - self.dim as f64 * LN_2PI
    }

    /// `Sigma^-1 r`.
    pub fn solve(&self, r: &DVector<f64>) -> DVector<f64> {
        match &self.chol {
            Some(c) => c.solve(r),
            None => DVector::zeros(0),
        }
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        match &self.chol {
            Some(c) => c.inverse(),
            None => DMatrix::zeros(0, 0),
        }
    }

    /// `log N(mean + r | mean, Sigma)` for the residual `r`.
    pub fn log_density(&self, r: &DVector<f64>) -> f64 {
        if self.dim == 0 {
            return 0.0;
        }
        let a = self.solve(r);
        self.log_norm - 0.5 * r.dot(&a)
    }
}

/// Serde adapter writing a matrix as a list of rows.
pub mod serde_rows {
    use nalgebra::DMatrix;
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        (m.ncols(), rows).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let (ncols, rows) = <(usize, Vec<Vec<f64>>)>::deserialize(d)?;
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(D::Error::custom("ragged matrix rows"));
        }
        let flat: Vec<f64> = rows.concat();
        Ok(DMatrix::from_row_slice(rows.len(), ncols, &flat))
    }

    /// The same for an optional matrix.
    pub mod option {
        use super::*;

        pub fn serialize<S: Serializer>(m: &Option<DMatrix<f64>>, s: S) -> Result<S::Ok, S::Error> {
            match m {
                Some(m) => s.serialize_some(&Wrap(m.clone())),
                None => s.serialize_none(),
            }
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<DMatrix<f64>>, D::Error> {
            Ok(Option::<Wrap>::deserialize(d)?.map(|w| w.0))
        }

        #[derive(Serialize, Deserialize)]
        struct Wrap(#[serde(with = "super")] DMatrix<f64>);
    }
}
