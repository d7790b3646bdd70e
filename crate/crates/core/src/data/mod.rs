//! Mixed continuous/binary datasets: CSV ingestion, binarization rules,
//! missing cells and row multiplicities.

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::BitMask;

/// Name of the optional CSV column carrying row multiplicities.
pub const COUNT_COLUMN: &str = "_count";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Continuous,
    Binary,
}

/// Maps a numeric cell to 0/1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum BinarizeRule {
    GreaterThan(f64),
    Nonzero,
    Equals(f64),
}

impl BinarizeRule {
    pub fn apply(&self, v: f64) -> bool {
        match *self {
            BinarizeRule::GreaterThan(t) => v > t,
            BinarizeRule::Nonzero => v != 0.0,
            BinarizeRule::Equals(e) => v == e,
        }
    }
}

impl FromStr for BinarizeRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n.trim(), Some(a.trim())),
            None => (s.trim(), None),
        };
        let num = |a: Option<&str>| -> Result<f64> {
            let a = a.ok_or_else(|| Error::UnknownRule(s.to_string()))?;
            let a = a.trim_matches('"');
            a.parse::<f64>().map_err(|_| Error::UnknownRule(s.to_string()))
        };
        match name {
            "greater_than" => Ok(BinarizeRule::GreaterThan(num(arg)?)),
            "equals" => Ok(BinarizeRule::Equals(num(arg)?)),
            "nonzero" if arg.is_none() => Ok(BinarizeRule::Nonzero),
            _ => Err(Error::UnknownRule(s.to_string())),
        }
    }
}

impl TryFrom<String> for BinarizeRule {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<BinarizeRule> for String {
    fn from(r: BinarizeRule) -> String {
        r.to_string()
    }
}

impl fmt::Display for BinarizeRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BinarizeRule::GreaterThan(t) => write!(f, "greater_than:{t}"),
            BinarizeRule::Nonzero => write!(f, "nonzero"),
            BinarizeRule::Equals(v) => write!(f, "equals:{v}"),
        }
    }
}

/// Apply `rule` to a possibly missing cell.
pub fn binarize(value: Option<f64>, rule: &BinarizeRule) -> Option<bool> {
    value.map(|v| rule.apply(v))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub binarize_rule: Option<BinarizeRule>,
}

impl ColumnSpec {
    pub fn continuous(name: impl Into<String>) -> Self {
        ColumnSpec {
            name: name.into(),
            kind: ColumnKind::Continuous,
            binarize_rule: None,
        }
    }

    pub fn binary(name: impl Into<String>) -> Self {
        ColumnSpec {
            name: name.into(),
            kind: ColumnKind::Binary,
            binarize_rule: None,
        }
    }

    pub fn with_rule(mut self, rule: BinarizeRule) -> Self {
        self.binarize_rule = Some(rule);
        self
    }
}

/// Ordered column descriptors. Continuous columns become `x` in schema
/// order, binary columns become `y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Schema {
    columns: Vec<ColumnSpec>,
}

impl Schema {
    pub fn new(columns: Vec<ColumnSpec>) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::Schema("schema has no columns".into()));
        }
        let mut seen = HashMap::new();
        for (i, c) in columns.iter().enumerate() {
            if c.name == COUNT_COLUMN {
                return Err(Error::Schema(format!("column name '{COUNT_COLUMN}' is reserved")));
            }
            if let Some(j) = seen.insert(c.name.as_str(), i) {
                return Err(Error::Schema(format!("duplicate column '{}' at positions {j} and {i}", c.name)));
            }
            if c.kind == ColumnKind::Continuous && c.binarize_rule.is_some() {
                return Err(Error::Schema(format!("continuous column '{}' has a binarize rule", c.name)));
            }
        }
        Ok(Schema { columns })
    }

    /// Columns `x1..x{p_x}` followed by `y1..y{q}`.
    pub fn default_names(p_x: usize, q: usize) -> Self {
        let mut cols: Vec<ColumnSpec> = (1..=p_x).map(|i| ColumnSpec::continuous(format!("x{i}"))).collect();
        cols.extend((1..=q).map(|i| ColumnSpec::binary(format!("y{i}"))));
        Schema { columns: cols }
    }

    /// First `p_x` names continuous, the next `q` binary.
    pub fn positional(names: &[String], p_x: usize, q: usize) -> Result<Self> {
        if names.len() != p_x + q {
            return Err(Error::Schema(format!(
                "expected {} columns ({p_x} continuous, {q} binary), found {}",
                p_x + q,
                names.len()
            )));
        }
        let cols = names
            .iter()
            .enumerate()
            .map(|(i, n)| if i < p_x { ColumnSpec::continuous(n.clone()) } else { ColumnSpec::binary(n.clone()) })
            .collect();
        Schema::new(cols)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cols: Vec<ColumnSpec> = serde_json::from_str(s)?;
        Schema::new(cols)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Schema::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn columns(&self) -> &[ColumnSpec] {
        &self.columns
    }

    pub fn names_of(&self, kind: ColumnKind) -> Vec<&str> {
        self.columns.iter().filter(|c| c.kind == kind).map(|c| c.name.as_str()).collect()
    }

    pub fn p_x(&self) -> usize {
        self.columns.iter().filter(|c| c.kind == ColumnKind::Continuous).count()
    }

    pub fn q(&self) -> usize {
        self.columns.iter().filter(|c| c.kind == ColumnKind::Binary).count()
    }

    /// The schema of already-binarized data: same columns, rules dropped.
    pub fn binarized(&self) -> Schema {
        Schema {
            columns: self
                .columns
                .iter()
                .map(|c| ColumnSpec {
                    binarize_rule: None,
                    ..c.clone()
                })
                .collect(),
        }
    }

    /// Every column recoded as continuous.
    pub fn all_continuous(&self) -> Schema {
        Schema {
            columns: self.columns.iter().map(|c| ColumnSpec::continuous(c.name.clone())).collect(),
        }
    }
}

/// Rows of continuous and binary cells with missingness and multiplicities.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedDataset {
    schema: Schema,
    x: Vec<Option<f64>>,
    y: Vec<Option<bool>>,
    counts: Vec<u64>,
}

fn parse_cell(raw: &str, row: usize, column: &str) -> Result<Option<f64>> {
    let s = raw.trim();
    if s.is_empty() || s == "NA" {
        return Ok(None);
    }
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err(Error::Parse {
            row,
            column: column.to_string(),
            message: format!("cannot parse '{raw}' as a number"),
        }),
    }
}

impl MixedDataset {
    /// Rows given as `(x, y)` vectors; every multiplicity is 1.
    pub fn from_rows(schema: Schema, x: Vec<Vec<Option<f64>>>, y: Vec<Vec<Option<bool>>>) -> Result<Self> {
        let counts = vec![1; x.len()];
        Self::from_rows_counted(schema, x, y, counts)
    }

    pub fn from_rows_counted(
        schema: Schema,
        x: Vec<Vec<Option<f64>>>,
        y: Vec<Vec<Option<bool>>>,
        counts: Vec<u64>,
    ) -> Result<Self> {
        let (p_x, q) = (schema.p_x(), schema.q());
        let n = x.len();
        if y.len() != n || counts.len() != n {
            return Err(Error::dims("dataset rows", n, y.len().min(counts.len())));
        }
        if counts.contains(&0) {
            return Err(Error::InvalidParameter("row multiplicities must be at least 1".into()));
        }
        let mut xs = Vec::with_capacity(n * p_x);
        let mut ys = Vec::with_capacity(n * q);
        for (xr, yr) in x.into_iter().zip(y) {
            if xr.len() != p_x {
                return Err(Error::dims("continuous cells per row", p_x, xr.len()));
            }
            if yr.len() != q {
                return Err(Error::dims("binary cells per row", q, yr.len()));
            }
            if xr.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter("non-finite observed cell".into()));
            }
            xs.extend(xr);
            ys.extend(yr);
        }
        Ok(MixedDataset {
            schema,
            x: xs,
            y: ys,
            counts,
        })
    }

    /// Complete rows, e.g. model draws, under [`Schema::default_names`].
    pub fn from_samples(draws: &[(DVector<f64>, BitMask)]) -> Result<Self> {
        let p_x = draws.first().map_or(0, |d| d.0.len());
        let q = draws.first().map_or(0, |d| d.1.width());
        let x = draws.iter().map(|(x, _)| x.iter().map(|v| Some(*v)).collect()).collect();
        let y = draws.iter().map(|(_, y)| y.to_bools().into_iter().map(Some).collect()).collect();
        Self::from_rows(Schema::default_names(p_x, q), x, y)
    }

    pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<Self> {
        let file = std::fs::File::open(path.as_ref())?;
        Self::read_csv(file, schema)
    }

    /// Parse CSV with a header row. Columns may appear in any order; the
    /// header must name exactly the schema columns plus an optional
    /// `_count` column.
    pub fn read_csv<R: Read>(reader: R, schema: &Schema) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
        let mut position = HashMap::new();
        for (i, h) in header.iter().enumerate() {
            if position.insert(h.as_str(), i).is_some() {
                return Err(Error::Schema(format!("duplicate header '{h}'")));
            }
        }
        for h in &header {
            if h != COUNT_COLUMN && !schema.columns.iter().any(|c| &c.name == h) {
                return Err(Error::Schema(format!("header column '{h}' is not in the schema")));
            }
        }
        let mut cols = Vec::with_capacity(schema.columns.len());
        for c in &schema.columns {
            let i = *position
                .get(c.name.as_str())
                .ok_or_else(|| Error::Schema(format!("schema column '{}' missing from header", c.name)))?;
            cols.push(i);
        }
        let count_col = position.get(COUNT_COLUMN).copied();

        let mut x = Vec::new();
        let mut y = Vec::new();
        let mut counts = Vec::new();
        for (r, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let row = r + 1;
            for (c, &i) in schema.columns.iter().zip(&cols) {
                let cell = rec.get(i).unwrap_or("");
                let v = parse_cell(cell, row, &c.name)?;
                match c.kind {
                    ColumnKind::Continuous => x.push(v),
                    ColumnKind::Binary => {
                        let b = match (&c.binarize_rule, v) {
                            (Some(rule), v) => binarize(v, rule),
                            (None, None) => None,
                            (None, Some(v)) if v == 0.0 => Some(false),
                            (None, Some(v)) if v == 1.0 => Some(true),
                            (None, Some(_)) => {
                                return Err(Error::Parse {
                                    row,
                                    column: c.name.clone(),
                                    message: format!("binary cell '{cell}' is not 0 or 1"),
                                })
                            }
                        };
                        y.push(b);
                    }
                }
            }
            let count = match count_col {
                None => 1,
                Some(i) => {
                    let cell = rec.get(i).unwrap_or("").trim();
                    match cell.parse::<u64>() {
                        Ok(k) if k >= 1 => k,
                        _ => {
                            return Err(Error::Parse {
                                row,
                                column: COUNT_COLUMN.into(),
                                message: format!("multiplicity '{cell}' is not a positive integer"),
                            })
                        }
                    }
                }
            };
            counts.push(count);
        }
        Ok(MixedDataset {
            schema: schema.binarized(),
            x,
            y,
            counts,
        })
    }

    /// Write with the column order of the schema; missing cells as `NA`.
    /// A `_count` column is added when any multiplicity differs from 1.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let with_counts = self.counts.iter().any(|&c| c != 1);
        let mut header: Vec<&str> = self.schema.columns.iter().map(|c| c.name.as_str()).collect();
        if with_counts {
            header.push(COUNT_COLUMN);
        }
        w.write_record(&header)?;
        let (p_x, q) = (self.p_x(), self.q());
        for i in 0..self.n_rows() {
            let (mut xi, mut yi) = (0, 0);
            let mut rec = Vec::with_capacity(header.len());
            for c in &self.schema.columns {
                match c.kind {
                    ColumnKind::Continuous => {
                        rec.push(self.x[i * p_x + xi].map_or_else(|| "NA".to_string(), |v| format!("{v:?}")));
                        xi += 1;
                    }
                    ColumnKind::Binary => {
                        rec.push(match self.y[i * q + yi] {
                            None => "NA".to_string(),
                            Some(true) => "1".to_string(),
                            Some(false) => "0".to_string(),
                        });
                        yi += 1;
                    }
                }
            }
            if with_counts {
                rec.push(self.counts[i].to_string());
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    /// Number of stored (possibly deduplicated) rows.
    pub fn n_rows(&self) -> usize {
        self.counts.len()
    }

    /// Number of observations, counting multiplicities.
    pub fn n_total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn p_x(&self) -> usize {
        self.schema.p_x()
    }

    pub fn q(&self) -> usize {
        self.schema.q()
    }

    pub fn x_row(&self, i: usize) -> &[Option<f64>] {
        let p = self.p_x();
        &self.x[i * p..(i + 1) * p]
    }

    pub fn y_row(&self, i: usize) -> &[Option<bool>] {
        let q = self.q();
        &self.y[i * q..(i + 1) * q]
    }

    pub fn count(&self, i: usize) -> u64 {
        self.counts[i]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn is_complete(&self, i: usize) -> bool {
        self.x_row(i).iter().all(Option::is_some) && self.y_row(i).iter().all(Option::is_some)
    }

    /// Complete row `i` as dense values, or `None` if any cell is missing.
    pub fn complete_row(&self, i: usize) -> Option<(DVector<f64>, BitMask)> {
        if !self.is_complete(i) {
            return None;
        }
        let x = DVector::from_iterator(self.p_x(), self.x_row(i).iter().map(|v| v.unwrap()));
        let bools: Vec<bool> = self.y_row(i).iter().map(|v| v.unwrap()).collect();
        Some((x, BitMask::from_bools(&bools).ok()?))
    }

    pub fn has_missing(&self) -> bool {
        self.x.iter().any(Option::is_none) || self.y.iter().any(Option::is_none)
    }

    /// Merge identical rows (values and missing pattern), summing
    /// multiplicities. Row order follows first occurrence.
    pub fn deduplicate(&self) -> MixedDataset {
        let mut index: HashMap<(Vec<Option<u64>>, Vec<Option<bool>>), usize> = HashMap::new();
        let mut out = MixedDataset {
            schema: self.schema.clone(),
            x: Vec::new(),
            y: Vec::new(),
            counts: Vec::new(),
        };
        for i in 0..self.n_rows() {
            let key = (
                self.x_row(i).iter().map(|v| v.map(f64::to_bits)).collect::<Vec<_>>(),
                self.y_row(i).to_vec(),
            );
            match index.get(&key) {
                Some(&j) => out.counts[j] += self.counts[i],
                None => {
                    index.insert(key, out.counts.len());
                    out.x.extend_from_slice(self.x_row(i));
                    out.y.extend_from_slice(self.y_row(i));
                    out.counts.push(self.counts[i]);
                }
            }
        }
        out
    }

    /// Weighted mean and variance of each continuous column over observed
    /// cells.
    pub fn continuous_moments(&self) -> (DVector<f64>, DVector<f64>) {
        let p = self.p_x();
        let mut w: DVector<f64> = DVector::zeros(p);
        let mut s = DVector::zeros(p);
        for i in 0..self.n_rows() {
            let c = self.counts[i] as f64;
            for (j, v) in self.x_row(i).iter().enumerate() {
                if let Some(v) = v {
                    w[j] += c;
                    s[j] += c * v;
                }
            }
        }
        let mean = s.component_div(&w);
        let mut ss: DVector<f64> = DVector::zeros(p);
        for i in 0..self.n_rows() {
            let c = self.counts[i] as f64;
            for (j, v) in self.x_row(i).iter().enumerate() {
                if let Some(v) = v {
                    ss[j] += c * (*v - mean[j]).powi(2);
                }
            }
        }
        (mean, ss.component_div(&w))
    }

    /// Weighted frequency of `y_j = 1` over observed cells.
    pub fn binary_frequencies(&self) -> DVector<f64> {
        let q = self.q();
        let mut w: DVector<f64> = DVector::zeros(q);
        let mut s = DVector::zeros(q);
        for i in 0..self.n_rows() {
            let c = self.counts[i] as f64;
            for (j, v) in self.y_row(i).iter().enumerate() {
                if let Some(v) = v {
                    w[j] += c;
                    if *v {
                        s[j] += c;
                    }
                }
            }
        }
        s.component_div(&w)
    }

    /// Reject columns that are constant (binary) or have zero variance
    /// (continuous) over observed cells, and columns with no observed cell.
    pub fn check_degenerate(&self) -> Result<()> {
        let (_, var) = self.continuous_moments();
        let names = self.schema.names_of(ColumnKind::Continuous);
        for (j, v) in var.iter().enumerate() {
            if !(*v > 0.0) {
                return Err(Error::Degenerate(format!("continuous column '{}' has zero variance", names[j])));
            }
        }
        let freq = self.binary_frequencies();
        let names = self.schema.names_of(ColumnKind::Binary);
        for (j, f) in freq.iter().enumerate() {
            if !(*f > 0.0 && *f < 1.0) {
                return Err(Error::Degenerate(format!("binary column '{}' is constant", names[j])));
            }
        }
        Ok(())
    }

    /// Z-score the continuous columns; returns the dataset and the
    /// `(mean, sd)` used.
    pub fn standardize(&self) -> Result<(MixedDataset, DVector<f64>, DVector<f64>)> {
        let (mean, var) = self.continuous_moments();
        let sd = var.map(f64::sqrt);
        if let Some(j) = sd.iter().position(|s| !(*s > 0.0)) {
            let name = self.schema.names_of(ColumnKind::Continuous)[j].to_string();
            return Err(Error::Degenerate(format!("continuous column '{name}' has zero variance")));
        }
        let p = self.p_x();
        let mut out = self.clone();
        for (k, v) in out.x.iter_mut().enumerate() {
            let j = k % p;
            *v = v.map(|v| (v - mean[j]) / sd[j]);
        }
        Ok((out, mean, sd))
    }

    /// Binary columns recoded as numeric 0/1 continuous columns, keeping the
    /// original column order.
    pub fn quantified(&self) -> MixedDataset {
        let schema = self.schema.all_continuous();
        let (p_x, q) = (self.p_x(), self.q());
        let mut x = Vec::with_capacity(self.n_rows() * (p_x + q));
        for i in 0..self.n_rows() {
            let (mut xi, mut yi) = (0, 0);
            for c in &self.schema.columns {
                match c.kind {
                    ColumnKind::Continuous => {
                        x.push(self.x_row(i)[xi]);
                        xi += 1;
                    }
                    ColumnKind::Binary => {
                        x.push(self.y_row(i)[yi].map(|b| if b { 1.0 } else { 0.0 }));
                        yi += 1;
                    }
                }
            }
        }
        MixedDataset {
            schema,
            x,
            y: Vec::new(),
            counts: self.counts.clone(),
        }
    }

    /// Weighted Pearson correlations over `(x, y)` (continuous first),
    /// computed on complete rows.
    pub fn pearson_correlations(&self) -> Result<DMatrix<f64>> {
        let (p_x, q) = (self.p_x(), self.q());
        let d = p_x + q;
        let mut total = 0.0;
        let mut s1 = DVector::zeros(d);
        let mut s2 = DMatrix::zeros(d, d);
        for i in 0..self.n_rows() {
            if let Some((x, y)) = self.complete_row(i) {
                let mut v = DVector::zeros(d);
                v.rows_mut(0, p_x).copy_from(&x);
                v.rows_mut(p_x, q).copy_from(&y.to_vector());
                let c = self.counts[i] as f64;
                total += c;
                s1 += &v * c;
                s2 += &v * v.transpose() * c;
            }
        }
        if total == 0.0 {
            return Err(Error::Degenerate("no complete rows".into()));
        }
        let mean = s1 / total;
        let cov = s2 / total - &mean * mean.transpose();
        crate::gg::covariance_to_correlation(&cov)
    }
}
