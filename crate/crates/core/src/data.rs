//! Dataset ingestion, group partitioning, meta-set carving and label-bias injection.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::{dot, sigmoid, Scalar};

/// One training tuple `(x, y, s)` with the pre-corruption label kept for auditing.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample<T> {
    pub x: Vec<T>,
    pub y: u8,
    pub s: usize,
    pub y_clean: u8,
}

impl<T: Scalar> LabeledExample<T> {
    pub fn new(x: Vec<T>, y: u8, s: usize) -> Self {
        Self { x, y, s, y_clean: y }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    examples: Vec<LabeledExample<T>>,
    d: usize,
    group_sizes: Vec<usize>,
    n_max: usize,
}

impl<T: Scalar> Dataset<T> {
    /// Builds a dataset, inferring the group count as `1 + max s`.
    pub fn new(examples: Vec<LabeledExample<T>>) -> Result<Self> {
        let groups = examples.iter().map(|e| e.s + 1).max().unwrap_or(0);
        Self::with_groups(examples, groups)
    }

    /// Builds a dataset with a fixed group count (groups may be empty).
    pub fn with_groups(examples: Vec<LabeledExample<T>>, num_groups: usize) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::Load("no examples".into()));
        }
        let d = examples[0].x.len();
        let mut group_sizes = vec![0usize; num_groups];
        for (i, e) in examples.iter().enumerate() {
            if e.x.len() != d {
                return Err(Error::Dimension { expected: d, got: e.x.len() });
            }
            if e.y > 1 || e.y_clean > 1 {
                return Err(Error::InvalidArgument(format!("example {i}: label not binary")));
            }
            if e.s >= num_groups {
                return Err(Error::InvalidArgument(format!(
                    "example {i}: group {} out of range (S = {num_groups})",
                    e.s
                )));
            }
            if e.x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("example {i}: feature")));
            }
            group_sizes[e.s] += 1;
        }
        let n_max = group_sizes.iter().copied().max().unwrap_or(0);
        Ok(Self { examples, d, group_sizes, n_max })
    }

    pub fn examples(&self) -> &[LabeledExample<T>] {
        &self.examples
    }

    pub fn into_examples(self) -> Vec<LabeledExample<T>> {
        self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn num_groups(&self) -> usize {
        self.group_sizes.len()
    }

    pub fn group_sizes(&self) -> &[usize] {
        &self.group_sizes
    }

    /// N̄ = max_s N_s.
    pub fn n_max(&self) -> usize {
        self.n_max
    }

    /// Examples of group `s`, in dataset order.
    pub fn group(&self, s: usize) -> Vec<LabeledExample<T>> {
        self.examples.iter().filter(|e| e.s == s).cloned().collect()
    }

    /// All groups, indexed by group id.
    pub fn split_by_group(&self) -> Vec<Vec<LabeledExample<T>>> {
        let mut out: Vec<Vec<LabeledExample<T>>> =
            self.group_sizes.iter().map(|&n| Vec::with_capacity(n)).collect();
        for e in &self.examples {
            out[e.s].push(e.clone());
        }
        out
    }

    pub fn positives_in_group(&self, s: usize) -> usize {
        self.examples.iter().filter(|e| e.s == s && e.y == 1).count()
    }
}

/// Small clean set, optionally carrying soft (pseudo) labels `[P(y=0), P(y=1)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaSet<T> {
    pub examples: Vec<LabeledExample<T>>,
    pub soft_labels: Option<Vec<[T; 2]>>,
    /// Row indices of the examples in the dataset they were carved from.
    pub source_rows: Vec<usize>,
}

impl<T: Scalar> MetaSet<T> {
    pub fn new(examples: Vec<LabeledExample<T>>) -> Self {
        let source_rows = (0..examples.len()).collect();
        Self { examples, soft_labels: None, source_rows }
    }

    pub fn empty() -> Self {
        Self { examples: Vec::new(), soft_labels: None, source_rows: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Attaches soft labels; each row must be a probability vector within 1e-9.
    pub fn with_soft_labels(mut self, labels: Vec<[T; 2]>) -> Result<Self> {
        if labels.len() != self.examples.len() {
            return Err(Error::Size(format!(
                "{} soft labels for {} meta examples",
                labels.len(),
                self.examples.len()
            )));
        }
        for (i, row) in labels.iter().enumerate() {
            let ok = row.iter().all(|&p| p >= T::zero() && p <= T::one())
                && (row[0] + row[1] - T::one()).abs() <= T::lit(1e-9);
            if !ok {
                return Err(Error::InvalidArgument(format!(
                    "soft label row {i} is not a probability vector"
                )));
            }
        }
        self.soft_labels = Some(labels);
        Ok(self)
    }
}

/// Column naming rule for CSV ingestion.
#[derive(Debug, Clone)]
pub struct Schema {
    pub feature_prefix: String,
    pub label: String,
    pub group: String,
    /// Optional column holding the pre-corruption label.
    pub clean_label: String,
}

impl Default for Schema {
    fn default() -> Self {
        Self {
            feature_prefix: "f".into(),
            label: "y".into(),
            group: "s".into(),
            clean_label: "y_clean".into(),
        }
    }
}

fn parse_binary(v: &str, row: usize, col: &str) -> Result<u8> {
    match v.trim() {
        "0" => Ok(0),
        "1" => Ok(1),
        other => Err(Error::Load(format!(
            "row {row}, column {col}: expected 0 or 1, found {other:?}"
        ))),
    }
}

/// Reads a CSV file with header `f0..f{d-1}, y, s` (any column order).
pub fn load_dataset<T: Scalar>(path: impl AsRef<Path>, schema: &Schema) -> Result<Dataset<T>> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Load(format!("{}: {e}", path.display())))?;
    let headers = reader.headers().map_err(|e| Error::Load(e.to_string()))?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);

    let mut feature_cols = Vec::new();
    while let Some(c) = find(&format!("{}{}", schema.feature_prefix, feature_cols.len())) {
        feature_cols.push(c);
    }
    if feature_cols.is_empty() {
        return Err(Error::Load(format!("missing column {}0", schema.feature_prefix)));
    }
    let y_col = find(&schema.label)
        .ok_or_else(|| Error::Load(format!("missing column {}", schema.label)))?;
    let s_col = find(&schema.group)
        .ok_or_else(|| Error::Load(format!("missing column {}", schema.group)))?;
    let clean_col = find(&schema.clean_label);

    let mut examples = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::Load(format!("row {row}: {e}")))?;
        if record.len() != headers.len() {
            return Err(Error::Load(format!(
                "row {row}: expected {} fields, found {}",
                headers.len(),
                record.len()
            )));
        }
        let mut x = Vec::with_capacity(feature_cols.len());
        for (k, &c) in feature_cols.iter().enumerate() {
            let v: f64 = record[c].parse().map_err(|_| {
                Error::Load(format!(
                    "row {row}, column {}{k}: not a number: {:?}",
                    schema.feature_prefix, &record[c]
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::Load(format!(
                    "row {row}, column {}{k}: non-finite value",
                    schema.feature_prefix
                )));
            }
            x.push(T::lit(v));
        }
        let y = parse_binary(&record[y_col], row, &schema.label)?;
        let s: usize = record[s_col].parse().map_err(|_| {
            Error::Load(format!(
                "row {row}, column {}: expected a group index, found {:?}",
                schema.group, &record[s_col]
            ))
        })?;
        let y_clean = match clean_col {
            Some(c) => parse_binary(&record[c], row, &schema.clean_label)?,
            None => y,
        };
        examples.push(LabeledExample { x, y, s, y_clean });
    }
    if examples.is_empty() {
        return Err(Error::Load("no examples".into()));
    }
    Dataset::new(examples)
}

/// Which labels a bias injection may flip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BiasMode {
    /// Positives in the target group become negatives.
    #[default]
    OneSided,
    /// Any label in the target group is flipped.
    Symmetric,
}

/// One-sided (1→0) label corruption of `target_group` with flip probability `rho`.
pub fn inject_label_bias<T: Scalar>(
    ds: &Dataset<T>,
    rho: f64,
    target_group: usize,
    seed: u64,
) -> Result<Dataset<T>> {
    inject_label_bias_with(ds, rho, target_group, seed, BiasMode::OneSided)
}

pub fn inject_label_bias_with<T: Scalar>(
    ds: &Dataset<T>,
    rho: f64,
    target_group: usize,
    seed: u64,
    mode: BiasMode,
) -> Result<Dataset<T>> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::InvalidArgument(format!("bias amount {rho} outside [0,1]")));
    }
    if target_group >= ds.num_groups() {
        return Err(Error::InvalidArgument(format!(
            "target group {target_group} out of range (S = {})",
            ds.num_groups()
        )));
    }
    let mut rng = rng::stream(seed, "inject_label_bias");
    let mut examples = ds.examples.clone();
    for e in examples.iter_mut().filter(|e| e.s == target_group) {
        match mode {
            BiasMode::OneSided => {
                if e.y_clean == 1 && rng.random::<f64>() < rho {
                    e.y = 0;
                }
            }
            BiasMode::Symmetric => {
                if rng.random::<f64>() < rho {
                    e.y = 1 - e.y_clean;
                }
            }
        }
    }
    Ok(Dataset { examples, ..ds.clone() })
}

/// Splits off a meta set of `round(fraction * N)` examples whose labels are reset to `y_clean`.
pub fn carve_meta<T: Scalar>(
    ds: &Dataset<T>,
    fraction: f64,
    seed: u64,
) -> Result<(Dataset<T>, MetaSet<T>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("meta fraction {fraction} outside (0,1)")));
    }
    let n = ds.len();
    let n_meta = (fraction * n as f64).round() as usize;
    if n_meta == 0 {
        return Err(Error::InvalidArgument(format!(
            "meta fraction {fraction} of {n} examples yields an empty meta set"
        )));
    }
    if n_meta >= n {
        return Err(Error::InvalidArgument("meta set would consume the whole dataset".into()));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, "carve_meta"));
    let mut meta_idx = idx[..n_meta].to_vec();
    meta_idx.sort_unstable();
    let mut is_meta = vec![false; n];
    for &i in &meta_idx {
        is_meta[i] = true;
    }

    let meta_examples = meta_idx
        .iter()
        .map(|&i| {
            let mut e = ds.examples[i].clone();
            e.y = e.y_clean;
            e
        })
        .collect();
    let train: Vec<_> = ds
        .examples
        .iter()
        .zip(&is_meta)
        .filter(|(_, &m)| !m)
        .map(|(e, _)| e.clone())
        .collect();
    let train = Dataset::with_groups(train, ds.num_groups())?;
    let meta = MetaSet { examples: meta_examples, soft_labels: None, source_rows: meta_idx };
    Ok((train, meta))
}

/// Reads soft labels from a CSV with header `row,p1` (or `row,p0,p1`), keyed by source row.
pub fn load_soft_labels(path: impl AsRef<Path>) -> Result<HashMap<usize, f64>> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Load(format!("{}: {e}", path.display())))?;
    let headers = reader.headers().map_err(|e| Error::Load(e.to_string()))?.clone();
    let row_col = headers
        .iter()
        .position(|h| h == "row")
        .ok_or_else(|| Error::Load("missing column row".into()))?;
    let p1_col = headers
        .iter()
        .position(|h| h == "p1")
        .ok_or_else(|| Error::Load("missing column p1".into()))?;
    let mut out = HashMap::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 1;
        let rec = rec.map_err(|e| Error::Load(format!("row {line}: {e}")))?;
        let row: usize = rec[row_col]
            .parse()
            .map_err(|_| Error::Load(format!("row {line}, column row: not an index")))?;
        let p1: f64 = rec[p1_col]
            .parse()
            .map_err(|_| Error::Load(format!("row {line}, column p1: not a number")))?;
        if !(0.0..=1.0).contains(&p1) {
            return Err(Error::Load(format!("row {line}, column p1: {p1} outside [0,1]")));
        }
        out.insert(row, p1);
    }
    Ok(out)
}

/// Generator for two-or-more group logistic data with a shared labelling rule.
#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub n: usize,
    pub d: usize,
    /// Fraction of examples per group; must sum to 1.
    pub group_fractions: Vec<f64>,
    /// True logistic coefficients, length d + 1 (bias last).
    pub true_theta: Vec<f64>,
    /// Per-group additive shift of the feature mean.
    pub group_mean_shift: Vec<f64>,
}

impl SyntheticSpec {
    /// d = 5 features, two groups split 70/30, identical feature laws.
    pub fn two_group(n: usize) -> Self {
        Self {
            n,
            d: 5,
            group_fractions: vec![0.7, 0.3],
            true_theta: vec![2.0, -1.5, 1.0, 0.5, -0.5, 0.5],
            group_mean_shift: vec![0.0, 0.0],
        }
    }

    /// Draws a dataset; labels are sampled from the logistic rule, `y_clean = y`.
    pub fn generate<T: Scalar>(&self, seed: u64, stream_name: &str) -> Result<Dataset<T>> {
        if self.true_theta.len() != self.d + 1 {
            return Err(Error::Dimension { expected: self.d + 1, got: self.true_theta.len() });
        }
        if self.group_fractions.len() != self.group_mean_shift.len() {
            return Err(Error::Size("group fractions and shifts differ in length".into()));
        }
        let mut rng = rng::stream(seed, stream_name);
        let s_count = self.group_fractions.len();
        let mut counts: Vec<usize> =
            self.group_fractions.iter().map(|f| (f * self.n as f64).round() as usize).collect();
        let assigned: usize = counts.iter().sum();
        counts[0] = (counts[0] + self.n).saturating_sub(assigned);
        let mut groups: Vec<usize> =
            counts.iter().enumerate().flat_map(|(s, &c)| std::iter::repeat_n(s, c)).collect();
        groups.shuffle(&mut rng);

        let mut examples = Vec::with_capacity(self.n);
        for s in groups {
            let x: Vec<f64> = (0..self.d)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z + self.group_mean_shift[s]
                })
                .collect();
            let logit = dot(&self.true_theta[..self.d], &x) + self.true_theta[self.d];
            let y = u8::from(rng.random::<f64>() < sigmoid(logit));
            examples.push(LabeledExample::new(x.into_iter().map(T::lit).collect(), y, s));
        }
        Dataset::with_groups(examples, s_count)
    }
}
