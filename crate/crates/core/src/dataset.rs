//! Numeric datasets, sensitive groups and deterministic stratified splits.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// A preprocessed feature matrix with binary labels.
///
/// Features are stored row-major with `width` columns; the columns listed in
/// `sensitive` hold the sensitive attributes.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    width: usize,
    sensitive: Vec<usize>,
    labels: Vec<u8>,
    group_id: Vec<usize>,
    row_ids: Vec<usize>,
    column_names: Vec<String>,
}

impl Dataset {
    pub fn new(rows: Vec<Vec<f64>>, labels: Vec<u8>, sensitive: Vec<usize>) -> Result<Self> {
        let width = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::Dataset("rows have differing widths".into()));
        }
        let features = rows.into_iter().flatten().collect();
        let names = (0..width).map(|j| format!("x{j}")).collect();
        Self::from_flat(features, width, labels, sensitive, names)
    }

    pub fn from_flat(
        features: Vec<f64>,
        width: usize,
        labels: Vec<u8>,
        sensitive: Vec<usize>,
        column_names: Vec<String>,
    ) -> Result<Self> {
        let n = labels.len();
        if n == 0 {
            return Err(Error::Dataset("dataset has no rows".into()));
        }
        if width == 0 || features.len() != n * width {
            return Err(Error::Dataset(format!(
                "{} feature values do not form {n} rows of width {width}",
                features.len()
            )));
        }
        if column_names.len() != width {
            return Err(Error::Dataset("column name count differs from width".into()));
        }
        if let Some(bad) = labels.iter().find(|&&y| y > 1) {
            return Err(Error::Dataset(format!("label {bad} is not binary")));
        }
        if let Some(&j) = sensitive.iter().find(|&&j| j >= width) {
            return Err(Error::MaskIndex { index: j, width });
        }
        let mut uniq = sensitive.clone();
        uniq.sort_unstable();
        uniq.dedup();
        if uniq.len() != sensitive.len() {
            return Err(Error::Dataset("duplicate sensitive column index".into()));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Dataset("non-finite feature value".into()));
        }
        let mut d = Dataset {
            features,
            width,
            sensitive,
            labels,
            group_id: Vec::new(),
            row_ids: (0..n).collect(),
            column_names,
        };
        d.group_id = d.compute_groups();
        Ok(d)
    }

    fn compute_groups(&self) -> Vec<usize> {
        let mut ids: HashMap<Vec<u64>, usize> = HashMap::new();
        (0..self.len())
            .map(|i| {
                // +0.0 normalizes -0.0 so equal values share a key.
                let key: Vec<u64> = self
                    .sensitive
                    .iter()
                    .map(|&j| (self.row(i)[j] + 0.0).to_bits())
                    .collect();
                let next = ids.len();
                *ids.entry(key).or_insert(next)
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.width..(i + 1) * self.width]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.features.chunks_exact(self.width)
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn sensitive_columns(&self) -> &[usize] {
        &self.sensitive
    }

    pub fn group_ids(&self) -> &[usize] {
        &self.group_id
    }

    /// Index of each row in the source table it was built from.
    pub fn row_ids(&self) -> &[usize] {
        &self.row_ids
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn with_column_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.width {
            return Err(Error::Dataset("column name count differs from width".into()));
        }
        self.column_names = names;
        Ok(self)
    }

    pub fn with_row_ids(mut self, ids: Vec<usize>) -> Result<Self> {
        if ids.len() != self.len() {
            return Err(Error::Dataset("row id count differs from row count".into()));
        }
        self.row_ids = ids;
        Ok(self)
    }

    pub fn non_sensitive_columns(&self) -> Vec<usize> {
        (0..self.width).filter(|j| !self.sensitive.contains(j)).collect()
    }

    /// `true` for rows whose given sensitive column holds the protected value 1.
    pub fn protected_flags(&self, sensitive_pos: usize) -> Vec<bool> {
        let j = self.sensitive[sensitive_pos];
        self.rows().map(|r| r[j] == 1.0).collect()
    }

    pub fn positive_rate(&self) -> f64 {
        self.labels.iter().map(|&y| y as f64).sum::<f64>() / self.len() as f64
    }

    /// Rows at `idx`, in that order; provenance is carried over.
    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        let mut features = Vec::with_capacity(idx.len() * self.width);
        for &i in idx {
            features.extend_from_slice(self.row(i));
        }
        let labels = idx.iter().map(|&i| self.labels[i]).collect();
        let ids = idx.iter().map(|&i| self.row_ids[i]).collect();
        Self::from_flat(
            features,
            self.width,
            labels,
            self.sensitive.clone(),
            self.column_names.clone(),
        )?
        .with_row_ids(ids)
    }

    /// Copy with every row transformed by `f`; labels and provenance kept.
    pub fn map_rows(&self, mut f: impl FnMut(&mut [f64])) -> Result<Self> {
        let mut features = self.features.clone();
        for row in features.chunks_exact_mut(self.width) {
            f(row);
        }
        Self::from_flat(
            features,
            self.width,
            self.labels.clone(),
            self.sensitive.clone(),
            self.column_names.clone(),
        )?
        .with_row_ids(self.row_ids.clone())
    }

    pub fn with_labels(&self, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::Dataset("label count differs from row count".into()));
        }
        Self::from_flat(
            self.features.clone(),
            self.width,
            labels,
            self.sensitive.clone(),
            self.column_names.clone(),
        )?
        .with_row_ids(self.row_ids.clone())
    }

    /// Keeps only the listed columns; sensitive indices are remapped and
    /// dropped ones removed.
    pub fn select_columns(&self, cols: &[usize]) -> Result<Self> {
        if let Some(&j) = cols.iter().find(|&&j| j >= self.width) {
            return Err(Error::MaskIndex { index: j, width: self.width });
        }
        let mut features = Vec::with_capacity(self.len() * cols.len());
        for r in self.rows() {
            features.extend(cols.iter().map(|&j| r[j]));
        }
        let sensitive = self
            .sensitive
            .iter()
            .filter_map(|s| cols.iter().position(|c| c == s))
            .collect();
        let names = cols.iter().map(|&j| self.column_names[j].clone()).collect();
        Self::from_flat(features, cols.len(), self.labels.clone(), sensitive, names)?
            .with_row_ids(self.row_ids.clone())
    }
}

/// Train/validation/test partition of one source dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
    pub seed: u64,
}

const PART_NAMES: [&str; 3] = ["train", "validation", "test"];

/// Label-stratified assignment of row indices to three parts.
///
/// Rows of each label are shuffled with a seeded ChaCha stream and dealt to
/// the part with the largest remaining quota deficit, so every part's label
/// mix tracks the source. Indices within a part are returned ascending.
pub fn split_indices(labels: &[u8], fractions: [f64; 3], seed: u64) -> Result<[Vec<usize>; 3]> {
    if fractions.iter().any(|f| !f.is_finite() || *f <= 0.0) {
        return Err(Error::InvalidFractions(format!("{fractions:?} must all be positive")));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidFractions(format!("{fractions:?} sum to {total}, not 1")));
    }
    let n = labels.len();
    let train = (fractions[0] * n as f64).round() as usize;
    let val = (fractions[1] * n as f64).round() as usize;
    let sizes = [train, val, n.saturating_sub(train + val)];
    if train + val > n {
        return Err(Error::EmptySplitPart { part: PART_NAMES[2], n });
    }
    if let Some(p) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::EmptySplitPart { part: PART_NAMES[p], n });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = Vec::with_capacity(n);
    for class in [0u8, 1] {
        let mut idx: Vec<usize> = (0..n).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        order.extend(idx);
    }

    let mut parts: [Vec<usize>; 3] = Default::default();
    for (t, &i) in order.iter().enumerate() {
        let seen = (t + 1) as f64;
        let p = (0..3)
            .filter(|&p| parts[p].len() < sizes[p])
            .max_by(|&a, &b| {
                let da = sizes[a] as f64 * seen / n as f64 - parts[a].len() as f64;
                let db = sizes[b] as f64 * seen / n as f64 - parts[b].len() as f64;
                // ties go to the earlier part
                da.partial_cmp(&db).unwrap().then(b.cmp(&a))
            })
            .expect("some part has remaining quota");
        parts[p].push(i);
    }
    for part in &mut parts {
        part.sort_unstable();
    }
    Ok(parts)
}

pub fn split_dataset(d: &Dataset, fractions: [f64; 3], seed: u64) -> Result<Split> {
    let [tr, va, te] = split_indices(d.labels(), fractions, seed)?;
    Ok(Split {
        train: d.subset(&tr)?,
        validation: d.subset(&va)?,
        test: d.subset(&te)?,
        seed,
    })
}
