//! CSV ingestion, schema-driven preprocessing, the college-admissions toy
//! fixture and a synthetic generator with a tunable proxy feature.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::dataset::{split_indices, Dataset, Split};
use crate::error::{Error, Result};
use crate::schema::{ColumnKind, ColumnSpec, DatasetSchema, SensitiveColumn};

/// Rows of raw string cells, columns in schema order.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
    /// Rows parsed from the file, including dropped ones.
    pub parsed: usize,
    /// Rows dropped for missing values.
    pub dropped: usize,
}

impl RawTable {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn subset(&self, idx: &[usize]) -> RawTable {
        RawTable {
            columns: self.columns.clone(),
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
            parsed: idx.len(),
            dropped: 0,
        }
    }

    pub fn labels(&self, schema: &DatasetSchema) -> Result<Vec<u8>> {
        let j = self
            .column(&schema.label_column)
            .ok_or_else(|| Error::MissingColumn(schema.label_column.clone()))?;
        Ok(self
            .rows
            .iter()
            .map(|r| u8::from(r[j].trim() == schema.positive_label.trim()))
            .collect())
    }
}

fn is_missing(cell: &str) -> bool {
    let c = cell.trim();
    c.is_empty() || c == "?" || c.eq_ignore_ascii_case("na") || c.eq_ignore_ascii_case("nan")
}

/// Reads comma-separated text with a header row.
///
/// Every schema column must be present; other columns are ignored. Rows with
/// a missing value (empty, `?`, `NA`) in a schema column are dropped and
/// counted in [`RawTable::dropped`].
pub fn read_csv(reader: impl Read, schema: &DatasetSchema) -> Result<RawTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(Error::EmptyFile(Default::default()));
    }
    let positions = schema
        .columns
        .iter()
        .map(|c| {
            header
                .iter()
                .position(|h| *h == c.name)
                .ok_or_else(|| Error::MissingColumn(c.name.clone()))
        })
        .collect::<Result<Vec<usize>>>()?;

    let mut rows = Vec::new();
    let mut parsed = 0;
    let mut dropped = 0;
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        parsed += 1;
        let cells: Vec<String> = positions
            .iter()
            .map(|&p| record.get(p).unwrap_or("").to_string())
            .collect();
        if cells.iter().any(|c| is_missing(c)) {
            dropped += 1;
            continue;
        }
        for (spec, cell) in schema.columns.iter().zip(&cells) {
            let numeric = spec.kind == ColumnKind::Numeric
                || schema
                    .sensitive(&spec.name)
                    .is_some_and(|s| s.protected_at_or_below.is_some());
            if numeric && cell.parse::<f64>().map_or(true, |v| !v.is_finite()) {
                return Err(Error::ParseNumeric {
                    column: spec.name.clone(),
                    row: line + 1,
                    value: cell.clone(),
                });
            }
        }
        rows.push(cells);
    }
    if parsed == 0 {
        return Err(Error::EmptyFile(Default::default()));
    }
    Ok(RawTable {
        columns: schema.columns.iter().map(|c| c.name.clone()).collect(),
        rows,
        parsed,
        dropped,
    })
}

pub fn load_csv(path: impl AsRef<Path>, schema: &DatasetSchema) -> Result<RawTable> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    if file.metadata()?.len() == 0 {
        return Err(Error::EmptyFile(path.to_path_buf()));
    }
    read_csv(file, schema).map_err(|e| match e {
        Error::EmptyFile(_) => Error::EmptyFile(path.to_path_buf()),
        other => other,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum ColumnPlan {
    /// `(x - mean) / sd`; a zero `sd` encodes the column as all zeros.
    Numeric { name: String, mean: f64, sd: f64 },
    /// One indicator per level, levels in order of first appearance.
    Categorical { name: String, levels: Vec<String> },
    /// Single binary indicator of the protected group.
    Sensitive { column: SensitiveColumn },
}

/// Fitted per-column encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessPlan {
    pub columns: Vec<ColumnPlan>,
    pub label_column: String,
    pub positive_label: String,
}

#[derive(Debug, Clone)]
pub struct Preprocessed {
    pub dataset: Dataset,
    pub plan: PreprocessPlan,
    pub warnings: Vec<String>,
}

pub enum PlanSource<'a> {
    FitOnTrain,
    Existing(&'a PreprocessPlan),
}

impl PreprocessPlan {
    pub fn fit(table: &RawTable, schema: &DatasetSchema) -> Result<(Self, Vec<String>)> {
        let mut warnings = Vec::new();
        let mut columns = Vec::new();
        for spec in schema.feature_columns() {
            let j = table
                .column(&spec.name)
                .ok_or_else(|| Error::MissingColumn(spec.name.clone()))?;
            if let Some(s) = schema.sensitive(&spec.name) {
                columns.push(ColumnPlan::Sensitive { column: s.clone() });
                continue;
            }
            match spec.kind {
                ColumnKind::Numeric => {
                    let values: Vec<f64> = table
                        .rows
                        .iter()
                        .map(|r| r[j].trim().parse::<f64>().unwrap_or(f64::NAN))
                        .collect();
                    let n = values.len() as f64;
                    let mean = values.iter().sum::<f64>() / n;
                    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                    let mut sd = var.sqrt();
                    if !(sd > 0.0) || !sd.is_finite() {
                        warnings.push(format!(
                            "numeric column `{}` has zero variance; encoded as zeros",
                            spec.name
                        ));
                        sd = 0.0;
                    }
                    columns.push(ColumnPlan::Numeric { name: spec.name.clone(), mean, sd });
                }
                ColumnKind::Categorical => {
                    let mut levels: Vec<String> = Vec::new();
                    for r in &table.rows {
                        let v = r[j].trim();
                        if !levels.iter().any(|l| l == v) {
                            levels.push(v.to_string());
                        }
                    }
                    columns.push(ColumnPlan::Categorical { name: spec.name.clone(), levels });
                }
            }
        }
        let plan = PreprocessPlan {
            columns,
            label_column: schema.label_column.clone(),
            positive_label: schema.positive_label.clone(),
        };
        Ok((plan, warnings))
    }

    pub fn column_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for c in &self.columns {
            match c {
                ColumnPlan::Numeric { name, .. } => names.push(name.clone()),
                ColumnPlan::Categorical { name, levels } => {
                    names.extend(levels.iter().map(|l| format!("{name}={l}")))
                }
                ColumnPlan::Sensitive { column } => names.push(column.name.clone()),
            }
        }
        names
    }

    pub fn width(&self) -> usize {
        self.column_names().len()
    }

    /// Encoded positions of the sensitive columns, in plan order.
    pub fn sensitive_indices(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut pos = 0;
        for c in &self.columns {
            match c {
                ColumnPlan::Numeric { .. } => pos += 1,
                ColumnPlan::Categorical { levels, .. } => pos += levels.len(),
                ColumnPlan::Sensitive { .. } => {
                    out.push(pos);
                    pos += 1;
                }
            }
        }
        out
    }

    /// Encoded masking value per sensitive column, in plan order.
    pub fn mask_values(&self) -> Result<Vec<f64>> {
        self.columns
            .iter()
            .filter_map(|c| match c {
                ColumnPlan::Sensitive { column } => Some(column.mask_value()),
                _ => None,
            })
            .collect()
    }

    pub fn apply(&self, table: &RawTable) -> Result<Dataset> {
        let width = self.width();
        let n = table.rows.len();
        if n == 0 {
            return Err(Error::Dataset("no rows to encode".into()));
        }
        let mut features = Vec::with_capacity(n * width);
        let cols = self
            .columns
            .iter()
            .map(|c| {
                let name = match c {
                    ColumnPlan::Numeric { name, .. } | ColumnPlan::Categorical { name, .. } => name,
                    ColumnPlan::Sensitive { column } => &column.name,
                };
                table.column(name).ok_or_else(|| Error::MissingColumn(name.clone()))
            })
            .collect::<Result<Vec<usize>>>()?;
        let level_maps: Vec<Option<HashMap<&str, usize>>> = self
            .columns
            .iter()
            .map(|c| match c {
                ColumnPlan::Categorical { levels, .. } => Some(
                    levels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect(),
                ),
                _ => None,
            })
            .collect();
        for (row_no, row) in table.rows.iter().enumerate() {
            for ((c, &j), map) in self.columns.iter().zip(&cols).zip(&level_maps) {
                let cell = row[j].trim();
                match c {
                    ColumnPlan::Numeric { name, mean, sd } => {
                        let v: f64 = cell.parse().map_err(|_| Error::ParseNumeric {
                            column: name.clone(),
                            row: row_no + 1,
                            value: cell.to_string(),
                        })?;
                        features.push(if *sd > 0.0 { (v - mean) / sd } else { 0.0 });
                    }
                    ColumnPlan::Categorical { name, levels } => {
                        let hit = map.as_ref().and_then(|m| m.get(cell)).ok_or_else(|| {
                            Error::UnseenLevel { column: name.clone(), level: cell.to_string() }
                        })?;
                        features.extend((0..levels.len()).map(|k| if k == *hit { 1.0 } else { 0.0 }));
                    }
                    ColumnPlan::Sensitive { column } => features.push(column.encode(cell)?),
                }
            }
        }
        let label_j = table
            .column(&self.label_column)
            .ok_or_else(|| Error::MissingColumn(self.label_column.clone()))?;
        let labels = table
            .rows
            .iter()
            .map(|r| u8::from(r[label_j].trim() == self.positive_label.trim()))
            .collect();
        Dataset::from_flat(features, width, labels, self.sensitive_indices(), self.column_names())
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{PLAN_MAGIC}\n");
        let _ = writeln!(out, "label\t{}\t{}", esc(&self.label_column), esc(&self.positive_label));
        for c in &self.columns {
            match c {
                ColumnPlan::Numeric { name, mean, sd } => {
                    let _ = writeln!(out, "numeric\t{}\t{mean:?}\t{sd:?}", esc(name));
                }
                ColumnPlan::Categorical { name, levels } => {
                    let _ = write!(out, "categorical\t{}", esc(name));
                    for l in levels {
                        let _ = write!(out, "\t{}", esc(l));
                    }
                    out.push('\n');
                }
                ColumnPlan::Sensitive { column } => {
                    let _ = write!(out, "sensitive\t{}\t{}", esc(&column.name), esc(&column.mask_reference));
                    match column.protected_at_or_below {
                        Some(cut) => {
                            let _ = write!(out, "\tat_or_below\t{cut:?}");
                        }
                        None => {
                            let _ = write!(out, "\tlevels");
                            for p in &column.protected {
                                let _ = write!(out, "\t{}", esc(p));
                            }
                        }
                    }
                    out.push('\n');
                }
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |detail: String| Error::Format { what: "preprocess plan", detail };
        let mut lines = text.lines().filter(|l| !l.is_empty());
        if lines.next() != Some(PLAN_MAGIC) {
            return Err(bad(format!("expected header `{PLAN_MAGIC}`")));
        }
        let label_line: Vec<String> = lines
            .next()
            .ok_or_else(|| bad("missing label line".into()))?
            .split('\t')
            .map(unesc)
            .collect();
        if label_line.len() != 3 || label_line[0] != "label" {
            return Err(bad("malformed label line".into()));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("cannot parse `{s}`")));
        let mut columns = Vec::new();
        for line in lines {
            let f: Vec<String> = line.split('\t').map(unesc).collect();
            let plan = match f[0].as_str() {
                "numeric" if f.len() == 4 => ColumnPlan::Numeric {
                    name: f[1].clone(),
                    mean: num(&f[2])?,
                    sd: num(&f[3])?,
                },
                "categorical" if f.len() >= 2 => ColumnPlan::Categorical {
                    name: f[1].clone(),
                    levels: f[2..].to_vec(),
                },
                "sensitive" if f.len() >= 4 => {
                    let (protected, cut) = match f[3].as_str() {
                        "at_or_below" if f.len() == 5 => (Vec::new(), Some(num(&f[4])?)),
                        "levels" => (f[4..].to_vec(), None),
                        other => return Err(bad(format!("unknown sensitive rule `{other}`"))),
                    };
                    ColumnPlan::Sensitive {
                        column: SensitiveColumn {
                            name: f[1].clone(),
                            mask_reference: f[2].clone(),
                            protected,
                            protected_at_or_below: cut,
                        },
                    }
                }
                other => return Err(bad(format!("unrecognized line `{other}`"))),
            };
            columns.push(plan);
        }
        Ok(PreprocessPlan {
            columns,
            label_column: label_line[1].clone(),
            positive_label: label_line[2].clone(),
        })
    }
}

const PLAN_MAGIC: &str = "fairmask-preprocess-plan v1";

fn esc(s: &str) -> String {
    s.replace('\\', "\\\\").replace('\t', "\\t").replace('\n', "\\n")
}

fn unesc(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('t') => out.push('\t'),
                Some('n') => out.push('\n'),
                Some(o) => out.push(o),
                None => out.push('\\'),
            }
        } else {
            out.push(c);
        }
    }
    out
}

/// Encodes `table`, fitting the plan on it or reusing an existing one.
pub fn preprocess(table: &RawTable, schema: &DatasetSchema, source: PlanSource<'_>) -> Result<Preprocessed> {
    let (plan, warnings) = match source {
        PlanSource::FitOnTrain => PreprocessPlan::fit(table, schema)?,
        PlanSource::Existing(p) => (p.clone(), Vec::new()),
    };
    let dataset = plan.apply(table)?;
    Ok(Preprocessed { dataset, plan, warnings })
}

/// Stratified split of the raw rows, with the plan fitted on the train part
/// only and applied to all three.
pub fn prepare_split(
    table: &RawTable,
    schema: &DatasetSchema,
    fractions: [f64; 3],
    seed: u64,
) -> Result<(Split, PreprocessPlan, Vec<String>)> {
    let labels = table.labels(schema)?;
    let [tr, va, te] = split_indices(&labels, fractions, seed)?;
    let fitted = preprocess(&table.subset(&tr), schema, PlanSource::FitOnTrain)?;
    let apply = |idx: &[usize]| -> Result<Dataset> {
        fitted.plan.apply(&table.subset(idx))?.with_row_ids(idx.to_vec())
    };
    let split = Split {
        train: fitted.dataset.clone().with_row_ids(tr.clone())?,
        validation: apply(&va)?,
        test: apply(&te)?,
        seed,
    };
    Ok((split, fitted.plan, fitted.warnings))
}

/// The eight applicants of the college-admissions example, as
/// `(id, admission, sensitive, sat, extracurricular)`. Sensitive 1 marks the
/// protected group.
pub const TOY_ROWS: [(u32, u8, u8, u32, u32); 8] = [
    (1, 1, 1, 1600, 4),
    (2, 1, 1, 1500, 6),
    (3, 1, 1, 1500, 4),
    (4, 0, 1, 1400, 6),
    (5, 1, 0, 1400, 6),
    (6, 1, 0, 1300, 5),
    (7, 0, 0, 1200, 4),
    (8, 0, 0, 1200, 4),
];

pub fn toy_csv() -> String {
    let mut out = String::from("id,admission,sensitive,sat,extracurricular\n");
    for (id, y, s, sat, ex) in TOY_ROWS {
        let _ = writeln!(out, "{id},{y},{s},{sat},{ex}");
    }
    out
}

pub fn toy_schema() -> DatasetSchema {
    DatasetSchema {
        columns: vec![
            ColumnSpec { name: "admission".into(), kind: ColumnKind::Categorical },
            ColumnSpec { name: "sensitive".into(), kind: ColumnKind::Categorical },
            ColumnSpec { name: "sat".into(), kind: ColumnKind::Numeric },
            ColumnSpec { name: "extracurricular".into(), kind: ColumnKind::Numeric },
        ],
        label_column: "admission".into(),
        positive_label: "1".into(),
        sensitive_columns: vec![SensitiveColumn {
            name: "sensitive".into(),
            mask_reference: "0".into(),
            protected: vec![],
            protected_at_or_below: None,
        }],
    }
}

pub fn toy_table2_raw() -> RawTable {
    read_csv(toy_csv().as_bytes(), &toy_schema()).expect("bundled fixture parses")
}

/// The toy fixture encoded: columns `sensitive, sat, extracurricular`, the
/// numeric ones standardized over the eight rows. Row ids are the
/// applicant ids minus one.
pub fn toy_table2() -> Dataset {
    preprocess(&toy_table2_raw(), &toy_schema(), PlanSource::FitOnTrain)
        .expect("bundled fixture encodes")
        .dataset
}

/// Parameters of the synthetic proxying generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n: usize,
    /// Sample correlation between the sensitive bit and the proxy feature.
    pub rho: f64,
    pub protected_share: f64,
    pub base_rate_protected: f64,
    pub base_rate_unprotected: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n: 2000,
            rho: 0.8,
            protected_share: 0.5,
            base_rate_protected: 0.3,
            base_rate_unprotected: 0.5,
            noise: 0.5,
            seed: 0,
        }
    }
}

pub const SYNTH_COLUMNS: [&str; 4] = ["sensitive", "proxy", "x2", "x3"];

/// Labeled data in which a proxy feature tracks the sensitive bit.
///
/// Columns are `sensitive, proxy, x2, x3`. The proxy is built so its sample
/// correlation with the sensitive bit equals `rho`. The label is a noisy
/// threshold of `0.8 x2 - 0.5 x3` plus a per-group offset tuned to the base
/// rates; the proxy carries no label signal beyond the sensitive bit, so a
/// model denied the sensitive column leans on it instead.
pub fn synthesize(spec: &SyntheticSpec) -> Result<Dataset> {
    if !(spec.rho.is_finite() && (-1.0..=1.0).contains(&spec.rho)) {
        return Err(Error::InvalidArgument(format!("rho = {} must lie in [-1, 1]", spec.rho)));
    }
    if spec.n < 10 {
        return Err(Error::InvalidArgument(format!("n = {} must be at least 10", spec.n)));
    }
    let in_unit = |v: f64| v.is_finite() && v > 0.0 && v < 1.0;
    if !in_unit(spec.protected_share) || !in_unit(spec.base_rate_protected) || !in_unit(spec.base_rate_unprotected) {
        return Err(Error::InvalidArgument("shares and base rates must lie in (0, 1)".into()));
    }
    if !(spec.noise.is_finite() && spec.noise >= 0.0) {
        return Err(Error::InvalidArgument("noise must be non-negative".into()));
    }
    let n = spec.n;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut s: Vec<f64> = (0..n)
        .map(|_| if rng.random_bool(spec.protected_share) { 1.0 } else { 0.0 })
        .collect();
    // guarantee both groups
    s[0] = 1.0;
    s[1] = 0.0;
    let gauss = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..n).map(|_| rng.sample(StandardNormal)).collect() };
    let eps = gauss(&mut rng);
    let x2 = gauss(&mut rng);
    let x3 = gauss(&mut rng);
    let label_noise = gauss(&mut rng);

    let standardize = |v: &[f64]| -> Vec<f64> {
        let m = v.iter().sum::<f64>() / n as f64;
        let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n as f64).sqrt();
        v.iter().map(|x| (x - m) / sd).collect()
    };
    let s_std = standardize(&s);
    // remove the sensitive component from eps so the correlation is exact
    let e_c = standardize(&eps);
    let proj = e_c.iter().zip(&s_std).map(|(a, b)| a * b).sum::<f64>() / n as f64;
    let resid: Vec<f64> = e_c.iter().zip(&s_std).map(|(e, s)| e - proj * s).collect();
    let resid = standardize(&resid);
    let orth = (1.0 - spec.rho * spec.rho).max(0.0).sqrt();
    let proxy: Vec<f64> = s_std.iter().zip(&resid).map(|(s, e)| spec.rho * s + orth * e).collect();

    const W_X2: f64 = 0.8;
    const W_X3: f64 = -0.5;
    let total_sd = (W_X2 * W_X2 + W_X3 * W_X3 + spec.noise * spec.noise).sqrt();
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let off_p = std_normal.inverse_cdf(spec.base_rate_protected) * total_sd;
    let off_u = std_normal.inverse_cdf(spec.base_rate_unprotected) * total_sd;

    let mut features = Vec::with_capacity(n * 4);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let off = if s[i] == 1.0 { off_p } else { off_u };
        let t = off + W_X2 * x2[i] + W_X3 * x3[i] + spec.noise * label_noise[i];
        features.extend([s[i], proxy[i], x2[i], x3[i]]);
        labels.push(u8::from(t > 0.0));
    }
    Dataset::from_flat(
        features,
        4,
        labels,
        vec![0],
        SYNTH_COLUMNS.iter().map(|c| c.to_string()).collect(),
    )
}

/// Schema matching [`write_dataset_csv`] output of a synthetic dataset.
pub fn synthetic_schema() -> DatasetSchema {
    let mut columns: Vec<ColumnSpec> = SYNTH_COLUMNS
        .iter()
        .map(|c| ColumnSpec {
            name: c.to_string(),
            kind: if *c == "sensitive" { ColumnKind::Categorical } else { ColumnKind::Numeric },
        })
        .collect();
    columns.push(ColumnSpec { name: "label".into(), kind: ColumnKind::Categorical });
    DatasetSchema {
        columns,
        label_column: "label".into(),
        positive_label: "1".into(),
        sensitive_columns: vec![SensitiveColumn {
            name: "sensitive".into(),
            mask_reference: "0".into(),
            protected: vec![],
            protected_at_or_below: None,
        }],
    }
}

/// Writes features and a trailing `label` column at full precision.
pub fn write_dataset_csv(d: &Dataset, mut out: impl Write) -> Result<()> {
    let mut header = d.column_names().join(",");
    header.push_str(",label\n");
    out.write_all(header.as_bytes())?;
    for (row, y) in d.rows().zip(d.labels()) {
        let mut line = String::new();
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                line.push(',');
            }
            if d.sensitive_columns().contains(&j) && v.fract() == 0.0 {
                let _ = write!(line, "{}", *v as i64);
            } else {
                let _ = write!(line, "{v:?}");
            }
        }
        let _ = writeln!(line, ",{y}");
        out.write_all(line.as_bytes())?;
    }
    Ok(())
}
