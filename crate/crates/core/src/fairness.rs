//! Train-then-mask: fit on every feature, pin the sensitive columns to
//! reference values at prediction time, and pick the score offset that
//! maximizes validation accuracy.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::metrics::{self, EvalFrame};
use crate::model::{decide_score, MaskSpec, ScoreModel};
use crate::models::{predict_base_scores, FamilySpec, Fitted, TrainConfig};

/// `count` evenly spaced offsets from `lo` to `hi` inclusive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TauGrid {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

impl TauGrid {
    pub fn new(lo: f64, hi: f64, count: usize) -> Result<Self> {
        if count == 0 {
            return Err(Error::TauGrid("count must be positive".into()));
        }
        if !(lo.is_finite() && hi.is_finite()) || lo > hi {
            return Err(Error::TauGrid(format!("bad range {lo}:{hi}")));
        }
        if count == 1 && lo != hi {
            return Err(Error::TauGrid("a single-point grid needs lo == hi".into()));
        }
        Ok(TauGrid { lo, hi, count })
    }

    pub fn single(tau: f64) -> Self {
        TauGrid { lo: tau, hi: tau, count: 1 }
    }

    /// 101 points over `[0.5 - max, 0.5 - min]` of the given base scores,
    /// spanning every decision boundary those scores admit.
    pub fn covering(scores: &[f64]) -> Result<Self> {
        let (min, max) = scores
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &s| (a.min(s), b.max(s)));
        if !min.is_finite() {
            return Err(Error::EmptyValidation);
        }
        if min == max {
            // one boundary; step to either side of it
            return TauGrid::new(0.5 - max - 0.5, 0.5 - min + 0.5, 101);
        }
        TauGrid::new(0.5 - max, 0.5 - min, 101)
    }

    pub fn points(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.lo];
        }
        let step = (self.hi - self.lo) / (self.count - 1) as f64;
        (0..self.count)
            .map(|i| if i + 1 == self.count { self.hi } else { self.lo + i as f64 * step })
            .collect()
    }

    /// Width of one grid cell.
    pub fn step(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            (self.hi - self.lo) / (self.count - 1) as f64
        }
    }
}

impl std::str::FromStr for TauGrid {
    type Err = Error;

    /// Parses `lo:hi:count`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || Error::TauGrid(format!("expected lo:hi:count, got `{s}`"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let lo = parts[0].trim().parse().map_err(|_| bad())?;
        let hi = parts[1].trim().parse().map_err(|_| bad())?;
        let count = parts[2].trim().parse().map_err(|_| bad())?;
        TauGrid::new(lo, hi, count)
    }
}

/// Overwrites the sensitive columns of every row with the reference values.
pub fn mask(d: &Dataset, spec: &MaskSpec) -> Result<Dataset> {
    spec.check_width(d.width())?;
    d.map_rows(|row| spec.apply(row))
}

/// Mask spec built from a dataset's own sensitive columns.
pub fn mask_spec_for(d: &Dataset, reference_values: Vec<f64>) -> Result<MaskSpec> {
    let spec = MaskSpec::new(d.sensitive_columns().to_vec(), reference_values)?;
    check_spec(d, &spec)?;
    Ok(spec)
}

fn check_spec(d: &Dataset, spec: &MaskSpec) -> Result<()> {
    spec.check_width(d.width())?;
    if spec.indices != d.sensitive_columns() {
        return Err(Error::MaskMismatch(format!(
            "mask columns {:?} differ from sensitive columns {:?}",
            spec.indices,
            d.sensitive_columns()
        )));
    }
    Ok(())
}

/// Base (offset-free) scores of `model` on masked copies of the rows.
pub fn masked_scores(model: &ScoreModel, d: &Dataset, spec: &MaskSpec) -> Result<Vec<f64>> {
    let base = model.clone().with_tau(0.0).with_mask(Some(spec.clone()));
    predict_base_scores(&base, d)
}

fn accuracy_at(scores: &[f64], labels: &[u8], tau: f64) -> f64 {
    let correct = scores
        .iter()
        .zip(labels)
        .filter(|(&s, &y)| decide_score(s + tau) == y)
        .count();
    correct as f64 / labels.len() as f64
}

/// Preference order for offsets of equal accuracy: smaller `|tau|`, then smaller `tau`.
fn prefer(a: (f64, f64), b: (f64, f64)) -> bool {
    // (accuracy, tau)
    if a.0 != b.0 {
        return a.0 > b.0;
    }
    if a.1.abs() != b.1.abs() {
        return a.1.abs() < b.1.abs();
    }
    a.1 < b.1
}

fn argmax_tau(points: &[(f64, f64)]) -> f64 {
    points
        .iter()
        .copied()
        .reduce(|best, p| if prefer(p, best) { p } else { best })
        .expect("grid is non-empty")
        .1
}

/// Grid offset maximizing accuracy of the masked model on `validation`.
pub fn select_tau(model: &ScoreModel, validation: &Dataset, spec: &MaskSpec, grid: &TauGrid) -> Result<f64> {
    if validation.is_empty() {
        return Err(Error::EmptyValidation);
    }
    check_spec(validation, spec)?;
    let scores = masked_scores(model, validation, spec)?;
    let points: Vec<(f64, f64)> = grid
        .points()
        .into_iter()
        .map(|tau| (accuracy_at(&scores, validation.labels(), tau), tau))
        .collect();
    Ok(argmax_tau(&points))
}

/// Result of [`train_then_mask`]: the masked model and the h* it came from.
#[derive(Debug, Clone)]
pub struct TrainThenMask {
    pub model: ScoreModel,
    pub reference: Fitted,
    pub grid: TauGrid,
}

/// Fits h* on all features, masks the sensitive columns and picks the
/// offset on validation. `grid = None` uses [`TauGrid::covering`] of the
/// masked validation scores.
pub fn train_then_mask(
    train: &Dataset,
    validation: &Dataset,
    spec: &MaskSpec,
    family: &FamilySpec,
    cfg: &TrainConfig,
    grid: Option<TauGrid>,
) -> Result<TrainThenMask> {
    check_spec(train, spec)?;
    check_spec(validation, spec)?;
    if train.width() != validation.width() {
        return Err(Error::DimensionMismatch {
            expected: train.width(),
            actual: validation.width(),
        });
    }
    let reference = family.fit(train, cfg)?;
    let grid = match grid {
        Some(g) => g,
        None => TauGrid::covering(&masked_scores(&reference.model, validation, spec)?)?,
    };
    let tau = select_tau(&reference.model, validation, spec, &grid)?;
    let model = reference
        .model
        .clone()
        .with_mask(Some(spec.clone()))
        .with_tau(tau);
    Ok(TrainThenMask { model, reference, grid })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub tau: f64,
    pub accuracy: f64,
    /// Admittance gap on the first sensitive column.
    pub group_discr: f64,
    /// Admittance gap per sensitive column, in sensitive-column order.
    pub group_discr_by_column: Vec<f64>,
    pub on_frontier: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TauSweepResult {
    pub points: Vec<SweepPoint>,
    pub tau_star: f64,
    pub grid: TauGrid,
    pub column_names: Vec<String>,
}

impl TauSweepResult {
    pub fn star(&self) -> &SweepPoint {
        self.points
            .iter()
            .find(|p| p.tau == self.tau_star)
            .expect("tau_star is a grid point")
    }

    /// Comma-separated `tau,accuracy,group_discr,on_frontier`. With several
    /// sensitive columns, per-column gaps follow as extra columns.
    pub fn to_delimited(&self) -> String {
        let mut out = String::from("tau,accuracy,group_discr,on_frontier");
        let extra = self.column_names.len() > 1;
        if extra {
            for name in &self.column_names {
                let _ = write!(out, ",group_discr_{name}");
            }
        }
        out.push('\n');
        for p in &self.points {
            let _ = write!(out, "{:?},{:?},{:?},{}", p.tau, p.accuracy, p.group_discr, p.on_frontier);
            if extra {
                for g in &p.group_discr_by_column {
                    let _ = write!(out, ",{g:?}");
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Flags points not dominated by any other. `q` dominates `p` when it has
/// accuracy `>=` and discrimination `<=` with at least one strict.
pub fn pareto_flags(points: &[(f64, f64)]) -> Vec<bool> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        points[b]
            .0
            .partial_cmp(&points[a].0)
            .unwrap()
            .then(points[a].1.partial_cmp(&points[b].1).unwrap())
    });
    let mut flags = vec![false; points.len()];
    let mut best_above = f64::INFINITY; // min discrimination among strictly higher accuracy
    let mut start = 0;
    while start < order.len() {
        let acc = points[order[start]].0;
        let end = order[start..]
            .iter()
            .position(|&i| points[i].0 != acc)
            .map_or(order.len(), |k| start + k);
        let group_min = points[order[start]].1;
        for &i in &order[start..end] {
            let g = points[i].1;
            flags[i] = !(best_above <= g || group_min < g);
        }
        best_above = best_above.min(group_min);
        start = end;
    }
    flags
}

/// Accuracy and per-column admittance gap for every offset on the grid.
///
/// Decisions come from masked scores; groups from the original sensitive
/// values of `eval_data`.
pub fn tau_sweep(model: &ScoreModel, eval_data: &Dataset, spec: &MaskSpec, grid: &TauGrid) -> Result<TauSweepResult> {
    if grid.count < 2 {
        return Err(Error::TauGrid("a sweep needs at least two points".into()));
    }
    if eval_data.is_empty() {
        return Err(Error::EmptyValidation);
    }
    check_spec(eval_data, spec)?;
    let scores = masked_scores(model, eval_data, spec)?;
    let flags: Vec<Vec<bool>> = (0..spec.indices.len())
        .map(|k| eval_data.protected_flags(k))
        .collect();
    for (k, f) in flags.iter().enumerate() {
        let name = &eval_data.column_names()[spec.indices[k]];
        if f.iter().all(|&p| p) || f.iter().all(|&p| !p) {
            return Err(Error::GroupUndefined(format!(
                "column `{name}` has only one group in the evaluation data"
            )));
        }
    }
    let labels = eval_data.labels();
    let mut points: Vec<SweepPoint> = grid
        .points()
        .into_par_iter()
        .map(|tau| {
            let preds: Vec<u8> = scores.iter().map(|&s| decide_score(s + tau)).collect();
            let by_col = flags
                .iter()
                .map(|prot| {
                    let f = EvalFrame::from_predictions(labels.to_vec(), preds.clone(), prot.clone())?;
                    metrics::group_discrimination(&f)
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok(SweepPoint {
                tau,
                accuracy: accuracy_at(&scores, labels, tau),
                group_discr: by_col[0],
                group_discr_by_column: by_col,
                on_frontier: false,
            })
        })
        .collect::<Result<_>>()?;
    let coords: Vec<(f64, f64)> = points.iter().map(|p| (p.accuracy, p.group_discr)).collect();
    for (p, f) in points.iter_mut().zip(pareto_flags(&coords)) {
        p.on_frontier = f;
    }
    let tau_star = argmax_tau(&points.iter().map(|p| (p.accuracy, p.tau)).collect::<Vec<_>>());
    Ok(TauSweepResult {
        points,
        tau_star,
        grid: *grid,
        column_names: spec
            .indices
            .iter()
            .map(|&j| eval_data.column_names()[j].clone())
            .collect(),
    })
}
