//! Comparison algorithms: the unconstrained model h*, retraining without the
//! sensitive columns, the majority classifier and data massaging.

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::{Family, Parameters, ScoreModel};
use crate::models::{predict_base_scores, train_logistic, FamilySpec, Fitted, TrainConfig};

/// h*: the family fitted on every feature, offset 0.
pub fn unconstrained(train: &Dataset, family: &FamilySpec, cfg: &TrainConfig) -> Result<Fitted> {
    family.fit(train, cfg)
}

/// Fits on the non-sensitive columns only, then widens the model back to the
/// full width with zero weight on every sensitive column, so it scores full
/// rows and never reads the sensitive values.
pub fn omit_sensitive(train: &Dataset, family: &FamilySpec, cfg: &TrainConfig) -> Result<Fitted> {
    let keep = train.non_sensitive_columns();
    if keep.is_empty() {
        return Err(Error::NoNonSensitiveColumns);
    }
    let reduced = train.select_columns(&keep)?;
    let mut fit = family.fit(&reduced, cfg)?;
    fit.model = widen(fit.model, &keep, train.width());
    Ok(fit)
}

fn widen(model: ScoreModel, keep: &[usize], width: usize) -> ScoreModel {
    let expand = |w: &[f64], stride: usize| -> Vec<f64> {
        // `w` is rows of length `stride` over the kept columns
        let mut out = Vec::with_capacity(w.len() / stride * width);
        for row in w.chunks_exact(stride) {
            let mut full = vec![0.0; width];
            for (&j, &v) in keep.iter().zip(row) {
                full[j] = v;
            }
            out.extend(full);
        }
        out
    };
    let parameters = match model.parameters {
        Parameters::Linear { weights, intercept } => Parameters::Linear {
            weights: expand(&weights, keep.len()),
            intercept,
        },
        Parameters::Mlp(mut p) => {
            let first = &mut p.layers[0];
            first.weights = expand(&first.weights, keep.len());
            first.inputs = width;
            Parameters::Mlp(p)
        }
        Parameters::Constant { value, .. } => Parameters::Constant { value, width },
    };
    ScoreModel { parameters, ..model }
}

/// Constant score 1 when positives are a strict majority, else 0.
pub fn majority(train: &Dataset) -> ScoreModel {
    let pos = train.labels().iter().filter(|&&y| y == 1).count();
    let value = if 2 * pos > train.len() { 1.0 } else { 0.0 };
    ScoreModel::constant(value, train.width())
}

/// Which rows massaging relabels and the resulting training copy.
#[derive(Debug, Clone)]
pub struct MassagePlan {
    /// Negatives of the lower-rate group relabeled positive.
    pub promoted: Vec<usize>,
    /// Positives of the higher-rate group relabeled negative.
    pub demoted: Vec<usize>,
    pub relabeled: Dataset,
    /// `true` when the protected group had the lower positive rate.
    pub protected_deprived: bool,
}

impl MassagePlan {
    pub fn flips(&self) -> usize {
        self.promoted.len() + self.demoted.len()
    }
}

/// Exact rate gap `|pos_a/n_a - pos_b/n_b|` as a numerator over `n_a * n_b`.
fn gap_numerator(pos_a: usize, n_a: usize, pos_b: usize, n_b: usize) -> u128 {
    let a = pos_a as u128 * n_b as u128;
    let b = pos_b as u128 * n_a as u128;
    a.abs_diff(b)
}

/// Number of promotions and demotions for `flips` total flips: the extra
/// flip of an odd count is a promotion when `promote_first`.
fn split_flips(flips: usize, promote_first: bool) -> (usize, usize) {
    let half = flips / 2;
    match (flips % 2, promote_first) {
        (0, _) => (half, half),
        (_, true) => (half + 1, half),
        (_, false) => (half, half + 1),
    }
}

/// Ranks rows with a logistic model on all features and relabels the
/// borderline ones until the two groups' positive rates are as close as
/// possible.
///
/// Flips alternate between promoting the highest-ranked negatives of the
/// lower-rate group and demoting the lowest-ranked positives of the
/// higher-rate group. Every total flip count is scanned, with both
/// orientations for odd counts; the smallest gap wins, ties going to fewer
/// flips and then to a promotion.
pub fn massage_labels(train: &Dataset, ranker_cfg: &TrainConfig) -> Result<MassagePlan> {
    if train.sensitive_columns().len() != 1 {
        return Err(Error::MassageSensitiveCount(train.sensitive_columns().len()));
    }
    let protected = train.protected_flags(0);
    let labels = train.labels();
    let count = |prot: bool| {
        let n = protected.iter().filter(|&&p| p == prot).count();
        let pos = protected
            .iter()
            .zip(labels)
            .filter(|(&p, &y)| p == prot && y == 1)
            .count();
        (pos, n)
    };
    let (pos_p, n_p) = count(true);
    let (pos_u, n_u) = count(false);
    if n_p == 0 || n_u == 0 {
        return Err(Error::GroupUndefined("massaging needs both groups present".into()));
    }

    // deprived = lower positive rate
    let protected_deprived = (pos_p as u128 * n_u as u128) < (pos_u as u128 * n_p as u128);
    let ((pos_d, n_d), (pos_f, n_f)) = if protected_deprived {
        ((pos_p, n_p), (pos_u, n_u))
    } else {
        ((pos_u, n_u), (pos_p, n_p))
    };
    let deprived_flag = protected_deprived;
    let promotable = n_d - pos_d;
    let demotable = pos_f;

    let mut best: Option<(u128, usize, bool)> = None; // (gap, flips, promote_first)
    let mut crossed = gap_numerator(pos_d, n_d, pos_f, n_f) == 0;
    let mut flips = 0usize;
    loop {
        for promote_first in [true, false] {
            if flips % 2 == 0 && !promote_first {
                continue;
            }
            let (p, d) = split_flips(flips, promote_first);
            if p > promotable || d > demotable {
                continue;
            }
            let gap = gap_numerator(pos_d + p, n_d, pos_f - d, n_f);
            if (pos_d + p) * n_f >= (pos_f - d) * n_d {
                crossed = true;
            }
            if best.is_none_or(|(g, _, _)| gap < g) {
                best = Some((gap, flips, promote_first));
            }
        }
        if crossed {
            break;
        }
        flips += 1;
        let (p, d) = split_flips(flips, true);
        let (p2, d2) = split_flips(flips, false);
        if (p > promotable || d > demotable) && (p2 > promotable || d2 > demotable) {
            let (group, needed, available) = if p > promotable {
                ("deprived", p, promotable)
            } else {
                ("favored", d, demotable)
            };
            return Err(Error::MassageShortfall { group, needed, available });
        }
    }
    let (_, flips, promote_first) = best.expect("flip count 0 is always feasible");
    let (n_promote, n_demote) = split_flips(flips, promote_first);

    let ranker = if n_promote + n_demote == 0 {
        None
    } else {
        let cfg = TrainConfig { allow_degenerate: true, ..ranker_cfg.clone() };
        Some(train_logistic(train, &cfg)?.model)
    };
    let scores = match &ranker {
        Some(m) => predict_base_scores(m, train)?,
        None => vec![0.0; train.len()],
    };

    let pick = |in_group: bool, label: u8, highest: bool, take: usize| -> Vec<usize> {
        let mut rows: Vec<usize> = (0..train.len())
            .filter(|&i| protected[i] == in_group && labels[i] == label)
            .collect();
        rows.sort_by(|&a, &b| {
            let ord = scores[a].partial_cmp(&scores[b]).unwrap();
            let ord = if highest { ord.reverse() } else { ord };
            ord.then(a.cmp(&b))
        });
        rows.truncate(take);
        rows.sort_unstable();
        rows
    };
    let promoted = pick(deprived_flag, 0, true, n_promote);
    let demoted = pick(!deprived_flag, 1, false, n_demote);

    let mut new_labels = labels.to_vec();
    for &i in &promoted {
        new_labels[i] = 1;
    }
    for &i in &demoted {
        new_labels[i] = 0;
    }
    Ok(MassagePlan {
        promoted,
        demoted,
        relabeled: train.with_labels(new_labels)?,
        protected_deprived,
    })
}

/// Massages the labels, then fits `family` on the relabeled copy using every
/// feature.
pub fn massage(
    train: &Dataset,
    ranker_cfg: &TrainConfig,
    family: &FamilySpec,
    cfg: &TrainConfig,
) -> Result<(Fitted, MassagePlan)> {
    let plan = massage_labels(train, ranker_cfg)?;
    let fit = family.fit(&plan.relabeled, cfg)?;
    Ok((fit, plan))
}

/// `true` when a model's decisions cannot depend on the sensitive columns.
pub fn ignores_sensitive(model: &ScoreModel, sensitive: &[usize]) -> bool {
    if model.family == Family::Constant {
        return true;
    }
    if let Some(m) = &model.mask {
        if sensitive.iter().all(|j| m.indices.contains(j)) {
            return true;
        }
    }
    match &model.parameters {
        Parameters::Linear { weights, .. } => sensitive.iter().all(|&j| weights[j] == 0.0),
        Parameters::Mlp(p) => {
            let first = &p.layers[0];
            first
                .weights
                .chunks_exact(first.inputs)
                .all(|row| sensitive.iter().all(|&j| row[j] == 0.0))
        }
        Parameters::Constant { .. } => true,
    }
}
