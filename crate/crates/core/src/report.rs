//! Per-algorithm evaluation bundle.

use crate::dataset::Dataset;
use crate::error::Result;
use crate::metrics::{self, EvalFrame};
use crate::model::{decide_score, ScoreModel};
use crate::models::{predict_base_scores, predict_scores};

#[derive(Debug, Clone, PartialEq)]
pub struct FairnessReport {
    pub algorithm: String,
    pub accuracy: f64,
    pub admit_protected: f64,
    pub admit_unprotected: f64,
    pub group_discr: f64,
    /// Absent for the reference model itself.
    pub latent_discr: Option<f64>,
    pub strict_latent_discr: Option<f64>,
    /// Standard error when `latent_discr` was estimated from sampled pairs.
    pub latent_std_error: Option<f64>,
    pub consistency_points: Option<Vec<(f64, f64)>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    /// Largest group evaluated by exact pair counting.
    pub exact_pair_limit: usize,
    /// Sampled pairs beyond that limit.
    pub sampled_pairs: u64,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            exact_pair_limit: 20_000,
            sampled_pairs: 10_000_000,
            seed: 0,
        }
    }
}

/// Frame for `model` on `data`; groups and the protected flag come from the
/// unmasked sensitive values, the protected flag from the first sensitive
/// column.
pub fn eval_frame(model: &ScoreModel, reference: &ScoreModel, data: &Dataset) -> Result<EvalFrame> {
    let candidate = predict_scores(model, data)?;
    let predictions = candidate.iter().map(|&s| decide_score(s)).collect();
    let reference_scores = predict_base_scores(reference, data)?;
    EvalFrame::new(
        data.labels().to_vec(),
        predictions,
        reference_scores,
        candidate,
        data.group_ids().to_vec(),
        data.protected_flags(0),
    )
}

/// Evaluates `model` on `data`. `reference` is h*; pass `None` when `model`
/// is h* itself, which leaves the latent columns empty.
pub fn evaluate(
    algorithm: &str,
    model: &ScoreModel,
    reference: Option<&ScoreModel>,
    data: &Dataset,
    opts: &EvalOptions,
) -> Result<FairnessReport> {
    let frame = eval_frame(model, reference.unwrap_or(model), data)?;
    let accuracy = metrics::accuracy(&frame);
    let (admit_protected, admit_unprotected) = metrics::admittance(&frame)?;
    let group_discr = (admit_protected - admit_unprotected).abs();
    let (latent_discr, strict_latent_discr, latent_std_error) = match reference {
        None => (None, None, None),
        Some(_) => {
            let largest = {
                let mut counts = std::collections::HashMap::new();
                for g in &frame.group {
                    *counts.entry(*g).or_insert(0usize) += 1;
                }
                counts.into_values().max().unwrap_or(0)
            };
            let strict = metrics::strict_latent_discrimination(&frame)?;
            if largest <= opts.exact_pair_limit {
                (Some(metrics::latent_discrimination(&frame)?), Some(strict), None)
            } else {
                let est = metrics::pair_subsample_ld(&frame, opts.sampled_pairs, opts.seed)?;
                (Some(est.estimate), Some(strict), Some(est.std_error))
            }
        }
    };
    Ok(FairnessReport {
        algorithm: algorithm.to_string(),
        accuracy,
        admit_protected,
        admit_unprotected,
        group_discr,
        latent_discr,
        strict_latent_discr,
        latent_std_error,
        consistency_points: None,
    })
}
