//! From-scratch trainers: L2-regularized logistic regression, linear SVM
//! (hinge loss, subgradient descent) and a small multilayer perceptron.
//!
//! All three share one gradient-descent driver over a flat parameter vector.
//! Full-batch descent is the default; `batch_size` smaller than the row
//! count switches to seeded mini-batches.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::{sigmoid, Activation, DenseLayer, Family, MlpParams, ScoreModel};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2_penalty: f64,
    /// `None` means full batch.
    pub batch_size: Option<usize>,
    pub seed: u64,
    pub convergence_tol: f64,
    /// Allow fitting data with a single label value.
    pub allow_degenerate: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.1,
            epochs: 2000,
            l2_penalty: 1e-3,
            batch_size: None,
            seed: 0,
            convergence_tol: 1e-8,
            allow_degenerate: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if !(self.l2_penalty.is_finite() && self.l2_penalty >= 0.0) {
            return Err(Error::Config("l2_penalty must be non-negative".into()));
        }
        if self.batch_size == Some(0) {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.convergence_tol.is_finite() && self.convergence_tol > 0.0) {
            return Err(Error::Config("convergence_tol must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpArchitecture {
    pub hidden_layers: Vec<usize>,
    pub activation: Activation,
}

impl Default for MlpArchitecture {
    fn default() -> Self {
        MlpArchitecture {
            hidden_layers: vec![16, 8, 4],
            activation: Activation::Relu,
        }
    }
}

impl MlpArchitecture {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_layers.is_empty() || self.hidden_layers.contains(&0) {
            return Err(Error::Config("MLP needs at least one non-empty hidden layer".into()));
        }
        Ok(())
    }
}

/// Which hypothesis family to fit.
#[derive(Debug, Clone, PartialEq)]
pub enum FamilySpec {
    Logistic,
    LinearSvm,
    Mlp(MlpArchitecture),
}

impl FamilySpec {
    pub fn family(&self) -> Family {
        match self {
            FamilySpec::Logistic => Family::Logistic,
            FamilySpec::LinearSvm => Family::LinearSvm,
            FamilySpec::Mlp(_) => Family::Mlp,
        }
    }

    pub fn fit(&self, train: &Dataset, cfg: &TrainConfig) -> Result<Fitted> {
        match self {
            FamilySpec::Logistic => train_logistic(train, cfg),
            FamilySpec::LinearSvm => train_linear_svm(train, cfg),
            FamilySpec::Mlp(arch) => train_mlp(train, arch, cfg),
        }
    }
}

/// A trained model plus what happened while fitting it.
#[derive(Debug, Clone)]
pub struct Fitted {
    pub model: ScoreModel,
    /// Full-data objective at the start of each epoch run.
    pub loss_history: Vec<f64>,
    pub warnings: Vec<String>,
}

impl Fitted {
    pub fn final_loss(&self) -> f64 {
        self.loss_history.last().copied().unwrap_or(f64::NAN)
    }
}

trait Objective {
    fn dim(&self) -> usize;
    /// Objective over `rows` (all rows when `None`); writes the gradient.
    fn loss_grad(&self, theta: &[f64], rows: Option<&[usize]>, grad: &mut [f64]) -> Result<f64>;
}

#[derive(Clone, Copy, PartialEq)]
enum Schedule {
    Constant,
    InverseSqrt,
}

struct Descent {
    theta: Vec<f64>,
    history: Vec<f64>,
}

fn descend(
    obj: &dyn Objective,
    mut theta: Vec<f64>,
    n: usize,
    cfg: &TrainConfig,
    schedule: Schedule,
) -> Result<Descent> {
    let mut grad = vec![0.0; obj.dim()];
    let mut scratch = vec![0.0; obj.dim()];
    let mut history = Vec::new();
    let mut best = (f64::INFINITY, theta.clone());
    let batch = cfg.batch_size.filter(|&b| b < n);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_ba7c);
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 0..cfg.epochs {
        let loss = match batch {
            None => obj.loss_grad(&theta, None, &mut grad)?,
            Some(_) => obj.loss_grad(&theta, None, &mut scratch)?,
        };
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        if loss < best.0 {
            best = (loss, theta.clone());
        }
        let converged = history
            .last()
            .is_some_and(|&prev: &f64| (prev - loss).abs() < cfg.convergence_tol);
        history.push(loss);
        if converged {
            break;
        }
        let step = match schedule {
            Schedule::Constant => cfg.learning_rate,
            Schedule::InverseSqrt => cfg.learning_rate / ((epoch + 1) as f64).sqrt(),
        };
        match batch {
            None => {
                for (t, g) in theta.iter_mut().zip(&grad) {
                    *t -= step * g;
                }
            }
            Some(b) => {
                order.shuffle(&mut rng);
                for chunk in order.chunks(b) {
                    obj.loss_grad(&theta, Some(chunk), &mut grad)?;
                    for (t, g) in theta.iter_mut().zip(&grad) {
                        *t -= step * g;
                    }
                }
            }
        }
    }
    // Subgradient steps are not monotone, so hand back the best iterate seen.
    let theta = if schedule == Schedule::InverseSqrt { best.1 } else { theta };
    Ok(Descent { theta, history })
}

fn check_labels(train: &Dataset, cfg: &TrainConfig) -> Result<()> {
    let pos = train.labels().iter().filter(|&&y| y == 1).count();
    if !cfg.allow_degenerate && (pos == 0 || pos == train.len()) {
        return Err(Error::SingleLabel { label: u8::from(pos > 0) });
    }
    Ok(())
}

#[inline]
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(a, b)| a * b).sum()
}

#[derive(Clone, Copy)]
enum LinearLoss {
    Log,
    Hinge,
}

struct LinearObjective<'a> {
    data: &'a Dataset,
    l2: f64,
    loss: LinearLoss,
}

impl Objective for LinearObjective<'_> {
    fn dim(&self) -> usize {
        self.data.width() + 1
    }

    fn loss_grad(&self, theta: &[f64], rows: Option<&[usize]>, grad: &mut [f64]) -> Result<f64> {
        let d = self.data.width();
        let (w, b) = theta.split_at(d);
        let b = b[0];
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut total = 0.0;
        let mut visit = |i: usize| {
            let x = self.data.row(i);
            let y = self.data.labels()[i] as f64;
            let z = dot(w, x) + b;
            let coef = match self.loss {
                LinearLoss::Log => {
                    total += softplus(z) - y * z;
                    sigmoid(z) - y
                }
                LinearLoss::Hinge => {
                    let s = 2.0 * y - 1.0;
                    let margin = 1.0 - s * z;
                    if margin > 0.0 {
                        total += margin;
                        -s
                    } else {
                        0.0
                    }
                }
            };
            if coef != 0.0 {
                for (g, xj) in grad[..d].iter_mut().zip(x) {
                    *g += coef * xj;
                }
                grad[d] += coef;
            }
        };
        let count = match rows {
            Some(r) => {
                r.iter().for_each(|&i| visit(i));
                r.len()
            }
            None => {
                (0..self.data.len()).for_each(&mut visit);
                self.data.len()
            }
        };
        let inv = 1.0 / count as f64;
        grad.iter_mut().for_each(|g| *g *= inv);
        for (g, wj) in grad[..d].iter_mut().zip(w) {
            *g += self.l2 * wj;
        }
        Ok(total * inv + 0.5 * self.l2 * dot(w, w))
    }
}

/// Mean log-loss plus `l2/2 * |w|^2` (intercept unpenalized).
pub fn logistic_objective(data: &Dataset, l2: f64, weights: &[f64], intercept: f64) -> f64 {
    linear_objective(data, l2, weights, intercept, LinearLoss::Log)
}

/// Mean hinge loss plus `l2/2 * |w|^2` (intercept unpenalized).
pub fn hinge_objective(data: &Dataset, l2: f64, weights: &[f64], intercept: f64) -> f64 {
    linear_objective(data, l2, weights, intercept, LinearLoss::Hinge)
}

fn linear_objective(data: &Dataset, l2: f64, w: &[f64], b: f64, loss: LinearLoss) -> f64 {
    let obj = LinearObjective { data, l2, loss };
    let mut theta = w.to_vec();
    theta.push(b);
    let mut grad = vec![0.0; theta.len()];
    obj.loss_grad(&theta, None, &mut grad).expect("linear objective is infallible")
}

fn train_linear(train: &Dataset, cfg: &TrainConfig, loss: LinearLoss) -> Result<Fitted> {
    cfg.validate()?;
    check_labels(train, cfg)?;
    let obj = LinearObjective { data: train, l2: cfg.l2_penalty, loss };
    let schedule = match loss {
        LinearLoss::Log => Schedule::Constant,
        LinearLoss::Hinge => Schedule::InverseSqrt,
    };
    let run = descend(&obj, vec![0.0; obj.dim()], train.len(), cfg, schedule)?;
    let mut theta = run.theta;
    let intercept = theta.pop().expect("intercept slot");
    let family = match loss {
        LinearLoss::Log => Family::Logistic,
        LinearLoss::Hinge => Family::LinearSvm,
    };
    Ok(Fitted {
        model: ScoreModel::linear(family, theta, intercept),
        loss_history: run.history,
        warnings: Vec::new(),
    })
}

/// Score is `sigmoid(w.x + b)`.
pub fn train_logistic(train: &Dataset, cfg: &TrainConfig) -> Result<Fitted> {
    train_linear(train, cfg, LinearLoss::Log)
}

/// Hinge-loss linear SVM. The decision value goes through the logistic link,
/// so the score ordering and the sign at 0 (score ½) are preserved.
pub fn train_linear_svm(train: &Dataset, cfg: &TrainConfig) -> Result<Fitted> {
    train_linear(train, cfg, LinearLoss::Hinge)
}

/// Layer sizes plus offsets into a flat parameter vector laid out as
/// `[W_0, b_0, W_1, b_1, ...]`.
#[derive(Debug, Clone)]
pub struct MlpShape {
    dims: Vec<usize>,
    offsets: Vec<usize>,
    activation: Activation,
}

impl MlpShape {
    pub fn new(input: usize, arch: &MlpArchitecture) -> Self {
        let mut dims = vec![input];
        dims.extend(&arch.hidden_layers);
        dims.push(1);
        let mut offsets = vec![0];
        for w in dims.windows(2) {
            let last = *offsets.last().unwrap();
            offsets.push(last + w[0] * w[1] + w[1]);
        }
        MlpShape { dims, offsets, activation: arch.activation }
    }

    pub fn len(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn layers(&self) -> usize {
        self.dims.len() - 1
    }

    fn split<'a>(&self, theta: &'a [f64], l: usize) -> (&'a [f64], &'a [f64]) {
        let (inp, out) = (self.dims[l], self.dims[l + 1]);
        let start = self.offsets[l];
        theta[start..start + inp * out + out].split_at(inp * out)
    }

    /// Symmetric uniform init in `±1/sqrt(fan_in)`.
    pub fn init(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut theta = Vec::with_capacity(self.len());
        for w in self.dims.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            for _ in 0..w[0] * w[1] + w[1] {
                theta.push(rng.random_range(-bound..bound));
            }
        }
        theta
    }

    pub fn to_params(&self, theta: &[f64]) -> MlpParams {
        let layers = (0..self.layers())
            .map(|l| {
                let (w, b) = self.split(theta, l);
                DenseLayer {
                    inputs: self.dims[l],
                    outputs: self.dims[l + 1],
                    weights: w.to_vec(),
                    biases: b.to_vec(),
                }
            })
            .collect();
        MlpParams { activation: self.activation, layers }
    }

    pub fn from_params(params: &MlpParams) -> (Self, Vec<f64>) {
        let arch = MlpArchitecture {
            hidden_layers: params.layers[..params.layers.len() - 1]
                .iter()
                .map(|l| l.outputs)
                .collect(),
            activation: params.activation,
        };
        let shape = MlpShape::new(params.input_width(), &arch);
        let theta = params
            .layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.biases).copied())
            .collect();
        (shape, theta)
    }
}

struct MlpObjective<'a> {
    data: &'a Dataset,
    shape: MlpShape,
    l2: f64,
}

impl Objective for MlpObjective<'_> {
    fn dim(&self) -> usize {
        self.shape.len()
    }

    fn loss_grad(&self, theta: &[f64], rows: Option<&[usize]>, grad: &mut [f64]) -> Result<f64> {
        let shape = &self.shape;
        let nl = shape.layers();
        grad.iter_mut().for_each(|g| *g = 0.0);
        // activations[l] is the input to layer l; activations[nl] the logit.
        let mut acts: Vec<Vec<f64>> = shape.dims.iter().map(|&d| vec![0.0; d]).collect();
        let mut deltas: Vec<Vec<f64>> = shape.dims.iter().map(|&d| vec![0.0; d]).collect();
        let mut total = 0.0;
        let all: Vec<usize>;
        let rows = match rows {
            Some(r) => r,
            None => {
                all = (0..self.data.len()).collect();
                &all
            }
        };
        let inv = 1.0 / rows.len() as f64;

        for &i in rows {
            acts[0].copy_from_slice(self.data.row(i));
            for l in 0..nl {
                let (w, b) = shape.split(theta, l);
                let (lo, hi) = acts.split_at_mut(l + 1);
                let input = &lo[l];
                let out = &mut hi[0];
                for (k, o) in out.iter_mut().enumerate() {
                    let z = dot(&w[k * input.len()..(k + 1) * input.len()], input) + b[k];
                    *o = if l + 1 == nl { z } else { shape.activation.apply(z) };
                    if !o.is_finite() {
                        return Err(Error::NonFiniteActivation { layer: l });
                    }
                }
            }
            let z = acts[nl][0];
            let y = self.data.labels()[i] as f64;
            total += softplus(z) - y * z;
            deltas[nl][0] = (sigmoid(z) - y) * inv;

            for l in (0..nl).rev() {
                let (inp, out) = (shape.dims[l], shape.dims[l + 1]);
                let start = shape.offsets[l];
                let (w, _) = shape.split(theta, l);
                let (dlo, dhi) = deltas.split_at_mut(l + 1);
                let delta_out = &dhi[0];
                let gw = &mut grad[start..start + inp * out + out];
                for k in 0..out {
                    let dk = delta_out[k];
                    if dk == 0.0 {
                        continue;
                    }
                    for (g, a) in gw[k * inp..(k + 1) * inp].iter_mut().zip(&acts[l]) {
                        *g += dk * a;
                    }
                    gw[inp * out + k] += dk;
                }
                if l > 0 {
                    let delta_in = &mut dlo[l];
                    for (j, d) in delta_in.iter_mut().enumerate() {
                        let back: f64 = (0..out).map(|k| w[k * inp + j] * delta_out[k]).sum();
                        *d = back * shape.activation.derivative(acts[l][j]);
                    }
                }
            }
        }

        let mut penalty = 0.0;
        for l in 0..nl {
            let (inp, out) = (shape.dims[l], shape.dims[l + 1]);
            let start = shape.offsets[l];
            for j in start..start + inp * out {
                penalty += theta[j] * theta[j];
                grad[j] += self.l2 * theta[j];
            }
        }
        Ok(total * inv + 0.5 * self.l2 * penalty)
    }
}

/// Mean log-loss of the network plus `l2/2` times the squared weights
/// (biases unpenalized), with its gradient in flat layout.
pub fn mlp_objective_and_gradient(
    data: &Dataset,
    params: &MlpParams,
    l2: f64,
) -> Result<(f64, Vec<f64>)> {
    let (shape, theta) = MlpShape::from_params(params);
    let obj = MlpObjective { data, shape, l2 };
    let mut grad = vec![0.0; theta.len()];
    let loss = obj.loss_grad(&theta, None, &mut grad)?;
    Ok((loss, grad))
}

pub fn train_mlp(train: &Dataset, arch: &MlpArchitecture, cfg: &TrainConfig) -> Result<Fitted> {
    cfg.validate()?;
    arch.validate()?;
    let shape = MlpShape::new(train.width(), arch);
    let init = shape.init(cfg.seed);
    let obj = MlpObjective { data: train, shape: shape.clone(), l2: cfg.l2_penalty };
    let run = descend(&obj, init, train.len(), cfg, Schedule::Constant)?;

    let mut warnings = Vec::new();
    let h = &run.history;
    let tail = (h.len() / 10).max(1);
    if h.len() > 1 {
        let start = h.len().saturating_sub(tail + 1);
        if let Some(t) = (start..h.len() - 1).find(|&t| h[t + 1] > h[t] + 1e-6) {
            warnings.push(format!(
                "training loss rose from {:.6} to {:.6} at epoch {} in the final 10% of epochs",
                h[t],
                h[t + 1],
                t + 1
            ));
        }
    }
    Ok(Fitted {
        model: ScoreModel {
            family: Family::Mlp,
            parameters: crate::model::Parameters::Mlp(shape.to_params(&run.theta)),
            tau: 0.0,
            mask: None,
        },
        loss_history: run.history,
        warnings,
    })
}

/// `score(x) + tau` for every row.
pub fn predict_scores(model: &ScoreModel, d: &Dataset) -> Result<Vec<f64>> {
    if d.width() != model.width() {
        return Err(Error::DimensionMismatch {
            expected: model.width(),
            actual: d.width(),
        });
    }
    d.rows().map(|r| model.score(r)).collect()
}

/// Base scores (offset excluded) for every row.
pub fn predict_base_scores(model: &ScoreModel, d: &Dataset) -> Result<Vec<f64>> {
    if d.width() != model.width() {
        return Err(Error::DimensionMismatch {
            expected: model.width(),
            actual: d.width(),
        });
    }
    d.rows().map(|r| model.base_score(r)).collect()
}

pub fn predict_decisions(model: &ScoreModel, d: &Dataset) -> Result<Vec<u8>> {
    Ok(predict_scores(model, d)?
        .into_iter()
        .map(crate::model::decide_score)
        .collect())
}
