//! Trained scoring functions and the threshold-½ decision rule.
//!
//! A [`ScoreModel`] maps a feature row to a score in `[0, 1]`. The additive
//! offset `tau` is applied after the clamp, so `score + tau` may leave the
//! unit interval. A row is classified positive iff `score + tau > 0.5`.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Logistic,
    LinearSvm,
    Mlp,
    /// Fixed output irrespective of input (majority baseline).
    Constant,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::Logistic => "logistic",
            Family::LinearSvm => "linear_svm",
            Family::Mlp => "mlp",
            Family::Constant => "constant",
        }
    }

    pub fn is_linear(self) -> bool {
        matches!(self, Family::Logistic | Family::LinearSvm)
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logistic" => Ok(Family::Logistic),
            "linear_svm" | "svm" => Ok(Family::LinearSvm),
            "mlp" => Ok(Family::Mlp),
            "constant" => Ok(Family::Constant),
            other => Err(Error::InvalidArgument(format!("unknown model family `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

impl Activation {
    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
        }
    }

    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => sigmoid(z),
        }
    }

    /// Derivative expressed through the activation output `a`.
    #[inline]
    pub fn derivative(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "sigmoid" => Ok(Activation::Sigmoid),
            other => Err(Error::InvalidArgument(format!("unknown activation `{other}`"))),
        }
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// One dense layer; `weights` is `outputs x inputs`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl DenseLayer {
    pub fn forward_into(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.weights.chunks_exact(self.inputs).zip(&self.biases).map(|(w, b)| {
            w.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + b
        }));
    }
}

/// Multilayer perceptron: hidden layers use `activation`, the final single
/// output unit uses the logistic link.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub activation: Activation,
    pub layers: Vec<DenseLayer>,
}

impl MlpParams {
    pub fn input_width(&self) -> usize {
        self.layers[0].inputs
    }

    /// Pre-link output of the network.
    pub fn logit(&self, x: &[f64]) -> f64 {
        let mut a = x.to_vec();
        let mut z = Vec::new();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            layer.forward_into(&a, &mut z);
            if l == last {
                return z[0];
            }
            a.clear();
            a.extend(z.iter().map(|&v| self.activation.apply(v)));
        }
        unreachable!("network has an output layer")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Parameters {
    Linear { weights: Vec<f64>, intercept: f64 },
    Mlp(MlpParams),
    Constant { value: f64, width: usize },
}

/// Columns overwritten with fixed values before scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSpec {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl MaskSpec {
    pub fn new(indices: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if indices.len() != values.len() {
            return Err(Error::MaskMismatch(format!(
                "{} indices but {} reference values",
                indices.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::MaskMismatch("reference values must be finite".into()));
        }
        Ok(MaskSpec { indices, values })
    }

    pub fn apply(&self, row: &mut [f64]) {
        for (&j, &v) in self.indices.iter().zip(&self.values) {
            row[j] = v;
        }
    }

    pub fn check_width(&self, width: usize) -> Result<()> {
        match self.indices.iter().find(|&&j| j >= width) {
            Some(&index) => Err(Error::MaskIndex { index, width }),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreModel {
    pub family: Family,
    pub parameters: Parameters,
    pub tau: f64,
    /// When set, inputs are masked before scoring.
    pub mask: Option<MaskSpec>,
}

impl ScoreModel {
    pub fn linear(family: Family, weights: Vec<f64>, intercept: f64) -> Self {
        ScoreModel {
            family,
            parameters: Parameters::Linear { weights, intercept },
            tau: 0.0,
            mask: None,
        }
    }

    pub fn constant(value: f64, width: usize) -> Self {
        ScoreModel {
            family: Family::Constant,
            parameters: Parameters::Constant { value, width },
            tau: 0.0,
            mask: None,
        }
    }

    pub fn width(&self) -> usize {
        match &self.parameters {
            Parameters::Linear { weights, .. } => weights.len(),
            Parameters::Mlp(p) => p.input_width(),
            Parameters::Constant { width, .. } => *width,
        }
    }

    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = tau;
        self
    }

    pub fn with_mask(mut self, mask: Option<MaskSpec>) -> Self {
        self.mask = mask;
        self
    }

    /// Linear weights and intercept, if this is a linear family.
    pub fn linear_parts(&self) -> Option<(&[f64], f64)> {
        match &self.parameters {
            Parameters::Linear { weights, intercept } => Some((weights, *intercept)),
            _ => None,
        }
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.width() {
            return Err(Error::DimensionMismatch {
                expected: self.width(),
                actual: x.len(),
            });
        }
        Ok(())
    }

    fn raw_score(&self, x: &[f64]) -> f64 {
        let s = match &self.parameters {
            Parameters::Linear { weights, intercept } => {
                sigmoid(weights.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + intercept)
            }
            Parameters::Mlp(p) => sigmoid(p.logit(x)),
            Parameters::Constant { value, .. } => *value,
        };
        s.clamp(0.0, 1.0)
    }

    /// Clamped score in `[0, 1]`, after masking, without the offset.
    pub fn base_score(&self, x: &[f64]) -> Result<f64> {
        self.check(x)?;
        Ok(match &self.mask {
            Some(m) => {
                let mut row = x.to_vec();
                m.apply(&mut row);
                self.raw_score(&row)
            }
            None => self.raw_score(x),
        })
    }

    /// `base_score(x) + tau`.
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        Ok(self.base_score(x)? + self.tau)
    }

    pub fn decide(&self, x: &[f64]) -> Result<u8> {
        Ok(decide_score(self.score(x)?))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{FORMAT_MAGIC}");
        let _ = writeln!(out, "family {}", self.family.as_str());
        let _ = writeln!(out, "width {}", self.width());
        let _ = writeln!(out, "tau {:?}", self.tau);
        if let Some(m) = &self.mask {
            let _ = writeln!(out, "mask_indices{}", join(m.indices.iter()));
            let _ = writeln!(out, "mask_values{}", join_f(&m.values));
        }
        match &self.parameters {
            Parameters::Linear { weights, intercept } => {
                let _ = writeln!(out, "intercept {intercept:?}");
                let _ = writeln!(out, "weights{}", join_f(weights));
            }
            Parameters::Constant { value, .. } => {
                let _ = writeln!(out, "value {value:?}");
            }
            Parameters::Mlp(p) => {
                let _ = writeln!(out, "activation {}", p.activation.as_str());
                let _ = writeln!(out, "layers {}", p.layers.len());
                for l in &p.layers {
                    let _ = writeln!(out, "layer {} {}", l.outputs, l.inputs);
                    let _ = writeln!(out, "weights{}", join_f(&l.weights));
                    let _ = writeln!(out, "biases{}", join_f(&l.biases));
                }
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        if lines.next() != Some(FORMAT_MAGIC) {
            return Err(fmt_err(format!("expected header `{FORMAT_MAGIC}`")));
        }
        let mut fields = Fields(
            lines
                .map(|l| {
                    let mut parts = l.split_whitespace();
                    let key = parts.next().unwrap_or("");
                    (key, parts.collect())
                })
                .collect::<Vec<_>>()
                .into_iter()
                .peekable(),
        );
        let family: Family = single(&fields.take("family")?)?.parse()?;
        let width: usize = parse_one(&fields.take("width")?)?;
        let tau: f64 = parse_one(&fields.take("tau")?)?;
        let mask = if fields.peek_is("mask_indices") {
            let idx = parse_all(&fields.take("mask_indices")?)?;
            let vals = parse_all(&fields.take("mask_values")?)?;
            Some(MaskSpec::new(idx, vals)?)
        } else {
            None
        };
        let parameters = match family {
            Family::Logistic | Family::LinearSvm => {
                let intercept = parse_one(&fields.take("intercept")?)?;
                let weights = parse_all(&fields.take("weights")?)?;
                Parameters::Linear { weights, intercept }
            }
            Family::Constant => Parameters::Constant {
                value: parse_one(&fields.take("value")?)?,
                width,
            },
            Family::Mlp => {
                let activation: Activation = single(&fields.take("activation")?)?.parse()?;
                let count: usize = parse_one(&fields.take("layers")?)?;
                let mut layers = Vec::with_capacity(count);
                for _ in 0..count {
                    let dims = fields.take("layer")?;
                    if dims.len() != 2 {
                        return Err(fmt_err("layer needs outputs and inputs".into()));
                    }
                    let outputs: usize = parse_one(&dims[..1])?;
                    let inputs: usize = parse_one(&dims[1..])?;
                    let weights = parse_all(&fields.take("weights")?)?;
                    let biases = parse_all(&fields.take("biases")?)?;
                    if weights.len() != outputs * inputs || biases.len() != outputs {
                        return Err(fmt_err("layer payload size mismatch".into()));
                    }
                    layers.push(DenseLayer { inputs, outputs, weights, biases });
                }
                let chained = layers.windows(2).all(|w| w[0].outputs == w[1].inputs);
                if layers.is_empty() || !chained || layers.last().map(|l| l.outputs) != Some(1) {
                    return Err(fmt_err("layers must chain and end in a single output unit".into()));
                }
                Parameters::Mlp(MlpParams { activation, layers })
            }
        };
        if let Some((key, _)) = fields.0.next() {
            return Err(fmt_err(format!("unexpected trailing `{key}`")));
        }
        let model = ScoreModel { family, parameters, tau, mask };
        if model.width() != width {
            return Err(fmt_err(format!("declared width {width}, payload width {}", model.width())));
        }
        if let Some(m) = &model.mask {
            m.check_width(width)?;
        }
        Ok(model)
    }
}

struct Fields<'a>(std::iter::Peekable<std::vec::IntoIter<(&'a str, Vec<&'a str>)>>);

impl<'a> Fields<'a> {
    fn peek_is(&mut self, key: &str) -> bool {
        self.0.peek().is_some_and(|(k, _)| *k == key)
    }

    fn take(&mut self, key: &str) -> Result<Vec<&'a str>> {
        match self.0.next() {
            Some((k, v)) if k == key => Ok(v),
            Some((k, _)) => Err(fmt_err(format!("expected `{key}`, found `{k}`"))),
            None => Err(fmt_err(format!("missing `{key}`"))),
        }
    }
}

const FORMAT_MAGIC: &str = "fairmask-score-model v1";

fn fmt_err(detail: String) -> Error {
    Error::Format { what: "score model", detail }
}

fn join<T: std::fmt::Display>(it: impl Iterator<Item = T>) -> String {
    it.map(|v| format!(" {v}")).collect()
}

fn join_f(v: &[f64]) -> String {
    // `{:?}` prints the shortest representation that parses back bit-exactly.
    v.iter().map(|x| format!(" {x:?}")).collect()
}

fn single<'a>(v: &[&'a str]) -> Result<&'a str> {
    match v {
        [one] => Ok(one),
        _ => Err(fmt_err(format!("expected one value, found {}", v.len()))),
    }
}

fn parse_one<T: FromStr>(v: &[&str]) -> Result<T> {
    let s = single(v)?;
    s.parse().map_err(|_| fmt_err(format!("cannot parse `{s}`")))
}

fn parse_all<T: FromStr>(v: &[&str]) -> Result<Vec<T>> {
    v.iter()
        .map(|s| s.parse().map_err(|_| fmt_err(format!("cannot parse `{s}`"))))
        .collect()
}

#[inline]
pub fn decide_score(score_plus_tau: f64) -> u8 {
    u8::from(score_plus_tau > 0.5)
}
