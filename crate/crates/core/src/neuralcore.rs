//! Dense network engine: a feature extractor `f` (stack of ReLU layers) and a
//! two-layer classifier `g`, with dropout on `g`'s hidden activations.
//!
//! Weights are stored as `(out, in)` matrices, so a layer computes
//! `z = x · Wᵀ + b` for a row-major batch `x`.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Bernoulli, Distribution, Uniform};

use crate::error::{shape_err, Error, Result};

/// Floor applied to probabilities before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, z: &mut Array2<f64>) {
        if self == Activation::Relu {
            z.mapv_inplace(|v| v.max(0.0));
        }
    }

    fn tag(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Identity => 1,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Identity),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Dense {
    /// Glorot-uniform weights, zero bias.
    pub fn glorot<R: Rng + ?Sized>(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let a = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let dist = Uniform::new_inclusive(-a, a).expect("finite bound");
        let weights = Array2::from_shape_simple_fn((out_dim, in_dim), || dist.sample(rng));
        Dense {
            weights,
            bias: Array1::zeros(out_dim),
            activation,
        }
    }

    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Dense {
            weights: Array2::zeros((out_dim, in_dim)),
            bias: Array1::zeros(out_dim),
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }

    fn affine(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.weights.t()) + &self.bias
    }
}

/// Architecture description used to build a fresh [`Model`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub input_dim: usize,
    /// Output widths of the feature extractor layers; the last one is the
    /// feature dimension.
    pub feature_dims: Vec<usize>,
    pub classifier_hidden: usize,
    pub classes: usize,
    pub dropout_rate: f64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            input_dim: 2,
            feature_dims: vec![64, 32],
            classifier_hidden: 32,
            classes: 2,
            dropout_rate: 0.75,
        }
    }
}

/// Binary keep-mask over the classifier's hidden units.
///
/// `values` has either a single row (shared by every sample of the pass) or
/// one row per sample. Kept activations are multiplied by `scale`, the inverse
/// keep-probability of the distribution the mask was drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    values: Array2<f64>,
    scale: f64,
}

impl DropoutMask {
    /// The identity mask: every unit kept, no rescaling.
    pub fn ones(width: usize) -> Self {
        DropoutMask {
            values: Array2::ones((1, width)),
            scale: 1.0,
        }
    }

    /// One mask row, shared by all samples of a pass.
    pub fn sample<R: Rng + ?Sized>(width: usize, rate: f64, rng: &mut R) -> Result<Self> {
        Self::sample_rows(1, width, rate, rng)
    }

    /// An independent mask row per sample.
    pub fn sample_rows<R: Rng + ?Sized>(
        rows: usize,
        width: usize,
        rate: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        let keep = 1.0 - rate;
        let coin = Bernoulli::new(keep).map_err(|e| Error::Config(e.to_string()))?;
        let values =
            Array2::from_shape_simple_fn((rows, width), || if coin.sample(rng) { 1.0 } else { 0.0 });
        Ok(DropoutMask {
            values,
            scale: 1.0 / keep,
        })
    }

    pub fn width(&self) -> usize {
        self.values.ncols()
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    fn apply(&self, h: &mut Array2<f64>) {
        if self.values.nrows() == 1 {
            let row = self.values.row(0);
            for mut r in h.rows_mut() {
                r.zip_mut_with(&row, |v, &m| *v *= m);
            }
        } else {
            *h *= &self.values;
        }
        if self.scale != 1.0 {
            h.mapv_inplace(|v| v * self.scale);
        }
    }

    fn factors(&self, rows: usize) -> Array2<f64> {
        let base = if self.values.nrows() == 1 {
            self.values
                .broadcast((rows, self.values.ncols()))
                .expect("single-row broadcast")
                .to_owned()
        } else {
            self.values.clone()
        };
        base * self.scale
    }
}

/// Which domain a batch row came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DomainTag {
    Source(usize),
    Target,
}

/// Training batch for one SGD step.
#[derive(Debug, Clone)]
pub struct Batch {
    pub inputs: Array2<f64>,
    /// Label encodings, one probability row per sample.
    pub targets: Array2<f64>,
    pub weights: Array1<f64>,
    pub domains: Vec<DomainTag>,
}

impl Batch {
    pub fn validate(&self) -> Result<()> {
        let n = self.inputs.nrows();
        if self.targets.nrows() != n || self.weights.len() != n || self.domains.len() != n {
            return Err(shape_err(
                "batch rows",
                n,
                format!(
                    "targets {}, weights {}, domains {}",
                    self.targets.nrows(),
                    self.weights.len(),
                    self.domains.len()
                ),
            ));
        }
        for (row, (t, &w)) in self.targets.rows().into_iter().zip(&self.weights).enumerate() {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::Numeric {
                    context: "batch weight",
                    row,
                });
            }
            if (t.sum() - 1.0).abs() > 1e-9 {
                return Err(Error::Numeric {
                    context: "label encoding sum",
                    row,
                });
            }
        }
        Ok(())
    }
}

/// Per-layer gradients, aligned with [`Model::layers`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
}

struct ForwardTrace {
    /// Input of every layer (post-activation, post-dropout for the last).
    inputs: Vec<Array2<f64>>,
    /// Pre-activation of every layer.
    pre: Vec<Array2<f64>>,
    /// Mask factors applied to the classifier hidden units, if any.
    mask_factors: Option<Array2<f64>>,
    probs: Array2<f64>,
}

/// Feature extractor followed by a two-layer classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    layers: Vec<Dense>,
    dropout_rate: f64,
}

impl Model {
    pub fn new<R: Rng + ?Sized>(spec: &ModelSpec, rng: &mut R) -> Result<Self> {
        let layers = Self::shape_plan(spec)?
            .into_iter()
            .map(|(i, o, act)| Dense::glorot(i, o, act, rng))
            .collect();
        Model::from_layers(layers, spec.dropout_rate)
    }

    /// All weights and biases zero.
    pub fn zeros(spec: &ModelSpec) -> Result<Self> {
        let layers = Self::shape_plan(spec)?
            .into_iter()
            .map(|(i, o, act)| Dense::zeros(i, o, act))
            .collect();
        Model::from_layers(layers, spec.dropout_rate)
    }

    fn shape_plan(spec: &ModelSpec) -> Result<Vec<(usize, usize, Activation)>> {
        if spec.input_dim == 0 || spec.classifier_hidden == 0 || spec.classes == 0 {
            return Err(Error::Config("model widths must be positive".into()));
        }
        let mut plan = Vec::new();
        let mut width = spec.input_dim;
        for &d in &spec.feature_dims {
            if d == 0 {
                return Err(Error::Config("feature layer width must be positive".into()));
            }
            plan.push((width, d, Activation::Relu));
            width = d;
        }
        plan.push((width, spec.classifier_hidden, Activation::Relu));
        plan.push((spec.classifier_hidden, spec.classes, Activation::Identity));
        Ok(plan)
    }

    /// Builds a model from explicit layers. The last two layers form the
    /// classifier; everything before is the feature extractor.
    pub fn from_layers(layers: Vec<Dense>, dropout_rate: f64) -> Result<Self> {
        if layers.len() < 2 {
            return Err(Error::Config("classifier needs two layers".into()));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::Config(format!(
                "dropout rate {dropout_rate} outside [0, 1)"
            )));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(shape_err("layer chain", pair[0].out_dim(), pair[1].in_dim()));
            }
        }
        for l in &layers {
            if l.bias.len() != l.out_dim() {
                return Err(shape_err("layer bias", l.out_dim(), l.bias.len()));
            }
        }
        Ok(Model {
            layers,
            dropout_rate,
        })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.layers[self.layers.len() - 2].in_dim()
    }

    /// Width of the classifier's hidden layer, where dropout masks apply.
    pub fn hidden_dim(&self) -> usize {
        self.layers[self.layers.len() - 2].out_dim()
    }

    pub fn classes(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    fn check_inputs(&self, inputs: &ArrayView2<f64>, mask: Option<&DropoutMask>) -> Result<()> {
        if inputs.ncols() != self.input_dim() {
            return Err(shape_err("input width", self.input_dim(), inputs.ncols()));
        }
        if let Some(m) = mask {
            if m.width() != self.hidden_dim() {
                return Err(shape_err("dropout mask width", self.hidden_dim(), m.width()));
            }
            if m.rows() != 1 && m.rows() != inputs.nrows() {
                return Err(shape_err("dropout mask rows", inputs.nrows(), m.rows()));
            }
        }
        Ok(())
    }

    fn trace(&self, inputs: ArrayView2<f64>, mask: Option<&DropoutMask>) -> Result<ForwardTrace> {
        self.check_inputs(&inputs, mask)?;
        let dropout_at = self.layers.len() - 2;
        let mut layer_inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut mask_factors = None;
        let mut a = inputs.to_owned();
        for (idx, layer) in self.layers.iter().enumerate() {
            let z = layer.affine(a.view());
            let mut out = z.clone();
            layer.activation.apply(&mut out);
            if idx == dropout_at {
                if let Some(m) = mask {
                    m.apply(&mut out);
                    mask_factors = Some(m.factors(out.nrows()));
                }
            }
            layer_inputs.push(a);
            pre.push(z);
            a = out;
        }
        Ok(ForwardTrace {
            inputs: layer_inputs,
            pre,
            mask_factors,
            probs: softmax_rows(&a),
        })
    }

    /// Raw classifier outputs before softmax.
    pub fn logits(&self, inputs: ArrayView2<f64>, mask: Option<&DropoutMask>) -> Result<Array2<f64>> {
        self.check_inputs(&inputs, mask)?;
        let dropout_at = self.layers.len() - 2;
        let mut a = inputs.to_owned();
        for (idx, layer) in self.layers.iter().enumerate() {
            let mut z = layer.affine(a.view());
            layer.activation.apply(&mut z);
            if idx == dropout_at {
                if let Some(m) = mask {
                    m.apply(&mut z);
                }
            }
            a = z;
        }
        Ok(a)
    }

    /// Class probabilities for every input row.
    pub fn forward(&self, inputs: ArrayView2<f64>, mask: Option<&DropoutMask>) -> Result<Array2<f64>> {
        Ok(softmax_rows(&self.logits(inputs, mask)?))
    }

    /// Deterministic class prediction (no dropout), lowest index on ties.
    pub fn predict(&self, inputs: ArrayView2<f64>) -> Result<Vec<usize>> {
        let probs = self.forward(inputs, None)?;
        Ok(probs.rows().into_iter().map(|r| argmax(r.iter().copied())).collect())
    }

    /// Weighted cross-entropy of `batch` and its gradient w.r.t. every layer.
    pub fn loss_and_gradients(
        &self,
        batch: &Batch,
        mask: Option<&DropoutMask>,
    ) -> Result<(f64, Gradients)> {
        batch.validate()?;
        let trace = self.trace(batch.inputs.view(), mask)?;
        let loss = weighted_cross_entropy(&trace.probs, &batch.targets, &batch.weights)?;

        // d loss / d logits for the floored loss: entries at the floor carry
        // no gradient through the log.
        let rows = batch.inputs.nrows() as f64;
        let mut delta = Array2::zeros(trace.probs.raw_dim());
        for (k, mut d) in delta.rows_mut().into_iter().enumerate() {
            let p = trace.probs.row(k);
            let t = batch.targets.row(k);
            let w = batch.weights[k] / rows;
            let active: Vec<f64> = p
                .iter()
                .zip(t.iter())
                .map(|(&pc, &tc)| if pc > PROB_FLOOR { tc } else { 0.0 })
                .collect();
            let mass: f64 = active.iter().sum();
            for c in 0..d.len() {
                d[c] = w * (p[c] * mass - active[c]);
            }
        }

        let dropout_at = self.layers.len() - 2;
        let mut grads = vec![(Array2::zeros((0, 0)), Array1::zeros(0)); self.layers.len()];
        for idx in (0..self.layers.len()).rev() {
            let layer = &self.layers[idx];
            if idx != self.layers.len() - 1 {
                // delta currently holds d loss / d (layer output after mask).
                if idx == dropout_at {
                    if let Some(f) = &trace.mask_factors {
                        delta *= f;
                    }
                }
                if layer.activation == Activation::Relu {
                    delta.zip_mut_with(&trace.pre[idx], |d, &z| {
                        if z <= 0.0 {
                            *d = 0.0;
                        }
                    });
                }
            }
            let dw = delta.t().dot(&trace.inputs[idx]);
            let db = delta.sum_axis(Axis(0));
            let next = delta.dot(&layer.weights);
            grads[idx] = (dw, db);
            delta = next;
        }
        Ok((loss, Gradients { layers: grads }))
    }

    /// `θ ← θ − lr·∇θ`.
    pub fn sgd_step(&mut self, grads: &Gradients, learning_rate: f64) -> Result<()> {
        if grads.layers.len() != self.layers.len() {
            return Err(shape_err("gradient layers", self.layers.len(), grads.layers.len()));
        }
        for (layer, (dw, db)) in self.layers.iter().zip(&grads.layers) {
            if dw.dim() != layer.weights.dim() {
                return Err(shape_err(
                    "weight gradient",
                    format!("{:?}", layer.weights.dim()),
                    format!("{:?}", dw.dim()),
                ));
            }
            if db.len() != layer.bias.len() {
                return Err(shape_err("bias gradient", layer.bias.len(), db.len()));
            }
        }
        for (layer, (dw, db)) in self.layers.iter_mut().zip(&grads.layers) {
            layer.weights.scaled_add(-learning_rate, dw);
            layer.bias.scaled_add(-learning_rate, db);
        }
        Ok(())
    }

    /// Content hash of the layer shapes and parameter bits.
    pub fn snapshot_id(&self) -> String {
        let mut bytes = Vec::with_capacity(self.parameter_count() * 8 + 64);
        bytes.extend_from_slice(&self.dropout_rate.to_bits().to_le_bytes());
        for l in &self.layers {
            bytes.extend_from_slice(&(l.in_dim() as u64).to_le_bytes());
            bytes.extend_from_slice(&(l.out_dim() as u64).to_le_bytes());
            bytes.push(l.activation.tag());
            for v in l.weights.iter().chain(l.bias.iter()) {
                bytes.extend_from_slice(&v.to_bits().to_le_bytes());
            }
        }
        crate::seed::hex_digest(&bytes)[..16].to_string()
    }

    pub(crate) fn activation_tag(a: Activation) -> u8 {
        a.tag()
    }

    pub(crate) fn activation_from_tag(tag: u8) -> Option<Activation> {
        Activation::from_tag(tag)
    }
}

/// Numerically stable row-wise softmax.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| libm::exp(v - max));
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Index of the maximum, lowest index on ties.
pub fn argmax(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, v) in values.into_iter().enumerate() {
        if v > best_val {
            best = i;
            best_val = v;
        }
    }
    best
}

/// Mean over rows of `−ω_k Σ_c t_{k,c} log max(p_{k,c}, 1e-12)`.
pub fn weighted_cross_entropy(
    probs: &Array2<f64>,
    targets: &Array2<f64>,
    weights: &Array1<f64>,
) -> Result<f64> {
    if probs.dim() != targets.dim() {
        return Err(shape_err(
            "cross-entropy targets",
            format!("{:?}", probs.dim()),
            format!("{:?}", targets.dim()),
        ));
    }
    if weights.len() != probs.nrows() {
        return Err(shape_err("cross-entropy weights", probs.nrows(), weights.len()));
    }
    if probs.nrows() == 0 {
        return Err(Error::Empty("cross-entropy batch"));
    }
    let mut total = 0.0;
    for (k, (p, t)) in probs.rows().into_iter().zip(targets.rows()).enumerate() {
        let w = weights[k];
        if !w.is_finite() || p.iter().chain(t.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                context: "cross-entropy input",
                row: k,
            });
        }
        if w == 0.0 {
            continue;
        }
        let ce: f64 = p
            .iter()
            .zip(t.iter())
            .map(|(&pc, &tc)| if tc == 0.0 { 0.0 } else { -tc * libm::log(pc.max(PROB_FLOOR)) })
            .sum();
        total += w * ce;
    }
    Ok(total / probs.nrows() as f64)
}
