//! A small ReLU MLP with hand-coded backpropagation, the set-sum
//! classification head, an optional auxiliary odd-class head, and the
//! SGD-with-momentum / cosine-annealing trainer.
//!
//! The set head adds no parameters: training aggregates per-member
//! logits by summation, inference applies the same network to single
//! examples.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datasets::{
    apply_distribution, partition_by_class, DataError, DistributionSpec, LabeledDataset,
};
use crate::losses::{oko_soft, set_logit_sum, vanilla_ce, LossError, LossKind, LossSpec};
use crate::numcore::{LogitVec, NumError, RngStream};
use crate::sampling::{sample_balanced_batch, sample_oko_set, sample_uniform_batch, SamplingError};
use crate::Scalar;

/// Stream ids carved out of a run seed; every consumer of randomness in
/// a training run owns one of these so runs are reproducible and never
/// share generator state.
pub mod streams {
    /// Subsampling the training split to a target distribution.
    pub const DATA: u64 = 1;
    /// Parameter initialization.
    pub const INIT: u64 = 2;
    /// Batch and set sampling.
    pub const BATCH: u64 = 3;
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("shape mismatch: expected {expected}, got {got} ({what})")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("auxiliary odd-class head requires k = 1, got k = {0}")]
    AuxHeadRequiresK1(usize),
    #[error("non-finite {what} encountered; step rejected")]
    NumericFault { what: &'static str },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Num(#[from] NumError),
}

/// One dense layer, row-major `rows x cols` weights plus bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<S: Scalar> {
    pub weights: Vec<S>,
    pub bias: Vec<S>,
    pub rows: usize,
    pub cols: usize,
}

impl<S: Scalar> Layer<S> {
    fn he_init(rows: usize, cols: usize, rng: &mut RngStream) -> Self {
        let std = (2.0 / cols as f64).sqrt();
        let weights = (0..rows * cols).map(|_| S::c(rng.normal() * std)).collect();
        Self {
            weights,
            bias: vec![S::zero(); rows],
            rows,
            cols,
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            weights: vec![S::zero(); self.weights.len()],
            bias: vec![S::zero(); self.bias.len()],
            rows: self.rows,
            cols: self.cols,
        }
    }

    fn forward(&self, x: &[S], out: &mut Vec<S>) {
        out.clear();
        for r in 0..self.rows {
            let row = &self.weights[r * self.cols..(r + 1) * self.cols];
            let mut acc = self.bias[r];
            for (w, v) in row.iter().zip(x) {
                acc += *w * *v;
            }
            out.push(acc);
        }
    }
}

/// Multilayer perceptron: hidden ReLU layers, a linear output head of
/// width `C`, and optionally a second linear head of the same width for
/// odd-class prediction (discarded at inference).
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<S: Scalar> {
    layers: Vec<Layer<S>>,
    aux_head: Option<Layer<S>>,
    input_dim: usize,
    classes: usize,
    /// Per-dimension affine input transform `(x - shift) * scale`,
    /// fitted by the trainer and applied on every forward pass so
    /// inference preprocessing matches training exactly.
    input_shift: Vec<S>,
    input_scale: Vec<S>,
}

/// Parameter-shaped blocks: gradients and momentum buffers.
#[derive(Debug, Clone)]
pub struct ParamBlocks<S: Scalar> {
    pub layers: Vec<Layer<S>>,
    pub aux_head: Option<Layer<S>>,
}

impl<S: Scalar> ParamBlocks<S> {
    fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .chain(self.aux_head.iter())
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    fn scale(&mut self, factor: S) {
        for l in self.layers.iter_mut().chain(self.aux_head.iter_mut()) {
            for v in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *v *= factor;
            }
        }
    }
}

/// A forward pass with the intermediate activations kept for backprop.
struct Trace<S> {
    /// Post-activation values per hidden layer (input excluded).
    hidden: Vec<Vec<S>>,
    logits: Vec<S>,
    aux_logits: Option<Vec<S>>,
}

/// Work described by one gradient evaluation.
pub enum TrainBatch<'a, S: Scalar> {
    /// Independent examples under a single-example loss; the loss is
    /// averaged over the batch.
    Single {
        inputs: Vec<&'a [S]>,
        labels: Vec<usize>,
    },
    /// A meta-batch of sets; set losses are averaged over the batch.
    Sets { sets: Vec<SetExample<'a, S>> },
}

/// One set: member rows, member labels (pair class twice, then odd
/// classes), and the pair class.
pub struct SetExample<'a, S> {
    pub inputs: Vec<&'a [S]>,
    pub labels: Vec<usize>,
    pub pair_class: usize,
}

impl<S: Scalar> Mlp<S> {
    /// Network `input_dim -> hidden... -> classes` with He-initialized
    /// hidden layers and zero-initialized output heads, so initial
    /// logits are exactly zero whatever the input scale.
    pub fn new(
        input_dim: usize,
        hidden: &[usize],
        classes: usize,
        aux_head: bool,
        rng: &mut RngStream,
    ) -> Result<Self, ModelError> {
        if input_dim == 0 || classes == 0 {
            return Err(ModelError::InvalidConfig(
                "input dimension and class count must be positive".into(),
            ));
        }
        if hidden.iter().any(|&h| h == 0) {
            return Err(ModelError::InvalidConfig("hidden widths must be positive".into()));
        }
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut prev = input_dim;
        for &h in hidden {
            layers.push(Layer::he_init(h, prev, rng));
            prev = h;
        }
        let zero_head = || Layer {
            weights: vec![S::zero(); classes * prev],
            bias: vec![S::zero(); classes],
            rows: classes,
            cols: prev,
        };
        layers.push(zero_head());
        let aux = aux_head.then(zero_head);
        Ok(Self {
            layers,
            aux_head: aux,
            input_dim,
            classes,
            input_shift: vec![S::zero(); input_dim],
            input_scale: vec![S::one(); input_dim],
        })
    }

    /// Installs the input standardization transform.
    pub fn set_input_transform(
        &mut self,
        shift: Vec<S>,
        scale: Vec<S>,
    ) -> Result<(), ModelError> {
        if shift.len() != self.input_dim || scale.len() != self.input_dim {
            return Err(ModelError::ShapeMismatch {
                what: "input transform",
                expected: self.input_dim,
                got: shift.len().min(scale.len()),
            });
        }
        self.input_shift = shift;
        self.input_scale = scale;
        Ok(())
    }

    pub fn input_transform(&self) -> (&[S], &[S]) {
        (&self.input_shift, &self.input_scale)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn has_aux_head(&self) -> bool {
        self.aux_head.is_some()
    }

    pub fn layers(&self) -> &[Layer<S>] {
        &self.layers
    }

    pub fn aux_head(&self) -> Option<&Layer<S>> {
        self.aux_head.as_ref()
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .chain(self.aux_head.iter())
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Flat copy of all parameters; layout matches `set_flat_params`.
    pub fn flat_params(&self) -> Vec<S> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in self.layers.iter().chain(self.aux_head.iter()) {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[S]) -> Result<(), ModelError> {
        if flat.len() != self.num_params() {
            return Err(ModelError::ShapeMismatch {
                what: "flat parameters",
                expected: self.num_params(),
                got: flat.len(),
            });
        }
        let mut at = 0;
        for l in self.layers.iter_mut().chain(self.aux_head.iter_mut()) {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&flat[at..at + nw]);
            at += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[at..at + nb]);
            at += nb;
        }
        Ok(())
    }

    fn check_input(&self, x: &[S]) -> Result<(), ModelError> {
        if x.len() != self.input_dim {
            return Err(ModelError::ShapeMismatch {
                what: "input width",
                expected: self.input_dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    fn standardize(&self, x: &[S]) -> Vec<S> {
        x.iter()
            .zip(&self.input_shift)
            .zip(&self.input_scale)
            .map(|((&v, &sh), &sc)| (v - sh) * sc)
            .collect()
    }

    fn trace(&self, x: &[S], want_aux: bool) -> Trace<S> {
        let n_hidden = self.layers.len() - 1;
        let mut hidden = Vec::with_capacity(n_hidden);
        let mut cur: Vec<S> = self.standardize(x);
        for layer in &self.layers[..n_hidden] {
            let mut next = Vec::new();
            layer.forward(&cur, &mut next);
            for v in &mut next {
                *v = v.max(S::zero());
            }
            hidden.push(next.clone());
            cur = next;
        }
        let mut logits = Vec::new();
        self.layers[n_hidden].forward(&cur, &mut logits);
        let aux_logits = match (&self.aux_head, want_aux) {
            (Some(aux), true) => {
                let mut out = Vec::new();
                aux.forward(&cur, &mut out);
                Some(out)
            }
            _ => None,
        };
        Trace {
            hidden,
            logits,
            aux_logits,
        }
    }

    /// Logits for a single input; this is the whole inference path, for
    /// every training method.
    pub fn forward_single(&self, x: &[S]) -> Result<LogitVec<S>, ModelError> {
        self.check_input(x)?;
        Ok(LogitVec::new(self.trace(x, false).logits)?)
    }

    /// Set logits: the sum of per-member logits, exactly.
    pub fn forward_set(&self, xs: &[&[S]]) -> Result<LogitVec<S>, ModelError> {
        if xs.is_empty() {
            return Err(ModelError::Empty("set"));
        }
        let mut members = Vec::with_capacity(xs.len());
        for x in xs {
            members.push(self.forward_single(x)?);
        }
        Ok(set_logit_sum(&members)?)
    }

    /// Backpropagates one member's output deltas into parameter
    /// gradients, given its cached trace.
    fn backprop_member(
        &self,
        x: &[S],
        trace: &Trace<S>,
        out_delta: &[S],
        aux_delta: Option<&[S]>,
        grads: &mut ParamBlocks<S>,
    ) {
        let n_hidden = self.layers.len() - 1;
        let x_std = self.standardize(x);
        let top_input: &[S] = if n_hidden == 0 {
            &x_std
        } else {
            &trace.hidden[n_hidden - 1]
        };

        // Output head(s).
        let out_layer = &self.layers[n_hidden];
        accumulate_layer(&mut grads.layers[n_hidden], out_delta, top_input);
        let mut delta = matvec_transpose(out_layer, out_delta);
        if let (Some(aux), Some(ad)) = (&self.aux_head, aux_delta) {
            let aux_grad = grads.aux_head.as_mut().expect("aux gradient block");
            accumulate_layer(aux_grad, ad, top_input);
            let aux_back = matvec_transpose(aux, ad);
            for (d, a) in delta.iter_mut().zip(aux_back) {
                *d += a;
            }
        }

        // Hidden layers, last to first.
        for li in (0..n_hidden).rev() {
            // ReLU mask of this layer's post-activation.
            for (d, &h) in delta.iter_mut().zip(&trace.hidden[li]) {
                if h <= S::zero() {
                    *d = S::zero();
                }
            }
            let input: &[S] = if li == 0 { &x_std } else { &trace.hidden[li - 1] };
            accumulate_layer(&mut grads.layers[li], &delta, input);
            if li > 0 {
                delta = matvec_transpose(&self.layers[li], &delta);
            }
        }
    }

    /// Loss value and parameter gradients for one batch or meta-batch.
    ///
    /// For sets with an auxiliary head (k = 1 only), the total loss is
    /// the pair-class loss plus `aux_weight` times the odd-class
    /// cross-entropy on the second head.
    pub fn backward(
        &self,
        batch: &TrainBatch<S>,
        loss: &LossSpec<S>,
        aux_weight: S,
    ) -> Result<(S, ParamBlocks<S>), ModelError> {
        let mut grads = ParamBlocks {
            layers: self.layers.iter().map(Layer::zeros_like).collect(),
            aux_head: self.aux_head.as_ref().map(Layer::zeros_like),
        };
        let mut total = S::zero();
        match batch {
            TrainBatch::Single { inputs, labels } => {
                if inputs.is_empty() {
                    return Err(ModelError::Empty("batch"));
                }
                if inputs.len() != labels.len() {
                    return Err(ModelError::ShapeMismatch {
                        what: "labels",
                        expected: inputs.len(),
                        got: labels.len(),
                    });
                }
                for (&x, &y) in inputs.iter().zip(labels) {
                    self.check_input(x)?;
                    let trace = self.trace(x, false);
                    let (l, g) = loss.eval_single(&LogitVec::new(trace.logits.clone())?, y)?;
                    total += l;
                    self.backprop_member(x, &trace, &g, None, &mut grads);
                }
                let inv = S::one() / S::count(inputs.len());
                total *= inv;
                grads.scale(inv);
            }
            TrainBatch::Sets { sets } => {
                if sets.is_empty() {
                    return Err(ModelError::Empty("meta-batch"));
                }
                let use_aux = self.aux_head.is_some();
                for set in sets {
                    if set.inputs.is_empty() {
                        return Err(ModelError::Empty("set"));
                    }
                    let k = set.inputs.len() - 2;
                    if use_aux && k != 1 {
                        return Err(ModelError::AuxHeadRequiresK1(k));
                    }
                    let mut traces = Vec::with_capacity(set.inputs.len());
                    for &x in &set.inputs {
                        self.check_input(x)?;
                        traces.push(self.trace(x, use_aux));
                    }
                    let mut set_logits = vec![S::zero(); self.classes];
                    for t in &traces {
                        for (acc, &v) in set_logits.iter_mut().zip(&t.logits) {
                            *acc += v;
                        }
                    }
                    let set_logits = LogitVec::new(set_logits)?;
                    let (l, g_main) = match loss.kind {
                        LossKind::OkoSoft => oko_soft(&set_logits, &set.labels)?,
                        _ => vanilla_ce(&set_logits, set.pair_class)?,
                    };
                    total += l;

                    let aux_delta = if use_aux {
                        let odd = set.labels[2];
                        let mut aux_sum = vec![S::zero(); self.classes];
                        for t in &traces {
                            let al = t.aux_logits.as_ref().expect("aux trace");
                            for (acc, &v) in aux_sum.iter_mut().zip(al) {
                                *acc += v;
                            }
                        }
                        let (al, mut ag) = vanilla_ce(&LogitVec::new(aux_sum)?, odd)?;
                        total += aux_weight * al;
                        for g in &mut ag {
                            *g *= aux_weight;
                        }
                        Some(ag)
                    } else {
                        None
                    };

                    for (x, t) in set.inputs.iter().zip(&traces) {
                        self.backprop_member(x, t, &g_main, aux_delta.as_deref(), &mut grads);
                    }
                }
                let inv = S::one() / S::count(sets.len());
                total *= inv;
                grads.scale(inv);
            }
        }
        Ok((total, grads))
    }
}

fn accumulate_layer<S: Scalar>(grad: &mut Layer<S>, delta: &[S], input: &[S]) {
    for (r, &d) in delta.iter().enumerate() {
        let row = &mut grad.weights[r * grad.cols..(r + 1) * grad.cols];
        for (w, &v) in row.iter_mut().zip(input) {
            *w += d * v;
        }
        grad.bias[r] += d;
    }
}

fn matvec_transpose<S: Scalar>(layer: &Layer<S>, delta: &[S]) -> Vec<S> {
    let mut out = vec![S::zero(); layer.cols];
    for (r, &d) in delta.iter().enumerate() {
        let row = &layer.weights[r * layer.cols..(r + 1) * layer.cols];
        for (o, &w) in out.iter_mut().zip(row) {
            *o += w * d;
        }
    }
    out
}

/// Cosine-annealed learning rate: `base * (1 + cos(pi * step / total)) / 2`.
pub fn cosine_lr<S: Scalar>(step: usize, total_steps: usize, base_lr: S) -> S {
    if total_steps == 0 {
        return base_lr;
    }
    let frac = step.min(total_steps) as f64 / total_steps as f64;
    base_lr * S::c((1.0 + (std::f64::consts::PI * frac).cos()) / 2.0)
}

/// Momentum buffers plus the step counter driving the cosine schedule.
#[derive(Debug, Clone)]
pub struct OptState<S: Scalar> {
    pub velocity: ParamBlocks<S>,
    pub step: usize,
    pub total_steps: usize,
    pub base_lr: S,
    pub momentum: S,
}

impl<S: Scalar> OptState<S> {
    pub fn new(model: &Mlp<S>, base_lr: S, momentum: S, total_steps: usize) -> Self {
        Self {
            velocity: ParamBlocks {
                layers: model.layers.iter().map(Layer::zeros_like).collect(),
                aux_head: model.aux_head.as_ref().map(Layer::zeros_like),
            },
            step: 0,
            total_steps,
            base_lr,
            momentum,
        }
    }

    pub fn current_lr(&self) -> S {
        cosine_lr(self.step, self.total_steps, self.base_lr)
    }
}

/// One SGD-with-momentum update: `v <- mu v + g; theta <- theta - lr_t v`.
/// A non-finite gradient rejects the step, leaving parameters, buffers,
/// and the step count untouched.
pub fn sgd_momentum_step<S: Scalar>(
    model: &mut Mlp<S>,
    grads: &ParamBlocks<S>,
    opt: &mut OptState<S>,
) -> Result<(), ModelError> {
    if !grads.all_finite() {
        return Err(ModelError::NumericFault { what: "gradient" });
    }
    let lr = opt.current_lr();
    let mu = opt.momentum;
    let apply = |param: &mut Layer<S>, vel: &mut Layer<S>, grad: &Layer<S>| {
        for ((p, v), &g) in param
            .weights
            .iter_mut()
            .zip(vel.weights.iter_mut())
            .zip(&grad.weights)
        {
            *v = mu * *v + g;
            *p -= lr * *v;
        }
        for ((p, v), &g) in param.bias.iter_mut().zip(vel.bias.iter_mut()).zip(&grad.bias) {
            *v = mu * *v + g;
            *p -= lr * *v;
        }
    };
    for (i, layer) in model.layers.iter_mut().enumerate() {
        apply(layer, &mut opt.velocity.layers[i], &grads.layers[i]);
    }
    if let (Some(aux), Some(vel), Some(g)) = (
        model.aux_head.as_mut(),
        opt.velocity.aux_head.as_mut(),
        grads.aux_head.as_ref(),
    ) {
        apply(aux, vel, g);
    }
    opt.step += 1;
    Ok(())
}

/// Training method roster. Temperature scaling shares batch-balanced
/// training and only changes evaluation, so it maps to the same loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMethod {
    Vanilla,
    VanillaLs,
    Focal,
    WeightedCe,
    BatchBalanced,
    BatchBalancedLs,
    BatchBalancedTs,
    Oko,
}

impl TrainMethod {
    pub fn default_loss_kind(self) -> LossKind {
        match self {
            TrainMethod::Vanilla | TrainMethod::BatchBalanced | TrainMethod::BatchBalancedTs => {
                LossKind::Vanilla
            }
            TrainMethod::VanillaLs | TrainMethod::BatchBalancedLs => LossKind::LabelSmoothing,
            TrainMethod::Focal => LossKind::Focal,
            TrainMethod::WeightedCe => LossKind::Weighted,
            TrainMethod::Oko => LossKind::OkoHard,
        }
    }

    fn loss_compatible(self, kind: LossKind) -> bool {
        match self {
            TrainMethod::Oko => matches!(kind, LossKind::OkoHard | LossKind::OkoSoft),
            _ => !matches!(kind, LossKind::OkoHard | LossKind::OkoSoft),
        }
    }
}

/// Full description of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(
    serialize = "S: Serialize",
    deserialize = "S: serde::de::DeserializeOwned"
))]
pub struct TrainConfig<S: Scalar> {
    pub method: TrainMethod,
    /// Loss override; `None` takes the method's default.
    pub loss: Option<LossSpec<S>>,
    /// Odd classes per set (set methods only).
    pub k: usize,
    /// Train the odd-class head alongside the pair loss (k = 1 only).
    pub aux_odd_head: bool,
    /// Weight of the odd-class head loss against the pair loss.
    pub aux_weight: S,
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: S,
    pub momentum: S,
    pub seed: u64,
    /// Resample the training data to this distribution before training.
    pub distribution: Option<DistributionSpec>,
    /// Target training size used with `distribution`.
    pub train_size: Option<usize>,
}

impl<S: Scalar> TrainConfig<S> {
    pub fn new(method: TrainMethod, seed: u64) -> Self {
        Self {
            method,
            loss: None,
            k: 1,
            aux_odd_head: method == TrainMethod::Oko,
            aux_weight: S::one(),
            hidden: vec![64, 64],
            epochs: 10,
            batch_size: 32,
            learning_rate: S::c(0.05),
            momentum: S::c(0.9),
            seed,
            distribution: None,
            train_size: None,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if let Some(loss) = &self.loss {
            if !self.method.loss_compatible(loss.kind) {
                return Err(ModelError::InvalidConfig(format!(
                    "loss {:?} is incompatible with method {:?}",
                    loss.kind, self.method
                )));
            }
        }
        if self.batch_size == 0 {
            return Err(ModelError::InvalidConfig("batch size must be positive".into()));
        }
        if self.method == TrainMethod::Oko && self.k == 0 {
            return Err(ModelError::InvalidConfig("k must be at least 1".into()));
        }
        if self.aux_odd_head && self.method == TrainMethod::Oko && self.k != 1 {
            return Err(ModelError::AuxHeadRequiresK1(self.k));
        }
        if !(self.learning_rate > S::zero()) {
            return Err(ModelError::InvalidConfig("learning rate must be positive".into()));
        }
        if !(self.momentum >= S::zero() && self.momentum < S::one()) {
            return Err(ModelError::InvalidConfig("momentum must lie in [0, 1)".into()));
        }
        Ok(())
    }

    fn resolved_loss(&self, train: &LabeledDataset<S>) -> LossSpec<S> {
        let mut loss = self
            .loss
            .clone()
            .unwrap_or_else(|| LossSpec::new(self.method.default_loss_kind()));
        if loss.kind == LossKind::Weighted {
            if loss.class_weights.is_none() {
                let part = partition_by_class(train);
                loss.class_weights = Some(
                    part.class_counts()
                        .iter()
                        .map(|&c| S::count(c.max(1)))
                        .collect(),
                );
            }
            if loss.weight_scale.is_none() {
                loss.weight_scale = Some(S::count(train.len()) / S::count(train.classes()));
            }
        }
        loss
    }
}

/// Per-epoch record of the training loop.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainLog {
    /// Mean loss per epoch, weighted by batch size.
    pub epoch_loss: Vec<f64>,
    pub steps: usize,
    pub train_size: usize,
}

/// Runs the configured method on `ds`.
///
/// Per epoch, set methods draw exactly `n_train` sets; single-example
/// methods draw `n_train` samples. Both group draws into batches of
/// `batch_size` (final partial batch included), so every method performs
/// the same number of gradient updates.
pub fn train<S: Scalar>(
    ds: &LabeledDataset<S>,
    cfg: &TrainConfig<S>,
) -> Result<(Mlp<S>, TrainLog), ModelError> {
    cfg.validate()?;

    let train_ds = match (&cfg.distribution, cfg.train_size) {
        (Some(spec), Some(total)) => {
            let mut rng = RngStream::new(cfg.seed, streams::DATA);
            apply_distribution(ds, spec, total, &mut rng)?
        }
        (None, None) => ds.clone(),
        _ => {
            return Err(ModelError::InvalidConfig(
                "distribution and train_size must be set together".into(),
            ))
        }
    };

    let n = train_ds.len();
    let loss = cfg.resolved_loss(&train_ds);
    let part = partition_by_class(&train_ds);
    let use_aux = cfg.method == TrainMethod::Oko && cfg.aux_odd_head;

    let mut init_rng = RngStream::new(cfg.seed, streams::INIT);
    let mut model = Mlp::new(
        train_ds.dim(),
        &cfg.hidden,
        train_ds.classes(),
        use_aux,
        &mut init_rng,
    )?;
    let (shift, scale) = fit_standardizer(&train_ds);
    model.set_input_transform(shift, scale)?;

    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * steps_per_epoch;
    let mut opt = OptState::new(&model, cfg.learning_rate, cfg.momentum, total_steps);
    let mut batch_rng = RngStream::new(cfg.seed, streams::BATCH);

    let mut log = TrainLog {
        epoch_loss: Vec::with_capacity(cfg.epochs),
        steps: 0,
        train_size: n,
    };

    for _ in 0..cfg.epochs {
        let mut remaining = n;
        let mut epoch_loss = 0.0;
        while remaining > 0 {
            let b = remaining.min(cfg.batch_size);
            remaining -= b;
            let loss_value = match cfg.method {
                TrainMethod::Oko => {
                    let mut drawn = Vec::with_capacity(b);
                    for _ in 0..b {
                        drawn.push(sample_oko_set(&part, cfg.k, &mut batch_rng)?);
                    }
                    let sets: Vec<SetExample<S>> = drawn
                        .iter()
                        .map(|s| SetExample {
                            inputs: s.indices.iter().map(|&i| train_ds.row(i)).collect(),
                            labels: s.labels.clone(),
                            pair_class: s.pair_class,
                        })
                        .collect();
                    let (l, grads) =
                        model.backward(&TrainBatch::Sets { sets }, &loss, cfg.aux_weight)?;
                    sgd_momentum_step(&mut model, &grads, &mut opt)?;
                    l
                }
                TrainMethod::BatchBalanced
                | TrainMethod::BatchBalancedLs
                | TrainMethod::BatchBalancedTs => {
                    let idx = sample_balanced_batch(&part, b, &mut batch_rng)?;
                    let (l, grads) = model.backward(
                        &TrainBatch::Single {
                            inputs: idx.iter().map(|&i| train_ds.row(i)).collect(),
                            labels: idx.iter().map(|&i| train_ds.label(i)).collect(),
                        },
                        &loss,
                        S::zero(),
                    )?;
                    sgd_momentum_step(&mut model, &grads, &mut opt)?;
                    l
                }
                _ => {
                    let idx = sample_uniform_batch(&train_ds, b, &mut batch_rng);
                    let (l, grads) = model.backward(
                        &TrainBatch::Single {
                            inputs: idx.iter().map(|&i| train_ds.row(i)).collect(),
                            labels: idx.iter().map(|&i| train_ds.label(i)).collect(),
                        },
                        &loss,
                        S::zero(),
                    )?;
                    sgd_momentum_step(&mut model, &grads, &mut opt)?;
                    l
                }
            };
            epoch_loss += loss_value.as_f64() * b as f64;
            log.steps += 1;
        }
        log.epoch_loss.push(epoch_loss / n as f64);
    }
    Ok((model, log))
}

/// Per-dimension mean and inverse standard deviation of the training
/// inputs; near-constant dimensions fall back to the identity scale.
fn fit_standardizer<S: Scalar>(ds: &LabeledDataset<S>) -> (Vec<S>, Vec<S>) {
    let n = S::count(ds.len());
    let d = ds.dim();
    let mut mean = vec![S::zero(); d];
    for i in 0..ds.len() {
        for (m, &v) in mean.iter_mut().zip(ds.row(i)) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut var = vec![S::zero(); d];
    for i in 0..ds.len() {
        for ((va, &v), &m) in var.iter_mut().zip(ds.row(i)).zip(&mean) {
            *va += (v - m) * (v - m);
        }
    }
    let scale = var
        .iter()
        .map(|&va| {
            let std = (va / n).sqrt();
            if std > S::c(1e-8) {
                S::one() / std
            } else {
                S::one()
            }
        })
        .collect();
    (mean, scale)
}

/// Versioned JSON checkpoint: shapes, 64-bit parameters, config hash,
/// and seed. Round-trips exactly (shortest-round-trip float encoding).
#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub input_dim: usize,
    pub classes: usize,
    pub hidden: Vec<usize>,
    pub aux_head: bool,
    pub input_shift: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub params: Vec<f64>,
    pub config_hash: String,
    pub seed: u64,
}

pub const CHECKPOINT_VERSION: u32 = 1;

pub fn save_checkpoint<S: Scalar>(
    model: &Mlp<S>,
    config_hash: &str,
    seed: u64,
    path: &std::path::Path,
) -> Result<(), ModelError> {
    let n_hidden = model.layers.len() - 1;
    let ck = Checkpoint {
        version: CHECKPOINT_VERSION,
        input_dim: model.input_dim,
        classes: model.classes,
        hidden: model.layers[..n_hidden].iter().map(|l| l.rows).collect(),
        aux_head: model.aux_head.is_some(),
        input_shift: model.input_shift.iter().map(|v| v.as_f64()).collect(),
        input_scale: model.input_scale.iter().map(|v| v.as_f64()).collect(),
        params: model.flat_params().iter().map(|v| v.as_f64()).collect(),
        config_hash: config_hash.to_string(),
        seed,
    };
    let text = serde_json::to_string_pretty(&ck)
        .map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| ModelError::Checkpoint(e.to_string()))
}

pub fn load_checkpoint(path: &std::path::Path) -> Result<(Mlp<f64>, Checkpoint), ModelError> {
    let text = std::fs::read_to_string(path).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    let ck: Checkpoint =
        serde_json::from_str(&text).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    if ck.version != CHECKPOINT_VERSION {
        return Err(ModelError::Checkpoint(format!(
            "unsupported version {}",
            ck.version
        )));
    }
    let mut rng = RngStream::new(ck.seed, streams::INIT);
    let mut model = Mlp::<f64>::new(ck.input_dim, &ck.hidden, ck.classes, ck.aux_head, &mut rng)?;
    model.set_flat_params(&ck.params)?;
    model.set_input_transform(ck.input_shift.clone(), ck.input_scale.clone())?;
    Ok((model, ck))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::make_blobs;
    use approx::assert_relative_eq;

    fn rng(seed: u64) -> RngStream {
        RngStream::new(seed, 0)
    }

    #[test]
    fn zero_params_give_zero_logits() {
        let mut model = Mlp::<f64>::new(3, &[4], 2, false, &mut rng(0)).unwrap();
        let zeros = vec![0.0; model.num_params()];
        model.set_flat_params(&zeros).unwrap();
        let out = model.forward_single(&[1.0, -2.0, 3.0]).unwrap();
        assert_eq!(out.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn identity_single_layer() {
        let mut model = Mlp::<f64>::new(2, &[], 2, false, &mut rng(0)).unwrap();
        // Single linear layer; set weights to the identity, bias zero.
        let params = vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0];
        model.set_flat_params(&params).unwrap();
        let out = model.forward_single(&[0.3, -0.7]).unwrap();
        assert_eq!(out.as_slice(), &[0.3, -0.7]);
    }

    #[test]
    fn forward_deterministic() {
        let mut model = Mlp::<f64>::new(4, &[8, 8], 3, false, &mut rng(5)).unwrap();
        randomize_params(&mut model, &mut rng(50));
        let x = [0.1, 0.2, 0.3, 0.4];
        let a = model.forward_single(&x).unwrap();
        let b = model.forward_single(&x).unwrap();
        for i in 0..3 {
            assert_eq!(a[i].to_bits(), b[i].to_bits());
        }
    }

    #[test]
    fn forward_shape_mismatch() {
        let model = Mlp::<f64>::new(4, &[8], 3, false, &mut rng(5)).unwrap();
        assert!(matches!(
            model.forward_single(&[1.0, 2.0]),
            Err(ModelError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn forward_set_is_member_sum() {
        let mut model = Mlp::<f64>::new(3, &[6], 4, false, &mut rng(7)).unwrap();
        randomize_params(&mut model, &mut rng(70));
        let xs: Vec<Vec<f64>> = (0..3)
            .map(|i| vec![i as f64 * 0.5, 1.0 - i as f64, 0.25])
            .collect();
        let refs: Vec<&[f64]> = xs.iter().map(|v| v.as_slice()).collect();
        let set = model.forward_set(&refs).unwrap();
        let mut expect = vec![0.0; 4];
        for x in &refs {
            let single = model.forward_single(x).unwrap();
            for (e, &v) in expect.iter_mut().zip(single.as_slice()) {
                *e += v;
            }
        }
        // Identical summation order makes this exact.
        assert_eq!(set.as_slice(), expect.as_slice());

        // Permutation invariance (within float tolerance).
        let perm: Vec<&[f64]> = vec![refs[2], refs[0], refs[1]];
        let set_p = model.forward_set(&perm).unwrap();
        for i in 0..4 {
            assert_relative_eq!(set_p[i], set[i], epsilon = 1e-12);
        }

        // Repeated member: (k + 2) * forward_single.
        let rep: Vec<&[f64]> = vec![refs[0]; 3];
        let set_r = model.forward_set(&rep).unwrap();
        let single = model.forward_single(refs[0]).unwrap();
        for i in 0..4 {
            assert_relative_eq!(set_r[i], 3.0 * single[i], epsilon = 1e-12);
        }
    }

    /// Sets every parameter (including the zero-initialized heads) to a
    /// random value so gradient checks run at a generic point.
    fn randomize_params(model: &mut Mlp<f64>, rng: &mut RngStream) {
        let params: Vec<f64> = (0..model.num_params()).map(|_| rng.normal() * 0.7).collect();
        model.set_flat_params(&params).unwrap();
    }

    /// Finite-difference check of `backward` over all parameters.
    fn check_param_gradients(
        model: &Mlp<f64>,
        batch: &TrainBatch<f64>,
        loss: &LossSpec<f64>,
        aux_weight: f64,
        rel_tol: f64,
    ) {
        let (_, grads) = model.backward(batch, loss, aux_weight).unwrap();
        let mut flat_grads = Vec::new();
        for l in grads.layers.iter().chain(grads.aux_head.iter()) {
            flat_grads.extend_from_slice(&l.weights);
            flat_grads.extend_from_slice(&l.bias);
        }
        let params = model.flat_params();
        let step = 1e-5;
        let mut probe = model.clone();
        for i in 0..params.len() {
            let mut hi = params.clone();
            let mut lo = params.clone();
            hi[i] += step;
            lo[i] -= step;
            probe.set_flat_params(&hi).unwrap();
            let (lh, _) = probe.backward(batch, loss, aux_weight).unwrap();
            probe.set_flat_params(&lo).unwrap();
            let (ll, _) = probe.backward(batch, loss, aux_weight).unwrap();
            let numeric = (lh - ll) / (2.0 * step);
            let scale = flat_grads[i].abs().max(numeric.abs());
            // Absolute slack covers central-difference truncation noise
            // (~step^2) on near-zero gradients.
            assert!(
                (flat_grads[i] - numeric).abs() < rel_tol * scale + 1e-9,
                "param {i}: analytic {} vs numeric {numeric}",
                flat_grads[i]
            );
        }
    }

    #[test]
    fn backward_matches_finite_differences_single() {
        let mut r = rng(21);
        for trial in 0..20 {
            let mut model =
                Mlp::<f64>::new(3, &[5], 3, false, &mut RngStream::new(trial, 1)).unwrap();
            randomize_params(&mut model, &mut r);
            let xs: Vec<Vec<f64>> = (0..4)
                .map(|_| (0..3).map(|_| r.normal()).collect())
                .collect();
            let labels: Vec<usize> = (0..4).map(|_| r.index(3)).collect();
            let batch = TrainBatch::Single {
                inputs: xs.iter().map(|v| v.as_slice()).collect(),
                labels,
            };
            check_param_gradients(&model, &batch, &LossSpec::new(LossKind::Vanilla), 0.0, 1e-4);
        }
    }

    #[test]
    fn backward_matches_finite_differences_sets_with_aux() {
        let mut r = rng(22);
        for trial in 0..20 {
            let mut model =
                Mlp::<f64>::new(2, &[6], 3, true, &mut RngStream::new(100 + trial, 1)).unwrap();
            randomize_params(&mut model, &mut r);
            let xs: Vec<Vec<f64>> = (0..3)
                .map(|_| (0..2).map(|_| r.normal()).collect())
                .collect();
            let batch = TrainBatch::Sets {
                sets: vec![SetExample {
                    inputs: xs.iter().map(|v| v.as_slice()).collect(),
                    labels: vec![0, 0, 2],
                    pair_class: 0,
                }],
            };
            check_param_gradients(&model, &batch, &LossSpec::new(LossKind::OkoHard), 1.0, 1e-4);
        }
    }

    #[test]
    fn backward_soft_loss_gradients() {
        let mut r = rng(23);
        let mut model = Mlp::<f64>::new(2, &[4, 4], 3, false, &mut RngStream::new(9, 1)).unwrap();
        randomize_params(&mut model, &mut r);
        let xs: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..2).map(|_| r.normal()).collect())
            .collect();
        let batch = TrainBatch::Sets {
            sets: vec![SetExample {
                inputs: xs.iter().map(|v| v.as_slice()).collect(),
                labels: vec![1, 1, 0],
                pair_class: 1,
            }],
        };
        check_param_gradients(&model, &batch, &LossSpec::new(LossKind::OkoSoft), 0.0, 1e-4);
    }

    #[test]
    fn aux_head_needs_k_one() {
        let model = Mlp::<f64>::new(2, &[4], 4, true, &mut rng(3)).unwrap();
        let xs: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64, 0.0]).collect();
        let batch = TrainBatch::Sets {
            sets: vec![SetExample {
                inputs: xs.iter().map(|v| v.as_slice()).collect(),
                labels: vec![0, 0, 1, 2],
                pair_class: 0,
            }],
        };
        assert!(matches!(
            model.backward(&batch, &LossSpec::new(LossKind::OkoHard), 1.0),
            Err(ModelError::AuxHeadRequiresK1(2))
        ));
    }

    #[test]
    fn cosine_schedule_endpoints() {
        assert_relative_eq!(cosine_lr(0, 100, 0.5), 0.5, epsilon = 1e-12);
        assert_relative_eq!(cosine_lr(100, 100, 0.5), 0.0, epsilon = 1e-12);
        assert_relative_eq!(cosine_lr(50, 100, 0.5), 0.25, epsilon = 1e-12);
    }

    #[test]
    fn sgd_without_momentum_is_plain() {
        let mut model = Mlp::<f64>::new(2, &[], 2, false, &mut rng(1)).unwrap();
        let before = model.flat_params();
        let mut grads = ParamBlocks {
            layers: model.layers().iter().map(Layer::zeros_like).collect(),
            aux_head: None,
        };
        for v in grads.layers[0].weights.iter_mut() {
            *v = 1.0;
        }
        // total_steps = 0 pins the schedule at base_lr.
        let mut opt = OptState::new(&model, 0.1, 0.0, 0);
        sgd_momentum_step(&mut model, &grads, &mut opt).unwrap();
        let after = model.flat_params();
        for i in 0..4 {
            assert_relative_eq!(after[i], before[i] - 0.1, epsilon = 1e-12);
        }
        for i in 4..6 {
            assert_relative_eq!(after[i], before[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn sgd_two_steps_match_recurrence() {
        // Constant gradient g, momentum 0.9, fixed lr (total_steps = 0):
        // v1 = g, theta1 = theta0 - lr g; v2 = 1.9 g,
        // theta2 = theta0 - lr g - lr 1.9 g.
        let mut model = Mlp::<f64>::new(1, &[], 1, false, &mut rng(2)).unwrap();
        let theta0 = model.flat_params();
        let mut grads = ParamBlocks {
            layers: model.layers().iter().map(Layer::zeros_like).collect(),
            aux_head: None,
        };
        grads.layers[0].weights[0] = 2.0;
        grads.layers[0].bias[0] = 2.0;
        let lr = 0.05;
        let mut opt = OptState::new(&model, lr, 0.9, 0);
        sgd_momentum_step(&mut model, &grads, &mut opt).unwrap();
        sgd_momentum_step(&mut model, &grads, &mut opt).unwrap();
        let expect = theta0[0] - lr * 2.0 - lr * 1.9 * 2.0;
        assert_relative_eq!(model.flat_params()[0], expect, epsilon = 1e-12);
    }

    #[test]
    fn nan_gradient_rejects_step() {
        let mut model = Mlp::<f64>::new(2, &[], 2, false, &mut rng(1)).unwrap();
        let before = model.flat_params();
        let mut grads = ParamBlocks {
            layers: model.layers().iter().map(Layer::zeros_like).collect(),
            aux_head: None,
        };
        grads.layers[0].weights[0] = f64::NAN;
        let mut opt = OptState::new(&model, 0.1, 0.9, 10);
        assert!(matches!(
            sgd_momentum_step(&mut model, &grads, &mut opt),
            Err(ModelError::NumericFault { .. })
        ));
        assert_eq!(model.flat_params(), before);
        assert_eq!(opt.step, 0);
    }

    #[test]
    fn zero_lr_step_leaves_params() {
        let mut model = Mlp::<f64>::new(2, &[4], 2, false, &mut rng(4)).unwrap();
        let before = model.flat_params();
        let mut grads = ParamBlocks {
            layers: model.layers().iter().map(Layer::zeros_like).collect(),
            aux_head: None,
        };
        for v in grads.layers[0].weights.iter_mut() {
            *v = 3.5;
        }
        let mut opt = OptState::new(&model, 0.0, 0.9, 10);
        sgd_momentum_step(&mut model, &grads, &mut opt).unwrap();
        assert_eq!(model.flat_params(), before);
        assert_eq!(opt.step, 1);
    }

    #[test]
    fn loss_decreases_on_separable_blobs() {
        let mut ds_rng = rng(6);
        let ds = make_blobs::<f64>(2, 25, 2, 8.0, &mut ds_rng).unwrap();
        let mut cfg = TrainConfig::new(TrainMethod::Vanilla, 3);
        cfg.epochs = 50;
        cfg.batch_size = 50;
        cfg.learning_rate = 0.1;
        let (_, log) = train(&ds, &cfg).unwrap();
        assert_eq!(log.steps, 50);
        let first = log.epoch_loss.first().copied().unwrap();
        let last = log.epoch_loss.last().copied().unwrap();
        assert!(last < first * 0.5, "loss {first} -> {last}");
    }

    #[test]
    fn epochs_zero_returns_initial_params() {
        let ds = make_blobs::<f64>(2, 5, 2, 3.0, &mut rng(8)).unwrap();
        let mut cfg = TrainConfig::new(TrainMethod::Oko, 1);
        cfg.epochs = 0;
        let (model, log) = train(&ds, &cfg).unwrap();
        assert_eq!(log.steps, 0);
        let mut init_rng = RngStream::new(1, streams::INIT);
        let reference = Mlp::<f64>::new(2, &cfg.hidden, 2, true, &mut init_rng).unwrap();
        assert_eq!(model.flat_params(), reference.flat_params());
    }

    #[test]
    fn training_is_deterministic() {
        let ds = make_blobs::<f64>(3, 20, 2, 4.0, &mut rng(9)).unwrap();
        let mut cfg = TrainConfig::new(TrainMethod::Oko, 7);
        cfg.epochs = 3;
        let (a, _) = train(&ds, &cfg).unwrap();
        let (b, _) = train(&ds, &cfg).unwrap();
        let pa = a.flat_params();
        let pb = b.flat_params();
        assert_eq!(pa.len(), pb.len());
        for (x, y) in pa.iter().zip(&pb) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn oko_reaches_full_accuracy_on_separated_blobs() {
        let ds = make_blobs::<f64>(3, 30, 2, 10.0, &mut rng(10)).unwrap();
        let mut cfg = TrainConfig::new(TrainMethod::Oko, 2);
        cfg.epochs = 30;
        cfg.learning_rate = 0.05;
        let (model, _) = train(&ds, &cfg).unwrap();
        let correct = (0..ds.len())
            .filter(|&i| {
                let p = crate::numcore::softmax(&model.forward_single(ds.row(i)).unwrap());
                p.argmax() == ds.label(i)
            })
            .count();
        assert_eq!(correct, ds.len());
    }

    #[test]
    fn incompatible_loss_rejected() {
        let mut cfg = TrainConfig::<f64>::new(TrainMethod::Vanilla, 0);
        cfg.loss = Some(LossSpec::new(LossKind::OkoHard));
        assert!(matches!(cfg.validate(), Err(ModelError::InvalidConfig(_))));
        let mut cfg = TrainConfig::<f64>::new(TrainMethod::Oko, 0);
        cfg.loss = Some(LossSpec::new(LossKind::Focal));
        assert!(matches!(cfg.validate(), Err(ModelError::InvalidConfig(_))));
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let mut model = Mlp::<f64>::new(3, &[5, 4], 2, true, &mut rng(11)).unwrap();
        randomize_params(&mut model, &mut rng(110));
        save_checkpoint(&model, "abcd1234", 11, &path).unwrap();
        let (loaded, ck) = load_checkpoint(&path).unwrap();
        assert_eq!(ck.config_hash, "abcd1234");
        assert_eq!(ck.seed, 11);
        assert_eq!(loaded.flat_params(), model.flat_params());
        // Bit-exact round trip through JSON.
        for (a, b) in loaded.flat_params().iter().zip(model.flat_params()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}

