//! The alignment layer and its trainer.
//!
//! The layer is a one-hidden-layer residual MLP with an L2-normalized output:
//!
//! ```text
//! y = normalize(x + W2 · relu(W1 · x + b1) + b2)
//! ```
//!
//! With all parameters zero it reduces to `normalize(x)`. Training minimizes
//! cross-entropy over cosine logits plus the PAP loss on pooled class means,
//! using SGD with momentum, decoupled-from-bias weight decay and a cosine
//! annealed learning rate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::etf::EtfClassifier;
use crate::linalg::{derive_seed, Matrix, Rng, Vector};
use crate::losses::{ce_loss, pap_grad, pap_loss, LossValues};

#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentLayer {
    w1: Matrix,
    b1: Vector,
    w2: Matrix,
    b2: Vector,
}

/// Intermediates kept by [`AlignmentLayer::forward`] for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    x: Vector,
    pre: Vector,
    hidden: Vector,
    y: Vector,
    out_norm: f64,
}

impl ForwardCache {
    pub fn output(&self) -> &Vector {
        &self.y
    }
}

/// Parameter gradients, same shapes as the layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrads {
    pub w1: Matrix,
    pub b1: Vector,
    pub w2: Matrix,
    pub b2: Vector,
}

impl LayerGrads {
    pub fn zeros(dim: usize, hidden: usize) -> Self {
        LayerGrads {
            w1: Matrix::zeros(hidden, dim),
            b1: Vector::zeros(hidden),
            w2: Matrix::zeros(dim, hidden),
            b2: Vector::zeros(dim),
        }
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &LayerGrads) {
        self.w1.axpy(alpha, &other.w1);
        self.b1.axpy(alpha, &other.b1);
        self.w2.axpy(alpha, &other.w2);
        self.b2.axpy(alpha, &other.b2);
    }

    /// Flattened in the order of [`AlignmentLayer::parameters`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend_from_slice(self.w1.as_slice());
        out.extend_from_slice(&self.b1);
        out.extend_from_slice(self.w2.as_slice());
        out.extend_from_slice(&self.b2);
        out
    }
}

impl AlignmentLayer {
    /// Weights uniform in `±1/sqrt(fan_in)`, biases zero.
    pub fn init(dim: usize, hidden: usize, seed: u64) -> Self {
        assert!(dim >= 1 && hidden >= 1, "layer dimensions must be positive");
        let mut rng = Rng::new(seed);
        let b1 = 1.0 / (dim as f64).sqrt();
        let w1 = Matrix::from_fn(hidden, dim, |_, _| rng.uniform_range(-b1, b1));
        let b2 = 1.0 / (hidden as f64).sqrt();
        let w2 = Matrix::from_fn(dim, hidden, |_, _| rng.uniform_range(-b2, b2));
        AlignmentLayer {
            w1,
            b1: Vector::zeros(hidden),
            w2,
            b2: Vector::zeros(dim),
        }
    }

    /// All-zero parameters: the layer only normalizes its input.
    pub fn identity(dim: usize, hidden: usize) -> Self {
        AlignmentLayer {
            w1: Matrix::zeros(hidden, dim),
            b1: Vector::zeros(hidden),
            w2: Matrix::zeros(dim, hidden),
            b2: Vector::zeros(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn hidden(&self) -> usize {
        self.w1.rows()
    }

    pub fn w1(&self) -> &Matrix {
        &self.w1
    }

    pub fn b1(&self) -> &Vector {
        &self.b1
    }

    pub fn w2(&self) -> &Matrix {
        &self.w2
    }

    pub fn b2(&self) -> &Vector {
        &self.b2
    }

    pub fn num_parameters(&self) -> usize {
        2 * self.dim() * self.hidden() + self.dim() + self.hidden()
    }

    /// Flattened parameters: `W1` (row-major), `b1`, `W2` (row-major), `b2`.
    pub fn parameters(&self) -> Vec<f64> {
        LayerGrads {
            w1: self.w1.clone(),
            b1: self.b1.clone(),
            w2: self.w2.clone(),
            b2: self.b2.clone(),
        }
        .flatten()
    }

    pub fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_parameters() {
            return Err(Error::Dimension(format!(
                "expected {} parameters, got {}",
                self.num_parameters(),
                params.len()
            )));
        }
        let (d, h) = (self.dim(), self.hidden());
        let (w1, rest) = params.split_at(h * d);
        let (b1, rest) = rest.split_at(h);
        let (w2, b2) = rest.split_at(d * h);
        self.w1 = Matrix::new(h, d, w1.to_vec())?;
        self.b1 = Vector::new(b1.to_vec())?;
        self.w2 = Matrix::new(d, h, w2.to_vec())?;
        self.b2 = Vector::new(b2.to_vec())?;
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<ForwardCache> {
        if x.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "layer input has dimension {}, expected {}",
                x.len(),
                self.dim()
            )));
        }
        let pre = self.w1.mul_vec(x)?.add(&self.b1);
        let hidden = Vector::from(pre.iter().map(|v| v.max(0.0)).collect::<Vec<_>>());
        let out = self.w2.mul_vec(&hidden)?.add(&self.b2).add(x);
        let out_norm = out.norm();
        if !out_norm.is_finite() {
            return Err(Error::NonFinite("AlignmentLayer::forward"));
        }
        if out_norm < 1e-12 {
            return Err(Error::DegenerateInput(format!(
                "alignment output norm {out_norm:e} is too small to normalize"
            )));
        }
        Ok(ForwardCache {
            x: Vector::from(x),
            y: out.scaled(1.0 / out_norm),
            pre,
            hidden,
            out_norm,
        })
    }

    /// Forward pass without keeping the cache.
    pub fn apply(&self, x: &[f64]) -> Result<Vector> {
        Ok(self.forward(x)?.y)
    }

    /// Backpropagates `dl_dy` through the layer, returning parameter
    /// gradients and the gradient with respect to the input.
    pub fn backward(&self, cache: &ForwardCache, dl_dy: &[f64]) -> (LayerGrads, Vector) {
        let mut grads = LayerGrads::zeros(self.dim(), self.hidden());
        let (d_out, d_pre) = self.backward_into(cache, dl_dy, &mut grads);
        let dx = d_out.add(&self.w1.tr_mul_vec(&d_pre).expect("shapes fixed by forward"));
        (grads, dx)
    }

    /// Adds the parameter gradient for `dl_dy` to `acc`. Returns the
    /// gradients at the pre-normalization output and the hidden pre-activation.
    fn backward_into(
        &self,
        cache: &ForwardCache,
        dl_dy: &[f64],
        acc: &mut LayerGrads,
    ) -> (Vector, Vector) {
        let y = &cache.y;
        let radial = y.dot(dl_dy);
        let mut d_out = Vector::from(dl_dy);
        d_out.axpy(-radial, y);
        let d_out = d_out.scaled(1.0 / cache.out_norm);

        let d_hidden = self.w2.tr_mul_vec(&d_out).expect("shapes fixed by forward");
        let d_pre = Vector::from(
            d_hidden
                .iter()
                .zip(cache.pre.iter())
                .map(|(g, p)| if *p > 0.0 { *g } else { 0.0 })
                .collect::<Vec<_>>(),
        );

        acc.w2.add_outer(1.0, &d_out, &cache.hidden);
        acc.w1.add_outer(1.0, &d_pre, &cache.x);
        acc.b1.axpy(1.0, &d_pre);
        acc.b2.axpy(1.0, &d_out);
        (d_out, d_pre)
    }
}

/// Optimizer and schedule settings for one alignment-training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr0: f64,
    pub lr_min: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 40,
            lr0: 0.01,
            lr_min: 0.0,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 48,
            temperature: 16.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        // lr0 == lr_min is allowed so that a zero learning rate can freeze the layer.
        if !(self.lr_min >= 0.0 && self.lr0 >= self.lr_min) {
            return bad(format!(
                "need lr0 >= lr_min >= 0, got lr0={} lr_min={}",
                self.lr0, self.lr_min
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!(
                "weight decay must be >= 0, got {}",
                self.weight_decay
            ));
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if !(self.temperature > 0.0) {
            return bad(format!("temperature must be > 0, got {}", self.temperature));
        }
        Ok(())
    }
}

/// Cosine-annealed learning rate for epoch `epoch` (0-based).
pub fn cosine_lr(epoch: usize, cfg: &TrainConfig) -> f64 {
    let progress = epoch as f64 / cfg.epochs as f64;
    cfg.lr_min + 0.5 * (cfg.lr0 - cfg.lr_min) * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Which loss terms drive training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossOptions {
    /// Include the PAP term on pooled class means.
    pub pap: bool,
    /// Treat each pooled class mean as one extra cross-entropy sample.
    pub ce_on_pool: bool,
}

impl Default for LossOptions {
    fn default() -> Self {
        LossOptions {
            pap: true,
            ce_on_pool: true,
        }
    }
}

/// Inputs to one training run. Labels are anchor indices.
#[derive(Clone, Copy, Debug)]
pub struct TrainingData<'a> {
    /// Current-task samples.
    pub samples: &'a [(Vector, usize)],
    /// Pooled class means of every class learned so far.
    pub pool: &'a [(usize, Vector)],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub pap: f64,
    pub ce: f64,
    pub total: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub layer: AlignmentLayer,
    /// Objective on the full training data before the first step.
    pub initial: LossValues,
    /// Objective on the full training data after each epoch.
    pub log: Vec<EpochLog>,
}

impl TrainOutcome {
    pub fn final_loss(&self) -> LossValues {
        self.log
            .last()
            .map(|e| LossValues::new(e.ce, e.pap))
            .unwrap_or(self.initial)
    }
}

struct Objective<'a> {
    data: TrainingData<'a>,
    classifier: &'a EtfClassifier,
    temperature: f64,
    opts: LossOptions,
}

impl Objective<'_> {
    fn ce_terms(&self, batch: &[usize]) -> usize {
        batch.len()
            + if self.opts.ce_on_pool {
                self.data.pool.len()
            } else {
                0
            }
    }

    /// Loss and parameter gradient over `batch` (indices into samples) plus the pool.
    fn evaluate(
        &self,
        layer: &AlignmentLayer,
        batch: &[usize],
        want_grad: bool,
    ) -> Result<(LossValues, Option<LayerGrads>)> {
        let n_ce = self.ce_terms(batch);
        let n_pool = self.data.pool.len();
        let mut grads = want_grad.then(|| LayerGrads::zeros(layer.dim(), layer.hidden()));
        let mut ce = 0.0;
        let mut pap = 0.0;

        for &i in batch {
            let (x, label) = &self.data.samples[i];
            let cache = layer.forward(x)?;
            let term = ce_loss(cache.output(), *label, self.classifier, self.temperature)?;
            ce += term.loss;
            if let Some(g) = grads.as_mut() {
                layer.backward_into(&cache, &term.grad.scaled(1.0 / n_ce as f64), g);
            }
        }
        for (index, mean) in self.data.pool {
            let cache = layer.forward(mean)?;
            let y = cache.output();
            let mut dy = Vector::zeros(y.dim());
            if self.opts.ce_on_pool {
                let term = ce_loss(y, *index, self.classifier, self.temperature)?;
                ce += term.loss;
                dy.axpy(1.0 / n_ce as f64, &term.grad);
            }
            if self.opts.pap {
                pap += pap_loss(y, *index, self.classifier)?;
                dy.axpy(1.0 / n_pool as f64, &pap_grad(y, *index, self.classifier)?);
            }
            if let Some(g) = grads.as_mut() {
                layer.backward_into(&cache, &dy, g);
            }
        }

        let ce = if n_ce > 0 { ce / n_ce as f64 } else { 0.0 };
        let pap = if self.opts.pap && n_pool > 0 {
            pap / n_pool as f64
        } else {
            0.0
        };
        Ok((LossValues::new(ce, pap), grads))
    }
}

/// Trains `layer` with SGD + momentum under a cosine schedule.
///
/// Each step uses one shuffled mini-batch of current-task samples plus every
/// pooled class mean. Momentum buffers start at zero.
pub fn train_alignment(
    layer: AlignmentLayer,
    data: TrainingData<'_>,
    classifier: &EtfClassifier,
    cfg: &TrainConfig,
    opts: LossOptions,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.pool.is_empty() {
        return Err(Error::Config(
            "alignment training needs at least one class mean".into(),
        ));
    }
    if layer.dim() != classifier.dim() {
        return Err(Error::Dimension(format!(
            "layer dimension {} differs from classifier dimension {}",
            layer.dim(),
            classifier.dim()
        )));
    }
    if data.samples.is_empty() && !opts.pap && !opts.ce_on_pool {
        return Err(Error::Config("no loss term is active".into()));
    }
    let k = classifier.num_classes();
    let bad_label = data
        .samples
        .iter()
        .map(|(_, l)| *l)
        .chain(data.pool.iter().map(|(l, _)| *l))
        .find(|l| *l >= k);
    if let Some(index) = bad_label {
        return Err(Error::UnknownClass {
            index,
            num_classes: k,
        });
    }

    let objective = Objective {
        data,
        classifier,
        temperature: cfg.temperature,
        opts,
    };
    let all: Vec<usize> = (0..data.samples.len()).collect();
    let (initial, _) = objective.evaluate(&layer, &all, false)?;

    let mut layer = layer;
    let mut velocity = LayerGrads::zeros(layer.dim(), layer.hidden());
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut order = all.clone();

    for epoch in 0..cfg.epochs {
        let lr = cosine_lr(epoch, cfg);
        let mut rng = Rng::new(derive_seed(cfg.seed, epoch as u64));
        rng.shuffle(&mut order);
        let batches: Vec<&[usize]> = if order.is_empty() {
            vec![&[]]
        } else {
            order.chunks(cfg.batch_size).collect()
        };
        for batch in batches {
            let (_, grads) = objective.evaluate(&layer, batch, true)?;
            let mut g = grads.expect("gradient requested");
            g.w1.axpy(cfg.weight_decay, &layer.w1);
            g.w2.axpy(cfg.weight_decay, &layer.w2);
            velocity = LayerGrads {
                w1: velocity.w1.scaled(cfg.momentum),
                b1: velocity.b1.scaled(cfg.momentum),
                w2: velocity.w2.scaled(cfg.momentum),
                b2: velocity.b2.scaled(cfg.momentum),
            };
            velocity.axpy(1.0, &g);
            if lr != 0.0 {
                layer.w1.axpy(-lr, &velocity.w1);
                layer.b1.axpy(-lr, &velocity.b1);
                layer.w2.axpy(-lr, &velocity.w2);
                layer.b2.axpy(-lr, &velocity.b2);
            }
        }
        if layer.parameters().iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("train_alignment"));
        }
        let (values, _) = objective.evaluate(&layer, &all, false)?;
        log.push(EpochLog {
            epoch,
            lr,
            pap: values.pap,
            ce: values.ce,
            total: values.total,
        });
    }

    Ok(TrainOutcome {
        layer,
        initial,
        log,
    })
}
