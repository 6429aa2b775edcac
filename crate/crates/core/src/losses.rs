//! Pull-and-push loss, cosine cross-entropy and their exact gradients.
//!
//! For an aligned class mean `c` of class index `k` and anchors `w_j`:
//!
//! ```text
//! pap(c) = (w_k·c - 1)^2 + sum_{j != k} (w_j·c + 1/(K-1))^2
//! ```
//!
//! which vanishes exactly when `c` sits at its own anchor. Cross-entropy uses
//! logits `tau * cos(x, w_j)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::etf::EtfClassifier;
use crate::linalg::{column_norm, norm, Vector};

/// Loss values for one evaluation; `total = ce + pap`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossValues {
    pub pap: f64,
    pub ce: f64,
    pub total: f64,
}

impl LossValues {
    pub fn new(ce: f64, pap: f64) -> Self {
        LossValues {
            pap,
            ce,
            total: ce + pap,
        }
    }
}

/// A class mean after the alignment layer, checked to be unit norm.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignedMean {
    index: usize,
    vector: Vector,
}

impl AlignedMean {
    pub fn new(index: usize, vector: Vector) -> Result<Self> {
        let n = vector.norm();
        if (n - 1.0).abs() > 1e-9 {
            return Err(Error::DegenerateInput(format!(
                "aligned mean of class index {index} has norm {n}, expected 1"
            )));
        }
        Ok(AlignedMean { index, vector })
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn vector(&self) -> &Vector {
        &self.vector
    }
}

fn check(c: &[f64], k: usize, classifier: &EtfClassifier) -> Result<()> {
    if c.len() != classifier.dim() {
        return Err(Error::Dimension(format!(
            "feature has dimension {}, classifier has {}",
            c.len(),
            classifier.dim()
        )));
    }
    if k >= classifier.num_classes() {
        return Err(Error::UnknownClass {
            index: k,
            num_classes: classifier.num_classes(),
        });
    }
    Ok(())
}

/// Dot products `w_j·c` for every anchor.
fn anchor_dots(c: &[f64], classifier: &EtfClassifier) -> Vec<f64> {
    classifier
        .anchors()
        .tr_mul_vec(c)
        .expect("dimension checked")
        .into_inner()
}

/// Residuals `r_j` with `pap = sum r_j^2`.
fn pap_residuals(c: &[f64], k: usize, classifier: &EtfClassifier) -> Vec<f64> {
    let push_target = -1.0 / (classifier.num_classes() as f64 - 1.0);
    anchor_dots(c, classifier)
        .into_iter()
        .enumerate()
        .map(|(j, d)| if j == k { d - 1.0 } else { d - push_target })
        .collect()
}

/// PAP loss of the (raw, not re-normalized) feature `c` for class index `k`.
pub fn pap_loss(c: &[f64], k: usize, classifier: &EtfClassifier) -> Result<f64> {
    check(c, k, classifier)?;
    Ok(pap_residuals(c, k, classifier).iter().map(|r| r * r).sum())
}

/// Gradient of [`pap_loss`] with respect to `c`: `2 * sum_j r_j w_j`.
pub fn pap_grad(c: &[f64], k: usize, classifier: &EtfClassifier) -> Result<Vector> {
    check(c, k, classifier)?;
    let residuals = pap_residuals(c, k, classifier);
    let scaled: Vec<f64> = residuals.iter().map(|r| 2.0 * r).collect();
    classifier.anchors().mul_vec(&scaled)
}

/// Loss and gradient of one term.
#[derive(Clone, Debug, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: Vector,
}

/// Softmax cross-entropy over cosine logits `tau * cos(x, w_j)` for label index `label`.
///
/// The gradient is taken with respect to `x` itself, through the cosine
/// (including the `1/|x|` factor).
pub fn ce_loss(
    feature: &[f64],
    label: usize,
    classifier: &EtfClassifier,
    temperature: f64,
) -> Result<LossGrad> {
    check(feature, label, classifier)?;
    if temperature <= 0.0 {
        return Err(Error::Config(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let x_norm = norm(feature);
    if x_norm < 1e-12 {
        return Err(Error::DegenerateInput(format!(
            "cross-entropy feature has norm {x_norm:e}"
        )));
    }
    let anchors = classifier.anchors();
    let anchor_norms: Vec<f64> = (0..anchors.cols())
        .map(|j| column_norm(anchors, j))
        .collect();
    let dots = anchors.tr_mul_vec(feature)?;
    let cosines: Vec<f64> = dots
        .iter()
        .zip(&anchor_norms)
        .map(|(d, wn)| d / (x_norm * wn))
        .collect();
    let logits: Vec<f64> = cosines.iter().map(|c| temperature * c).collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    // ln_1p keeps full relative precision when the target logit dominates.
    let loss = if logits[label] == max {
        exp.iter()
            .enumerate()
            .filter(|(j, _)| *j != label)
            .map(|(_, e)| e)
            .sum::<f64>()
            .ln_1p()
    } else {
        sum.ln() + max - logits[label]
    };

    // dL/dz_j = p_j - [j == label]; dcos_j/dx = (w_j/|w_j| - cos_j x/|x|) / |x|
    let coeffs: Vec<f64> = exp
        .iter()
        .enumerate()
        .map(|(j, e)| temperature * (e / sum - if j == label { 1.0 } else { 0.0 }) / x_norm)
        .collect();
    let radial: f64 = coeffs.iter().zip(&cosines).map(|(g, c)| g * c).sum();
    let per_anchor: Vec<f64> = coeffs
        .iter()
        .zip(&anchor_norms)
        .map(|(g, wn)| g / wn)
        .collect();
    let mut grad = anchors.mul_vec(&per_anchor)?;
    grad.axpy(-radial / x_norm, feature);
    Ok(LossGrad { loss, grad })
}

/// `ce` = mean cross-entropy over `batch`, `pap` = mean PAP over `means`.
pub fn total_loss(
    batch: &[(Vector, usize)],
    means: &[AlignedMean],
    classifier: &EtfClassifier,
    temperature: f64,
) -> Result<LossValues> {
    if batch.is_empty() {
        return Err(Error::DegenerateInput("empty cross-entropy batch".into()));
    }
    if means.is_empty() {
        return Err(Error::DegenerateInput("no aligned class means".into()));
    }
    let mut ce = 0.0;
    for (x, label) in batch {
        ce += ce_loss(x, *label, classifier, temperature)?.loss;
    }
    let mut pap = 0.0;
    for m in means {
        pap += pap_loss(m.vector(), m.index(), classifier)?;
    }
    Ok(LossValues::new(
        ce / batch.len() as f64,
        pap / means.len() as f64,
    ))
}
