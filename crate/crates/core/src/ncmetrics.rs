//! Neural-collapse diagnostics over a labeled feature snapshot.
//!
//! * NC1: `(1/K) tr(Σ_W Σ_B^†)`, within-class spread relative to between-class spread.
//! * NC2: distance of the normalized Gram matrix of centered class means from
//!   the normalized simplex-ETF Gram `(I - 11^T/K) / sqrt(K - 1)`.
//! * NC3: the same distance for `H^T W`, centered means against classifier weights.
//!
//! Gram matrices are `K x K` (`H^T H`, `H^T W`). The global mean is the
//! unweighted mean of class means, and Σ_W is normalized by the total sample
//! count so unequal class sizes are handled.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{frobenius, pinv_psd, Matrix, Vector};
use crate::ClassId;

/// Labeled features of one dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSnapshot {
    dim: usize,
    samples: Vec<(ClassId, Vector)>,
    classes: BTreeSet<ClassId>,
}

impl FeatureSnapshot {
    /// Snapshot whose class set is the set of labels present.
    pub fn new(dim: usize, samples: Vec<(ClassId, Vector)>) -> Result<Self> {
        let classes = samples.iter().map(|(c, _)| *c).collect();
        Self::with_classes(dim, classes, samples)
    }

    /// Snapshot with an explicitly declared class set. Declared classes
    /// without samples are reported by [`class_means`] as `EmptyClass`.
    pub fn with_classes(
        dim: usize,
        classes: BTreeSet<ClassId>,
        samples: Vec<(ClassId, Vector)>,
    ) -> Result<Self> {
        for (label, feature) in &samples {
            if feature.dim() != dim {
                return Err(Error::Dimension(format!(
                    "sample of class {label} has dimension {}, expected {dim}",
                    feature.dim()
                )));
            }
            if feature.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("FeatureSnapshot"));
            }
            if !classes.contains(label) {
                return Err(Error::Config(format!(
                    "sample label {label} is not among the declared classes"
                )));
            }
        }
        Ok(FeatureSnapshot {
            dim,
            samples,
            classes,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[(ClassId, Vector)] {
        &self.samples
    }

    /// Declared classes in ascending order.
    pub fn classes(&self) -> Vec<ClassId> {
        self.classes.iter().copied().collect()
    }

    pub fn class_set(&self) -> &BTreeSet<ClassId> {
        &self.classes
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// Applies `f` to every feature, keeping labels.
    pub fn map_features(&self, mut f: impl FnMut(&Vector) -> Result<Vector>) -> Result<Self> {
        let samples = self
            .samples
            .iter()
            .map(|(c, x)| Ok((*c, f(x)?)))
            .collect::<Result<Vec<_>>>()?;
        let dim = samples.first().map_or(self.dim, |(_, v)| v.dim());
        FeatureSnapshot::with_classes(dim, self.classes.clone(), samples)
    }
}

/// Per-class means in ascending class order.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassMeans {
    pub classes: Vec<ClassId>,
    /// `d x K`, column `k` is the mean of `classes[k]`.
    pub means: Matrix,
    /// Unweighted average of the class means.
    pub global_mean: Vector,
    pub counts: Vec<usize>,
}

pub fn class_means(snap: &FeatureSnapshot) -> Result<ClassMeans> {
    let mut sums: BTreeMap<ClassId, (Vector, usize)> = snap
        .classes
        .iter()
        .map(|c| (*c, (Vector::zeros(snap.dim), 0)))
        .collect();
    for (label, x) in &snap.samples {
        let entry = sums
            .get_mut(label)
            .expect("labels validated on construction");
        entry.0.axpy(1.0, x);
        entry.1 += 1;
    }
    let mut columns = Vec::with_capacity(sums.len());
    let mut counts = Vec::with_capacity(sums.len());
    for (class, (sum, count)) in &sums {
        if *count == 0 {
            return Err(Error::EmptyClass(*class));
        }
        columns.push(sum.scaled(1.0 / *count as f64));
        counts.push(*count);
    }
    let global_mean = Vector::mean_of(&columns).unwrap_or_else(|| Vector::zeros(snap.dim));
    Ok(ClassMeans {
        classes: sums.keys().copied().collect(),
        means: Matrix::from_columns(snap.dim, &columns)?,
        global_mean,
        counts,
    })
}

/// Within-class and between-class covariance matrices.
#[derive(Clone, Debug)]
pub struct Scatter {
    pub sigma_w: Matrix,
    pub sigma_b: Matrix,
}

pub fn scatter(snap: &FeatureSnapshot, means: &ClassMeans) -> Scatter {
    let d = snap.dim;
    let k = means.classes.len();
    let index: BTreeMap<ClassId, usize> = means
        .classes
        .iter()
        .enumerate()
        .map(|(i, c)| (*c, i))
        .collect();
    let mut sigma_w = Matrix::zeros(d, d);
    let n = snap.samples.len().max(1) as f64;
    for (label, x) in &snap.samples {
        let mu = means.means.column(index[label]);
        let diff = x.sub(&mu);
        sigma_w.add_outer(1.0 / n, &diff, &diff);
    }
    let mut sigma_b = Matrix::zeros(d, d);
    for j in 0..k {
        let diff = means.means.column(j).sub(&means.global_mean);
        sigma_b.add_outer(1.0 / k as f64, &diff, &diff);
    }
    Scatter { sigma_w, sigma_b }
}

fn require_classes(k: usize) -> Result<()> {
    if k < 2 {
        return Err(Error::Dimension(format!(
            "neural-collapse metrics need at least 2 classes, got {k}"
        )));
    }
    Ok(())
}

fn nc1_from_scatter(s: &Scatter, means: &ClassMeans, pinv_tol: f64) -> Result<f64> {
    let k = means.classes.len();
    let trace_b = s.sigma_b.trace();
    let scale = (0..k)
        .map(|j| means.means.column(j).norm().powi(2))
        .sum::<f64>()
        / k as f64;
    if trace_b <= 1e-24 * scale.max(1e-276) {
        return Err(Error::DegenerateGeometry(
            "all class means coincide (trace of between-class covariance is zero)".into(),
        ));
    }
    let pinv = pinv_psd(&s.sigma_b, pinv_tol)?;
    let product = s.sigma_w.matmul(&pinv)?;
    Ok((product.trace() / k as f64).max(0.0))
}

pub fn nc1(snap: &FeatureSnapshot, pinv_tol: f64) -> Result<f64> {
    require_classes(snap.num_classes())?;
    let means = class_means(snap)?;
    let s = scatter(snap, &means);
    nc1_from_scatter(&s, &means, pinv_tol)
}

/// `(I_K - 11^T / K) / sqrt(K - 1)`, which has unit Frobenius norm.
pub fn etf_gram_target(k: usize) -> Matrix {
    let kf = k as f64;
    let s = 1.0 / (kf - 1.0).sqrt();
    Matrix::from_fn(k, k, |i, j| s * (if i == j { 1.0 } else { 0.0 } - 1.0 / kf))
}

fn centered(means: &Matrix, global_mean: &[f64]) -> Result<Matrix> {
    if global_mean.len() != means.rows() {
        return Err(Error::Dimension(format!(
            "global mean has dimension {}, means have {}",
            global_mean.len(),
            means.rows()
        )));
    }
    Ok(Matrix::from_fn(means.rows(), means.cols(), |i, j| {
        means[(i, j)] - global_mean[i]
    }))
}

fn distance_to_etf(gram: &Matrix, what: &str) -> Result<f64> {
    let norm = frobenius(gram);
    if norm == 0.0 {
        return Err(Error::DegenerateGeometry(format!(
            "{what} has zero Frobenius norm"
        )));
    }
    let diff = gram.scaled(1.0 / norm).sub(&etf_gram_target(gram.rows()))?;
    Ok(frobenius(&diff))
}

/// NC2 of the class means (columns of `means`) around `global_mean`.
pub fn nc2(means: &Matrix, global_mean: &[f64]) -> Result<f64> {
    require_classes(means.cols())?;
    let h = centered(means, global_mean)?;
    distance_to_etf(&h.tr_matmul(&h)?, "H^T H")
}

/// NC3 of centered class means against classifier weights (`d x K`, same class order).
pub fn nc3(means: &Matrix, global_mean: &[f64], classifier: &Matrix) -> Result<f64> {
    require_classes(means.cols())?;
    if classifier.shape() != means.shape() {
        return Err(Error::Dimension(format!(
            "classifier is {:?} but means are {:?}",
            classifier.shape(),
            means.shape()
        )));
    }
    let h = centered(means, global_mean)?;
    distance_to_etf(&h.tr_matmul(classifier)?, "H^T W")
}

/// All three metrics for one snapshot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NcReport {
    pub nc1: f64,
    pub nc2: f64,
    pub nc3: Option<f64>,
    pub trace_sigma_w: f64,
    pub trace_sigma_b: f64,
    pub num_classes: usize,
}

/// Computes the full report. `classifier`, if given, holds one column per
/// class in ascending class-id order.
pub fn nc_report(
    snap: &FeatureSnapshot,
    classifier: Option<&Matrix>,
    pinv_tol: f64,
) -> Result<NcReport> {
    require_classes(snap.num_classes())?;
    let means = class_means(snap)?;
    let s = scatter(snap, &means);
    let nc1 = nc1_from_scatter(&s, &means, pinv_tol)?;
    let nc2 = nc2(&means.means, &means.global_mean)?;
    let nc3 = classifier
        .map(|w| nc3(&means.means, &means.global_mean, w))
        .transpose()?;
    Ok(NcReport {
        nc1,
        nc2,
        nc3,
        trace_sigma_w: s.sigma_w.trace(),
        trace_sigma_b: s.sigma_b.trace(),
        num_classes: means.classes.len(),
    })
}
