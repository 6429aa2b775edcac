//! Seeded synthetic class-incremental streams with feature drift.
//!
//! Class centers start uniform on the unit sphere. Before every task after
//! the first, all centers drift: a rotation by `theta` in a random set of
//! mutually orthogonal planes (every vector turns by exactly `theta`),
//! followed by isotropic Gaussian jitter of per-coordinate std `delta`.
//! Samples are `center + N(0, sigma^2 I)`.
//!
//! Task `t` trains on its own classes and tests on every class seen so far,
//! all drawn from the centers as they stand at task `t`. Each class draw is
//! split 80/20 into train/test.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::emb::write_embeddings;
use super::manifest::{StreamManifest, TaskEntry};
use crate::engine::{Task, TaskStream};
use crate::error::{Error, Result};
use crate::linalg::{gram_schmidt, Matrix, Rng, Vector};
use crate::ncmetrics::FeatureSnapshot;
use crate::ClassId;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub dim: usize,
    pub classes: usize,
    pub tasks: usize,
    pub samples_per_class: usize,
    /// Within-class noise, per-coordinate standard deviation.
    pub sigma: f64,
    /// Rotation angle of the structured drift per task, radians.
    pub theta: f64,
    /// Per-coordinate standard deviation of the center jitter per task.
    pub delta: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            dim: 32,
            classes: 12,
            tasks: 4,
            samples_per_class: 300,
            sigma: 0.08,
            theta: 0.1,
            delta: 0.02,
            seed: 0,
        }
    }
}

/// One generated task: its classes plus train and test records.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthTask {
    pub classes: Vec<ClassId>,
    pub train: Vec<(ClassId, Vector)>,
    pub test: Vec<(ClassId, Vector)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticStream {
    pub dim: usize,
    pub tasks: Vec<SynthTask>,
}

impl SyntheticStream {
    /// In-memory task stream, equivalent to loading the written files
    /// except that features keep full precision.
    pub fn into_task_stream(self) -> Result<TaskStream> {
        let dim = self.dim;
        let tasks = self
            .tasks
            .into_iter()
            .map(|t| {
                let declared: BTreeSet<ClassId> = t.classes.iter().copied().collect();
                Ok(Task {
                    train: FeatureSnapshot::with_classes(dim, declared, t.train)?,
                    test: FeatureSnapshot::new(dim, t.test)?,
                    classes: t.classes,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        TaskStream::new(dim, tasks)
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.dim == 0 {
            return bad("dim must be positive".into());
        }
        if self.classes > self.dim {
            return bad(format!(
                "{} classes exceed dimension {}",
                self.classes, self.dim
            ));
        }
        if self.tasks == 0 {
            return bad("need at least one task".into());
        }
        if self.tasks > self.classes {
            return bad(format!(
                "{} tasks cannot each receive a class out of {}",
                self.tasks, self.classes
            ));
        }
        if self.samples_per_class < 2 {
            return bad("need at least 2 samples per class for the train/test split".into());
        }
        if !(self.sigma >= 0.0 && self.delta >= 0.0) {
            return bad("sigma and delta must be non-negative".into());
        }
        if !(0.0..std::f64::consts::PI).contains(&self.theta) {
            return bad(format!("theta must lie in [0, pi), got {}", self.theta));
        }
        Ok(())
    }

    /// Contiguous partition of `0..classes` into `tasks` groups; earlier
    /// tasks take the remainder.
    pub fn partition(&self) -> Vec<Vec<ClassId>> {
        let base = self.classes / self.tasks;
        let extra = self.classes % self.tasks;
        let mut next = 0;
        (0..self.tasks)
            .map(|t| {
                let size = base + usize::from(t < extra);
                let group = (next..next + size).map(|c| c as ClassId).collect();
                next += size;
                group
            })
            .collect()
    }

    pub fn test_count(&self) -> usize {
        (self.samples_per_class / 5).max(1)
    }

    pub fn generate(&self) -> Result<SyntheticStream> {
        self.validate()?;
        let d = self.dim;
        let mut rng = Rng::new(self.seed);
        let mut centers: Vec<Vector> = (0..self.classes).map(|_| rng.unit_vector(d)).collect();
        let partition = self.partition();
        let n_test = self.test_count();
        let mut seen: Vec<ClassId> = Vec::new();
        let mut tasks = Vec::with_capacity(self.tasks);

        for (t, classes) in partition.into_iter().enumerate() {
            if t > 0 {
                let rotation = random_planes(&mut rng, d)?;
                for c in centers.iter_mut() {
                    let mut moved = rotate(&rotation, c, self.theta);
                    moved.axpy(self.delta, &rng.normal_vector(d));
                    *c = moved;
                }
            }
            seen.extend(&classes);
            let mut train = Vec::new();
            let mut test = Vec::new();
            for &class in &seen {
                let center = &centers[class as usize];
                let mut draws: Vec<Vector> = (0..self.samples_per_class)
                    .map(|_| {
                        let mut x = center.clone();
                        x.axpy(self.sigma, &rng.normal_vector(d));
                        x
                    })
                    .collect();
                rng.shuffle(&mut draws);
                let split = draws.split_off(draws.len() - n_test);
                test.extend(split.into_iter().map(|x| (class, x)));
                if classes.contains(&class) {
                    train.extend(draws.into_iter().map(|x| (class, x)));
                }
            }
            tasks.push(SynthTask {
                classes,
                train,
                test,
            });
        }
        Ok(SyntheticStream { dim: d, tasks })
    }
}

/// Orthonormal basis whose consecutive column pairs span the rotation planes.
fn random_planes(rng: &mut Rng, d: usize) -> Result<Matrix> {
    let cols = 2 * (d / 2);
    loop {
        match gram_schmidt(&rng.normal_matrix(d, cols), &Matrix::zeros(d, 0)) {
            Ok(q) => return Ok(q),
            Err(Error::DegenerateInput(_)) => continue,
            Err(e) => return Err(e),
        }
    }
}

/// Rotates `x` by `theta` inside every plane spanned by a column pair of `q`.
fn rotate(q: &Matrix, x: &Vector, theta: f64) -> Vector {
    let (s, c) = theta.sin_cos();
    let mut out = x.clone();
    for p in 0..q.cols() / 2 {
        let u = q.column(2 * p);
        let v = q.column(2 * p + 1);
        let a = u.dot(x);
        let b = v.dot(x);
        out.axpy((c - 1.0) * a - s * b, &u);
        out.axpy(s * a + (c - 1.0) * b, &v);
    }
    out
}

/// Generates the stream and writes `task{t}_train.emb`, `task{t}_test.emb`
/// and `manifest.toml` into `dir`.
pub fn generate_synthetic(spec: &SynthSpec, dir: &Path) -> Result<StreamManifest> {
    let stream = spec.generate()?;
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(stream.tasks.len());
    for (t, task) in stream.tasks.iter().enumerate() {
        let train = PathBuf::from(format!("task{}_train.emb", t + 1));
        let test = PathBuf::from(format!("task{}_test.emb", t + 1));
        write_embeddings(&dir.join(&train), stream.dim, &task.train)?;
        write_embeddings(&dir.join(&test), stream.dim, &task.test)?;
        entries.push(TaskEntry {
            classes: task.classes.clone(),
            train,
            test,
        });
    }
    let manifest = StreamManifest::new(stream.dim, entries, dir.to_path_buf())?;
    manifest.save(&dir.join("manifest.toml"))?;
    Ok(manifest)
}
