//! The class-incremental runner.
//!
//! For every task the engine stores the new class means, grows the ETF
//! classifier, (re)trains the alignment layer on the current task plus the
//! pooled means, and evaluates on the test data of every class seen so far.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::alignment::{
    train_alignment, AlignmentLayer, EpochLog, LossOptions, TrainConfig, TrainingData,
};
use crate::data_io::overlapping_classes;
use crate::error::{at_path, Error, Result};
use crate::etf::EtfClassifier;
use crate::linalg::{derive_seed, Matrix, Vector, DEFAULT_PINV_TOL};
use crate::losses::LossValues;
use crate::ncmetrics::{class_means, nc1, nc2, nc3, FeatureSnapshot};
use crate::ClassId;

/// Scores within this distance of the maximum count as tied.
pub const TIE_TOL: f64 = 1e-12;

const POOL_MAGIC: [u8; 4] = *b"CMP1";
const POOL_VERSION: u8 = 1;
const POOL_HEADER_LEN: usize = 17;

#[derive(Clone, Debug, PartialEq)]
pub struct PoolEntry {
    pub mean: Vector,
    pub sample_count: u64,
    /// 1-based index of the task that introduced the class.
    pub task: u32,
}

/// One stored mean per learned class. Iteration order is insertion order,
/// which is also the anchor index of each class.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassMeanPool {
    dim: usize,
    order: Vec<ClassId>,
    entries: BTreeMap<ClassId, PoolEntry>,
}

impl ClassMeanPool {
    pub fn new(dim: usize) -> Self {
        ClassMeanPool {
            dim,
            order: Vec::new(),
            entries: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Class ids in anchor order.
    pub fn classes(&self) -> &[ClassId] {
        &self.order
    }

    pub fn get(&self, class: ClassId) -> Option<&PoolEntry> {
        self.entries.get(&class)
    }

    pub fn index_of(&self, class: ClassId) -> Option<usize> {
        self.order.iter().position(|c| *c == class)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ClassId, &PoolEntry)> + '_ {
        self.order.iter().map(move |c| (*c, &self.entries[c]))
    }

    /// Adds the means of every class in `train`, in ascending class order.
    /// Returns the new class ids.
    pub fn ingest_task(&mut self, task: u32, train: &FeatureSnapshot) -> Result<Vec<ClassId>> {
        if train.dim() != self.dim {
            return Err(Error::Dimension(format!(
                "task features have dimension {}, pool has {}",
                train.dim(),
                self.dim
            )));
        }
        if let Some(c) = train
            .class_set()
            .iter()
            .find(|c| self.entries.contains_key(c))
        {
            return Err(Error::DuplicateClass(*c));
        }
        let means = class_means(train)?;
        for (k, class) in means.classes.iter().enumerate() {
            self.order.push(*class);
            self.entries.insert(
                *class,
                PoolEntry {
                    mean: means.means.column(k),
                    sample_count: means.counts[k] as u64,
                    task,
                },
            );
        }
        Ok(means.classes)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(POOL_HEADER_LEN + self.len() * (16 + 8 * self.dim));
        out.extend_from_slice(&POOL_MAGIC);
        out.push(POOL_VERSION);
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        for (class, e) in self.iter() {
            out.extend_from_slice(&class.to_le_bytes());
            out.extend_from_slice(&e.task.to_le_bytes());
            out.extend_from_slice(&e.sample_count.to_le_bytes());
            for x in e.mean.iter() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fmt = |m: String| Error::Format(m);
        if bytes.len() < POOL_HEADER_LEN {
            return Err(fmt(format!(
                "pool file is {} bytes, shorter than its header",
                bytes.len()
            )));
        }
        if bytes[0..4] != POOL_MAGIC {
            return Err(fmt("pool file has bad magic".into()));
        }
        if bytes[4] != POOL_VERSION {
            return Err(fmt(format!("unsupported pool version {}", bytes[4])));
        }
        let dim = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
        let count = u64::from_le_bytes(bytes[9..17].try_into().unwrap());
        let record = 16 + 8 * dim;
        let expected = (count as u128) * (record as u128) + POOL_HEADER_LEN as u128;
        if bytes.len() as u128 != expected {
            return Err(fmt(format!(
                "pool file declares {count} entries of dimension {dim} ({expected} bytes) but has {} bytes",
                bytes.len()
            )));
        }
        let mut pool = ClassMeanPool::new(dim);
        for chunk in bytes[POOL_HEADER_LEN..].chunks_exact(record) {
            let class = u32::from_le_bytes(chunk[0..4].try_into().unwrap());
            let task = u32::from_le_bytes(chunk[4..8].try_into().unwrap());
            let sample_count = u64::from_le_bytes(chunk[8..16].try_into().unwrap());
            let mean: Vec<f64> = chunk[16..]
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect();
            let mean = Vector::new(mean)
                .map_err(|_| fmt(format!("class {class} has a non-finite mean")))?;
            if pool.entries.contains_key(&class) {
                return Err(fmt(format!("class {class} stored twice")));
            }
            pool.order.push(class);
            pool.entries.insert(
                class,
                PoolEntry {
                    mean,
                    sample_count,
                    task,
                },
            );
        }
        Ok(pool)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(at_path(path))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(at_path(path))?)
    }
}

/// One incremental task.
#[derive(Clone, Debug, PartialEq)]
pub struct Task {
    pub classes: Vec<ClassId>,
    pub train: FeatureSnapshot,
    pub test: FeatureSnapshot,
}

/// Validated sequence of tasks with pairwise disjoint class sets.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskStream {
    dim: usize,
    tasks: Vec<Task>,
}

impl TaskStream {
    pub fn new(dim: usize, tasks: Vec<Task>) -> Result<Self> {
        if tasks.is_empty() {
            return Err(Error::Config("task stream is empty".into()));
        }
        let overlap = overlapping_classes(tasks.iter().map(|t| t.classes.as_slice()));
        if !overlap.is_empty() {
            return Err(Error::Overlap(overlap));
        }
        let mut seen: BTreeSet<ClassId> = BTreeSet::new();
        for (i, t) in tasks.iter().enumerate() {
            if t.train.dim() != dim || (t.test.dim() != dim && !t.test.is_empty()) {
                return Err(Error::Dimension(format!(
                    "task {} features do not have dimension {dim}",
                    i + 1
                )));
            }
            let own: BTreeSet<ClassId> = t.classes.iter().copied().collect();
            if own.len() != t.classes.len() {
                return Err(Error::Config(format!("task {} repeats a class", i + 1)));
            }
            if let Some(c) = t.train.class_set().iter().find(|c| !own.contains(c)) {
                return Err(Error::Config(format!(
                    "task {} has training samples of class {c}, which it does not declare",
                    i + 1
                )));
            }
            seen.extend(&own);
            if let Some(c) = t.test.class_set().iter().find(|c| !seen.contains(c)) {
                return Err(Error::Config(format!(
                    "task {} has test samples of class {c}, which has not been learned yet",
                    i + 1
                )));
            }
        }
        Ok(TaskStream { dim, tasks })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    pub fn total_classes(&self) -> usize {
        self.tasks.iter().map(|t| t.classes.len()).sum()
    }

    /// Number of classes seen after each task.
    pub fn cumulative_classes(&self) -> Vec<usize> {
        self.tasks
            .iter()
            .scan(0, |acc, t| {
                *acc += t.classes.len();
                Some(*acc)
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationFlags {
    pub dynamic_etf: bool,
    pub init_align: bool,
    pub pap_loss: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        AblationFlags {
            dynamic_etf: true,
            init_align: true,
            pap_loss: true,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerInit {
    /// Uniform fan-in initialization.
    #[default]
    Random,
    /// All parameters zero, so the layer only normalizes.
    Identity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub train: TrainConfig,
    /// Hidden width of the alignment layer; the feature dimension if unset.
    pub hidden: Option<usize>,
    /// Map test features through the alignment layer before scoring.
    pub align_test: bool,
    /// Also use each pooled class mean as a cross-entropy sample.
    pub ce_on_pool: bool,
    /// Draw a fresh basis on every expansion instead of extending it.
    pub regenerate_basis: bool,
    pub pinv_tol: f64,
    pub layer_init: LayerInit,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            train: TrainConfig::default(),
            hidden: None,
            align_test: true,
            ce_on_pool: true,
            regenerate_basis: false,
            pinv_tol: DEFAULT_PINV_TOL,
            layer_init: LayerInit::Random,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub class: ClassId,
    /// Anchor index of the predicted class.
    pub index: usize,
    /// Cosine to each scored anchor.
    pub scores: Vector,
}

/// Scores `feature` against the first `labels.len()` anchors; `labels[j]` is
/// the class of anchor `j`. Ties go to the smallest class id.
pub fn predict(
    feature: &[f64],
    classifier: &EtfClassifier,
    layer: Option<&AlignmentLayer>,
    labels: &[ClassId],
) -> Result<Prediction> {
    if feature.len() != classifier.dim() {
        return Err(Error::Dimension(format!(
            "feature has dimension {}, classifier {}",
            feature.len(),
            classifier.dim()
        )));
    }
    if labels.is_empty() || labels.len() > classifier.num_classes() {
        return Err(Error::Config(format!(
            "{} labels for a classifier with {} anchors",
            labels.len(),
            classifier.num_classes()
        )));
    }
    let x = match layer {
        Some(l) => l.apply(feature)?,
        None => Vector::from(feature).normalized()?,
    };
    let anchors = classifier.anchors();
    let scores: Vec<f64> = (0..labels.len())
        .map(|j| {
            let w = anchors.column(j);
            x.dot(&w) / w.norm()
        })
        .collect();
    let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let index = (0..labels.len())
        .filter(|&j| scores[j] >= best - TIE_TOL)
        .min_by_key(|&j| labels[j])
        .expect("at least one label");
    Ok(Prediction {
        class: labels[index],
        index,
        scores: Vector::from(scores),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub task: usize,
    #[serde(rename = "K_t")]
    pub k_t: usize,
    #[serde(rename = "A_t")]
    pub a_t: f64,
    /// Accuracy on classes learned before this task.
    pub old_class_accuracy: Option<f64>,
    /// Accuracy on this task's classes.
    pub new_class_accuracy: Option<f64>,
    pub test_samples: usize,
    pub nc1: Option<f64>,
    pub nc2: Option<f64>,
    pub nc3: Option<f64>,
    pub final_loss: LossValues,
}

pub const REPORT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub version: u32,
    pub seed: u64,
    pub flags: AblationFlags,
    pub config: EngineConfig,
    pub stages: Vec<StageReport>,
    pub average_accuracy: f64,
}

/// `(1/T) Σ A_t`; zero for an empty list.
pub fn average_accuracy(accuracies: &[f64]) -> f64 {
    if accuracies.is_empty() {
        return 0.0;
    }
    accuracies.iter().sum::<f64>() / accuracies.len() as f64
}

impl EvalReport {
    pub fn accuracies(&self) -> Vec<f64> {
        self.stages.iter().map(|s| s.a_t).collect()
    }

    pub fn last_stage(&self) -> Option<&StageReport> {
        self.stages.last()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report is always serializable");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(format!("report: {e}")))
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "task",
            "K_t",
            "A_t",
            "old_class_accuracy",
            "nc1",
            "nc2",
            "nc3",
        ])
        .expect("in-memory write");
        for s in &self.stages {
            w.write_record([
                s.task.to_string(),
                s.k_t.to_string(),
                s.a_t.to_string(),
                opt(s.old_class_accuracy),
                opt(s.nc1),
                opt(s.nc2),
                opt(s.nc3),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii output")
    }
}

/// Progress events emitted during a run.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum RunEvent<'a> {
    Epoch {
        task: usize,
        #[serde(flatten)]
        log: &'a EpochLog,
    },
    Stage(&'a StageReport),
}

/// Classifier for each stage of a dynamic run. Expansions below two anchors
/// are deferred because a simplex needs at least two vertices.
fn classifier_chain(
    dim: usize,
    sizes: &[usize],
    seed: u64,
    regenerate: bool,
) -> Result<Vec<EtfClassifier>> {
    let mut chain: Vec<EtfClassifier> = Vec::with_capacity(sizes.len());
    for &k in sizes {
        let k = k.max(2);
        let next = match chain.last() {
            None => EtfClassifier::new(dim, k, seed)?,
            Some(prev) if prev.num_classes() == k => prev.clone(),
            Some(prev) if regenerate => prev.regenerate(k)?,
            Some(prev) => prev.expand(k)?,
        };
        chain.push(next);
    }
    Ok(chain)
}

pub fn run_stream(
    stream: &TaskStream,
    cfg: &EngineConfig,
    flags: AblationFlags,
    seed: u64,
) -> Result<EvalReport> {
    run_stream_logged(stream, cfg, flags, seed, |_| {})
}

/// Runs the stream, calling `on_event` after every epoch and every stage.
pub fn run_stream_logged(
    stream: &TaskStream,
    cfg: &EngineConfig,
    flags: AblationFlags,
    seed: u64,
    mut on_event: impl FnMut(RunEvent<'_>),
) -> Result<EvalReport> {
    cfg.train.validate()?;
    let d = stream.dim();
    let total = stream.total_classes();
    if total > d {
        return Err(Error::Config(format!(
            "stream has {total} classes but features have only {d} dimensions"
        )));
    }
    let hidden = cfg.hidden.unwrap_or(d);
    if hidden == 0 {
        return Err(Error::Config("hidden width must be positive".into()));
    }

    let chain = classifier_chain(
        d,
        &stream.cumulative_classes(),
        derive_seed(seed, 1),
        cfg.regenerate_basis,
    )?;
    let mut pool = ClassMeanPool::new(d);
    let mut latest_test: BTreeMap<ClassId, Vec<Vector>> = BTreeMap::new();
    let mut layer: Option<AlignmentLayer> = None;
    let mut stages = Vec::with_capacity(stream.tasks().len());

    for (t, task) in stream.tasks().iter().enumerate() {
        let task_no = t + 1;
        let new_classes = pool.ingest_task(task_no as u32, &task.train)?;
        let classifier = if flags.dynamic_etf {
            &chain[t]
        } else {
            chain.last().expect("non-empty stream")
        };

        let fresh = || match cfg.layer_init {
            LayerInit::Random => {
                AlignmentLayer::init(d, hidden, derive_seed(seed, 1000 + task_no as u64))
            }
            LayerInit::Identity => AlignmentLayer::identity(d, hidden),
        };
        let start = match layer.take() {
            Some(prev) if !flags.init_align => prev,
            _ => fresh(),
        };

        let labels = pool.classes().to_vec();
        let index: BTreeMap<ClassId, usize> =
            labels.iter().enumerate().map(|(i, c)| (*c, i)).collect();
        let samples: Vec<(Vector, usize)> = task
            .train
            .samples()
            .iter()
            .map(|(c, x)| (x.clone(), index[c]))
            .collect();
        let pooled: Vec<(usize, Vector)> = pool
            .iter()
            .enumerate()
            .map(|(i, (_, e))| (i, e.mean.clone()))
            .collect();
        let train_cfg = TrainConfig {
            seed: derive_seed(seed, 2000 + task_no as u64),
            ..cfg.train.clone()
        };
        let outcome = train_alignment(
            start,
            TrainingData {
                samples: &samples,
                pool: &pooled,
            },
            classifier,
            &train_cfg,
            LossOptions {
                pap: flags.pap_loss,
                ce_on_pool: cfg.ce_on_pool,
            },
        )?;
        for log in &outcome.log {
            on_event(RunEvent::Epoch { task: task_no, log });
        }
        let final_loss = outcome.final_loss();
        let trained = outcome.layer;

        // Newer test snapshots replace older samples of the same class.
        let mut by_class: BTreeMap<ClassId, Vec<Vector>> = BTreeMap::new();
        for (c, x) in task.test.samples() {
            by_class.entry(*c).or_default().push(x.clone());
        }
        latest_test.extend(by_class);

        let scoring_layer = cfg.align_test.then_some(&trained);
        let new_set: BTreeSet<ClassId> = new_classes.iter().copied().collect();
        let (mut hits, mut n) = (0usize, 0usize);
        let (mut old_hits, mut old_n, mut new_hits, mut new_n) = (0usize, 0usize, 0usize, 0usize);
        let mut aligned_test = Vec::new();
        for (class, xs) in &latest_test {
            for x in xs {
                let p = predict(x, classifier, scoring_layer, &labels)?;
                let ok = usize::from(p.class == *class);
                hits += ok;
                n += 1;
                if new_set.contains(class) {
                    new_hits += ok;
                    new_n += 1;
                } else {
                    old_hits += ok;
                    old_n += 1;
                }
                aligned_test.push((*class, trained.apply(x)?));
            }
        }
        let ratio = |h: usize, n: usize| (n > 0).then(|| h as f64 / n as f64);

        let (nc1_v, nc2_v, nc3_v) =
            stage_nc(&pool, &trained, classifier, aligned_test, cfg.pinv_tol)?;
        let stage = StageReport {
            task: task_no,
            k_t: labels.len(),
            a_t: ratio(hits, n).unwrap_or(0.0),
            old_class_accuracy: ratio(old_hits, old_n),
            new_class_accuracy: ratio(new_hits, new_n),
            test_samples: n,
            nc1: nc1_v,
            nc2: nc2_v,
            nc3: nc3_v,
            final_loss,
        };
        on_event(RunEvent::Stage(&stage));
        stages.push(stage);
        layer = Some(trained);
    }

    let average = average_accuracy(&stages.iter().map(|s| s.a_t).collect::<Vec<_>>());
    // Per-task training seeds derive from the run seed; echo that.
    let mut config = cfg.clone();
    config.train.seed = seed;
    Ok(EvalReport {
        version: REPORT_VERSION,
        seed,
        flags,
        config,
        stages,
        average_accuracy: average,
    })
}

/// NC2/NC3 of the aligned pooled means against their anchors, NC1 of the
/// aligned test features. Undefined metrics are reported as `None`.
fn stage_nc(
    pool: &ClassMeanPool,
    layer: &AlignmentLayer,
    classifier: &EtfClassifier,
    aligned_test: Vec<(ClassId, Vector)>,
    pinv_tol: f64,
) -> Result<(Option<f64>, Option<f64>, Option<f64>)> {
    let k = pool.len();
    if k < 2 {
        return Ok((None, None, None));
    }
    let columns = pool
        .iter()
        .map(|(_, e)| layer.apply(&e.mean))
        .collect::<Result<Vec<_>>>()?;
    let h = Matrix::from_columns(pool.dim(), &columns)?;
    let g = Vector::mean_of(&columns).expect("pool is not empty");
    let anchors = classifier.anchors().leading_columns(k);
    let defined = |r: Result<f64>| match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::DegenerateGeometry(_)) => Ok(None),
        Err(e) => Err(e),
    };
    let nc2_v = defined(nc2(&h, &g))?;
    let nc3_v = defined(nc3(&h, &g, &anchors))?;
    let snap = FeatureSnapshot::new(pool.dim(), aligned_test)?;
    let nc1_v = if snap.num_classes() >= 2 {
        defined(nc1(&snap, pinv_tol))?
    } else {
        None
    };
    Ok((nc1_v, nc2_v, nc3_v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Rng;

    fn snapshot(samples: &[(ClassId, &[f64])]) -> FeatureSnapshot {
        let dim = samples[0].1.len();
        FeatureSnapshot::new(
            dim,
            samples
                .iter()
                .map(|(c, x)| (*c, Vector::from(*x)))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn pool_ingests_means_and_rejects_duplicates() {
        let mut pool = ClassMeanPool::new(2);
        let first = snapshot(&[
            (0, &[1.0, 0.0]),
            (1, &[0.0, 1.0]),
            (2, &[1.0, 1.0]),
            (3, &[2.0, 2.0]),
            (4, &[0.0, 3.0]),
        ]);
        pool.ingest_task(1, &first).unwrap();
        let second = snapshot(&[(5, &[1.0, 0.0]), (5, &[3.0, 0.0]), (6, &[0.0, 1.0])]);
        assert_eq!(pool.ingest_task(2, &second).unwrap(), vec![5, 6]);
        assert_eq!(pool.classes(), &[0, 1, 2, 3, 4, 5, 6]);
        assert_eq!(pool.get(5).unwrap().mean.as_slice(), &[2.0, 0.0]);
        assert_eq!(pool.get(5).unwrap().sample_count, 2);
        let again = snapshot(&[(5, &[0.0, 0.0])]);
        assert!(matches!(
            pool.ingest_task(3, &again),
            Err(Error::DuplicateClass(5))
        ));
        assert_eq!(pool.len(), 7);
    }

    #[test]
    fn declared_class_without_samples_is_empty() {
        let mut pool = ClassMeanPool::new(1);
        let snap = FeatureSnapshot::with_classes(
            1,
            [0, 1].into_iter().collect(),
            vec![(0, Vector::from(vec![1.0]))],
        )
        .unwrap();
        assert!(matches!(
            pool.ingest_task(1, &snap),
            Err(Error::EmptyClass(1))
        ));
    }

    #[test]
    fn pool_round_trip_and_corruption() {
        let mut rng = Rng::new(4);
        let mut pool = ClassMeanPool::new(5);
        let samples = (0..10u32)
            .flat_map(|c| (0..3).map(move |_| c))
            .map(|c| (c, rng.normal_vector(5)))
            .collect();
        pool.ingest_task(1, &FeatureSnapshot::new(5, samples).unwrap())
            .unwrap();
        let bytes = pool.to_bytes();
        let back = ClassMeanPool::from_bytes(&bytes).unwrap();
        assert_eq!(back, pool);
        for (c, e) in pool.iter() {
            let b = back.get(c).unwrap();
            for (x, y) in e.mean.iter().zip(b.mean.iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        assert!(matches!(
            ClassMeanPool::from_bytes(&bytes[..bytes.len() - 1]),
            Err(Error::Format(_))
        ));
        let mut bad = bytes.clone();
        bad[4] = 9;
        match ClassMeanPool::from_bytes(&bad) {
            Err(Error::Format(m)) => assert!(m.contains('9'), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn predict_examples() {
        let clf = EtfClassifier::new(6, 5, 2).unwrap();
        let labels: Vec<ClassId> = (0..5).collect();
        let p = predict(&clf.anchor(3), &clf, None, &labels).unwrap();
        assert_eq!(p.class, 3);
        assert!((p.scores[3] - 1.0).abs() < 1e-12);

        let two = EtfClassifier::new(3, 2, 8).unwrap();
        let neg = two.anchor(0).scaled(-1.0);
        assert_eq!(predict(&neg, &two, None, &[0, 1]).unwrap().class, 1);

        // The sum of all anchors is zero, so use a vector orthogonal to every anchor.
        let mut rng = Rng::new(1);
        let u = clf.basis();
        let mut x = rng.normal_vector(6);
        for j in 0..u.cols() {
            let col = u.column(j);
            let a = col.dot(&x);
            x.axpy(-a, &col);
        }
        let p = predict(&x, &clf, None, &labels).unwrap();
        assert_eq!(p.class, 0);

        assert!(matches!(
            predict(&[0.0; 6], &clf, None, &labels),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn tie_break_uses_class_id_not_anchor_index() {
        let clf = EtfClassifier::new(4, 2, 0).unwrap();
        let mut rng = Rng::new(2);
        let mut x = rng.normal_vector(4);
        for j in 0..2 {
            let col = clf.basis().column(j);
            let a = col.dot(&x);
            x.axpy(-a, &col);
        }
        assert_eq!(predict(&x, &clf, None, &[9, 4]).unwrap().class, 4);
    }

    #[test]
    fn average_of_handcrafted_lists() {
        assert!((average_accuracy(&[0.9, 0.8]) - 0.85).abs() < 1e-12);
        assert_eq!(average_accuracy(&[1.0]), 1.0);
        assert_eq!(average_accuracy(&[]), 0.0);
    }

    #[test]
    fn overlapping_stream_is_rejected() {
        let a = snapshot(&[(0, &[1.0]), (1, &[2.0])]);
        let b = snapshot(&[(1, &[1.0])]);
        let tasks = vec![
            Task {
                classes: vec![0, 1],
                train: a.clone(),
                test: a,
            },
            Task {
                classes: vec![1],
                train: b.clone(),
                test: b,
            },
        ];
        assert!(matches!(TaskStream::new(1, tasks), Err(Error::Overlap(v)) if v == vec![1]));
    }

    #[test]
    fn unseen_test_class_is_rejected() {
        let a = snapshot(&[(0, &[1.0]), (1, &[2.0])]);
        let t = snapshot(&[(0, &[1.0]), (2, &[2.0])]);
        let tasks = vec![Task {
            classes: vec![0, 1],
            train: a,
            test: t,
        }];
        assert!(matches!(TaskStream::new(1, tasks), Err(Error::Config(_))));
    }

    #[test]
    fn chain_defers_single_class_tasks() {
        let chain = classifier_chain(8, &[1, 3, 4], 5, false).unwrap();
        let sizes: Vec<_> = chain.iter().map(|c| c.num_classes()).collect();
        assert_eq!(sizes, vec![2, 3, 4]);
        assert_eq!(chain[2].basis().leading_columns(2), *chain[0].basis());
    }
}
