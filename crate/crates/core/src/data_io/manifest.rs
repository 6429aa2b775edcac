//! Task-split manifests.
//!
//! A manifest is a TOML file:
//!
//! ```toml
//! dim = 32
//! total_classes = 6          # optional, checked against the task lists
//!
//! [[tasks]]
//! classes = [0, 1, 2]
//! train = "task1_train.emb"  # relative to the manifest's directory
//! test = "task1_test.emb"
//!
//! [config]                   # optional engine overrides
//! epochs = 20
//! temperature = 16.0
//! ```
//!
//! Class lists must be pairwise disjoint.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::emb::read_any;
use crate::engine::{AblationFlags, EngineConfig, Task, TaskStream};
use crate::error::{at_path, Error, Result};
use crate::ncmetrics::FeatureSnapshot;
use crate::ClassId;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskEntry {
    pub classes: Vec<ClassId>,
    pub train: PathBuf,
    pub test: PathBuf,
}

/// Optional engine settings embedded in a manifest. Unset fields fall back
/// to the built-in defaults; command-line flags override both.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub momentum: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight_decay: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub align_test: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ce_on_pool: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub regenerate_basis: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pinv_tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dynamic_etf: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub init_align: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pap_loss: Option<bool>,
}

impl ManifestConfig {
    pub fn is_empty(&self) -> bool {
        *self == ManifestConfig::default()
    }

    /// Applies the set fields on top of `cfg` and `flags`.
    pub fn apply(&self, cfg: &mut EngineConfig, flags: &mut AblationFlags) {
        let t = &mut cfg.train;
        if let Some(v) = self.epochs {
            t.epochs = v;
        }
        if let Some(v) = self.lr0 {
            t.lr0 = v;
        }
        if let Some(v) = self.lr_min {
            t.lr_min = v;
        }
        if let Some(v) = self.momentum {
            t.momentum = v;
        }
        if let Some(v) = self.weight_decay {
            t.weight_decay = v;
        }
        if let Some(v) = self.batch_size {
            t.batch_size = v;
        }
        if let Some(v) = self.temperature {
            t.temperature = v;
        }
        if let Some(v) = self.hidden {
            cfg.hidden = Some(v);
        }
        if let Some(v) = self.align_test {
            cfg.align_test = v;
        }
        if let Some(v) = self.ce_on_pool {
            cfg.ce_on_pool = v;
        }
        if let Some(v) = self.regenerate_basis {
            cfg.regenerate_basis = v;
        }
        if let Some(v) = self.pinv_tol {
            cfg.pinv_tol = v;
        }
        if let Some(v) = self.dynamic_etf {
            flags.dynamic_etf = v;
        }
        if let Some(v) = self.init_align {
            flags.init_align = v;
        }
        if let Some(v) = self.pap_loss {
            flags.pap_loss = v;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFile {
    dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    total_classes: Option<usize>,
    tasks: Vec<TaskEntry>,
    #[serde(default, skip_serializing_if = "ManifestConfig::is_empty")]
    config: ManifestConfig,
}

/// A parsed, validated manifest.
#[derive(Clone, Debug, PartialEq)]
pub struct StreamManifest {
    pub dim: usize,
    pub tasks: Vec<TaskEntry>,
    pub config: ManifestConfig,
    /// Directory that relative file paths are resolved against.
    pub base_dir: PathBuf,
}

/// Class ids that occur in more than one class list.
pub fn overlapping_classes<'a>(lists: impl IntoIterator<Item = &'a [ClassId]>) -> Vec<ClassId> {
    let mut seen: BTreeMap<ClassId, usize> = BTreeMap::new();
    for list in lists {
        let unique: BTreeSet<ClassId> = list.iter().copied().collect();
        for c in unique {
            *seen.entry(c).or_default() += 1;
        }
    }
    seen.into_iter()
        .filter(|(_, n)| *n > 1)
        .map(|(c, _)| c)
        .collect()
}

impl StreamManifest {
    pub fn new(dim: usize, tasks: Vec<TaskEntry>, base_dir: PathBuf) -> Result<Self> {
        let m = StreamManifest {
            dim,
            tasks,
            config: ManifestConfig::default(),
            base_dir,
        };
        m.validate(None)?;
        Ok(m)
    }

    fn validate(&self, total: Option<usize>) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Format("manifest dim must be positive".into()));
        }
        if self.tasks.is_empty() {
            return Err(Error::Format("manifest has no tasks".into()));
        }
        for (i, t) in self.tasks.iter().enumerate() {
            if t.classes.is_empty() {
                return Err(Error::Format(format!("task {} has no classes", i + 1)));
            }
            let unique: BTreeSet<_> = t.classes.iter().collect();
            if unique.len() != t.classes.len() {
                return Err(Error::Format(format!(
                    "task {} lists a class more than once",
                    i + 1
                )));
            }
        }
        let overlap = overlapping_classes(self.tasks.iter().map(|t| t.classes.as_slice()));
        if !overlap.is_empty() {
            return Err(Error::Overlap(overlap));
        }
        if let Some(total) = total {
            if total != self.total_classes() {
                return Err(Error::Format(format!(
                    "total_classes = {total} but the task lists hold {} classes",
                    self.total_classes()
                )));
            }
        }
        Ok(())
    }

    pub fn total_classes(&self) -> usize {
        self.tasks.iter().map(|t| t.classes.len()).sum()
    }

    pub fn parse(text: &str, base_dir: PathBuf) -> Result<Self> {
        let file: ManifestFile =
            toml::from_str(text).map_err(|e| Error::Format(format!("manifest: {e}")))?;
        let m = StreamManifest {
            dim: file.dim,
            tasks: file.tasks,
            config: file.config,
            base_dir,
        };
        m.validate(file.total_classes)?;
        Ok(m)
    }

    pub fn to_toml(&self) -> String {
        let file = ManifestFile {
            dim: self.dim,
            total_classes: Some(self.total_classes()),
            tasks: self.tasks.clone(),
            config: self.config.clone(),
        };
        toml::to_string(&file).expect("manifest is always serializable")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml())?;
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Reads every referenced embedding file and builds the task stream.
    pub fn load_stream(&self) -> Result<TaskStream> {
        let mut tasks = Vec::with_capacity(self.tasks.len());
        for entry in &self.tasks {
            let train = read_any(&self.resolve(&entry.train))?;
            let test = read_any(&self.resolve(&entry.test))?;
            for (name, f) in [("train", &train), ("test", &test)] {
                if f.dim != self.dim && !f.records.is_empty() {
                    return Err(Error::Dimension(format!(
                        "{name} file of task with classes {:?} has dimension {}, manifest says {}",
                        entry.classes, f.dim, self.dim
                    )));
                }
            }
            let declared: BTreeSet<ClassId> = entry.classes.iter().copied().collect();
            let train = FeatureSnapshot::with_classes(self.dim, declared, train.records)?;
            let test = FeatureSnapshot::new(self.dim, test.records)?;
            tasks.push(Task {
                classes: entry.classes.clone(),
                train,
                test,
            });
        }
        TaskStream::new(self.dim, tasks)
    }
}

pub fn load_manifest(path: &Path) -> Result<StreamManifest> {
    let text = fs::read_to_string(path).map_err(at_path(path))?;
    let base = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    StreamManifest::parse(&text, base)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_io::write_embeddings;
    use crate::linalg::Vector;

    #[test]
    fn shared_class_is_reported() {
        let text = r#"
dim = 4
[[tasks]]
classes = [1, 7]
train = "a.emb"
test = "b.emb"
[[tasks]]
classes = [7, 9]
train = "c.emb"
test = "d.emb"
"#;
        match StreamManifest::parse(text, ".".into()) {
            Err(Error::Overlap(ids)) => assert_eq!(ids, vec![7]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_train_path_is_format_error() {
        let text = r#"
dim = 4
[[tasks]]
classes = [1]
test = "b.emb"
"#;
        assert!(matches!(
            StreamManifest::parse(text, ".".into()),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn unknown_keys_and_bad_totals_rejected() {
        let text = "dim = 4\nbogus = 1\n[[tasks]]\nclasses=[0]\ntrain='a'\ntest='b'\n";
        assert!(matches!(
            StreamManifest::parse(text, ".".into()),
            Err(Error::Format(_))
        ));
        let text = "dim = 4\ntotal_classes = 3\n[[tasks]]\nclasses=[0]\ntrain='a'\ntest='b'\n";
        assert!(matches!(
            StreamManifest::parse(text, ".".into()),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn valid_manifest_loads_stream() {
        let dir = tempfile::tempdir().unwrap();
        let v = |x: f64| Vector::from(vec![x, 1.0]);
        write_embeddings(&dir.path().join("t1.emb"), 2, &[(0, v(0.0)), (1, v(1.0))]).unwrap();
        write_embeddings(&dir.path().join("e1.emb"), 2, &[(0, v(0.0)), (1, v(1.0))]).unwrap();
        write_embeddings(&dir.path().join("t2.emb"), 2, &[(2, v(2.0))]).unwrap();
        write_embeddings(&dir.path().join("e2.emb"), 2, &[(2, v(2.0)), (0, v(0.5))]).unwrap();
        let text = r#"
dim = 2
[[tasks]]
classes = [0, 1]
train = "t1.emb"
test = "e1.emb"
[[tasks]]
classes = [2]
train = "t2.emb"
test = "e2.emb"
[config]
epochs = 3
no_such_key_here = 1
"#;
        // Unknown keys inside [config] are rejected too.
        assert!(StreamManifest::parse(text, dir.path().into()).is_err());
        let text = text.replace("no_such_key_here = 1\n", "");
        let path = dir.path().join("m.toml");
        std::fs::write(&path, text).unwrap();
        let m = load_manifest(&path).unwrap();
        assert_eq!(m.config.epochs, Some(3));
        let stream = m.load_stream().unwrap();
        assert_eq!(stream.tasks().len(), 2);
        assert_eq!(stream.total_classes(), 3);

        let reparsed = StreamManifest::parse(&m.to_toml(), m.base_dir.clone()).unwrap();
        assert_eq!(reparsed, m);
    }

    #[test]
    fn every_constructed_overlap_is_rejected() {
        for shared in 0..5u32 {
            let a: Vec<ClassId> = (0..5).collect();
            let b: Vec<ClassId> = vec![10, shared, 11];
            assert_eq!(
                overlapping_classes([a.as_slice(), b.as_slice()]),
                vec![shared]
            );
        }
    }
}
