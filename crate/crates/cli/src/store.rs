//! On-disk dataset store: a JSON manifest plus one little-endian `f32`
//! feature file per task.

use std::fs;
use std::path::{Path, PathBuf};

use emspy_core::learn::{Dataset, DatasetSplit, LabeledExample, SceneMeta, Task};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::fsutil::{io_err, read_json, sha256_hex, write_atomic, write_json};

pub const STORE_FORMAT_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Part {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleEntry {
    pub label: usize,
    pub part: Part,
    pub meta: SceneMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskEntry {
    pub task: Task,
    pub class_names: Vec<String>,
    pub feature_shape: [usize; 2],
    pub skipped_chunks: usize,
    pub data_file: String,
    pub data_sha256: String,
    pub examples: Vec<ExampleEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub plan_hash: String,
    pub seed: u64,
    pub split_seed: u64,
    pub split_ratios: [f64; 3],
    pub tasks: Vec<TaskEntry>,
}

/// A stored task dataset with each example's split membership.
#[derive(Debug, Clone)]
pub struct StoredTask {
    pub dataset: Dataset,
    pub parts: Vec<Part>,
}

impl StoredTask {
    pub fn from_split(dataset: Dataset, split: &DatasetSplit) -> Self {
        let [train, val, _] = split.seeds();
        let parts = dataset
            .examples
            .iter()
            .map(|e| {
                if train.binary_search(&e.meta.seed).is_ok() {
                    Part::Train
                } else if val.binary_search(&e.meta.seed).is_ok() {
                    Part::Val
                } else {
                    Part::Test
                }
            })
            .collect();
        Self { dataset, parts }
    }

    pub fn split(&self, ratios: [f64; 3], seed: u64) -> DatasetSplit {
        let pick = |p: Part| -> Vec<LabeledExample> {
            self.dataset
                .examples
                .iter()
                .zip(&self.parts)
                .filter(|(_, q)| **q == p)
                .map(|(e, _)| e.clone())
                .collect()
        };
        DatasetSplit {
            train: pick(Part::Train),
            val: pick(Part::Val),
            test: pick(Part::Test),
            ratios,
            seed,
        }
    }

    /// Capture seeds of one part, sorted.
    pub fn seeds_of(&self, part: Part) -> Vec<u64> {
        let mut s: Vec<u64> = self
            .dataset
            .examples
            .iter()
            .zip(&self.parts)
            .filter(|(_, q)| **q == part)
            .map(|(e, _)| e.meta.seed)
            .collect();
        s.sort_unstable();
        s.dedup();
        s
    }
}

pub fn data_file_name(task: Task) -> String {
    format!("{}.f32", task.name())
}

fn encode(examples: &[LabeledExample]) -> Vec<u8> {
    let mut out = Vec::with_capacity(examples.iter().map(|e| e.features.len() * 4).sum());
    for e in examples {
        for &v in &e.features {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

/// Features are rounded to `f32` on disk; callers that want the stored
/// values should reload after saving.
pub fn save(dir: &Path, manifest_base: &Manifest, tasks: &[StoredTask]) -> Result<Manifest> {
    let mut manifest = Manifest {
        tasks: Vec::new(),
        ..manifest_base.clone()
    };
    for t in tasks {
        let ds = &t.dataset;
        let shape = ds.feature_shape().ok_or_else(|| HarnessError::Config {
            field: "grid".into(),
            msg: format!("{} dataset is empty", ds.task.name()),
        })?;
        let bytes = encode(&ds.examples);
        let data_file = data_file_name(ds.task);
        write_atomic(&dir.join(&data_file), &bytes)?;
        manifest.tasks.push(TaskEntry {
            task: ds.task,
            class_names: ds.class_names.clone(),
            feature_shape: shape,
            skipped_chunks: ds.skipped_chunks,
            data_file,
            data_sha256: sha256_hex(&bytes),
            examples: ds
                .examples
                .iter()
                .zip(&t.parts)
                .map(|(e, &part)| ExampleEntry {
                    label: e.label,
                    part,
                    meta: e.meta.clone(),
                })
                .collect(),
        });
    }
    // manifest last: its presence marks a complete store
    write_json(&dir.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

pub fn manifest_path(dir: &Path) -> PathBuf {
    dir.join(MANIFEST)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    read_json(&manifest_path(dir))
}

/// Load every task (or only `only`), verifying data hashes and sizes.
pub fn load(dir: &Path, only: Option<Task>) -> Result<(Manifest, Vec<StoredTask>)> {
    let manifest = read_manifest(dir)?;
    if manifest.format_version != STORE_FORMAT_VERSION {
        return Err(HarnessError::Document {
            path: manifest_path(dir),
            msg: format!("format_version {} is not supported", manifest.format_version),
        });
    }
    let mut out = Vec::new();
    for entry in manifest.tasks.iter().filter(|t| only.is_none_or(|o| o == t.task)) {
        let path = dir.join(&entry.data_file);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        let bad = |msg: String| HarnessError::Document { path: path.clone(), msg };
        if sha256_hex(&bytes) != entry.data_sha256 {
            return Err(bad("content does not match data_sha256 in the manifest".into()));
        }
        let [h, w] = entry.feature_shape;
        let per = h * w;
        if bytes.len() != per * 4 * entry.examples.len() {
            return Err(bad(format!(
                "{} bytes, expected {} examples of {h}x{w} f32",
                bytes.len(),
                entry.examples.len()
            )));
        }
        let examples = bytes
            .chunks_exact(per * 4)
            .zip(&entry.examples)
            .map(|(chunk, x)| LabeledExample {
                features: chunk
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
                    .collect(),
                shape: entry.feature_shape,
                label: x.label,
                meta: x.meta.clone(),
            })
            .collect();
        out.push(StoredTask {
            dataset: Dataset {
                task: entry.task,
                class_names: entry.class_names.clone(),
                examples,
                skipped_chunks: entry.skipped_chunks,
            },
            parts: entry.examples.iter().map(|x| x.part).collect(),
        });
    }
    Ok((manifest, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(seed: u64, label: usize, v: f64) -> LabeledExample {
        LabeledExample {
            features: vec![v, v + 0.5],
            shape: [1, 2],
            label,
            meta: SceneMeta::synthetic(seed),
        }
    }

    #[test]
    fn round_trip_and_tamper_detection() {
        let dir = tempfile::tempdir().unwrap();
        let ds = Dataset {
            task: Task::AppId,
            class_names: vec!["a".into(), "b".into()],
            examples: (0..6).map(|i| ex(i, (i % 2) as usize, i as f64)).collect(),
            skipped_chunks: 0,
        };
        let parts = vec![Part::Train, Part::Train, Part::Val, Part::Test, Part::Train, Part::Test];
        let base = Manifest {
            format_version: STORE_FORMAT_VERSION,
            plan_hash: "h".into(),
            seed: 3,
            split_seed: 4,
            split_ratios: [0.5, 0.25, 0.25],
            tasks: vec![],
        };
        save(dir.path(), &base, &[StoredTask { dataset: ds.clone(), parts: parts.clone() }]).unwrap();
        let (m, tasks) = load(dir.path(), None).unwrap();
        assert_eq!(m.plan_hash, "h");
        assert_eq!(tasks[0].dataset, ds);
        assert_eq!(tasks[0].parts, parts);
        let split = tasks[0].split(m.split_ratios, m.split_seed);
        assert_eq!((split.train.len(), split.val.len(), split.test.len()), (3, 1, 2));
        assert_eq!(tasks[0].seeds_of(Part::Test), vec![3, 5]);
        fs::write(dir.path().join("app-id.f32"), [0u8; 48]).unwrap();
        assert!(load(dir.path(), None).unwrap_err().to_string().contains("data_sha256"));
    }
}
