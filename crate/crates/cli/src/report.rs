//! `report`: merge a run's stamped artifacts into `report.json` and
//! `report.csv`. The bundle holds no paths or timestamps, so identical runs
//! give identical bytes.

use std::path::{Path, PathBuf};

use emspy_core::learn::Task;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::fsutil::{csv_string, parse_csv, read_json, write_atomic, write_json};
use crate::layout::Layout;
use crate::plan::ExperimentPlan;
use crate::run::{read_plan, MetricsRecord, ScalerRecord, TrainRecord};
use crate::store::{self, Part};
use crate::sweep::SweepKind;

pub const REPORT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskReport {
    pub task: Task,
    pub class_names: Vec<String>,
    pub test_accuracy: f64,
    pub test_examples: u64,
    pub test_captures: usize,
    pub per_class_recall: Vec<Option<f64>>,
    /// `[true][predicted]` counts.
    pub confusion: Vec<Vec<u64>>,
    pub train_examples: usize,
    pub val_examples: usize,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub checkpoint_sha256: String,
    pub dataset_sha256: String,
    pub skipped_chunks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepReport {
    pub kind: SweepKind,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitReport {
    pub seed: u64,
    pub ratios: [f64; 3],
    /// Capture counts in train, validation and test.
    pub captures: [usize; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportBundle {
    pub format_version: u32,
    pub plan_hash: String,
    pub seed: u64,
    pub plan: ExperimentPlan,
    pub split: SplitReport,
    pub tasks: Vec<TaskReport>,
    pub sweeps: Vec<SweepReport>,
}

impl ReportBundle {
    /// Structural checks beyond the field types.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| {
            Err(HarnessError::Document {
                path: PathBuf::from("report.json"),
                msg,
            })
        };
        if self.format_version != REPORT_FORMAT_VERSION {
            return bad(format!("format_version {} is not supported", self.format_version));
        }
        if self.plan.hash() != self.plan_hash {
            return bad("plan_hash does not match the embedded plan".into());
        }
        if self.tasks.iter().map(|t| t.task).collect::<Vec<_>>() != self.plan.tasks {
            return bad("tasks do not match the plan".into());
        }
        for t in &self.tasks {
            let k = t.class_names.len();
            if t.confusion.len() != k || t.confusion.iter().any(|r| r.len() != k) || t.per_class_recall.len() != k {
                return bad(format!("{}: confusion matrix is not {k}x{k}", t.task.name()));
            }
            if t.confusion.iter().flatten().sum::<u64>() != t.test_examples || !(0.0..=1.0).contains(&t.test_accuracy) {
                return bad(format!("{}: counts and accuracy disagree", t.task.name()));
            }
        }
        for s in &self.sweeps {
            if s.rows.iter().any(|r| r.len() != s.header.len()) {
                return bad(format!("sweep {}: ragged rows", s.kind.name()));
            }
        }
        Ok(())
    }

    /// Long-form `section,task,key,value` view.
    pub fn to_csv(&self) -> String {
        let mut rows: Vec<Vec<String>> = Vec::new();
        let mut push = |section: &str, task: &str, key: String, value: String| {
            rows.push(vec![section.into(), task.into(), key, value]);
        };
        push("run", "", "plan_hash".into(), self.plan_hash.clone());
        push("run", "", "seed".into(), self.seed.to_string());
        for (name, n) in ["train", "val", "test"].iter().zip(self.split.captures) {
            push("split", "", format!("{name}_captures"), n.to_string());
        }
        for t in &self.tasks {
            let task = t.task.name();
            push("metrics", task, "test_accuracy".into(), t.test_accuracy.to_string());
            push("metrics", task, "test_examples".into(), t.test_examples.to_string());
            push("train", task, "best_epoch".into(), t.best_epoch.to_string());
            push("train", task, "best_val_accuracy".into(), t.best_val_accuracy.to_string());
            push("train", task, "epochs_run".into(), t.epochs_run.to_string());
            for (c, r) in t.class_names.iter().zip(&t.per_class_recall) {
                push("recall", task, c.clone(), r.map(|v| v.to_string()).unwrap_or_default());
            }
        }
        for s in &self.sweeps {
            let section = format!("sweep/{}", s.kind.name());
            let task_col = s.header.iter().position(|h| h == "task");
            for r in &s.rows {
                let task = task_col.map(|i| r[i].as_str()).unwrap_or("");
                for (h, v) in s.header.iter().zip(r).skip(1) {
                    if matches!(h.as_str(), "task" | "seed" | "plan_hash") {
                        continue;
                    }
                    push(&section, task, format!("{}={}/{h}", s.header[0], r[0]), v.clone());
                }
            }
        }
        csv_string(&["section", "task", "key", "value"], &rows)
    }
}

fn required(layout: &Layout, tasks: &[Task]) -> Vec<PathBuf> {
    let mut v = vec![layout.plan(), store::manifest_path(&layout.dataset_dir())];
    for &t in tasks {
        let ckpt = layout.checkpoint(t);
        v.push(emspy_core::learn::checkpoint::sidecar_path(&ckpt));
        v.extend([ckpt, layout.scaler(t), layout.train_log(t), layout.metrics(t), layout.confusion(t)]);
    }
    v
}

fn stale(layout: &Layout, path: &Path) -> HarnessError {
    HarnessError::Document {
        path: path.to_path_buf(),
        msg: format!(
            "stamped with a different plan hash than {}; rerun the stage",
            layout.relative(&layout.plan())
        ),
    }
}

/// Collect the bundle without writing it.
pub fn collect(run_dir: &Path) -> Result<ReportBundle> {
    let layout = Layout::new(run_dir);
    let tasks = match read_plan(&layout) {
        Ok(rec) => rec.plan.tasks,
        Err(_) if !layout.plan().exists() => Task::ALL.to_vec(),
        Err(e) => return Err(e),
    };
    let missing: Vec<String> = required(&layout, &tasks)
        .iter()
        .filter(|p| !p.exists())
        .map(|p| layout.relative(p))
        .collect();
    if !missing.is_empty() {
        return Err(HarnessError::MissingArtifacts(missing));
    }
    let rec = read_plan(&layout)?;
    let hash = rec.plan.hash();
    if rec.plan_hash != hash {
        return Err(stale(&layout, &layout.plan()));
    }
    let manifest = store::read_manifest(&layout.dataset_dir())?;
    if manifest.plan_hash != hash {
        return Err(stale(&layout, &store::manifest_path(&layout.dataset_dir())));
    }
    let mut task_reports = Vec::new();
    for &task in &tasks {
        let tr: TrainRecord = read_json(&layout.train_log(task))?;
        let sc: ScalerRecord = read_json(&layout.scaler(task))?;
        let mr: MetricsRecord = read_json(&layout.metrics(task))?;
        for (stamp, path) in [
            (&tr.plan_hash, layout.train_log(task)),
            (&sc.plan_hash, layout.scaler(task)),
            (&mr.plan_hash, layout.metrics(task)),
        ] {
            if *stamp != hash {
                return Err(stale(&layout, &path));
            }
        }
        let ckpt = layout.checkpoint(task);
        let bytes = std::fs::read(&ckpt).map_err(crate::fsutil::io_err(&ckpt))?;
        if crate::fsutil::sha256_hex(&bytes) != tr.checkpoint_sha256 {
            return Err(HarnessError::Document {
                path: ckpt,
                msg: "checkpoint does not match the hash recorded at training time".into(),
            });
        }
        let entry = manifest.tasks.iter().find(|t| t.task == task).ok_or_else(|| HarnessError::Document {
            path: store::manifest_path(&layout.dataset_dir()),
            msg: format!("no {} dataset", task.name()),
        })?;
        let m = &mr.metrics;
        task_reports.push(TaskReport {
            task,
            class_names: mr.class_names.clone(),
            test_accuracy: m.accuracy,
            test_examples: m.total,
            test_captures: mr.test_captures,
            per_class_recall: m.per_class_recall.clone(),
            confusion: m.confusion.clone(),
            train_examples: tr.train_examples,
            val_examples: tr.val_examples,
            epochs_run: tr.log.epochs.len(),
            best_epoch: tr.log.best_epoch,
            best_val_accuracy: tr.log.best_val_accuracy,
            checkpoint_sha256: tr.checkpoint_sha256,
            dataset_sha256: entry.data_sha256.clone(),
            skipped_chunks: entry.skipped_chunks,
        });
    }
    let first = &manifest.tasks[0];
    let count = |p: Part| {
        let mut s: Vec<u64> = first.examples.iter().filter(|e| e.part == p).map(|e| e.meta.seed).collect();
        s.sort_unstable();
        s.dedup();
        s.len()
    };
    let mut sweeps = Vec::new();
    for kind in SweepKind::ALL {
        let path = layout.sweep(kind);
        if !path.exists() {
            continue;
        }
        let text = std::fs::read_to_string(&path).map_err(crate::fsutil::io_err(&path))?;
        let (header, rows) = parse_csv(&text).map_err(|e| HarnessError::Document {
            path: path.clone(),
            msg: e.to_string(),
        })?;
        let hc = header.iter().position(|h| h == "plan_hash");
        if rows.iter().any(|r| hc.map(|i| r[i] != hash).unwrap_or(true)) {
            return Err(stale(&layout, &path));
        }
        sweeps.push(SweepReport { kind, header, rows });
    }
    let bundle = ReportBundle {
        format_version: REPORT_FORMAT_VERSION,
        plan_hash: hash,
        seed: rec.plan.seed,
        split: SplitReport {
            seed: manifest.split_seed,
            ratios: manifest.split_ratios,
            captures: [count(Part::Train), count(Part::Val), count(Part::Test)],
        },
        plan: rec.plan,
        tasks: task_reports,
        sweeps,
    };
    bundle.validate()?;
    Ok(bundle)
}

/// Collect and write `report.json` and `report.csv` into the run directory.
pub fn report(run_dir: &Path) -> Result<ReportBundle> {
    let bundle = collect(run_dir)?;
    let layout = Layout::new(run_dir);
    write_json(&layout.report_json(), &bundle)?;
    write_atomic(&layout.report_csv(), bundle.to_csv().as_bytes())?;
    Ok(bundle)
}
