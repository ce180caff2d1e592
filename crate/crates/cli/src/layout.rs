//! Artifact locations inside a run directory.

use std::path::{Path, PathBuf};

use emspy_core::learn::Task;

use crate::sweep::SweepKind;

#[derive(Debug, Clone)]
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn plan(&self) -> PathBuf {
        self.root.join("plan.json")
    }

    pub fn synth_dir(&self) -> PathBuf {
        self.root.join("synth")
    }

    pub fn process_dir(&self) -> PathBuf {
        self.root.join("process")
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.root.join("dataset")
    }

    fn task_dir(&self, stage: &str, task: Task) -> PathBuf {
        self.root.join(stage).join(task.name())
    }

    pub fn checkpoint(&self, task: Task) -> PathBuf {
        self.task_dir("train", task).join("model.ckpt")
    }

    pub fn scaler(&self, task: Task) -> PathBuf {
        self.task_dir("train", task).join("scaler.json")
    }

    pub fn train_log(&self, task: Task) -> PathBuf {
        self.task_dir("train", task).join("log.json")
    }

    pub fn metrics(&self, task: Task) -> PathBuf {
        self.task_dir("eval", task).join("metrics.json")
    }

    pub fn confusion(&self, task: Task) -> PathBuf {
        self.task_dir("eval", task).join("confusion.csv")
    }

    pub fn sweep(&self, kind: SweepKind) -> PathBuf {
        self.root.join("sweeps").join(format!("{}.csv", kind.name()))
    }

    pub fn report_json(&self) -> PathBuf {
        self.root.join("report.json")
    }

    pub fn report_csv(&self) -> PathBuf {
        self.root.join("report.csv")
    }

    /// Path relative to the run directory, `/`-separated, for messages and
    /// path-free reports.
    pub fn relative(&self, p: &Path) -> String {
        let rel = p.strip_prefix(&self.root).unwrap_or(p);
        rel.components()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .collect::<Vec<_>>()
            .join("/")
    }
}
