//! Labeled datasets, the residual classifier, training and evaluation.

pub mod checkpoint;
mod dataset;
mod metrics;
mod net;
mod train;

use serde::{Deserialize, Serialize};

pub use dataset::{
    build_dataset, build_multitask, phase_names, split_dataset, Dataset, DatasetConfig, DatasetSplit, LabeledExample,
    SceneMeta, Standardizer,
};
pub use metrics::{evaluate, Metrics};
pub use net::{argmax, softmax, Arch, ConvNetModel, Grads, Param};
pub use train::{grad_check, mean_loss, train, EpochLog, GradCheckReport, TrainConfig, TrainLog, GRAD_CHECK_SAMPLES};

/// Which classifier a dataset or model serves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    /// 15-way app identification from concatenated multi-band spectra.
    AppId,
    /// 4-way activity recognition from spectrograms.
    Activity,
}

impl Task {
    pub const ALL: [Task; 2] = [Task::AppId, Task::Activity];

    pub fn name(self) -> &'static str {
        match self {
            Task::AppId => "app-id",
            Task::Activity => "activity",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "app-id" | "appid" | "app" => Some(Task::AppId),
            "activity" => Some(Task::Activity),
            _ => None,
        }
    }
}
