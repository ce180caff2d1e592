//! Sweep studies: accuracy over band count and obfuscation power, mean USNR
//! over capture duration, distance and orientation.

use emspy_core::learn::{evaluate, Task};
use emspy_core::rng::derive_seed;
use emspy_core::{ActivityPhase, PipelineConfig, SceneConfig};
use serde::{Deserialize, Serialize};

use crate::analysis::{mean_std, scene_usnr};
use crate::error::{HarnessError, Result};
use crate::fsutil::{csv_string, write_atomic};
use crate::layout::Layout;
use crate::plan::{Db, ExperimentPlan};
use crate::run::{self, fit_split, score_test};
use crate::store;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SweepKind {
    Bands,
    Duration,
    Distance,
    Orientation,
    Obfuscation,
}

impl SweepKind {
    pub const ALL: [SweepKind; 5] = [
        SweepKind::Bands,
        SweepKind::Duration,
        SweepKind::Distance,
        SweepKind::Orientation,
        SweepKind::Obfuscation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SweepKind::Bands => "bands",
            SweepKind::Duration => "duration",
            SweepKind::Distance => "distance",
            SweepKind::Orientation => "orientation",
            SweepKind::Obfuscation => "obfuscation",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| HarnessError::Unknown {
            what: "sweep kind",
            value: s.to_string(),
            expected: Self::ALL.map(|k| k.name()).join(", "),
        })
    }

    /// Name of the independent variable column.
    pub fn variable(self) -> &'static str {
        match self {
            SweepKind::Bands => "bands",
            SweepKind::Duration => "duration_s",
            SweepKind::Distance => "distance_m",
            SweepKind::Orientation => "orientation_deg",
            SweepKind::Obfuscation => "obfuscation_power_db",
        }
    }

    fn is_accuracy(self) -> bool {
        matches!(self, SweepKind::Bands | SweepKind::Obfuscation)
    }
}

/// One row of a sweep curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: Db,
    pub task: Option<Task>,
    pub accuracy: Option<f64>,
    pub mean_usnr_db: Option<f64>,
    pub std_usnr_db: Option<f64>,
    pub trials: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub kind: SweepKind,
    pub plan_hash: String,
    pub seed: u64,
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    pub fn header(&self) -> Vec<&'static str> {
        let mut h = vec![self.kind.variable()];
        if self.kind.is_accuracy() {
            h.extend(["task", "accuracy", "test_examples"]);
        } else {
            h.extend(["mean_usnr_db", "std_usnr_db", "trials"]);
        }
        h.extend(["seed", "plan_hash"]);
        h
    }

    pub fn rows(&self) -> Vec<Vec<String>> {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        self.points
            .iter()
            .map(|p| {
                let mut r = vec![p.value.to_string()];
                if self.kind.is_accuracy() {
                    r.push(p.task.map(|t| t.name().to_string()).unwrap_or_default());
                    r.push(opt(p.accuracy));
                } else {
                    r.push(opt(p.mean_usnr_db));
                    r.push(opt(p.std_usnr_db));
                }
                r.push(p.trials.to_string());
                r.push(self.seed.to_string());
                r.push(self.plan_hash.clone());
                r
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        csv_string(&self.header(), &self.rows())
    }
}

/// Common-random-number USNR trials: trial `r` uses the same capture seed at
/// every sweep point.
fn usnr_curve(
    plan: &ExperimentPlan,
    values: &[f64],
    apply: impl Fn(&mut SceneConfig, &mut PipelineConfig, f64),
) -> Result<Vec<SweepPoint>> {
    let app = plan.app_ids()?.into_iter().next().expect("validated grid");
    let mut out = Vec::new();
    for &v in values {
        let mut samples = Vec::new();
        for r in 0..plan.sweeps.usnr_seeds {
            let mut scene = plan.scene(&app, ActivityPhase::Running, plan.channel.distance_m, plan.channel.orientation_deg, 0)?;
            scene.seed = derive_seed(plan.seed, "usnr", r);
            let mut pipeline = plan.pipeline.clone();
            apply(&mut scene, &mut pipeline, v);
            samples.push(scene_usnr(&scene, &pipeline)?);
        }
        let (mean, std) = mean_std(&samples);
        out.push(SweepPoint {
            value: Db(v),
            task: None,
            accuracy: None,
            mean_usnr_db: Some(mean),
            std_usnr_db: Some(std),
            trials: samples.len() as u64,
        });
    }
    Ok(out)
}

fn bands_curve(plan: &ExperimentPlan, layout: &Layout) -> Result<Vec<SweepPoint>> {
    let (manifest, _) = run::dataset(plan, layout)?;
    let (_, stored) = store::load(&layout.dataset_dir(), None)?;
    let total = plan.capture.bands_hz.len();
    let mut out = Vec::new();
    for &n in &plan.sweeps.bands {
        for st in &stored {
            let sliced = store::StoredTask {
                dataset: st.dataset.with_bands(n, total)?,
                parts: st.parts.clone(),
            };
            let mut split = sliced.split(manifest.split_ratios, manifest.split_seed);
            let task = st.dataset.task;
            let (model, _, _, _, _) = fit_split(plan, task, &st.dataset.class_names, &mut split, n as u64)?;
            let m = evaluate(&model, &split.test)?;
            out.push(SweepPoint {
                value: Db(n as f64),
                task: Some(task),
                accuracy: Some(m.accuracy),
                mean_usnr_db: None,
                std_usnr_db: None,
                trials: m.total,
            });
        }
    }
    Ok(out)
}

fn obfuscation_curve(plan: &ExperimentPlan, layout: &Layout) -> Result<Vec<SweepPoint>> {
    run::train(plan, layout)?;
    let mut out = Vec::new();
    for p in &plan.sweeps.obfuscation_power_db {
        for rec in score_test(plan, layout, p.0)? {
            out.push(SweepPoint {
                value: *p,
                task: Some(rec.task),
                accuracy: Some(rec.metrics.accuracy),
                mean_usnr_db: None,
                std_usnr_db: None,
                trials: rec.metrics.total,
            });
        }
    }
    Ok(out)
}

/// Run one sweep and write `sweeps/<kind>.csv`.
pub fn sweep(plan: &ExperimentPlan, layout: &Layout, kind: SweepKind) -> Result<SweepResult> {
    run::write_plan(plan, layout)?;
    let sw = &plan.sweeps;
    let points = match kind {
        SweepKind::Bands => bands_curve(plan, layout)?,
        SweepKind::Obfuscation => obfuscation_curve(plan, layout)?,
        SweepKind::Distance => usnr_curve(plan, &sw.distances_m, |s, _, v| s.channel.distance_m = v)?,
        SweepKind::Orientation => usnr_curve(plan, &sw.orientations_deg, |s, _, v| s.channel.orientation_deg = v)?,
        SweepKind::Duration => usnr_curve(plan, &sw.durations_s, |s, p, v| {
            s.duration = v;
            // average every frame the capture holds
            p.avg_frames = ((v * s.sample_rate).round() as usize / p.fft_size).max(1);
        })?,
    };
    let result = SweepResult {
        kind,
        plan_hash: plan.hash(),
        seed: plan.seed,
        points,
    };
    write_atomic(&layout.sweep(kind), result.to_csv().as_bytes())?;
    Ok(result)
}
