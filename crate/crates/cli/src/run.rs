//! Dataset materialization, training and evaluation over a run directory.
//! Each stage reuses the previous stage's artifacts when they carry the
//! current plan hash and rebuilds them otherwise.

use std::fs;

use emspy_core::learn::{
    build_dataset, build_multitask, checkpoint, evaluate, split_dataset, train as fit, Arch, ConvNetModel, Dataset,
    LabeledExample, Metrics, Standardizer, Task, TrainConfig, TrainLog,
};
use emspy_core::rng::derive_seed;
use emspy_core::ObfuscationSpec;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::fsutil::{csv_string, io_err, read_json, sha256_hex, write_atomic, write_json};
use crate::layout::Layout;
use crate::plan::{Db, ExperimentPlan};
use crate::store::{self, Manifest, Part, StoredTask, STORE_FORMAT_VERSION};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub plan_hash: String,
    pub plan: ExperimentPlan,
}

pub fn write_plan(plan: &ExperimentPlan, layout: &Layout) -> Result<()> {
    write_json(
        &layout.plan(),
        &PlanRecord {
            plan_hash: plan.hash(),
            plan: plan.clone(),
        },
    )
}

pub fn read_plan(layout: &Layout) -> Result<PlanRecord> {
    read_json(&layout.plan())
}

pub fn split_seed(plan: &ExperimentPlan) -> u64 {
    derive_seed(plan.seed, "split", 0)
}

fn task_seed(plan: &ExperimentPlan, what: &str, task: Task, index: u64) -> u64 {
    derive_seed(plan.seed, &format!("{what}/{}", task.name()), index)
}

/// Round features to the `f32` values the store holds.
pub fn quantize(examples: &mut [LabeledExample]) {
    for e in examples {
        e.features.iter_mut().for_each(|v| *v = *v as f32 as f64);
    }
}

fn build(plan: &ExperimentPlan, obf: Option<&ObfuscationSpec>, scenes: &[emspy_core::SceneConfig]) -> Result<Vec<Dataset>> {
    let cfg = plan.dataset_config();
    let mut out = if plan.tasks.len() == 2 {
        let (a, b) = build_multitask(scenes, &plan.pipeline, &cfg, obf)?;
        vec![a, b]
    } else {
        vec![build_dataset(scenes, plan.tasks[0], &plan.pipeline, &cfg, obf)?]
    };
    out.sort_by_key(|d| plan.tasks.iter().position(|&t| t == d.task));
    for d in &mut out {
        quantize(&mut d.examples);
    }
    Ok(out)
}

/// Simulate the grid, split it by capture and write the store. Returns the
/// manifest and whether an up-to-date store was reused.
pub fn dataset(plan: &ExperimentPlan, layout: &Layout) -> Result<(Manifest, bool)> {
    write_plan(plan, layout)?;
    let dir = layout.dataset_dir();
    if let Ok(m) = store::read_manifest(&dir) {
        let tasks: Vec<Task> = m.tasks.iter().map(|t| t.task).collect();
        if m.plan_hash == plan.hash() && tasks == plan.tasks {
            return Ok((m, true));
        }
    }
    let datasets = build(plan, None, &plan.scenes()?)?;
    let split = split_dataset(&datasets[0].examples, plan.dataset.split, split_seed(plan))?;
    let stored: Vec<StoredTask> = datasets.into_iter().map(|d| StoredTask::from_split(d, &split)).collect();
    let base = Manifest {
        format_version: STORE_FORMAT_VERSION,
        plan_hash: plan.hash(),
        seed: plan.seed,
        split_seed: split.seed,
        split_ratios: split.ratios,
        tasks: Vec::new(),
    };
    Ok((store::save(&dir, &base, &stored)?, false))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerRecord {
    pub plan_hash: String,
    pub seed: u64,
    pub task: Task,
    pub scaler: Standardizer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub plan_hash: String,
    pub seed: u64,
    pub task: Task,
    pub init_seed: u64,
    pub shuffle_seed: u64,
    pub train_examples: usize,
    pub val_examples: usize,
    pub checkpoint_sha256: String,
    pub log: TrainLog,
}

/// Standardize a split on its training part, build a fresh model for its
/// shape and fit it.
pub fn fit_split(
    plan: &ExperimentPlan,
    task: Task,
    class_names: &[String],
    split: &mut emspy_core::learn::DatasetSplit,
    salt: u64,
) -> Result<(ConvNetModel, Standardizer, TrainLog, u64, u64)> {
    let scaler = split.standardize()?;
    let shape = split.train.first().map(|e| e.shape).ok_or_else(|| HarnessError::Config {
        field: "dataset.split".into(),
        msg: "training part is empty".into(),
    })?;
    let init_seed = task_seed(plan, "init", task, salt);
    let shuffle_seed = task_seed(plan, "shuffle", task, plan.train.seed ^ salt);
    let model = ConvNetModel::new(task, Arch::for_task(task, shape, class_names.len()), init_seed)?;
    let cfg = TrainConfig {
        seed: shuffle_seed,
        ..plan.train.clone()
    };
    let (model, log) = fit(&model, split, &cfg)?;
    Ok((model, scaler, log, init_seed, shuffle_seed))
}

fn up_to_date(plan: &ExperimentPlan, layout: &Layout, task: Task) -> Option<TrainRecord> {
    let rec: TrainRecord = read_json(&layout.train_log(task)).ok()?;
    let scaler: ScalerRecord = read_json(&layout.scaler(task)).ok()?;
    let bytes = fs::read(layout.checkpoint(task)).ok()?;
    let meta = checkpoint::sidecar_path(&layout.checkpoint(task));
    (rec.plan_hash == plan.hash()
        && scaler.plan_hash == rec.plan_hash
        && sha256_hex(&bytes) == rec.checkpoint_sha256
        && meta.exists())
    .then_some(rec)
}

/// Train every task of the plan from the store (building it if needed).
pub fn train(plan: &ExperimentPlan, layout: &Layout) -> Result<Vec<(TrainRecord, bool)>> {
    let (manifest, _) = dataset(plan, layout)?;
    let mut out = Vec::new();
    for &task in &plan.tasks {
        if let Some(rec) = up_to_date(plan, layout, task) {
            out.push((rec, true));
            continue;
        }
        let (_, mut tasks) = store::load(&layout.dataset_dir(), Some(task))?;
        let st = tasks.pop().expect("task present in an up-to-date store");
        let mut split = st.split(manifest.split_ratios, manifest.split_seed);
        let (model, scaler, log, init_seed, shuffle_seed) =
            fit_split(plan, task, &st.dataset.class_names, &mut split, 0)?;
        let ckpt = layout.checkpoint(task);
        if let Some(dir) = ckpt.parent() {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        checkpoint::save(&model, &st.dataset.class_names, &ckpt)?;
        let bytes = fs::read(&ckpt).map_err(io_err(&ckpt))?;
        write_json(
            &layout.scaler(task),
            &ScalerRecord {
                plan_hash: plan.hash(),
                seed: plan.seed,
                task,
                scaler,
            },
        )?;
        let rec = TrainRecord {
            plan_hash: plan.hash(),
            seed: plan.seed,
            task,
            init_seed,
            shuffle_seed,
            train_examples: split.train.len(),
            val_examples: split.val.len(),
            checkpoint_sha256: sha256_hex(&bytes),
            log,
        };
        write_json(&layout.train_log(task), &rec)?;
        out.push((rec, false));
    }
    Ok(out)
}

/// Trained model and scaler of `task`, checked against the plan hash.
pub fn load_trained(plan: &ExperimentPlan, layout: &Layout, task: Task) -> Result<(ConvNetModel, Standardizer, Vec<String>)> {
    let stale = |what: &str| HarnessError::Document {
        path: layout.train_log(task),
        msg: format!("{what} was produced by a different plan; rerun train"),
    };
    let rec = up_to_date(plan, layout, task).ok_or_else(|| stale("checkpoint"))?;
    let (model, meta) = checkpoint::load(&layout.checkpoint(task))?;
    if meta.task != task {
        return Err(stale("checkpoint task"));
    }
    let scaler: ScalerRecord = read_json(&layout.scaler(task))?;
    if scaler.plan_hash != rec.plan_hash {
        return Err(stale("scaler"));
    }
    Ok((model, scaler.scaler, meta.class_names))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub plan_hash: String,
    pub seed: u64,
    pub task: Task,
    /// Obfuscation power applied to the test captures.
    pub obfuscation_power_db: Db,
    pub class_names: Vec<String>,
    pub test_captures: usize,
    pub metrics: Metrics,
}

/// Long-form confusion matrix stamped with the plan hash and seed.
pub fn confusion_csv(rec: &MetricsRecord) -> String {
    let mut rows = Vec::new();
    for (t, row) in rec.metrics.confusion.iter().enumerate() {
        for (p, n) in row.iter().enumerate() {
            rows.push(vec![
                rec.plan_hash.clone(),
                rec.seed.to_string(),
                rec.class_names[t].clone(),
                rec.class_names[p].clone(),
                n.to_string(),
            ]);
        }
    }
    csv_string(&["plan_hash", "seed", "true_class", "predicted_class", "count"], &rows)
}

/// Score the trained models on the test captures, re-simulated with the
/// plan's obfuscation daemon at `power_db` (`-inf` scores the stored test
/// set unchanged).
pub fn score_test(plan: &ExperimentPlan, layout: &Layout, power_db: f64) -> Result<Vec<MetricsRecord>> {
    let (manifest, stored) = store::load(&layout.dataset_dir(), None)?;
    let mut test_sets: Vec<(Task, Vec<LabeledExample>)> = if power_db == f64::NEG_INFINITY {
        stored
            .iter()
            .map(|st| (st.dataset.task, st.split(manifest.split_ratios, manifest.split_seed).test))
            .collect()
    } else {
        let seeds = stored[0].seeds_of(Part::Test);
        let scenes: Vec<_> = plan
            .scenes()?
            .into_iter()
            .filter(|s| seeds.binary_search(&s.seed).is_ok())
            .collect();
        let obf = plan.obfuscation.with_power(power_db);
        build(plan, Some(&obf), &scenes)?
            .into_iter()
            .map(|d| (d.task, d.examples))
            .collect()
    };
    let mut out = Vec::new();
    for (task, test) in &mut test_sets {
        let (model, scaler, class_names) = load_trained(plan, layout, *task)?;
        scaler.apply_all(test)?;
        let mut captures: Vec<u64> = test.iter().map(|e| e.meta.seed).collect();
        captures.sort_unstable();
        captures.dedup();
        out.push(MetricsRecord {
            plan_hash: plan.hash(),
            seed: plan.seed,
            task: *task,
            obfuscation_power_db: Db(power_db),
            class_names,
            test_captures: captures.len(),
            metrics: evaluate(&model, test)?,
        });
    }
    Ok(out)
}

/// Evaluate on the clean test split and write metrics and confusion files.
pub fn eval(plan: &ExperimentPlan, layout: &Layout) -> Result<Vec<MetricsRecord>> {
    train(plan, layout)?;
    let records = score_test(plan, layout, f64::NEG_INFINITY)?;
    for rec in &records {
        write_json(&layout.metrics(rec.task), rec)?;
        write_atomic(&layout.confusion(rec.task), confusion_csv(rec).as_bytes())?;
    }
    Ok(records)
}
