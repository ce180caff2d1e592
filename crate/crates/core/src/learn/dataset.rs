//! Labeled feature extraction from simulated captures, capture-disjoint
//! splitting and train-only standardization.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Task;
use crate::dsp::{concat_bands, process_band, stft_linear, to_db, PipelineConfig, SpectrumFrame};
use crate::emanation::ActivityPhase;
use crate::error::{invalid, Result};
use crate::rng;
use crate::scene::{capture_pair, ObfuscationSpec, SceneConfig};
use crate::signal::IqRecording;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    /// Samples per example chunk.
    pub chunk_len: usize,
    /// RF tiles captured per scene; features concatenate them in ascending
    /// order.
    pub bands: Vec<f64>,
    /// Spectrogram pooling `[time, freq]`: linear-power mean over time, then
    /// the maximum over frequency within each block.
    pub stft_pool: [usize; 2],
    /// Class order for app identification; empty means order of first
    /// appearance in the scene list.
    #[serde(default)]
    pub app_ids: Vec<String>,
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chunk_len == 0 {
            return invalid("chunk_len must be positive");
        }
        if self.bands.is_empty() {
            return invalid("at least one band is required");
        }
        if self.stft_pool.contains(&0) {
            return invalid("stft_pool entries must be positive");
        }
        Ok(())
    }
}

/// Provenance of one example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneMeta {
    pub seed: u64,
    pub app_id: String,
    pub phase: ActivityPhase,
    pub distance_m: f64,
    pub orientation_deg: f64,
    pub chunk: usize,
}

impl SceneMeta {
    /// Placeholder provenance for hand-built examples.
    pub fn synthetic(seed: u64) -> Self {
        Self {
            seed,
            app_id: String::new(),
            phase: ActivityPhase::Running,
            distance_m: 0.0,
            orientation_deg: 0.0,
            chunk: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    /// Row-major `shape[0] x shape[1]`; feature vectors use `[1, len]`.
    pub features: Vec<f64>,
    pub shape: [usize; 2],
    pub label: usize,
    pub meta: SceneMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub task: Task,
    pub class_names: Vec<String>,
    pub examples: Vec<LabeledExample>,
    /// Chunks dropped because they were too short for the pipeline.
    pub skipped_chunks: usize,
}

impl Dataset {
    pub fn feature_shape(&self) -> Option<[usize; 2]> {
        self.examples.first().map(|e| e.shape)
    }

    /// Keep only the leading `n_bands` tiles of every example.
    pub fn with_bands(&self, n_bands: usize, total_bands: usize) -> Result<Dataset> {
        if n_bands == 0 || n_bands > total_bands {
            return invalid(format!("cannot keep {n_bands} of {total_bands} bands"));
        }
        let examples = self
            .examples
            .iter()
            .map(|e| {
                let [h, w] = e.shape;
                if w % total_bands != 0 {
                    return invalid(format!("feature width {w} is not a multiple of {total_bands} bands"));
                }
                let keep = w / total_bands * n_bands;
                let features = e.features.chunks_exact(w).flat_map(|row| row[..keep].iter().copied()).collect();
                Ok(LabeledExample {
                    features,
                    shape: [h, keep],
                    ..e.clone()
                })
            })
            .collect::<Result<_>>()?;
        Ok(Dataset {
            examples,
            ..self.clone()
        })
    }
}

pub fn phase_names() -> Vec<String> {
    ActivityPhase::ALL.iter().map(|p| p.name().to_string()).collect()
}

fn class_names(scenes: &[SceneConfig], cfg: &DatasetConfig) -> Vec<String> {
    if !cfg.app_ids.is_empty() {
        return cfg.app_ids.clone();
    }
    let mut names: Vec<String> = Vec::new();
    for s in scenes {
        if !names.contains(&s.signature.app_id) {
            names.push(s.signature.app_id.clone());
        }
    }
    names
}

/// Per-capture features for both tasks.
struct CaptureFeatures {
    app: Vec<Vec<f64>>,
    activity: Vec<(Vec<f64>, [usize; 2])>,
    skipped: usize,
}

/// Mean linear STFT power of an Idle chunk per frequency bin.
fn idle_profile(idle: &IqRecording, pipeline: &PipelineConfig) -> Result<Vec<f64>> {
    let rows = stft_linear(idle, pipeline.stft_window_len, pipeline.stft_hop)?;
    let mut mean = vec![0.0; pipeline.stft_window_len];
    for r in &rows {
        mean.iter_mut().zip(r).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= rows.len() as f64);
    Ok(mean)
}

/// Idle-referenced spectrogram of one band: `dB(active) - dB(idle mean)`
/// after pooling `[time, freq]` blocks: mean power over time, peak over
/// frequency, so a narrow line keeps its contrast against the floor.
fn activity_map(active: &IqRecording, idle: &IqRecording, pipeline: &PipelineConfig, pool: [usize; 2]) -> Result<(Vec<f64>, [usize; 2])> {
    let rows = stft_linear(active, pipeline.stft_window_len, pipeline.stft_hop)?;
    let reference = idle_profile(idle, pipeline)?;
    let (pt, pf) = (pool[0], pool[1]);
    let t_out = rows.len() / pt;
    let f_out = pipeline.stft_window_len / pf;
    if t_out == 0 || f_out == 0 {
        return invalid(format!(
            "spectrogram of {}x{} cannot be pooled by {pt}x{pf}",
            rows.len(),
            pipeline.stft_window_len
        ));
    }
    let peak = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
    let ref_pooled: Vec<f64> = (0..f_out).map(|f| peak(&reference[f * pf..(f + 1) * pf])).collect();
    let mut out = Vec::with_capacity(t_out * f_out);
    let mut mean = vec![0.0; pf];
    for t in 0..t_out {
        for (f, r) in ref_pooled.iter().enumerate() {
            mean.iter_mut().for_each(|m| *m = 0.0);
            for row in &rows[t * pt..(t + 1) * pt] {
                mean.iter_mut().zip(&row[f * pf..(f + 1) * pf]).for_each(|(m, v)| *m += v);
            }
            out.push(to_db(peak(&mean) / pt as f64) - to_db(*r));
        }
    }
    Ok((out, [t_out, f_out]))
}

fn min_chunk(pipeline: &PipelineConfig) -> usize {
    (pipeline.fft_size * pipeline.avg_frames).max(pipeline.stft_window_len)
}

fn capture_features(
    scene: &SceneConfig,
    pipeline: &PipelineConfig,
    cfg: &DatasetConfig,
    obf: Option<&ObfuscationSpec>,
    want: [bool; 2],
) -> Result<CaptureFeatures> {
    let mut band_frames: Vec<Vec<SpectrumFrame>> = Vec::new();
    let mut band_maps: Vec<Vec<(Vec<f64>, [usize; 2])>> = Vec::new();
    let mut skipped = 0;
    for &band in &cfg.bands {
        let (active, idle) = capture_pair(&scene.with_band(band), obf)?;
        let full = active.len() / cfg.chunk_len;
        let usable = if cfg.chunk_len < min_chunk(pipeline) { 0 } else { full };
        // counted per capture, not per band
        skipped = usize::from(active.len() % cfg.chunk_len != 0) + full - usable;
        let mut frames = Vec::with_capacity(usable);
        let mut maps = Vec::with_capacity(usable);
        for c in 0..usable {
            let a = active.slice(c * cfg.chunk_len, cfg.chunk_len)?;
            let i = idle.slice(c * cfg.chunk_len, cfg.chunk_len)?;
            if want[0] {
                frames.push(process_band(&a, &i, pipeline)?);
            }
            if want[1] {
                maps.push(activity_map(&a, &i, pipeline, cfg.stft_pool)?);
            }
        }
        band_frames.push(frames);
        band_maps.push(maps);
    }
    let chunks = band_frames[0].len().max(band_maps[0].len());
    let mut app = Vec::new();
    let mut activity = Vec::new();
    for c in 0..chunks {
        if want[0] {
            let per_band: Vec<_> = band_frames.iter().map(|b| b[c].clone()).collect();
            app.push(concat_bands(&per_band)?);
        }
        if want[1] {
            // bands side by side along frequency, ascending
            let mut order: Vec<usize> = (0..cfg.bands.len()).collect();
            order.sort_by(|&a, &b| cfg.bands[a].total_cmp(&cfg.bands[b]));
            let [t, f] = band_maps[0][c].1;
            let mut m = Vec::with_capacity(t * f * order.len());
            for row in 0..t {
                for &b in &order {
                    m.extend_from_slice(&band_maps[b][c].0[row * f..(row + 1) * f]);
                }
            }
            activity.push((m, [t, f * order.len()]));
        }
    }
    Ok(CaptureFeatures { app, activity, skipped })
}

fn meta(scene: &SceneConfig, chunk: usize) -> SceneMeta {
    SceneMeta {
        seed: scene.seed,
        app_id: scene.signature.app_id.clone(),
        phase: scene.phase,
        distance_m: scene.channel.distance_m,
        orientation_deg: scene.channel.orientation_deg,
        chunk,
    }
}

fn build(
    scenes: &[SceneConfig],
    pipeline: &PipelineConfig,
    cfg: &DatasetConfig,
    obf: Option<&ObfuscationSpec>,
    want: [bool; 2],
) -> Result<[Option<Dataset>; 2]> {
    pipeline.validate()?;
    cfg.validate()?;
    if scenes.is_empty() {
        return invalid("no scenes to build a dataset from");
    }
    let names = class_names(scenes, cfg);
    let features: Vec<CaptureFeatures> = scenes
        .par_iter()
        .map(|s| capture_features(s, pipeline, cfg, obf, want))
        .collect::<Result<_>>()?;
    let skipped: usize = features.iter().map(|f| f.skipped).sum();
    let mut app = Vec::new();
    let mut act = Vec::new();
    for (scene, f) in scenes.iter().zip(features) {
        if f.app.is_empty() && f.activity.is_empty() {
            return invalid(format!(
                "scene with seed {} yields no chunk of {} samples usable by the pipeline",
                scene.seed, cfg.chunk_len
            ));
        }
        if want[0] {
            let label = names.iter().position(|n| n == &scene.signature.app_id).ok_or_else(|| {
                crate::Error::InvalidArgument(format!("app {} is not among the dataset classes", scene.signature.app_id))
            })?;
            for (c, v) in f.app.into_iter().enumerate() {
                let len = v.len();
                app.push(LabeledExample {
                    features: v,
                    shape: [1, len],
                    label,
                    meta: meta(scene, c),
                });
            }
        }
        for (c, (v, shape)) in f.activity.into_iter().enumerate() {
            act.push(LabeledExample {
                features: v,
                shape,
                label: scene.phase.index(),
                meta: meta(scene, c),
            });
        }
    }
    let make = |task, examples, class_names| Dataset {
        task,
        class_names,
        examples,
        skipped_chunks: skipped,
    };
    Ok([
        want[0].then(|| make(Task::AppId, app, names)),
        want[1].then(|| make(Task::Activity, act, phase_names())),
    ])
}

/// Simulate every scene (Active and Idle over all configured bands), chunk
/// the captures and extract features for `task`.
///
/// App identification uses the concatenated detrended residual spectra of
/// all bands; activity recognition uses Idle-referenced pooled spectrograms
/// placed side by side per band. Features are not standardized here; see
/// [`DatasetSplit::standardize`].
pub fn build_dataset(
    scenes: &[SceneConfig],
    task: Task,
    pipeline: &PipelineConfig,
    cfg: &DatasetConfig,
    obf: Option<&ObfuscationSpec>,
) -> Result<Dataset> {
    let want = [task == Task::AppId, task == Task::Activity];
    let [a, b] = build(scenes, pipeline, cfg, obf, want)?;
    Ok(a.or(b).expect("one task requested"))
}

/// Both tasks from a single simulation pass.
pub fn build_multitask(
    scenes: &[SceneConfig],
    pipeline: &PipelineConfig,
    cfg: &DatasetConfig,
    obf: Option<&ObfuscationSpec>,
) -> Result<(Dataset, Dataset)> {
    let [a, b] = build(scenes, pipeline, cfg, obf, [true, true])?;
    Ok((a.expect("requested"), b.expect("requested")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<LabeledExample>,
    pub val: Vec<LabeledExample>,
    pub test: Vec<LabeledExample>,
    pub ratios: [f64; 3],
    pub seed: u64,
}

impl DatasetSplit {
    /// Fit a scaler on the training portion and apply it to all three parts.
    pub fn standardize(&mut self) -> Result<Standardizer> {
        let s = Standardizer::fit(&self.train)?;
        for part in [&mut self.train, &mut self.val, &mut self.test] {
            s.apply_all(part)?;
        }
        Ok(s)
    }

    pub fn seeds(&self) -> [Vec<u64>; 3] {
        let uniq = |v: &[LabeledExample]| {
            let mut s: Vec<u64> = v.iter().map(|e| e.meta.seed).collect();
            s.sort_unstable();
            s.dedup();
            s
        };
        [uniq(&self.train), uniq(&self.val), uniq(&self.test)]
    }
}

/// Split by capture seed: shuffle the distinct seeds, then assign
/// `round(r_train n)` and `round(r_val n)` of them to train and validation
/// and the rest to test. All chunks of one capture stay together.
pub fn split_dataset(examples: &[LabeledExample], ratios: [f64; 3], seed: u64) -> Result<DatasetSplit> {
    if ratios.iter().any(|r| !(*r >= 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return invalid(format!("split ratios must be non-negative and sum to 1, got {ratios:?}"));
    }
    let mut seeds: Vec<u64> = examples.iter().map(|e| e.meta.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    let n = seeds.len();
    let n_train = (ratios[0] * n as f64).round() as usize;
    let n_val = (ratios[1] * n as f64).round() as usize;
    if n_train == 0 || n_val == 0 || n_train + n_val >= n {
        return invalid(format!(
            "{n} captures cannot fill train/validation/test at ratios {ratios:?}"
        ));
    }
    seeds.shuffle(&mut rng::stream(seed, "split", 0));
    let part_of = |s: u64| {
        let pos = seeds.iter().position(|&x| x == s).expect("known seed");
        if pos < n_train {
            0
        } else if pos < n_train + n_val {
            1
        } else {
            2
        }
    };
    let mut parts: [Vec<LabeledExample>; 3] = Default::default();
    for e in examples {
        parts[part_of(e.meta.seed)].push(e.clone());
    }
    let [train, val, test] = parts;
    Ok(DatasetSplit {
        train,
        val,
        test,
        ratios,
        seed,
    })
}

/// Per-dimension z-scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(examples: &[LabeledExample]) -> Result<Self> {
        let Some(first) = examples.first() else {
            return invalid("cannot fit a scaler on zero examples");
        };
        let d = first.features.len();
        let mut mean = vec![0.0; d];
        for e in examples {
            if e.features.len() != d {
                return invalid(format!("feature length {} differs from {d}", e.features.len()));
            }
            mean.iter_mut().zip(&e.features).for_each(|(m, x)| *m += x);
        }
        let n = examples.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for e in examples {
            for ((v, x), m) in var.iter_mut().zip(&e.features).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let std = var
            .into_iter()
            .map(|v| {
                let s = (v / n).sqrt();
                if s > 1e-12 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, features: &mut [f64]) -> Result<()> {
        if features.len() != self.mean.len() {
            return invalid(format!(
                "scaler fitted on {} features, got {}",
                self.mean.len(),
                features.len()
            ));
        }
        for ((x, m), s) in features.iter_mut().zip(&self.mean).zip(&self.std) {
            *x = (*x - m) / s;
        }
        Ok(())
    }

    pub fn apply_all(&self, examples: &mut [LabeledExample]) -> Result<()> {
        for e in examples {
            self.apply(&mut e.features)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(seed: u64, label: usize, v: f64) -> LabeledExample {
        LabeledExample {
            features: vec![v, 2.0 * v, 5.0],
            shape: [1, 3],
            label,
            meta: SceneMeta::synthetic(seed),
        }
    }

    fn twenty() -> Vec<LabeledExample> {
        (0..20u64).flat_map(|s| (0..3).map(move |c| ex(s * 7 + 1, (s % 2) as usize, c as f64 + s as f64))).collect()
    }

    #[test]
    fn split_counts_and_disjointness() {
        let split = split_dataset(&twenty(), [0.7, 0.15, 0.15], 3).unwrap();
        let [a, b, c] = split.seeds();
        assert_eq!((a.len(), b.len(), c.len()), (14, 3, 3));
        for s in &a {
            assert!(!b.contains(s) && !c.contains(s));
        }
        assert!(b.iter().all(|s| !c.contains(s)));
        assert_eq!(split.train.len() + split.val.len() + split.test.len(), 60);
        assert_eq!(split, split_dataset(&twenty(), [0.7, 0.15, 0.15], 3).unwrap());
    }

    #[test]
    fn split_rejects_bad_input() {
        assert!(split_dataset(&twenty(), [0.7, 0.2, 0.2], 0).is_err());
        let few: Vec<_> = twenty().into_iter().take(6).collect();
        assert!(split_dataset(&few, [0.7, 0.15, 0.15], 0).is_err());
    }

    #[test]
    fn scaler_uses_training_part_only() {
        let mut split = split_dataset(&twenty(), [0.7, 0.15, 0.15], 1).unwrap();
        let fitted = Standardizer::fit(&split.train).unwrap();
        split.test.iter_mut().for_each(|e| e.features[0] += 1000.0);
        let s = split.standardize().unwrap();
        assert_eq!(s, fitted);
        let m: f64 = split.train.iter().map(|e| e.features[0]).sum::<f64>() / split.train.len() as f64;
        assert!(m.abs() < 1e-12);
        // constant dimension maps to zero without dividing by zero
        assert!(split.train.iter().all(|e| e.features[2] == 0.0));
    }

    #[test]
    fn band_slicing() {
        let d = Dataset {
            task: Task::Activity,
            class_names: phase_names(),
            examples: vec![LabeledExample {
                features: (0..12).map(f64::from).collect(),
                shape: [2, 6],
                label: 0,
                meta: SceneMeta::synthetic(0),
            }],
            skipped_chunks: 0,
        };
        let one = d.with_bands(1, 3).unwrap();
        assert_eq!(one.examples[0].shape, [2, 2]);
        assert_eq!(one.examples[0].features, vec![0.0, 1.0, 6.0, 7.0]);
    }
}
