//! Experiment plans: presets, TOML overrides, validation and hashing.

use std::fmt;
use std::path::{Path, PathBuf};

use emspy_core::emanation::catalog::catalog_for_bands;
use emspy_core::learn::{DatasetConfig, Task, TrainConfig};
use emspy_core::rng::derive_seed;
use emspy_core::scene::db_serde;
use emspy_core::{
    ActivityPhase, Catalog, ChannelSpec, InterferenceSpec, NoiseSpec, ObfuscationSpec, PipelineConfig, SceneConfig,
    DEFAULT_BAND_CENTERS_HZ,
};
use serde::{Deserialize, Serialize};

use crate::error::{config, HarnessError, Result};
use crate::fsutil::{io_err, sha256_hex};

pub const PLAN_FORMAT_VERSION: u32 = 1;

/// Top-level keys that may be absent from a serialized plan.
const OPTIONAL_KEYS: [&str; 1] = ["catalog"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Desk,
    Paper,
}

impl Profile {
    pub fn name(self) -> &'static str {
        match self {
            Profile::Desk => "desk",
            Profile::Paper => "paper",
        }
    }

    fn from_name(s: &str) -> Option<Self> {
        match s {
            "desk" => Some(Profile::Desk),
            "paper" => Some(Profile::Paper),
            _ => None,
        }
    }
}

/// Power level in dB; `-inf` is written as the string `"-inf"` in JSON.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Db(#[serde(with = "db_serde")] pub f64);

impl fmt::Display for Db {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0 == f64::NEG_INFINITY {
            f.write_str("-inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    /// App ids; empty selects every catalog app in catalog order.
    pub apps: Vec<String>,
    pub phases: Vec<ActivityPhase>,
    pub seeds_per_cell: u64,
    pub distances_m: Vec<f64>,
    pub orientations_deg: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaptureSpec {
    pub sample_rate_hz: f64,
    pub duration_s: f64,
    pub bands_hz: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub chunk_len: usize,
    pub stft_pool: [usize; 2],
    /// Train / validation / test fractions of the captures.
    pub split: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// Band counts; each point keeps the leading bands of `capture.bands_hz`.
    pub bands: Vec<usize>,
    pub durations_s: Vec<f64>,
    pub distances_m: Vec<f64>,
    pub orientations_deg: Vec<f64>,
    pub obfuscation_power_db: Vec<Db>,
    /// Monte Carlo captures per point of the USNR sweeps.
    pub usnr_seeds: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub format_version: u32,
    pub name: String,
    pub profile: Profile,
    pub seed: u64,
    pub tasks: Vec<Task>,
    pub grid: GridSpec,
    pub capture: CaptureSpec,
    pub channel: ChannelSpec,
    pub interference: InterferenceSpec,
    pub noise: NoiseSpec,
    pub pipeline: PipelineConfig,
    pub dataset: DatasetSpec,
    pub train: TrainConfig,
    pub obfuscation: ObfuscationSpec,
    /// Signature catalog file; the built-in catalog when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub catalog: Option<PathBuf>,
    pub sweeps: SweepSpec,
    /// Where artifacts go; not part of the plan hash.
    #[serde(skip)]
    pub output_dir: PathBuf,
}

impl ExperimentPlan {
    pub fn preset(profile: Profile) -> Self {
        let (sample_rate_hz, chunk_len, pipeline, stft_pool) = match profile {
            Profile::Desk => (2.5e6, 50_000, PipelineConfig::desk(), [3, 8]),
            Profile::Paper => (25e6, 500_000, PipelineConfig::paper(), [3, 64]),
        };
        Self {
            format_version: PLAN_FORMAT_VERSION,
            name: profile.name().to_string(),
            profile,
            seed: 1,
            tasks: vec![Task::AppId, Task::Activity],
            grid: GridSpec {
                apps: Vec::new(),
                phases: ActivityPhase::ALL.to_vec(),
                seeds_per_cell: 5,
                distances_m: vec![1.0],
                orientations_deg: vec![90.0],
            },
            capture: CaptureSpec {
                sample_rate_hz,
                duration_s: 0.1,
                bands_hz: DEFAULT_BAND_CENTERS_HZ.to_vec(),
            },
            channel: ChannelSpec::default(),
            interference: InterferenceSpec::default(),
            noise: NoiseSpec::default(),
            pipeline,
            dataset: DatasetSpec {
                chunk_len,
                stft_pool,
                split: [0.7, 0.15, 0.15],
            },
            train: TrainConfig {
                learning_rate: 0.02,
                epochs: 30,
                patience: 8,
                ..TrainConfig::default()
            },
            obfuscation: ObfuscationSpec::default(),
            catalog: None,
            sweeps: SweepSpec {
                bands: vec![1, 2, 3, 4, 5],
                durations_s: vec![0.02, 0.05, 0.1],
                distances_m: vec![0.5, 1.0, 2.0, 4.0],
                orientations_deg: vec![45.0, 90.0, 135.0, 180.0, 225.0, 270.0, 315.0, 360.0],
                obfuscation_power_db: vec![Db(f64::NEG_INFINITY), Db(-10.0), Db(0.0)],
                usnr_seeds: 20,
            },
            output_dir: PathBuf::from("runs").join(profile.name()),
        }
    }

    /// Resolve a plan: preset for `profile` (or the document's own `profile`
    /// key, or desk), overlaid with the TOML document at `path`, then
    /// `seed` and `out` overrides.
    pub fn load(path: Option<&Path>, profile: Option<Profile>, seed: Option<u64>, out: Option<&Path>) -> Result<Self> {
        let text = match path {
            Some(p) => Some(std::fs::read_to_string(p).map_err(io_err(p))?),
            None => None,
        };
        let mut plan = Self::from_toml(text.as_deref().unwrap_or(""), profile)?;
        if let Some(p) = path {
            if let Some(c) = &plan.catalog {
                if c.is_relative() {
                    plan.catalog = Some(p.parent().unwrap_or(Path::new("")).join(c));
                }
            }
        }
        if let Some(s) = seed {
            plan.seed = s;
        }
        if let Some(o) = out {
            plan.output_dir = o.to_path_buf();
        }
        plan.validate()?;
        Ok(plan)
    }

    /// Overlay `text` on the preset. Unknown keys and type errors are
    /// reported with their dotted path; syntax errors with line and column.
    pub fn from_toml(text: &str, profile: Option<Profile>) -> Result<Self> {
        let user: toml::Table = text.parse().map_err(|e: toml::de::Error| HarnessError::Config {
            field: "<document>".into(),
            msg: e.to_string().trim_end().to_string(),
        })?;
        let profile = match (profile, user.get("profile")) {
            (Some(p), _) => p,
            (None, Some(toml::Value::String(s))) => match Profile::from_name(s) {
                Some(p) => p,
                None => return config("profile", format!("unknown profile {s:?} (expected desk or paper)")),
            },
            (None, Some(_)) => return config("profile", "expected a string"),
            (None, None) => Profile::Desk,
        };
        let preset = Self::preset(profile);
        let mut base = toml::Table::try_from(&preset).map_err(|e| HarnessError::Config {
            field: "<preset>".into(),
            msg: e.to_string(),
        })?;
        check_keys(&base, &user, "")?;
        merge(&mut base, user);
        base.insert("profile".into(), toml::Value::String(profile.name().into()));
        let value = toml::Value::Table(base);
        let mut plan: ExperimentPlan = serde_path_to_error::deserialize(value).map_err(|e| HarnessError::Config {
            field: e.path().to_string(),
            msg: e.inner().to_string(),
        })?;
        plan.output_dir = preset.output_dir;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != PLAN_FORMAT_VERSION {
            return config(
                "format_version",
                format!("unsupported version {} (expected {PLAN_FORMAT_VERSION})", self.format_version),
            );
        }
        if self.name.is_empty() || !self.name.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) {
            return config("name", format!("{:?} must be non-empty and use only [A-Za-z0-9._-]", self.name));
        }
        if self.tasks.is_empty() {
            return config("tasks", "at least one task is required");
        }
        let g = &self.grid;
        if g.phases.is_empty() || g.seeds_per_cell == 0 || g.distances_m.is_empty() || g.orientations_deg.is_empty() {
            return config("grid", "every grid axis must be non-empty and seeds_per_cell >= 1");
        }
        if self.tasks.contains(&Task::Activity) && g.phases.len() < ActivityPhase::ALL.len() {
            return config("grid.phases", "activity recognition needs all four phases");
        }
        if g.distances_m.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
            return config("grid.distances_m", "distances must be positive");
        }
        let catalog = self.catalog()?;
        for a in &g.apps {
            if catalog.get(a).is_none() {
                return config("grid.apps", format!("unknown app {a:?}"));
            }
        }
        if self.capture.bands_hz.is_empty() {
            return config("capture.bands_hz", "at least one band is required");
        }
        for (field, r) in [
            ("channel", self.channel.validate()),
            ("interference", self.interference.validate()),
            ("noise", self.noise.validate()),
            ("pipeline", self.pipeline.validate()),
            ("train", self.train.validate()),
            ("obfuscation", self.obfuscation.validate()),
            ("dataset", self.dataset_config().validate()),
        ] {
            if let Err(e) = r {
                return config(field, e.to_string());
            }
        }
        let s = self.dataset.split;
        if s.iter().any(|r| !(*r > 0.0)) || (s.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return config("dataset.split", format!("fractions must be positive and sum to 1, got {s:?}"));
        }
        let min_chunk = (self.pipeline.fft_size * self.pipeline.avg_frames).max(self.pipeline.stft_window_len);
        if self.dataset.chunk_len < min_chunk {
            return config(
                "dataset.chunk_len",
                format!("{} is below the {min_chunk} samples the pipeline consumes", self.dataset.chunk_len),
            );
        }
        let n = (self.capture.duration_s * self.capture.sample_rate_hz).round() as usize;
        if n < self.dataset.chunk_len {
            return config(
                "capture.duration_s",
                format!("{n} samples per capture hold no chunk of {}", self.dataset.chunk_len),
            );
        }
        let sw = &self.sweeps;
        if sw.bands.iter().any(|&b| b == 0 || b > self.capture.bands_hz.len()) {
            return config("sweeps.bands", format!("band counts must lie in 1..={}", self.capture.bands_hz.len()));
        }
        if sw.usnr_seeds == 0 {
            return config("sweeps.usnr_seeds", "must be >= 1");
        }
        if sw.durations_s.iter().any(|d| (d * self.capture.sample_rate_hz) < self.pipeline.fft_size as f64) {
            return config("sweeps.durations_s", "every duration must hold at least one FFT frame");
        }
        if sw.obfuscation_power_db.iter().any(|p| p.0.is_nan() || p.0 == f64::INFINITY) {
            return config("sweeps.obfuscation_power_db", "powers must be finite or -inf");
        }
        self.scenes().map(|_| ())
    }

    pub fn catalog(&self) -> Result<Catalog> {
        match &self.catalog {
            None => Ok(catalog_for_bands(&self.capture.bands_hz)),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(io_err(p))?;
                Catalog::from_toml_str(&text).map_err(|e| HarnessError::Config {
                    field: "catalog".into(),
                    msg: format!("{}: {e}", p.display()),
                })
            }
        }
    }

    pub fn app_ids(&self) -> Result<Vec<String>> {
        Ok(if self.grid.apps.is_empty() {
            self.catalog()?.app_ids()
        } else {
            self.grid.apps.clone()
        })
    }

    pub fn dataset_config(&self) -> DatasetConfig {
        DatasetConfig {
            chunk_len: self.dataset.chunk_len,
            bands: self.capture.bands_hz.clone(),
            stft_pool: self.dataset.stft_pool,
            app_ids: self.app_ids().unwrap_or_default(),
        }
    }

    /// One scene per grid cell and repetition, tuned to the first band.
    pub fn scene(&self, app: &str, phase: ActivityPhase, distance_m: f64, orientation_deg: f64, rep: u64) -> Result<SceneConfig> {
        let catalog = self.catalog()?;
        let signature = catalog
            .get(app)
            .ok_or_else(|| HarnessError::Config {
                field: "grid.apps".into(),
                msg: format!("unknown app {app:?}"),
            })?
            .clone();
        let label = format!("{app}/{}/{distance_m}/{orientation_deg}", phase.name());
        let scene = SceneConfig {
            signature,
            phase,
            channel: ChannelSpec {
                distance_m,
                orientation_deg,
                ..self.channel.clone()
            },
            interference: self.interference.clone(),
            noise: self.noise.clone(),
            sample_rate: self.capture.sample_rate_hz,
            duration: self.capture.duration_s,
            band_center_hz: self.capture.bands_hz[0],
            seed: derive_seed(self.seed, &label, rep),
        };
        scene.validate().map_err(|e| HarnessError::Config {
            field: "grid".into(),
            msg: format!("scene {label} #{rep}: {e}"),
        })?;
        Ok(scene)
    }

    /// The full grid: apps x phases x distances x orientations x seeds.
    pub fn scenes(&self) -> Result<Vec<SceneConfig>> {
        let mut out = Vec::new();
        for app in self.app_ids()? {
            for &phase in &self.grid.phases {
                for &d in &self.grid.distances_m {
                    for &o in &self.grid.orientations_deg {
                        for rep in 0..self.grid.seeds_per_cell {
                            out.push(self.scene(&app, phase, d, o, rep)?);
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Canonical JSON of the resolved plan (no output directory).
    pub fn resolved_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    /// SHA-256 of [`Self::resolved_json`].
    pub fn hash(&self) -> String {
        sha256_hex(self.resolved_json().as_bytes())
    }
}

fn check_keys(base: &toml::Table, user: &toml::Table, prefix: &str) -> Result<()> {
    for (k, v) in user {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match (base.get(k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(u)) => check_keys(b, u, &path)?,
            (Some(_), _) => {}
            (None, _) if prefix.is_empty() && OPTIONAL_KEYS.contains(&k.as_str()) => {}
            (None, _) => return config(path, "unknown key"),
        }
    }
    Ok(())
}

fn merge(base: &mut toml::Table, user: toml::Table) {
    for (k, v) in user {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(u)) => merge(b, u),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
