//! IQ captures on disk: raw interleaved little-endian `f32` I/Q in `<stem>.iq`
//! plus a JSON sidecar `<stem>.json`.

use std::fs;
use std::path::{Path, PathBuf};

use emspy_core::num_complex::Complex64;
use emspy_core::{DeviceState, IqRecording, ObfuscationSpec, SceneConfig};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::fsutil::{io_err, read_json, sha256_hex, write_atomic, write_json};

pub const IQ_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IqSidecar {
    pub format_version: u32,
    pub sample_rate_hz: f64,
    pub center_frequency_hz: f64,
    pub duration_s: f64,
    pub num_samples: u64,
    pub seed: u64,
    pub state: DeviceState,
    /// SHA-256 of the scene, state and obfuscation that produced the data.
    pub scene_fingerprint: String,
    pub scene: SceneConfig,
    pub obfuscation: Option<ObfuscationSpec>,
}

pub fn fingerprint(scene: &SceneConfig, state: DeviceState, obf: Option<&ObfuscationSpec>) -> String {
    let doc = serde_json::json!({ "scene": scene, "state": state, "obfuscation": obf });
    sha256_hex(doc.to_string().as_bytes())
}

impl IqSidecar {
    pub fn new(rec: &IqRecording, scene: &SceneConfig, state: DeviceState, obf: Option<&ObfuscationSpec>) -> Self {
        Self {
            format_version: IQ_FORMAT_VERSION,
            sample_rate_hz: rec.sample_rate,
            center_frequency_hz: rec.center_frequency,
            duration_s: scene.duration,
            num_samples: rec.len() as u64,
            seed: scene.seed,
            state,
            scene_fingerprint: fingerprint(scene, state, obf),
            scene: scene.clone(),
            obfuscation: obf.cloned(),
        }
    }

    /// Internal consistency: version, fingerprint and duration x rate
    /// against the declared sample count.
    pub fn check(&self, path: &Path) -> Result<()> {
        let fail = |msg: String| {
            Err(HarnessError::Sidecar {
                path: path.to_path_buf(),
                msg,
            })
        };
        if self.format_version != IQ_FORMAT_VERSION {
            return fail(format!(
                "format_version {} is not supported (expected {IQ_FORMAT_VERSION})",
                self.format_version
            ));
        }
        let expected = self.duration_s * self.sample_rate_hz;
        if !((self.num_samples as f64 - expected).abs() <= 1.0) {
            return fail(format!(
                "duration_s {} x sample_rate_hz {} = {expected} samples, but num_samples is {}",
                self.duration_s, self.sample_rate_hz, self.num_samples
            ));
        }
        let fp = fingerprint(&self.scene, self.state, self.obfuscation.as_ref());
        if fp != self.scene_fingerprint {
            return fail(format!(
                "scene_fingerprint {} does not match the embedded scene ({fp})",
                self.scene_fingerprint
            ));
        }
        if self.scene.sample_rate != self.sample_rate_hz || self.scene.band_center_hz != self.center_frequency_hz {
            return fail("sample_rate_hz / center_frequency_hz disagree with the embedded scene".into());
        }
        Ok(())
    }
}

/// `stem.iq` and `stem.json` for a path with or without either extension.
pub fn pair_paths(path: &Path) -> (PathBuf, PathBuf) {
    let stem = match path.extension().and_then(|e| e.to_str()) {
        Some("iq") | Some("json") => path.with_extension(""),
        _ => path.to_path_buf(),
    };
    let with = |ext: &str| {
        let mut s = stem.clone().into_os_string();
        s.push(".");
        s.push(ext);
        PathBuf::from(s)
    };
    (with("iq"), with("json"))
}

pub fn encode_samples(samples: &[Complex64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(samples.len() * 8);
    for s in samples {
        out.extend_from_slice(&(s.re as f32).to_le_bytes());
        out.extend_from_slice(&(s.im as f32).to_le_bytes());
    }
    out
}

pub fn decode_samples(bytes: &[u8]) -> Option<Vec<Complex64>> {
    if bytes.len() % 8 != 0 {
        return None;
    }
    let f = |b: &[u8]| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64;
    Some(bytes.chunks_exact(8).map(|c| Complex64::new(f(&c[..4]), f(&c[4..]))).collect())
}

/// Write the data file, then the sidecar, each atomically.
pub fn write_pair(path: &Path, rec: &IqRecording, sidecar: &IqSidecar) -> Result<(PathBuf, PathBuf)> {
    let (iq, json) = pair_paths(path);
    write_atomic(&iq, &encode_samples(&rec.samples))?;
    write_json(&json, sidecar)?;
    Ok((iq, json))
}

/// Load and re-validate a pair; the recording is at `f32` precision.
pub fn read_pair(path: &Path) -> Result<(IqRecording, IqSidecar)> {
    let (iq, json) = pair_paths(path);
    let sidecar: IqSidecar = read_json(&json)?;
    sidecar.check(&json)?;
    let bytes = fs::read(&iq).map_err(io_err(&iq))?;
    let samples = decode_samples(&bytes).ok_or_else(|| HarnessError::Sidecar {
        path: iq.clone(),
        msg: format!("{} bytes is not a whole number of I/Q pairs (8 bytes each)", bytes.len()),
    })?;
    if samples.len() as u64 != sidecar.num_samples {
        return Err(HarnessError::Sidecar {
            path: iq,
            msg: format!(
                "data holds {} samples but the sidecar declares num_samples {}",
                samples.len(),
                sidecar.num_samples
            ),
        });
    }
    let rec = IqRecording::new(samples, sidecar.sample_rate_hz, sidecar.center_frequency_hz, sidecar.seed)?;
    Ok((rec, sidecar))
}
