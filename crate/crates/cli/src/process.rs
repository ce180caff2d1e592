//! `process`: run the spectral chain on a stored Active/Idle pair.

use std::path::Path;

use emspy_core::dsp::{detect_spikes, process_band, stft_spectrogram, usnr, UsnrReport};
use emspy_core::{PipelineConfig, Spectrogram, SpectrumFrame};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::fsutil::{csv_string, write_atomic, write_json};
use crate::iqfile::read_pair;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessReport {
    pub active_fingerprint: String,
    pub idle_fingerprint: String,
    pub band_center_hz: f64,
    pub sample_rate_hz: f64,
    /// Pipeline actually applied (frame count capped by the capture length).
    pub pipeline: PipelineConfig,
    pub spikes: Vec<UsnrReport>,
}

pub struct ProcessOutput {
    pub report: ProcessReport,
    pub residual: SpectrumFrame,
    pub spectrogram: Option<Spectrogram>,
}

pub fn spectrum_csv(frame: &SpectrumFrame) -> String {
    let rows: Vec<Vec<String>> = frame
        .freqs
        .iter()
        .zip(&frame.power_db)
        .map(|(f, p)| vec![f.to_string(), p.to_string()])
        .collect();
    csv_string(&["freq_hz", "power_db"], &rows)
}

/// Frequency axis across the header row, time axis down the first column.
pub fn spectrogram_csv(s: &Spectrogram) -> String {
    let mut header = vec!["time_s\\freq_hz".to_string()];
    header.extend(s.freqs.iter().map(|f| f.to_string()));
    let rows: Vec<Vec<String>> = s
        .times
        .iter()
        .zip(&s.power_db)
        .map(|(t, row)| std::iter::once(t.to_string()).chain(row.iter().map(|p| p.to_string())).collect())
        .collect();
    let h: Vec<&str> = header.iter().map(String::as_str).collect();
    csv_string(&h, &rows)
}

/// Residual spectrum, spikes with their USNR and optionally the Active
/// spectrogram. Writes `spectrum.csv`, `usnr.json` and `spectrogram.csv`
/// into `out_dir`.
pub fn process(active: &Path, idle: &Path, pipeline: &PipelineConfig, stft: bool, out_dir: &Path) -> Result<ProcessOutput> {
    let (a, sa) = read_pair(active)?;
    let (i, si) = read_pair(idle)?;
    let mut cfg = pipeline.clone();
    cfg.avg_frames = cfg.avg_frames.min(a.len().min(i.len()) / cfg.fft_size).max(1);
    let residual = process_band(&a, &i, &cfg)?;
    let spikes = detect_spikes(&residual, cfg.spike_threshold_db)
        .iter()
        .map(|s| usnr(&residual, s.freq_hz, cfg.movmedian_len))
        .collect::<emspy_core::Result<Vec<_>>>()?;
    let spectrogram = if stft { Some(stft_spectrogram(&a, &cfg)?) } else { None };
    let report = ProcessReport {
        active_fingerprint: sa.scene_fingerprint,
        idle_fingerprint: si.scene_fingerprint,
        band_center_hz: a.center_frequency,
        sample_rate_hz: a.sample_rate,
        pipeline: cfg,
        spikes,
    };
    write_atomic(&out_dir.join("spectrum.csv"), spectrum_csv(&residual).as_bytes())?;
    write_json(&out_dir.join("usnr.json"), &report)?;
    if let Some(s) = &spectrogram {
        write_atomic(&out_dir.join("spectrogram.csv"), spectrogram_csv(s).as_bytes())?;
    }
    Ok(ProcessOutput {
        report,
        residual,
        spectrogram,
    })
}
