//! Line predictions and USNR measurements over simulated scenes.

use emspy_core::dsp::{process_band, usnr};
use emspy_core::emanation::emanation_spectrum_analytic;
use emspy_core::scene::capture_pair;
use emspy_core::{PipelineConfig, SceneConfig, SpectralLine};

use crate::error::{HarnessError, Result};

/// Analytic emanation lines of `scene` in its band on the absolute RF axis.
/// Real-valued synthesis puts each line at both `center +/- f` with half the
/// amplitude; lines beyond Nyquist are dropped.
pub fn predicted_lines(scene: &SceneConfig) -> Result<Vec<SpectralLine>> {
    let activity = scene.signature.phase(scene.phase).ok_or_else(|| HarnessError::Config {
        field: "grid.phases".into(),
        msg: format!("app {} has no phase {}", scene.signature.app_id, scene.phase.name()),
    })?;
    let nyquist = scene.sample_rate / 2.0;
    let mut out = Vec::new();
    for src in activity
        .sources
        .iter()
        .filter(|s| (s.band_center_hz - scene.band_center_hz).abs() < 1.0)
    {
        for l in emanation_spectrum_analytic(&src.clock, &src.wave)? {
            if l.freq_hz.abs() >= nyquist || l.freq_hz == 0.0 {
                continue;
            }
            for sign in [-1.0, 1.0] {
                out.push(SpectralLine {
                    freq_hz: scene.band_center_hz + sign * l.freq_hz,
                    magnitude: l.magnitude / 2.0,
                });
            }
        }
    }
    out.sort_by(|a, b| a.freq_hz.total_cmp(&b.freq_hz));
    Ok(out)
}

/// The predicted line with the largest magnitude (lowest frequency on ties).
pub fn strongest_line(scene: &SceneConfig) -> Result<SpectralLine> {
    predicted_lines(scene)?
        .into_iter()
        .reduce(|best, l| if l.magnitude > best.magnitude { l } else { best })
        .ok_or_else(|| HarnessError::Config {
            field: "capture.bands_hz".into(),
            msg: format!(
                "app {} has no emanation line in the band at {} Hz",
                scene.signature.app_id, scene.band_center_hz
            ),
        })
}

/// USNR of the strongest predicted line after the full Active/Idle chain.
/// The floor is the median over `movmedian_len` bins on each side.
pub fn scene_usnr(scene: &SceneConfig, pipeline: &PipelineConfig) -> Result<f64> {
    let line = strongest_line(scene)?;
    let (active, idle) = capture_pair(scene, None)?;
    let residual = process_band(&active, &idle, pipeline)?;
    Ok(usnr(&residual, line.freq_hz, pipeline.movmedian_len)?.usnr_db)
}

/// Mean and sample standard deviation.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
