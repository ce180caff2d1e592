use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::fft::{self, Window};
use super::{to_db, PipelineConfig, SpectrumFrame};
use crate::error::{invalid, Result};
use crate::signal::IqRecording;

/// Time-frequency power map, `power_db[time][freq]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrogram {
    pub times: Vec<f64>,
    pub freqs: Vec<f64>,
    pub power_db: Vec<Vec<f64>>,
    pub window: String,
    pub window_len: usize,
    pub hop: usize,
}

impl Spectrogram {
    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn n_freqs(&self) -> usize {
        self.freqs.len()
    }

    /// CSV whose first row holds the frequency axis and whose first column
    /// holds the time axis.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("time_s\\freq_hz");
        for f in &self.freqs {
            let _ = write!(s, ",{f}");
        }
        s.push('\n');
        for (t, row) in self.times.iter().zip(&self.power_db) {
            let _ = write!(s, "{t}");
            for p in row {
                let _ = write!(s, ",{p}");
            }
            s.push('\n');
        }
        s
    }
}

/// Per-frame linear STFT power (Hamming, fft-shifted), `frames x window_len`.
pub(crate) fn stft_linear(iq: &IqRecording, window_len: usize, hop: usize) -> Result<Vec<Vec<f64>>> {
    if window_len == 0 || hop == 0 || hop > window_len {
        return invalid(format!("stft window {window_len} / hop {hop} invalid"));
    }
    if iq.len() < window_len {
        return invalid(format!(
            "recording of {} samples is shorter than the stft window {window_len}",
            iq.len()
        ));
    }
    let n_frames = (iq.len() - window_len) / hop + 1;
    let plan = fft::forward(window_len);
    let win = Window::Hamming.coefficients(window_len);
    let (mut buf, mut scratch) = (Vec::with_capacity(window_len), Vec::new());
    Ok((0..n_frames)
        .map(|f| {
            let mut row = vec![0.0; window_len];
            let start = f * hop;
            fft::periodogram_into(
                plan.as_ref(),
                &iq.samples[start..start + window_len],
                &win,
                &mut buf,
                &mut scratch,
                &mut row,
            );
            row
        })
        .collect())
}

/// Hamming-windowed STFT with `cfg.stft_window_len` / `cfg.stft_hop`.
pub fn stft_spectrogram(iq: &IqRecording, cfg: &PipelineConfig) -> Result<Spectrogram> {
    let (win, hop) = (cfg.stft_window_len, cfg.stft_hop);
    let rows = stft_linear(iq, win, hop)?;
    let times = (0..rows.len())
        .map(|f| (f * hop) as f64 / iq.sample_rate + 0.5 * win as f64 / iq.sample_rate)
        .collect();
    Ok(Spectrogram {
        times,
        freqs: SpectrumFrame::axis(iq.center_frequency, iq.sample_rate, win),
        power_db: rows
            .into_iter()
            .map(|r| r.into_iter().map(to_db).collect())
            .collect(),
        window: Window::Hamming.name().to_string(),
        window_len: win,
        hop,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use std::f64::consts::TAU;

    fn cfg(win: usize, hop: usize) -> PipelineConfig {
        PipelineConfig {
            stft_window_len: win,
            stft_hop: hop,
            ..PipelineConfig::desk()
        }
    }

    fn tone(n: usize, sr: f64, f: f64, gate: impl Fn(f64) -> f64) -> IqRecording {
        let s = (0..n)
            .map(|k| {
                let t = k as f64 / sr;
                Complex64::from_polar(gate(t), TAU * f * t)
            })
            .collect();
        IqRecording::new(s, sr, 0.0, 0).unwrap()
    }

    fn argmax(v: &[f64]) -> usize {
        v.iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0
    }

    #[test]
    fn stationary_tone_constant_peak() {
        let sg = stft_spectrogram(&tone(8192, 1024.0, 100.0, |_| 1.0), &cfg(256, 128)).unwrap();
        let first = argmax(&sg.power_db[0]);
        assert!(sg.power_db.iter().all(|row| argmax(row) == first));
        assert_eq!(sg.window, "hamming");
    }

    #[test]
    fn gated_tone_alternates() {
        let sr = 4096.0;
        // 1 Hz gate: on for the first half second of each second
        let iq = tone(4 * 4096, sr, 512.0, |t| if t.fract() < 0.5 { 1.0 } else { 0.0 });
        let sg = stft_spectrogram(&iq, &cfg(256, 256)).unwrap();
        let bin = SpectrumFrame::axis(0.0, sr, 256)
            .iter()
            .position(|&f| f == 512.0)
            .unwrap();
        let on: Vec<bool> = sg.power_db.iter().map(|row| row[bin] > -20.0).collect();
        // 16 frames per second: 8 on, 8 off
        let mut transitions = Vec::new();
        for i in 1..on.len() {
            if on[i] != on[i - 1] {
                transitions.push(i);
            }
        }
        for w in transitions.windows(2) {
            assert!((w[1] - w[0]).abs_diff(8) <= 1, "{transitions:?}");
        }
        assert!(transitions.len() >= 6);
    }

    #[test]
    fn frame_count_with_hop_equal_window() {
        let iq = IqRecording::zeros(1000, 1.0, 0.0).unwrap();
        let sg = stft_spectrogram(&iq, &cfg(64, 64)).unwrap();
        assert_eq!(sg.n_times(), 1000 / 64);
        assert_eq!(sg.n_freqs(), 64);
    }

    #[test]
    fn too_short_rejected() {
        let iq = IqRecording::zeros(10, 1.0, 0.0).unwrap();
        assert!(stft_spectrogram(&iq, &cfg(64, 64)).is_err());
    }

    #[test]
    fn csv_axes() {
        let iq = IqRecording::zeros(256, 64.0, 0.0).unwrap();
        let csv = stft_spectrogram(&iq, &cfg(64, 64)).unwrap().to_csv();
        let rows: Vec<&str> = csv.lines().collect();
        assert!(rows[0].starts_with("time_s\\freq_hz,"));
        assert_eq!(rows[0].split(',').count(), 65);
        assert_eq!(rows.len(), 5);
    }
}
