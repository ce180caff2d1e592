use serde::{Deserialize, Serialize};

use super::{noncoherent_average, spectrum_subtract, SpectrumFrame};
use crate::error::{invalid, Error, Result};
use crate::signal::DeviceState;

/// Bins on each side of a spike excluded from its floor estimate.
const USNR_GUARD_BINS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spike {
    pub freq_hz: f64,
    pub power_db: f64,
}

/// Unintentional signal-to-noise ratio of one spike: peak over local
/// median floor, in dB.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UsnrReport {
    pub spike_freq: f64,
    pub usnr_db: f64,
    pub floor_db: f64,
    pub peak_db: f64,
}

/// Local maxima of a floor-relative spectrum rising more than
/// `threshold_db` above zero, in frequency order.
pub fn detect_spikes(frame: &SpectrumFrame, threshold_db: f64) -> Vec<Spike> {
    let p = &frame.power_db;
    let n = p.len();
    (0..n)
        .filter(|&i| {
            p[i] > threshold_db
                && (i == 0 || p[i] > p[i - 1])
                && (i + 1 == n || p[i] >= p[i + 1])
        })
        .map(|i| Spike {
            freq_hz: frame.freqs[i],
            power_db: p[i],
        })
        .collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// USNR at `spike_freq`: the maximum within +/-1 bin over the median of the
/// bins within +/-`floor_half_width`, skipping +/-3 bins around the spike.
pub fn usnr(frame: &SpectrumFrame, spike_freq: f64, floor_half_width: usize) -> Result<UsnrReport> {
    let i = frame
        .bin_of(spike_freq)
        .ok_or_else(|| Error::InvalidArgument(format!("{spike_freq} Hz is outside the spectrum axis")))?;
    let n = frame.len();
    let p = &frame.power_db;
    let peak_db = p[i.saturating_sub(1)..(i + 2).min(n)]
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let lo = i.saturating_sub(floor_half_width);
    let hi = (i + floor_half_width + 1).min(n);
    let floor_bins: Vec<f64> = (lo..hi)
        .filter(|&j| j.abs_diff(i) > USNR_GUARD_BINS)
        .map(|j| p[j])
        .collect();
    if floor_bins.is_empty() {
        return invalid(format!(
            "no floor bins around {spike_freq} Hz with half-width {floor_half_width}"
        ));
    }
    let floor_db = median(floor_bins);
    Ok(UsnrReport {
        spike_freq,
        usnr_db: peak_db - floor_db,
        floor_db,
        peak_db,
    })
}

/// Active when the averaged frames show at least one spike above
/// `reference_idle` by more than `threshold_db`.
pub fn detect_state(frames: &[SpectrumFrame], reference_idle: &SpectrumFrame, threshold_db: f64) -> Result<DeviceState> {
    let avg = noncoherent_average(frames, frames.len())?;
    let residual = spectrum_subtract(&avg, reference_idle)?;
    Ok(if detect_spikes(&residual, threshold_db).is_empty() {
        DeviceState::Idle
    } else {
        DeviceState::Active
    })
}

/// Streaming state detector whose Idle reference is replaced by every
/// window that classifies as Idle. Holds mutable state; keep it on one worker.
#[derive(Debug, Clone)]
pub struct IdleReferenceTracker {
    reference: SpectrumFrame,
    threshold_db: f64,
}

impl IdleReferenceTracker {
    pub fn new(reference: SpectrumFrame, threshold_db: f64) -> Self {
        Self {
            reference,
            threshold_db,
        }
    }

    pub fn reference(&self) -> &SpectrumFrame {
        &self.reference
    }

    pub fn observe(&mut self, frames: &[SpectrumFrame]) -> Result<DeviceState> {
        let state = detect_state(frames, &self.reference, self.threshold_db)?;
        if state == DeviceState::Idle {
            self.reference = noncoherent_average(frames, frames.len())?;
        }
        Ok(state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::from_db;

    fn frame(values: Vec<f64>) -> SpectrumFrame {
        let n = values.len();
        SpectrumFrame {
            freqs: SpectrumFrame::axis(1000.0, n as f64, n),
            power_db: values,
            band_center_hz: 1000.0,
            fft_size: n,
        }
    }

    #[test]
    fn flat_frame_has_no_spikes() {
        assert!(detect_spikes(&frame(vec![0.0; 128]), 3.0).is_empty());
    }

    #[test]
    fn finds_injected_spikes() {
        let mut v = vec![0.0; 256];
        for &(i, h) in &[(20usize, 9.0), (100, 12.0), (200, 7.5)] {
            v[i] = h;
            v[i - 1] = h - 6.0;
            v[i + 1] = h - 6.0;
        }
        let f = frame(v);
        let spikes = detect_spikes(&f, 6.0);
        let bins: Vec<usize> = spikes.iter().map(|s| f.bin_of(s.freq_hz).unwrap()).collect();
        assert_eq!(bins, vec![20, 100, 200]);
        assert!(detect_spikes(&f, 12.5).is_empty());
    }

    #[test]
    fn usnr_of_known_tone() {
        let mut v = vec![-30.0; 512];
        v[256] = -16.0;
        let f = frame(v);
        let r = usnr(&f, f.freqs[256], 33).unwrap();
        assert!((r.usnr_db - 14.0).abs() <= 0.5);
        assert_eq!(r.usnr_db, r.peak_db - r.floor_db);
    }

    #[test]
    fn usnr_flat_is_zero_and_scale_invariant() {
        let f = frame(vec![-7.0; 128]);
        assert!(usnr(&f, f.freqs[64], 20).unwrap().usnr_db.abs() <= 0.5);

        let v: Vec<f64> = (0..128).map(|i| -20.0 + ((i * 37) % 11) as f64 * 0.3).collect();
        let f = frame(v.clone());
        let scaled = frame(v.iter().map(|d| 10.0 * (from_db(*d) * 10.0).log10()).collect());
        let a = usnr(&f, f.freqs[70], 20).unwrap().usnr_db;
        let b = usnr(&scaled, scaled.freqs[70], 20).unwrap().usnr_db;
        assert!((a - b).abs() < 0.01);
    }

    #[test]
    fn usnr_out_of_axis() {
        let f = frame(vec![0.0; 64]);
        assert!(usnr(&f, 1e9, 10).is_err());
    }

    #[test]
    fn reference_against_itself_is_idle() {
        let f = frame(vec![-40.0; 64]);
        assert_eq!(detect_state(&[f.clone()], &f, 6.0).unwrap(), DeviceState::Idle);
        let mut g = f.clone();
        g.power_db[10] = -20.0;
        assert_eq!(detect_state(&[g], &f, 6.0).unwrap(), DeviceState::Active);
    }

    #[test]
    fn tracker_refreshes_on_idle_only() {
        let base = frame(vec![-40.0; 64]);
        let mut t = IdleReferenceTracker::new(base.clone(), 6.0);
        let drifted = frame(vec![-39.0; 64]);
        assert_eq!(t.observe(&[drifted.clone()]).unwrap(), DeviceState::Idle);
        assert!((t.reference().power_db[0] + 39.0).abs() < 1e-9);
        let mut active = drifted.clone();
        active.power_db[30] = -10.0;
        assert_eq!(t.observe(&[active]).unwrap(), DeviceState::Active);
        assert!((t.reference().power_db[30] + 39.0).abs() < 1e-9);
    }
}
