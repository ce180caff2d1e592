//! Spectral processing chain: windowed periodograms, non-coherent averaging,
//! Active-minus-Idle subtraction, moving-median floor removal, spike and
//! USNR measurement, state detection, STFT and multi-band concatenation.

mod detect;
pub(crate) mod fft;
mod median;
mod stft;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::signal::IqRecording;

pub use detect::{detect_spikes, detect_state, usnr, IdleReferenceTracker, Spike, UsnrReport};
pub use fft::Window;
pub use median::{movmedian, movmedian_smooth};
pub use stft::{stft_spectrogram, Spectrogram};
pub(crate) use stft::stft_linear;

/// Floor applied to every dB value so empty bins stay finite.
pub const DB_FLOOR: f64 = -300.0;

#[inline]
pub fn to_db(p: f64) -> f64 {
    if p > 0.0 {
        (10.0 * p.log10()).max(DB_FLOOR)
    } else {
        DB_FLOOR
    }
}

#[inline]
pub fn from_db(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// One power spectrum on an absolute RF frequency axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumFrame {
    pub freqs: Vec<f64>,
    pub power_db: Vec<f64>,
    pub band_center_hz: f64,
    pub fft_size: usize,
}

impl SpectrumFrame {
    /// Bin-centered axis `center + (k - n/2) * sample_rate / n`.
    pub fn axis(band_center_hz: f64, sample_rate: f64, fft_size: usize) -> Vec<f64> {
        let df = sample_rate / fft_size as f64;
        let half = (fft_size / 2) as f64;
        (0..fft_size).map(|k| band_center_hz + (k as f64 - half) * df).collect()
    }

    pub fn from_linear(band_center_hz: f64, sample_rate: f64, linear: &[f64]) -> Self {
        let fft_size = linear.len();
        Self {
            freqs: Self::axis(band_center_hz, sample_rate, fft_size),
            power_db: linear.iter().map(|&p| to_db(p)).collect(),
            band_center_hz,
            fft_size,
        }
    }

    pub fn len(&self) -> usize {
        self.power_db.len()
    }

    pub fn is_empty(&self) -> bool {
        self.power_db.is_empty()
    }

    pub fn bin_width(&self) -> f64 {
        if self.freqs.len() < 2 {
            return 0.0;
        }
        self.freqs[1] - self.freqs[0]
    }

    pub fn sample_rate(&self) -> f64 {
        self.bin_width() * self.fft_size as f64
    }

    /// Index of the bin nearest to `freq_hz`, or `None` when it lies outside
    /// the axis by more than half a bin.
    pub fn bin_of(&self, freq_hz: f64) -> Option<usize> {
        let df = self.bin_width();
        if self.freqs.is_empty() || df <= 0.0 {
            return None;
        }
        let pos = (freq_hz - self.freqs[0]) / df;
        let idx = pos.round();
        if idx < 0.0 || idx > (self.freqs.len() - 1) as f64 {
            return None;
        }
        Some(idx as usize)
    }

    pub fn linear(&self) -> Vec<f64> {
        self.power_db.iter().map(|&d| from_db(d)).collect()
    }

    pub fn check_same_axis(&self, other: &SpectrumFrame) -> Result<()> {
        if self.fft_size != other.fft_size || self.len() != other.len() {
            return Err(Error::AxisMismatch(format!(
                "fft sizes {} vs {}",
                self.fft_size, other.fft_size
            )));
        }
        if self.band_center_hz != other.band_center_hz {
            return Err(Error::AxisMismatch(format!(
                "band centers {} vs {} Hz",
                self.band_center_hz, other.band_center_hz
            )));
        }
        let df = self.bin_width().abs().max(1e-12);
        if self
            .freqs
            .iter()
            .zip(&other.freqs)
            .any(|(a, b)| (a - b).abs() > 1e-6 * df)
        {
            return Err(Error::AxisMismatch("frequency axes differ".into()));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.freqs.len() != self.power_db.len() || self.freqs.len() != self.fft_size {
            return invalid("spectrum frame axis and data lengths differ");
        }
        let df = self.bin_width();
        if self.freqs.len() > 1 && !(df > 0.0) {
            return invalid("spectrum frame frequencies must be strictly increasing");
        }
        for w in self.freqs.windows(2) {
            if ((w[1] - w[0]) - df).abs() > 1e-6 * df {
                return invalid("spectrum frame frequencies must be uniformly spaced");
            }
        }
        Ok(())
    }

    /// `freq_hz,power_db` CSV.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("freq_hz,power_db\n");
        for (f, p) in self.freqs.iter().zip(&self.power_db) {
            let _ = writeln!(s, "{f},{p}");
        }
        s
    }
}

/// Tunables of the spectral chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub fft_size: usize,
    /// Frames `K` averaged non-coherently.
    pub avg_frames: usize,
    pub movmedian_len: usize,
    pub spike_threshold_db: f64,
    pub stft_window_len: usize,
    pub stft_hop: usize,
}

impl PipelineConfig {
    /// Full-rate profile: 8192-point FFT over 500K-sample chunks.
    pub fn paper() -> Self {
        Self {
            fft_size: 8192,
            avg_frames: 61,
            movmedian_len: 301,
            spike_threshold_db: 6.0,
            stft_window_len: 2048,
            stft_hop: 2048,
        }
    }

    /// Reduced-rate profile for 50K-sample chunks at 2.5 MHz.
    pub fn desk() -> Self {
        Self {
            fft_size: 512,
            avg_frames: 97,
            movmedian_len: 33,
            spike_threshold_db: 6.0,
            stft_window_len: 256,
            stft_hop: 256,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.fft_size.is_power_of_two() || self.fft_size < 8 {
            return invalid(format!("fft_size must be a power of two >= 8, got {}", self.fft_size));
        }
        if self.avg_frames == 0 {
            return invalid("avg_frames must be >= 1");
        }
        if self.movmedian_len % 2 == 0 || self.movmedian_len > self.fft_size {
            return invalid(format!(
                "movmedian_len must be odd and <= fft_size, got {}",
                self.movmedian_len
            ));
        }
        if !self.spike_threshold_db.is_finite() {
            return invalid("spike_threshold_db must be finite");
        }
        if self.stft_window_len < 2 || self.stft_hop == 0 || self.stft_hop > self.stft_window_len {
            return invalid(format!(
                "stft window {} / hop {} invalid (need 0 < hop <= window)",
                self.stft_window_len, self.stft_hop
            ));
        }
        Ok(())
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self::paper()
    }
}

/// Linear-power mean of the first `frames` windowed periodograms of `iq`
/// (non-overlapping, fft-shifted).
pub fn averaged_periodogram(iq: &IqRecording, fft_size: usize, frames: usize, window: Window) -> Result<Vec<f64>> {
    if fft_size == 0 || frames == 0 {
        return invalid("fft_size and frame count must be positive");
    }
    let available = iq.len() / fft_size;
    if available < frames {
        return invalid(format!(
            "recording of {} samples holds {available} frames of {fft_size}, need {frames}",
            iq.len()
        ));
    }
    let plan = fft::forward(fft_size);
    let win = window.coefficients(fft_size);
    let mut acc = vec![0.0; fft_size];
    let mut frame = vec![0.0; fft_size];
    let (mut buf, mut scratch) = (Vec::with_capacity(fft_size), Vec::new());
    for f in 0..frames {
        let chunk = &iq.samples[f * fft_size..(f + 1) * fft_size];
        fft::periodogram_into(plan.as_ref(), chunk, &win, &mut buf, &mut scratch, &mut frame);
        for (a, p) in acc.iter_mut().zip(&frame) {
            *a += p;
        }
    }
    let inv = 1.0 / frames as f64;
    acc.iter_mut().for_each(|a| *a *= inv);
    Ok(acc)
}

/// Non-overlapping Hann-windowed periodogram frames,
/// `10 log10(|FFT(frame * w)|^2 / fft_size)`, on the recording's RF axis.
pub fn psd_frames(iq: &IqRecording, fft_size: usize) -> Result<Vec<SpectrumFrame>> {
    if fft_size == 0 {
        return invalid("fft_size must be positive");
    }
    if iq.len() < fft_size {
        return invalid(format!(
            "recording of {} samples is shorter than fft_size {fft_size}",
            iq.len()
        ));
    }
    let plan = fft::forward(fft_size);
    let win = Window::Hann.coefficients(fft_size);
    let axis = SpectrumFrame::axis(iq.center_frequency, iq.sample_rate, fft_size);
    let mut linear = vec![0.0; fft_size];
    let (mut buf, mut scratch) = (Vec::with_capacity(fft_size), Vec::new());
    Ok(iq
        .samples
        .chunks_exact(fft_size)
        .map(|chunk| {
            fft::periodogram_into(plan.as_ref(), chunk, &win, &mut buf, &mut scratch, &mut linear);
            SpectrumFrame {
                freqs: axis.clone(),
                power_db: linear.iter().map(|&p| to_db(p)).collect(),
                band_center_hz: iq.center_frequency,
                fft_size,
            }
        })
        .collect())
}

/// Linear-power mean of the first `k` frames, re-expressed in dB.
pub fn noncoherent_average(frames: &[SpectrumFrame], k: usize) -> Result<SpectrumFrame> {
    if k == 0 {
        return invalid("K must be >= 1");
    }
    if frames.len() < k {
        return invalid(format!("need {k} frames, got {}", frames.len()));
    }
    let first = &frames[0];
    let mut acc = vec![0.0; first.len()];
    for f in &frames[..k] {
        first.check_same_axis(f)?;
        for (a, &d) in acc.iter_mut().zip(&f.power_db) {
            *a += from_db(d);
        }
    }
    Ok(SpectrumFrame {
        freqs: first.freqs.clone(),
        power_db: acc.iter().map(|&a| to_db(a / k as f64)).collect(),
        band_center_hz: first.band_center_hz,
        fft_size: first.fft_size,
    })
}

/// Per-bin `active - idle` in dB, clamped at the dB floor.
pub fn spectrum_subtract(active: &SpectrumFrame, idle: &SpectrumFrame) -> Result<SpectrumFrame> {
    active.check_same_axis(idle)?;
    Ok(SpectrumFrame {
        freqs: active.freqs.clone(),
        power_db: active
            .power_db
            .iter()
            .zip(&idle.power_db)
            .map(|(a, i)| (a - i).max(DB_FLOOR))
            .collect(),
        band_center_hz: active.band_center_hz,
        fft_size: active.fft_size,
    })
}

/// Average both recordings over `K` frames, subtract Idle from Active, and
/// remove the residual floor with a moving median. Returns the detrended
/// residual.
pub fn process_band(active: &IqRecording, idle: &IqRecording, cfg: &PipelineConfig) -> Result<SpectrumFrame> {
    cfg.validate()?;
    if active.center_frequency != idle.center_frequency || active.sample_rate != idle.sample_rate {
        return Err(Error::AxisMismatch(format!(
            "active at {} Hz / {} S/s vs idle at {} Hz / {} S/s",
            active.center_frequency, active.sample_rate, idle.center_frequency, idle.sample_rate
        )));
    }
    let a = averaged_periodogram(active, cfg.fft_size, cfg.avg_frames, Window::Hann)?;
    let i = averaged_periodogram(idle, cfg.fft_size, cfg.avg_frames, Window::Hann)?;
    let a = SpectrumFrame::from_linear(active.center_frequency, active.sample_rate, &a);
    let i = SpectrumFrame::from_linear(idle.center_frequency, idle.sample_rate, &i);
    let residual = spectrum_subtract(&a, &i)?;
    let (_, detrended) = movmedian_smooth(&residual, cfg.movmedian_len)?;
    Ok(detrended)
}

/// Concatenate per-band spectra into one feature vector in ascending band
/// order. Input order does not matter; bands must not overlap.
pub fn concat_bands(frames: &[SpectrumFrame]) -> Result<Vec<f64>> {
    if frames.is_empty() {
        return invalid("no bands to concatenate");
    }
    let mut sorted: Vec<&SpectrumFrame> = frames.iter().collect();
    sorted.sort_by(|a, b| a.band_center_hz.total_cmp(&b.band_center_hz));
    let fft_size = sorted[0].fft_size;
    for f in &sorted {
        if f.fft_size != fft_size {
            return invalid(format!("bands have fft sizes {} and {}", fft_size, f.fft_size));
        }
    }
    for w in sorted.windows(2) {
        let span_lo = w[0].sample_rate();
        let span_hi = w[1].sample_rate();
        let gap = w[1].band_center_hz - w[0].band_center_hz;
        if gap < 0.5 * (span_lo + span_hi) - 1e-6 {
            return invalid(format!(
                "bands at {} Hz and {} Hz overlap",
                w[0].band_center_hz, w[1].band_center_hz
            ));
        }
    }
    Ok(sorted.iter().flat_map(|f| f.power_db.iter().copied()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};
    use std::f64::consts::TAU;

    fn flat(n: usize, db: f64) -> SpectrumFrame {
        SpectrumFrame {
            freqs: SpectrumFrame::axis(0.0, n as f64, n),
            power_db: vec![db; n],
            band_center_hz: 0.0,
            fft_size: n,
        }
    }

    fn white(n: usize, seed: u64) -> IqRecording {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let s = (0..n)
            .map(|_| {
                let re: f64 = StandardNormal.sample(&mut r);
                let im: f64 = StandardNormal.sample(&mut r);
                Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
            })
            .collect();
        IqRecording::new(s, 1e6, 0.0, seed).unwrap()
    }

    #[test]
    fn tone_at_bin_center_concentrates_power() {
        let n = 256;
        let bin = 40.0;
        let s: Vec<Complex64> = (0..n)
            .map(|k| Complex64::from_polar(1.0, TAU * bin * k as f64 / n as f64))
            .collect();
        let iq = IqRecording::new(s, n as f64, 0.0, 0).unwrap();
        let frames = psd_frames(&iq, n).unwrap();
        assert_eq!(frames.len(), 1);
        let lin = frames[0].linear();
        let total: f64 = lin.iter().sum();
        let peak = frames[0].bin_of(bin).unwrap();
        // Hann spreads a bin-centered tone over three bins
        let near: f64 = lin[peak - 1..=peak + 1].iter().sum();
        assert!(near / total > 0.99);
        assert_eq!(lin.iter().cloned().fold(0.0, f64::max), lin[peak]);
    }

    #[test]
    fn zero_input_clamps_to_floor() {
        let iq = IqRecording::zeros(64, 1.0, 0.0).unwrap();
        let frames = psd_frames(&iq, 32).unwrap();
        assert_eq!(frames.len(), 2);
        assert!(frames.iter().all(|f| f.power_db.iter().all(|&d| d == DB_FLOOR)));
    }

    #[test]
    fn short_recording_rejected() {
        let iq = IqRecording::zeros(10, 1.0, 0.0).unwrap();
        assert!(psd_frames(&iq, 16).is_err());
    }

    #[test]
    fn white_noise_is_flat() {
        let fft = 128;
        let frames = psd_frames(&white(fft * 800, 5), fft).unwrap();
        let avg = noncoherent_average(&frames, 800).unwrap();
        let mean = avg.power_db.iter().sum::<f64>() / fft as f64;
        assert!(avg.power_db.iter().all(|d| (d - mean).abs() < 1.0));
    }

    #[test]
    fn average_of_one_is_identity() {
        let frames = psd_frames(&white(1024, 1), 256).unwrap();
        let avg = noncoherent_average(&frames, 1).unwrap();
        for (a, b) in avg.power_db.iter().zip(&frames[0].power_db) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn averaging_shrinks_noise_spread() {
        let fft = 256;
        let frames = psd_frames(&white(fft * 100, 11), fft).unwrap();
        let std_of = |f: &SpectrumFrame| {
            let lin = f.linear();
            let m = lin.iter().sum::<f64>() / lin.len() as f64;
            (lin.iter().map(|x| (x - m).powi(2)).sum::<f64>() / lin.len() as f64).sqrt() / m
        };
        let s1 = std_of(&frames[0]);
        let s100 = std_of(&noncoherent_average(&frames, 100).unwrap());
        let ratio = s100 / s1;
        assert!((ratio - 0.1).abs() <= 0.02, "ratio {ratio}");
    }

    #[test]
    fn average_rejects_mismatched_axes() {
        let a = flat(16, 0.0);
        let mut b = flat(16, 0.0);
        b.band_center_hz = 5.0;
        assert!(matches!(noncoherent_average(&[a, b], 2), Err(Error::AxisMismatch(_))));
    }

    #[test]
    fn subtract_identical_is_zero() {
        let mut a = flat(64, -20.0);
        a.power_db[7] = 3.0;
        let r = spectrum_subtract(&a, &a).unwrap();
        assert!(r.power_db.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn shared_carrier_suppressed_and_new_spike_kept() {
        let mut idle = flat(256, -10.0);
        idle.power_db[50] = 20.0;
        let mut active = idle.clone();
        active.power_db[120] = 5.0;
        let r = spectrum_subtract(&active, &idle).unwrap();
        assert!(r.power_db[50].abs() <= 1.0);
        assert!((r.power_db[120] - 15.0).abs() <= 1.0);
    }

    #[test]
    fn subtract_axis_mismatch() {
        assert!(spectrum_subtract(&flat(16, 0.0), &flat(32, 0.0)).is_err());
    }

    #[test]
    fn concat_contract() {
        let band = |c: f64| SpectrumFrame {
            freqs: SpectrumFrame::axis(c, 10.0, 1024),
            power_db: vec![c; 1024],
            band_center_hz: c,
            fft_size: 1024,
        };
        let one = concat_bands(&[band(100.0)]).unwrap();
        assert_eq!(one, band(100.0).power_db);
        let five: Vec<_> = [140.0, 100.0, 120.0, 110.0, 130.0].iter().map(|&c| band(c)).collect();
        let v = concat_bands(&five).unwrap();
        assert_eq!(v.len(), 5120);
        assert_eq!(v[0], 100.0);
        assert_eq!(v[4 * 1024], 140.0);
        assert!(concat_bands(&[band(100.0), band(105.0)]).is_err());
    }

    #[test]
    fn config_validation() {
        PipelineConfig::desk().validate().unwrap();
        PipelineConfig::paper().validate().unwrap();
        let mut c = PipelineConfig::desk();
        c.movmedian_len = 32;
        assert!(c.validate().is_err());
        let mut c = PipelineConfig::desk();
        c.fft_size = 500;
        assert!(c.validate().is_err());
        let mut c = PipelineConfig::desk();
        c.stft_hop = c.stft_window_len + 1;
        assert!(c.validate().is_err());
    }

    #[test]
    fn csv_has_header_and_rows() {
        let csv = flat(4, -1.5).to_csv();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], "freq_hz,power_db");
        assert_eq!(lines.len(), 5);
        assert!(lines[1].ends_with(",-1.5"));
    }
}
