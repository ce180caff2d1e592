//! The complex-baseband sample carrier shared by every stage.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// A block of complex baseband samples plus the metadata needed to put
/// them back on an RF frequency axis.
#[derive(Debug, Clone, PartialEq)]
pub struct IqRecording {
    pub samples: Vec<Complex64>,
    pub sample_rate: f64,
    pub center_frequency: f64,
    pub seed: u64,
}

impl IqRecording {
    pub fn new(samples: Vec<Complex64>, sample_rate: f64, center_frequency: f64, seed: u64) -> Result<Self> {
        if !(sample_rate > 0.0) || !sample_rate.is_finite() {
            return invalid(format!("sample_rate must be positive, got {sample_rate}"));
        }
        if samples.is_empty() {
            return invalid("recording has no samples");
        }
        Ok(Self {
            samples,
            sample_rate,
            center_frequency,
            seed,
        })
    }

    /// All-zero recording of `len` samples.
    pub fn zeros(len: usize, sample_rate: f64, center_frequency: f64) -> Result<Self> {
        Self::new(vec![Complex64::new(0.0, 0.0); len], sample_rate, center_frequency, 0)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }

    /// Mean of |x|^2.
    pub fn mean_power(&self) -> f64 {
        self.samples.iter().map(|s| s.norm_sqr()).sum::<f64>() / self.samples.len() as f64
    }

    /// Copy of samples `[start, start + len)` as a new recording.
    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.samples.len() || len == 0 {
            return invalid(format!(
                "slice [{start}, {}) out of range for {} samples",
                start + len,
                self.samples.len()
            ));
        }
        Self::new(
            self.samples[start..start + len].to_vec(),
            self.sample_rate,
            self.center_frequency,
            self.seed,
        )
    }

    /// In-place `self += other`; lengths and rates must agree.
    pub fn add_assign(&mut self, other: &IqRecording) -> Result<()> {
        self.check_compatible(other)?;
        for (a, b) in self.samples.iter_mut().zip(&other.samples) {
            *a += *b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for s in &mut self.samples {
            *s *= factor;
        }
    }

    pub(crate) fn check_compatible(&self, other: &IqRecording) -> Result<()> {
        if self.samples.len() != other.samples.len() {
            return Err(Error::InvalidArgument(format!(
                "length mismatch: {} vs {} samples",
                self.samples.len(),
                other.samples.len()
            )));
        }
        if self.sample_rate != other.sample_rate {
            return Err(Error::InvalidArgument(format!(
                "sample rate mismatch: {} vs {} Hz",
                self.sample_rate, other.sample_rate
            )));
        }
        Ok(())
    }
}

/// `exp(j (w k + phi))` for k = 0, 1, ..., advanced by complex rotation and
/// re-anchored to the exact value every 1024 samples.
pub(crate) struct Oscillator {
    w: f64,
    phi: f64,
    k: usize,
    cur: Complex64,
    rot: Complex64,
}

impl Oscillator {
    pub(crate) fn new(w: f64, phi: f64) -> Self {
        Self {
            w,
            phi,
            k: 0,
            cur: Complex64::from_polar(1.0, phi),
            rot: Complex64::from_polar(1.0, w),
        }
    }

    #[inline]
    pub(crate) fn next(&mut self) -> Complex64 {
        let v = self.cur;
        self.k += 1;
        if self.k % 1024 == 0 {
            self.cur = Complex64::from_polar(1.0, self.w * self.k as f64 + self.phi);
        } else {
            self.cur *= self.rot;
        }
        v
    }
}

/// Number of samples covering `duration` seconds at `sample_rate`.
pub(crate) fn sample_count(sample_rate: f64, duration: f64) -> Result<usize> {
    if !(sample_rate > 0.0) || !sample_rate.is_finite() {
        return invalid(format!("sample_rate must be positive, got {sample_rate}"));
    }
    if !(duration > 0.0) || !duration.is_finite() {
        return invalid(format!("duration must be positive, got {duration}"));
    }
    let n = (duration * sample_rate).round();
    if n < 2.0 {
        return invalid(format!(
            "duration * sample_rate = {} is below two samples",
            duration * sample_rate
        ));
    }
    Ok(n as usize)
}

/// Binary capture state of the monitored device.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeviceState {
    Active,
    Idle,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oscillator_tracks_exact_phase() {
        let (w, phi) = (0.0123, 0.7);
        let mut o = Oscillator::new(w, phi);
        for k in 0..5000 {
            let v = o.next();
            let exact = Complex64::from_polar(1.0, w * k as f64 + phi);
            assert!((v - exact).norm() < 1e-12);
        }
    }

    #[test]
    fn validation() {
        assert!(IqRecording::new(vec![], 1.0, 0.0, 0).is_err());
        assert!(IqRecording::new(vec![Complex64::new(1.0, 0.0)], 0.0, 0.0, 0).is_err());
        let r = IqRecording::zeros(10, 5.0, 1.0).unwrap();
        assert_eq!(r.duration(), 2.0);
        assert!(r.slice(8, 3).is_err());
        assert!(sample_count(10.0, 0.1).is_err());
        assert_eq!(sample_count(2.5e6, 0.1).unwrap(), 250_000);
    }
}
