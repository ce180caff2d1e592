use std::cell::RefCell;
use std::f64::consts::TAU;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

pub(crate) fn forward(n: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_forward(n))
}

pub(crate) fn inverse(n: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(n))
}

/// Analysis windows. Both are the periodic (DFT-even) variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Window {
    Hann,
    Hamming,
}

impl Window {
    pub fn name(self) -> &'static str {
        match self {
            Window::Hann => "hann",
            Window::Hamming => "hamming",
        }
    }

    pub fn coefficients(self, n: usize) -> Vec<f64> {
        let (a0, a1) = match self {
            Window::Hann => (0.5, 0.5),
            Window::Hamming => (0.54, 0.46),
        };
        (0..n).map(|i| a0 - a1 * (TAU * i as f64 / n as f64).cos()).collect()
    }
}

/// |FFT(x * w)|^2 / n, fft-shifted so index 0 is the most negative frequency.
pub(crate) fn periodogram_into(
    fft: &dyn Fft<f64>,
    samples: &[Complex64],
    window: &[f64],
    buf: &mut Vec<Complex64>,
    scratch: &mut Vec<Complex64>,
    out: &mut [f64],
) {
    let n = window.len();
    buf.clear();
    buf.extend(samples.iter().zip(window).map(|(s, w)| s * w));
    scratch.resize(fft.get_inplace_scratch_len(), Complex64::new(0.0, 0.0));
    fft.process_with_scratch(buf, scratch);
    let half = n / 2;
    let inv_n = 1.0 / n as f64;
    for (k, x) in buf.iter().enumerate() {
        // bin k goes to shifted position (k + half) mod n
        out[(k + half) % n] = x.norm_sqr() * inv_n;
    }
}
