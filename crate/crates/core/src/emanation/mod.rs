//! Emanation synthesis: frequency-modulated clocks, square-wave computational
//! activity, and their amplitude-modulation product.
//!
//! A clock is `cos(2*pi*f0*t + (df/fm) * sin(2*pi*fm*t))`, whose spectrum is a
//! Bessel-weighted comb at `f0 +/- n*fm`. Activity is a truncated odd-harmonic
//! square wave. Multiplying the two mixes every clock line with every square
//! harmonic, producing lines at `f_clk +/- (2m-1)*f_sq`.

mod bessel;
pub mod catalog;

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng;
use crate::signal::{sample_count, IqRecording, Oscillator};

pub use bessel::bessel_j;
pub use catalog::{default_catalog, Catalog, APP_NAMES};

/// Frequency-modulated clock parameters. All frequencies are baseband
/// offsets from the recording's center frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClockSpec {
    pub f0: f64,
    pub fm: f64,
    pub delta_f: f64,
    /// Highest sideband order kept; orders `0..=n_harmonics` are retained.
    pub n_harmonics: usize,
    /// Per-order amplitude weight, index `n` for order `+/-n`.
    pub amplitude_profile: Vec<f64>,
}

impl ClockSpec {
    /// Clock with the default `1 / (1 + n)` amplitude profile.
    pub fn new(f0: f64, fm: f64, delta_f: f64, n_harmonics: usize) -> Self {
        Self {
            f0,
            fm,
            delta_f,
            n_harmonics,
            amplitude_profile: (0..=n_harmonics).map(|n| 1.0 / (1.0 + n as f64)).collect(),
        }
    }

    /// Same clock with unit weight on every order.
    pub fn with_flat_profile(mut self) -> Self {
        self.amplitude_profile = vec![1.0; self.n_harmonics + 1];
        self
    }

    /// Modulation index `delta_f / fm`.
    pub fn beta(&self) -> f64 {
        self.delta_f / self.fm
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.f0 > 0.0 && self.f0.is_finite()) {
            return invalid(format!("clock f0 must be positive, got {}", self.f0));
        }
        if !(self.fm > 0.0 && self.fm.is_finite()) {
            return invalid(format!("clock fm must be positive, got {}", self.fm));
        }
        if !(self.delta_f >= 0.0 && self.delta_f.is_finite()) {
            return invalid(format!("clock delta_f must be >= 0, got {}", self.delta_f));
        }
        if self.n_harmonics < 1 {
            return invalid("clock n_harmonics must be >= 1");
        }
        if self.amplitude_profile.len() != self.n_harmonics + 1 {
            return invalid(format!(
                "amplitude_profile has {} entries, expected n_harmonics + 1 = {}",
                self.amplitude_profile.len(),
                self.n_harmonics + 1
            ));
        }
        if self.amplitude_profile.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return invalid("amplitude_profile entries must be finite and >= 0");
        }
        Ok(())
    }
}

/// Square-wave computational activity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityWave {
    pub f_sq: f64,
    pub a_sq: f64,
    /// Number of odd harmonics `(2m - 1) * f_sq`, `m = 1..=n_terms`.
    pub n_terms: usize,
}

impl ActivityWave {
    pub fn new(f_sq: f64, a_sq: f64, n_terms: usize) -> Self {
        Self { f_sq, a_sq, n_terms }
    }

    pub fn highest_harmonic(&self) -> f64 {
        (2 * self.n_terms - 1) as f64 * self.f_sq
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.f_sq > 0.0 && self.f_sq.is_finite()) {
            return invalid(format!("square-wave f_sq must be positive, got {}", self.f_sq));
        }
        if !(self.a_sq > 0.0 && self.a_sq.is_finite()) {
            return invalid(format!("square-wave a_sq must be positive, got {}", self.a_sq));
        }
        if self.n_terms < 1 {
            return invalid("square-wave n_terms must be >= 1");
        }
        Ok(())
    }
}

/// User-visible phase of an app session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivityPhase {
    Entering,
    Configuring,
    Running,
    Exiting,
}

impl ActivityPhase {
    pub const ALL: [ActivityPhase; 4] = [
        ActivityPhase::Entering,
        ActivityPhase::Configuring,
        ActivityPhase::Running,
        ActivityPhase::Exiting,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            ActivityPhase::Entering => "entering",
            ActivityPhase::Configuring => "configuring",
            ActivityPhase::Running => "running",
            ActivityPhase::Exiting => "exiting",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == name)
    }
}

/// Time gating applied to the activity wave while a phase is in progress.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnvelopeShape {
    /// Always on.
    Continuous,
    /// On for the first `duty` fraction of each period.
    Bursts,
    /// Linear rise over each period, then reset.
    RampUp,
    /// Full on at the start of each period, linear fall.
    RampDown,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub shape: EnvelopeShape,
    pub period_s: f64,
    pub duty: f64,
}

impl Envelope {
    pub fn continuous() -> Self {
        Self {
            shape: EnvelopeShape::Continuous,
            period_s: 1.0,
            duty: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.period_s > 0.0 && self.period_s.is_finite()) {
            return invalid(format!("envelope period must be positive, got {}", self.period_s));
        }
        if !(self.duty > 0.0 && self.duty <= 1.0) {
            return invalid(format!("envelope duty must be in (0, 1], got {}", self.duty));
        }
        Ok(())
    }

    /// Gate value in `[0, 1]` at time `t`.
    #[inline]
    pub fn gain(&self, t: f64) -> f64 {
        let pos = (t / self.period_s).rem_euclid(1.0);
        match self.shape {
            EnvelopeShape::Continuous => 1.0,
            EnvelopeShape::Bursts => {
                if pos < self.duty {
                    1.0
                } else {
                    0.0
                }
            }
            EnvelopeShape::RampUp => pos,
            EnvelopeShape::RampDown => 1.0 - pos,
        }
    }
}

/// One (clock, activity) pair radiating inside the RF tile centered at
/// `band_center_hz`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmanationSource {
    pub band_center_hz: f64,
    pub clock: ClockSpec,
    pub wave: ActivityWave,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseActivity {
    pub phase: ActivityPhase,
    pub envelope: Envelope,
    pub sources: Vec<EmanationSource>,
}

/// Emanation parameters of one app, per activity phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppSignature {
    pub app_id: String,
    pub phases: Vec<PhaseActivity>,
}

impl AppSignature {
    pub fn phase(&self, phase: ActivityPhase) -> Option<&PhaseActivity> {
        self.phases.iter().find(|p| p.phase == phase)
    }

    /// Distinct band centers used by any source of this app.
    pub fn band_centers(&self) -> Vec<f64> {
        let mut centers: Vec<f64> = self
            .phases
            .iter()
            .flat_map(|p| p.sources.iter().map(|s| s.band_center_hz))
            .collect();
        centers.sort_by(f64::total_cmp);
        centers.dedup();
        centers
    }

    pub fn validate(&self) -> Result<()> {
        if self.app_id.is_empty() {
            return invalid("app_id must not be empty");
        }
        for (i, p) in self.phases.iter().enumerate() {
            if self.phases[..i].iter().any(|q| q.phase == p.phase) {
                return invalid(format!("app {}: phase {} listed twice", self.app_id, p.phase.name()));
            }
            if p.sources.is_empty() {
                return invalid(format!("app {}: phase {} has no sources", self.app_id, p.phase.name()));
            }
            p.envelope.validate()?;
            for s in &p.sources {
                s.clock.validate()?;
                s.wave.validate()?;
            }
        }
        Ok(())
    }
}

/// A discrete spectral line of a real-valued waveform: a cosine of
/// `magnitude` at `freq_hz`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralLine {
    pub freq_hz: f64,
    pub magnitude: f64,
}

/// Per-sample FM clock waveform with carrier phase `phi_c` and modulation
/// phase `phi_m`.
fn clock_samples(spec: &ClockSpec, sample_rate: f64, n: usize, phi_c: f64, phi_m: f64) -> Vec<f64> {
    let beta = spec.beta();
    let mut modulation = Oscillator::new(TAU * spec.fm / sample_rate, phi_m);
    (0..n)
        .map(|k| {
            let t = k as f64 / sample_rate;
            (TAU * spec.f0 * t + phi_c + beta * modulation.next().im).cos()
        })
        .collect()
}

/// Truncated square-wave series; odd harmonics via the Chebyshev recurrence
/// `cos(k x) = 2 cos(x) cos((k-1) x) - cos((k-2) x)`.
#[inline]
fn square_value(wave: &ActivityWave, theta: f64) -> f64 {
    square_from_cos(wave, theta.cos())
}

#[inline]
fn square_from_cos(wave: &ActivityWave, c1: f64) -> f64 {
    let two_c = 2.0 * c1;
    // cos(0*x), cos(1*x)
    let mut prev = 1.0;
    let mut cur = c1;
    let mut sum = c1;
    for m in 2..=wave.n_terms {
        let order = 2 * m - 1;
        // advance two orders: cur = cos((order-2)x) -> cos(order x)
        let next = two_c * cur - prev;
        let next2 = two_c * next - cur;
        prev = next;
        cur = next2;
        sum += cur / order as f64;
    }
    2.0 * wave.a_sq / PI * sum
}

fn check_nyquist(what: &'static str, freq_hz: f64, sample_rate: f64) -> Result<()> {
    let nyquist_hz = sample_rate / 2.0;
    if freq_hz >= nyquist_hz {
        return Err(Error::Aliasing {
            what,
            freq_hz,
            nyquist_hz,
        });
    }
    Ok(())
}

fn real_recording(values: Vec<f64>, sample_rate: f64, seed: u64) -> Result<IqRecording> {
    IqRecording::new(
        values.into_iter().map(|v| Complex64::new(v, 0.0)).collect(),
        sample_rate,
        0.0,
        seed,
    )
}

/// Sample the FM clock `cos(2*pi*f0*t + (df/fm) sin(2*pi*fm*t))` into the
/// real part of a recording.
pub fn synth_clock(spec: &ClockSpec, sample_rate: f64, duration: f64) -> Result<IqRecording> {
    spec.validate()?;
    let n = sample_count(sample_rate, duration)?;
    check_nyquist("clock f0", spec.f0, sample_rate)?;
    real_recording(clock_samples(spec, sample_rate, n, 0.0, 0.0), sample_rate, 0)
}

/// Analytic clock comb: `2*n_harmonics + 1` lines at `f0 + n*fm`,
/// `n = -N..=N`, with magnitude `|J_n(df/fm)| * profile(|n|)`.
pub fn clock_spectrum_analytic(spec: &ClockSpec) -> Result<Vec<SpectralLine>> {
    spec.validate()?;
    let beta = spec.beta();
    let n_max = spec.n_harmonics as i32;
    Ok((-n_max..=n_max)
        .map(|n| SpectralLine {
            freq_hz: spec.f0 + n as f64 * spec.fm,
            magnitude: bessel_j(n, beta).abs() * spec.amplitude_profile[n.unsigned_abs() as usize],
        })
        .collect())
}

/// Sample the truncated square wave
/// `(2 A / pi) * sum_m cos((2m-1) 2 pi f_sq t) / (2m-1)`.
pub fn synth_square(wave: &ActivityWave, sample_rate: f64, duration: f64) -> Result<IqRecording> {
    wave.validate()?;
    let n = sample_count(sample_rate, duration)?;
    check_nyquist("square-wave harmonic", wave.highest_harmonic(), sample_rate)?;
    let values = (0..n)
        .map(|k| square_value(wave, TAU * wave.f_sq * k as f64 / sample_rate))
        .collect();
    real_recording(values, sample_rate, 0)
}

/// Pointwise product of a clock and an activity waveform; metadata follows
/// the clock.
pub fn modulate(clock: &IqRecording, activity: &IqRecording) -> Result<IqRecording> {
    clock.check_compatible(activity)?;
    let samples = clock
        .samples
        .iter()
        .zip(&activity.samples)
        .map(|(c, a)| c * a)
        .collect();
    IqRecording::new(samples, clock.sample_rate, clock.center_frequency, clock.seed)
}

/// Merge lines whose frequencies coincide (to 1e-6 Hz) by summing magnitudes.
fn coalesce(mut lines: Vec<SpectralLine>) -> Vec<SpectralLine> {
    lines.sort_by(|a, b| a.freq_hz.total_cmp(&b.freq_hz));
    let mut out: Vec<SpectralLine> = Vec::with_capacity(lines.len());
    for line in lines {
        match out.last_mut() {
            Some(last) if (line.freq_hz - last.freq_hz).abs() < 1e-6 => last.magnitude += line.magnitude,
            _ => out.push(line),
        }
    }
    out
}

/// Analytic emanation spectrum: every clock line at `f_clk` mixed with every
/// square harmonic, giving lines at `f_clk +/- (2m-1) f_sq` with magnitude
/// `A_clk(n) * A_sq / ((2m-1) pi)`. Coinciding lines are summed; lines of
/// zero magnitude are dropped.
pub fn emanation_spectrum_analytic(spec: &ClockSpec, wave: &ActivityWave) -> Result<Vec<SpectralLine>> {
    wave.validate()?;
    let clock = clock_spectrum_analytic(spec)?;
    let mut lines = Vec::with_capacity(clock.len() * wave.n_terms * 2);
    for c in &clock {
        for m in 1..=wave.n_terms {
            let order = (2 * m - 1) as f64;
            let magnitude = c.magnitude * wave.a_sq / (order * PI);
            for sign in [-1.0, 1.0] {
                lines.push(SpectralLine {
                    freq_hz: c.freq_hz + sign * order * wave.f_sq,
                    magnitude,
                });
            }
        }
    }
    Ok(coalesce(lines).into_iter().filter(|l| l.magnitude > 0.0).collect())
}

/// Accumulate `sources` (with phase gating) into `out`; per-source initial
/// phases are drawn from `seed`.
fn accumulate_sources<'a>(
    out: &mut [f64],
    sources: impl Iterator<Item = &'a EmanationSource>,
    envelope: &Envelope,
    sample_rate: f64,
    seed: u64,
) -> Result<()> {
    let n = out.len();
    for (i, src) in sources.enumerate() {
        src.clock.validate()?;
        src.wave.validate()?;
        check_nyquist("clock f0", src.clock.f0, sample_rate)?;
        check_nyquist("square-wave harmonic", src.wave.highest_harmonic(), sample_rate)?;
        let mut r = rng::stream(seed, "source-phase", i as u64);
        let phi_c = r.random::<f64>() * TAU;
        let phi_m = r.random::<f64>() * TAU;
        let phi_s = r.random::<f64>() * TAU;
        let tau = r.random::<f64>() * envelope.period_s;
        let clock = clock_samples(&src.clock, sample_rate, n, phi_c, phi_m);
        let mut square = Oscillator::new(TAU * src.wave.f_sq / sample_rate, phi_s);
        for (k, (o, c)) in out.iter_mut().zip(clock).enumerate() {
            let t = k as f64 / sample_rate;
            let g = envelope.gain(t + tau);
            let s = square.next().re;
            if g != 0.0 {
                *o += c * g * square_from_cos(&src.wave, s);
            }
        }
    }
    Ok(())
}

/// Synthesize the emanation of `sig` in `phase` for the RF tile centered at
/// `band_center_hz`: the sum over that tile's sources of clock x gated square
/// wave. Deterministic in `(sig, phase, band, seed)`; the seed only moves
/// initial phases.
pub fn synth_app_emanation(
    sig: &AppSignature,
    phase: ActivityPhase,
    band_center_hz: f64,
    sample_rate: f64,
    duration: f64,
    seed: u64,
) -> Result<IqRecording> {
    let activity = sig.phase(phase).ok_or_else(|| {
        Error::InvalidArgument(format!("app {} has no phase {}", sig.app_id, phase.name()))
    })?;
    activity.envelope.validate()?;
    let n = sample_count(sample_rate, duration)?;
    let mut out = vec![0.0; n];
    accumulate_sources(
        &mut out,
        activity
            .sources
            .iter()
            .filter(|s| (s.band_center_hz - band_center_hz).abs() < 1.0),
        &activity.envelope,
        sample_rate,
        seed,
    )?;
    let mut rec = real_recording(out, sample_rate, seed)?;
    rec.center_frequency = band_center_hz;
    Ok(rec)
}

/// Continuous emanation from free-standing `(clock, wave)` pairs, used by the
/// obfuscation daemon.
pub(crate) fn synth_pairs(
    pairs: &[(ClockSpec, ActivityWave)],
    sample_rate: f64,
    n: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let sources: Vec<EmanationSource> = pairs
        .iter()
        .map(|(c, w)| EmanationSource {
            band_center_hz: 0.0,
            clock: c.clone(),
            wave: w.clone(),
        })
        .collect();
    let mut out = vec![0.0; n];
    accumulate_sources(&mut out, sources.iter(), &Envelope::continuous(), sample_rate, seed)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sig_with(phase: ActivityPhase) -> AppSignature {
        AppSignature {
            app_id: "t".into(),
            phases: vec![PhaseActivity {
                phase,
                envelope: Envelope::continuous(),
                sources: vec![EmanationSource {
                    band_center_hz: 0.0,
                    clock: ClockSpec::new(2_000.0, 200.0, 100.0, 2),
                    wave: ActivityWave::new(50.0, 1.0, 2),
                }],
            }],
        }
    }

    #[test]
    fn zero_duration_rejected() {
        let spec = ClockSpec::new(1_000.0, 100.0, 0.0, 1);
        assert!(matches!(synth_clock(&spec, 10_000.0, 0.0), Err(Error::InvalidArgument(_))));
        assert!(matches!(synth_clock(&spec, 0.0, 1.0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn clock_above_nyquist_is_aliasing() {
        let spec = ClockSpec::new(6_000.0, 100.0, 0.0, 1);
        assert!(matches!(synth_clock(&spec, 10_000.0, 1.0), Err(Error::Aliasing { .. })));
    }

    #[test]
    fn square_aliasing_guard() {
        let wave = ActivityWave::new(100.0, 1.0, 50);
        // 99 * 100 Hz = 9.9 kHz >= 5 kHz Nyquist
        assert!(matches!(synth_square(&wave, 10_000.0, 1.0), Err(Error::Aliasing { .. })));
    }

    #[test]
    fn square_single_term_is_unit_cosine() {
        let wave = ActivityWave::new(10.0, PI / 2.0, 1);
        let rec = synth_square(&wave, 1_000.0, 1.0).unwrap();
        for (k, s) in rec.samples.iter().enumerate() {
            let expect = (TAU * 10.0 * k as f64 / 1_000.0).cos();
            assert!((s.re - expect).abs() < 1e-12);
            assert_eq!(s.im, 0.0);
        }
    }

    #[test]
    fn square_recurrence_matches_direct_sum() {
        let wave = ActivityWave::new(7.0, 1.3, 6);
        for k in 0..200 {
            let theta = 0.037 * k as f64;
            let direct: f64 = (1..=6)
                .map(|m| {
                    let o = (2 * m - 1) as f64;
                    (o * theta).cos() / o
                })
                .sum::<f64>()
                * 2.0
                * 1.3
                / PI;
            assert!((square_value(&wave, theta) - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn modulate_by_ones_is_identity() {
        let clock = synth_clock(&ClockSpec::new(1_000.0, 100.0, 50.0, 2), 10_000.0, 0.1).unwrap();
        let ones = IqRecording::new(vec![Complex64::new(1.0, 0.0); clock.len()], 10_000.0, 0.0, 0).unwrap();
        assert_eq!(modulate(&clock, &ones).unwrap(), clock);
    }

    #[test]
    fn modulate_rejects_mismatch() {
        let a = IqRecording::zeros(10, 100.0, 0.0).unwrap();
        let b = IqRecording::zeros(11, 100.0, 0.0).unwrap();
        let c = IqRecording::zeros(10, 200.0, 0.0).unwrap();
        assert!(modulate(&a, &b).is_err());
        assert!(modulate(&a, &c).is_err());
    }

    #[test]
    fn analytic_clock_comb_shape() {
        let spec = ClockSpec::new(10_000.0, 300.0, 0.0, 3).with_flat_profile();
        let lines = clock_spectrum_analytic(&spec).unwrap();
        assert_eq!(lines.len(), 7);
        let nonzero: Vec<_> = lines.iter().filter(|l| l.magnitude > 0.0).collect();
        assert_eq!(nonzero.len(), 1);
        assert_eq!(nonzero[0].freq_hz, 10_000.0);
        assert_eq!(nonzero[0].magnitude, 1.0);
        for w in lines.windows(2) {
            assert_eq!(w[1].freq_hz - w[0].freq_hz, 300.0);
        }
    }

    #[test]
    fn default_profile_is_harmonic_decay() {
        let spec = ClockSpec::new(1.0, 1.0, 0.0, 3);
        assert_eq!(spec.amplitude_profile, vec![1.0, 0.5, 1.0 / 3.0, 0.25]);
    }

    #[test]
    fn single_mixing_pair() {
        // delta_f = 0 leaves only the n = 0 clock line
        let spec = ClockSpec::new(5_000.0, 400.0, 0.0, 1);
        let wave = ActivityWave::new(100.0, 1.0, 1);
        let lines = emanation_spectrum_analytic(&spec, &wave).unwrap();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0].freq_hz, 4_900.0);
        assert_eq!(lines[1].freq_hz, 5_100.0);
        assert!((lines[0].magnitude - 1.0 / PI).abs() < 1e-15);
    }

    #[test]
    fn emanation_lines_linear_in_a_sq() {
        let spec = ClockSpec::new(5_000.0, 400.0, 200.0, 2);
        let a = emanation_spectrum_analytic(&spec, &ActivityWave::new(60.0, 1.0, 3)).unwrap();
        let b = emanation_spectrum_analytic(&spec, &ActivityWave::new(60.0, 2.0, 3)).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.freq_hz, y.freq_hz);
            assert!((y.magnitude - 2.0 * x.magnitude).abs() < 1e-15);
        }
    }

    #[test]
    fn coinciding_lines_are_summed() {
        // fm == 2 * f_sq makes f0 + fm - f_sq == f0 - fm + 3 f_sq
        let spec = ClockSpec::new(5_000.0, 200.0, 100.0, 1).with_flat_profile();
        let wave = ActivityWave::new(100.0, 1.0, 2);
        let lines = emanation_spectrum_analytic(&spec, &wave).unwrap();
        for w in lines.windows(2) {
            assert!(w[1].freq_hz > w[0].freq_hz);
        }
        let j0 = bessel_j(0, 0.5);
        let j1 = bessel_j(1, 0.5).abs();
        // 5100 Hz: n=0,m=1,+ ; n=+1,m=1,- ; n=-1,m=2,+ (j1/3)
        let at = lines.iter().find(|l| l.freq_hz == 5_100.0).unwrap();
        let expect = (j0 + j1 + j1 / 3.0) / PI;
        assert!((at.magnitude - expect).abs() < 1e-14);
    }

    #[test]
    fn app_emanation_deterministic_and_phase_checked() {
        let sig = sig_with(ActivityPhase::Running);
        let a = synth_app_emanation(&sig, ActivityPhase::Running, 0.0, 10_000.0, 0.05, 3).unwrap();
        let b = synth_app_emanation(&sig, ActivityPhase::Running, 0.0, 10_000.0, 0.05, 3).unwrap();
        assert_eq!(a, b);
        let c = synth_app_emanation(&sig, ActivityPhase::Running, 0.0, 10_000.0, 0.05, 4).unwrap();
        assert_ne!(a, c);
        assert!(matches!(
            synth_app_emanation(&sig, ActivityPhase::Exiting, 0.0, 10_000.0, 0.05, 3),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn other_band_is_silent() {
        let sig = sig_with(ActivityPhase::Running);
        let rec = synth_app_emanation(&sig, ActivityPhase::Running, 10e6, 10_000.0, 0.01, 3).unwrap();
        assert!(rec.samples.iter().all(|s| s.re == 0.0));
        assert_eq!(rec.center_frequency, 10e6);
    }

    #[test]
    fn envelope_shapes() {
        let period = 0.01;
        let e = |shape, duty| Envelope { shape, period_s: period, duty };
        assert_eq!(e(EnvelopeShape::Continuous, 1.0).gain(0.0037), 1.0);
        assert_eq!(e(EnvelopeShape::Bursts, 0.25).gain(0.001), 1.0);
        assert_eq!(e(EnvelopeShape::Bursts, 0.25).gain(0.005), 0.0);
        assert!((e(EnvelopeShape::RampUp, 1.0).gain(0.0025) - 0.25).abs() < 1e-12);
        assert!((e(EnvelopeShape::RampDown, 1.0).gain(0.0025) - 0.75).abs() < 1e-12);
        assert!((e(EnvelopeShape::RampUp, 1.0).gain(0.0125) - 0.25).abs() < 1e-9);
    }
}
