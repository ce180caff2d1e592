//! Capture simulation: path loss and antenna pattern, ambient interference,
//! receiver noise, and the obfuscation daemon.

use std::f64::consts::TAU;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dsp::fft;
use crate::emanation::{synth_app_emanation, synth_pairs, ActivityPhase, ActivityWave, AppSignature, ClockSpec};
use crate::error::{invalid, Result};
use crate::rng;
use crate::signal::{sample_count, DeviceState, IqRecording, Oscillator};

/// Side-lobe floor of the directional antenna pattern, as a power ratio (-20 dB).
const SIDE_FLOOR: f64 = 0.01;
const NOISE_BLOCK: usize = 4096;

/// dB values that may be `-inf` ("off"); written as the string `"-inf"`
/// because JSON has no infinities.
pub mod db_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if *v < 0.0 {
            s.serialize_str("-inf")
        } else {
            Err(serde::ser::Error::custom("dB value must be finite or -inf"))
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) if t == "-inf" => Ok(f64::NEG_INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("expected a number or \"-inf\", got {t:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub distance_m: f64,
    pub path_loss_exponent: f64,
    pub antenna_gain_dbi: f64,
    /// 90 deg faces the front of the headset, 270 deg the back of the head.
    pub orientation_deg: f64,
    pub head_blockage_db: f64,
}

impl Default for ChannelSpec {
    fn default() -> Self {
        Self {
            distance_m: 1.0,
            path_loss_exponent: 2.0,
            antenna_gain_dbi: 6.0,
            orientation_deg: 90.0,
            head_blockage_db: 8.0,
        }
    }
}

impl ChannelSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.distance_m > 0.0 && self.distance_m.is_finite()) {
            return invalid(format!("channel distance must be positive, got {}", self.distance_m));
        }
        if !(1.5..=4.0).contains(&self.path_loss_exponent) {
            return invalid(format!(
                "path_loss_exponent must be in [1.5, 4], got {}",
                self.path_loss_exponent
            ));
        }
        if !self.antenna_gain_dbi.is_finite() || !self.orientation_deg.is_finite() || !(self.head_blockage_db >= 0.0) {
            return invalid("antenna gain, orientation and head blockage must be finite (blockage >= 0)");
        }
        Ok(())
    }

    pub fn normalized_orientation(&self) -> f64 {
        self.orientation_deg.rem_euclid(360.0)
    }
}

/// Amplitude factor of the antenna/head pattern at `orientation_deg`.
///
/// Raised-cosine main lobe (`sin^2` in power) peaking at 90 deg over a
/// -20 dB side floor at 0/180 deg; angles in (180, 360) additionally lose
/// `head_blockage_db`.
pub fn orientation_gain(orientation_deg: f64, head_blockage_db: f64) -> f64 {
    let theta = orientation_deg.rem_euclid(360.0);
    let s = theta.to_radians().sin();
    let power = SIDE_FLOOR + (1.0 - SIDE_FLOOR) * s * s;
    let rear = if theta > 180.0 && theta < 360.0 {
        10f64.powf(-head_blockage_db / 20.0)
    } else {
        1.0
    };
    power.sqrt() * rear
}

/// Linear amplitude gain of the headset-to-eavesdropper channel.
pub fn channel_gain(chan: &ChannelSpec) -> f64 {
    10f64.powf(chan.antenna_gain_dbi / 20.0)
        * chan.distance_m.powf(-chan.path_loss_exponent / 2.0)
        * orientation_gain(chan.orientation_deg, chan.head_blockage_db)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Carrier {
    pub offset_hz: f64,
    pub power_db: f64,
    pub bandwidth_hz: f64,
}

/// Quasi-stationary ambient transmitters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterferenceSpec {
    pub carriers: Vec<Carrier>,
    /// Largest fractional power change per second.
    pub drift_rate: f64,
}

impl Default for InterferenceSpec {
    fn default() -> Self {
        let c = |offset_hz, power_db, bandwidth_hz| Carrier {
            offset_hz,
            power_db,
            bandwidth_hz,
        };
        Self {
            carriers: vec![
                c(-900e3, 25.0, 30e3),
                c(-350e3, 30.0, 0.0),
                c(150e3, 20.0, 60e3),
                c(1.05e6, 22.0, 20e3),
            ],
            drift_rate: 0.005,
        }
    }
}

impl InterferenceSpec {
    pub fn none() -> Self {
        Self {
            carriers: Vec::new(),
            drift_rate: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for c in &self.carriers {
            if !(c.bandwidth_hz >= 0.0) || !c.offset_hz.is_finite() || !c.power_db.is_finite() {
                return invalid(format!("invalid interference carrier {c:?}"));
            }
        }
        if !(self.drift_rate.abs() <= 0.01) {
            return invalid(format!("interference drift_rate must be within +/-0.01/s, got {}", self.drift_rate));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Per-sample complex noise power relative to a unit emanation
    /// amplitude; `-inf` disables noise.
    #[serde(with = "db_serde")]
    pub noise_power_db: f64,
    /// Linear-in-dB spectral tilt across the captured band.
    pub floor_tilt_db_per_band: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            noise_power_db: -5.0,
            floor_tilt_db_per_band: 3.0,
        }
    }
}

impl NoiseSpec {
    pub fn noiseless() -> Self {
        Self {
            noise_power_db: f64::NEG_INFINITY,
            floor_tilt_db_per_band: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.noise_power_db.is_nan() || self.noise_power_db == f64::INFINITY || !self.floor_tilt_db_per_band.is_finite() {
            return invalid("noise power must be finite or -inf and tilt finite");
        }
        Ok(())
    }
}

/// A full simulated capture scenario for one RF tile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub signature: AppSignature,
    pub phase: ActivityPhase,
    pub channel: ChannelSpec,
    pub interference: InterferenceSpec,
    pub noise: NoiseSpec,
    pub sample_rate: f64,
    pub duration: f64,
    pub band_center_hz: f64,
    pub seed: u64,
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        self.signature.validate()?;
        if self.signature.phase(self.phase).is_none() {
            return invalid(format!(
                "app {} has no phase {}",
                self.signature.app_id,
                self.phase.name()
            ));
        }
        self.channel.validate()?;
        self.interference.validate()?;
        self.noise.validate()?;
        sample_count(self.sample_rate, self.duration)?;
        for c in &self.interference.carriers {
            if c.offset_hz.abs() > self.sample_rate / 2.0 {
                return invalid(format!(
                    "carrier at {} Hz lies outside +/-{} Hz",
                    c.offset_hz,
                    self.sample_rate / 2.0
                ));
            }
        }
        Ok(())
    }

    pub fn with_band(&self, band_center_hz: f64) -> Self {
        Self {
            band_center_hz,
            ..self.clone()
        }
    }

    fn band_key(&self) -> u64 {
        self.band_center_hz.round() as u64
    }
}

/// Defensive daemon emitting extra square-wave-modulated clocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObfuscationSpec {
    pub daemon_clocks: Vec<ClockSpec>,
    pub daemon_waves: Vec<ActivityWave>,
    #[serde(with = "db_serde")]
    pub power_db: f64,
    pub randomize_per_capture: bool,
}

impl Default for ObfuscationSpec {
    fn default() -> Self {
        Self {
            daemon_clocks: vec![
                ClockSpec::new(300e3, 60e3, 36e3, 1),
                ClockSpec::new(500e3, 90e3, 54e3, 1),
                ClockSpec::new(700e3, 45e3, 27e3, 1),
                ClockSpec::new(850e3, 75e3, 45e3, 1),
            ],
            daemon_waves: vec![
                ActivityWave::new(20e3, 1.0, 2),
                ActivityWave::new(35e3, 1.0, 2),
                ActivityWave::new(15e3, 1.0, 2),
                ActivityWave::new(28e3, 1.0, 2),
            ],
            power_db: 0.0,
            randomize_per_capture: true,
        }
    }
}

impl ObfuscationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.daemon_clocks.is_empty() || self.daemon_waves.is_empty() {
            return invalid("obfuscation daemon needs at least one clock and one wave");
        }
        if self.power_db.is_nan() || self.power_db == f64::INFINITY {
            return invalid("obfuscation power must be finite or -inf");
        }
        for c in &self.daemon_clocks {
            c.validate()?;
        }
        for w in &self.daemon_waves {
            w.validate()?;
        }
        Ok(())
    }

    pub fn with_power(&self, power_db: f64) -> Self {
        Self {
            power_db,
            ..self.clone()
        }
    }
}

/// Sum of ambient carriers. Zero-bandwidth carriers are pure tones; the
/// others are Gaussian noise with a flat spectrum `bandwidth_hz` wide,
/// synthesized by windowed overlap-add of random spectra. Per-carrier power
/// follows `P (1 + s * drift_rate * t)` with `s` in [-1, 1] drawn from the
/// seed.
pub fn gen_interference(spec: &InterferenceSpec, sample_rate: f64, duration: f64, seed: u64) -> Result<IqRecording> {
    spec.validate()?;
    let n = sample_count(sample_rate, duration)?;
    let mut out = vec![Complex64::new(0.0, 0.0); n];
    let mut spread = Vec::new();
    for (i, c) in spec.carriers.iter().enumerate() {
        if c.offset_hz.abs() > sample_rate / 2.0 {
            return invalid(format!(
                "carrier at {} Hz lies outside +/-{} Hz",
                c.offset_hz,
                sample_rate / 2.0
            ));
        }
        let mut r = rng::stream(seed, "carrier", i as u64);
        let phase0 = r.random::<f64>() * TAU;
        let drift = (2.0 * r.random::<f64>() - 1.0) * spec.drift_rate;
        let p0 = 10f64.powf(c.power_db / 10.0);
        let power = move |t: f64| p0 * (1.0 + drift * t).max(0.0);
        if c.bandwidth_hz > 0.0 {
            spread.push((c, power));
            continue;
        }
        let mut carrier = Oscillator::new(TAU * c.offset_hz / sample_rate, phase0);
        for (k, o) in out.iter_mut().enumerate() {
            *o += carrier.next() * power(k as f64 / sample_rate).sqrt();
        }
    }
    if !spread.is_empty() {
        let block = NOISE_BLOCK;
        let hop = block / 2;
        let bin_hz = sample_rate / block as f64;
        let bins: Vec<Vec<usize>> = spread
            .iter()
            .map(|(c, _)| {
                let lo = ((c.offset_hz - c.bandwidth_hz / 2.0) / bin_hz).ceil() as i64;
                let hi = ((c.offset_hz + c.bandwidth_hz / 2.0) / bin_hz).floor() as i64;
                let range: Vec<i64> = if hi < lo { vec![(c.offset_hz / bin_hz).round() as i64] } else { (lo..=hi).collect() };
                range.into_iter().map(|b| b.rem_euclid(block as i64) as usize).collect()
            })
            .collect();
        let window: Vec<f64> = (0..block).map(|k| (std::f64::consts::PI * (k as f64 + 0.5) / block as f64).sin()).collect();
        let plan = fft::inverse(block);
        let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
        let mut buf = vec![Complex64::new(0.0, 0.0); block];
        let mut r = rng::stream(seed, "carrier-spectra", 0);
        // blocks start half a block early so the first samples get full power
        let mut start = -(hop as i64);
        while start < n as i64 {
            buf.iter_mut().for_each(|b| *b = Complex64::new(0.0, 0.0));
            let t_mid = (start as f64 + hop as f64).max(0.0) / sample_rate;
            for ((_, power), bins) in spread.iter().zip(&bins) {
                let sigma = (power(t_mid) / (2.0 * bins.len() as f64)).sqrt();
                for &b in bins {
                    let re: f64 = StandardNormal.sample(&mut r);
                    let im: f64 = StandardNormal.sample(&mut r);
                    buf[b] += Complex64::new(re, im) * sigma;
                }
            }
            plan.process_with_scratch(&mut buf, &mut scratch);
            for (k, (v, w)) in buf.iter().zip(&window).enumerate() {
                let idx = start + k as i64;
                if idx >= 0 && (idx as usize) < n {
                    out[idx as usize] += v * w;
                }
            }
            start += hop as i64;
        }
    }
    IqRecording::new(out, sample_rate, 0.0, seed)
}

/// Complex Gaussian receiver noise with a linear-in-dB tilt across the band,
/// synthesized block-wise in the frequency domain.
pub fn gen_noise(spec: &NoiseSpec, sample_rate: f64, n: usize, seed: u64) -> Result<Vec<Complex64>> {
    spec.validate()?;
    if spec.noise_power_db == f64::NEG_INFINITY {
        return Ok(vec![Complex64::new(0.0, 0.0); n]);
    }
    let _ = sample_rate;
    let sigma = 10f64.powf(spec.noise_power_db / 20.0);
    let block = NOISE_BLOCK;
    // gain[k] for unshifted bin k, normalized to unit mean
    let mut gain: Vec<f64> = (0..block)
        .map(|k| {
            let rel = if k < block / 2 { k as f64 } else { k as f64 - block as f64 } / block as f64;
            10f64.powf(spec.floor_tilt_db_per_band * rel / 10.0)
        })
        .collect();
    let mean = gain.iter().sum::<f64>() / block as f64;
    gain.iter_mut().for_each(|g| *g = (*g / mean).sqrt());
    let plan = fft::inverse(block);
    let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
    let mut r = rng::stream(seed, "noise", 0);
    let scale = sigma * std::f64::consts::FRAC_1_SQRT_2 / (block as f64).sqrt();
    let mut out = Vec::with_capacity(n + block);
    let mut buf = vec![Complex64::new(0.0, 0.0); block];
    while out.len() < n {
        for (b, g) in buf.iter_mut().zip(&gain) {
            let re: f64 = StandardNormal.sample(&mut r);
            let im: f64 = StandardNormal.sample(&mut r);
            *b = Complex64::new(re, im) * (g * scale);
        }
        plan.process_with_scratch(&mut buf, &mut scratch);
        out.extend_from_slice(&buf);
    }
    out.truncate(n);
    Ok(out)
}

/// Daemon emanation at `power_db`; with `randomize_per_capture` the clock
/// and wave frequencies jitter by up to +/-15% per seed.
pub fn gen_obfuscation(obf: &ObfuscationSpec, sample_rate: f64, duration: f64, seed: u64) -> Result<IqRecording> {
    obf.validate()?;
    let n = sample_count(sample_rate, duration)?;
    if obf.power_db == f64::NEG_INFINITY {
        return IqRecording::new(vec![Complex64::new(0.0, 0.0); n], sample_rate, 0.0, seed);
    }
    let mut r = rng::stream(seed, "obfuscation-jitter", 0);
    let mut jitter = |x: f64| {
        if obf.randomize_per_capture {
            x * (1.0 + 0.3 * (r.random::<f64>() - 0.5))
        } else {
            x
        }
    };
    let pairs: Vec<(ClockSpec, ActivityWave)> = obf
        .daemon_clocks
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let w = &obf.daemon_waves[i % obf.daemon_waves.len()];
            let mut clock = c.clone();
            let beta = clock.beta();
            clock.f0 = jitter(c.f0);
            clock.fm = jitter(c.fm);
            clock.delta_f = beta * clock.fm;
            let mut wave = w.clone();
            wave.f_sq = jitter(w.f_sq);
            (clock, wave)
        })
        .collect();
    let amp = 10f64.powf(obf.power_db / 20.0);
    let values = synth_pairs(&pairs, sample_rate, n, rng::derive_seed(seed, "obfuscation-phase", 0))?;
    IqRecording::new(
        values.into_iter().map(|v| Complex64::new(v * amp, 0.0)).collect(),
        sample_rate,
        0.0,
        seed,
    )
}

/// Simulate one capture of `scene` in `state`.
///
/// Active and Idle captures of the same scene share the interference
/// realization and draw independent receiver noise.
pub fn capture(scene: &SceneConfig, state: DeviceState, obf: Option<&ObfuscationSpec>) -> Result<IqRecording> {
    scene.validate()?;
    let interference = scene_interference(scene)?;
    capture_with(scene, state, obf, interference)
}

/// Active and Idle captures of `scene`, sharing one interference draw.
pub fn capture_pair(scene: &SceneConfig, obf: Option<&ObfuscationSpec>) -> Result<(IqRecording, IqRecording)> {
    scene.validate()?;
    let interference = scene_interference(scene)?;
    let active = capture_with(scene, DeviceState::Active, obf, interference.clone())?;
    let idle = capture_with(scene, DeviceState::Idle, None, interference)?;
    Ok((active, idle))
}

fn scene_interference(scene: &SceneConfig) -> Result<IqRecording> {
    gen_interference(
        &scene.interference,
        scene.sample_rate,
        scene.duration,
        rng::derive_seed(scene.seed, "interference", scene.band_key()),
    )
}

fn capture_with(
    scene: &SceneConfig,
    state: DeviceState,
    obf: Option<&ObfuscationSpec>,
    mut rec: IqRecording,
) -> Result<IqRecording> {
    let band = scene.band_key();
    let n = rec.len();
    if state == DeviceState::Active {
        let gain = channel_gain(&scene.channel);
        let mut em = synth_app_emanation(
            &scene.signature,
            scene.phase,
            scene.band_center_hz,
            scene.sample_rate,
            scene.duration,
            rng::derive_seed(scene.seed, "emanation", band),
        )?;
        if let Some(obf) = obf {
            let daemon = gen_obfuscation(
                obf,
                scene.sample_rate,
                scene.duration,
                rng::derive_seed(scene.seed, "obfuscation", band),
            )?;
            em.add_assign(&daemon)?;
        }
        for (o, e) in rec.samples.iter_mut().zip(&em.samples) {
            *o += e * gain;
        }
    }
    let label = match state {
        DeviceState::Active => "noise-active",
        DeviceState::Idle => "noise-idle",
    };
    if scene.noise.noise_power_db != f64::NEG_INFINITY {
        let noise = gen_noise(&scene.noise, scene.sample_rate, n, rng::derive_seed(scene.seed, label, band))?;
        for (o, z) in rec.samples.iter_mut().zip(noise) {
            *o += z;
        }
    }
    rec.center_frequency = scene.band_center_hz;
    rec.seed = scene.seed;
    Ok(rec)
}
