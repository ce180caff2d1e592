//! The shipped set of app signatures and its structured-text form.
//!
//! Parameters are drawn once from a fixed-seed generator and quantized to
//! 1 kHz, so the catalog is stable across builds. Every app radiates one
//! clock/activity pair in each RF tile; all four phases share the pairs and
//! differ only in their time envelope.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    ActivityPhase, ActivityWave, AppSignature, ClockSpec, EmanationSource, Envelope, EnvelopeShape,
    PhaseActivity,
};
use crate::error::{invalid, Error, Result};
use crate::rng;

pub const APP_NAMES: [&str; 15] = [
    "aim",
    "bait",
    "epic",
    "slupies",
    "vspeedway",
    "beast",
    "duck",
    "stable",
    "master",
    "tennis",
    "cosmicflow",
    "openbrush",
    "hyperdash",
    "maestro",
    "conjure-cards",
];

/// Centers of the five contiguous 10 MHz tiles spanning 580-630 MHz.
pub const DEFAULT_BAND_CENTERS_HZ: [f64; 5] = [585e6, 595e6, 605e6, 615e6, 625e6];

const CATALOG_SEED: u64 = 0x5652_4541_5645_53;
const BURST_DUTY: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    #[serde(rename = "app")]
    pub apps: Vec<AppSignature>,
}

impl Catalog {
    pub fn new(apps: Vec<AppSignature>) -> Result<Self> {
        let c = Self { apps };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.apps.is_empty() {
            return invalid("catalog has no apps");
        }
        for (i, app) in self.apps.iter().enumerate() {
            app.validate()?;
            if self.apps[..i].iter().any(|a| a.app_id == app.app_id) {
                return invalid(format!("duplicate app_id {:?}", app.app_id));
            }
        }
        Ok(())
    }

    pub fn get(&self, app_id: &str) -> Option<&AppSignature> {
        self.apps.iter().find(|a| a.app_id == app_id)
    }

    pub fn index_of(&self, app_id: &str) -> Option<usize> {
        self.apps.iter().position(|a| a.app_id == app_id)
    }

    pub fn app_ids(&self) -> Vec<String> {
        self.apps.iter().map(|a| a.app_id.clone()).collect()
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let c: Catalog = toml::from_str(text).map_err(|e| Error::Format(format!("catalog: {e}")))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(format!("catalog: {e}")))
    }
}

fn khz(x: f64) -> f64 {
    (x / 1e3).round() * 1e3
}

fn phase_envelope(phase: ActivityPhase, period_s: f64) -> Envelope {
    let (shape, duty) = match phase {
        ActivityPhase::Entering => (EnvelopeShape::RampUp, 1.0),
        ActivityPhase::Configuring => (EnvelopeShape::Bursts, BURST_DUTY),
        ActivityPhase::Running => (EnvelopeShape::Continuous, 1.0),
        ActivityPhase::Exiting => (EnvelopeShape::RampDown, 1.0),
    };
    Envelope { shape, period_s, duty }
}

/// The 15-app catalog over `band_centers`.
///
/// Clock offsets sit in 350-880 kHz with fm in 40-160 kHz and square waves
/// in 10-50 kHz, so every line stays inside (0, 1.25 MHz) and survives the
/// 2.5 MHz desk sample rate.
pub fn catalog_for_bands(band_centers: &[f64]) -> Catalog {
    let mut r = rng::stream(CATALOG_SEED, "catalog", 0);
    let apps = APP_NAMES
        .iter()
        .map(|name| {
            let period_s = (5.0 + 3.0 * r.random::<f64>()) * 1e-3;
            let sources: Vec<EmanationSource> = band_centers
                .iter()
                .map(|&band_center_hz| {
                    let fm = khz(40e3 + 120e3 * r.random::<f64>());
                    let beta = 0.3 + 0.7 * r.random::<f64>();
                    let f0 = khz(350e3 + 530e3 * r.random::<f64>());
                    let f_sq = khz(10e3 + 40e3 * r.random::<f64>());
                    let a_sq = 0.8 + 0.4 * r.random::<f64>();
                    EmanationSource {
                        band_center_hz,
                        clock: ClockSpec::new(f0, fm, khz(beta * fm), 1),
                        wave: ActivityWave::new(f_sq, a_sq, 2),
                    }
                })
                .collect();
            AppSignature {
                app_id: name.to_string(),
                phases: ActivityPhase::ALL
                    .iter()
                    .map(|&phase| PhaseActivity {
                        phase,
                        envelope: phase_envelope(phase, period_s),
                        sources: sources.clone(),
                    })
                    .collect(),
            }
        })
        .collect();
    Catalog { apps }
}

pub fn default_catalog() -> Catalog {
    catalog_for_bands(&DEFAULT_BAND_CENTERS_HZ)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fifteen_valid_apps() {
        let c = default_catalog();
        c.validate().unwrap();
        assert_eq!(c.apps.len(), 15);
        for app in &c.apps {
            assert_eq!(app.phases.len(), 4);
            assert_eq!(app.band_centers(), DEFAULT_BAND_CENTERS_HZ.to_vec());
        }
    }

    #[test]
    fn parameter_ranges() {
        for app in default_catalog().apps {
            for src in &app.phase(ActivityPhase::Running).unwrap().sources {
                let c = &src.clock;
                assert!((10e3..=500e3).contains(&c.fm));
                assert!((1e3..=100e3).contains(&src.wave.f_sq));
                let reach = c.fm + 3.0 * src.wave.f_sq;
                assert!(c.f0 - reach > 0.0 && c.f0 + reach < 1.25e6, "{c:?}");
            }
        }
    }

    #[test]
    fn phases_share_sources() {
        for app in default_catalog().apps {
            let run = &app.phase(ActivityPhase::Running).unwrap().sources;
            for p in ActivityPhase::ALL {
                assert_eq!(&app.phase(p).unwrap().sources, run);
            }
        }
    }

    #[test]
    fn toml_round_trip() {
        let c = default_catalog();
        let text = c.to_toml_string().unwrap();
        assert_eq!(Catalog::from_toml_str(&text).unwrap(), c);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let mut c = default_catalog();
        c.apps[1].app_id = c.apps[0].app_id.clone();
        assert!(c.validate().is_err());
    }
}
