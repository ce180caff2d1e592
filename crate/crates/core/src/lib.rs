//! Simulation and analysis of electromagnetic emanations from VR headsets.
//!
//! The crate covers four stages: clock and activity emanation synthesis
//! ([`emanation`]), capture simulation through a distance/orientation channel
//! with interference and noise ([`scene`]), the spectral processing chain
//! ([`dsp`]) and residual spectral classifiers ([`learn`]).

pub mod dsp;
pub mod emanation;
mod error;
pub mod learn;
pub mod rng;
pub mod scene;
mod signal;

pub use error::{Error, Result};
pub use num_complex;
pub use signal::{DeviceState, IqRecording};

pub use dsp::{PipelineConfig, Spectrogram, SpectrumFrame};
pub use emanation::catalog::{default_catalog, Catalog, DEFAULT_BAND_CENTERS_HZ};
pub use emanation::{ActivityPhase, ActivityWave, AppSignature, ClockSpec, SpectralLine};
pub use scene::{ChannelSpec, InterferenceSpec, NoiseSpec, ObfuscationSpec, SceneConfig};
