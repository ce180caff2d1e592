//! `synth`: write Active and Idle IQ pairs for plan scenes.

use std::path::PathBuf;

use emspy_core::scene::capture;
use emspy_core::{ActivityPhase, DeviceState, SceneConfig};

use crate::error::{HarnessError, Result};
use crate::iqfile::{write_pair, IqSidecar};
use crate::layout::Layout;
use crate::plan::ExperimentPlan;
use crate::run::write_plan;

/// Which scenes to write. Unset fields default to the first grid entry and
/// the first band; `all` writes the whole grid over every band.
#[derive(Debug, Clone, Default)]
pub struct SynthSelection {
    pub all: bool,
    pub app: Option<String>,
    pub phase: Option<ActivityPhase>,
    pub rep: Option<u64>,
    pub band_hz: Option<f64>,
    /// Apply the plan's obfuscation daemon to the Active capture.
    pub obfuscated: bool,
}

fn stem(scene: &SceneConfig, rep: u64) -> String {
    format!(
        "{}_{}_{}m_{}deg_r{rep}_{}mhz",
        scene.signature.app_id,
        scene.phase.name(),
        scene.channel.distance_m,
        scene.channel.orientation_deg,
        scene.band_center_hz / 1e6
    )
}

pub fn selected_scenes(plan: &ExperimentPlan, sel: &SynthSelection) -> Result<Vec<(SceneConfig, u64)>> {
    let g = &plan.grid;
    let mut out = Vec::new();
    if sel.all {
        for app in plan.app_ids()? {
            for &phase in &g.phases {
                for &d in &g.distances_m {
                    for &o in &g.orientations_deg {
                        for rep in 0..g.seeds_per_cell {
                            let s = plan.scene(&app, phase, d, o, rep)?;
                            for &b in &plan.capture.bands_hz {
                                out.push((s.with_band(b), rep));
                            }
                        }
                    }
                }
            }
        }
        return Ok(out);
    }
    let app = match &sel.app {
        Some(a) => a.clone(),
        None => plan.app_ids()?.remove(0),
    };
    let rep = sel.rep.unwrap_or(0);
    let s = plan.scene(
        &app,
        sel.phase.unwrap_or(g.phases[0]),
        g.distances_m[0],
        g.orientations_deg[0],
        rep,
    )?;
    let band = sel.band_hz.unwrap_or(plan.capture.bands_hz[0]);
    if !plan.capture.bands_hz.contains(&band) {
        return Err(HarnessError::Config {
            field: "capture.bands_hz".into(),
            msg: format!("{band} Hz is not a configured band"),
        });
    }
    out.push((s.with_band(band), rep));
    Ok(out)
}

/// Returns the written `.iq` paths, Active before Idle for each scene.
pub fn synth(plan: &ExperimentPlan, layout: &Layout, sel: &SynthSelection) -> Result<Vec<PathBuf>> {
    write_plan(plan, layout)?;
    let obf = sel.obfuscated.then_some(&plan.obfuscation);
    let mut written = Vec::new();
    for (scene, rep) in selected_scenes(plan, sel)? {
        let base = stem(&scene, rep);
        for state in [DeviceState::Active, DeviceState::Idle] {
            let o = if state == DeviceState::Active { obf } else { None };
            let rec = capture(&scene, state, o)?;
            let sidecar = IqSidecar::new(&rec, &scene, state, o);
            let name = match state {
                DeviceState::Active => "active",
                DeviceState::Idle => "idle",
            };
            let (iq, _) = write_pair(&layout.synth_dir().join(format!("{base}_{name}")), &rec, &sidecar)?;
            written.push(iq);
        }
    }
    Ok(written)
}
