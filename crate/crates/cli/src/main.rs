use std::path::PathBuf;

use anyhow::Context;
use clap::{Parser, Subcommand};
use emspy_cli::plan::{ExperimentPlan, Profile};
use emspy_cli::synth::SynthSelection;
use emspy_cli::{process, report, run, sweep, synth, Layout, SweepKind};
use emspy_core::ActivityPhase;

#[derive(Parser)]
#[command(name = "emspy", version, about = "Simulate, process and classify VR headset EM emanations")]
struct Cli {
    /// Plan document (TOML) overlaid on the profile preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed; overrides the plan's `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory (default: runs/<profile>).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Preset the plan starts from.
    #[arg(long, global = true, value_enum)]
    profile: Option<Profile>,
    #[command(subcommand)]
    cmd: Cmd,
}

fn parse_phase(s: &str) -> Result<ActivityPhase, String> {
    ActivityPhase::from_name(s).ok_or_else(|| format!("unknown phase {s:?} (entering, configuring, running, exiting)"))
}

#[derive(Subcommand)]
enum Cmd {
    /// Write Active/Idle IQ pairs (one scene unless --all).
    Synth {
        #[arg(long)]
        all: bool,
        #[arg(long)]
        app: Option<String>,
        #[arg(long, value_parser = parse_phase)]
        phase: Option<ActivityPhase>,
        #[arg(long)]
        rep: Option<u64>,
        #[arg(long)]
        band_hz: Option<f64>,
        /// Run the plan's obfuscation daemon during the Active capture.
        #[arg(long)]
        obfuscated: bool,
    },
    /// Residual spectrum, spikes and USNR of an Active/Idle pair.
    Process {
        active: PathBuf,
        idle: PathBuf,
        /// Also write the Active spectrogram.
        #[arg(long)]
        stft: bool,
        #[arg(long)]
        fft_size: Option<usize>,
        #[arg(long)]
        avg_frames: Option<usize>,
        #[arg(long)]
        movmedian: Option<usize>,
        #[arg(long)]
        threshold_db: Option<f64>,
    },
    /// Simulate the grid and write the split dataset store.
    Dataset,
    /// Train one model per task.
    Train,
    /// Score the trained models on the test split.
    Eval,
    /// Run a sweep study.
    Sweep {
        #[arg(value_enum)]
        kind: SweepKind,
    },
    /// Merge a run's artifacts into report.json and report.csv.
    Report {
        /// Run directory (default: --out or the plan's).
        run_dir: Option<PathBuf>,
    },
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let load = || {
        ExperimentPlan::load(cli.config.as_deref(), cli.profile, cli.seed, cli.out.as_deref()).context("loading plan")
    };
    match cli.cmd {
        Cmd::Synth {
            all,
            ref app,
            phase,
            rep,
            band_hz,
            obfuscated,
        } => {
            let plan = load()?;
            let sel = SynthSelection {
                all,
                app: app.clone(),
                phase,
                rep,
                band_hz,
                obfuscated,
            };
            for p in synth::synth(&plan, &Layout::new(&plan.output_dir), &sel)? {
                println!("{}", p.display());
            }
        }
        Cmd::Process {
            ref active,
            ref idle,
            stft,
            fft_size,
            avg_frames,
            movmedian,
            threshold_db,
        } => {
            let plan = load()?;
            let mut cfg = plan.pipeline.clone();
            cfg.fft_size = fft_size.unwrap_or(cfg.fft_size);
            cfg.avg_frames = avg_frames.unwrap_or(cfg.avg_frames);
            cfg.movmedian_len = movmedian.unwrap_or(cfg.movmedian_len);
            cfg.spike_threshold_db = threshold_db.unwrap_or(cfg.spike_threshold_db);
            let dir = Layout::new(&plan.output_dir).process_dir();
            let out = process::process(active, idle, &cfg, stft, &dir)?;
            println!("{} spikes -> {}", out.report.spikes.len(), dir.display());
            for s in &out.report.spikes {
                println!("{:.1} Hz  usnr {:.2} dB", s.spike_freq, s.usnr_db);
            }
        }
        Cmd::Dataset => {
            let plan = load()?;
            let (m, reused) = run::dataset(&plan, &Layout::new(&plan.output_dir))?;
            for t in &m.tasks {
                println!(
                    "{}: {} examples of {:?}{}",
                    t.task.name(),
                    t.examples.len(),
                    t.feature_shape,
                    if reused { " (reused)" } else { "" }
                );
            }
        }
        Cmd::Train => {
            let plan = load()?;
            for (rec, reused) in run::train(&plan, &Layout::new(&plan.output_dir))? {
                println!(
                    "{}: best epoch {} val accuracy {:.4}{}",
                    rec.task.name(),
                    rec.log.best_epoch,
                    rec.log.best_val_accuracy,
                    if reused { " (reused)" } else { "" }
                );
            }
        }
        Cmd::Eval => {
            let plan = load()?;
            for rec in run::eval(&plan, &Layout::new(&plan.output_dir))? {
                println!("{}: test accuracy {:.4} on {} examples", rec.task.name(), rec.metrics.accuracy, rec.metrics.total);
            }
        }
        Cmd::Sweep { kind } => {
            let plan = load()?;
            let layout = Layout::new(&plan.output_dir);
            let result = sweep::sweep(&plan, &layout, kind)?;
            print!("{}", result.to_csv());
        }
        Cmd::Report { ref run_dir } => {
            let dir = match (run_dir, &cli.out) {
                (Some(d), _) | (None, Some(d)) => d.clone(),
                (None, None) => load()?.output_dir,
            };
            let bundle = report::report(&dir)?;
            for t in &bundle.tasks {
                println!("{}: test accuracy {:.4}", t.task.name(), t.test_accuracy);
            }
            println!("plan {} -> {}", bundle.plan_hash, dir.join("report.json").display());
        }
    }
    Ok(())
}
