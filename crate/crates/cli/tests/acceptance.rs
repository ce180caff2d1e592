//! Acceptance run. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Pass criterion numbers (`3 7`) to run a subset;
//! 8, 10 and 11 need the run from 7.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use emspy_cli::analysis::scene_usnr;
use emspy_cli::plan::{Db, ExperimentPlan, Profile};
use emspy_cli::{report, run, sweep, Layout, SweepKind};
use emspy_core::dsp::{averaged_periodogram, detect_state, from_db, noncoherent_average, process_band, psd_frames, Window};
use emspy_core::emanation::{emanation_spectrum_analytic, modulate, synth_clock, synth_square};
use emspy_core::learn::{build_multitask, grad_check, Arch, ConvNetModel, Task};
use emspy_core::num_complex::Complex64;
use emspy_core::rng::derive_seed;
use emspy_core::scene::{capture_pair, gen_noise};
use emspy_core::{ActivityPhase, ActivityWave, ClockSpec, DeviceState, IqRecording, NoiseSpec, PipelineConfig, SpectrumFrame};

const SEED: u64 = 20_240_917;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// Uniform draw in [lo, hi] from a labelled seed.
fn uniform(label: &str, i: u64, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * (derive_seed(SEED, label, i) as f64 / u64::MAX as f64)
}

// Bin-centred oracle geometry: 1 Hz bins, one 1 s frame.
const ORACLE_RATE: f64 = 65_536.0;
const ORACLE_N: usize = 65_536;

/// Cosine amplitudes at non-negative integer frequencies of a real
/// recording, undoing the Hann coherent gain.
fn line_amplitudes(rec: &IqRecording) -> Vec<f64> {
    let p = averaged_periodogram(rec, ORACLE_N, 1, Window::Hann).unwrap();
    let gain: f64 = Window::Hann.coefficients(ORACLE_N).iter().sum();
    p[ORACLE_N / 2..]
        .iter()
        .map(|&pk| 2.0 * (pk * ORACLE_N as f64).sqrt() / gain)
        .collect()
}

fn c1_analytic_spectrum() -> Outcome {
    let (mut worst_mag, mut worst_bin, mut lines, mut stray) = (0.0f64, 0usize, 0usize, 0usize);
    for trial in 0..25 {
        let fm = uniform("c1/fm", trial, 400.0, 800.0).round();
        let clock = ClockSpec::new(
            uniform("c1/f0", trial, 12_000.0, 20_000.0).round(),
            fm,
            uniform("c1/beta", trial, 0.2, 0.8) * fm,
            6,
        )
        .with_flat_profile();
        let wave = ActivityWave::new(
            uniform("c1/fsq", trial, 10.0, 60.0).round(),
            uniform("c1/asq", trial, 0.5, 1.5),
            if uniform("c1/terms", trial, 0.0, 1.0) < 0.5 { 1 } else { 2 },
        );
        let rec = modulate(
            &synth_clock(&clock, ORACLE_RATE, 1.0).unwrap(),
            &synth_square(&wave, ORACLE_RATE, 1.0).unwrap(),
        )
        .unwrap();
        let amp = line_amplitudes(&rec);
        let predicted = emanation_spectrum_analytic(&clock, &wave).unwrap();
        let top = predicted.iter().map(|l| l.magnitude).fold(0.0, f64::max);
        let floor = 1e-5 * top;
        let predicted: Vec<_> = predicted.into_iter().filter(|l| l.magnitude > floor).collect();
        let peaks: Vec<usize> = (1..amp.len() - 1)
            .filter(|&k| amp[k] > floor && amp[k] > amp[k - 1] && amp[k] >= amp[k + 1])
            .collect();
        for l in &predicted {
            lines += 1;
            let near = peaks.iter().copied().min_by(|&a, &b| (a as f64 - l.freq_hz).abs().total_cmp(&(b as f64 - l.freq_hz).abs()));
            match near {
                Some(k) if (k as f64 - l.freq_hz).abs() <= 1.0 => {
                    worst_bin = worst_bin.max((k as f64 - l.freq_hz).abs() as usize);
                    worst_mag = worst_mag.max((amp[k] - l.magnitude).abs() / l.magnitude);
                }
                _ => worst_bin = usize::MAX,
            }
        }
        stray += peaks
            .iter()
            .filter(|&&k| !predicted.iter().any(|l| (k as f64 - l.freq_hz).abs() <= 1.0))
            .count();
    }
    outcome(
        worst_bin <= 1 && worst_mag <= 0.01 && stray == 0,
        format!(
            "{lines} lines, worst offset {} bins, worst magnitude error {:.2e}, {stray} unpredicted peaks",
            if worst_bin == usize::MAX { "unmatched".to_string() } else { worst_bin.to_string() },
            worst_mag
        ),
    )
}

fn c2_bessel_sidebands() -> Outcome {
    let expected = [0.9385, 0.2423, 0.0306];
    let clock = ClockSpec::new(16_000.0, 1_000.0, 500.0, 6).with_flat_profile();
    let amp = line_amplitudes(&synth_clock(&clock, ORACLE_RATE, 1.0).unwrap());
    let mut worst = 0.0f64;
    let mut seen = Vec::new();
    for (n, &e) in expected.iter().enumerate() {
        for side in [-1i64, 1] {
            let k = (16_000 + side * 1_000 * n as i64) as usize;
            worst = worst.max((amp[k] - e).abs() / e);
            if side == 1 {
                seen.push(format!("{:.4}", amp[k]));
            }
        }
    }
    outcome(worst <= 0.01, format!("|J0..J2| = {}, worst relative error {worst:.2e}", seen.join(", ")))
}

/// Complex tone whose bin-centred Hann peak sits `snr_db` above a unit-power
/// white floor.
fn tone(freq_hz: f64, snr_db: f64, rate: f64, fft: usize, n: usize) -> Vec<Complex64> {
    let a = (10f64.powf(snr_db / 10.0) * 1.5 / fft as f64).sqrt();
    (0..n)
        .map(|k| Complex64::from_polar(a, std::f64::consts::TAU * freq_hz * k as f64 / rate))
        .collect()
}

fn white(n: usize, seed: u64) -> Vec<Complex64> {
    let spec = NoiseSpec {
        noise_power_db: 0.0,
        floor_tilt_db_per_band: 0.0,
    };
    gen_noise(&spec, 1.0, n, seed).unwrap()
}

fn add(a: &mut [Complex64], b: &[Complex64]) {
    a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
}

fn c3_subtraction() -> Outcome {
    let (rate, fft, frames) = (512e3, 512, 400);
    let n = fft * frames;
    let cfg = PipelineConfig {
        avg_frames: frames,
        ..PipelineConfig::desk()
    };
    let (f_int, f_spike) = (100e3, -50e3);
    let interferer = tone(f_int, 30.0, rate, fft, n);
    let spike = tone(f_spike, 15.0, rate, fft, n);
    let (mut worst_int, mut spikes) = (0.0f64, Vec::new());
    for trial in 0..5 {
        let mut active = white(n, derive_seed(SEED, "c3/active", trial));
        let mut idle = white(n, derive_seed(SEED, "c3/idle", trial));
        add(&mut active, &interferer);
        add(&mut idle, &interferer);
        add(&mut active, &spike);
        let a = IqRecording::new(active, rate, 0.0, trial).unwrap();
        let i = IqRecording::new(idle, rate, 0.0, trial).unwrap();
        let r = process_band(&a, &i, &cfg).unwrap();
        let k = r.bin_of(f_int).unwrap();
        worst_int = r.power_db[k - 1..=k + 1].iter().fold(worst_int, |w, p| w.max(p.abs()));
        spikes.push(r.power_db[r.bin_of(f_spike).unwrap()]);
    }
    let spike_ok = spikes.iter().all(|s| (s - 15.0).abs() <= 1.0);
    let shown: Vec<String> = spikes.iter().map(|s| format!("{s:.2}")).collect();
    outcome(
        worst_int <= 1.0 && spike_ok,
        format!("interferer residual <= {worst_int:.2} dB, spike {} dB", shown.join("/")),
    )
}

fn c4_averaging() -> Outcome {
    let plan = ExperimentPlan::preset(Profile::Desk);
    let app = plan.app_ids().unwrap().remove(0);
    let k1 = PipelineConfig {
        avg_frames: 1,
        ..plan.pipeline.clone()
    };
    let k16 = PipelineConfig {
        avg_frames: 16,
        ..plan.pipeline.clone()
    };
    let (mut wins, mut gain) = (0, 0.0);
    for r in 0..100 {
        let mut scene = plan.scene(&app, ActivityPhase::Running, 1.0, 90.0, 0).unwrap();
        scene.seed = derive_seed(SEED, "c4", r);
        let (u1, u16) = (scene_usnr(&scene, &k1).unwrap(), scene_usnr(&scene, &k16).unwrap());
        wins += usize::from(u16 > u1);
        gain += (u16 - u1) / 100.0;
    }
    let win_rate = wins as f64 / 100.0;

    let fft = 512;
    let ks = [4usize, 16, 64];
    let mut pooled: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for seed in 0..100 {
        let rec = IqRecording::new(white(fft * 64, derive_seed(SEED, "c4/noise", seed)), 1.0, 0.0, seed).unwrap();
        let frames = psd_frames(&rec, fft).unwrap();
        for &k in &ks {
            let avg = noncoherent_average(&frames, k).unwrap();
            pooled.entry(k).or_default().extend(avg.power_db.iter().map(|&d| from_db(d)));
        }
    }
    let scaled: Vec<(usize, f64)> = pooled
        .iter()
        .map(|(&k, v)| {
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
            (k, var / (mean * mean) * k as f64)
        })
        .collect();
    let var_ok = scaled.iter().all(|(_, s)| (s - 1.0).abs() <= 0.2);
    let shown: Vec<String> = scaled.iter().map(|(k, s)| format!("K={k}: {s:.3}")).collect();
    outcome(
        win_rate >= 0.95 && var_ok,
        format!(
            "USNR(16) > USNR(1) in {:.0}% of trials (mean change {gain:+.2} dB); K*var/mean^2 {}",
            win_rate * 100.0,
            shown.join(", ")
        ),
    )
}

fn recording_half(rec: &IqRecording, second: bool) -> IqRecording {
    let h = rec.len() / 2;
    let s = if second { &rec.samples[h..2 * h] } else { &rec.samples[..h] };
    IqRecording::new(s.to_vec(), rec.sample_rate, rec.center_frequency, rec.seed).unwrap()
}

fn frames(rec: &IqRecording, fft: usize) -> Vec<SpectrumFrame> {
    psd_frames(rec, fft).unwrap()
}

fn c5_state_detection() -> Outcome {
    let plan = ExperimentPlan::preset(Profile::Desk);
    let apps = plan.app_ids().unwrap();
    let fft = plan.pipeline.fft_size;
    let (mut correct, mut total) = (0, 0);
    for i in 0..100 {
        let phase = ActivityPhase::ALL[(i / apps.len()) % 4];
        let scene = plan.scene(&apps[i % apps.len()], phase, 1.0, 90.0, (i / 60) as u64).unwrap();
        let (active, idle) = capture_pair(&scene, None).unwrap();
        let reference = frames(&recording_half(&idle, false), fft);
        let reference = noncoherent_average(&reference, reference.len()).unwrap();
        for (rec, truth) in [(&active, DeviceState::Active), (&idle, DeviceState::Idle)] {
            let got = detect_state(&frames(&recording_half(rec, true), fft), &reference, plan.pipeline.spike_threshold_db).unwrap();
            total += 1;
            correct += usize::from(got == truth);
        }
    }
    outcome(correct == total, format!("{correct}/{total} captures correct"))
}

fn c6_grad_check() -> Outcome {
    let plan = ExperimentPlan::preset(Profile::Desk);
    let scenes = plan.scenes().unwrap();
    let (app, act) = build_multitask(&scenes[..1], &plan.pipeline, &plan.dataset_config(), None).unwrap();
    let mut worst = Vec::new();
    for ds in [app, act] {
        let ex = &ds.examples[0];
        let arch = Arch::for_task(ds.task, ex.shape, ds.class_names.len());
        let model = ConvNetModel::new(ds.task, arch, derive_seed(SEED, "c6", 0)).unwrap();
        let rep = grad_check(&model, ex, 1e-5).unwrap();
        worst.push((ds.task, rep.max_rel_error, rep.checked));
    }
    let shown: Vec<String> = worst
        .iter()
        .map(|(t, e, n)| format!("{} {e:.2e} over {n} weights", t.name()))
        .collect();
    outcome(worst.iter().all(|w| w.1 <= 1e-4), shown.join(", "))
}

struct Baseline {
    dir: tempfile::TempDir,
    plan: ExperimentPlan,
    accuracy: BTreeMap<&'static str, f64>,
    report: Vec<u8>,
    elapsed: Duration,
}

fn acceptance_plan(dir: &std::path::Path) -> ExperimentPlan {
    let mut plan = ExperimentPlan::preset(Profile::Desk);
    plan.name = "acceptance".into();
    plan.seed = SEED;
    plan.sweeps.bands = vec![1, 5];
    plan.sweeps.obfuscation_power_db = vec![Db(f64::NEG_INFINITY), Db(0.0)];
    plan.sweeps.usnr_seeds = 20;
    plan.output_dir = dir.to_path_buf();
    plan.validate().unwrap();
    plan
}

/// dataset, train, eval and report in a fresh directory.
fn full_run() -> Baseline {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let plan = acceptance_plan(dir.path());
    let layout = Layout::new(dir.path());
    run::dataset(&plan, &layout).unwrap();
    run::train(&plan, &layout).unwrap();
    let accuracy = run::eval(&plan, &layout)
        .unwrap()
        .into_iter()
        .map(|r| (r.task.name(), r.metrics.accuracy))
        .collect();
    report::report(dir.path()).unwrap();
    let report = fs::read(layout.report_json()).unwrap();
    Baseline {
        dir,
        plan,
        accuracy,
        report,
        elapsed: start.elapsed(),
    }
}

fn c7_classification(base: &Baseline) -> Outcome {
    let (a, b) = (base.accuracy["app-id"], base.accuracy["activity"]);
    outcome(a >= 0.95 && b >= 0.95, format!("app-id {a:.4}, activity {b:.4}"))
}

fn point_accuracy(s: &emspy_cli::SweepResult, value: f64, task: Task) -> f64 {
    s.points
        .iter()
        .find(|p| p.value.0 == value && p.task == Some(task))
        .and_then(|p| p.accuracy)
        .unwrap()
}

fn c8_bands(base: &Baseline) -> Outcome {
    let s = sweep::sweep(&base.plan, &Layout::new(base.dir.path()), SweepKind::Bands).unwrap();
    let mut ok = true;
    let mut shown = Vec::new();
    for task in Task::ALL {
        let (one, five) = (point_accuracy(&s, 1.0, task), point_accuracy(&s, 5.0, task));
        ok &= five >= one - 0.02;
        shown.push(format!("{} 1 band {one:.4} / 5 bands {five:.4}", task.name()));
    }
    let act1 = point_accuracy(&s, 1.0, Task::Activity);
    outcome(ok && act1 >= 0.9, shown.join(", "))
}

fn c9_distance_orientation() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let plan = acceptance_plan(dir.path());
    let layout = Layout::new(dir.path());
    let d = sweep::sweep(&plan, &layout, SweepKind::Distance).unwrap();
    let o = sweep::sweep(&plan, &layout, SweepKind::Orientation).unwrap();
    let dist: Vec<f64> = d.points.iter().map(|p| p.mean_usnr_db.unwrap()).collect();
    let decreasing = dist.windows(2).all(|w| w[0] > w[1]);
    let best = o
        .points
        .iter()
        .max_by(|a, b| a.mean_usnr_db.unwrap().total_cmp(&b.mean_usnr_db.unwrap()))
        .unwrap();
    let shown: Vec<String> = d.points.iter().map(|p| format!("{}m {:.2}", p.value, p.mean_usnr_db.unwrap())).collect();
    outcome(
        decreasing && best.value.0 == 90.0 && d.points[0].trials >= 20 && plan.sweeps.orientations_deg.len() == 8,
        format!("{} dB; best orientation {} deg over {} seeds", shown.join(", "), best.value, d.points[0].trials),
    )
}

fn c10_obfuscation(base: &Baseline) -> Outcome {
    let s = sweep::sweep(&base.plan, &Layout::new(base.dir.path()), SweepKind::Obfuscation).unwrap();
    let baseline = base.accuracy["app-id"];
    let clean = point_accuracy(&s, f64::NEG_INFINITY, Task::AppId);
    let obf = point_accuracy(&s, 0.0, Task::AppId);
    let act = point_accuracy(&s, 0.0, Task::Activity);
    outcome(
        clean - obf >= 0.2 && (clean - baseline).abs() <= 0.02,
        format!("app-id {clean:.4} clean, {obf:.4} at 0 dB (activity {act:.4} at 0 dB), baseline {baseline:.4}"),
    )
}

fn c11_reproducibility(base: &Baseline) -> Outcome {
    let again = full_run();
    let same = again.report == base.report;
    outcome(
        same && again.elapsed <= 2 * Duration::from_secs(15 * 60),
        format!(
            "report.json {} ({} bytes), second run {:.0} s",
            if same { "byte-identical" } else { "differs" },
            base.report.len(),
            again.elapsed.as_secs_f64()
        ),
    )
}

fn main() {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let want = |n: u32| wanted.is_empty() || wanted.contains(&n);
    let mut failed = 0;
    let mut line = |n: u32, title: &str, budget_s: u64, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let res = catch_unwind(AssertUnwindSafe(&mut *f));
        let secs = start.elapsed().as_secs_f64();
        let (pass, detail) = match res {
            Ok(o) => (o.pass && secs < budget_s as f64, o.detail),
            Err(e) => (
                false,
                e.downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "panicked".into()),
            ),
        };
        failed += usize::from(!pass);
        let mut out = std::io::stdout().lock();
        let verdict = if pass { "PASS" } else { "FAIL" };
        writeln!(out, "criterion {n:>2} {verdict} {title}: {detail} [{secs:.1} s / {budget_s} s]").unwrap();
        out.flush().unwrap();
    };
    if want(1) {
        line(1, "analytic spectrum", 30, &mut c1_analytic_spectrum);
    }
    if want(2) {
        line(2, "bessel sidebands", 5, &mut c2_bessel_sidebands);
    }
    if want(3) {
        line(3, "subtraction", 10, &mut c3_subtraction);
    }
    if want(4) {
        line(4, "averaging gain", 60, &mut c4_averaging);
    }
    if want(5) {
        line(5, "state detection", 60, &mut c5_state_detection);
    }
    if want(6) {
        line(6, "gradient check", 60, &mut c6_grad_check);
    }
    let mut base: Option<Baseline> = None;
    if [7, 8, 10, 11].into_iter().any(want) {
        line(7, "classification", 15 * 60, &mut || {
            let b = full_run();
            let o = c7_classification(&b);
            base = Some(b);
            o
        });
    }
    let missing = || outcome(false, "no baseline run".into());
    if want(8) {
        line(8, "bands sweep", 30 * 60, &mut || base.as_ref().map(c8_bands).unwrap_or_else(missing));
    }
    if want(9) {
        line(9, "distance and orientation", 5 * 60, &mut c9_distance_orientation);
    }
    if want(10) {
        line(10, "obfuscation", 10 * 60, &mut || base.as_ref().map(c10_obfuscation).unwrap_or_else(missing));
    }
    if want(11) {
        line(11, "reproducibility", 30 * 60, &mut || base.as_ref().map(c11_reproducibility).unwrap_or_else(missing));
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
