//! Benchmark bodies shared by `benches/pipeline.rs`.

use std::hint::black_box;

use criterion::{BenchmarkId, Criterion, Throughput};
use emspy_core::dsp::{process_band, stft_spectrogram};
use emspy_core::learn::{Arch, ConvNetModel, Task};
use emspy_core::scene::capture_pair;
use emspy_core::{
    default_catalog, ActivityPhase, ChannelSpec, InterferenceSpec, IqRecording, NoiseSpec, PipelineConfig, SceneConfig,
};

/// One desk-profile Running scene of the first catalog app in its first band.
pub fn desk_scene(duration: f64) -> SceneConfig {
    let cat = default_catalog();
    let signature = cat.get(&cat.app_ids()[0]).expect("catalog app").clone();
    let band_center_hz = signature.band_centers()[0];
    SceneConfig {
        signature,
        phase: ActivityPhase::Running,
        channel: ChannelSpec::default(),
        interference: InterferenceSpec::default(),
        noise: NoiseSpec::default(),
        sample_rate: 2.5e6,
        duration,
        band_center_hz,
        seed: 11,
    }
}

fn pair(duration: f64) -> (IqRecording, IqRecording) {
    capture_pair(&desk_scene(duration), None).expect("valid scene")
}

pub fn synthesis(c: &mut Criterion) {
    let mut g = c.benchmark_group("capture_pair");
    for duration in [0.02, 0.1] {
        let scene = desk_scene(duration);
        g.throughput(Throughput::Elements((duration * scene.sample_rate) as u64));
        g.bench_with_input(BenchmarkId::from_parameter(duration), &scene, |b, s| {
            b.iter(|| capture_pair(black_box(s), None).unwrap())
        });
    }
    g.finish();
}

pub fn spectral(c: &mut Criterion) {
    let (active, idle) = pair(0.02);
    let desk = PipelineConfig::desk();
    c.bench_function("process_band/desk", |b| {
        b.iter(|| process_band(black_box(&active), black_box(&idle), &desk).unwrap())
    });
    c.bench_function("stft/desk", |b| b.iter(|| stft_spectrogram(black_box(&active), &desk).unwrap()));
}

pub fn learning(c: &mut Criterion) {
    let mut g = c.benchmark_group("loss_and_grads");
    g.sample_size(10);
    for (task, shape, classes) in [(Task::AppId, [1, 2560], 15), (Task::Activity, [65, 160], 4)] {
        let model = ConvNetModel::new(task, Arch::for_task(task, shape, classes), 1).unwrap();
        let batch: Vec<Vec<f64>> = (0..32)
            .map(|i| (0..shape[0] * shape[1]).map(|j| ((i * 7 + j * 13) % 17) as f64 / 17.0).collect())
            .collect();
        let refs: Vec<&[f64]> = batch.iter().map(Vec::as_slice).collect();
        let labels: Vec<usize> = (0..32).map(|i| i % classes).collect();
        g.bench_function(task.name(), |b| b.iter(|| model.loss_and_grads(black_box(&refs), &labels).unwrap()));
    }
    g.finish();
}
