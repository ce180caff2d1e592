use criterion::{criterion_group, criterion_main};

criterion_group!(benches, emspy_bench::synthesis, emspy_bench::spectral, emspy_bench::learning);
criterion_main!(benches);
