use criterion::{black_box, criterion_group, criterion_main, Criterion, Throughput};
use offload_core::executor::{adam_step, AdamHyper};
use offload_core::precision::{downscale_into, upscale_into};
use offload_core::Half;

const LEN: usize = 1 << 20;

fn data() -> Vec<f32> {
    (0..LEN).map(|i| ((i as f32) * 0.618_034).sin() * 3.0).collect()
}

fn adam(c: &mut Criterion) {
    let h = AdamHyper::default();
    let g = data();
    let mut p = data();
    let mut m = vec![0.0f32; LEN];
    let mut v = vec![0.0f32; LEN];
    let mut group = c.benchmark_group("adam");
    group.throughput(Throughput::Elements(LEN as u64));
    group.bench_function("step_1m", |b| b.iter(|| adam_step(&mut p, &mut m, &mut v, black_box(&g), &h)));
    group.finish();
}

fn fp16(c: &mut Criterion) {
    let src = data();
    let mut half = vec![Half::ZERO; LEN];
    let mut back = vec![0.0f32; LEN];
    let mut group = c.benchmark_group("fp16");
    group.throughput(Throughput::Elements(LEN as u64));
    group.bench_function("downscale_rne_1m", |b| b.iter(|| downscale_into(black_box(&src), &mut half)));
    group.bench_function("upscale_1m", |b| b.iter(|| upscale_into(black_box(&half), &mut back)));
    group.finish();
}

criterion_group!(benches, adam, fp16);
criterion_main!(benches);
