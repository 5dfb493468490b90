use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use powerline_bench::{cable_gt, line_mask, noise_mask, stitch_inputs, uniform_dm};
use powerline_core::losses::{composite_loss, malis_loss};
use powerline_core::metrics::{ccq, evaluate_binary};
use powerline_core::pipeline::{stitch, temporal_fuse, warp};
use powerline_core::targets::{clamp_normalize, edt, minpool_with, Remainder};
use powerline_core::{FlowField, LossConfig};

fn distance_transform(c: &mut Criterion) {
    let mut g = c.benchmark_group("edt");
    for (w, h) in [(512, 384), (2048, 1536)] {
        let m = line_mask(w, h, 6, 1);
        g.bench_with_input(
            BenchmarkId::from_parameter(format!("{w}x{h}")),
            &m,
            |b, m| b.iter(|| edt(black_box(m))),
        );
    }
    let m = line_mask(4096, 3000, 8, 2);
    g.sample_size(10);
    g.bench_function("targets 4096x3000", |b| {
        b.iter(|| {
            let d = clamp_normalize(&edt(black_box(&m)), 128).unwrap();
            minpool_with(&d, 16, Remainder::Crop).unwrap()
        })
    });
    g.finish();
}

fn losses(c: &mut Criterion) {
    let mut g = c.benchmark_group("loss");
    let cfg = LossConfig::default();
    for side in [64, 256] {
        let pred = uniform_dm(side, side, 3);
        let gt = cable_gt(side, side);
        g.bench_function(BenchmarkId::new("malis", side), |b| {
            b.iter(|| malis_loss(black_box(&pred), black_box(&gt), &cfg).unwrap())
        });
        let pp = uniform_dm(side, side, 4);
        g.bench_function(BenchmarkId::new("composite", side), |b| {
            b.iter(|| composite_loss(black_box(&pred), &pp, &gt, &gt, &cfg).unwrap())
        });
    }
    g.finish();
}

fn metrics(c: &mut Criterion) {
    let mut g = c.benchmark_group("metrics");
    for side in [256, 1024] {
        let pred = noise_mask(side, side, 0.05, 5);
        let gt = line_mask(side, side, 8, 6);
        g.bench_function(BenchmarkId::new("ccq", side), |b| {
            b.iter(|| ccq(black_box(&pred), &gt, None).unwrap())
        });
        g.bench_function(BenchmarkId::new("evaluate_binary", side), |b| {
            b.iter(|| evaluate_binary(black_box(&pred), &gt, None).unwrap())
        });
    }
    g.finish();
}

fn pipeline(c: &mut Criterion) {
    let mut g = c.benchmark_group("pipeline");
    for f in [32, 16] {
        let (layout, patches) = stitch_inputs(4096, 3000, 1024, f);
        g.bench_function(BenchmarkId::new("stitch 4096x3000", f), |b| {
            b.iter(|| stitch(black_box(&patches), &layout, (4096, 3000), f).unwrap())
        });
    }
    let prev = uniform_dm(256, 187, 7);
    let cur = uniform_dm(256, 187, 8);
    let flow = FlowField::constant(256, 187, 0.6, -1.3).unwrap();
    g.bench_function("warp+fuse 256x187", |b| {
        b.iter(|| temporal_fuse(Some(&warp(black_box(&prev), &flow).unwrap()), &cur, 0.5).unwrap())
    });
    g.finish();
}

criterion_group!(benches, distance_transform, losses, metrics, pipeline);
criterion_main!(benches);
