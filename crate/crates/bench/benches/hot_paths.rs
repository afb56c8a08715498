//! Benchmarks for the pipeline's hot paths: convolution forward/backward,
//! Gaussian smoothing, lumen DP, scan conversion, and candidate extraction.

use criterion::{criterion_group, criterion_main, Criterion};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;

use mvoct_bench::bench_segment;
use mvoct_core::candidates::{extract_candidates, FrameGeometry};
use mvoct_core::imaging::scan_convert;
use mvoct_core::nn::layers::Conv2d;
use mvoct_core::nn::Tensor4;
use mvoct_core::preprocess::{detect_lumen, gaussian_smooth, preprocess_frame, PreprocessConfig};

fn conv2d(c: &mut Criterion) {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let (in_ch, out_ch, h, w) = (10, 20, 32, 150);
    let weight: Vec<f64> = (0..out_ch * in_ch * 9)
        .map(|_| rng.gen::<f64>() - 0.5)
        .collect();
    let bias = vec![0.0; out_ch];
    let x = Tensor4::from_vec(
        4,
        in_ch,
        h,
        w,
        (0..4 * in_ch * h * w).map(|_| rng.gen()).collect(),
    );

    c.bench_function("conv2d_forward_4x10x32x150_to_20ch", |b| {
        b.iter(|| {
            let mut conv = Conv2d::new(in_ch, out_ch, 3, 3, 1, 1, 1, weight.clone(), bias.clone());
            std::hint::black_box(conv.forward(&x).unwrap());
        })
    });

    c.bench_function("conv2d_forward_backward", |b| {
        b.iter(|| {
            let mut conv = Conv2d::new(in_ch, out_ch, 3, 3, 1, 1, 1, weight.clone(), bias.clone());
            let y = conv.forward(&x).unwrap();
            let gy = Tensor4::zeros(y.n(), y.c(), y.h(), y.w());
            std::hint::black_box(conv.backward(&gy));
        })
    });
}

fn preprocessing(c: &mut Criterion) {
    let (pb, _) = bench_segment();
    let cfg = PreprocessConfig::default();
    let frame = &pb.frames[0];

    c.bench_function("gaussian_smooth_64x320_7x7", |b| {
        b.iter(|| std::hint::black_box(gaussian_smooth(frame, 7, 1.0).unwrap()))
    });
    c.bench_function("detect_lumen_dp_64x320", |b| {
        b.iter(|| std::hint::black_box(detect_lumen(frame, None, 0, &cfg).unwrap()))
    });
    c.bench_function("preprocess_frame_full", |b| {
        b.iter(|| std::hint::black_box(preprocess_frame(frame, &pb.meta, &cfg).unwrap()))
    });
    c.bench_function("scan_convert_64x320_to_201px", |b| {
        b.iter(|| std::hint::black_box(scan_convert(frame, &pb.meta, 201).unwrap()))
    });
}

fn candidates(c: &mut Criterion) {
    let (pb, gt) = bench_segment();
    let geom = FrameGeometry::raw(&pb.meta);
    let mask = &gt.masks[0];
    c.bench_function("extract_candidates_64x320", |b| {
        b.iter(|| std::hint::black_box(extract_candidates(mask, &geom, 3)))
    });
}

criterion_group!(benches, conv2d, preprocessing, candidates);
criterion_main!(benches);
