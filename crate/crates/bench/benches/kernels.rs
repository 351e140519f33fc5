use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};

use lumaflux_core::adapters::{toy_block_forward, AdapterState, ToyBlockConfig};
use lumaflux_core::pipeline::{adapter_fixture, synthetic_hdr};
use lumaflux_core::rqs::{fit_rqs, RqsParams};
use lumaflux_core::tensor::{rfft2, Tensor};
use lumaflux_core::tonemap::{degrade, DegradationSpec, ToneKind, ToneOperator};
use lumaflux_core::{Crf, FitConfig};

fn bench_degrade(c: &mut Criterion) {
    let hdr = synthetic_hdr(128, 128, 1000.0, 1).unwrap();
    let spec = DegradationSpec {
        tmo: ToneOperator::new(ToneKind::Bt2390EetfGm),
        crf: Some(Crf::new(31).unwrap()),
        seed: 0,
    };
    c.bench_function("degrade_128x128_eetf_crf31", |b| b.iter(|| degrade(black_box(&hdr), &spec).unwrap()));
}

fn bench_rqs(c: &mut Criterion) {
    let knots_x = vec![0.0, 0.1, 0.3, 0.6, 1.0];
    let knots_y = vec![0.0, 0.02, 0.1, 0.4, 1.0];
    let params = RqsParams::new(knots_x, knots_y, vec![0.2, 0.4, 1.0, 2.0, 3.0]).unwrap();
    let xs: Vec<f64> = (0..4096).map(|i| i as f64 / 4095.0).collect();
    c.bench_function("rqs_eval_4096", |b| {
        b.iter(|| xs.iter().map(|&x| params.eval(black_box(x))).sum::<f64>())
    });

    let pairs: Vec<(f64, f64)> = xs.iter().step_by(8).map(|&x| (x, x * x)).collect();
    let cfg = FitConfig {
        max_iters: 200,
        ..FitConfig::default()
    };
    c.bench_function("rqs_fit_512_pairs_200_iters", |b| b.iter(|| fit_rqs(black_box(&pairs), &cfg).unwrap()));
}

fn bench_rfft2(c: &mut Criterion) {
    let field = Tensor::new(vec![256, 256], (0..256 * 256).map(|i| ((i * 7919) % 1013) as f64 / 1013.0).collect()).unwrap();
    c.bench_function("rfft2_256x256", |b| b.iter(|| rfft2(black_box(&field)).unwrap()));
}

fn bench_block(c: &mut Criterion) {
    let cfg = ToyBlockConfig::default();
    let (z, inputs, bb) = adapter_fixture(&cfg, 7).unwrap();
    let state = AdapterState::seeded(&cfg, 7, 1.0);
    c.bench_function("toy_block_forward", |b| {
        b.iter_batched(
            || z.clone(),
            |z| toy_block_forward(&cfg, &z, &inputs, &state, &bb, 0.5, 0).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(kernels, bench_degrade, bench_rqs, bench_rfft2, bench_block);
criterion_main!(kernels);
