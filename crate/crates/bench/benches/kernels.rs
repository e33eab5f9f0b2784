use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use ctp_bench::{random_cloud, unit_batches};
use ctp_core::grad::{self, LossSpec};
use ctp_core::loss::{self, Coefficients, FlattenStrategy, LogitScale, Reduction};
use ctp_core::similarity::{self, Metric};
use ctp_core::{dataset, encoders};

fn bench_tensor_build(c: &mut Criterion) {
    let mut group = c.benchmark_group("tensor_build");
    for b in [16usize, 32, 64] {
        let (t, i, p) = unit_batches(b, 32, 1);
        group.bench_with_input(BenchmarkId::new("cosine", b), &b, |bench, _| {
            bench.iter(|| similarity::cosine_tensor(black_box(&t), &i, &p).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("l2_mapped", b), &b, |bench, _| {
            bench.iter(|| {
                let raw = similarity::l2_tensor(black_box(&t), &i, &p).unwrap();
                similarity::map_l2(&raw, 3).unwrap()
            })
        });
    }
    group.finish();
}

fn bench_tensor_loss(c: &mut Criterion) {
    let mut group = c.benchmark_group("tensor_loss");
    let scale = LogitScale::default().value();
    for b in [16usize, 32] {
        let (t, i, p) = unit_batches(b, 32, 2);
        for strategy in [FlattenStrategy::Nm, FlattenStrategy::Mask] {
            let label = match strategy {
                FlattenStrategy::Nm => "nm",
                FlattenStrategy::Mask => "mask",
            };
            group.bench_with_input(BenchmarkId::new(label, b), &b, |bench, _| {
                bench.iter(|| {
                    loss::tensor_loss(
                        black_box(&t),
                        &i,
                        &p,
                        Metric::L2Mapped,
                        strategy,
                        Coefficients::THIRDS,
                        scale,
                        Reduction::Sum,
                    )
                    .unwrap()
                })
            });
        }
    }
    group.finish();
}

fn bench_gradients(c: &mut Criterion) {
    let mut group = c.benchmark_group("gradients");
    let scale = LogitScale::default();
    for b in [16usize, 32] {
        let (t, i, p) = unit_batches(b, 32, 3);
        let spec = LossSpec::tensor(Metric::L2Mapped, FlattenStrategy::Mask);
        group.bench_with_input(BenchmarkId::new("features", b), &b, |bench, _| {
            bench.iter(|| {
                grad::loss_and_grad_features(black_box(&spec), &t, &i, &p, &scale).unwrap()
            })
        });
    }
    group.finish();
}

fn bench_encoders(c: &mut Criterion) {
    let params = encoders::SetEncoderParams {
        point_mlp: encoders::init_mlp(&[3, 32, 32], 4).unwrap(),
        head_mlp: encoders::init_mlp(&[32, 64, 32], 5).unwrap(),
    };
    let cloud = random_cloud(1024, 6);
    let sample = encoders::PointCloudSample::dense(cloud).unwrap();
    c.bench_function("set_encode_1024", |bench| {
        bench.iter(|| encoders::set_encode(black_box(&params), &sample).unwrap())
    });
}

fn bench_fps(c: &mut Criterion) {
    let cloud = random_cloud(2048, 7);
    c.bench_function("fps_2048_to_1024", |bench| {
        bench.iter(|| dataset::fps(black_box(&cloud), 1024, 0).unwrap())
    });
}

criterion_group!(
    benches,
    bench_tensor_build,
    bench_tensor_loss,
    bench_gradients,
    bench_encoders,
    bench_fps
);
criterion_main!(benches);
