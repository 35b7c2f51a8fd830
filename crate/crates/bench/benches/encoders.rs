use codemix_bench::encoded;
use codemix_core::nn::gradcheck::grad_check;
use codemix_core::nn::model::init_params;
use codemix_core::nn::train::batch_gradients;
use codemix_core::nn::{EncoderKind, Mode, ModelSpec};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const VOCAB: usize = 2000;
const CHARS: usize = 60;

/// Forward and backward over a batch of 32 twenty-word tweets at the
/// full model sizes.
fn batch_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("batch_gradients");
    group.sample_size(10);
    let data = encoded(32, 20, VOCAB, CHARS, 1);
    let batch: Vec<_> = data.iter().collect();
    for kind in EncoderKind::ALL {
        let spec = ModelSpec::full(kind);
        let params = init_params(&spec, VOCAB, CHARS, 2).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(kind), &spec, |b, spec| {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            b.iter(|| batch_gradients(spec, &params, &batch, Mode::Train, &mut rng).unwrap())
        });
    }
    group.finish();
}

fn gradient_check(c: &mut Criterion) {
    let mut group = c.benchmark_group("grad_check_tiny");
    group.sample_size(10);
    for kind in EncoderKind::ALL {
        let spec = ModelSpec::tiny(kind).with_chars(3, 2).with_mtl(0.5);
        group.bench_with_input(BenchmarkId::from_parameter(kind), &spec, |b, spec| {
            b.iter(|| grad_check(spec, 1e-4, 17).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, batch_step, gradient_check);
criterion_main!(benches);
