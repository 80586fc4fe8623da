//! Sequential vs parallel execution of the data-parallel kernels.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ski_core::lvlm::{evaluate_nll, prepare_samples, LvlmConfig, LvlmModel, ProjectorConfig, ToyCausalLM};
use ski_core::par::Exec;
use ski_core::params::init_normal;
use ski_core::synthdata::{generate_dataset, generate_dataset_with, DatasetConfig};
use ski_core::training::{init_models, TrainConfig};
use ski_core::zseval::{evaluate_split_with, Side};

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn matmul(c: &mut Criterion) {
    let mut group = c.benchmark_group("matmul");
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for n in [64usize, 256] {
        let a = init_normal(&mut rng, n, n, 1.0);
        let b = init_normal(&mut rng, n, n, 1.0);
        for (name, exec) in MODES {
            group.bench_with_input(BenchmarkId::new(name, n), &n, |bch, _| bch.iter(|| a.matmul(&b, exec).unwrap()));
        }
    }
    group.finish();
}

fn small_data() -> DatasetConfig {
    DatasetConfig {
        samples_per_class: 10,
        ..DatasetConfig::default()
    }
}

fn dataset_generation(c: &mut Criterion) {
    let mut group = c.benchmark_group("generate_dataset");
    group.sample_size(10);
    let cfg = small_data();
    for (name, exec) in MODES {
        group.bench_function(name, |b| b.iter(|| generate_dataset_with(&cfg, exec).unwrap()));
    }
    group.finish();
}

fn zero_shot_eval(c: &mut Criterion) {
    let mut group = c.benchmark_group("zero_shot_eval");
    group.sample_size(10);
    let data = generate_dataset(&small_data()).unwrap();
    let models = init_models(&data.config, &data.split, &TrainConfig::default()).unwrap();
    for (name, exec) in MODES {
        group.bench_function(name, |b| {
            b.iter(|| evaluate_split_with(&models.videoclip, &data, &data.split, Side::Unseen, exec).unwrap())
        });
    }
    group.finish();
}

fn lvlm_nll(c: &mut Criterion) {
    let mut group = c.benchmark_group("lvlm_nll");
    group.sample_size(10);
    let data = generate_dataset(&small_data()).unwrap();
    let models = init_models(&data.config, &data.split, &TrainConfig::default()).unwrap();
    let cfg = LvlmConfig::default();
    let lm = ToyCausalLM::new(&cfg).unwrap();
    let (f_v, g_s) = (&models.videoclip.video, &models.skeletonclip.skeleton);
    let triplets: Vec<_> = data.triplets.iter().take(20).collect();
    let samples = prepare_samples(&lm, f_v, g_s, &triplets, Exec::Sequential).unwrap();
    let dims = ProjectorConfig {
        d_v: f_v.d_out(),
        d_s: g_s.d_out(),
        n_v: data.config.t_v,
        n_s: data.config.t_s,
        k: cfg.width,
    };
    let model = LvlmModel::new(&cfg, dims, true).unwrap();
    for (name, exec) in MODES {
        group.bench_function(name, |b| b.iter(|| evaluate_nll(&model, &samples, true, exec).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, matmul, dataset_generation, zero_shot_eval, lvlm_nll);
criterion_main!(benches);
