use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use crysgen::corpus::{synthetic_perovskites, CorpusConfig};
use crysgen::denoiser::{init_params, DenoiserConfig};
use crysgen::diffusion::{make_schedules, LatticeNorm};
use crysgen::metrics::{coverage, fingerprint};
use crysgen::proposer::FileProposer;
use crysgen::sampler::{generate_batch, SamplerConfig};
use crysgen::text::{build_prompt, PromptKind};
use crysgen::trainer::batch_gradient;
use crysgen::{Crystal, Execution};

const MODES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn corpus(n: usize) -> Vec<Crystal> {
    synthetic_perovskites(&CorpusConfig {
        size: n,
        seed: 1,
        ..CorpusConfig::default()
    })
    .unwrap()
}

fn gradient(c: &mut Criterion) {
    let set = corpus(32);
    let batch: Vec<&Crystal> = set.iter().collect();
    let params = init_params(0, DenoiserConfig::default()).unwrap();
    let sched = make_schedules(1000, 0.005, 0.6).unwrap();
    let lattices: Vec<_> = set.iter().map(|x| *x.lattice()).collect();
    let norm = LatticeNorm::fit(&lattices);
    let mut group = c.benchmark_group("batch_gradient");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| batch_gradient(&params, &sched, &norm, &batch, 3, 0, exec).unwrap())
        });
    }
    group.finish();
}

fn sampling(c: &mut Criterion) {
    let set = corpus(16);
    let lattices: Vec<_> = set.iter().map(|x| *x.lattice()).collect();
    let norm = LatticeNorm::fit(&lattices);
    let proposer = FileProposer::new(set, 4, "bench").unwrap();
    let params = init_params(0, DenoiserConfig::default()).unwrap();
    let sched = make_schedules(1000, 0.005, 0.6).unwrap();
    let prompt = build_prompt(PromptKind::Unconditional).unwrap();
    let cfg = SamplerConfig {
        tau: Some(20),
        ..SamplerConfig::default()
    };
    let mut group = c.benchmark_group("generate_batch");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| generate_batch(&prompt, 16, &proposer, &params, &sched, &norm, &cfg, exec).unwrap())
        });
    }
    group.finish();
}

fn coverage_scan(c: &mut Criterion) {
    let set = corpus(400);
    let fps: Vec<Vec<f64>> = set.iter().map(fingerprint).collect();
    let (gen, reference) = fps.split_at(200);
    let mut group = c.benchmark_group("coverage");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| coverage(gen, reference, 0.5, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, gradient, sampling, coverage_scan);
criterion_main!(benches);
