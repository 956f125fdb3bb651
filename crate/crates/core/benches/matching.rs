use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use xfnl_core::backends::{make_test_embedder, OracleGenerator};
use xfnl_core::corpus::{Split, TagId};
use xfnl_core::matcher::{IndexSource, TagIndex};
use xfnl_core::par::{self, Parallelism};
use xfnl_core::pipeline::{execute, RunSettings, Stages};
use xfnl_core::prompting::{plan_prompts, PromptRenderer};
use xfnl_core::synthetic::{self, SyntheticSpec};

const MODES: [(&str, Parallelism); 3] = [
    ("sequential", Parallelism::Sequential),
    ("threads4", Parallelism::Threads(4)),
    ("global", Parallelism::Global),
];

fn random_index(tags: usize, dim: usize, rng: &mut ChaCha8Rng) -> TagIndex {
    TagIndex::from_vectors((0..tags).map(|i| {
        (
            TagId::new(&format!("tag {i:05}")),
            (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
    }))
    .unwrap()
}

fn batch_top_k(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let index = random_index(2000, 256, &mut rng);
    let queries: Vec<Vec<f64>> = (0..512)
        .map(|_| (0..256).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let mut group = c.benchmark_group("batch_top5_2000x256");
    for (name, mode) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &mode, |b, &mode| {
            b.iter(|| {
                par::map(&queries, mode, |q| {
                    index.top_k(black_box(q), 5, None).unwrap()
                })
            })
        });
    }
    group.finish();
}

fn pipeline(c: &mut Criterion) {
    let corpus = synthetic::corpus(&SyntheticSpec {
        n_tags: 200,
        n_statements: 2000,
        ..SyntheticSpec::default()
    });
    let renderer = PromptRenderer::with_default_instruction(Default::default());
    let plan = plan_prompts(&corpus, Split::Test, &renderer).unwrap();
    let generator = OracleGenerator::from_instances(plan.instances());
    let embedder = make_test_embedder(2048, 0);
    let index = TagIndex::build(corpus.taxonomy(), &embedder, IndexSource::Documentation).unwrap();
    let mut group = c.benchmark_group("pipeline_oracle");
    group.sample_size(20);
    for (name, mode) in MODES {
        let settings = RunSettings {
            parallelism: mode,
            ..RunSettings::default()
        };
        group.bench_with_input(
            BenchmarkId::from_parameter(name),
            &settings,
            |b, settings| {
                b.iter(|| {
                    let stages = Stages {
                        generator: &generator,
                        embedder: &embedder,
                        index: &index,
                    };
                    execute(&corpus, plan.clone(), stages, settings, None, Vec::new()).unwrap()
                })
            },
        );
    }
    group.finish();
}

criterion_group!(benches, batch_top_k, pipeline);
criterion_main!(benches);
