use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use relground_core::datamodel::Vocabulary;
use relground_core::encoder::EncoderConfig;
use relground_core::model::{EmbeddingSource, GroundingModel, ModelConfig};
use relground_core::synthgen::{generate_scene, SceneSpec};

fn setup() -> (GroundingModel, relground_core::synthgen::Scene) {
    let scene = generate_scene(
        &SceneSpec {
            seed: 4,
            ..SceneSpec::default()
        },
        "bench",
    )
    .unwrap();
    let encoder = EncoderConfig {
        num_frames: 24,
        num_clips: 4,
        clip_len: 6,
        regions: 6,
        appearance_dim: 8,
        region_dim: 32,
        word_dim: 32,
        query_dim: 32,
        attention_dim: 32,
        hidden_dim: 64,
        ..EncoderConfig::default()
    };
    let config = ModelConfig {
        encoder,
        token_dim: 32,
        max_decode_len: 8,
    };
    let vocab = Vocabulary::from_queries([&scene.query]);
    let model = GroundingModel::new(
        config,
        vocab,
        EmbeddingSource::Hashed { dim: 32, seed: 1 },
        2,
    )
    .unwrap();
    (model, scene)
}

fn model(c: &mut Criterion) {
    let (model, scene) = setup();
    let q = model.query_vectors(&scene.query).unwrap();
    let target = model.target(&scene.query).unwrap();
    c.bench_function("forward", |b| {
        b.iter(|| {
            model
                .loss(black_box(&scene.features), black_box(&scene.query))
                .unwrap()
        })
    });
    c.bench_function("forward_backward", |b| {
        b.iter(|| {
            model
                .loss_and_grads(black_box(&scene.features), &q, &target, None)
                .unwrap()
        })
    });
    c.bench_function("attention", |b| {
        b.iter(|| {
            model
                .attention(black_box(&scene.features), &scene.query)
                .unwrap()
        })
    });
}

criterion_group!(benches, model);
criterion_main!(benches);
