use std::collections::BTreeSet;

use relground_core::datamodel::{
    encode_video_features, load_samples, tokenize_relation, Manifest, VideoRelationSample,
};
use relground_core::evalkit::{accuracy, ground_truth_of, zero_shot_split, MetricConfig};
use relground_core::grounding::GroundingResult;
use relground_core::synthgen::{
    emit_dataset, generate_scene, oracle_relations, DatasetSpec, Entity, Motion, OracleRelation,
    Predicate, Scene, SceneSpec, CATEGORIES,
};

fn still(category: usize, x: f64, y: f64) -> Entity {
    Entity {
        category,
        width: 30.0,
        height: 30.0,
        x,
        y,
        motion: Motion::Linear { vx: 0.0, vy: 0.0 },
    }
}

#[test]
fn static_left_of_spans_all_frames() {
    let e = [still(0, 50.0, 100.0), still(1, 150.0, 100.0)];
    let rels = oracle_relations(&e, 24);
    assert!(rels.contains(&OracleRelation {
        subject: 0,
        predicate: Predicate::Left,
        object: 1,
        start: 0,
        end: 23
    }));
    assert!(rels.contains(&OracleRelation {
        subject: 1,
        predicate: Predicate::Right,
        object: 0,
        start: 0,
        end: 23
    }));
    assert!(!rels.iter().any(|r| matches!(
        r.predicate,
        Predicate::Above | Predicate::Beneath | Predicate::MoveToward
    )));
}

#[test]
fn approach_found_by_velocity_sign() {
    // subject walks right at 3 px/frame toward a still object, passes it
    // around frame 33 and keeps going
    let mover = Entity {
        category: 0,
        width: 20.0,
        height: 20.0,
        x: 20.0,
        y: 120.0,
        motion: Motion::Linear { vx: 3.0, vy: 0.0 },
    };
    let target = still(1, 120.0, 120.0);
    let frames = 50;
    let e = [mover.clone(), target.clone()];
    let rels = oracle_relations(&e, frames);
    let toward: Vec<_> = rels
        .iter()
        .filter(|r| r.predicate == Predicate::MoveToward && r.subject == 0)
        .collect();
    let away: Vec<_> = rels
        .iter()
        .filter(|r| r.predicate == Predicate::MoveAway && r.subject == 0)
        .collect();
    // recompute: approaching while the object is still ahead of the subject
    let ahead: Vec<usize> = (0..frames)
        .filter(|&t| {
            let (sx, _) = mover.box_at(t).center();
            let (ox, _) = target.box_at(t).center();
            ox - sx > 0.0
        })
        .collect();
    assert_eq!(toward.len(), 1);
    assert_eq!(
        (toward[0].start, toward[0].end),
        (ahead[0], *ahead.last().unwrap())
    );
    assert_eq!(away.len(), 1);
    assert_eq!(
        (away[0].start, away[0].end),
        (ahead.last().unwrap() + 1, frames - 1)
    );
}

#[test]
fn single_entity_spec_rejected() {
    let spec = SceneSpec {
        min_entities: 1,
        max_entities: 1,
        ..SceneSpec::default()
    };
    assert!(generate_scene(&spec, "x").is_err());
    let spec = SceneSpec {
        max_entities: 7,
        ..SceneSpec::default()
    };
    assert!(generate_scene(&spec, "x").is_err());
}

#[test]
fn scenes_are_deterministic() {
    let spec = SceneSpec {
        seed: 42,
        ..SceneSpec::default()
    };
    let a = generate_scene(&spec, "v").unwrap();
    let b = generate_scene(&spec, "v").unwrap();
    assert_eq!(
        encode_video_features(&a.features),
        encode_video_features(&b.features)
    );
    assert_eq!(a.describe(), b.describe());
    let c = generate_scene(&SceneSpec { seed: 43, ..spec }, "v").unwrap();
    assert_ne!(
        encode_video_features(&a.features),
        encode_video_features(&c.features)
    );
}

fn check_scene(scene: &Scene) {
    let spec = SceneSpec::default();
    let f = &scene.features;
    assert_eq!(
        (f.num_frames(), f.regions_per_frame(), f.appearance_dim()),
        (24, 6, 8)
    );
    assert!((3..=6).contains(&scene.entities.len()));
    // target holds on every frame
    let (s, o) = scene.target;
    let q = scene.query.canonical();
    assert!(scene.relations.iter().any(|r| r.subject == s
        && r.object == o
        && r.start == 0
        && r.end == 23
        && scene.relation_name(r) == q));
    for r in &scene.relations {
        assert!(r.len() >= 3);
        tokenize_relation(&scene.relation_name(r)).unwrap();
        for t in r.start..=r.end {
            let boxes: Vec<_> = f.frame_regions(t).iter().map(|p| p.bbox).collect();
            assert!(boxes.contains(&scene.entities[r.subject].box_at(t)));
            assert!(boxes.contains(&scene.entities[r.object].box_at(t)));
        }
    }
    for t in 0..24 {
        for p in f.frame_regions(t) {
            assert!(
                p.bbox.x_min >= 0.0
                    && p.bbox.y_min >= 0.0
                    && p.bbox.x_max <= spec.canvas
                    && p.bbox.y_max <= spec.canvas
            );
        }
    }
    // true trajectories fed back as predictions score perfectly
    let gt = scene.ground_truth();
    assert!(!gt.is_empty());
    let sample = VideoRelationSample {
        video_id: f.video_id().to_string(),
        features: std::sync::Arc::new(f.clone()),
        query: scene.query.clone(),
        ground_truth: Some(gt.clone()),
    };
    let table = ground_truth_of(&[sample]).unwrap();
    for inst in &gt {
        let r = GroundingResult {
            video_id: f.video_id().to_string(),
            relation: q.clone(),
            subject: inst.subject.clone(),
            object: inst.object.clone(),
            score: 0.0,
            links: vec![],
        };
        let rep = accuracy(&[r], &table, &MetricConfig::default()).unwrap();
        assert!(rep
            .subject
            .iter()
            .chain(&rep.object)
            .chain(&rep.relation)
            .all(|&v| v == 1.0));
    }
}

#[test]
fn generated_scenes_satisfy_contracts() {
    let mut distractors = 0;
    let mut predicates = BTreeSet::new();
    for seed in 0..200 {
        let scene = generate_scene(
            &SceneSpec {
                seed,
                ..SceneSpec::default()
            },
            &format!("s{seed}"),
        )
        .unwrap();
        check_scene(&scene);
        distractors += scene.has_distractor as usize;
        predicates.insert(scene.query.predicate_text());
        if scene.has_distractor {
            let (s, o) = scene.target;
            let (cs, co) = (scene.entities[s].category, scene.entities[o].category);
            let same = scene
                .entities
                .iter()
                .filter(|e| e.category == cs || e.category == co)
                .count();
            assert_eq!(same, 3);
        } else {
            let (s, o) = scene.target;
            assert!(scene.entities.iter().enumerate().all(|(i, e)| i == s
                || i == o
                || (e.category != scene.entities[s].category
                    && e.category != scene.entities[o].category)));
        }
    }
    assert!(
        (70..=130).contains(&distractors),
        "{distractors} distractor scenes of 200"
    );
    assert_eq!(predicates.len(), 6);
}

#[test]
fn every_predicate_can_be_targeted() {
    for p in Predicate::ALL {
        for seed in 0..5 {
            let spec = SceneSpec {
                seed,
                target: Some((0, p, 3)),
                ..SceneSpec::default()
            };
            let scene = generate_scene(&spec, "t").unwrap();
            assert_eq!(
                scene.query.canonical(),
                format!("{}-{}-{}", CATEGORIES[0], p.name(), CATEGORIES[3])
            );
            check_scene(&scene);
        }
    }
}

#[test]
fn dataset_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let spec = DatasetSpec {
        seed: 5,
        train_count: 10,
        test_count: 4,
        ..DatasetSpec::default()
    };
    let summary = emit_dataset(&spec, dir.path()).unwrap();
    let train = Manifest::load(&summary.train_manifest).unwrap();
    assert_eq!(train.entries.len(), 10);
    let samples = load_samples(&train, true).unwrap();
    assert_eq!(samples.len(), 10);
    for s in &samples {
        assert!(!s.ground_truth.as_ref().unwrap().is_empty());
        assert_eq!(s.features.num_frames(), 24);
    }
    assert_eq!(
        load_samples(&Manifest::load(&summary.test_manifest).unwrap(), true)
            .unwrap()
            .len(),
        4
    );
    assert!(dir.path().join("scenes/train_00003.txt").exists());
    let meta = std::fs::read_to_string(&summary.meta).unwrap();
    assert!(meta.contains("position_gap=10"));

    // same seed, same bytes
    let dir2 = tempfile::tempdir().unwrap();
    emit_dataset(&spec, dir2.path()).unwrap();
    for f in [
        "train.manifest",
        "features/test_00002.vrgv",
        "gt/train_00007.gt",
    ] {
        assert_eq!(
            std::fs::read(dir.path().join(f)).unwrap(),
            std::fs::read(dir2.path().join(f)).unwrap()
        );
    }

    assert!(emit_dataset(
        &DatasetSpec {
            train_count: 0,
            ..spec.clone()
        },
        dir.path()
    )
    .is_err());
}

#[test]
fn zero_shot_fraction_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let spec = DatasetSpec {
        seed: 8,
        train_count: 200,
        test_count: 40,
        zero_shot_fraction: 0.2,
        ..DatasetSpec::default()
    };
    let summary = emit_dataset(&spec, dir.path()).unwrap();
    assert_eq!(summary.zero_shot_videos.len(), 8);
    let train = load_samples(&Manifest::load(&summary.train_manifest).unwrap(), true).unwrap();
    let test = load_samples(&Manifest::load(&summary.test_manifest).unwrap(), true).unwrap();
    let queries: Vec<_> = train.iter().map(|s| s.query.clone()).collect();
    let picked: BTreeSet<String> = zero_shot_split(&queries, &test)
        .into_iter()
        .map(|s| s.video_id)
        .collect();
    assert_eq!(picked, summary.zero_shot_videos);
}
