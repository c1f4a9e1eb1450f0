use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use relground_core::datamodel::{RelationQuery, VideoFeatures};
use relground_core::encoder::{
    encode, encode_video, fuse_pair, region_embed, relation_embedding, shift_messages,
    spatial_attend, EncoderConfig, QueryVectors,
};
use relground_core::model::{tiny_config, tiny_fixture, GroundingModel};
use relground_core::numerics::{Graph, ParamId, ParamStore, Tensor};

fn fixture(
    config_edit: impl FnOnce(&mut EncoderConfig),
) -> (GroundingModel, VideoFeatures, RelationQuery) {
    let mut c = tiny_config();
    config_edit(&mut c.encoder);
    tiny_fixture(c, 7).unwrap()
}

fn zero(store: &mut ParamStore, id: ParamId) {
    store.get_mut(id).data_mut().fill(0.0);
}

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::matrix(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    )
    .unwrap()
}

fn assert_close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() <= tol, "{x} vs {y}");
    }
}

#[test]
fn region_embedding_is_additive() {
    let (mut model, _, _) = fixture(|_| {});
    let p = model.encoder_params().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let app = random_matrix(3, 6, &mut rng);
    let mut geo_rows = random_matrix(3, 5, &mut rng);
    // rows 1 and 2 share appearance and geometry
    let row1_app = app.row_slice(1).to_vec();
    let mut app_data = app.data().to_vec();
    app_data[12..18].copy_from_slice(&row1_app);
    let app = Tensor::matrix(3, 6, app_data).unwrap();
    let row1_geo = geo_rows.row_slice(1).to_vec();
    geo_rows.data_mut()[10..15].copy_from_slice(&row1_geo);

    {
        let mut g = Graph::new(model.params());
        let (a, b) = (g.constant(app.clone()), g.constant(geo_rows.clone()));
        let r = region_embed(&mut g, &p, a, b).unwrap();
        let out = g.value(r);
        assert_eq!(out.row_slice(1), out.row_slice(2));
        assert!(out.data().iter().any(|&v| v != 0.0));
    }

    // geometry branch off: output is the appearance branch alone
    zero(model.params_mut(), p.geometry_w);
    zero(model.params_mut(), p.geometry_b);
    {
        let store = model.params();
        let expected: Vec<f64> = {
            let w = store.get(p.appearance_w);
            let b = store.get(p.appearance_b);
            let mut out = Vec::new();
            for r in 0..3 {
                for j in 0..w.cols() {
                    let s: f64 =
                        (0..6).map(|i| app.get(r, i) * w.get(i, j)).sum::<f64>() + b.data()[j];
                    out.push(s.max(0.0));
                }
            }
            out
        };
        let mut g = Graph::new(store);
        let (a, b) = (g.constant(app.clone()), g.constant(geo_rows.clone()));
        let r = region_embed(&mut g, &p, a, b).unwrap();
        assert_close(g.value(r).data(), &expected, 1e-12);
    }

    zero(model.params_mut(), p.appearance_w);
    zero(model.params_mut(), p.appearance_b);
    let mut g = Graph::new(model.params());
    let (a, b) = (g.constant(app), g.constant(geo_rows));
    let r = region_embed(&mut g, &p, a, b).unwrap();
    assert!(g.value(r).data().iter().all(|&v| v == 0.0));
}

#[test]
fn spatial_attention_examples() {
    let (mut model, _, _) = fixture(|_| {});
    let p = model.encoder_params().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let region = random_matrix(1, 8, &mut rng);
    let query = random_matrix(1, 8, &mut rng);

    // two identical regions split the mass evenly
    {
        let mut g = Graph::new(model.params());
        let two = Tensor::matrix(2, 8, [region.data(), region.data()].concat()).unwrap();
        let r = g.constant(two);
        let q = g.constant(query.clone());
        let (alpha, pooled) = spatial_attend(&mut g, &p, r, 2, q).unwrap();
        assert_eq!(g.value(alpha).data(), &[0.5, 0.5]);
        assert_close(g.value(pooled).data(), region.data(), 1e-15);
    }

    // constant scores give a uniform distribution for any regions
    zero(model.params_mut(), p.spatial_w2);
    let mut g = Graph::new(model.params());
    let regions = g.constant(random_matrix(6, 8, &mut rng));
    let q = g.constant(query);
    let (alpha, _) = spatial_attend(&mut g, &p, regions, 3, q).unwrap();
    assert_close(g.value(alpha).data(), &[1.0 / 3.0; 6], 1e-15);

    // a one-hot distribution pools exactly that region
    let items = random_matrix(4, 8, &mut rng);
    let mut g = Graph::new(model.params());
    let a = g.constant(Tensor::matrix(1, 4, vec![0.0, 0.0, 1.0, 0.0]).unwrap());
    let it = g.constant(items.clone());
    let f = g.attend_pool(a, it).unwrap();
    assert_eq!(g.value(f).data(), items.row_slice(2));
}

#[test]
fn message_examples() {
    let (mut model, _, _) = fixture(|_| {});
    let p = model.encoder_params().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let alpha = Tensor::matrix(1, 4, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
    let (fs, fo) = (random_matrix(1, 8, &mut rng), random_matrix(1, 8, &mut rng));

    // equal attention and equal transfer matrices give equal messages
    let so = model.params().get(p.msg_so).clone();
    *model.params_mut().get_mut(p.msg_os) = so;
    {
        let mut g = Graph::new(model.params());
        let (a_s, a_o) = (g.constant(alpha.clone()), g.constant(alpha.clone()));
        let zero_feat = g.constant(Tensor::zeros(&[1, 8]));
        let (s, o) = shift_messages(&mut g, &p, a_s, a_o, zero_feat, zero_feat).unwrap();
        assert_eq!(g.value(s).data(), g.value(o).data());
        assert!(g.value(s).data().iter().any(|&v| v > 0.0));
    }

    zero(model.params_mut(), p.msg_so);
    zero(model.params_mut(), p.msg_os);
    let mut g = Graph::new(model.params());
    let (a_s, a_o) = (g.constant(alpha.clone()), g.constant(alpha));
    let (s_in, o_in) = (g.constant(fs.clone()), g.constant(fo.clone()));
    let (s, o) = shift_messages(&mut g, &p, a_s, a_o, s_in, o_in).unwrap();
    assert_eq!(g.value(s).data(), fs.data());
    assert_eq!(g.value(o).data(), fo.data());
}

#[test]
fn disabled_messages_leave_pooled_features() {
    let (model, video, query) = fixture(|c| c.use_msg = false);
    let q = QueryVectors::new(&query, model.embeddings()).unwrap();
    let mut g = Graph::new(model.params());
    let out = encode(
        &mut g,
        model.encoder_params(),
        &model.config().encoder,
        &video,
        &q,
        None,
    )
    .unwrap();
    // recompute the attended features without any message step
    let regions_in = (
        g.constant(Tensor::matrix(24, 6, video.appearance_matrix()).unwrap()),
        g.constant(Tensor::matrix(24, 5, video.geometry_matrix()).unwrap()),
    );
    let p = model.encoder_params();
    let regions = region_embed(&mut g, p, regions_in.0, regions_in.1).unwrap();
    let w = g.constant(Tensor::row(&q.subject).unwrap());
    let gw = {
        let (ww, wb) = (g.param(p.word_w), g.param(p.word_b));
        g.affine(w, ww, wb).unwrap()
    };
    let (_, pooled) = spatial_attend(&mut g, p, regions, 4, gw).unwrap();
    assert_eq!(g.value(pooled).data(), g.value(out.subject_features).data());
}

#[test]
fn fuse_pair_examples() {
    let (mut model, _, _) = fixture(|_| {});
    let p = model.encoder_params().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (fs, fo) = (random_matrix(1, 8, &mut rng), random_matrix(1, 8, &mut rng));
    let bias: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
    model
        .params_mut()
        .get_mut(p.fuse_b)
        .data_mut()
        .copy_from_slice(&bias);

    // swapping the halves changes the output: compare against a direct product
    {
        let store = model.params();
        let w = store.get(p.fuse_w);
        let manual = |a: &Tensor, b: &Tensor| -> Vec<f64> {
            let x: Vec<f64> = a.data().iter().chain(b.data()).copied().collect();
            (0..8)
                .map(|j| (0..16).map(|i| x[i] * w.get(i, j)).sum::<f64>() + bias[j])
                .collect()
        };
        let mut g = Graph::new(store);
        let (s, o) = (g.constant(fs.clone()), g.constant(fo.clone()));
        let forward = fuse_pair(&mut g, &p, s, o, None).unwrap();
        let swapped = fuse_pair(&mut g, &p, o, s, None).unwrap();
        assert_close(g.value(forward).data(), &manual(&fs, &fo), 1e-12);
        assert_close(g.value(swapped).data(), &manual(&fo, &fs), 1e-12);
        assert_ne!(g.value(forward).data(), g.value(swapped).data());

        let z = g.constant(Tensor::zeros(&[1, 8]));
        let at_zero = fuse_pair(&mut g, &p, z, z, None).unwrap();
        assert_eq!(g.value(at_zero).data(), &bias[..]);
    }

    zero(model.params_mut(), p.fuse_w);
    let mut g = Graph::new(model.params());
    let (s, o) = (g.constant(fs), g.constant(fo));
    let f = fuse_pair(&mut g, &p, s, o, None).unwrap();
    assert_eq!(g.value(f).data(), &bias[..]);
}

#[test]
fn clip_representatives_are_clip_final_frames() {
    let (model, video, query) = fixture(|_| {});
    assert_eq!(model.config().encoder.clip_ends(), vec![2, 5]);
    let q = QueryVectors::new(&query, model.embeddings()).unwrap();
    let mut g = Graph::new(model.params());
    let out = encode(
        &mut g,
        model.encoder_params(),
        &model.config().encoder,
        &video,
        &q,
        None,
    )
    .unwrap();
    let frames = g.value(out.frame_states).clone();
    let clips = g.value(out.clip_states.unwrap());
    assert_eq!(clips.rows(), 2);
    assert_eq!(clips.row_slice(0), frames.row_slice(2));
    assert_eq!(clips.row_slice(1), frames.row_slice(5));

    // attention-weighted pooling of the frame encodings
    let beta = g.value(out.beta_l1).data().to_vec();
    let pooled: Vec<f64> = (0..16)
        .map(|j| (0..6).map(|i| beta[i] * frames.get(i, j)).sum())
        .collect();
    assert_close(g.value(out.feat_v).data(), &pooled, 1e-14);
}

#[test]
fn one_hot_frame_attention_selects_that_frame() {
    let (model, _, _) = fixture(|_| {});
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let frames = random_matrix(6, 16, &mut rng);
    let mut g = Graph::new(model.params());
    let beta = g.constant(Tensor::matrix(1, 6, vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap());
    let f = g.constant(frames.clone());
    let pooled = g.matmul(beta, f).unwrap();
    assert_eq!(g.value(pooled).data(), frames.row_slice(3));
}

#[test]
fn disabled_temporal_attention_is_a_plain_mean() {
    let mut c = tiny_config();
    c.encoder.num_frames = 4;
    c.encoder.num_clips = 2;
    c.encoder.clip_len = 2;
    c.encoder.use_tau = false;
    let (model, _, _) = tiny_fixture(c, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut g = Graph::new(model.params());
    let nodes = g.constant(random_matrix(4, 8, &mut rng));
    let rel = g.constant(random_matrix(1, 16, &mut rng));
    let t = encode_video(
        &mut g,
        model.encoder_params(),
        &model.config().encoder,
        nodes,
        rel,
    )
    .unwrap();
    let frames = g.value(t.frame_states);
    let mean: Vec<f64> = (0..16)
        .map(|j| (0..4).map(|i| frames.get(i, j)).sum::<f64>() / 4.0)
        .collect();
    assert_close(g.value(t.feat_v).data(), &mean, 1e-15);
    assert_eq!(g.value(t.beta_l1).data(), &[0.25; 4]);
    assert_eq!(g.value(t.beta_l2).data(), &[0.5; 2]);
}

#[test]
fn clip_level_off_uses_uniform_clip_attention() {
    let (model, video, query) = fixture(|c| c.use_clip = false);
    let maps = model.attention(&video, &query).unwrap();
    assert_eq!(maps.clip, vec![0.5, 0.5]);
    let s: f64 = maps.frame.iter().sum();
    assert!((s - 1.0).abs() < 1e-12);
    assert!(maps.frame.iter().any(|&b| (b - 1.0 / 6.0).abs() > 1e-9));
}

#[test]
fn temporal_encoder_rejects_bad_clip_split() {
    let mut c = tiny_config().encoder;
    c.clip_len = 4;
    assert!(c.validate().is_err());
    c.clip_len = 3;
    c.num_clips = 3;
    assert!(c.validate().is_err());
}

#[test]
fn relation_embedding_examples() {
    let (model, _, _) = fixture(|_| {});
    let p = model.encoder_params();
    let table = model.embeddings();
    let parse = |s: &str| s.parse::<RelationQuery>().unwrap();
    let qa = QueryVectors::new(&parse("person-ride-bicycle"), table).unwrap();
    let qb = QueryVectors::new(&parse("person-chase-bicycle"), table).unwrap();

    let mut g = Graph::new(model.params());
    let a1 = relation_embedding(&mut g, p, &qa, true).unwrap();
    let a2 = relation_embedding(&mut g, p, &qa, true).unwrap();
    assert_eq!(g.value(a1).data(), g.value(a2).data());
    let b = relation_embedding(&mut g, p, &qb, true).unwrap();
    assert_ne!(g.value(a1).data(), g.value(b).data());
    let a_np = relation_embedding(&mut g, p, &qa, false).unwrap();
    let b_np = relation_embedding(&mut g, p, &qb, false).unwrap();
    assert_eq!(g.value(a_np).data(), g.value(b_np).data());

    // single words: the three word vectors concatenated, then the transform
    let x: Vec<f64> = [
        table.lookup("person"),
        table.lookup("ride"),
        table.lookup("bicycle"),
    ]
    .concat();
    let w = model.params().get(p.relation_w);
    let bias = model.params().get(p.relation_b);
    let expected: Vec<f64> = (0..16)
        .map(|j| ((0..24).map(|i| x[i] * w.get(i, j)).sum::<f64>() + bias.data()[j]).max(0.0))
        .collect();
    assert_close(g.value(a1).data(), &expected, 1e-12);
}

#[test]
fn region_order_is_irrelevant_without_messages() {
    let (model, video, query) = fixture(|c| c.use_msg = false);
    let q = QueryVectors::new(&query, model.embeddings()).unwrap();
    let permuted = {
        let frames = (0..video.num_frames())
            .map(|i| {
                let mut r = video.frame_regions(i).to_vec();
                r.rotate_left(1 + i % 3);
                r
            })
            .collect();
        VideoFeatures::new(
            "perm",
            video.frame_width(),
            video.frame_height(),
            video.total_frames(),
            video.sampled_frames().to_vec(),
            frames,
        )
        .unwrap()
        .0
    };
    let run = |v: &VideoFeatures| {
        let mut g = Graph::new(model.params());
        let out = encode(
            &mut g,
            model.encoder_params(),
            &model.config().encoder,
            v,
            &q,
            None,
        )
        .unwrap();
        (
            g.value(out.subject_features).data().to_vec(),
            g.value(out.object_features).data().to_vec(),
            g.value(out.feat_v).data().to_vec(),
        )
    };
    let (a, b) = (run(&video), run(&permuted));
    assert_close(&a.0, &b.0, 1e-12);
    assert_close(&a.1, &b.1, 1e-12);
    assert_close(&a.2, &b.2, 1e-12);
}

#[test]
fn zero_messages_match_the_message_free_model() {
    let (mut full, video, query) = fixture(|_| {});
    let p = full.encoder_params().clone();
    zero(full.params_mut(), p.msg_so);
    zero(full.params_mut(), p.msg_os);
    let (mut ablated, _, _) = fixture(|c| c.use_msg = false);
    ablated.params_mut().load_from(full.params()).unwrap();
    assert_eq!(
        full.loss(&video, &query).unwrap(),
        ablated.loss(&video, &query).unwrap()
    );
}

#[test]
fn evaluation_is_deterministic() {
    let (model, video, query) = fixture(|_| {});
    let a = model.encode(&video, &query).unwrap();
    let b = model.encode(&video, &query).unwrap();
    assert_eq!(a, b);
}

#[test]
fn dropout_only_in_training_mode() {
    let (model, video, query) = fixture(|_| {});
    let q = model.query_vectors(&query).unwrap();
    let t = model.target(&query).unwrap();
    let (eval, _) = model.loss_and_grads(&video, &q, &t, None).unwrap();
    assert_eq!(eval, model.loss(&video, &query).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (train, _) = model
        .loss_and_grads(&video, &q, &t, Some((0.5, &mut rng)))
        .unwrap();
    assert_ne!(train, eval);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (again, _) = model
        .loss_and_grads(&video, &q, &t, Some((0.5, &mut rng)))
        .unwrap();
    assert_eq!(train, again);
}
