//! Region-graph video encoder: per-frame spatial attention for subject and
//! object with attention-shifting messages, then frame- and clip-level
//! recurrent encoding pooled by relation-conditioned temporal attention.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::datamodel::{embed_tokens, EmbedMode, EmbeddingTable, RelationQuery, VideoFeatures};
use crate::error::{Error, Result};
use crate::numerics::{run_lstm, Graph, LstmParams, ParamId, ParamStore, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    /// Sampled frames per video (N).
    pub num_frames: usize,
    /// Clips per video (H).
    pub num_clips: usize,
    /// Frames per clip (L).
    pub clip_len: usize,
    /// Region proposals per frame (M).
    pub regions: usize,
    pub appearance_dim: usize,
    /// Region feature size (d).
    pub region_dim: usize,
    pub word_dim: usize,
    /// Size of the projected word feature g(.).
    pub query_dim: usize,
    /// Hidden width of the attention scorers.
    pub attention_dim: usize,
    /// LSTM hidden size (k).
    pub hidden_dim: usize,
    pub use_msg: bool,
    pub use_clip: bool,
    pub use_tau: bool,
    pub use_predicate: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            num_frames: 120,
            num_clips: 10,
            clip_len: 12,
            regions: 40,
            appearance_dim: 2048,
            region_dim: 256,
            word_dim: 300,
            query_dim: 256,
            attention_dim: 256,
            hidden_dim: 512,
            use_msg: true,
            use_clip: true,
            use_tau: true,
            use_predicate: true,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("num_frames", self.num_frames),
            ("num_clips", self.num_clips),
            ("clip_len", self.clip_len),
            ("regions", self.regions),
            ("appearance_dim", self.appearance_dim),
            ("region_dim", self.region_dim),
            ("word_dim", self.word_dim),
            ("query_dim", self.query_dim),
            ("attention_dim", self.attention_dim),
            ("hidden_dim", self.hidden_dim),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.num_frames % self.clip_len != 0 {
            return Err(Error::Config(format!(
                "{} frames do not divide into clips of length {}",
                self.num_frames, self.clip_len
            )));
        }
        if self.num_clips * self.clip_len != self.num_frames {
            return Err(Error::Config(format!(
                "{} clips of length {} do not cover {} frames",
                self.num_clips, self.clip_len, self.num_frames
            )));
        }
        Ok(())
    }

    /// Zero-based frame positions whose first-level output represents each
    /// clip: the last frame of every clip.
    pub fn clip_ends(&self) -> Vec<usize> {
        (1..=self.num_clips)
            .map(|c| c * self.clip_len - 1)
            .collect()
    }
}

/// Parameter handles of the encoder inside a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub appearance_w: ParamId,
    pub appearance_b: ParamId,
    pub geometry_w: ParamId,
    pub geometry_b: ParamId,
    pub word_w: ParamId,
    pub word_b: ParamId,
    /// Spatial scorer, shared by subject and object. The first `region_dim`
    /// rows of `spatial_w1` act on regions, the rest on the word feature.
    pub spatial_w1: ParamId,
    pub spatial_b1: ParamId,
    pub spatial_w2: ParamId,
    /// `M x d` transfer matrices carrying subject attention to the object
    /// and object attention to the subject.
    pub msg_so: ParamId,
    pub msg_os: ParamId,
    pub fuse_w: ParamId,
    pub fuse_b: ParamId,
    pub relation_w: ParamId,
    pub relation_b: ParamId,
    pub frame_lstm: LstmParams,
    pub clip_lstm: LstmParams,
    pub frame_tau_w1: ParamId,
    pub frame_tau_b1: ParamId,
    pub frame_tau_w2: ParamId,
    pub clip_tau_w1: ParamId,
    pub clip_tau_b1: ParamId,
    pub clip_tau_w2: ParamId,
}

impl EncoderParams {
    pub fn register(
        store: &mut ParamStore,
        c: &EncoderConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let (d, k, a) = (c.region_dim, c.hidden_dim, c.attention_dim);
        Ok(Self {
            appearance_w: store.register_uniform(
                "enc.appearance.w",
                &[c.appearance_dim, d],
                rng,
            )?,
            appearance_b: store.register_zeros("enc.appearance.b", &[d])?,
            geometry_w: store.register_uniform("enc.geometry.w", &[5, d], rng)?,
            geometry_b: store.register_zeros("enc.geometry.b", &[d])?,
            word_w: store.register_uniform("enc.word.w", &[c.word_dim, c.query_dim], rng)?,
            word_b: store.register_zeros("enc.word.b", &[c.query_dim])?,
            spatial_w1: store.register_uniform("enc.spatial.w1", &[d + c.query_dim, a], rng)?,
            spatial_b1: store.register_zeros("enc.spatial.b1", &[a])?,
            spatial_w2: store.register_uniform("enc.spatial.w2", &[a, 1], rng)?,
            msg_so: store.register_uniform("enc.msg.so", &[c.regions, d], rng)?,
            msg_os: store.register_uniform("enc.msg.os", &[c.regions, d], rng)?,
            fuse_w: store.register_uniform("enc.fuse.w", &[2 * d, d], rng)?,
            fuse_b: store.register_zeros("enc.fuse.b", &[d])?,
            relation_w: store.register_uniform("enc.relation.w", &[3 * c.word_dim, k], rng)?,
            relation_b: store.register_zeros("enc.relation.b", &[k])?,
            frame_lstm: LstmParams::register(store, "enc.frame_lstm", d, k, rng)?,
            clip_lstm: LstmParams::register(store, "enc.clip_lstm", k, k, rng)?,
            frame_tau_w1: store.register_uniform("enc.frame_tau.w1", &[2 * k, a], rng)?,
            frame_tau_b1: store.register_zeros("enc.frame_tau.b1", &[a])?,
            frame_tau_w2: store.register_uniform("enc.frame_tau.w2", &[a, 1], rng)?,
            clip_tau_w1: store.register_uniform("enc.clip_tau.w1", &[2 * k, a], rng)?,
            clip_tau_b1: store.register_zeros("enc.clip_tau.b1", &[a])?,
            clip_tau_w2: store.register_uniform("enc.clip_tau.w2", &[a, 1], rng)?,
        })
    }
}

/// Averaged word vectors of the three relation parts.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryVectors {
    pub subject: Vec<f64>,
    pub predicate: Vec<f64>,
    pub object: Vec<f64>,
}

impl QueryVectors {
    pub fn new(query: &RelationQuery, table: &EmbeddingTable) -> Result<Self> {
        Ok(Self {
            subject: embed_tokens(&query.subject, table, EmbedMode::Average)?,
            predicate: embed_tokens(&query.predicate, table, EmbedMode::Average)?,
            object: embed_tokens(&query.object, table, EmbedMode::Average)?,
        })
    }
}

/// Attention distributions of one forward pass, as plain numbers.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMaps {
    /// Per sampled frame, distribution over the M regions.
    pub subject: Vec<Vec<f64>>,
    pub object: Vec<Vec<f64>>,
    /// Distribution over the N sampled frames.
    pub frame: Vec<f64>,
    /// Distribution over the H clips.
    pub clip: Vec<f64>,
}

/// Intermediate encodings of one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphEmbedding {
    pub feat_v: Tensor,
    pub node_inputs: Tensor,
    pub frame_states: Tensor,
    /// `None` when the clip level is disabled.
    pub clip_states: Option<Tensor>,
    pub clip_summary: Option<Tensor>,
}

/// Tape handles produced by [`encode`].
#[derive(Clone, Copy, Debug)]
pub struct EncoderOutput {
    pub alpha_s: Var,
    pub alpha_o: Var,
    pub subject_features: Var,
    pub object_features: Var,
    pub node_inputs: Var,
    pub frame_states: Var,
    pub clip_states: Option<Var>,
    pub clip_summary: Option<Var>,
    pub relation: Var,
    pub beta_l1: Var,
    pub beta_l2: Var,
    pub feat_v: Var,
}

impl EncoderOutput {
    pub fn attention_maps(&self, g: &Graph) -> AttentionMaps {
        let rows = |v: Var| {
            let t = g.value(v);
            (0..t.rows()).map(|r| t.row_slice(r).to_vec()).collect()
        };
        AttentionMaps {
            subject: rows(self.alpha_s),
            object: rows(self.alpha_o),
            frame: g.value(self.beta_l1).data().to_vec(),
            clip: g.value(self.beta_l2).data().to_vec(),
        }
    }

    pub fn graph_embedding(&self, g: &Graph) -> GraphEmbedding {
        GraphEmbedding {
            feat_v: g.value(self.feat_v).clone(),
            node_inputs: g.value(self.node_inputs).clone(),
            frame_states: g.value(self.frame_states).clone(),
            clip_states: self.clip_states.map(|v| g.value(v).clone()),
            clip_summary: self.clip_summary.map(|v| g.value(v).clone()),
        }
    }
}

/// `ReLU(app W + b) + ReLU(geo W' + b')` for every row of the two inputs.
pub fn region_embed(
    g: &mut Graph,
    p: &EncoderParams,
    appearance: Var,
    geometry: Var,
) -> Result<Var> {
    let (aw, ab) = (g.param(p.appearance_w), g.param(p.appearance_b));
    let app = g.affine(appearance, aw, ab)?;
    let app = g.relu(app);
    let (gw, gb) = (g.param(p.geometry_w), g.param(p.geometry_b));
    let geo = g.affine(geometry, gw, gb)?;
    let geo = g.relu(geo);
    Ok(g.add(app, geo)?)
}

/// Projected word feature `g(.)` of one averaged word vector (`1 x word_dim`).
pub fn word_feature(g: &mut Graph, p: &EncoderParams, words: Var) -> Result<Var> {
    let (w, b) = (g.param(p.word_w), g.param(p.word_b));
    Ok(g.affine(words, w, b)?)
}

/// Additive attention scores `w2 . tanh(W1 [item, query] + b1)`, one per
/// row of `items`. `w1` stacks the item block above the query block.
pub fn attention_scores(
    g: &mut Graph,
    items: Var,
    query: Var,
    w1: Var,
    b1: Var,
    w2: Var,
) -> Result<Var> {
    let item_dim = g.value(items).cols();
    let query_dim = g.value(query).len();
    let w_items = g.slice_rows(w1, 0, item_dim)?;
    let w_query = g.slice_rows(w1, item_dim, query_dim)?;
    let from_items = g.matmul(items, w_items)?;
    let from_query = g.affine(query, w_query, b1)?;
    let pre = g.add_row(from_items, from_query)?;
    let act = g.tanh(pre);
    Ok(g.matmul(act, w2)?)
}

/// Spatial attention over groups of `m` consecutive region rows. Returns the
/// `n x m` distribution and the `n x d` attended features.
pub fn spatial_attend(
    g: &mut Graph,
    p: &EncoderParams,
    regions: Var,
    m: usize,
    query: Var,
) -> Result<(Var, Var)> {
    let total = g.value(regions).rows();
    if m == 0 || total % m != 0 {
        return Err(Error::Domain(format!(
            "{total} region rows do not split into groups of {m}"
        )));
    }
    let (w1, b1, w2) = (
        g.param(p.spatial_w1),
        g.param(p.spatial_b1),
        g.param(p.spatial_w2),
    );
    let scores = attention_scores(g, regions, query, w1, b1, w2)?;
    let scores = g.reshape(scores, vec![total / m, m])?;
    let alpha = g.softmax_rows(scores);
    let pooled = g.attend_pool(alpha, regions)?;
    Ok((alpha, pooled))
}

/// Attention shifting: each entity receives `ReLU(alpha_partner W)` from the
/// other. Rows are frames.
pub fn shift_messages(
    g: &mut Graph,
    p: &EncoderParams,
    alpha_s: Var,
    alpha_o: Var,
    f_s: Var,
    f_o: Var,
) -> Result<(Var, Var)> {
    let (so, os) = (g.param(p.msg_so), g.param(p.msg_os));
    let to_object = g.matmul(alpha_s, so)?;
    let to_object = g.relu(to_object);
    let to_subject = g.matmul(alpha_o, os)?;
    let to_subject = g.relu(to_subject);
    Ok((g.add(f_s, to_subject)?, g.add(f_o, to_object)?))
}

/// `[f_s, f_o] W3 + b3`, optionally followed by an inverted dropout mask.
pub fn fuse_pair(
    g: &mut Graph,
    p: &EncoderParams,
    f_s: Var,
    f_o: Var,
    dropout_mask: Option<Tensor>,
) -> Result<Var> {
    let joint = g.concat_cols(&[f_s, f_o])?;
    let (w, b) = (g.param(p.fuse_w), g.param(p.fuse_b));
    let out = g.affine(joint, w, b)?;
    match dropout_mask {
        Some(mask) => {
            let mask = g.constant(mask);
            Ok(g.mul(out, mask)?)
        }
        None => Ok(out),
    }
}

/// Inverted dropout mask: each entry is 0 with probability `rate`, else
/// `1 / (1 - rate)`.
pub fn dropout_mask(rows: usize, cols: usize, rate: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let keep = 1.0 - rate;
    let data = (0..rows * cols)
        .map(|_| {
            if rng.random::<f64>() < rate {
                0.0
            } else {
                1.0 / keep
            }
        })
        .collect();
    Tensor::matrix(rows, cols, data).expect("finite mask")
}

/// `f_R = ReLU([S; P; O] W + b)` with the predicate slot zeroed when
/// `use_predicate` is off.
pub fn relation_embedding(
    g: &mut Graph,
    p: &EncoderParams,
    q: &QueryVectors,
    use_predicate: bool,
) -> Result<Var> {
    let predicate = if use_predicate {
        q.predicate.clone()
    } else {
        vec![0.0; q.predicate.len()]
    };
    let mut joint = q.subject.clone();
    joint.extend(predicate);
    joint.extend_from_slice(&q.object);
    let x = g.constant(Tensor::row(&joint)?);
    let (w, b) = (g.param(p.relation_w), g.param(p.relation_b));
    let out = g.affine(x, w, b)?;
    Ok(g.relu(out))
}

/// Output of the temporal encoder.
#[derive(Clone, Copy, Debug)]
pub struct TemporalOutput {
    pub frame_states: Var,
    pub clip_states: Option<Var>,
    pub clip_summary: Option<Var>,
    pub beta_l1: Var,
    pub beta_l2: Var,
    pub feat_v: Var,
}

fn uniform_row(g: &mut Graph, n: usize) -> Var {
    g.constant(Tensor::matrix(1, n, vec![1.0 / n as f64; n]).expect("finite"))
}

fn temporal_attention(
    g: &mut Graph,
    items: Var,
    query: Var,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
) -> Result<Var> {
    let n = g.value(items).rows();
    let (w1, b1, w2) = (g.param(w1), g.param(b1), g.param(w2));
    let scores = attention_scores(g, items, query, w1, b1, w2)?;
    let scores = g.reshape(scores, vec![1, n])?;
    Ok(g.softmax_rows(scores))
}

/// Frame LSTM over the node inputs, clip LSTM over attended clip-final
/// frame states, then frame attention conditioned on the clip summary.
pub fn encode_video(
    g: &mut Graph,
    p: &EncoderParams,
    c: &EncoderConfig,
    node_inputs: Var,
    relation: Var,
) -> Result<TemporalOutput> {
    let n = g.value(node_inputs).rows();
    if n != c.num_frames || n % c.clip_len != 0 {
        return Err(Error::Config(format!(
            "{n} node inputs for {} frames in clips of {}",
            c.num_frames, c.clip_len
        )));
    }
    let k = c.hidden_dim;
    let h0 = g.constant(Tensor::zeros(&[1, k]));
    let c0 = g.constant(Tensor::zeros(&[1, k]));
    let (hs, _) = run_lstm(g, &p.frame_lstm, node_inputs, h0, c0)?;
    let frame_states = g.concat_rows(&hs)?;

    if !c.use_tau {
        let beta_l1 = uniform_row(g, n);
        let beta_l2 = uniform_row(g, c.num_clips);
        let feat_v = g.mean_rows(frame_states);
        return Ok(TemporalOutput {
            frame_states,
            clip_states: None,
            clip_summary: None,
            beta_l1,
            beta_l2,
            feat_v,
        });
    }

    let (clip_states, clip_summary, beta_l2, frame_query) = if c.use_clip {
        let clip_states = g.gather_rows(frame_states, &c.clip_ends())?;
        let beta_l2 = temporal_attention(
            g,
            clip_states,
            relation,
            p.clip_tau_w1,
            p.clip_tau_b1,
            p.clip_tau_w2,
        )?;
        let weighted = g.scale_rows(clip_states, beta_l2)?;
        let (clip_hs, _) = run_lstm(g, &p.clip_lstm, weighted, h0, c0)?;
        let summary = *clip_hs.last().expect("at least one clip");
        (Some(clip_states), Some(summary), beta_l2, summary)
    } else {
        (None, None, uniform_row(g, c.num_clips), relation)
    };
    let beta_l1 = temporal_attention(
        g,
        frame_states,
        frame_query,
        p.frame_tau_w1,
        p.frame_tau_b1,
        p.frame_tau_w2,
    )?;
    let feat_v = g.matmul(beta_l1, frame_states)?;
    Ok(TemporalOutput {
        frame_states,
        clip_states,
        clip_summary,
        beta_l1,
        beta_l2,
        feat_v,
    })
}

/// Full encoder pass for one video and query. `dropout` carries the rate and
/// the generator for the node-input mask in training mode.
pub fn encode(
    g: &mut Graph,
    p: &EncoderParams,
    c: &EncoderConfig,
    video: &VideoFeatures,
    query: &QueryVectors,
    dropout: Option<(f64, &mut ChaCha8Rng)>,
) -> Result<EncoderOutput> {
    let (n, m) = (video.num_frames(), video.regions_per_frame());
    if n != c.num_frames || m != c.regions || video.appearance_dim() != c.appearance_dim {
        return Err(Error::Config(format!(
            "video {} has N={n}, M={m}, d_app={}; model expects N={}, M={}, d_app={}",
            video.video_id(),
            video.appearance_dim(),
            c.num_frames,
            c.regions,
            c.appearance_dim
        )));
    }
    if query.subject.len() != c.word_dim {
        return Err(Error::Config(format!(
            "word vectors have {} components, model expects {}",
            query.subject.len(),
            c.word_dim
        )));
    }
    let appearance = g.constant(Tensor::matrix(
        n * m,
        c.appearance_dim,
        video.appearance_matrix(),
    )?);
    let geometry = g.constant(Tensor::matrix(n * m, 5, video.geometry_matrix())?);
    let regions = region_embed(g, p, appearance, geometry)?;

    let subject_words = g.constant(Tensor::row(&query.subject)?);
    let object_words = g.constant(Tensor::row(&query.object)?);
    let g_s = word_feature(g, p, subject_words)?;
    let g_o = word_feature(g, p, object_words)?;
    let (alpha_s, f_s) = spatial_attend(g, p, regions, m, g_s)?;
    let (alpha_o, f_o) = spatial_attend(g, p, regions, m, g_o)?;
    let (f_s, f_o) = if c.use_msg {
        shift_messages(g, p, alpha_s, alpha_o, f_s, f_o)?
    } else {
        (f_s, f_o)
    };
    let mask = dropout
        .filter(|(rate, _)| *rate > 0.0)
        .map(|(rate, rng)| dropout_mask(n, c.region_dim, rate, rng));
    let node_inputs = fuse_pair(g, p, f_s, f_o, mask)?;
    let relation = relation_embedding(g, p, query, c.use_predicate)?;
    let t = encode_video(g, p, c, node_inputs, relation)?;
    Ok(EncoderOutput {
        alpha_s,
        alpha_o,
        subject_features: f_s,
        object_features: f_o,
        node_inputs,
        frame_states: t.frame_states,
        clip_states: t.clip_states,
        clip_summary: t.clip_summary,
        relation,
        beta_l1: t.beta_l1,
        beta_l2: t.beta_l2,
        feat_v: t.feat_v,
    })
}
