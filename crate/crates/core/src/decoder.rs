//! Single-layer LSTM decoder that regenerates the relation words from the
//! pooled video embedding; its cross-entropy is the training signal.

use rand_chacha::ChaCha8Rng;

use crate::datamodel::{RelationQuery, Vocabulary};
use crate::error::{Error, Result};
use crate::numerics::{
    affine, lstm_step, run_lstm, softmax, Graph, LstmParams, ParamId, ParamStore, Tensor, Var,
};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecoderConfig {
    pub vocab_size: usize,
    pub hidden_dim: usize,
    pub token_dim: usize,
    pub max_decode_len: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderParams {
    pub token_embed: ParamId,
    pub lstm: LstmParams,
    pub out_w: ParamId,
    pub out_b: ParamId,
}

impl DecoderParams {
    pub fn register(
        store: &mut ParamStore,
        c: &DecoderConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if c.vocab_size <= 3 || c.hidden_dim == 0 || c.token_dim == 0 {
            return Err(Error::Config(format!("invalid decoder dimensions {c:?}")));
        }
        Ok(Self {
            token_embed: store.register_uniform(
                "dec.token_embed",
                &[c.vocab_size, c.token_dim],
                rng,
            )?,
            lstm: LstmParams::register(store, "dec.lstm", c.token_dim, c.hidden_dim, rng)?,
            out_w: store.register_uniform("dec.out.w", &[c.hidden_dim, c.vocab_size], rng)?,
            out_b: store.register_zeros("dec.out.b", &[c.vocab_size])?,
        })
    }
}

/// Word indices of subject, predicate (unless dropped) and object, then `<end>`.
pub fn target_sequence(
    query: &RelationQuery,
    vocab: &Vocabulary,
    use_predicate: bool,
) -> Result<Vec<usize>> {
    let predicate: &[String] = if use_predicate { &query.predicate } else { &[] };
    let mut out = Vec::new();
    for w in query.subject.iter().chain(predicate).chain(&query.object) {
        out.push(vocab.index_of(w)?);
    }
    out.push(Vocabulary::END);
    Ok(out)
}

/// Teacher-forced logits, one row per target position. The first input is
/// `<start>` and the initial hidden state is `feat_v`.
pub fn decoder_logits(
    g: &mut Graph,
    p: &DecoderParams,
    feat_v: Var,
    target: &[usize],
) -> Result<Var> {
    if target.is_empty() {
        return Err(Error::Domain("empty reconstruction target".into()));
    }
    let k = p.lstm.hidden_dim;
    if g.value(feat_v).len() != k {
        return Err(Error::Config(format!(
            "video embedding has {} components, decoder state has {k}",
            g.value(feat_v).len()
        )));
    }
    let mut inputs = Vec::with_capacity(target.len());
    inputs.push(Vocabulary::START);
    inputs.extend_from_slice(&target[..target.len() - 1]);
    let table = g.param(p.token_embed);
    let x = g.gather_rows(table, &inputs)?;
    let h0 = g.reshape(feat_v, vec![1, k])?;
    let c0 = g.constant(Tensor::zeros(&[1, k]));
    let (hs, _) = run_lstm(g, &p.lstm, x, h0, c0)?;
    let states = g.concat_rows(&hs)?;
    let (w, b) = (g.param(p.out_w), g.param(p.out_b));
    Ok(g.affine(states, w, b)?)
}

/// Mean negative log-likelihood per target token.
pub fn reconstruction_loss(
    g: &mut Graph,
    p: &DecoderParams,
    feat_v: Var,
    target: &[usize],
) -> Result<Var> {
    let logits = decoder_logits(g, p, feat_v, target)?;
    let loss = g.cross_entropy(logits, target)?;
    if !g.scalar(loss).is_finite() {
        return Err(Error::Training("reconstruction loss is not finite".into()));
    }
    Ok(loss)
}

/// Greedy decoding for inspection; stops at `<end>` or `max_len` tokens.
pub fn greedy_decode(
    params: &ParamStore,
    p: &DecoderParams,
    feat_v: &Tensor,
    max_len: usize,
) -> Result<Vec<usize>> {
    let k = p.lstm.hidden_dim;
    let mut g = Graph::new(params);
    let mut h = g.constant(feat_v.reshape(vec![1, k])?);
    let mut c = g.constant(Tensor::zeros(&[1, k]));
    let table = g.param(p.token_embed);
    let mut token = Vocabulary::START;
    let mut out = Vec::new();
    for _ in 0..max_len {
        let x = g.gather_rows(table, &[token])?;
        (h, c) = lstm_step(&mut g, &p.lstm, x, h, c)?;
        let logits = affine(g.value(h), params.get(p.out_w), params.get(p.out_b))?;
        let probs = softmax(logits.data())?;
        token = probs
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &v)| {
                if v > best.1 {
                    (i, v)
                } else {
                    best
                }
            })
            .0;
        out.push(token);
        if token == Vocabulary::END {
            break;
        }
    }
    Ok(out)
}
