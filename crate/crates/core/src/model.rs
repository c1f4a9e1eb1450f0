//! The trainable grounding model: encoder and decoder parameters in one
//! store, plus the vocabulary and word vectors they were built against.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::datamodel::{DataError, EmbeddingTable, RelationQuery, VideoFeatures, Vocabulary};
use crate::decoder::{
    greedy_decode, reconstruction_loss, target_sequence, DecoderConfig, DecoderParams,
};
use crate::encoder::{
    encode, AttentionMaps, EncoderConfig, EncoderParams, GraphEmbedding, QueryVectors,
};
use crate::error::{Error, Result};
use crate::numerics::{
    grad_check, load_checkpoint, save_checkpoint, GradCheckReport, Gradients, Graph, ParamStore,
};

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub token_dim: usize,
    pub max_decode_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            token_dim: 256,
            max_decode_len: 12,
        }
    }
}

/// Where the word vectors came from, so a saved model can rebuild them.
#[derive(Clone, Debug, PartialEq)]
pub enum EmbeddingSource {
    Hashed { dim: usize, seed: u64 },
    File { path: PathBuf, seed: u64 },
}

impl EmbeddingSource {
    pub fn load(&self) -> Result<EmbeddingTable> {
        Ok(match self {
            EmbeddingSource::Hashed { dim, seed } => EmbeddingTable::hashed(*dim, *seed),
            EmbeddingSource::File { path, seed } => EmbeddingTable::load(path, *seed)?,
        })
    }
}

#[derive(Clone, Debug)]
pub struct GroundingModel {
    config: ModelConfig,
    vocab: Vocabulary,
    embedding_source: EmbeddingSource,
    embeddings: EmbeddingTable,
    params: ParamStore,
    encoder: EncoderParams,
    decoder: DecoderParams,
}

impl GroundingModel {
    pub fn new(
        config: ModelConfig,
        vocab: Vocabulary,
        embedding_source: EmbeddingSource,
        seed: u64,
    ) -> Result<Self> {
        let embeddings = embedding_source.load()?;
        Self::with_embeddings(config, vocab, embedding_source, embeddings, seed)
    }

    fn with_embeddings(
        mut config: ModelConfig,
        vocab: Vocabulary,
        embedding_source: EmbeddingSource,
        embeddings: EmbeddingTable,
        seed: u64,
    ) -> Result<Self> {
        config.encoder.word_dim = embeddings.dim();
        config.encoder.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let encoder = EncoderParams::register(&mut params, &config.encoder, &mut rng)?;
        let decoder = DecoderParams::register(
            &mut params,
            &Self::decoder_config(&config, &vocab),
            &mut rng,
        )?;
        Ok(Self {
            config,
            vocab,
            embedding_source,
            embeddings,
            params,
            encoder,
            decoder,
        })
    }

    fn decoder_config(config: &ModelConfig, vocab: &Vocabulary) -> DecoderConfig {
        DecoderConfig {
            vocab_size: vocab.len(),
            hidden_dim: config.encoder.hidden_dim,
            token_dim: config.token_dim,
            max_decode_len: config.max_decode_len,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn embeddings(&self) -> &EmbeddingTable {
        &self.embeddings
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn encoder_params(&self) -> &EncoderParams {
        &self.encoder
    }

    pub fn decoder_params(&self) -> &DecoderParams {
        &self.decoder
    }

    /// Word vectors of a query; compute once per sample when reused.
    pub fn query_vectors(&self, query: &RelationQuery) -> Result<QueryVectors> {
        QueryVectors::new(query, &self.embeddings)
    }

    /// Token targets for the decoder under this model's predicate setting.
    pub fn target(&self, query: &RelationQuery) -> Result<Vec<usize>> {
        target_sequence(query, &self.vocab, self.config.encoder.use_predicate)
    }

    /// Loss and gradient at `params` (which must share this model's layout).
    /// Supplying `dropout` switches to training mode.
    pub fn loss_and_grads_with(
        &self,
        params: &ParamStore,
        video: &VideoFeatures,
        query: &QueryVectors,
        target: &[usize],
        dropout: Option<(f64, &mut ChaCha8Rng)>,
    ) -> Result<(f64, Gradients)> {
        let mut g = Graph::new(params);
        let out = encode(
            &mut g,
            &self.encoder,
            &self.config.encoder,
            video,
            query,
            dropout,
        )?;
        let loss = reconstruction_loss(&mut g, &self.decoder, out.feat_v, target)?;
        let value = g.scalar(loss);
        let grads = g.backward(loss)?;
        Ok((value, grads))
    }

    pub fn loss_and_grads(
        &self,
        video: &VideoFeatures,
        query: &QueryVectors,
        target: &[usize],
        dropout: Option<(f64, &mut ChaCha8Rng)>,
    ) -> Result<(f64, Gradients)> {
        self.loss_and_grads_with(&self.params, video, query, target, dropout)
    }

    /// Evaluation-mode loss for one sample.
    pub fn loss(&self, video: &VideoFeatures, query: &RelationQuery) -> Result<f64> {
        let q = self.query_vectors(query)?;
        let target = self.target(query)?;
        let mut g = Graph::new(&self.params);
        let out = encode(&mut g, &self.encoder, &self.config.encoder, video, &q, None)?;
        let loss = reconstruction_loss(&mut g, &self.decoder, out.feat_v, &target)?;
        Ok(g.scalar(loss))
    }

    /// Evaluation-mode attention maps and encodings.
    pub fn encode(
        &self,
        video: &VideoFeatures,
        query: &RelationQuery,
    ) -> Result<(AttentionMaps, GraphEmbedding)> {
        let q = self.query_vectors(query)?;
        let mut g = Graph::new(&self.params);
        let out = encode(&mut g, &self.encoder, &self.config.encoder, video, &q, None)?;
        Ok((out.attention_maps(&g), out.graph_embedding(&g)))
    }

    pub fn attention(&self, video: &VideoFeatures, query: &RelationQuery) -> Result<AttentionMaps> {
        Ok(self.encode(video, query)?.0)
    }

    /// Greedy reconstruction of the relation words.
    pub fn decode(&self, video: &VideoFeatures, query: &RelationQuery) -> Result<Vec<String>> {
        let (_, emb) = self.encode(video, query)?;
        let ids = greedy_decode(
            &self.params,
            &self.decoder,
            &emb.feat_v,
            self.config.max_decode_len,
        )?;
        Ok(ids
            .into_iter()
            .map(|i| self.vocab.token(i).unwrap_or("?").to_string())
            .collect())
    }

    /// Central-difference check of every parameter on one sample.
    pub fn gradient_check(
        &self,
        video: &VideoFeatures,
        query: &RelationQuery,
        eps: f64,
    ) -> Result<GradCheckReport> {
        let q = self.query_vectors(query)?;
        let target = self.target(query)?;
        Ok(grad_check(
            |p: &ParamStore| self.loss_and_grads_with(p, video, &q, &target, None),
            &self.params,
            eps,
        )?)
    }

    /// Writes the weights to `path` and the configuration and vocabulary to
    /// the sidecar returned by [`sidecar_path`].
    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(&self.params, path)?;
        let side = sidecar_path(path);
        fs::write(&side, self.format_sidecar()).map_err(|e| DataError::io(&side, e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let side = sidecar_path(path);
        let text = fs::read_to_string(&side).map_err(|e| DataError::io(&side, e))?;
        let (config, vocab, source, seed) = parse_sidecar(&text)?;
        let mut model = Self::new(config, vocab, source, seed)?;
        let stored = load_checkpoint(path)?;
        if stored.len() != model.params.len() {
            return Err(Error::Config(format!(
                "checkpoint has {} tensors, model layout has {}",
                stored.len(),
                model.params.len()
            )));
        }
        model.params.load_from(&stored)?;
        Ok(model)
    }

    fn format_sidecar(&self) -> String {
        let e = &self.config.encoder;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        kv("num_frames", e.num_frames.to_string());
        kv("num_clips", e.num_clips.to_string());
        kv("clip_len", e.clip_len.to_string());
        kv("regions", e.regions.to_string());
        kv("appearance_dim", e.appearance_dim.to_string());
        kv("region_dim", e.region_dim.to_string());
        kv("query_dim", e.query_dim.to_string());
        kv("attention_dim", e.attention_dim.to_string());
        kv("hidden_dim", e.hidden_dim.to_string());
        kv("use_msg", e.use_msg.to_string());
        kv("use_clip", e.use_clip.to_string());
        kv("use_tau", e.use_tau.to_string());
        kv("use_predicate", e.use_predicate.to_string());
        kv("token_dim", self.config.token_dim.to_string());
        kv("max_decode_len", self.config.max_decode_len.to_string());
        match &self.embedding_source {
            EmbeddingSource::Hashed { dim, seed } => {
                kv("embedding_dim", dim.to_string());
                kv("embedding_seed", seed.to_string());
            }
            EmbeddingSource::File { path, seed } => {
                kv("embedding_file", path.display().to_string());
                kv("embedding_seed", seed.to_string());
            }
        }
        kv("vocab", self.vocab.words().join(" "));
        s
    }
}

/// `<checkpoint>.meta`
pub fn sidecar_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

fn parse_sidecar(text: &str) -> Result<(ModelConfig, Vocabulary, EmbeddingSource, u64)> {
    let mut map = BTreeMap::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("model sidecar line without '=': {line}")))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    let get = |k: &str| {
        map.get(k)
            .ok_or_else(|| Error::Config(format!("model sidecar lacks '{k}'")))
    };
    let num = |k: &str| -> Result<usize> {
        get(k)?
            .parse()
            .map_err(|_| Error::Config(format!("model sidecar: '{k}' is not an integer")))
    };
    let flag = |k: &str| -> Result<bool> {
        get(k)?
            .parse()
            .map_err(|_| Error::Config(format!("model sidecar: '{k}' is not a boolean")))
    };
    let seed: u64 = get("embedding_seed")?
        .parse()
        .map_err(|_| Error::Config("model sidecar: bad embedding_seed".into()))?;
    let source = match map.get("embedding_file") {
        Some(p) => EmbeddingSource::File {
            path: PathBuf::from(p),
            seed,
        },
        None => EmbeddingSource::Hashed {
            dim: num("embedding_dim")?,
            seed,
        },
    };
    let encoder = EncoderConfig {
        num_frames: num("num_frames")?,
        num_clips: num("num_clips")?,
        clip_len: num("clip_len")?,
        regions: num("regions")?,
        appearance_dim: num("appearance_dim")?,
        region_dim: num("region_dim")?,
        word_dim: 0,
        query_dim: num("query_dim")?,
        attention_dim: num("attention_dim")?,
        hidden_dim: num("hidden_dim")?,
        use_msg: flag("use_msg")?,
        use_clip: flag("use_clip")?,
        use_tau: flag("use_tau")?,
        use_predicate: flag("use_predicate")?,
    };
    let config = ModelConfig {
        encoder,
        token_dim: num("token_dim")?,
        max_decode_len: num("max_decode_len")?,
    };
    let vocab = Vocabulary::new(get("vocab")?.split_whitespace());
    // parameters are overwritten from the checkpoint, the init seed is irrelevant
    Ok((config, vocab, source, 0))
}

/// The small configuration used for exhaustive gradient checks: 6 frames in
/// 2 clips of 3, 4 regions, region size 8, hidden size 16.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        encoder: EncoderConfig {
            num_frames: 6,
            num_clips: 2,
            clip_len: 3,
            regions: 4,
            appearance_dim: 6,
            region_dim: 8,
            word_dim: 8,
            query_dim: 8,
            attention_dim: 8,
            hidden_dim: 16,
            use_msg: true,
            use_clip: true,
            use_tau: true,
            use_predicate: true,
        },
        token_dim: 8,
        max_decode_len: 8,
    }
}

/// A randomly initialised tiny model (12-token vocabulary), a random video
/// matching it and a query over the vocabulary.
pub fn tiny_fixture(
    config: ModelConfig,
    seed: u64,
) -> Result<(GroundingModel, VideoFeatures, RelationQuery)> {
    use crate::datamodel::{BBox, RegionProposal};
    use rand::Rng;

    let words = [
        "person", "dog", "car", "ride", "chase", "next", "to", "left", "bicycle",
    ];
    let vocab = Vocabulary::new(words);
    let source = EmbeddingSource::Hashed {
        dim: config.encoder.word_dim,
        seed: seed ^ 0x9e37,
    };
    let model = GroundingModel::new(config, vocab, source, seed)?;
    let c = &model.config.encoder;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let (w, h) = (64.0, 48.0);
    let frames = (0..c.num_frames)
        .map(|_| {
            (0..c.regions)
                .map(|_| {
                    let x0: f64 = rng.random_range(0.0..40.0);
                    let y0: f64 = rng.random_range(0.0..30.0);
                    let bw: f64 = rng.random_range(2.0..20.0);
                    let bh: f64 = rng.random_range(2.0..15.0);
                    RegionProposal {
                        bbox: BBox::new(x0, y0, x0 + bw, y0 + bh).expect("ordered"),
                        appearance: (0..c.appearance_dim)
                            .map(|_| rng.random_range(-1.0..1.0))
                            .collect(),
                    }
                })
                .collect()
        })
        .collect();
    let sampled = (0..c.num_frames).map(|i| 2 * i).collect();
    let (video, _) = VideoFeatures::new("tiny", w, h, 2 * c.num_frames, sampled, frames)?;
    let query = RelationQuery::from_parts(
        vec!["person".into()],
        vec!["next".into(), "to".into()],
        vec!["bicycle".into()],
    );
    Ok((model, video, query))
}
