//! Flat `key=value` run configuration. Defaults are the published
//! hyperparameters; a config file overrides them and command-line flags
//! override the file.

use std::fs;
use std::path::{Path, PathBuf};

use relground_core::datamodel::{DEFAULT_EMBEDDING_DIM, DEFAULT_EMBEDDING_SEED};
use relground_core::evalkit::MetricConfig;
use relground_core::model::{EmbeddingSource, ModelConfig};
use relground_core::trainer::{TrainConfig, DEFAULT_SIGMA_GRID};

/// Threshold used when the clip level is disabled and no threshold is given.
pub const NO_CLIP_SIGMA: f64 = 0.0001;
pub const DEFAULT_SIGMA: f64 = 0.04;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub metric: MetricConfig,
    sigma: Option<f64>,
    pub sigma_grid: Vec<f64>,
    pub embedding_dim: usize,
    pub embedding_file: Option<PathBuf>,
    pub embedding_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            metric: MetricConfig::default(),
            sigma: None,
            sigma_grid: DEFAULT_SIGMA_GRID.to_vec(),
            embedding_dim: DEFAULT_EMBEDDING_DIM,
            embedding_file: None,
            embedding_seed: DEFAULT_EMBEDDING_SEED,
        }
    }
}

pub const KEYS: &[&str] = &[
    "num_frames",
    "num_clips",
    "clip_len",
    "regions",
    "appearance_dim",
    "region_dim",
    "query_dim",
    "attention_dim",
    "hidden_dim",
    "token_dim",
    "max_decode_len",
    "use_msg",
    "use_clip",
    "use_tau",
    "use_predicate",
    "learning_rate",
    "batch_size",
    "max_epochs",
    "max_steps",
    "dropout",
    "patience",
    "validation_fraction",
    "clip_norm",
    "seed",
    "sigma",
    "sigma_grid",
    "spatial_thresholds",
    "temporal_threshold",
    "embedding_dim",
    "embedding_file",
    "embedding_seed",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("bad value '{value}' for '{key}'"))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>, String> {
    value
        .split(',')
        .map(|v| parse::<f64>(key, v.trim()))
        .collect::<Result<Vec<_>, _>>()
        .and_then(|v| {
            if v.is_empty() {
                Err(format!("'{key}' needs at least one value"))
            } else {
                Ok(v)
            }
        })
}

impl RunConfig {
    /// Threshold for grounding: the explicit value if one was given, else
    /// the no-clip default when the clip level is off, else the standard one.
    pub fn sigma(&self) -> f64 {
        self.sigma.unwrap_or(if self.model.encoder.use_clip {
            DEFAULT_SIGMA
        } else {
            NO_CLIP_SIGMA
        })
    }

    pub fn sigma_is_explicit(&self) -> bool {
        self.sigma.is_some()
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let e = &mut self.model.encoder;
        let t = &mut self.train;
        let v = value.trim();
        match key.trim() {
            "num_frames" => e.num_frames = parse(key, v)?,
            "num_clips" => e.num_clips = parse(key, v)?,
            "clip_len" => e.clip_len = parse(key, v)?,
            "regions" => e.regions = parse(key, v)?,
            "appearance_dim" => e.appearance_dim = parse(key, v)?,
            "region_dim" => e.region_dim = parse(key, v)?,
            "query_dim" => e.query_dim = parse(key, v)?,
            "attention_dim" => e.attention_dim = parse(key, v)?,
            "hidden_dim" => e.hidden_dim = parse(key, v)?,
            "token_dim" => self.model.token_dim = parse(key, v)?,
            "max_decode_len" => self.model.max_decode_len = parse(key, v)?,
            "use_msg" => e.use_msg = parse(key, v)?,
            "use_clip" => e.use_clip = parse(key, v)?,
            "use_tau" => e.use_tau = parse(key, v)?,
            "use_predicate" => e.use_predicate = parse(key, v)?,
            "learning_rate" => t.learning_rate = parse(key, v)?,
            "batch_size" => t.batch_size = parse(key, v)?,
            "max_epochs" => t.max_epochs = parse(key, v)?,
            "max_steps" => t.max_steps = Some(parse(key, v)?),
            "dropout" => t.dropout = parse(key, v)?,
            "patience" => t.patience = parse(key, v)?,
            "validation_fraction" => t.validation_fraction = parse(key, v)?,
            "clip_norm" => t.clip_norm = parse(key, v)?,
            "seed" => t.seed = parse(key, v)?,
            "sigma" => self.sigma = Some(parse(key, v)?),
            "sigma_grid" => self.sigma_grid = parse_list(key, v)?,
            "spatial_thresholds" => self.metric.thresholds = parse_list(key, v)?,
            "temporal_threshold" => self.metric.temporal_threshold = parse(key, v)?,
            "embedding_dim" => self.embedding_dim = parse(key, v)?,
            "embedding_file" => self.embedding_file = Some(PathBuf::from(v)),
            "embedding_seed" => self.embedding_seed = parse(key, v)?,
            other => return Err(format!("unknown configuration key '{other}'")),
        }
        Ok(())
    }

    /// Applies `key=value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<(), String> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected key=value, found '{line}'", i + 1))?;
            self.set(k, v).map_err(|e| format!("line {}: {e}", i + 1))?;
        }
        Ok(())
    }

    pub fn embedding_source(&self) -> EmbeddingSource {
        match &self.embedding_file {
            Some(path) => EmbeddingSource::File {
                path: path.clone(),
                seed: self.embedding_seed,
            },
            None => EmbeddingSource::Hashed {
                dim: self.embedding_dim,
                seed: self.embedding_seed,
            },
        }
    }

    /// Takes frame count, region count and appearance size from the data.
    /// The clip length is kept and the clip count follows from it.
    pub fn adopt_data_shape(
        &mut self,
        frames: usize,
        regions: usize,
        appearance_dim: usize,
    ) -> Result<(), String> {
        let e = &mut self.model.encoder;
        if e.clip_len == 0 || frames % e.clip_len != 0 {
            return Err(format!(
                "the data has {frames} frames per video, which clip_len={} does not divide",
                e.clip_len
            ));
        }
        if e.num_frames != frames || e.regions != regions || e.appearance_dim != appearance_dim {
            log::info!("using data shape: {frames} frames, {regions} regions, appearance size {appearance_dim}");
        }
        e.num_frames = frames;
        e.num_clips = frames / e.clip_len;
        e.regions = regions;
        e.appearance_dim = appearance_dim;
        Ok(())
    }
}

/// Defaults overridden by the file at `path`, if any.
pub fn load_config(path: Option<&Path>) -> Result<RunConfig, String> {
    let mut cfg = RunConfig::default();
    if let Some(p) = path {
        let text = fs::read_to_string(p)
            .map_err(|e| format!("cannot read config {}: {e}", p.display()))?;
        cfg.apply_text(&text)
            .map_err(|e| format!("{}: {e}", p.display()))?;
    }
    Ok(cfg)
}
