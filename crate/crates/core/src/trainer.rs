//! Mini-batch Adam training of the reconstruction objective with validation
//! based early stopping, and the threshold search run after training.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::datamodel::{RelationQuery, VideoFeatures, VideoRelationSample};
use crate::encoder::QueryVectors;
use crate::error::{Error, Result};
use crate::evalkit::{accuracy, ground_truth_of, MetricConfig};
use crate::grounding::ground_from_attention;
use crate::model::GroundingModel;
use crate::numerics::{AdamState, Gradients};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub dropout: f64,
    /// Epochs without a new best monitored loss before stopping.
    pub patience: usize,
    pub seed: u64,
    pub validation_fraction: f64,
    pub clip_norm: f64,
    /// Stop after this many optimizer steps even mid-epoch.
    pub max_steps: Option<usize>,
    /// Where the best weights are written whenever they improve.
    pub checkpoint: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            batch_size: 32,
            max_epochs: 20,
            dropout: 0.2,
            patience: 3,
            seed: 0,
            validation_fraction: 0.1,
            clip_norm: 5.0,
            max_steps: None,
            checkpoint: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning rate {} must be positive",
                self.learning_rate
            ));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return bad("batch size, epoch count and patience must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad(format!(
                "validation fraction {} outside (0, 1)",
                self.validation_fraction
            ));
        }
        if !(self.clip_norm > 0.0) {
            return bad(format!("clip norm {} must be positive", self.clip_norm));
        }
        Ok(())
    }
}

/// What the optimizer sees of a sample: features and the relation text,
/// never the ground-truth trajectories.
#[derive(Clone, Debug)]
pub struct TrainingExample {
    pub video_id: String,
    pub features: Arc<VideoFeatures>,
    pub query: RelationQuery,
}

impl From<&VideoRelationSample> for TrainingExample {
    fn from(s: &VideoRelationSample) -> Self {
        TrainingExample {
            video_id: s.video_id.clone(),
            features: Arc::clone(&s.features),
            query: s.query.clone(),
        }
    }
}

pub fn training_examples(samples: &[VideoRelationSample]) -> Vec<TrainingExample> {
    samples.iter().map(TrainingExample::from).collect()
}

/// Seeded partition by video id; `round(fraction * videos)` videos go to
/// the validation side.
pub fn validation_split(
    samples: &[VideoRelationSample],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<VideoRelationSample>, Vec<VideoRelationSample>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!(
            "validation fraction {fraction} outside (0, 1)"
        )));
    }
    let mut videos: Vec<&str> = samples
        .iter()
        .map(|s| s.video_id.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let n_val = (fraction * videos.len() as f64).round() as usize;
    if n_val == 0 || n_val >= videos.len() {
        return Err(Error::Config(format!(
            "validation fraction {fraction} of {} videos leaves one side empty",
            videos.len()
        )));
    }
    videos.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let held: BTreeSet<&str> = videos[..n_val].iter().copied().collect();
    let (val, train): (Vec<_>, Vec<_>) = samples
        .iter()
        .cloned()
        .partition(|s| held.contains(s.video_id.as_str()));
    Ok((train, val))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training-mode loss over the epoch's samples.
    pub train_loss: f64,
    pub validation_loss: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// Epoch (1-based) whose weights the model holds after training.
    pub best_epoch: usize,
    pub steps: usize,
    pub checkpoint: Option<PathBuf>,
    pub wall_time: Duration,
}

impl TrainReport {
    /// Validation loss when there is one, otherwise the training loss.
    pub fn monitored_loss(&self, epoch: usize) -> f64 {
        let r = &self.epochs[epoch - 1];
        r.validation_loss.unwrap_or(r.train_loss)
    }
}

struct Prepared {
    video: Arc<VideoFeatures>,
    query: QueryVectors,
    target: Vec<usize>,
}

fn prepare(model: &GroundingModel, examples: &[TrainingExample]) -> Result<Vec<Prepared>> {
    examples
        .iter()
        .map(|e| {
            Ok(Prepared {
                video: Arc::clone(&e.features),
                query: model.query_vectors(&e.query)?,
                target: model.target(&e.query)?,
            })
        })
        .collect()
}

/// Evaluation-mode mean loss.
pub fn mean_loss(model: &GroundingModel, examples: &[TrainingExample]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Domain("no examples to evaluate".into()));
    }
    let losses: Vec<f64> = examples
        .par_iter()
        .map(|e| model.loss(&e.features, &e.query))
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

fn timestamp() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

/// Trains `model` in place and leaves it holding the best weights.
///
/// Each epoch shuffles the training examples with a seeded generator and
/// takes one Adam step per mini-batch on the batch-mean gradient (clipped to
/// `clip_norm`). Per-example gradients are computed in parallel and summed
/// in example order, and every example draws its dropout masks from its own
/// stream, so results do not depend on the worker count. Early stopping
/// watches the validation loss, or the training loss when `validation` is
/// empty. Log lines are `epoch=<n> split=<train|validation> loss=<x> time=<unix seconds>`.
pub fn train(
    model: &mut GroundingModel,
    examples: &[TrainingExample],
    validation: &[TrainingExample],
    config: &TrainConfig,
    mut log: Option<&mut dyn Write>,
) -> Result<TrainReport> {
    config.validate()?;
    if examples.is_empty() {
        return Err(Error::Training("no training examples".into()));
    }
    let started = Instant::now();
    let data = prepare(model, examples)?;
    let mut adam = AdamState::new(model.params(), config.learning_rate);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut epochs = Vec::new();
    let mut best: Option<(usize, f64)> = None;
    let mut best_params = model.params().clone();
    let mut steps = 0usize;
    let mut drawn = 0u64;

    'epochs: for epoch in 1..=config.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for batch in order.chunks(config.batch_size) {
            if config.max_steps.is_some_and(|m| steps >= m) {
                break;
            }
            let first_stream = drawn;
            drawn += batch.len() as u64;
            let params = model.params();
            let m: &GroundingModel = model;
            let outputs: Vec<(f64, Gradients)> = batch
                .par_iter()
                .enumerate()
                .map(|(k, &i)| {
                    let d = &data[i];
                    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                    rng.set_stream(1 + first_stream + k as u64);
                    let dropout = (config.dropout > 0.0).then_some((config.dropout, &mut rng));
                    m.loss_and_grads_with(params, &d.video, &d.query, &d.target, dropout)
                })
                .collect::<Result<_>>()?;
            let mut grads = Gradients::zeros_like(params);
            let mut batch_loss = 0.0;
            for (k, (loss, g)) in outputs.iter().enumerate() {
                if !loss.is_finite() {
                    return Err(Error::Training(format!(
                        "non-finite loss {loss} at epoch {epoch}, step {}, example {}",
                        steps + 1,
                        examples[batch[k]].video_id
                    )));
                }
                batch_loss += loss;
                grads.add_assign(g);
            }
            grads.scale(1.0 / batch.len() as f64);
            if !grads.all_finite() {
                return Err(Error::Training(format!(
                    "non-finite gradient at epoch {epoch}, step {}",
                    steps + 1
                )));
            }
            grads.clip_global_norm(config.clip_norm);
            adam.update(model.params_mut(), &grads)?;
            steps += 1;
            loss_sum += batch_loss;
            seen += batch.len();
        }
        if seen == 0 {
            break;
        }
        let train_loss = loss_sum / seen as f64;
        let validation_loss = if validation.is_empty() {
            None
        } else {
            Some(mean_loss(model, validation)?)
        };
        if let Some(v) = validation_loss.filter(|v| !v.is_finite()) {
            return Err(Error::Training(format!(
                "non-finite validation loss {v} at epoch {epoch}"
            )));
        }
        if let Some(w) = log.as_deref_mut() {
            let write = |w: &mut dyn Write, split: &str, loss: f64| {
                writeln!(
                    w,
                    "epoch={epoch} split={split} loss={loss} time={:.3}",
                    timestamp()
                )
            };
            let io = |e| Error::Training(format!("writing training log: {e}"));
            write(w, "train", train_loss).map_err(io)?;
            if let Some(v) = validation_loss {
                write(w, "validation", v).map_err(io)?;
            }
        }
        log::info!("epoch {epoch}: train {train_loss:.5} validation {validation_loss:?}");
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            validation_loss,
        });

        let monitored = validation_loss.unwrap_or(train_loss);
        if best.is_none_or(|(_, b)| monitored < b) {
            best = Some((epoch, monitored));
            best_params = model.params().clone();
            if let Some(path) = &config.checkpoint {
                model.save(path)?;
            }
        } else if epoch - best.expect("set").0 >= config.patience {
            log::info!(
                "stopping after {epoch} epochs, best was epoch {}",
                best.expect("set").0
            );
            break 'epochs;
        }
        if config.max_steps.is_some_and(|m| steps >= m) {
            break;
        }
    }
    model.params_mut().load_from(&best_params)?;
    Ok(TrainReport {
        epochs,
        best_epoch: best.map(|b| b.0).unwrap_or(0),
        steps,
        checkpoint: config.checkpoint.clone(),
        wall_time: started.elapsed(),
    })
}

pub const DEFAULT_SIGMA_GRID: [f64; 5] = [0.01, 0.02, 0.03, 0.04, 0.05];

#[derive(Clone, Debug, PartialEq)]
pub struct SigmaSearch {
    pub best: f64,
    /// (sigma, relation accuracy averaged over the spatial thresholds), in
    /// ascending sigma order.
    pub scores: Vec<(f64, f64)>,
}

/// Threshold with the highest average relation accuracy on `samples`; ties
/// go to the smaller threshold.
pub fn search_sigma(
    model: &GroundingModel,
    samples: &[VideoRelationSample],
    grid: &[f64],
    metric: &MetricConfig,
) -> Result<SigmaSearch> {
    if grid.is_empty() {
        return Err(Error::Config("empty threshold grid".into()));
    }
    let gt = ground_truth_of(samples)?;
    let maps: Vec<_> = samples
        .par_iter()
        .map(|s| model.attention(&s.features, &s.query))
        .collect::<Result<_>>()?;
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    let clip_len = model.config().encoder.clip_len;
    let mut scores = Vec::with_capacity(sorted.len());
    let mut best: Option<(f64, f64)> = None;
    for &sigma in &sorted {
        let results = samples
            .iter()
            .zip(&maps)
            .map(|(s, m)| {
                ground_from_attention(m, &s.features, &s.query.canonical(), sigma, clip_len)
            })
            .collect::<Result<Vec<_>>>()?;
        let acc = accuracy(&results, &gt, metric)?.average_relation();
        scores.push((sigma, acc));
        if best.is_none_or(|(_, a)| acc > a) {
            best = Some((sigma, acc));
        }
    }
    Ok(SigmaSearch {
        best: best.expect("non-empty grid").0,
        scores,
    })
}
