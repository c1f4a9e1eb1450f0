use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use relground_core::datamodel::{
    load_samples, Manifest, RelationQuery, VideoRelationSample, Vocabulary,
};
use relground_core::evalkit::{
    accuracy, filter_by_kind, ground_truth_of, random_grounding, unclassified_predicates,
    zero_shot_split, GroundTruth, PredicateKind,
};
use relground_core::grounding::{ground, load_results, save_results, GroundingResult};
use relground_core::model::{tiny_config, tiny_fixture, GroundingModel};
use relground_core::synthgen::{emit_dataset, DatasetSpec, SceneSpec};
use relground_core::trainer::{search_sigma, train, training_examples, validation_split};

use crate::config::{load_config, RunConfig};
use crate::{
    CliError, Command, EvalArgs, GenArgs, GradcheckArgs, GroundArgs, ModelOpts, TrainArgs,
};

pub fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Gen(a) => gen(&a),
        Command::Train(a) => train_cmd(&a),
        Command::Ground(a) => ground_cmd(&a),
        Command::Eval(a) => eval(&a),
        Command::Gradcheck(a) => gradcheck(&a),
    }
}

fn require_file(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("no such file: {}", path.display())))
    }
}

/// File defaults, then `--set` overrides, then the dedicated flags.
pub fn resolve_config(opts: &ModelOpts) -> Result<RunConfig, CliError> {
    if let Some(p) = &opts.config {
        require_file(p)?;
    }
    let mut cfg = load_config(opts.config.as_deref()).map_err(CliError::Usage)?;
    for kv in &opts.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got '{kv}'")))?;
        cfg.set(k, v).map_err(CliError::Usage)?;
    }
    if let Some(seed) = opts.seed {
        cfg.train.seed = seed;
    }
    if let Some(s) = opts.sigma {
        cfg.set("sigma", &s.to_string()).map_err(CliError::Usage)?;
    }
    let e = &mut cfg.model.encoder;
    e.use_msg &= !opts.no_msg;
    e.use_clip &= !opts.no_clip;
    e.use_tau &= !opts.no_tau;
    e.use_predicate &= !opts.co_occur;
    Ok(cfg)
}

fn load(manifest: &Path, with_gt: bool) -> Result<Vec<VideoRelationSample>, CliError> {
    require_file(manifest)?;
    let m = Manifest::load(manifest).map_err(|e| CliError::Runtime(e.to_string()))?;
    let samples = load_samples(&m, with_gt).map_err(|e| CliError::Runtime(e.to_string()))?;
    if samples.is_empty() {
        return Err(CliError::Runtime(format!(
            "{} lists no samples",
            manifest.display()
        )));
    }
    Ok(samples)
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn gen(a: &GenArgs) -> Result<(), CliError> {
    let spec = DatasetSpec {
        seed: a.seed,
        train_count: a.train,
        test_count: a.test,
        zero_shot_fraction: a.zero_shot_fraction,
        scene: SceneSpec {
            frames: a.frames,
            regions: a.regions,
            appearance_dim: a.appearance_dim,
            min_entities: a.min_entities,
            max_entities: a.max_entities,
            distractor_probability: a.distractor_probability,
            appearance_noise: a.appearance_noise,
            appearance_scale: a.appearance_scale,
            ..SceneSpec::default()
        },
    };
    let summary = emit_dataset(&spec, &a.out).map_err(|e| match e {
        relground_core::Error::Config(m) => CliError::Usage(m),
        other => CliError::Runtime(other.to_string()),
    })?;
    println!("train manifest {}", summary.train_manifest.display());
    println!("test manifest {}", summary.test_manifest.display());
    println!("distractor scenes {}", summary.distractor_videos.len());
    println!("zero-shot test scenes {}", summary.zero_shot_videos.len());
    Ok(())
}

/// Where `train --search-sigma` records the chosen threshold.
pub fn sigma_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".sigma");
    PathBuf::from(s)
}

fn train_cmd(a: &TrainArgs) -> Result<(), CliError> {
    let mut cfg = resolve_config(&a.model)?;
    let samples = load(&a.manifest, a.search_sigma)?;
    let f = &samples[0].features;
    cfg.adopt_data_shape(f.num_frames(), f.regions_per_frame(), f.appearance_dim())
        .map_err(CliError::Usage)?;
    cfg.train.checkpoint = Some(a.out.clone());
    cfg.train.validate()?;

    let (train_set, val_set) =
        validation_split(&samples, cfg.train.validation_fraction, cfg.train.seed)?;
    let queries: Vec<&RelationQuery> = samples.iter().map(|s| &s.query).collect();
    let vocab = Vocabulary::from_queries(queries);
    let mut model = GroundingModel::new(
        cfg.model.clone(),
        vocab,
        cfg.embedding_source(),
        cfg.train.seed,
    )?;
    println!(
        "training on {} samples, validating on {} ({} parameters)",
        train_set.len(),
        val_set.len(),
        model.params().scalar_count()
    );
    let mut log_file = match &a.log {
        Some(p) => Some(BufWriter::new(File::create(p).map_err(|e| {
            CliError::Runtime(format!("cannot create {}: {e}", p.display()))
        })?)),
        None => None,
    };
    let report = train(
        &mut model,
        &training_examples(&train_set),
        &training_examples(&val_set),
        &cfg.train,
        log_file.as_mut().map(|w| w as &mut dyn Write),
    )?;
    if let Some(mut w) = log_file {
        w.flush().map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    model.save(&a.out)?;
    for e in &report.epochs {
        println!(
            "epoch {:>3}  train {:.6}  validation {}",
            e.epoch,
            e.train_loss,
            e.validation_loss.map_or("-".into(), |v| format!("{v:.6}"))
        );
    }
    println!(
        "best epoch {} ({} steps, {:.1}s); checkpoint {}",
        report.best_epoch,
        report.steps,
        report.wall_time.as_secs_f64(),
        a.out.display()
    );
    if a.search_sigma {
        let found = search_sigma(&model, &val_set, &cfg.sigma_grid, &cfg.metric)?;
        for (s, acc) in &found.scores {
            println!("sigma {s}: validation Acc_R {:.2}", 100.0 * acc);
        }
        println!("chosen sigma {}", found.best);
        write_text(&sigma_path(&a.out), &format!("{}\n", found.best))?;
    }
    Ok(())
}

/// Threshold precedence: flag or config, then the value stored by
/// `train --search-sigma`, then the defaults.
fn grounding_sigma(
    cfg: &RunConfig,
    model: &GroundingModel,
    checkpoint: &Path,
) -> Result<f64, CliError> {
    if cfg.sigma_is_explicit() {
        return Ok(cfg.sigma());
    }
    let stored = sigma_path(checkpoint);
    if stored.is_file() {
        let text = fs::read_to_string(&stored).map_err(|e| CliError::Runtime(e.to_string()))?;
        return text
            .trim()
            .parse()
            .map_err(|_| CliError::Runtime(format!("bad threshold in {}", stored.display())));
    }
    let mut c = cfg.clone();
    c.model.encoder.use_clip = model.config().encoder.use_clip;
    Ok(c.sigma())
}

fn ground_cmd(a: &GroundArgs) -> Result<(), CliError> {
    if a.opts.no_msg || a.opts.no_clip || a.opts.no_tau || a.opts.co_occur {
        return Err(CliError::Usage(
            "ablation flags belong to 'train'; the model's own configuration is used for grounding"
                .into(),
        ));
    }
    let cfg = resolve_config(&a.opts)?;
    require_file(&a.model)?;
    let model = GroundingModel::load(&a.model)?;
    let sigma = grounding_sigma(&cfg, &model, &a.model)?;
    let samples = load(&a.manifest, false)?;
    let started = Instant::now();
    let results: Vec<GroundingResult> = samples
        .par_iter()
        .map(|s| ground(&model, &s.features, &s.query, sigma))
        .collect::<Result<_, _>>()?;
    save_results(&a.out, &results)?;
    println!(
        "grounded {} relations with sigma {sigma} in {:.1}s -> {}",
        results.len(),
        started.elapsed().as_secs_f64(),
        a.out.display()
    );
    Ok(())
}

fn restrict(gt: &GroundTruth, results: Vec<GroundingResult>) -> Vec<GroundingResult> {
    results
        .into_iter()
        .filter(|r| gt.contains_key(&(r.video_id.clone(), r.relation.clone())))
        .collect()
}

fn eval(a: &EvalArgs) -> Result<(), CliError> {
    if a.results.is_none() && !a.random_baseline {
        return Err(CliError::Usage(
            "nothing to score: give --results or --random-baseline".into(),
        ));
    }
    if let Some(p) = &a.results {
        require_file(p)?;
    }
    let mut cfg = RunConfig::default();
    if let Some(p) = &a.config {
        require_file(p)?;
        cfg = load_config(Some(p)).map_err(CliError::Usage)?;
    }
    let mut samples = load(&a.manifest, true)?;
    if let Some(train_manifest) = &a.zero_shot {
        require_file(train_manifest)?;
        let m = Manifest::load(train_manifest).map_err(|e| CliError::Runtime(e.to_string()))?;
        let train_queries: Vec<RelationQuery> =
            m.entries.iter().map(|e| e.relation.clone()).collect();
        samples = zero_shot_split(&train_queries, &samples);
        println!("zero-shot pairs {}", samples.len());
        if samples.is_empty() {
            return Err(CliError::Runtime(
                "no zero-shot relations in the test set".into(),
            ));
        }
    }
    let mut gt = ground_truth_of(&samples)?;
    let kind = match (a.static_only, a.dynamic_only) {
        (true, _) => Some(PredicateKind::Static),
        (_, true) => Some(PredicateKind::Dynamic),
        _ => None,
    };
    if let Some(k) = kind {
        let other = unclassified_predicates(&gt)?;
        if !other.is_empty() {
            println!(
                "predicates in neither list: {}",
                other.into_iter().collect::<Vec<_>>().join(" ")
            );
        }
        gt = filter_by_kind(&gt, k)?;
        if gt.is_empty() {
            return Err(CliError::Runtime(
                format!("no {k:?} relations in the test set").to_lowercase(),
            ));
        }
    }
    let keep: HashSet<(String, String)> = gt.keys().cloned().collect();
    let mut records = String::new();
    if let Some(p) = &a.results {
        let results = restrict(&gt, load_results(p)?);
        let report = accuracy(&results, &gt, &cfg.metric)?;
        print!("{}", report.to_text());
        records.push_str(&report.to_records());
    }
    if a.random_baseline {
        let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
        let mut seen = HashSet::new();
        let mut baseline = Vec::new();
        for s in &samples {
            let key = (s.video_id.clone(), s.query.canonical());
            if keep.contains(&key) && seen.insert(key) {
                baseline.push(random_grounding(
                    &s.features,
                    &s.query.canonical(),
                    &mut rng,
                )?);
            }
        }
        let report = accuracy(&baseline, &gt, &cfg.metric)?;
        println!("random baseline");
        print!("{}", report.to_text());
        for line in report.to_records().lines() {
            records.push_str(&line.replacen('{', "{\"baseline\":\"random\",", 1));
            records.push('\n');
        }
    }
    if let Some(p) = &a.records {
        write_text(p, &records)?;
    }
    Ok(())
}

fn gradcheck(a: &GradcheckArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let (model, video, query) = tiny_fixture(tiny_config(), a.seed)?;
    let report = model.gradient_check(&video, &query, a.eps)?;
    let elapsed = started.elapsed().as_secs_f64();
    let (name, index) = report.worst.clone().unwrap_or_default();
    println!("coordinates checked {}", report.coordinates);
    println!(
        "max relative error {:e} at {name}[{index}] (analytic {:e}, numeric {:e})",
        report.max_rel_error, report.analytic, report.numeric
    );
    println!("max absolute error {:e}", report.max_abs_error);
    println!(
        "coordinates at or above 1e-4 relative error {}",
        report.above_tolerance
    );
    println!("elapsed {elapsed:.1}s");
    if report.max_rel_error < 1e-4 {
        Ok(())
    } else {
        Err(CliError::Runtime(format!(
            "gradient check failed: max relative error {:e} >= 1e-4",
            report.max_rel_error
        )))
    }
}
