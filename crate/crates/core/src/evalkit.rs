//! Accuracy of grounded subject/object trajectories against ground truth at
//! several spatial overlap thresholds, plus the split helpers used for
//! zero-shot and static/dynamic reporting.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;

use rand::Rng;

use crate::datamodel::{
    spatial_iou, GtInstance, RelationQuery, Trajectory, VideoFeatures, VideoRelationSample,
};
use crate::error::{Error, Result};
use crate::grounding::{interpolate, GroundingResult};

#[derive(Clone, Debug, PartialEq)]
pub struct MetricConfig {
    pub thresholds: Vec<f64>,
    /// A trajectory counts as found when its overlap is strictly above this.
    pub temporal_threshold: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            thresholds: vec![0.3, 0.5, 0.7],
            temporal_threshold: 0.5,
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thresholds.is_empty() {
            return Err(Error::Config(
                "at least one spatial threshold is required".into(),
            ));
        }
        for &t in self.thresholds.iter().chain([&self.temporal_threshold]) {
            if !(t > 0.0 && t <= 1.0) {
                return Err(Error::Config(format!("threshold {t} outside (0, 1]")));
            }
        }
        Ok(())
    }
}

/// Frames of the temporal intersection whose boxes overlap by at least
/// `tau`, divided by the length of the temporal union.
pub fn trajectory_overlap(pred: &Trajectory, gt: &Trajectory, tau: f64) -> f64 {
    let (ps, pe) = (pred.start_frame(), pred.end_frame());
    let (gs, ge) = (gt.start_frame(), gt.end_frame());
    let lo = ps.max(gs);
    let hi = pe.min(ge);
    let inter = if lo <= hi { hi - lo + 1 } else { 0 };
    let union = (pe - ps + 1) + (ge - gs + 1) - inter;
    if inter == 0 {
        return 0.0;
    }
    let hits = (lo..=hi)
        .filter(|&f| {
            let (a, b) = (
                pred.box_at(f).expect("in span"),
                gt.box_at(f).expect("in span"),
            );
            spatial_iou(a, b) >= tau
        })
        .count();
    hits as f64 / union as f64
}

/// Whether the subject, the object and both together (against one instance)
/// are found at spatial threshold `tau`.
pub fn judge_pair(
    result: &GroundingResult,
    gt: &[GtInstance],
    tau: f64,
    temporal_threshold: f64,
) -> Result<(bool, bool, bool)> {
    if gt.is_empty() {
        return Err(Error::Domain(format!(
            "no ground truth instances for {} {}",
            result.video_id, result.relation
        )));
    }
    let (mut s_hit, mut o_hit, mut r_hit) = (false, false, false);
    for inst in gt {
        let s = trajectory_overlap(&result.subject, &inst.subject, tau) > temporal_threshold;
        let o = trajectory_overlap(&result.object, &inst.object, tau) > temporal_threshold;
        s_hit |= s;
        o_hit |= o;
        r_hit |= s && o;
    }
    Ok((s_hit, o_hit, r_hit))
}

/// Ground truth keyed by (video id, canonical relation).
pub type GroundTruth = HashMap<(String, String), Vec<GtInstance>>;

/// Collects the ground truth carried by loaded samples.
pub fn ground_truth_of(samples: &[VideoRelationSample]) -> Result<GroundTruth> {
    let mut gt = GroundTruth::new();
    for s in samples {
        let inst = s.ground_truth.as_ref().ok_or_else(|| {
            Error::Domain(format!(
                "sample {} {} has no ground truth",
                s.video_id, s.query
            ))
        })?;
        gt.entry((s.video_id.clone(), s.query.canonical()))
            .or_default()
            .extend(inst.iter().cloned());
    }
    Ok(gt)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AccuracyReport {
    pub thresholds: Vec<f64>,
    pub subject: Vec<f64>,
    pub object: Vec<f64>,
    pub relation: Vec<f64>,
    /// Ground-truth pairs evaluated.
    pub samples: usize,
    /// Ground-truth pairs without a result; counted as misses.
    pub missing: usize,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

impl AccuracyReport {
    pub fn average_subject(&self) -> f64 {
        mean(&self.subject)
    }

    pub fn average_object(&self) -> f64 {
        mean(&self.object)
    }

    pub fn average_relation(&self) -> f64 {
        mean(&self.relation)
    }

    /// Table in percent, one row per accuracy kind.
    pub fn to_text(&self) -> String {
        let mut out = format!("pairs {} (missing {})\n", self.samples, self.missing);
        let _ = write!(out, "{:<8}", "");
        for t in &self.thresholds {
            let _ = write!(out, "{:>10}", format!("sIoU={t}"));
        }
        let _ = writeln!(out, "{:>10}", "Average");
        for (name, row) in [
            ("Acc_S", &self.subject),
            ("Acc_O", &self.object),
            ("Acc_R", &self.relation),
        ] {
            let _ = write!(out, "{name:<8}");
            for v in row.iter().chain([&mean(row)]) {
                let _ = write!(out, "{:>10.2}", 100.0 * v);
            }
            out.push('\n');
        }
        out
    }

    /// One JSON object per line; fractions in [0, 1].
    pub fn to_records(&self) -> String {
        let mut out = format!(
            "{{\"pairs\":{},\"missing\":{}}}\n",
            self.samples, self.missing
        );
        for (name, row) in [
            ("Acc_S", &self.subject),
            ("Acc_O", &self.object),
            ("Acc_R", &self.relation),
        ] {
            for (t, v) in self.thresholds.iter().zip(row) {
                let _ = writeln!(
                    out,
                    "{{\"metric\":\"{name}\",\"threshold\":{t},\"value\":{v}}}"
                );
            }
            let _ = writeln!(
                out,
                "{{\"metric\":\"{name}\",\"threshold\":\"average\",\"value\":{}}}",
                mean(row)
            );
        }
        out
    }
}

/// Fraction of ground-truth pairs found at each spatial threshold. Every
/// result must have a ground-truth entry; pairs without a result count as
/// misses.
pub fn accuracy(
    results: &[GroundingResult],
    gt: &GroundTruth,
    config: &MetricConfig,
) -> Result<AccuracyReport> {
    config.validate()?;
    if gt.is_empty() {
        return Err(Error::Domain("no ground truth pairs to evaluate".into()));
    }
    let mut by_key: HashMap<(String, String), &GroundingResult> = HashMap::new();
    for r in results {
        let key = (r.video_id.clone(), r.relation.clone());
        if !gt.contains_key(&key) {
            return Err(Error::Domain(format!(
                "result for {} {} has no ground truth",
                key.0, key.1
            )));
        }
        if by_key.insert(key, r).is_some() {
            return Err(Error::Domain(format!(
                "duplicate result for {} {}",
                r.video_id, r.relation
            )));
        }
    }
    let nt = config.thresholds.len();
    let (mut s, mut o, mut rel) = (vec![0usize; nt], vec![0usize; nt], vec![0usize; nt]);
    for (key, inst) in gt {
        let Some(r) = by_key.get(key) else { continue };
        for (i, &tau) in config.thresholds.iter().enumerate() {
            let (hs, ho, hr) = judge_pair(r, inst, tau, config.temporal_threshold)?;
            s[i] += hs as usize;
            o[i] += ho as usize;
            rel[i] += hr as usize;
        }
    }
    let n = gt.len();
    let frac = |c: Vec<usize>| c.into_iter().map(|x| x as f64 / n as f64).collect();
    Ok(AccuracyReport {
        thresholds: config.thresholds.clone(),
        subject: frac(s),
        object: frac(o),
        relation: frac(rel),
        samples: n,
        missing: n - by_key.len(),
    })
}

/// Test samples whose full triplet never occurs in training while its
/// subject and object categories and its predicate each do. Subject and
/// object categories are pooled: an entity seen in either role counts.
pub fn zero_shot_split(
    train: &[RelationQuery],
    test: &[VideoRelationSample],
) -> Vec<VideoRelationSample> {
    let triplets: HashSet<String> = train.iter().map(|q| q.canonical()).collect();
    let entities: HashSet<String> = train
        .iter()
        .flat_map(|q| [q.subject_text(), q.object_text()])
        .collect();
    let predicates: HashSet<String> = train.iter().map(|q| q.predicate_text()).collect();
    test.iter()
        .filter(|s| {
            let q = &s.query;
            !triplets.contains(&q.canonical())
                && entities.contains(&q.subject_text())
                && entities.contains(&q.object_text())
                && predicates.contains(&q.predicate_text())
        })
        .cloned()
        .collect()
}

const STATIC_PREDICATES: &[&str] = &[
    "above",
    "beneath",
    "left",
    "right",
    "front",
    "behind",
    "taller",
    "larger",
    "next to",
    "inside",
    "hold",
    "bite",
    "lie above",
    "lie beneath",
    "lie left",
    "lie right",
    "lie inside",
    "lie next to",
    "lie with",
    "stand above",
    "stand beneath",
    "stand left",
    "stand right",
    "stand front",
    "stand behind",
    "stand next to",
    "stand inside",
    "sit above",
    "sit left",
    "sit right",
    "sit front",
    "sit behind",
    "sit next to",
    "sit inside",
    "stop above",
    "stop beneath",
    "stop left",
    "stop right",
    "stop front",
    "stop behind",
    "stop next to",
    "stop with",
];

const DYNAMIC_PREDICATES: &[&str] = &[
    "swim behind",
    "walk away",
    "fly behind",
    "creep behind",
    "move left",
    "touch",
    "follow",
    "move away",
    "walk with",
    "move next to",
    "creep above",
    "fall off",
    "run with",
    "swim front",
    "walk next to",
    "kick",
    "creep right",
    "watch",
    "swim with",
    "fly away",
    "creep beneath",
    "run past",
    "jump right",
    "fly toward",
    "creep left",
    "run next to",
    "jump front",
    "jump beneath",
    "past",
    "jump toward",
    "walk beneath",
    "run away",
    "run above",
    "walk right",
    "away",
    "move right",
    "fly right",
    "run front",
    "run toward",
    "jump past",
    "jump above",
    "move with",
    "swim beneath",
    "walk past",
    "run right",
    "creep away",
    "move toward",
    "feed",
    "run left",
    "fly front",
    "walk behind",
    "fly above",
    "fly next to",
    "fight",
    "walk above",
    "jump behind",
    "fly with",
    "jump next to",
    "run behind",
    "move behind",
    "swim right",
    "swim next to",
    "move past",
    "pull",
    "walk left",
    "ride",
    "move beneath",
    "toward",
    "jump left",
    "creep toward",
    "fly left",
    "walk toward",
    "chase",
    "creep next to",
    "fly past",
    "move front",
    "run beneath",
    "creep front",
    "creep past",
    "play",
    "move above",
    "faster",
    "walk front",
    "drive",
    "swim left",
    "jump away",
    "jump with",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PredicateKind {
    Static,
    Dynamic,
}

/// Static/dynamic class of a predicate written with `_` or spaces between
/// words; `None` for predicates outside both lists.
pub fn predicate_kind(predicate: &str) -> Option<PredicateKind> {
    let spaced = predicate.replace('_', " ");
    if STATIC_PREDICATES.contains(&spaced.as_str()) {
        Some(PredicateKind::Static)
    } else if DYNAMIC_PREDICATES.contains(&spaced.as_str()) {
        Some(PredicateKind::Dynamic)
    } else {
        None
    }
}

/// Keeps the ground truth pairs whose predicate is of the given kind.
pub fn filter_by_kind(gt: &GroundTruth, kind: PredicateKind) -> Result<GroundTruth> {
    let mut out = GroundTruth::new();
    for (key, inst) in gt {
        let q: RelationQuery = key.1.parse()?;
        if predicate_kind(&q.predicate_text()) == Some(kind) {
            out.insert(key.clone(), inst.clone());
        }
    }
    Ok(out)
}

/// Predicates present in the ground truth that belong to neither list.
pub fn unclassified_predicates(gt: &GroundTruth) -> Result<BTreeSet<String>> {
    let mut out = BTreeSet::new();
    for key in gt.keys() {
        let q: RelationQuery = key.1.parse()?;
        if predicate_kind(&q.predicate_text()).is_none() {
            out.insert(q.predicate_text());
        }
    }
    Ok(out)
}

/// Uninformed reference: a random contiguous run of sampled frames with a
/// random region slot per frame for subject and object.
pub fn random_grounding(
    video: &VideoFeatures,
    relation: &str,
    rng: &mut impl Rng,
) -> Result<GroundingResult> {
    let n = video.num_frames();
    let m = video.regions_per_frame();
    let a = rng.random_range(0..n);
    let b = rng.random_range(0..n);
    let (lo, hi) = (a.min(b), a.max(b));
    let frames: Vec<usize> = (lo..=hi).map(|i| video.sampled_frames()[i]).collect();
    let mut links = Vec::with_capacity(frames.len());
    let (mut s_boxes, mut o_boxes) = (Vec::new(), Vec::new());
    for (i, &f) in (lo..=hi).zip(&frames) {
        let (s, o) = (rng.random_range(0..m), rng.random_range(0..m));
        s_boxes.push(video.region(i, s).bbox);
        o_boxes.push(video.region(i, o).bbox);
        links.push((f, s, o));
    }
    Ok(GroundingResult {
        video_id: video.video_id().to_string(),
        relation: relation.to_string(),
        subject: interpolate(&frames, &s_boxes)?,
        object: interpolate(&frames, &o_boxes)?,
        score: 0.0,
        links,
    })
}
