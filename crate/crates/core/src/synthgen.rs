//! Synthetic moving-box scenes with relations read off the geometry, used
//! as training data, ground truth and an end-to-end check.
//!
//! Every scene is built around one target relation that holds on every
//! frame; other entities move freely. Ground truth for the scene query is
//! every pair of entities for which the oracle finds the target triplet.

use std::collections::{BTreeSet, HashSet};
use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::datamodel::{
    save_ground_truth, save_video_features, BBox, DataError, GtInstance, Manifest, ManifestEntry,
    RegionProposal, RelationQuery, Trajectory, VideoFeatures,
};
use crate::error::{Error, Result};

pub const CATEGORIES: [&str; 6] = ["person", "dog", "cat", "car", "bicycle", "horse"];

/// Centre distance (px) beyond which one box is left/right/above/beneath another.
pub const POSITION_GAP: f64 = 10.0;
/// Area ratio for larger/smaller.
pub const SIZE_RATIO: f64 = 1.2;
/// Speed (px/frame) along the line between two entities for the motion predicates.
pub const MIN_APPROACH_SPEED: f64 = 1.0;
/// Shortest run of frames reported as a relation.
pub const MIN_SPAN: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Predicate {
    Left,
    Right,
    Above,
    Beneath,
    Larger,
    Smaller,
    MoveToward,
    MoveAway,
    Chase,
}

impl Predicate {
    pub const ALL: [Predicate; 9] = [
        Predicate::Left,
        Predicate::Right,
        Predicate::Above,
        Predicate::Beneath,
        Predicate::Larger,
        Predicate::Smaller,
        Predicate::MoveToward,
        Predicate::MoveAway,
        Predicate::Chase,
    ];

    /// The predicates scenes are built around by default.
    pub const BENCHMARK: [Predicate; 6] = [
        Predicate::Left,
        Predicate::Right,
        Predicate::Above,
        Predicate::Beneath,
        Predicate::MoveToward,
        Predicate::MoveAway,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Predicate::Left => "left",
            Predicate::Right => "right",
            Predicate::Above => "above",
            Predicate::Beneath => "beneath",
            Predicate::Larger => "larger",
            Predicate::Smaller => "smaller",
            Predicate::MoveToward => "move_toward",
            Predicate::MoveAway => "move_away",
            Predicate::Chase => "chase",
        }
    }

    pub fn from_name(name: &str) -> Option<Predicate> {
        Predicate::ALL.into_iter().find(|p| p.name() == name)
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Motion {
    Linear {
        vx: f64,
        vy: f64,
    },
    /// Oscillation along `(dx, dy)` (unit vector) around the start centre.
    Sinusoidal {
        dx: f64,
        dy: f64,
        amplitude: f64,
        period: f64,
        phase: f64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Entity {
    pub category: usize,
    pub width: f64,
    pub height: f64,
    /// Centre at frame 0.
    pub x: f64,
    pub y: f64,
    pub motion: Motion,
}

impl Entity {
    pub fn center_at(&self, t: usize) -> (f64, f64) {
        let t = t as f64;
        match self.motion {
            Motion::Linear { vx, vy } => (self.x + vx * t, self.y + vy * t),
            Motion::Sinusoidal {
                dx,
                dy,
                amplitude,
                period,
                phase,
            } => {
                let s =
                    amplitude * ((std::f64::consts::TAU * t / period + phase).sin() - phase.sin());
                (self.x + dx * s, self.y + dy * s)
            }
        }
    }

    /// Box at frame `t`, stored at the precision of the feature files.
    pub fn box_at(&self, t: usize) -> BBox {
        let (cx, cy) = self.center_at(t);
        let (hw, hh) = (self.width / 2.0, self.height / 2.0);
        BBox::new(cx - hw, cy - hh, cx + hw, cy + hh)
            .expect("positive size")
            .quantized()
    }

    fn inside(&self, canvas: f64, frames: usize) -> bool {
        (0..frames).all(|t| {
            let b = self.box_at(t);
            b.x_min >= 0.0 && b.y_min >= 0.0 && b.x_max <= canvas && b.y_max <= canvas
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct OracleRelation {
    pub subject: usize,
    pub predicate: Predicate,
    pub object: usize,
    /// Inclusive frame span.
    pub start: usize,
    pub end: usize,
}

impl OracleRelation {
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

fn velocity(e: &Entity, t: usize, frames: usize) -> (f64, f64) {
    let (a, b) = if t + 1 < frames {
        (t, t + 1)
    } else {
        (t - 1, t)
    };
    let (p, q) = (e.box_at(a).center(), e.box_at(b).center());
    (q.0 - p.0, q.1 - p.1)
}

/// Whether `predicate(subject, object)` holds at frame `t`.
pub fn holds(predicate: Predicate, s: &Entity, o: &Entity, t: usize, frames: usize) -> bool {
    let (bs, bo) = (s.box_at(t), o.box_at(t));
    let (cs, co) = (bs.center(), bo.center());
    // unit vector from subject to object
    let (ux, uy, dist) = {
        let (dx, dy) = (co.0 - cs.0, co.1 - cs.1);
        let d = dx.hypot(dy);
        (dx / d, dy / d, d)
    };
    let toward = |e: &Entity| {
        let v = velocity(e, t, frames);
        v.0 * ux + v.1 * uy
    };
    match predicate {
        Predicate::Left => cs.0 < co.0 - POSITION_GAP,
        Predicate::Right => cs.0 > co.0 + POSITION_GAP,
        Predicate::Above => cs.1 < co.1 - POSITION_GAP,
        Predicate::Beneath => cs.1 > co.1 + POSITION_GAP,
        Predicate::Larger => bs.area() > SIZE_RATIO * bo.area(),
        Predicate::Smaller => SIZE_RATIO * bs.area() < bo.area(),
        _ if frames < 2 || dist == 0.0 => false,
        Predicate::MoveToward => toward(s) >= MIN_APPROACH_SPEED,
        Predicate::MoveAway => toward(s) <= -MIN_APPROACH_SPEED,
        // subject closes in while the object moves away from it
        Predicate::Chase => toward(s) >= MIN_APPROACH_SPEED && toward(o) >= MIN_APPROACH_SPEED,
    }
}

/// Maximal runs of at least [`MIN_SPAN`] frames for every ordered pair of
/// distinct entities and every predicate, sorted.
pub fn oracle_relations(entities: &[Entity], frames: usize) -> Vec<OracleRelation> {
    let mut out = Vec::new();
    for s in 0..entities.len() {
        for o in 0..entities.len() {
            if s == o {
                continue;
            }
            for p in Predicate::ALL {
                let mut run: Option<usize> = None;
                for t in 0..=frames {
                    let on = t < frames && holds(p, &entities[s], &entities[o], t, frames);
                    match (on, run) {
                        (true, None) => run = Some(t),
                        (false, Some(start)) => {
                            if t - start >= MIN_SPAN {
                                out.push(OracleRelation {
                                    subject: s,
                                    predicate: p,
                                    object: o,
                                    start,
                                    end: t - 1,
                                });
                            }
                            run = None;
                        }
                        _ => {}
                    }
                }
            }
        }
    }
    out.sort();
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    pub canvas: f64,
    pub frames: usize,
    pub min_entities: usize,
    pub max_entities: usize,
    pub regions: usize,
    pub appearance_dim: usize,
    pub distractor_probability: f64,
    pub appearance_noise: f64,
    /// Height of the category code. Detector features are large compared with
    /// the uniform initialization of the projections, and at unit height the
    /// attention stays in the near-linear part of tanh where the query has
    /// little effect.
    pub appearance_scale: f64,
    /// Predicates the scene's target relation is drawn from.
    pub predicates: Vec<Predicate>,
    /// Fixed (subject category, predicate, object category) instead of a random one.
    pub target: Option<(usize, Predicate, usize)>,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            seed: 0,
            canvas: 256.0,
            frames: 24,
            min_entities: 3,
            max_entities: 6,
            regions: 6,
            appearance_dim: 8,
            distractor_probability: 0.5,
            appearance_noise: 0.1,
            appearance_scale: 8.0,
            predicates: Predicate::BENCHMARK.to_vec(),
            target: None,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.min_entities < 2 {
            return bad(format!(
                "a scene needs at least 2 entities for a relation, got {}",
                self.min_entities
            ));
        }
        if self.max_entities < self.min_entities || self.max_entities > self.regions {
            return bad(format!(
                "entity range {}..={} must fit in {} region slots",
                self.min_entities, self.max_entities, self.regions
            ));
        }
        if self.frames < MIN_SPAN {
            return bad(format!(
                "scenes need at least {MIN_SPAN} frames, got {}",
                self.frames
            ));
        }
        if self.appearance_dim < CATEGORIES.len() {
            return bad(format!(
                "appearance dimension must be at least {}",
                CATEGORIES.len()
            ));
        }
        if !(self.canvas >= 128.0) {
            return bad(format!("canvas {} is too small", self.canvas));
        }
        if !(0.0..=1.0).contains(&self.distractor_probability) || !(self.appearance_noise >= 0.0) {
            return bad("distractor probability must be in [0, 1] and noise non-negative".into());
        }
        if !(self.appearance_scale > 0.0 && self.appearance_scale.is_finite()) {
            return bad(format!(
                "appearance scale {} must be positive",
                self.appearance_scale
            ));
        }
        if self.predicates.is_empty() {
            return bad("no predicates to build scenes from".into());
        }
        if let Some((s, _, o)) = self.target {
            if s == o || s >= CATEGORIES.len() || o >= CATEGORIES.len() {
                return bad(format!("bad target categories {s} and {o}"));
            }
        }
        Ok(())
    }
}

/// What a region slot holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SlotSource {
    Entity(usize),
    Jittered(usize),
    Clutter,
}

#[derive(Clone, Debug)]
pub struct Scene {
    pub entities: Vec<Entity>,
    pub relations: Vec<OracleRelation>,
    pub query: RelationQuery,
    /// Entity indices of the constructed target pair.
    pub target: (usize, usize),
    pub has_distractor: bool,
    pub features: VideoFeatures,
    pub slots: Vec<Vec<SlotSource>>,
}

pub fn triplet_name(subject: usize, predicate: Predicate, object: usize) -> String {
    format!(
        "{}-{}-{}",
        CATEGORIES[subject],
        predicate.name(),
        CATEGORIES[object]
    )
}

impl Scene {
    pub fn relation_name(&self, r: &OracleRelation) -> String {
        triplet_name(
            self.entities[r.subject].category,
            r.predicate,
            self.entities[r.object].category,
        )
    }

    pub fn trajectory(&self, entity: usize, start: usize, end: usize) -> Trajectory {
        let boxes = (start..=end)
            .map(|t| self.entities[entity].box_at(t))
            .collect();
        Trajectory::new(start, boxes).expect("non-empty span")
    }

    /// Every oracle instance of the query triplet.
    pub fn ground_truth(&self) -> Vec<GtInstance> {
        let q = self.query.canonical();
        self.relations
            .iter()
            .filter(|r| self.relation_name(r) == q)
            .map(|r| GtInstance {
                subject: self.trajectory(r.subject, r.start, r.end),
                object: self.trajectory(r.object, r.start, r.end),
            })
            .collect()
    }

    /// Human-readable listing of entities, motions and oracle spans.
    pub fn describe(&self) -> String {
        let mut out = format!(
            "video {}\nquery {}\ntarget {} {}\ndistractor {}\n",
            self.features.video_id(),
            self.query,
            self.target.0,
            self.target.1,
            self.has_distractor
        );
        for (i, e) in self.entities.iter().enumerate() {
            let motion = match e.motion {
                Motion::Linear { vx, vy } => format!("linear v=({vx:.3},{vy:.3})"),
                Motion::Sinusoidal { dx, dy, amplitude, period, phase } => format!(
                    "sinusoidal dir=({dx:.3},{dy:.3}) amplitude={amplitude:.3} period={period:.3} phase={phase:.3}"
                ),
            };
            let _ = writeln!(
                out,
                "entity {i} {} size={:.1}x{:.1} start=({:.1},{:.1}) {motion}",
                CATEGORIES[e.category], e.width, e.height, e.x, e.y
            );
        }
        for r in &self.relations {
            let _ = writeln!(
                out,
                "relation {} {} {} {} {}..{}",
                r.subject,
                r.predicate,
                r.object,
                self.relation_name(r),
                r.start,
                r.end
            );
        }
        out
    }
}

fn random_entity(
    rng: &mut ChaCha8Rng,
    category: usize,
    spec: &SceneSpec,
    max_speed: f64,
) -> Entity {
    loop {
        let width = rng.random_range(24.0..56.0);
        let height = rng.random_range(24.0..56.0);
        let x = rng.random_range(width / 2.0..spec.canvas - width / 2.0);
        let y = rng.random_range(height / 2.0..spec.canvas - height / 2.0);
        let motion = random_motion(rng, max_speed);
        let e = Entity {
            category,
            width,
            height,
            x,
            y,
            motion,
        };
        if e.inside(spec.canvas, spec.frames) {
            return e;
        }
    }
}

fn random_motion(rng: &mut ChaCha8Rng, max_speed: f64) -> Motion {
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    if rng.random_bool(0.5) {
        let speed = rng.random_range(0.0..=max_speed);
        Motion::Linear {
            vx: speed * angle.cos(),
            vy: speed * angle.sin(),
        }
    } else {
        Motion::Sinusoidal {
            dx: angle.cos(),
            dy: angle.sin(),
            amplitude: rng.random_range(0.0..=4.0 * max_speed),
            period: rng.random_range(12.0..36.0),
            phase: rng.random_range(0.0..std::f64::consts::TAU),
        }
    }
}

/// Subject and object entities for which the predicate holds on every frame.
fn target_pair(
    rng: &mut ChaCha8Rng,
    spec: &SceneSpec,
    s_cat: usize,
    p: Predicate,
    o_cat: usize,
) -> Option<(Entity, Entity)> {
    let c = spec.canvas;
    let sized = |rng: &mut ChaCha8Rng, cat: usize| Entity {
        category: cat,
        width: rng.random_range(24.0..56.0),
        height: rng.random_range(24.0..56.0),
        x: 0.0,
        y: 0.0,
        motion: Motion::Linear { vx: 0.0, vy: 0.0 },
    };
    let mut s = sized(rng, s_cat);
    let mut o = sized(rng, o_cat);
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    match p {
        Predicate::Left | Predicate::Right | Predicate::Above | Predicate::Beneath => {
            let offset = rng.random_range(50.0..110.0);
            let (dx, dy) = match p {
                Predicate::Left => (-offset, rng.random_range(-60.0..60.0)),
                Predicate::Right => (offset, rng.random_range(-60.0..60.0)),
                Predicate::Above => (rng.random_range(-60.0..60.0), -offset),
                _ => (rng.random_range(-60.0..60.0), offset),
            };
            o.x = rng.random_range(0.2 * c..0.8 * c);
            o.y = rng.random_range(0.2 * c..0.8 * c);
            s.x = o.x + dx;
            s.y = o.y + dy;
            s.motion = random_motion(rng, 0.5);
            o.motion = random_motion(rng, 0.5);
        }
        Predicate::Larger | Predicate::Smaller => {
            let (big, small) = if p == Predicate::Larger {
                (&mut s, &mut o)
            } else {
                (&mut o, &mut s)
            };
            big.width = rng.random_range(48.0..64.0);
            big.height = rng.random_range(48.0..64.0);
            small.width = rng.random_range(20.0..32.0);
            small.height = rng.random_range(20.0..32.0);
            for e in [&mut s, &mut o] {
                e.x = rng.random_range(0.2 * c..0.8 * c);
                e.y = rng.random_range(0.2 * c..0.8 * c);
                e.motion = random_motion(rng, 1.5);
            }
        }
        Predicate::MoveToward | Predicate::MoveAway => {
            o.x = rng.random_range(0.3 * c..0.7 * c);
            o.y = rng.random_range(0.3 * c..0.7 * c);
            o.motion = random_motion(rng, 0.3);
            let speed = rng.random_range(2.5..4.0);
            let (ux, uy) = (angle.cos(), angle.sin());
            let dist = if p == Predicate::MoveToward {
                rng.random_range(
                    speed * spec.frames as f64 + 30.0..speed * spec.frames as f64 + 60.0,
                )
            } else {
                rng.random_range(30.0..60.0)
            };
            s.x = o.x + ux * dist;
            s.y = o.y + uy * dist;
            let sign = if p == Predicate::MoveToward {
                -1.0
            } else {
                1.0
            };
            s.motion = Motion::Linear {
                vx: sign * speed * ux,
                vy: sign * speed * uy,
            };
        }
        Predicate::Chase => {
            let (ux, uy) = (angle.cos(), angle.sin());
            let speed = rng.random_range(2.0..3.0);
            o.x = rng.random_range(0.2 * c..0.8 * c);
            o.y = rng.random_range(0.2 * c..0.8 * c);
            let dist = rng.random_range(80.0..110.0);
            s.x = o.x - ux * dist;
            s.y = o.y - uy * dist;
            o.motion = Motion::Linear {
                vx: speed * ux,
                vy: speed * uy,
            };
            s.motion = Motion::Linear {
                vx: (speed + 1.5) * ux,
                vy: (speed + 1.5) * uy,
            };
        }
    }
    let ok = s.inside(c, spec.frames)
        && o.inside(c, spec.frames)
        && (0..spec.frames).all(|t| holds(p, &s, &o, t, spec.frames));
    ok.then_some((s, o))
}

fn appearance(rng: &mut ChaCha8Rng, category: Option<usize>, spec: &SceneSpec) -> Vec<f64> {
    let noise =
        Normal::new(0.0, spec.appearance_noise.max(f64::MIN_POSITIVE)).expect("valid deviation");
    (0..spec.appearance_dim)
        .map(|j| {
            let base = if Some(j) == category { 1.0 } else { 0.0 };
            let n = if spec.appearance_noise > 0.0 {
                noise.sample(rng)
            } else {
                0.0
            };
            spec.appearance_scale * (base + n)
        })
        .collect()
}

fn jittered(rng: &mut ChaCha8Rng, b: &BBox, canvas: f64) -> BBox {
    let (w, h) = (b.width(), b.height());
    let (cx, cy) = b.center();
    let cx = cx + rng.random_range(-0.15..0.15) * w;
    let cy = cy + rng.random_range(-0.15..0.15) * h;
    let w = w * rng.random_range(0.85..1.15);
    let h = h * rng.random_range(0.85..1.15);
    BBox::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
        .expect("positive size")
        .clamp_to(canvas, canvas)
        .0
}

/// Builds one scene; deterministic in `spec.seed`.
pub fn generate_scene(spec: &SceneSpec, video_id: &str) -> Result<Scene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let ncat = CATEGORIES.len();
    let (s_cat, pred, o_cat) = match spec.target {
        Some(t) => t,
        None => {
            let s = rng.random_range(0..ncat);
            let o = (s + rng.random_range(1..ncat)) % ncat;
            (s, *spec.predicates.choose(&mut rng).expect("non-empty"), o)
        }
    };
    let mut pair = None;
    for _ in 0..1000 {
        pair = target_pair(&mut rng, spec, s_cat, pred, o_cat);
        if pair.is_some() {
            break;
        }
    }
    let (subject, object) = pair.ok_or_else(|| {
        Error::Domain(format!(
            "could not place {} on the canvas",
            triplet_name(s_cat, pred, o_cat)
        ))
    })?;
    let count = rng.random_range(spec.min_entities..=spec.max_entities);
    let mut entities = vec![subject, object];
    let has_distractor = count > 2 && rng.random_bool(spec.distractor_probability);
    if has_distractor {
        let cat = if rng.random_bool(0.5) { s_cat } else { o_cat };
        entities.push(random_entity(&mut rng, cat, spec, 2.0));
    }
    let others: Vec<usize> = (0..ncat).filter(|&c| c != s_cat && c != o_cat).collect();
    while entities.len() < count {
        let cat = *others.choose(&mut rng).expect("six categories");
        entities.push(random_entity(&mut rng, cat, spec, 2.0));
    }
    // entity order carries no meaning for the model; shuffle so the target
    // pair is not always first
    let mut order: Vec<usize> = (0..entities.len()).collect();
    order.shuffle(&mut rng);
    let entities: Vec<Entity> = order.iter().map(|&i| entities[i].clone()).collect();
    let pos = |k: usize| order.iter().position(|&i| i == k).expect("permutation");
    let target = (pos(0), pos(1));

    let mut frames = Vec::with_capacity(spec.frames);
    let mut slots = Vec::with_capacity(spec.frames);
    for t in 0..spec.frames {
        let mut regions: Vec<(SlotSource, RegionProposal)> = entities
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let r = RegionProposal {
                    bbox: e.box_at(t),
                    appearance: appearance(&mut rng, Some(e.category), spec),
                };
                (SlotSource::Entity(i), r)
            })
            .collect();
        while regions.len() < spec.regions {
            if rng.random_bool(0.5) {
                let i = rng.random_range(0..entities.len());
                let e = &entities[i];
                let bbox = jittered(&mut rng, &e.box_at(t), spec.canvas);
                regions.push((
                    SlotSource::Jittered(i),
                    RegionProposal {
                        bbox,
                        appearance: appearance(&mut rng, Some(e.category), spec),
                    },
                ));
            } else {
                let w = rng.random_range(16.0..64.0);
                let h = rng.random_range(16.0..64.0);
                let x = rng.random_range(0.0..spec.canvas - w);
                let y = rng.random_range(0.0..spec.canvas - h);
                let bbox = BBox::new(x, y, x + w, y + h).expect("positive size");
                regions.push((
                    SlotSource::Clutter,
                    RegionProposal {
                        bbox,
                        appearance: appearance(&mut rng, None, spec),
                    },
                ));
            }
        }
        regions.shuffle(&mut rng);
        slots.push(regions.iter().map(|r| r.0).collect());
        frames.push(regions.into_iter().map(|r| r.1).collect());
    }
    let (features, _) = VideoFeatures::new(
        video_id,
        spec.canvas,
        spec.canvas,
        spec.frames,
        (0..spec.frames).collect(),
        frames,
    )?;
    let relations = oracle_relations(&entities, spec.frames);
    let query: RelationQuery = triplet_name(s_cat, pred, o_cat).parse()?;
    Ok(Scene {
        entities,
        relations,
        query,
        target,
        has_distractor,
        features,
        slots,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub seed: u64,
    pub train_count: usize,
    pub test_count: usize,
    /// Fraction of test scenes whose triplet never appears in training.
    pub zero_shot_fraction: f64,
    pub scene: SceneSpec,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            seed: 0,
            train_count: 500,
            test_count: 100,
            zero_shot_fraction: 0.0,
            scene: SceneSpec::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct DatasetSummary {
    pub train_manifest: PathBuf,
    pub test_manifest: PathBuf,
    pub meta: PathBuf,
    /// Triplets used only in the test split.
    pub zero_shot_triplets: BTreeSet<String>,
    /// Test video ids whose query is a zero-shot triplet.
    pub zero_shot_videos: BTreeSet<String>,
    /// Video ids of scenes with a same-category distractor.
    pub distractor_videos: BTreeSet<String>,
}

/// Mixes a base seed with an index (splitmix64 finaliser).
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

type Triplet = (usize, Predicate, usize);

/// Writes `features/`, `gt/`, `scenes/`, `train.manifest`, `test.manifest`
/// and `dataset.meta` under `out_dir`.
pub fn emit_dataset(spec: &DatasetSpec, out_dir: &Path) -> Result<DatasetSummary> {
    spec.scene.validate()?;
    if spec.train_count == 0 || spec.test_count == 0 {
        return Err(Error::Config(
            "train and test scene counts must be at least 1".into(),
        ));
    }
    if !(0.0..1.0).contains(&spec.zero_shot_fraction) {
        return Err(Error::Config(format!(
            "zero-shot fraction {} outside [0, 1)",
            spec.zero_shot_fraction
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let ncat = CATEGORIES.len();
    let all: Vec<Triplet> = (0..ncat)
        .flat_map(|s| (0..ncat).filter(move |&o| o != s).map(move |o| (s, o)))
        .flat_map(|(s, o)| spec.scene.predicates.iter().map(move |&p| (s, p, o)))
        .collect();
    let n_zero = (spec.zero_shot_fraction * spec.test_count as f64).round() as usize;
    let held: HashSet<Triplet> = if n_zero > 0 {
        let k = ((all.len() as f64 * 0.1).round() as usize).clamp(1, all.len() - 1);
        all.choose_multiple(&mut rng, k).copied().collect()
    } else {
        HashSet::new()
    };
    let seen_pool: Vec<Triplet> = all.iter().copied().filter(|t| !held.contains(t)).collect();
    let train_triplets: Vec<Triplet> = (0..spec.train_count)
        .map(|_| *seen_pool.choose(&mut rng).expect("non-empty"))
        .collect();
    let used: Vec<Triplet> = train_triplets
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let entity_seen: HashSet<usize> = used.iter().flat_map(|t| [t.0, t.2]).collect();
    let pred_seen: HashSet<Predicate> = used.iter().map(|t| t.1).collect();
    let mut eligible: Vec<Triplet> = held
        .iter()
        .copied()
        .filter(|t| {
            entity_seen.contains(&t.0) && entity_seen.contains(&t.2) && pred_seen.contains(&t.1)
        })
        .collect();
    eligible.sort();
    if n_zero > 0 && eligible.is_empty() {
        return Err(Error::Config(
            "no held-out triplet has all its parts in the training scenes; use more training scenes".into(),
        ));
    }
    let mut test_triplets: Vec<(Triplet, bool)> = (0..spec.test_count)
        .map(|i| {
            if i < n_zero {
                (*eligible.choose(&mut rng).expect("checked"), true)
            } else {
                (*used.choose(&mut rng).expect("non-empty"), false)
            }
        })
        .collect();
    test_triplets.shuffle(&mut rng);

    for sub in ["features", "gt", "scenes"] {
        let d = out_dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| DataError::io(&d, e))?;
    }
    let jobs: Vec<(String, Triplet)> = train_triplets
        .iter()
        .enumerate()
        .map(|(i, &t)| (format!("train_{i:05}"), t))
        .chain(
            test_triplets
                .iter()
                .enumerate()
                .map(|(i, &(t, _))| (format!("test_{i:05}"), t)),
        )
        .collect();
    let written: Vec<(ManifestEntry, bool)> = jobs
        .par_iter()
        .enumerate()
        .map(|(i, (id, t))| {
            let scene_spec = SceneSpec {
                seed: derive_seed(spec.seed, i as u64),
                target: Some(*t),
                ..spec.scene.clone()
            };
            let scene = generate_scene(&scene_spec, id)?;
            let features = PathBuf::from("features").join(format!("{id}.vrgv"));
            let gt = PathBuf::from("gt").join(format!("{id}.gt"));
            save_video_features(&out_dir.join(&features), &scene.features)?;
            save_ground_truth(&out_dir.join(&gt), &scene.ground_truth())?;
            let sidecar = out_dir.join("scenes").join(format!("{id}.txt"));
            fs::write(&sidecar, scene.describe()).map_err(|e| DataError::io(&sidecar, e))?;
            let entry = ManifestEntry {
                video_id: id.clone(),
                features,
                relation: scene.query.clone(),
                ground_truth: Some(gt),
            };
            Ok((entry, scene.has_distractor))
        })
        .collect::<Result<_>>()?;

    let (train_part, test_part) = written.split_at(spec.train_count);
    let manifest = |part: &[(ManifestEntry, bool)]| Manifest {
        base_dir: out_dir.to_path_buf(),
        entries: part.iter().map(|e| e.0.clone()).collect(),
    };
    let train_manifest = out_dir.join("train.manifest");
    let test_manifest = out_dir.join("test.manifest");
    manifest(train_part).save(&train_manifest)?;
    manifest(test_part).save(&test_manifest)?;

    let zero_shot_triplets: BTreeSet<String> = eligible
        .iter()
        .map(|&(s, p, o)| triplet_name(s, p, o))
        .collect();
    let zero_shot_videos: BTreeSet<String> = test_part
        .iter()
        .zip(&test_triplets)
        .filter(|(_, t)| t.1)
        .map(|(e, _)| e.0.video_id.clone())
        .collect();
    let distractor_videos: BTreeSet<String> = written
        .iter()
        .filter(|e| e.1)
        .map(|e| e.0.video_id.clone())
        .collect();
    let meta = out_dir.join("dataset.meta");
    let s = &spec.scene;
    let mut text = String::new();
    let _ = writeln!(text, "seed={}", spec.seed);
    let _ = writeln!(text, "train_count={}", spec.train_count);
    let _ = writeln!(text, "test_count={}", spec.test_count);
    let _ = writeln!(text, "zero_shot_fraction={}", spec.zero_shot_fraction);
    let _ = writeln!(text, "zero_shot_test_scenes={n_zero}");
    let _ = writeln!(text, "canvas={}", s.canvas);
    let _ = writeln!(text, "frames={}", s.frames);
    let _ = writeln!(text, "regions={}", s.regions);
    let _ = writeln!(text, "appearance_dim={}", s.appearance_dim);
    let _ = writeln!(text, "entities={}..{}", s.min_entities, s.max_entities);
    let _ = writeln!(text, "distractor_probability={}", s.distractor_probability);
    let _ = writeln!(text, "appearance_noise={}", s.appearance_noise);
    let _ = writeln!(text, "appearance_scale={}", s.appearance_scale);
    let _ = writeln!(text, "categories={}", CATEGORIES.join(","));
    let _ = writeln!(
        text,
        "predicates={}",
        s.predicates
            .iter()
            .map(|p| p.name())
            .collect::<Vec<_>>()
            .join(",")
    );
    let _ = writeln!(text, "position_gap={POSITION_GAP}");
    let _ = writeln!(text, "size_ratio={SIZE_RATIO}");
    let _ = writeln!(text, "min_approach_speed={MIN_APPROACH_SPEED}");
    let _ = writeln!(text, "min_span={MIN_SPAN}");
    let _ = writeln!(
        text,
        "zero_shot_triplets={}",
        zero_shot_triplets
            .iter()
            .cloned()
            .collect::<Vec<_>>()
            .join(",")
    );
    let _ = writeln!(
        text,
        "zero_shot_videos={}",
        zero_shot_videos
            .iter()
            .cloned()
            .collect::<Vec<_>>()
            .join(",")
    );
    let _ = writeln!(
        text,
        "distractor_videos={}",
        distractor_videos
            .iter()
            .cloned()
            .collect::<Vec<_>>()
            .join(",")
    );
    fs::write(&meta, text).map_err(|e| DataError::io(&meta, e))?;

    Ok(DatasetSummary {
        train_manifest,
        test_manifest,
        meta,
        zero_shot_triplets,
        zero_shot_videos,
        distractor_videos,
    })
}
