use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use super::{
    load_video_features, tokenize_relation, BBox, DataError, RelationQuery, Trajectory,
    VideoFeatures,
};

/// One line of a manifest: a video, its feature file, a relation and
/// optionally the ground-truth file for that (video, relation) pair.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub video_id: String,
    pub features: PathBuf,
    pub relation: RelationQuery,
    pub ground_truth: Option<PathBuf>,
}

/// Tab-separated index `video_id  features  relation  [gt]`. Relative paths
/// are resolved against the manifest's directory.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub base_dir: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, DataError> {
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if !(3..=4).contains(&fields.len()) {
                return Err(DataError::Format(format!(
                    "manifest line {}: expected 3 or 4 tab-separated fields, found {}",
                    lineno + 1,
                    fields.len()
                )));
            }
            let relation = tokenize_relation(fields[2])?;
            entries.push(ManifestEntry {
                video_id: fields[0].to_string(),
                features: PathBuf::from(fields[1]),
                relation,
                ground_truth: fields.get(3).filter(|s| !s.is_empty()).map(PathBuf::from),
            });
        }
        Ok(Self {
            base_dir: base_dir.to_path_buf(),
            entries,
        })
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn format(&self) -> String {
        let mut out = String::from("# video_id\tfeatures\trelation\tground_truth\n");
        for e in &self.entries {
            let _ = write!(
                out,
                "{}\t{}\t{}",
                e.video_id,
                e.features.display(),
                e.relation
            );
            if let Some(gt) = &e.ground_truth {
                let _ = write!(out, "\t{}", gt.display());
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        fs::write(path, self.format()).map_err(|e| DataError::io(path, e))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}

/// One ground-truth relation instance: paired subject and object tracks.
#[derive(Clone, Debug, PartialEq)]
pub struct GtInstance {
    pub subject: Trajectory,
    pub object: Trajectory,
}

/// A (video, relation) pair. Ground truth is for evaluation only.
#[derive(Clone, Debug)]
pub struct VideoRelationSample {
    pub video_id: String,
    pub features: Arc<VideoFeatures>,
    pub query: RelationQuery,
    pub ground_truth: Option<Vec<GtInstance>>,
}

fn write_track(out: &mut String, instance: usize, role: &str, t: &Trajectory) {
    let _ = writeln!(
        out,
        "entity {instance} {role} {} {}",
        t.start_frame(),
        t.end_frame()
    );
    for b in t.boxes() {
        let _ = writeln!(out, "{} {} {} {}", b.x_min, b.y_min, b.x_max, b.y_max);
    }
}

/// Text layout: `VRGT 1`, then per instance an `entity <i> subject <start> <end>`
/// line followed by one `x1 y1 x2 y2` line per frame, and the same for the object.
pub fn format_ground_truth(instances: &[GtInstance]) -> String {
    let mut out = String::from("VRGT 1\n");
    for (i, inst) in instances.iter().enumerate() {
        write_track(&mut out, i, "subject", &inst.subject);
        write_track(&mut out, i, "object", &inst.object);
    }
    out
}

pub fn parse_ground_truth(text: &str) -> Result<Vec<GtInstance>, DataError> {
    let bad = |lineno: usize, msg: String| {
        DataError::Format(format!("ground truth line {}: {msg}", lineno + 1))
    };
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, l)) if l.trim() == "VRGT 1" => {}
        Some((i, l)) => return Err(bad(i, format!("expected header 'VRGT 1', found '{l}'"))),
        None => return Err(DataError::Format("empty ground truth file".into())),
    }
    let mut subjects: Vec<Option<Trajectory>> = Vec::new();
    let mut objects: Vec<Option<Trajectory>> = Vec::new();
    while let Some((lineno, line)) = lines.next() {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 5 || f[0] != "entity" {
            return Err(bad(
                lineno,
                format!("expected 'entity <i> <role> <start> <end>', found '{line}'"),
            ));
        }
        let num = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| bad(lineno, format!("bad integer '{s}'")))
        };
        let (inst, start, end) = (num(f[1])?, num(f[3])?, num(f[4])?);
        if end < start {
            return Err(bad(lineno, format!("span {start}..{end} is reversed")));
        }
        let mut boxes = Vec::with_capacity(end - start + 1);
        for _ in start..=end {
            let (bl, bline) = lines.next().ok_or_else(|| {
                DataError::Format(format!("ground truth ends inside entity {inst} {}", f[2]))
            })?;
            let c: Vec<f64> = bline
                .split_whitespace()
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|_| bad(bl, format!("bad number '{s}'")))
                })
                .collect::<Result<_, _>>()?;
            if c.len() != 4 {
                return Err(bad(
                    bl,
                    format!("expected 4 coordinates, found {}", c.len()),
                ));
            }
            boxes.push(BBox::new(c[0], c[1], c[2], c[3])?);
        }
        let track = Trajectory::new(start, boxes)?;
        let slot = match f[2] {
            "subject" => &mut subjects,
            "object" => &mut objects,
            other => return Err(bad(lineno, format!("unknown role '{other}'"))),
        };
        if slot.len() <= inst {
            slot.resize(inst + 1, None);
        }
        if slot[inst].replace(track).is_some() {
            return Err(bad(
                lineno,
                format!("duplicate {} for instance {inst}", f[2]),
            ));
        }
    }
    let n = subjects.len().max(objects.len());
    subjects.resize(n, None);
    objects.resize(n, None);
    subjects
        .into_iter()
        .zip(objects)
        .enumerate()
        .map(|(i, pair)| match pair {
            (Some(subject), Some(object)) => Ok(GtInstance { subject, object }),
            _ => Err(DataError::Format(format!(
                "instance {i} lacks a subject or object track"
            ))),
        })
        .collect()
}

pub fn load_ground_truth(path: &Path) -> Result<Vec<GtInstance>, DataError> {
    let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    parse_ground_truth(&text).map_err(|e| DataError::Format(format!("{}: {e}", path.display())))
}

pub fn save_ground_truth(path: &Path, instances: &[GtInstance]) -> Result<(), DataError> {
    fs::write(path, format_ground_truth(instances)).map_err(|e| DataError::io(path, e))
}

/// Loads every entry of a manifest. Feature files shared by several entries
/// are read once. Ground truth is read only when `with_ground_truth` is set.
pub fn load_samples(
    manifest: &Manifest,
    with_ground_truth: bool,
) -> Result<Vec<VideoRelationSample>, DataError> {
    let mut cache: HashMap<PathBuf, Arc<VideoFeatures>> = HashMap::new();
    let mut out = Vec::with_capacity(manifest.entries.len());
    for e in &manifest.entries {
        let path = manifest.resolve(&e.features);
        let features = match cache.get(&path) {
            Some(f) => f.clone(),
            None => {
                let (mut f, _) = load_video_features(&path)?;
                f.set_video_id(e.video_id.clone());
                let f = Arc::new(f);
                cache.insert(path, f.clone());
                f
            }
        };
        let ground_truth = match (&e.ground_truth, with_ground_truth) {
            (Some(p), true) => Some(load_ground_truth(&manifest.resolve(p))?),
            _ => None,
        };
        out.push(VideoRelationSample {
            video_id: e.video_id.clone(),
            features,
            query: e.relation.clone(),
            ground_truth,
        });
    }
    Ok(out)
}
