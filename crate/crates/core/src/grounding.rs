//! Turning attention maps into a subject/object trajectory pair: fuse the
//! frame and clip attention, threshold into candidate segments, link
//! regions across kept frames by dynamic programming, interpolate to every
//! original frame and keep the best-scoring segment.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::datamodel::{spatial_iou, BBox, DataError, RelationQuery, Trajectory, VideoFeatures};
use crate::encoder::AttentionMaps;
use crate::error::{Error, Result};
use crate::model::GroundingModel;

/// Largest original-frame distance between kept frames of one segment, and
/// the largest distance accepted by [`link_score`].
pub const MAX_FRAME_GAP: usize = 10;

/// Frame attention plus the attention of the clip each frame belongs to.
pub fn fuse_temporal(frame: &[f64], clip: &[f64], clip_len: usize) -> Result<Vec<f64>> {
    if clip_len == 0 || frame.len() != clip.len() * clip_len {
        return Err(Error::Domain(format!(
            "{} frame weights do not match {} clips of length {clip_len}",
            frame.len(),
            clip.len()
        )));
    }
    Ok(frame
        .iter()
        .enumerate()
        .map(|(i, &b)| b + clip[i / clip_len])
        .collect())
}

/// Positions (into the sampled frames) of one run of kept frames.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CandidateSegment {
    pub frames: Vec<usize>,
}

/// Keeps frames with `beta >= sigma` and splits them wherever consecutive
/// kept frames are more than [`MAX_FRAME_GAP`] original frames apart. When
/// nothing survives, the single highest-attention frame forms the segment.
pub fn threshold_segments(
    beta: &[f64],
    sigma: f64,
    sampled_frames: &[usize],
) -> Result<Vec<CandidateSegment>> {
    if beta.is_empty() || beta.len() != sampled_frames.len() {
        return Err(Error::Domain(format!(
            "{} attention values for {} sampled frames",
            beta.len(),
            sampled_frames.len()
        )));
    }
    if !(sigma >= 0.0) {
        return Err(Error::Domain(format!(
            "threshold {sigma} must be non-negative"
        )));
    }
    let kept: Vec<usize> = (0..beta.len()).filter(|&i| beta[i] >= sigma).collect();
    if kept.is_empty() {
        return Ok(vec![CandidateSegment {
            frames: vec![argmax(beta)],
        }]);
    }
    let mut segments = vec![CandidateSegment {
        frames: vec![kept[0]],
    }];
    for pair in kept.windows(2) {
        let gap = sampled_frames[pair[1]] - sampled_frames[pair[0]];
        if gap <= MAX_FRAME_GAP {
            segments.last_mut().expect("non-empty").frames.push(pair[1]);
        } else {
            segments.push(CandidateSegment {
                frames: vec![pair[1]],
            });
        }
    }
    Ok(segments)
}

/// First index of the maximum.
fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Score for linking region `p` in one frame to region `q` in a frame
/// `distance` original frames later: both attentions plus overlap / distance.
pub fn link_score(
    alpha_p: f64,
    alpha_q: f64,
    box_p: &BBox,
    box_q: &BBox,
    distance: usize,
) -> Result<f64> {
    if !(1..=MAX_FRAME_GAP).contains(&distance) {
        return Err(Error::Domain(format!(
            "link distance {distance} outside 1..={MAX_FRAME_GAP}"
        )));
    }
    Ok(alpha_p + alpha_q + spatial_iou(box_p, box_q) / distance as f64)
}

/// One region per linked frame and the mean link score along the path.
#[derive(Clone, Debug, PartialEq)]
pub struct LinkedPath {
    pub regions: Vec<usize>,
    pub score: f64,
}

/// Highest mean link score path through consecutive frames.
///
/// `frames` are original frame numbers, strictly increasing; `alpha[k]` and
/// `boxes[k]` hold the attention and boxes of every region in frame `k`.
/// Among equally scored paths the lexicographically smallest region
/// sequence wins. A single frame yields its highest-attention region with
/// score `2 * alpha_max`.
pub fn viterbi_link(
    frames: &[usize],
    alpha: &[Vec<f64>],
    boxes: &[Vec<BBox>],
) -> Result<LinkedPath> {
    let k = frames.len();
    if k == 0 || alpha.len() != k || boxes.len() != k {
        return Err(Error::Domain(format!(
            "linking needs matching non-empty inputs, got {k} frames, {} attention rows, {} box rows",
            alpha.len(),
            boxes.len()
        )));
    }
    let m = alpha[0].len();
    if m == 0 || alpha.iter().any(|a| a.len() != m) || boxes.iter().any(|b| b.len() != m) {
        return Err(Error::Domain(
            "every linked frame needs the same non-zero region count".into(),
        ));
    }
    if k == 1 {
        let best = argmax(&alpha[0]);
        return Ok(LinkedPath {
            regions: vec![best],
            score: 2.0 * alpha[0][best],
        });
    }
    for pair in frames.windows(2) {
        if pair[1] <= pair[0] {
            return Err(Error::Domain(format!(
                "frames {} and {} are not increasing",
                pair[0], pair[1]
            )));
        }
    }

    // best[r]: best summed score of a path ending at region r of the current
    // frame; rank[r]: lexicographic order of that path among the current ones
    let mut best = vec![0.0; m];
    let mut rank: Vec<usize> = (0..m).collect();
    let mut back = vec![vec![0usize; m]; k];
    for step in 1..k {
        let d = frames[step] - frames[step - 1];
        let mut next = vec![f64::NEG_INFINITY; m];
        for r in 0..m {
            let mut choice: Option<usize> = None;
            for q in 0..m {
                let s = link_score(
                    alpha[step - 1][q],
                    alpha[step][r],
                    &boxes[step - 1][q],
                    &boxes[step][r],
                    d,
                )?;
                let v = if step == 1 { s } else { best[q] + s };
                let better = match choice {
                    None => true,
                    Some(c) => v > next[r] || (v == next[r] && rank[q] < rank[c]),
                };
                if better {
                    next[r] = v;
                    choice = Some(q);
                }
            }
            back[step][r] = choice.expect("m > 0");
        }
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by_key(|&r| (rank[back[step][r]], r));
        let mut new_rank = vec![0; m];
        for (pos, &r) in order.iter().enumerate() {
            new_rank[r] = pos;
        }
        best = next;
        rank = new_rank;
    }
    let mut end = 0;
    for r in 1..m {
        if best[r] > best[end] || (best[r] == best[end] && rank[r] < rank[end]) {
            end = r;
        }
    }
    let mut regions = vec![0; k];
    regions[k - 1] = end;
    for step in (1..k).rev() {
        regions[step - 1] = back[step][regions[step]];
    }
    Ok(LinkedPath {
        regions,
        score: best[end] / (k - 1) as f64,
    })
}

/// Fills every original frame between the anchor frames by linear
/// interpolation of the anchor boxes. Anchors are copied unchanged.
pub fn interpolate(frames: &[usize], anchors: &[BBox]) -> Result<Trajectory> {
    if frames.is_empty() || frames.len() != anchors.len() {
        return Err(Error::Domain(format!(
            "{} anchor frames for {} boxes",
            frames.len(),
            anchors.len()
        )));
    }
    for pair in frames.windows(2) {
        if pair[1] <= pair[0] {
            return Err(Error::Domain(format!(
                "anchor frames {} and {} are not increasing",
                pair[0], pair[1]
            )));
        }
    }
    let mut boxes = Vec::with_capacity(frames[frames.len() - 1] - frames[0] + 1);
    boxes.push(anchors[0]);
    for i in 1..frames.len() {
        let (f0, f1) = (frames[i - 1], frames[i]);
        let (b0, b1) = (anchors[i - 1].coords(), anchors[i].coords());
        let span = (f1 - f0) as f64;
        for fc in f0 + 1..f1 {
            let w0 = (f1 - fc) as f64 / span;
            let w1 = (fc - f0) as f64 / span;
            let c: [f64; 4] = std::array::from_fn(|j| w0 * b0[j] + w1 * b1[j]);
            boxes.push(BBox::from_coords(c)?);
        }
        boxes.push(anchors[i]);
    }
    Ok(Trajectory::new(frames[0], boxes)?)
}

/// A grounded subject/object pair for one (video, relation).
#[derive(Clone, Debug, PartialEq)]
pub struct GroundingResult {
    pub video_id: String,
    pub relation: String,
    pub subject: Trajectory,
    pub object: Trajectory,
    pub score: f64,
    /// Original frame numbers of the linked frames with the chosen subject
    /// and object region slots.
    pub links: Vec<(usize, usize, usize)>,
}

/// Grounding from precomputed attention maps.
pub fn ground_from_attention(
    maps: &AttentionMaps,
    video: &VideoFeatures,
    relation: &str,
    sigma: f64,
    clip_len: usize,
) -> Result<GroundingResult> {
    let n = video.num_frames();
    if maps.subject.len() != n || maps.object.len() != n {
        return Err(Error::Domain(format!(
            "attention covers {} frames, video has {n}",
            maps.subject.len()
        )));
    }
    let beta = fuse_temporal(&maps.frame, &maps.clip, clip_len)?;
    let sampled = video.sampled_frames();
    let segments = threshold_segments(&beta, sigma, sampled)?;

    let mut best: Option<(f64, &CandidateSegment, LinkedPath, LinkedPath)> = None;
    for seg in &segments {
        let frames: Vec<usize> = seg.frames.iter().map(|&i| sampled[i]).collect();
        let boxes: Vec<Vec<BBox>> = seg
            .frames
            .iter()
            .map(|&i| video.frame_regions(i).iter().map(|r| r.bbox).collect())
            .collect();
        let subj_alpha: Vec<Vec<f64>> = seg
            .frames
            .iter()
            .map(|&i| maps.subject[i].clone())
            .collect();
        let obj_alpha: Vec<Vec<f64>> = seg.frames.iter().map(|&i| maps.object[i].clone()).collect();
        let subject = viterbi_link(&frames, &subj_alpha, &boxes)?;
        let object = viterbi_link(&frames, &obj_alpha, &boxes)?;
        let score = 0.5 * (subject.score + object.score);
        if best.as_ref().is_none_or(|b| score > b.0) {
            best = Some((score, seg, subject, object));
        }
    }
    let (score, seg, subject, object) = best.expect("at least one segment");
    if !score.is_finite() {
        return Err(Error::Domain(format!(
            "segment score {score} is not finite"
        )));
    }
    let frames: Vec<usize> = seg.frames.iter().map(|&i| sampled[i]).collect();
    let pick = |path: &LinkedPath| -> Vec<BBox> {
        seg.frames
            .iter()
            .zip(&path.regions)
            .map(|(&i, &r)| video.region(i, r).bbox)
            .collect()
    };
    let clamp = |t: Trajectory| -> Result<Trajectory> {
        let boxes = t
            .boxes()
            .iter()
            .map(|b| b.clamp_to(video.frame_width(), video.frame_height()).0)
            .collect();
        Ok(Trajectory::new(t.start_frame(), boxes)?)
    };
    let subject_track = clamp(interpolate(&frames, &pick(&subject))?)?;
    let object_track = clamp(interpolate(&frames, &pick(&object))?)?;
    let links = frames
        .iter()
        .zip(subject.regions.iter().zip(&object.regions))
        .map(|(&f, (&s, &o))| (f, s, o))
        .collect();
    Ok(GroundingResult {
        video_id: video.video_id().to_string(),
        relation: relation.to_string(),
        subject: subject_track,
        object: object_track,
        score,
        links,
    })
}

/// Runs the model on one video and query and grounds the result.
pub fn ground(
    model: &GroundingModel,
    video: &VideoFeatures,
    query: &RelationQuery,
    sigma: f64,
) -> Result<GroundingResult> {
    let maps = model.attention(video, query)?;
    ground_from_attention(
        &maps,
        video,
        &query.canonical(),
        sigma,
        model.config().encoder.clip_len,
    )
}

pub const RESULTS_HEADER: &str = "VRGR 1";

/// Line-oriented text form of a result list:
///
/// ```text
/// VRGR 1
/// R <video_id> <relation> <start> <end> <score>
/// L <frame> <subject_slot> <object_slot>        (one per linked frame)
/// F <frame> <subject box> <object box>          (one per frame in the span)
/// ```
pub fn format_results(results: &[GroundingResult]) -> String {
    let mut out = format!("{RESULTS_HEADER}\n");
    for r in results {
        let _ = writeln!(
            out,
            "R {} {} {} {} {}",
            r.video_id,
            r.relation,
            r.subject.start_frame(),
            r.subject.end_frame(),
            r.score
        );
        for &(f, s, o) in &r.links {
            let _ = writeln!(out, "L {f} {s} {o}");
        }
        for (i, (s, o)) in r.subject.boxes().iter().zip(r.object.boxes()).enumerate() {
            let _ = writeln!(
                out,
                "F {} {} {} {} {} {} {} {} {}",
                r.subject.start_frame() + i,
                s.x_min,
                s.y_min,
                s.x_max,
                s.y_max,
                o.x_min,
                o.y_min,
                o.x_max,
                o.y_max
            );
        }
    }
    out
}

pub fn parse_results(text: &str) -> Result<Vec<GroundingResult>> {
    let bad = |line: usize, msg: String| {
        Error::Data(DataError::Format(format!(
            "results line {}: {msg}",
            line + 1
        )))
    };
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .peekable();
    match lines.next() {
        Some((_, l)) if l.trim() == RESULTS_HEADER => {}
        Some((i, l)) => {
            return Err(bad(
                i,
                format!("expected header '{RESULTS_HEADER}', found '{l}'"),
            ))
        }
        None => return Err(bad(0, "empty results file".into())),
    }
    let mut out = Vec::new();
    while let Some((lineno, line)) = lines.next() {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 6 || f[0] != "R" {
            return Err(bad(
                lineno,
                format!("expected a result record, found '{line}'"),
            ));
        }
        let int = |s: &str, at: usize| {
            s.parse::<usize>()
                .map_err(|_| bad(at, format!("bad integer '{s}'")))
        };
        let (start, end) = (int(f[3], lineno)?, int(f[4], lineno)?);
        let score: f64 = f[5]
            .parse()
            .map_err(|_| bad(lineno, format!("bad score '{}'", f[5])))?;
        if end < start {
            return Err(bad(lineno, format!("span {start}..{end} is reversed")));
        }
        let mut links = Vec::new();
        while let Some((i, l)) = lines.next_if(|(_, l)| l.starts_with("L ")) {
            let p: Vec<&str> = l.split_whitespace().collect();
            if p.len() != 4 {
                return Err(bad(i, format!("malformed link line '{l}'")));
            }
            links.push((int(p[1], i)?, int(p[2], i)?, int(p[3], i)?));
        }
        let mut subject = Vec::new();
        let mut object = Vec::new();
        for expected in start..=end {
            let (i, l) = lines
                .next()
                .ok_or_else(|| bad(lineno, format!("missing frame {expected}")))?;
            let p: Vec<&str> = l.split_whitespace().collect();
            if p.len() != 10 || p[0] != "F" || int(p[1], i)? != expected {
                return Err(bad(
                    i,
                    format!("expected 'F {expected} ...' with 8 coordinates"),
                ));
            }
            let c: Vec<f64> = p[2..]
                .iter()
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|_| bad(i, format!("bad number '{s}'")))
                })
                .collect::<Result<_>>()?;
            subject.push(BBox::new(c[0], c[1], c[2], c[3])?);
            object.push(BBox::new(c[4], c[5], c[6], c[7])?);
        }
        out.push(GroundingResult {
            video_id: f[1].to_string(),
            relation: f[2].to_string(),
            subject: Trajectory::new(start, subject)?,
            object: Trajectory::new(start, object)?,
            score,
            links,
        });
    }
    Ok(out)
}

pub fn save_results(path: &Path, results: &[GroundingResult]) -> Result<()> {
    fs::write(path, format_results(results)).map_err(|e| Error::Data(DataError::io(path, e)))
}

pub fn load_results(path: &Path) -> Result<Vec<GroundingResult>> {
    let text = fs::read_to_string(path).map_err(|e| Error::Data(DataError::io(path, e)))?;
    parse_results(&text)
}
