use std::fs;
use std::path::Path;

use super::{geometry_feature, BBox, DataError};

pub const FEATURES_MAGIC: &[u8; 4] = b"VRGV";
pub const FEATURES_VERSION: u32 = 1;

const HEADER_BYTES: usize = 32;

/// One candidate box with its appearance descriptor.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionProposal {
    pub bbox: BBox,
    pub appearance: Vec<f64>,
}

/// Problems repaired while building or loading features.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LoadStats {
    pub clamped_boxes: usize,
}

/// Region proposals on the sampled frames of one video.
///
/// Stored values are rounded through `f32` on construction, so writing and
/// reading back a `VideoFeatures` reproduces it exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoFeatures {
    video_id: String,
    frame_width: f64,
    frame_height: f64,
    total_frames: usize,
    sampled_frames: Vec<usize>,
    regions_per_frame: usize,
    appearance_dim: usize,
    regions: Vec<RegionProposal>,
}

fn q(v: f64) -> f64 {
    v as f32 as f64
}

impl VideoFeatures {
    /// Validates and builds; boxes sticking out of the frame are clamped and
    /// counted in the returned stats.
    pub fn new(
        video_id: impl Into<String>,
        frame_width: f64,
        frame_height: f64,
        total_frames: usize,
        sampled_frames: Vec<usize>,
        frames: Vec<Vec<RegionProposal>>,
    ) -> Result<(Self, LoadStats), DataError> {
        let (w, h) = (q(frame_width), q(frame_height));
        if !(w.is_finite() && h.is_finite() && w > 0.0 && h > 0.0) {
            return Err(DataError::Domain(format!(
                "frame size must be positive, got {frame_width}x{frame_height}"
            )));
        }
        if sampled_frames.is_empty() {
            return Err(DataError::Format("video has no sampled frames".into()));
        }
        if frames.len() != sampled_frames.len() {
            return Err(DataError::Format(format!(
                "{} frames of regions for {} sampled indices",
                frames.len(),
                sampled_frames.len()
            )));
        }
        for pair in sampled_frames.windows(2) {
            if pair[0] >= pair[1] {
                return Err(DataError::Format(format!(
                    "sampled frame indices not strictly increasing at {} -> {}",
                    pair[0], pair[1]
                )));
            }
        }
        if let Some(&last) = sampled_frames.last() {
            if last >= total_frames {
                return Err(DataError::Format(format!(
                    "sampled frame {last} outside video of {total_frames} frames"
                )));
            }
        }
        let m = frames[0].len();
        if m == 0 {
            return Err(DataError::Format("frame has no regions".into()));
        }
        let d = frames[0][0].appearance.len();
        let mut stats = LoadStats::default();
        let mut regions = Vec::with_capacity(frames.len() * m);
        for (i, frame) in frames.into_iter().enumerate() {
            if frame.len() != m {
                return Err(DataError::Format(format!(
                    "frame {i} has {} regions, expected {m}",
                    frame.len()
                )));
            }
            for r in frame {
                if r.appearance.len() != d {
                    return Err(DataError::Format(format!(
                        "appearance of dimension {} in frame {i}, expected {d}",
                        r.appearance.len()
                    )));
                }
                if r.appearance.iter().any(|v| !v.is_finite()) {
                    return Err(DataError::Format(format!(
                        "non-finite appearance in frame {i}"
                    )));
                }
                let b =
                    BBox::new(r.bbox.x_min, r.bbox.y_min, r.bbox.x_max, r.bbox.y_max)?.quantized();
                let (clamped, moved) = b.clamp_to(w, h);
                if moved {
                    stats.clamped_boxes += 1;
                }
                regions.push(RegionProposal {
                    bbox: clamped,
                    appearance: r.appearance.into_iter().map(q).collect(),
                });
            }
        }
        if stats.clamped_boxes > 0 {
            log::warn!("clamped {} boxes to the frame", stats.clamped_boxes);
        }
        Ok((
            Self {
                video_id: video_id.into(),
                frame_width: w,
                frame_height: h,
                total_frames,
                sampled_frames,
                regions_per_frame: m,
                appearance_dim: d,
                regions,
            },
            stats,
        ))
    }

    pub fn video_id(&self) -> &str {
        &self.video_id
    }

    pub fn set_video_id(&mut self, id: impl Into<String>) {
        self.video_id = id.into();
    }

    pub fn frame_width(&self) -> f64 {
        self.frame_width
    }

    pub fn frame_height(&self) -> f64 {
        self.frame_height
    }

    pub fn total_frames(&self) -> usize {
        self.total_frames
    }

    pub fn sampled_frames(&self) -> &[usize] {
        &self.sampled_frames
    }

    pub fn num_frames(&self) -> usize {
        self.sampled_frames.len()
    }

    pub fn regions_per_frame(&self) -> usize {
        self.regions_per_frame
    }

    pub fn appearance_dim(&self) -> usize {
        self.appearance_dim
    }

    pub fn frame_regions(&self, frame: usize) -> &[RegionProposal] {
        let m = self.regions_per_frame;
        &self.regions[frame * m..(frame + 1) * m]
    }

    pub fn region(&self, frame: usize, slot: usize) -> &RegionProposal {
        &self.regions[frame * self.regions_per_frame + slot]
    }

    /// Row-major `[N*M x d_app]` appearance matrix.
    pub fn appearance_matrix(&self) -> Vec<f64> {
        self.regions
            .iter()
            .flat_map(|r| r.appearance.iter().copied())
            .collect()
    }

    /// Row-major `[N*M x 5]` box geometry features.
    pub fn geometry_matrix(&self) -> Vec<f64> {
        self.regions
            .iter()
            .flat_map(|r| {
                geometry_feature(&r.bbox, self.frame_width, self.frame_height)
                    .expect("frame size validated")
            })
            .collect()
    }
}

pub fn encode_video_features(v: &VideoFeatures) -> Vec<u8> {
    let rec = 16 + 4 * v.appearance_dim;
    let mut out = Vec::with_capacity(HEADER_BYTES + 4 * v.num_frames() + v.regions.len() * rec);
    out.extend_from_slice(FEATURES_MAGIC);
    for x in [
        FEATURES_VERSION,
        v.num_frames() as u32,
        v.regions_per_frame as u32,
        v.appearance_dim as u32,
    ] {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out.extend_from_slice(&(v.frame_width as f32).to_le_bytes());
    out.extend_from_slice(&(v.frame_height as f32).to_le_bytes());
    out.extend_from_slice(&(v.total_frames as u32).to_le_bytes());
    for &i in &v.sampled_frames {
        out.extend_from_slice(&(i as u32).to_le_bytes());
    }
    for r in &v.regions {
        for c in r.bbox.coords() {
            out.extend_from_slice(&(c as f32).to_le_bytes());
        }
        for &a in &r.appearance {
            out.extend_from_slice(&(a as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn u32(&mut self) -> u32 {
        let v = u32::from_le_bytes(self.bytes[self.pos..self.pos + 4].try_into().unwrap());
        self.pos += 4;
        v
    }

    fn f32(&mut self) -> f64 {
        let v = f32::from_le_bytes(self.bytes[self.pos..self.pos + 4].try_into().unwrap());
        self.pos += 4;
        v as f64
    }
}

pub fn decode_video_features(
    bytes: &[u8],
    video_id: &str,
) -> Result<(VideoFeatures, LoadStats), DataError> {
    if bytes.len() < HEADER_BYTES {
        return Err(DataError::Truncated {
            expected: HEADER_BYTES,
            actual: bytes.len(),
        });
    }
    if &bytes[..4] != FEATURES_MAGIC {
        return Err(DataError::Format(format!(
            "bad magic {:?}, expected VRGV",
            &bytes[..4]
        )));
    }
    let mut r = Reader { bytes, pos: 4 };
    let version = r.u32();
    if version != FEATURES_VERSION {
        return Err(DataError::Format(format!(
            "unsupported feature version {version}, expected {FEATURES_VERSION}"
        )));
    }
    let n = r.u32() as usize;
    let m = r.u32() as usize;
    let d = r.u32() as usize;
    let w = r.f32();
    let h = r.f32();
    let total = r.u32() as usize;
    if n == 0 || m == 0 {
        return Err(DataError::Format(format!("header declares N={n}, M={m}")));
    }
    let expected = HEADER_BYTES + 4 * n + n * m * (16 + 4 * d);
    if bytes.len() < expected {
        return Err(DataError::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(DataError::Format(format!(
            "{} trailing bytes after {expected}-byte payload",
            bytes.len() - expected
        )));
    }
    let sampled: Vec<usize> = (0..n).map(|_| r.u32() as usize).collect();
    let mut frames = Vec::with_capacity(n);
    for _ in 0..n {
        let mut frame = Vec::with_capacity(m);
        for _ in 0..m {
            let c = [r.f32(), r.f32(), r.f32(), r.f32()];
            let bbox = BBox::from_coords(c)?;
            let appearance = (0..d).map(|_| r.f32()).collect();
            frame.push(RegionProposal { bbox, appearance });
        }
        frames.push(frame);
    }
    VideoFeatures::new(video_id, w, h, total, sampled, frames)
}

/// Reads a feature file; the video id defaults to the file stem.
pub fn load_video_features(path: &Path) -> Result<(VideoFeatures, LoadStats), DataError> {
    let bytes = fs::read(path).map_err(|e| DataError::io(path, e))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    decode_video_features(&bytes, &id).map_err(|e| match e {
        DataError::Io { .. } => e,
        other => DataError::Format(format!("{}: {other}", path.display())),
    })
}

pub fn save_video_features(path: &Path, v: &VideoFeatures) -> Result<(), DataError> {
    fs::write(path, encode_video_features(v)).map_err(|e| DataError::io(path, e))
}
