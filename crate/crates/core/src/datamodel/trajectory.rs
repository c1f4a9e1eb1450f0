use super::{BBox, DataError};

/// Boxes for one entity over a contiguous span of original frames.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    start_frame: usize,
    boxes: Vec<BBox>,
}

impl Trajectory {
    pub fn new(start_frame: usize, boxes: Vec<BBox>) -> Result<Self, DataError> {
        if boxes.is_empty() {
            return Err(DataError::Domain(
                "trajectory needs at least one box".into(),
            ));
        }
        Ok(Self { start_frame, boxes })
    }

    pub fn start_frame(&self) -> usize {
        self.start_frame
    }

    /// Inclusive last frame.
    pub fn end_frame(&self) -> usize {
        self.start_frame + self.boxes.len() - 1
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn boxes(&self) -> &[BBox] {
        &self.boxes
    }

    pub fn box_at(&self, frame: usize) -> Option<&BBox> {
        frame
            .checked_sub(self.start_frame)
            .and_then(|i| self.boxes.get(i))
    }

    /// Frames `[start, end]` of this trajectory, or `None` if out of span.
    pub fn slice(&self, start: usize, end: usize) -> Option<Self> {
        if start < self.start_frame || end > self.end_frame() || start > end {
            return None;
        }
        let a = start - self.start_frame;
        let b = end - self.start_frame;
        Some(Self {
            start_frame: start,
            boxes: self.boxes[a..=b].to_vec(),
        })
    }
}
