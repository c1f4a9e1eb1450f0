use super::DataError;

/// Axis-aligned box in pixel coordinates, top-left to bottom-right.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, DataError> {
        let b = Self {
            x_min,
            y_min,
            x_max,
            y_max,
        };
        if ![x_min, y_min, x_max, y_max].iter().all(|v| v.is_finite())
            || x_min > x_max
            || y_min > y_max
        {
            return Err(DataError::InvalidBox(format!("{b:?}")));
        }
        Ok(b)
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (self.x_min + self.x_max),
            0.5 * (self.y_min + self.y_max),
        )
    }

    pub fn coords(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    pub fn from_coords(c: [f64; 4]) -> Result<Self, DataError> {
        Self::new(c[0], c[1], c[2], c[3])
    }

    /// Clamps into `[0, width] x [0, height]`; reports whether anything moved.
    pub fn clamp_to(&self, width: f64, height: f64) -> (Self, bool) {
        let c = Self {
            x_min: self.x_min.clamp(0.0, width),
            y_min: self.y_min.clamp(0.0, height),
            x_max: self.x_max.clamp(0.0, width),
            y_max: self.y_max.clamp(0.0, height),
        };
        (c, c != *self)
    }

    /// Coordinates rounded through `f32`, the precision of the feature files.
    pub fn quantized(&self) -> Self {
        let q = |v: f64| v as f32 as f64;
        Self {
            x_min: q(self.x_min),
            y_min: q(self.y_min),
            x_max: q(self.x_max),
            y_max: q(self.y_max),
        }
    }
}

/// Relative location and size of a box: normalized corners and area fraction.
pub fn geometry_feature(
    b: &BBox,
    frame_width: f64,
    frame_height: f64,
) -> Result<[f64; 5], DataError> {
    if !(frame_width > 0.0 && frame_height > 0.0) {
        return Err(DataError::Domain(format!(
            "frame dimensions must be positive, got {frame_width}x{frame_height}"
        )));
    }
    Ok([
        b.x_min / frame_width,
        b.y_min / frame_height,
        b.x_max / frame_width,
        b.y_max / frame_height,
        b.area() / (frame_width * frame_height),
    ])
}

/// Intersection over union; zero when the union is empty.
pub fn spatial_iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let ih = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}
