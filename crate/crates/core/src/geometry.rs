//! Axis-aligned box arithmetic in pixel units.

use serde::{Deserialize, Serialize};

/// Box stored as top-left corner plus width and height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

/// Box stored as two opposite corners, `(x1, y1)` top-left and `(x2, y2)` bottom-right.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CornerBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BoundingBox {
    pub const fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// `w >= 0`, `h >= 0` and every field finite.
    pub fn is_valid(&self) -> bool {
        [self.x, self.y, self.w, self.h].iter().all(|v| v.is_finite()) && self.w >= 0.0 && self.h >= 0.0
    }

    pub fn to_corners(&self) -> CornerBox {
        xywh_to_corners(*self)
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        Self::new(self.x + dx, self.y + dy, self.w, self.h)
    }
}

impl CornerBox {
    pub const fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { x1, y1, x2, y2 }
    }

    pub fn is_valid(&self) -> bool {
        [self.x1, self.y1, self.x2, self.y2].iter().all(|v| v.is_finite())
            && self.x2 >= self.x1
            && self.y2 >= self.y1
    }

    pub fn to_xywh(&self) -> BoundingBox {
        corners_to_xywh(*self)
    }
}

pub fn corners_to_xywh(c: CornerBox) -> BoundingBox {
    BoundingBox::new(c.x1, c.y1, c.x2 - c.x1, c.y2 - c.y1)
}

pub fn xywh_to_corners(b: BoundingBox) -> CornerBox {
    CornerBox::new(b.x, b.y, b.x + b.w, b.y + b.h)
}

/// Intersection over union. Two zero-area boxes never overlap: the result is 0.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = (a.x + a.w).min(b.x + b.w) - a.x.max(b.x);
    let ih = (a.y + a.h).min(b.y + b.h) - a.y.max(b.y);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizeClass {
    Small,
    Medium,
    Large,
}

impl SizeClass {
    pub const ALL: [SizeClass; 3] = [SizeClass::Small, SizeClass::Medium, SizeClass::Large];

    pub fn as_str(&self) -> &'static str {
        match self {
            SizeClass::Small => "small",
            SizeClass::Medium => "medium",
            SizeClass::Large => "large",
        }
    }
}

/// Area cutoffs for the size strata; half-open intervals `[0, small)`, `[small, medium)`, `[medium, inf)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeThresholds {
    pub small: f64,
    pub medium: f64,
}

impl Default for SizeThresholds {
    fn default() -> Self {
        Self {
            small: 32.0 * 32.0,
            medium: 96.0 * 96.0,
        }
    }
}

impl SizeThresholds {
    pub fn classify(&self, area: f64) -> SizeClass {
        if area < self.small {
            SizeClass::Small
        } else if area < self.medium {
            SizeClass::Medium
        } else {
            SizeClass::Large
        }
    }
}

pub fn size_class(b: &BoundingBox) -> SizeClass {
    SizeThresholds::default().classify(b.area())
}
