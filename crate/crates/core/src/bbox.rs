use serde::{Deserialize, Serialize};

/// Axis-aligned box in center form, pixel units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub score: f64,
}

impl BBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        BBox {
            cx,
            cy,
            w,
            h,
            score: 1.0,
        }
    }

    pub fn with_score(self, score: f64) -> Self {
        BBox { score, ..self }
    }

    /// From MOTChallenge top-left form.
    pub fn from_tlwh(left: f64, top: f64, w: f64, h: f64) -> Self {
        BBox::new(left + w / 2.0, top + h / 2.0, w, h)
    }

    pub fn left(&self) -> f64 {
        self.cx - self.w / 2.0
    }

    pub fn top(&self) -> f64 {
        self.cy - self.h / 2.0
    }

    pub fn right(&self) -> f64 {
        self.cx + self.w / 2.0
    }

    pub fn bottom(&self) -> f64 {
        self.cy + self.h / 2.0
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn center_distance(&self, other: &BBox) -> f64 {
        (self.cx - other.cx).hypot(self.cy - other.cy)
    }

    pub fn is_valid(&self) -> bool {
        self.w > 0.0 && self.h > 0.0 && self.cx.is_finite() && self.cy.is_finite() && (0.0..=1.0).contains(&self.score)
    }
}
