use serde::{Deserialize, Serialize};

/// Axis-aligned pixel rectangle. Covers columns `x..x + w` and rows `y..y + h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Rect {
    pub const fn new(x: usize, y: usize, w: usize, h: usize) -> Self {
        Rect { x, y, w, h }
    }

    pub fn x_end(&self) -> usize {
        self.x + self.w
    }

    pub fn y_end(&self) -> usize {
        self.y + self.h
    }

    pub fn area(&self) -> usize {
        self.w * self.h
    }

    pub fn is_empty(&self) -> bool {
        self.w == 0 || self.h == 0
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x && x < self.x_end() && y >= self.y && y < self.y_end()
    }

    /// Overlap of the two rectangles, `None` unless it has positive area.
    pub fn intersection(&self, other: &Rect) -> Option<Rect> {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = self.x_end().min(other.x_end());
        let y1 = self.y_end().min(other.y_end());
        (x1 > x0 && y1 > y0).then(|| Rect::new(x0, y0, x1 - x0, y1 - y0))
    }

    pub fn intersects(&self, other: &Rect) -> bool {
        self.intersection(other).is_some()
    }

    pub fn within(&self, width: usize, height: usize) -> bool {
        self.x_end() <= width && self.y_end() <= height
    }

    /// Snap a real-valued box outward to whole pixels and clamp it to the canvas.
    /// Returns `None` when nothing of positive area is left.
    pub fn from_f64_clamped(
        x: f64,
        y: f64,
        w: f64,
        h: f64,
        width: usize,
        height: usize,
    ) -> Option<Rect> {
        if !(x.is_finite() && y.is_finite() && w.is_finite() && h.is_finite())
            || w <= 0.0
            || h <= 0.0
        {
            return None;
        }
        let clamp = |v: f64, hi: usize| v.max(0.0).min(hi as f64) as usize;
        let x0 = clamp(x.floor(), width);
        let y0 = clamp(y.floor(), height);
        let x1 = clamp((x + w).ceil(), width);
        let y1 = clamp((y + h).ceil(), height);
        (x1 > x0 && y1 > y0).then(|| Rect::new(x0, y0, x1 - x0, y1 - y0))
    }
}
