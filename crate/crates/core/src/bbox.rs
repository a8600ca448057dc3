//! Axis-aligned boxes and a uniform-grid spatial index over them.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box with `x1 < x2` and `y1 < y2`. The unit depends on the
/// frame: resized-patch pixels for raw detections, projected meters after
/// globalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let b = BBox { x1, y1, x2, y2 };
        if b.is_valid() {
            Ok(b)
        } else {
            Err(Error::DegenerateBox { x1, y1, x2, y2 })
        }
    }

    /// Builds the box spanned by two corners in any order.
    pub fn from_corners(a: (f64, f64), b: (f64, f64)) -> Result<Self> {
        BBox::new(a.0.min(b.0), a.1.min(b.1), a.0.max(b.0), a.1.max(b.1))
    }

    /// Square of half-side `r` around `(cx, cy)`.
    pub fn square(cx: f64, cy: f64, r: f64) -> Result<Self> {
        BBox::new(cx - r, cy - r, cx + r, cy + r)
    }

    pub fn is_valid(&self) -> bool {
        [self.x1, self.y1, self.x2, self.y2]
            .iter()
            .all(|v| v.is_finite())
            && self.x1 < self.x2
            && self.y1 < self.y2
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))
    }

    /// Mean of width and height.
    pub fn mean_side(&self) -> f64 {
        0.5 * (self.width() + self.height())
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.x2.min(other.x2) - self.x1.max(other.x1);
        let h = self.y2.min(other.y2) - self.y1.max(other.y1);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    /// True when the two boxes share a region of positive area.
    pub fn intersects(&self, other: &BBox) -> bool {
        self.x1 < other.x2 && other.x1 < self.x2 && self.y1 < other.y2 && other.y1 < self.y2
    }

    /// Intersection over union. Returns 0 when the union is empty, so callers
    /// that need the degenerate-box error should go through [`crate::eval::iou`].
    pub fn iou(&self, other: &BBox) -> f64 {
        let inter = self.intersection_area(other);
        if inter <= 0.0 {
            return 0.0;
        }
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    /// Intersection with `[lo, hi]²`, or `None` when nothing of positive area remains.
    pub fn clip(&self, lo: f64, hi: f64) -> Option<BBox> {
        let b = BBox {
            x1: self.x1.clamp(lo, hi),
            y1: self.y1.clamp(lo, hi),
            x2: self.x2.clamp(lo, hi),
            y2: self.y2.clamp(lo, hi),
        };
        b.is_valid().then_some(b)
    }
}

/// Uniform grid bucketing box ids by the cells they cover. Queries return a
/// superset of the boxes that intersect the probe; ids may repeat.
#[derive(Debug, Clone)]
pub struct BoxIndex {
    cell: f64,
    boxes: Vec<BBox>,
    buckets: HashMap<(i64, i64), Vec<usize>>,
}

impl BoxIndex {
    pub fn new(cell: f64) -> Self {
        let cell = if cell.is_finite() && cell > 0.0 {
            cell
        } else {
            1.0
        };
        BoxIndex {
            cell,
            boxes: Vec::new(),
            buckets: HashMap::new(),
        }
    }

    /// Index sized to the mean side of `boxes`, with every box inserted.
    pub fn build(boxes: &[BBox]) -> Self {
        let mut index = BoxIndex::new(Self::suggested_cell(boxes));
        for b in boxes {
            index.insert(*b);
        }
        index
    }

    pub fn suggested_cell(boxes: &[BBox]) -> f64 {
        if boxes.is_empty() {
            return 1.0;
        }
        boxes.iter().map(BBox::mean_side).sum::<f64>() / boxes.len() as f64
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn get(&self, id: usize) -> &BBox {
        &self.boxes[id]
    }

    /// Inserts a box and returns its id (insertion order).
    pub fn insert(&mut self, b: BBox) -> usize {
        let id = self.boxes.len();
        let (c0, r0, c1, r1) = self.cell_range(&b);
        for r in r0..=r1 {
            for c in c0..=c1 {
                self.buckets.entry((c, r)).or_default().push(id);
            }
        }
        self.boxes.push(b);
        id
    }

    pub fn candidates<'a>(&'a self, probe: &BBox) -> impl Iterator<Item = usize> + 'a {
        let (c0, r0, c1, r1) = self.cell_range(probe);
        (r0..=r1)
            .flat_map(move |r| (c0..=c1).map(move |c| (c, r)))
            .filter_map(move |key| self.buckets.get(&key))
            .flatten()
            .copied()
    }

    /// Largest IOU between `probe` and any indexed box, `None` if the index is empty.
    pub fn max_iou(&self, probe: &BBox) -> Option<f64> {
        if self.boxes.is_empty() {
            return None;
        }
        Some(
            self.candidates(probe)
                .map(|id| probe.iou(&self.boxes[id]))
                .fold(0.0, f64::max),
        )
    }

    fn cell_range(&self, b: &BBox) -> (i64, i64, i64, i64) {
        let f = |v: f64| (v / self.cell).floor() as i64;
        (f(b.x1), f(b.y1), f(b.x2), f(b.y2))
    }
}
