//! Detection contract consumed by the pipeline, with a synthetic oracle
//! that projects known craters into patches and a reader for detections
//! produced elsewhere.
//!
//! Detection files are comma-separated with the header
//! `patch_id,x1,y1,x2,y2,score`; coordinates are resized-patch pixels and
//! the score is a probability written as decimal text.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bbox::{BBox, BoxIndex};
use crate::catalog::{to_boxes, Catalog};
use crate::error::{Error, Result};
use crate::geo::{meter_point_to_pixel, PatchFrame};
use crate::raster::{ChannelLayout, FusedPatch, GeoTransform, PatchId, PatchPlacement};

/// Scored box in the resized frame of one patch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub patch_id: PatchId,
    pub bbox: BBox,
    pub score: f64,
}

impl Detection {
    pub fn new(patch_id: PatchId, bbox: BBox, score: f64) -> Result<Self> {
        if !bbox.is_valid() {
            return Err(Error::DegenerateBox {
                x1: bbox.x1,
                y1: bbox.y1,
                x2: bbox.x2,
                y2: bbox.y2,
            });
        }
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::invalid(format!("score {score} outside [0, 1]")));
        }
        Ok(Detection {
            patch_id,
            bbox,
            score,
        })
    }

    /// Smallest gap between the box and the edges of a `side`-pixel patch.
    pub fn edge_distance(&self, side: f64) -> f64 {
        let b = &self.bbox;
        b.x1.min(b.y1).min(side - b.x2).min(side - b.y2)
    }
}

pub type DetectionMap = BTreeMap<PatchId, Vec<Detection>>;

/// Channel layouts a detector can consume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Capability {
    Any,
    FusedOnly,
}

impl Capability {
    pub fn accepts(self, layout: ChannelLayout) -> bool {
        match self {
            Capability::Any => true,
            Capability::FusedOnly => layout == ChannelLayout::Fused,
        }
    }
}

/// A crater detector applied one patch at a time. Implementations must be
/// deterministic per patch and safe to call concurrently.
pub trait Detector: Send + Sync {
    fn name(&self) -> &str;

    fn capability(&self) -> Capability;

    fn detect(&self, patch: &FusedPatch) -> Result<Vec<Detection>>;
}

fn check_capability(detector: &dyn Detector, patch: &FusedPatch) -> Result<()> {
    if detector.capability().accepts(patch.layout) {
        Ok(())
    } else {
        Err(Error::Capability {
            detector: detector.name().to_string(),
            layout: patch.layout,
        })
    }
}

/// Runs `detector` over every patch in parallel, keyed by patch id.
pub fn detect_all(detector: &dyn Detector, patches: &[FusedPatch]) -> Result<DetectionMap> {
    patches
        .par_iter()
        .map(|p| {
            check_capability(detector, p)?;
            Ok((p.id(), detector.detect(p)?))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    /// Standard deviation of the center offset, resized pixels.
    pub center_jitter_px: f64,
    /// Standard deviation of the relative radius change.
    pub radius_jitter_frac: f64,
    /// Mean number of spurious boxes per patch.
    pub false_positive_rate: f64,
    /// Probability that a crater in the patch is not reported.
    pub miss_rate: f64,
    pub seed: u64,
    /// Diameter range of spurious boxes, kilometers.
    pub spurious_diam_km: (f64, f64),
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            center_jitter_px: 0.0,
            radius_jitter_frac: 0.0,
            false_positive_rate: 0.0,
            miss_rate: 0.0,
            seed: 0,
            spurious_diam_km: (5.0, 20.0),
        }
    }
}

impl NoiseConfig {
    pub fn exact(seed: u64) -> Self {
        NoiseConfig {
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = |v: f64, name: &str| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must be >= 0, got {v}")))
            }
        };
        nonneg(self.center_jitter_px, "center_jitter_px")?;
        nonneg(self.radius_jitter_frac, "radius_jitter_frac")?;
        nonneg(self.false_positive_rate, "false_positive_rate")?;
        if !(0.0..=1.0).contains(&self.miss_rate) {
            return Err(Error::invalid(format!(
                "miss_rate must lie in [0, 1], got {}",
                self.miss_rate
            )));
        }
        let (lo, hi) = self.spurious_diam_km;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::invalid(format!(
                "spurious diameter range ({lo}, {hi}) is invalid"
            )));
        }
        Ok(())
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator for one patch; depends only on the run seed and the patch id.
pub fn patch_rng(seed: u64, patch: PatchId) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(u64::from(patch.0))))
}

/// Extent of a patch window in projected meters.
pub fn patch_window_meters(p: &PatchPlacement, gt: &GeoTransform) -> BBox {
    let s = gt.resolution;
    let side = p.ps_a as f64 * s;
    let x1 = gt.x_min + p.col0 as f64 * s;
    let y2 = gt.y_max - p.row0 as f64 * s;
    BBox {
        x1,
        y1: y2 - side,
        x2: x1 + side,
        y2,
    }
}

/// Emits what a perfect detector would see of `truth` (boxes in meters)
/// through the window of `placement`, perturbed by `noise`.
pub fn synthetic_detect_at(
    placement: &PatchPlacement,
    truth: &[BBox],
    gt: &GeoTransform,
    noise: &NoiseConfig,
) -> Vec<Detection> {
    let mut ids: Vec<usize> = (0..truth.len()).collect();
    let window = patch_window_meters(placement, gt);
    ids.retain(|&i| truth[i].intersects(&window));
    emit(placement, ids.iter().map(|&i| &truth[i]), gt, noise)
}

pub fn synthetic_detect(
    patch: &FusedPatch,
    truth: &[BBox],
    gt: &GeoTransform,
    noise: &NoiseConfig,
) -> Vec<Detection> {
    synthetic_detect_at(&patch.placement, truth, gt, noise)
}

fn emit<'a>(
    placement: &PatchPlacement,
    truth: impl Iterator<Item = &'a BBox>,
    gt: &GeoTransform,
    noise: &NoiseConfig,
) -> Vec<Detection> {
    let frame = PatchFrame::from(placement);
    let px_per_m = 1.0 / (gt.resolution * frame.delta_f);
    let side = placement.ps_r as f64;
    let mut rng = patch_rng(noise.seed, placement.id);
    let center = Normal::new(0.0, noise.center_jitter_px).expect("validated jitter");
    let radius = Normal::new(0.0, noise.radius_jitter_frac).expect("validated jitter");
    let mut out = Vec::new();

    for t in truth {
        if rng.random::<f64>() < noise.miss_rate {
            continue;
        }
        let (cx, cy) = t.center();
        let (px, py) = meter_point_to_pixel(cx, cy, gt, &frame);
        let (hx, hy) = (0.5 * t.width() * px_per_m, 0.5 * t.height() * px_per_m);
        let (dx, dy) = (center.sample(&mut rng), center.sample(&mut rng));
        let scale = (1.0 + radius.sample(&mut rng)).max(0.05);
        let score = rng.random_range(0.7..1.0);
        let (px, py) = (px + dx, py + dy);
        let raw = BBox {
            x1: px - hx * scale,
            y1: py - hy * scale,
            x2: px + hx * scale,
            y2: py + hy * scale,
        };
        if let Some(bbox) = raw.clip(0.0, side) {
            out.push(Detection {
                patch_id: placement.id,
                bbox,
                score,
            });
        }
    }

    if noise.false_positive_rate > 0.0 {
        let count = Poisson::new(noise.false_positive_rate)
            .expect("validated rate")
            .sample(&mut rng) as usize;
        let (dmin, dmax) = noise.spurious_diam_km;
        let (rmin, rmax) = (dmin * 500.0 * px_per_m, dmax * 500.0 * px_per_m);
        for _ in 0..count {
            let cx = rng.random_range(0.0..side);
            let cy = rng.random_range(0.0..side);
            let r = if rmax > rmin {
                rng.random_range(rmin..rmax)
            } else {
                rmin
            };
            let score = rng.random_range(0.3..0.9);
            let raw = BBox {
                x1: cx - r,
                y1: cy - r,
                x2: cx + r,
                y2: cy + r,
            };
            if let Some(bbox) = raw.clip(0.0, side) {
                out.push(Detection {
                    patch_id: placement.id,
                    bbox,
                    score,
                });
            }
        }
    }
    out
}

/// Oracle detector over a fixed truth set.
#[derive(Debug, Clone)]
pub struct SyntheticDetector {
    truth: Vec<BBox>,
    index: BoxIndex,
    gt: GeoTransform,
    noise: NoiseConfig,
    capability: Capability,
}

impl SyntheticDetector {
    pub fn new(truth: Vec<BBox>, gt: GeoTransform, noise: NoiseConfig) -> Result<Self> {
        noise.validate()?;
        gt.validate()?;
        let index = BoxIndex::build(&truth);
        Ok(SyntheticDetector {
            truth,
            index,
            gt,
            noise,
            capability: Capability::Any,
        })
    }

    pub fn from_catalog(cat: &Catalog, gt: GeoTransform, noise: NoiseConfig) -> Result<Self> {
        SyntheticDetector::new(to_boxes(cat, &gt)?, gt, noise)
    }

    pub fn with_capability(mut self, capability: Capability) -> Self {
        self.capability = capability;
        self
    }

    pub fn detect_at(&self, placement: &PatchPlacement) -> Vec<Detection> {
        let window = patch_window_meters(placement, &self.gt);
        let mut ids: Vec<usize> = self
            .index
            .candidates(&window)
            .filter(|&i| self.truth[i].intersects(&window))
            .collect();
        ids.sort_unstable();
        ids.dedup();
        emit(
            placement,
            ids.iter().map(|&i| &self.truth[i]),
            &self.gt,
            &self.noise,
        )
    }
}

impl Detector for SyntheticDetector {
    fn name(&self) -> &str {
        "synthetic"
    }

    fn capability(&self) -> Capability {
        self.capability
    }

    fn detect(&self, patch: &FusedPatch) -> Result<Vec<Detection>> {
        check_capability(self, patch)?;
        Ok(self.detect_at(&patch.placement))
    }
}

/// Serves detections loaded from a file; patches absent from it get none.
#[derive(Debug, Clone, Default)]
pub struct PrecomputedDetector {
    by_patch: DetectionMap,
}

impl PrecomputedDetector {
    pub fn new(by_patch: DetectionMap) -> Self {
        PrecomputedDetector { by_patch }
    }
}

impl Detector for PrecomputedDetector {
    fn name(&self) -> &str {
        "external"
    }

    fn capability(&self) -> Capability {
        Capability::Any
    }

    fn detect(&self, patch: &FusedPatch) -> Result<Vec<Detection>> {
        Ok(self.by_patch.get(&patch.id()).cloned().unwrap_or_default())
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct DetectionLoadOptions {
    /// Records scoring below this are dropped.
    pub score_floor: Option<f64>,
    /// When set, coordinates must lie in `[0, patch_side]`.
    pub patch_side: Option<f64>,
}

#[derive(Debug, Deserialize)]
struct DetectionRecord {
    patch_id: u32,
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
    score: f64,
}

pub fn load_detections(path: &Path, opts: &DetectionLoadOptions) -> Result<DetectionMap> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Record {
            path: path.to_path_buf(),
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let mut out = DetectionMap::new();
    for raw in reader.records() {
        let record_err = |e: csv::Error| Error::Record {
            path: path.to_path_buf(),
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        };
        let raw = raw.map_err(record_err)?;
        let line = raw.position().map_or(0, |p| p.line());
        let bad = |message: String| Error::Record {
            path: path.to_path_buf(),
            line,
            message,
        };
        let rec: DetectionRecord = raw
            .deserialize(Some(&headers))
            .map_err(|e| bad(e.to_string()))?;
        if !(rec.x1 < rec.x2 && rec.y1 < rec.y2) {
            return Err(bad(format!(
                "box ({}, {}, {}, {}) needs x1 < x2 and y1 < y2",
                rec.x1, rec.y1, rec.x2, rec.y2
            )));
        }
        if let Some(side) = opts.patch_side {
            if [rec.x1, rec.y1, rec.x2, rec.y2]
                .iter()
                .any(|&v| !(0.0..=side).contains(&v))
            {
                return Err(bad(format!("box leaves the [0, {side}] patch frame")));
            }
        }
        let det = Detection::new(
            PatchId(rec.patch_id),
            BBox {
                x1: rec.x1,
                y1: rec.y1,
                x2: rec.x2,
                y2: rec.y2,
            },
            rec.score,
        )
        .map_err(|e| bad(e.to_string()))?;
        if opts.score_floor.is_some_and(|floor| det.score < floor) {
            continue;
        }
        out.entry(det.patch_id).or_default().push(det);
    }
    Ok(out)
}

pub fn write_detections(dets: &DetectionMap, path: &Path) -> Result<()> {
    let io = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(["patch_id", "x1", "y1", "x2", "y2", "score"])
        .map_err(io)?;
    for d in dets.values().flatten() {
        let b = &d.bbox;
        w.write_record([
            d.patch_id.to_string(),
            b.x1.to_string(),
            b.y1.to_string(),
            b.x2.to_string(),
            b.y2.to_string(),
            d.score.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
