//! Per-patch detections to a deduplicated map-frame list: drop boxes near
//! patch edges, lift the rest into projected meters, then greedy NMS.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bbox::{BBox, BoxIndex};
use crate::catalog::{Catalog, CatalogCrater};
use crate::detector::{Detection, DetectionMap};
use crate::error::{Error, Result};
use crate::geo::{meter_to_lonlat, pixel_point_to_meter, PatchFrame};
use crate::raster::{GeoTransform, PatchId, PatchPlacement};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BoundaryFilterConfig {
    /// Boxes this many resized pixels or closer to a patch edge are removed.
    pub m: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NmsConfig {
    pub delta: f64,
    pub enabled: bool,
}

impl NmsConfig {
    pub fn threshold(delta: f64) -> Self {
        NmsConfig {
            delta,
            enabled: true,
        }
    }

    pub fn disabled() -> Self {
        NmsConfig {
            delta: 1.0,
            enabled: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if (0.0..=1.0).contains(&self.delta) {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "NMS threshold must lie in [0, 1], got {}",
                self.delta
            )))
        }
    }
}

/// Which raw detection a global box came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub patch_id: PatchId,
    /// Position in that patch's detection list.
    pub index: u32,
    pub pixel_box: BBox,
}

/// Detection in projected meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlobalDetection {
    pub bbox: BBox,
    pub score: f64,
    pub provenance: Provenance,
}

pub type PatchIndex = BTreeMap<PatchId, PatchPlacement>;

pub fn patch_index<'a>(placements: impl IntoIterator<Item = &'a PatchPlacement>) -> PatchIndex {
    placements.into_iter().map(|p| (p.id, *p)).collect()
}

/// Keeps detections whose distance to every edge of a `ps_r` patch exceeds `m`.
pub fn remove_boundary(
    dets: &[Detection],
    ps_r: usize,
    cfg: &BoundaryFilterConfig,
) -> Vec<Detection> {
    keep_interior(dets, ps_r, cfg).map(|(_, d)| *d).collect()
}

fn keep_interior<'a>(
    dets: &'a [Detection],
    ps_r: usize,
    cfg: &BoundaryFilterConfig,
) -> impl Iterator<Item = (usize, &'a Detection)> + 'a {
    let (side, m) = (ps_r as f64, f64::from(cfg.m));
    dets.iter()
        .enumerate()
        .filter(move |(_, d)| d.edge_distance(side) > m)
}

fn lift(i: usize, d: &Detection, p: &PatchPlacement, gt: &GeoTransform) -> Result<GlobalDetection> {
    let frame = PatchFrame::from(p);
    let a = pixel_point_to_meter(d.bbox.x1, d.bbox.y1, gt, &frame);
    let b = pixel_point_to_meter(d.bbox.x2, d.bbox.y2, gt, &frame);
    Ok(GlobalDetection {
        bbox: BBox::from_corners(a, b)?,
        score: d.score,
        provenance: Provenance {
            patch_id: d.patch_id,
            index: i as u32,
            pixel_box: d.bbox,
        },
    })
}

/// Maps each pixel box corner into meters. The y axis flips, so corners are
/// re-sorted to keep `y1 < y2`.
pub fn globalize(
    dets: &[Detection],
    index: &PatchIndex,
    gt: &GeoTransform,
) -> Result<Vec<GlobalDetection>> {
    dets.iter()
        .enumerate()
        .map(|(i, d)| {
            let p = index
                .get(&d.patch_id)
                .ok_or(Error::UnknownPatch(d.patch_id.0))?;
            lift(i, d, p, gt)
        })
        .collect()
}

/// Processing order: score descending, then smaller x1, smaller y1, then
/// provenance (patch id, index).
fn priority(a: &GlobalDetection, b: &GlobalDetection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.bbox.x1.total_cmp(&b.bbox.x1))
        .then(a.bbox.y1.total_cmp(&b.bbox.y1))
        .then(a.provenance.patch_id.cmp(&b.provenance.patch_id))
        .then(a.provenance.index.cmp(&b.provenance.index))
}

/// Greedy NMS: walk boxes by [`priority`], keep a box unless its IOU with an
/// already kept box is at least `delta`. Survivors come back in selection
/// order; a disabled config returns the input as is.
pub fn nms(dets: &[GlobalDetection], cfg: &NmsConfig) -> Vec<GlobalDetection> {
    if !cfg.enabled {
        return dets.to_vec();
    }
    let mut order: Vec<&GlobalDetection> = dets.iter().collect();
    order.sort_by(|a, b| priority(a, b));

    // IOU >= 0 holds for every pair, so only the top box can survive.
    if cfg.delta <= 0.0 {
        return order.first().map(|d| vec![**d]).unwrap_or_default();
    }

    let boxes: Vec<BBox> = dets.iter().map(|d| d.bbox).collect();
    let mut kept = BoxIndex::new(BoxIndex::suggested_cell(&boxes));
    let mut out = Vec::new();
    for d in order {
        let suppressed = kept
            .candidates(&d.bbox)
            .any(|id| kept.get(id).iou(&d.bbox) >= cfg.delta);
        if !suppressed {
            kept.insert(d.bbox);
            out.push(*d);
        }
    }
    out
}

/// Boundary removal per patch, globalization, then NMS over the merged list.
pub fn run_pipeline(
    per_patch: &DetectionMap,
    index: &PatchIndex,
    gt: &GeoTransform,
    bcfg: &BoundaryFilterConfig,
    ncfg: &NmsConfig,
) -> Result<Vec<GlobalDetection>> {
    ncfg.validate()?;
    let lifted: Vec<Vec<GlobalDetection>> = per_patch
        .par_iter()
        .map(|(id, dets)| {
            let p = index.get(id).ok_or(Error::UnknownPatch(id.0))?;
            keep_interior(dets, p.ps_r, bcfg)
                .map(|(i, d)| {
                    if d.patch_id != *id {
                        return Err(Error::invalid(format!(
                            "detection tagged patch {} filed under patch {id}",
                            d.patch_id
                        )));
                    }
                    lift(i, d, p, gt)
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let merged: Vec<GlobalDetection> = lifted.into_iter().flatten().collect();
    Ok(nms(&merged, ncfg))
}

/// Writes `id,x1,y1,x2,y2,score,patch_id,px1,py1,px2,py2`; `id` is the row position.
pub fn write_global_detections(dets: &[GlobalDetection], path: &Path) -> Result<()> {
    let io = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record([
        "id", "x1", "y1", "x2", "y2", "score", "patch_id", "px1", "py1", "px2", "py2",
    ])
    .map_err(io)?;
    for (i, d) in dets.iter().enumerate() {
        let (b, p) = (&d.bbox, &d.provenance.pixel_box);
        w.write_record([
            i.to_string(),
            b.x1.to_string(),
            b.y1.to_string(),
            b.x2.to_string(),
            b.y2.to_string(),
            d.score.to_string(),
            d.provenance.patch_id.to_string(),
            p.x1.to_string(),
            p.y1.to_string(),
            p.x2.to_string(),
            p.y2.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Catalog view of global detections: box center to lon/lat, mean box side
/// as diameter. Ids are row positions.
pub fn to_catalog(dets: &[GlobalDetection], gt: &GeoTransform, name: &str) -> Result<Catalog> {
    let craters = dets
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let (cx, cy) = d.bbox.center();
            let (lon, lat) = meter_to_lonlat(cx, cy, gt);
            CatalogCrater {
                id: i.to_string(),
                lon,
                lat,
                diam_km: d.bbox.mean_side() / 1000.0,
            }
        })
        .collect();
    Catalog::new(name, craters, "detections")
}
