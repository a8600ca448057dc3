//! Set-level detection metrics against catalog boxes, the joint (m, δ) grid
//! search, localization statistics and two-catalog verification of new
//! craters.
//!
//! A detection is a true positive when its best IOU over all truth boxes is
//! at least `u`. No one-to-one assignment is made, so several detections may
//! match the same crater; `FN = |truth| - TP` is then clamped at zero.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bbox::{BBox, BoxIndex};
use crate::detector::DetectionMap;
use crate::error::{Error, Result};
use crate::postprocess::{
    run_pipeline, BoundaryFilterConfig, GlobalDetection, NmsConfig, PatchIndex,
};
use crate::raster::GeoTransform;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub u: f64,
    pub size_floor_km: Option<f64>,
    pub size_ceiling_km: Option<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            u: 0.3,
            size_floor_km: None,
            size_ceiling_km: None,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.u) {
            return Err(Error::invalid(format!(
                "u must lie in [0, 1], got {}",
                self.u
            )));
        }
        if let (Some(lo), Some(hi)) = (self.size_floor_km, self.size_ceiling_km) {
            if lo >= hi {
                return Err(Error::invalid(format!(
                    "size floor {lo} km is not below ceiling {hi} km"
                )));
            }
        }
        Ok(())
    }
}

/// IOU of two boxes; zero-area boxes are an error.
pub fn iou(a: &BBox, b: &BBox) -> Result<f64> {
    for x in [a, b] {
        if !x.is_valid() {
            return Err(Error::DegenerateBox {
                x1: x.x1,
                y1: x.y1,
                x2: x.x2,
                y2: x.y2,
            });
        }
    }
    Ok(a.iou(b))
}

/// Precision, recall and F1 from counts. A ratio with a zero denominator is
/// reported as 0 with its `*_defined` flag cleared.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub precision_defined: bool,
    pub recall_defined: bool,
    pub f1_defined: bool,
}

impl Scores {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |num: usize, den: usize| {
            if den == 0 {
                (0.0, false)
            } else {
                (num as f64 / den as f64, true)
            }
        };
        let (precision, precision_defined) = ratio(tp, tp + fp);
        let (recall, recall_defined) = ratio(tp, tp + fn_);
        let sum = precision + recall;
        let (f1, f1_defined) = if sum > 0.0 {
            (2.0 * precision * recall / sum, true)
        } else {
            (0.0, false)
        };
        Scores {
            precision,
            recall,
            f1,
            precision_defined,
            recall_defined,
            f1_defined,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tp: usize,
    pub fp: usize,
    /// `max(0, fn_raw)`.
    pub fn_: usize,
    /// `n_truth - tp`, negative when several detections hit one crater.
    pub fn_raw: i64,
    pub scores: Scores,
    pub u: f64,
    pub n_detections: usize,
    pub n_truth: usize,
}

impl MetricsReport {
    pub fn from_tp(tp: usize, n_detections: usize, n_truth: usize, u: f64) -> Self {
        let fp = n_detections - tp;
        let fn_raw = n_truth as i64 - tp as i64;
        let fn_ = fn_raw.max(0) as usize;
        MetricsReport {
            tp,
            fp,
            fn_,
            fn_raw,
            scores: Scores::from_counts(tp, fp, fn_),
            u,
            n_detections,
            n_truth,
        }
    }

    pub fn precision(&self) -> f64 {
        self.scores.precision
    }

    pub fn recall(&self) -> f64 {
        self.scores.recall
    }

    pub fn f1(&self) -> f64 {
        self.scores.f1
    }

    pub const CSV_HEADER: &'static str =
        "u,n_detections,n_truth,tp,fp,fn,fn_raw,precision,recall,f1,precision_defined,recall_defined";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.u,
            self.n_detections,
            self.n_truth,
            self.tp,
            self.fp,
            self.fn_,
            self.fn_raw,
            self.scores.precision,
            self.scores.recall,
            self.scores.f1,
            self.scores.precision_defined,
            self.scores.recall_defined
        )
    }

    pub fn summary(&self) -> String {
        let pct = |v: f64, ok: bool| {
            if ok {
                format!("{:.2}%", 100.0 * v)
            } else {
                "undefined".to_string()
            }
        };
        format!(
            "detections {}  truth {}  TP {}  FP {}  FN {}\nprecision {}  recall {}  F1 {}  (u = {})",
            self.n_detections,
            self.n_truth,
            self.tp,
            self.fp,
            self.fn_,
            pct(self.scores.precision, self.scores.precision_defined),
            pct(self.scores.recall, self.scores.recall_defined),
            pct(self.scores.f1, self.scores.f1_defined),
            self.u
        )
    }
}

fn best_ious<'a>(
    dets: impl IndexedParallelIterator<Item = &'a BBox>,
    truth: &[BBox],
) -> Vec<Option<f64>> {
    let index = BoxIndex::build(truth);
    dets.map(|b| index.max_iou(b)).collect()
}

pub fn match_boxes(dets: &[BBox], truth: &[BBox], u: f64) -> MetricsReport {
    let tp = best_ious(dets.par_iter(), truth)
        .into_iter()
        .filter(|m| m.is_some_and(|v| v >= u))
        .count();
    MetricsReport::from_tp(tp, dets.len(), truth.len(), u)
}

pub fn match_and_count(
    dets: &[GlobalDetection],
    truth: &[BBox],
    cfg: &EvalConfig,
) -> MetricsReport {
    let boxes: Vec<BBox> = dets.iter().map(|d| d.bbox).collect();
    match_boxes(&boxes, truth, cfg.u)
}

/// Equivalent diameter of a meter-frame box in kilometers.
pub fn equivalent_diameter_km(b: &BBox) -> f64 {
    b.mean_side() / 1000.0
}

/// Drops detections whose equivalent diameter is below the floor or at/above the ceiling.
pub fn size_gate(dets: &[GlobalDetection], cfg: &EvalConfig) -> Vec<GlobalDetection> {
    let lo = cfg.size_floor_km.unwrap_or(f64::NEG_INFINITY);
    let hi = cfg.size_ceiling_km.unwrap_or(f64::INFINITY);
    dets.iter()
        .filter(|d| {
            let km = equivalent_diameter_km(&d.bbox);
            km >= lo && km < hi
        })
        .copied()
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalizationReport {
    pub n_matched: usize,
    /// `None` when nothing matched.
    pub mean_iou_pct: Option<f64>,
    /// Population standard deviation.
    pub std_iou_pct: Option<f64>,
}

impl LocalizationReport {
    pub fn from_ious(ious: &[f64]) -> Self {
        if ious.is_empty() {
            return LocalizationReport {
                n_matched: 0,
                mean_iou_pct: None,
                std_iou_pct: None,
            };
        }
        let n = ious.len() as f64;
        let pct: Vec<f64> = ious.iter().map(|v| 100.0 * v).collect();
        let mean = pct.iter().sum::<f64>() / n;
        let var = pct.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        LocalizationReport {
            n_matched: ious.len(),
            mean_iou_pct: Some(mean),
            std_iou_pct: Some(var.sqrt()),
        }
    }
}

/// Percentage IOU statistics over the detections counted as true positives.
pub fn localization_stats(
    dets: &[GlobalDetection],
    truth: &[BBox],
    cfg: &EvalConfig,
) -> LocalizationReport {
    let ious: Vec<f64> = best_ious(dets.par_iter().map(|d| &d.bbox), truth)
        .into_iter()
        .flatten()
        .filter(|&v| v >= cfg.u)
        .collect();
    LocalizationReport::from_ious(&ious)
}

/// Runs post-processing with `(bcfg, ncfg)`, gates by size and scores the result.
pub fn evaluate(
    per_patch: &DetectionMap,
    index: &PatchIndex,
    gt: &GeoTransform,
    truth: &[BBox],
    bcfg: &BoundaryFilterConfig,
    ncfg: &NmsConfig,
    cfg: &EvalConfig,
) -> Result<MetricsReport> {
    let dets = run_pipeline(per_patch, index, gt, bcfg, ncfg)?;
    Ok(match_and_count(&size_gate(&dets, cfg), truth, cfg))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub m_values: Vec<u32>,
    pub deltas: Vec<f64>,
    /// Adds a column with NMS disabled.
    pub include_no_nms: bool,
}

impl Default for GridSpec {
    /// `m ∈ {0, 1, 5, 10}`, `δ ∈ {0.1, …, 0.5}` plus the no-NMS column.
    fn default() -> Self {
        GridSpec {
            m_values: vec![0, 1, 5, 10],
            deltas: vec![0.1, 0.2, 0.3, 0.4, 0.5],
            include_no_nms: true,
        }
    }
}

impl GridSpec {
    pub fn nms_options(&self) -> Vec<NmsConfig> {
        let mut v: Vec<NmsConfig> = self
            .deltas
            .iter()
            .map(|&d| NmsConfig::threshold(d))
            .collect();
        if self.include_no_nms {
            v.push(NmsConfig::disabled());
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        if self.m_values.is_empty() {
            return Err(Error::invalid("grid search needs at least one m value"));
        }
        if self.deltas.is_empty() {
            return Err(Error::invalid(
                "grid search needs at least one NMS threshold",
            ));
        }
        for &d in &self.deltas {
            NmsConfig::threshold(d).validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub m: u32,
    pub nms: NmsConfig,
    pub report: MetricsReport,
}

impl GridCell {
    fn delta_key(&self) -> f64 {
        if self.nms.enabled {
            self.nms.delta
        } else {
            f64::INFINITY
        }
    }

    pub fn delta_label(&self) -> String {
        if self.nms.enabled {
            self.nms.delta.to_string()
        } else {
            "none".to_string()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    /// Row-major over `m_values`, then thresholds with no-NMS last.
    pub cells: Vec<GridCell>,
    pub best: usize,
}

impl GridSearchResult {
    pub fn best_cell(&self) -> &GridCell {
        &self.cells[self.best]
    }

    pub fn best_m(&self) -> u32 {
        self.best_cell().m
    }

    pub fn best_nms(&self) -> NmsConfig {
        self.best_cell().nms
    }

    pub fn cell(&self, m: u32, nms: &NmsConfig) -> Option<&GridCell> {
        self.cells.iter().find(|c| c.m == m && c.nms == *nms)
    }

    pub fn to_records(&self) -> String {
        let mut s = String::from("m,delta,tp,fp,fn,precision,recall,f1\n");
        for c in &self.cells {
            let r = &c.report;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                c.m,
                c.delta_label(),
                r.tp,
                r.fp,
                r.fn_,
                r.scores.precision,
                r.scores.recall,
                r.scores.f1
            );
        }
        s
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        for c in &self.cells {
            let r = &c.report.scores;
            let _ = writeln!(
                s,
                "m={:<3} delta={:<5} P={:6.2}% R={:6.2}% F1={:6.2}%",
                c.m,
                c.delta_label(),
                100.0 * r.precision,
                100.0 * r.recall,
                100.0 * r.f1
            );
        }
        let b = self.best_cell();
        let _ = writeln!(
            s,
            "best: m={} delta={} F1={:.2}%",
            b.m,
            b.delta_label(),
            100.0 * b.report.f1()
        );
        s
    }
}

/// Index of the best cell: highest F1, ties to larger m, then smaller δ
/// (no NMS counts as the largest δ).
pub fn select_best(cells: &[GridCell]) -> Option<usize> {
    let better = |a: &GridCell, b: &GridCell| {
        a.report
            .f1()
            .total_cmp(&b.report.f1())
            .then(a.m.cmp(&b.m))
            .then(b.delta_key().total_cmp(&a.delta_key()))
    };
    (0..cells.len()).reduce(|best, i| {
        if better(&cells[i], &cells[best]).is_gt() {
            i
        } else {
            best
        }
    })
}

pub fn grid_search(
    per_patch: &DetectionMap,
    index: &PatchIndex,
    gt: &GeoTransform,
    truth: &[BBox],
    spec: &GridSpec,
    cfg: &EvalConfig,
) -> Result<GridSearchResult> {
    spec.validate()?;
    cfg.validate()?;
    let combos: Vec<(u32, NmsConfig)> = spec
        .m_values
        .iter()
        .flat_map(|&m| spec.nms_options().into_iter().map(move |n| (m, n)))
        .collect();
    let cells = combos
        .into_par_iter()
        .map(|(m, nms)| {
            let report = evaluate(
                per_patch,
                index,
                gt,
                truth,
                &BoundaryFilterConfig { m },
                &nms,
                cfg,
            )?;
            Ok(GridCell { m, nms, report })
        })
        .collect::<Result<Vec<_>>>()?;
    let best = select_best(&cells).expect("validated grid is nonempty");
    Ok(GridSearchResult { cells, best })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossClass {
    /// Matches the primary catalog.
    Known,
    /// Absent from the primary catalog, present in the secondary one.
    ConfirmedNew,
    /// In neither.
    Unverified,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrossVerifyReport {
    /// Detection positions per class.
    pub known: Vec<usize>,
    pub confirmed_new: Vec<usize>,
    pub unverified: Vec<usize>,
}

impl CrossVerifyReport {
    pub fn counts(&self) -> (usize, usize, usize) {
        (
            self.known.len(),
            self.confirmed_new.len(),
            self.unverified.len(),
        )
    }

    pub fn classes(&self, n: usize) -> Vec<Option<CrossClass>> {
        let mut out = vec![None; n];
        for (ids, class) in [
            (&self.known, CrossClass::Known),
            (&self.confirmed_new, CrossClass::ConfirmedNew),
            (&self.unverified, CrossClass::Unverified),
        ] {
            for &i in ids {
                out[i] = Some(class);
            }
        }
        out
    }

    pub fn to_records(&self) -> String {
        let mut s = String::from("detection_id,class\n");
        let n = self.known.len() + self.confirmed_new.len() + self.unverified.len();
        for (i, class) in self.classes(n).into_iter().enumerate() {
            let label = match class {
                Some(CrossClass::Known) => "known",
                Some(CrossClass::ConfirmedNew) => "confirmed_new",
                Some(CrossClass::Unverified) | None => "unverified",
            };
            let _ = writeln!(s, "{i},{label}");
        }
        s
    }
}

/// Classifies each detection against catalog A first, then catalog B.
pub fn cross_verify(
    dets: &[GlobalDetection],
    catalog_a: &[BBox],
    catalog_b: &[BBox],
    cfg: &EvalConfig,
) -> CrossVerifyReport {
    let hits = |truth: &[BBox]| -> Vec<bool> {
        best_ious(dets.par_iter().map(|d| &d.bbox), truth)
            .into_iter()
            .map(|m| m.is_some_and(|v| v >= cfg.u))
            .collect()
    };
    let (in_a, in_b) = (hits(catalog_a), hits(catalog_b));
    let mut report = CrossVerifyReport {
        known: Vec::new(),
        confirmed_new: Vec::new(),
        unverified: Vec::new(),
    };
    for i in 0..dets.len() {
        if in_a[i] {
            report.known.push(i);
        } else if in_b[i] {
            report.confirmed_new.push(i);
        } else {
            report.unverified.push(i);
        }
    }
    report
}
