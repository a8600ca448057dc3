use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use crater_core::bbox::BBox;
use crater_core::catalog::{filter_by_size, load_catalog, to_boxes, Catalog};
use crater_core::detector::{
    detect_all, load_detections, write_detections, DetectionLoadOptions, DetectionMap, Detector,
    PrecomputedDetector, SyntheticDetector,
};
use crater_core::eval::{
    cross_verify, grid_search, localization_stats, match_and_count, size_gate, CrossVerifyReport,
    GridSearchResult, LocalizationReport, MetricsReport,
};
use crater_core::postprocess::{patch_index, run_pipeline, write_global_detections, PatchIndex};
use crater_core::raster::{
    compute_slope, read_raster, replicate_single_band_with, resample, tile_with, write_ppm,
    write_raster, BandKind, FusedPatch, GeoTransform, RasterGrid, ScalarType,
};
use serde::Serialize;

use crate::config::{
    CatalogSection, DetectorKind, PipelineConfig, SchemaChoice, SizeBand, TileMode,
};
use crate::manifest::RunManifest;

pub const MANIFEST: &str = "manifest.json";
pub const PATCH_INDEX: &str = "patch_index.csv";
pub const PATCH_DETECTIONS: &str = "patch_detections.csv";
pub const GLOBAL_DETECTIONS: &str = "global_detections.csv";
pub const METRICS: &str = "metrics.json";
pub const GRIDSEARCH: &str = "gridsearch.csv";
pub const GRIDSEARCH_BEST: &str = "gridsearch_best.json";
pub const CROSSMATCH: &str = "crossmatch.csv";
pub const CROSSMATCH_SUMMARY: &str = "crossmatch_summary.json";

fn in_pool<T: Send>(cfg: &PipelineConfig, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cfg.workers {
        builder = builder.num_threads(n);
    }
    builder.build()?.install(f)
}

/// Writes the slope of the DEM at `dem` to `out` as f32 with a header.
pub fn cmd_slope(dem: &Path, out: &Path) -> Result<RasterGrid> {
    let grid = read_raster(dem)?;
    let grid = if grid.band() == BandKind::Elevation {
        grid
    } else {
        log::warn!(
            "{} is tagged {}, treating it as elevation",
            dem.display(),
            grid.band()
        );
        grid.with_band(BandKind::Elevation)?
    };
    let slope = compute_slope(&grid)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    write_raster(&slope, out, ScalarType::F32)?;
    Ok(slope)
}

struct Mosaic {
    gt: GeoTransform,
    width: usize,
    height: usize,
    patches: Vec<FusedPatch>,
}

impl Mosaic {
    fn extent(&self) -> BBox {
        let s = self.gt.resolution;
        BBox {
            x1: self.gt.x_min,
            y1: self.gt.y_max - self.height as f64 * s,
            x2: self.gt.x_min + self.width as f64 * s,
            y2: self.gt.y_max,
        }
    }

    fn index(&self) -> PatchIndex {
        patch_index(self.patches.iter().map(|p| &p.placement))
    }
}

fn read_input(
    path: &Path,
    band: BandKind,
    cfg: &PipelineConfig,
    manifest: &mut RunManifest,
) -> Result<RasterGrid> {
    let grid = read_raster(path)?;
    manifest.input(path)?;
    manifest.input(&crater_core::raster::header_path(path))?;
    if grid.band() != band {
        bail!(
            "{} holds {} data where {band} was expected",
            path.display(),
            grid.band()
        );
    }
    match cfg.rasters.target_resolution {
        Some(res) if res != grid.transform().resolution => Ok(resample(&grid, res)?),
        _ => Ok(grid),
    }
}

fn check_transform(cfg: &PipelineConfig, grid: &RasterGrid) -> Result<GeoTransform> {
    let actual = *grid.transform();
    if let Some(want) = cfg.geotransform {
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0);
        if !(close(want.x_min, actual.x_min)
            && close(want.y_max, actual.y_max)
            && close(want.resolution, actual.resolution)
            && close(want.body_radius, actual.body_radius))
        {
            bail!("configured geotransform {want:?} disagrees with the rasters ({actual:?})");
        }
    }
    Ok(actual)
}

fn load_mosaic(
    cfg: &PipelineConfig,
    band: &SizeBand,
    manifest: &mut RunManifest,
) -> Result<Mosaic> {
    let r = &cfg.rasters;
    let spec = band.patch_spec()?;
    let need = |p: &Option<PathBuf>, name: &str| {
        p.clone()
            .with_context(|| format!("config is missing `rasters.{name}`"))
    };
    let (patches, grid) = match r.mode {
        TileMode::Single => {
            let grid = match r.single_band {
                BandKind::Intensity => read_input(
                    &need(&r.intensity, "intensity")?,
                    BandKind::Intensity,
                    cfg,
                    manifest,
                )?,
                BandKind::Elevation => read_input(
                    &need(&r.elevation, "elevation")?,
                    BandKind::Elevation,
                    cfg,
                    manifest,
                )?,
                BandKind::Slope => match &r.slope {
                    Some(p) => read_input(p, BandKind::Slope, cfg, manifest)?,
                    None => {
                        let dem = read_input(
                            &need(&r.elevation, "elevation")?,
                            BandKind::Elevation,
                            cfg,
                            manifest,
                        )?;
                        manifest.time("slope", || compute_slope(&dem))?
                    }
                },
            };
            let patches =
                manifest.time("tile", || replicate_single_band_with(&grid, &spec, r.scale))?;
            (patches, grid)
        }
        TileMode::Fused => {
            let intensity = read_input(
                &need(&r.intensity, "intensity")?,
                BandKind::Intensity,
                cfg,
                manifest,
            )?;
            let elevation = read_input(
                &need(&r.elevation, "elevation")?,
                BandKind::Elevation,
                cfg,
                manifest,
            )?;
            let slope = match &r.slope {
                Some(p) => read_input(p, BandKind::Slope, cfg, manifest)?,
                None => manifest.time("slope", || compute_slope(&elevation))?,
            };
            let patches = manifest.time("tile", || {
                tile_with(&intensity, &elevation, &slope, &spec, r.scale)
            })?;
            (patches, intensity)
        }
    };
    Ok(Mosaic {
        gt: check_transform(cfg, &grid)?,
        width: grid.width(),
        height: grid.height(),
        patches,
    })
}

fn read_catalog(
    path: &Path,
    schema: &SchemaChoice,
    section: &CatalogSection,
    manifest: &mut RunManifest,
) -> Result<Catalog> {
    let loaded = load_catalog(path, &schema.resolve()?, section.max_reject_fraction)?;
    manifest.input(path)?;
    if loaded.rejected > 0 {
        log::warn!(
            "{}: skipped {} of {} rows",
            path.display(),
            loaded.rejected,
            loaded.rows
        );
    }
    Ok(loaded.catalog)
}

/// Craters of the band's size range, plus the subset retained for scoring:
/// inside the eval size limits with centers on the mosaic.
struct Truth {
    band: Catalog,
    scored: Vec<BBox>,
}

fn band_truth(
    cat: &Catalog,
    cfg: &PipelineConfig,
    band: &SizeBand,
    mosaic: &Mosaic,
) -> Result<Truth> {
    let band_cat = filter_by_size(cat, band.min_km, band.max_km);
    let lo = cfg.eval.size_floor_km.unwrap_or(0.0).max(band.min_km);
    let hi = match (cfg.eval.size_ceiling_km, band.max_km) {
        (Some(a), Some(b)) => Some(a.min(b)),
        (a, b) => a.or(b),
    };
    let extent = mosaic.extent();
    let scored = to_boxes(&filter_by_size(cat, lo, hi), &mosaic.gt)?
        .into_iter()
        .filter(|b| {
            let (x, y) = b.center();
            x >= extent.x1 && x < extent.x2 && y > extent.y1 && y <= extent.y2
        })
        .collect();
    Ok(Truth {
        band: band_cat,
        scored,
    })
}

fn detect(
    cfg: &PipelineConfig,
    band: &SizeBand,
    mosaic: &Mosaic,
    truth: Option<&Truth>,
    manifest: &mut RunManifest,
) -> Result<DetectionMap> {
    let detector: Box<dyn Detector> = match cfg.detector.kind {
        DetectorKind::Synthetic => {
            let truth = truth.context("the synthetic detector needs a [catalog] section")?;
            Box::new(SyntheticDetector::from_catalog(
                &truth.band,
                mosaic.gt,
                cfg.noise(),
            )?)
        }
        DetectorKind::External => {
            let path = cfg
                .detector
                .path
                .as_ref()
                .context("the external detector needs `detector.path`")?;
            let opts = DetectionLoadOptions {
                score_floor: cfg.detector.score_floor,
                patch_side: Some(band.ps_r as f64),
            };
            let map = load_detections(path, &opts)?;
            manifest.input(path)?;
            let index = mosaic.index();
            if let Some(id) = map.keys().find(|id| !index.contains_key(id)) {
                bail!(
                    "{} refers to patch {id}, which the tiling does not produce",
                    path.display()
                );
            }
            Box::new(PrecomputedDetector::new(map))
        }
    };
    manifest
        .time("detect", || detect_all(detector.as_ref(), &mosaic.patches))
        .map_err(Into::into)
}

fn prepare_out(cfg: &PipelineConfig) -> Result<&Path> {
    let dir = cfg.output_dir.as_path();
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    Ok(dir)
}

fn write_text(path: &Path, text: &str, manifest: &mut RunManifest) -> Result<()> {
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))?;
    manifest.output(path)
}

fn write_json<T: Serialize>(path: &Path, value: &T, manifest: &mut RunManifest) -> Result<()> {
    write_text(
        path,
        &(serde_json::to_string_pretty(value)? + "\n"),
        manifest,
    )
}

fn finish(manifest: &RunManifest, dir: &Path) -> Result<PathBuf> {
    let path = dir.join(MANIFEST);
    manifest.write(&path)?;
    Ok(path)
}

pub struct TileOutput {
    pub patches: usize,
    pub index_path: PathBuf,
}

/// Writes every patch as a PPM plus the patch index.
pub fn cmd_tile(cfg: &PipelineConfig) -> Result<TileOutput> {
    cfg.validate()?;
    in_pool(cfg, || {
        let band = cfg.band()?;
        let mut manifest = RunManifest::new("tile", Some(cfg));
        let mosaic = load_mosaic(cfg, band, &mut manifest)?;
        let dir = prepare_out(cfg)?;
        let patch_dir = dir.join("patches");
        fs::create_dir_all(&patch_dir)
            .with_context(|| format!("cannot create {}", patch_dir.display()))?;
        let mut index = String::from("patch_id,row0,col0,ps_a,ps_r,delta_f\n");
        for p in &mosaic.patches {
            let path = patch_dir.join(format!("patch_{:05}.ppm", p.id().0));
            write_ppm(p, &path)?;
            manifest.output(&path)?;
            let pl = &p.placement;
            let _ = writeln!(
                index,
                "{},{},{},{},{},{}",
                pl.id,
                pl.row0,
                pl.col0,
                pl.ps_a,
                pl.ps_r,
                pl.delta_f()
            );
        }
        let index_path = dir.join(PATCH_INDEX);
        write_text(&index_path, &index, &mut manifest)?;
        finish(&manifest, dir)?;
        Ok(TileOutput {
            patches: mosaic.patches.len(),
            index_path,
        })
    })
}

/// Dumps the synthetic detector's per-patch output.
pub fn cmd_detect(cfg: &PipelineConfig) -> Result<DetectionMap> {
    cfg.validate()?;
    if cfg.detector.kind != DetectorKind::Synthetic {
        bail!("detect only runs the synthetic detector");
    }
    in_pool(cfg, || {
        let band = cfg.band()?;
        let mut manifest = RunManifest::new("detect", Some(cfg));
        let mosaic = load_mosaic(cfg, band, &mut manifest)?;
        let section = cfg.catalog()?;
        let cat = read_catalog(&section.path, &section.schema, section, &mut manifest)?;
        let truth = band_truth(&cat, cfg, band, &mosaic)?;
        let dets = detect(cfg, band, &mosaic, Some(&truth), &mut manifest)?;
        let dir = prepare_out(cfg)?;
        let path = dir.join(PATCH_DETECTIONS);
        write_detections(&dets, &path)?;
        manifest.output(&path)?;
        finish(&manifest, dir)?;
        Ok(dets)
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub band: String,
    pub m: u32,
    pub delta: Option<f64>,
    pub metrics: MetricsReport,
    pub localization: LocalizationReport,
}

struct Staged {
    band: SizeBand,
    mosaic: Mosaic,
    truth: Option<Truth>,
    per_patch: DetectionMap,
}

fn stage(cfg: &PipelineConfig, manifest: &mut RunManifest, need_truth: bool) -> Result<Staged> {
    let band = cfg.band()?.clone();
    let mosaic = load_mosaic(cfg, &band, manifest)?;
    let truth = match &cfg.catalog {
        Some(section) => {
            let cat = read_catalog(&section.path, &section.schema, section, manifest)?;
            Some(band_truth(&cat, cfg, &band, &mosaic)?)
        }
        None if need_truth => bail!("this command needs a [catalog] section"),
        None => None,
    };
    let per_patch = detect(cfg, &band, &mosaic, truth.as_ref(), manifest)?;
    Ok(Staged {
        band,
        mosaic,
        truth,
        per_patch,
    })
}

/// Full pipeline: tile, detect, filter, merge, gate and score.
pub fn cmd_run(cfg: &PipelineConfig) -> Result<RunReport> {
    cfg.validate()?;
    in_pool(cfg, || {
        let mut manifest = RunManifest::new("run", Some(cfg));
        let s = stage(cfg, &mut manifest, true)?;
        let truth = s.truth.as_ref().expect("catalog required");
        let (bcfg, ncfg) = (cfg.postprocess.boundary(), cfg.postprocess.nms_config());
        let index = s.mosaic.index();
        let merged = manifest.time("postprocess", || {
            run_pipeline(&s.per_patch, &index, &s.mosaic.gt, &bcfg, &ncfg)
        })?;
        let gated = size_gate(&merged, &cfg.eval);
        let (metrics, localization) = manifest.time("evaluate", || {
            (
                match_and_count(&gated, &truth.scored, &cfg.eval),
                localization_stats(&gated, &truth.scored, &cfg.eval),
            )
        });

        let dir = prepare_out(cfg)?;
        let raw = dir.join(PATCH_DETECTIONS);
        write_detections(&s.per_patch, &raw)?;
        manifest.output(&raw)?;
        let global = dir.join(GLOBAL_DETECTIONS);
        write_global_detections(&gated, &global)?;
        manifest.output(&global)?;
        let report = RunReport {
            band: s.band.name.clone(),
            m: bcfg.m,
            delta: ncfg.enabled.then_some(ncfg.delta),
            metrics,
            localization,
        };
        write_json(&dir.join(METRICS), &report, &mut manifest)?;
        finish(&manifest, dir)?;
        Ok(report)
    })
}

/// Scores every (m, δ) cell of the configured grid.
pub fn cmd_gridsearch(cfg: &PipelineConfig) -> Result<GridSearchResult> {
    cfg.validate()?;
    in_pool(cfg, || {
        let mut manifest = RunManifest::new("gridsearch", Some(cfg));
        let s = stage(cfg, &mut manifest, true)?;
        let truth = s.truth.as_ref().expect("catalog required");
        let index = s.mosaic.index();
        let result = manifest.time("gridsearch", || {
            grid_search(
                &s.per_patch,
                &index,
                &s.mosaic.gt,
                &truth.scored,
                &cfg.gridsearch,
                &cfg.eval,
            )
        })?;
        let dir = prepare_out(cfg)?;
        write_text(&dir.join(GRIDSEARCH), &result.to_records(), &mut manifest)?;
        write_json(
            &dir.join(GRIDSEARCH_BEST),
            result.best_cell(),
            &mut manifest,
        )?;
        finish(&manifest, dir)?;
        Ok(result)
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CrossmatchSummary {
    pub detections: usize,
    pub known: usize,
    pub confirmed_new: usize,
    pub unverified: usize,
}

/// Splits the pipeline output into craters known to the primary catalog,
/// new ones confirmed by the comparison catalog, and unverified ones.
pub fn cmd_crossmatch(cfg: &PipelineConfig) -> Result<CrossVerifyReport> {
    cfg.validate()?;
    let section = cfg.catalog()?;
    let compare = section
        .compare
        .clone()
        .context("crossmatch needs `catalog.compare`")?;
    in_pool(cfg, || {
        let mut manifest = RunManifest::new("crossmatch", Some(cfg));
        let s = stage(cfg, &mut manifest, true)?;
        let truth_a = s.truth.as_ref().expect("catalog required");
        let cat_b = read_catalog(&compare, &section.compare_schema, section, &mut manifest)?;
        let truth_b = band_truth(&cat_b, cfg, &s.band, &s.mosaic)?;
        let index = s.mosaic.index();
        let (bcfg, ncfg) = (cfg.postprocess.boundary(), cfg.postprocess.nms_config());
        let merged = manifest.time("postprocess", || {
            run_pipeline(&s.per_patch, &index, &s.mosaic.gt, &bcfg, &ncfg)
        })?;
        let gated = size_gate(&merged, &cfg.eval);
        let report = cross_verify(&gated, &truth_a.scored, &truth_b.scored, &cfg.eval);

        let dir = prepare_out(cfg)?;
        let global = dir.join(GLOBAL_DETECTIONS);
        write_global_detections(&gated, &global)?;
        manifest.output(&global)?;
        write_text(&dir.join(CROSSMATCH), &report.to_records(), &mut manifest)?;
        let (known, confirmed_new, unverified) = report.counts();
        let summary = CrossmatchSummary {
            detections: gated.len(),
            known,
            confirmed_new,
            unverified,
        };
        write_json(&dir.join(CROSSMATCH_SUMMARY), &summary, &mut manifest)?;
        finish(&manifest, dir)?;
        Ok(report)
    })
}
