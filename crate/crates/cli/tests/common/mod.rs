#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use crater_core::catalog::{write_catalog, Catalog, CatalogCrater};
use crater_core::geo::meter_to_lonlat;
use crater_core::raster::{write_raster, BandKind, GeoTransform, RasterGrid, ScalarType};

pub const SIDE: usize = 1024;
pub const S: f64 = 100.0;
pub const MOON: f64 = 1_737_400.0;

pub fn transform() -> GeoTransform {
    GeoTransform::new(0.0, SIDE as f64 * S, S, MOON).unwrap()
}

/// Crater lattice in mosaic pixels: (center col, center row, radius).
pub fn layout() -> Vec<(f64, f64, f64)> {
    let mut v = Vec::new();
    for i in 0..6 {
        for j in 0..6 {
            let r = 15.0 + ((i * 6 + j) % 5) as f64 * 5.0;
            v.push((100.0 + 160.0 * j as f64, 100.0 + 160.0 * i as f64, r));
        }
    }
    v
}

pub fn catalog_from(name: &str, craters: &[(f64, f64, f64)], gt: &GeoTransform) -> Catalog {
    let rows = craters
        .iter()
        .enumerate()
        .map(|(i, &(c, r, rad))| {
            let (lon, lat) = meter_to_lonlat(gt.x_min + c * S, gt.y_max - r * S, gt);
            CatalogCrater {
                id: format!("{name}{i}"),
                lon,
                lat,
                diam_km: 2.0 * rad * S / 1000.0,
            }
        })
        .collect();
    Catalog::new(name, rows, "test fixture").unwrap()
}

pub fn dem(gt: GeoTransform, craters: &[(f64, f64, f64)]) -> RasterGrid {
    RasterGrid::from_fn(SIDE, SIDE, BandKind::Elevation, gt, |row, col| {
        let mut z = 0.0;
        for &(cx, cy, rad) in craters {
            let d2 = ((col as f64 - cx).powi(2) + (row as f64 - cy).powi(2)) / (rad * rad);
            if d2 < 1.0 {
                z -= (1.0 - d2) * rad * 10.0;
            }
        }
        z as f32
    })
    .unwrap()
}

/// A tempdir holding rasters, a catalog and `run.toml`.
pub struct Workspace {
    pub dir: tempfile::TempDir,
}

impl Workspace {
    pub fn new(extra: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let gt = transform();
        let craters = layout();
        let elevation = dem(gt, &craters);
        write_raster(&elevation, &dir.path().join("dem.raw"), ScalarType::F32).unwrap();
        let intensity = RasterGrid::from_fn(SIDE, SIDE, BandKind::Intensity, gt, |r, c| {
            ((r * 7 + c * 3) % 251) as f32
        })
        .unwrap();
        write_raster(&intensity, &dir.path().join("wac.raw"), ScalarType::U8).unwrap();
        write_catalog(
            &catalog_from("a", &craters, &gt),
            &dir.path().join("catalog.csv"),
        )
        .unwrap();
        let ws = Workspace { dir };
        ws.write_config(extra);
        ws
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    pub fn config(&self) -> PathBuf {
        self.path("run.toml")
    }

    pub fn write_config(&self, extra: &str) {
        let text = format!(
            r#"seed = 11
workers = 2
output_dir = "out"

[geotransform]
x_min = 0.0
y_max = {y_max}
resolution = {S}
body_radius = {MOON}

[rasters]
intensity = "wac.raw"
elevation = "dem.raw"

[[bands]]
name = "small"
max_km = 20.0
ps_a = 256
ps_r = 128
overlap = 0.5

[catalog]
path = "catalog.csv"
schema = "native"

[postprocess]
m = 2
delta = 0.2
{extra}
"#,
            y_max = SIDE as f64 * S
        );
        fs::write(self.config(), text).unwrap();
    }
}

pub fn crater(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crater"))
        .args(args)
        .output()
        .unwrap()
}

pub fn crater_with_config(config: &Path, cmd: &str, extra: &[&str]) -> Output {
    let mut args = vec![cmd, "--config", config.to_str().unwrap()];
    args.extend_from_slice(extra);
    crater(&args)
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}
