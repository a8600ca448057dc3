//! Coordinate algebra between resized-patch pixels, projected mosaic meters
//! and longitude/latitude on a simple-cylindrical projection.
//!
//! Pixel to meter, for a patch whose top-left corner sits at mosaic pixel
//! `(row0, col0)` and whose window was shrunk by `delta_f`:
//!
//! ```text
//! x_meter = x_min + (col0 + x_pxl * delta_f) * S
//! y_meter = y_max - (row0 + y_pxl * delta_f) * S
//! r_meter = r_pxl * S * delta_f
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{GeoTransform, PatchPlacement};

/// Crater in the resized patch frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelCrater {
    pub x_pxl: f64,
    pub y_pxl: f64,
    pub r_pxl: f64,
}

/// Crater in projected meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapCrater {
    pub x_meter: f64,
    pub y_meter: f64,
    pub r_meter: f64,
    pub score: Option<f64>,
    pub lon: Option<f64>,
    pub lat: Option<f64>,
}

impl MapCrater {
    pub fn new(x_meter: f64, y_meter: f64, r_meter: f64) -> Self {
        MapCrater {
            x_meter,
            y_meter,
            r_meter,
            score: None,
            lon: None,
            lat: None,
        }
    }

    /// Fills `lon`/`lat` from the projected position.
    pub fn with_lonlat(mut self, gt: &GeoTransform) -> Self {
        let (lon, lat) = meter_to_lonlat(self.x_meter, self.y_meter, gt);
        self.lon = Some(lon);
        self.lat = Some(lat);
        self
    }
}

pub fn resize_factor(ps_a: usize, ps_r: usize) -> Result<f64> {
    if ps_a == 0 || ps_r == 0 {
        return Err(Error::invalid("patch sizes must be positive"));
    }
    if ps_r > ps_a {
        return Err(Error::invalid(format!(
            "resized side {ps_r} exceeds actual side {ps_a}"
        )));
    }
    Ok(ps_a as f64 / ps_r as f64)
}

/// Frame of one patch: mosaic offset of its top-left pixel and resize factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchFrame {
    pub row0: f64,
    pub col0: f64,
    pub delta_f: f64,
}

impl PatchFrame {
    pub fn new(row0: usize, col0: usize, delta_f: f64) -> Self {
        PatchFrame {
            row0: row0 as f64,
            col0: col0 as f64,
            delta_f,
        }
    }
}

impl From<&PatchPlacement> for PatchFrame {
    fn from(p: &PatchPlacement) -> Self {
        PatchFrame::new(p.row0, p.col0, p.delta_f())
    }
}

pub fn pixel_point_to_meter(
    x_pxl: f64,
    y_pxl: f64,
    gt: &GeoTransform,
    frame: &PatchFrame,
) -> (f64, f64) {
    let s = gt.resolution;
    (
        gt.x_min + (frame.col0 + x_pxl * frame.delta_f) * s,
        gt.y_max - (frame.row0 + y_pxl * frame.delta_f) * s,
    )
}

pub fn meter_point_to_pixel(
    x_meter: f64,
    y_meter: f64,
    gt: &GeoTransform,
    frame: &PatchFrame,
) -> (f64, f64) {
    let s = gt.resolution;
    (
        ((x_meter - gt.x_min) / s - frame.col0) / frame.delta_f,
        ((gt.y_max - y_meter) / s - frame.row0) / frame.delta_f,
    )
}

pub fn pixel_to_meter(c: &PixelCrater, gt: &GeoTransform, frame: &PatchFrame) -> MapCrater {
    let (x, y) = pixel_point_to_meter(c.x_pxl, c.y_pxl, gt, frame);
    MapCrater::new(x, y, c.r_pxl * gt.resolution * frame.delta_f)
}

pub fn meter_to_pixel(c: &MapCrater, gt: &GeoTransform, frame: &PatchFrame) -> PixelCrater {
    let (x_pxl, y_pxl) = meter_point_to_pixel(c.x_meter, c.y_meter, gt, frame);
    PixelCrater {
        x_pxl,
        y_pxl,
        r_pxl: c.r_meter / (gt.resolution * frame.delta_f),
    }
}

/// Simple-cylindrical forward projection on a sphere of `gt.body_radius`.
pub fn lonlat_to_meter(lon: f64, lat: f64, gt: &GeoTransform) -> Result<(f64, f64)> {
    if !(-90.0..=90.0).contains(&lat) {
        return Err(Error::LatitudeOutOfRange(lat));
    }
    let r = gt.body_radius;
    Ok((r * lon.to_radians(), r * lat.to_radians()))
}

pub fn meter_to_lonlat(x: f64, y: f64, gt: &GeoTransform) -> (f64, f64) {
    let r = gt.body_radius;
    ((x / r).to_degrees(), (y / r).to_degrees())
}
