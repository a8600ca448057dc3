//! Georeferenced single-band rasters: raw I/O, bilinear resampling, Horn
//! slope, byte rescaling and overlapping fused-patch tiling.
//!
//! On disk a raster is a raw little-endian scalar payload next to a text
//! sidecar named `<payload>.hdr` holding `key = value` lines:
//!
//! ```text
//! width = 4096
//! height = 4096
//! scalar = f32
//! band = elevation
//! nodata = -9999
//! x_min = 0
//! y_max = 0
//! resolution = 100
//! body_radius = 1737400
//! ```

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandKind {
    Intensity,
    Elevation,
    Slope,
}

impl fmt::Display for BandKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BandKind::Intensity => "intensity",
            BandKind::Elevation => "elevation",
            BandKind::Slope => "slope",
        })
    }
}

impl FromStr for BandKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "intensity" | "optical" => Ok(BandKind::Intensity),
            "elevation" | "dem" => Ok(BandKind::Elevation),
            "slope" => Ok(BandKind::Slope),
            other => Err(Error::UnknownBandKind(other.to_string())),
        }
    }
}

/// Placement of a north-up grid in a projected frame. `x_min` is the left
/// edge, `y_max` the top edge, both in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoTransform {
    pub x_min: f64,
    pub y_max: f64,
    /// Meters per pixel.
    pub resolution: f64,
    /// Radius of the projection sphere in meters.
    pub body_radius: f64,
}

impl GeoTransform {
    pub fn new(x_min: f64, y_max: f64, resolution: f64, body_radius: f64) -> Result<Self> {
        let gt = GeoTransform {
            x_min,
            y_max,
            resolution,
            body_radius,
        };
        gt.validate()?;
        Ok(gt)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.x_min.is_finite() && self.y_max.is_finite()) {
            return Err(Error::invalid("geotransform origin must be finite"));
        }
        if !(self.resolution.is_finite() && self.resolution > 0.0) {
            return Err(Error::invalid(format!(
                "resolution must be positive, got {}",
                self.resolution
            )));
        }
        if !(self.body_radius.is_finite() && self.body_radius > 0.0) {
            return Err(Error::invalid(format!(
                "body radius must be positive, got {}",
                self.body_radius
            )));
        }
        Ok(())
    }

    pub fn with_resolution(&self, resolution: f64) -> Self {
        GeoTransform {
            resolution,
            ..*self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalarType {
    U8,
    I16,
    U16,
    I32,
    F32,
    F64,
}

impl ScalarType {
    pub fn size(self) -> usize {
        match self {
            ScalarType::U8 => 1,
            ScalarType::I16 | ScalarType::U16 => 2,
            ScalarType::I32 | ScalarType::F32 => 4,
            ScalarType::F64 => 8,
        }
    }

    fn decode(self, bytes: &[u8]) -> Vec<f32> {
        let n = self.size();
        bytes
            .chunks_exact(n)
            .map(|c| match self {
                ScalarType::U8 => c[0] as f32,
                ScalarType::I16 => i16::from_le_bytes([c[0], c[1]]) as f32,
                ScalarType::U16 => u16::from_le_bytes([c[0], c[1]]) as f32,
                ScalarType::I32 => i32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f32,
                ScalarType::F32 => f32::from_le_bytes([c[0], c[1], c[2], c[3]]),
                ScalarType::F64 => {
                    f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]) as f32
                }
            })
            .collect()
    }

    fn encode(self, values: &[f32], out: &mut Vec<u8>) {
        out.reserve(values.len() * self.size());
        for &v in values {
            match self {
                ScalarType::U8 => out.push(v.round().clamp(0.0, 255.0) as u8),
                ScalarType::I16 => out.extend_from_slice(&(v.round() as i16).to_le_bytes()),
                ScalarType::U16 => out.extend_from_slice(&(v.round() as u16).to_le_bytes()),
                ScalarType::I32 => out.extend_from_slice(&(v.round() as i32).to_le_bytes()),
                ScalarType::F32 => out.extend_from_slice(&v.to_le_bytes()),
                ScalarType::F64 => out.extend_from_slice(&(v as f64).to_le_bytes()),
            }
        }
    }
}

impl fmt::Display for ScalarType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScalarType::U8 => "u8",
            ScalarType::I16 => "i16",
            ScalarType::U16 => "u16",
            ScalarType::I32 => "i32",
            ScalarType::F32 => "f32",
            ScalarType::F64 => "f64",
        })
    }
}

impl FromStr for ScalarType {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "u8" | "uint8" | "byte" => Ok(ScalarType::U8),
            "i16" | "int16" => Ok(ScalarType::I16),
            "u16" | "uint16" => Ok(ScalarType::U16),
            "i32" | "int32" => Ok(ScalarType::I32),
            "f32" | "float32" => Ok(ScalarType::F32),
            "f64" | "float64" => Ok(ScalarType::F64),
            other => Err(format!("unknown scalar type `{other}`")),
        }
    }
}

/// Sidecar descriptor of a raw raster payload.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterHeader {
    pub width: usize,
    pub height: usize,
    pub scalar: ScalarType,
    pub band: BandKind,
    pub nodata: Option<f64>,
    pub transform: GeoTransform,
}

impl RasterHeader {
    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let mut width = None;
        let mut height = None;
        let mut scalar = None;
        let mut band = None;
        let mut nodata = None;
        let (mut x_min, mut y_max, mut resolution, mut body_radius) = (None, None, None, None);

        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected `key = value`", lineno + 1))?;
            let (key, value) = (key.trim(), value.trim());
            let num = |v: &str| {
                v.parse::<f64>()
                    .map_err(|_| format!("line {}: `{key}` is not a number", lineno + 1))
            };
            let int = |v: &str| {
                v.parse::<usize>()
                    .map_err(|_| format!("line {}: `{key}` is not a count", lineno + 1))
            };
            match key {
                "width" => width = Some(int(value)?),
                "height" => height = Some(int(value)?),
                "scalar" => scalar = Some(value.parse::<ScalarType>()?),
                "band" => band = Some(value.parse::<BandKind>().map_err(|e| e.to_string())?),
                "nodata" => {
                    nodata = match value {
                        "" | "none" => None,
                        v => Some(num(v)?),
                    }
                }
                "x_min" => x_min = Some(num(value)?),
                "y_max" => y_max = Some(num(value)?),
                "resolution" => resolution = Some(num(value)?),
                "body_radius" => body_radius = Some(num(value)?),
                other => return Err(format!("line {}: unknown key `{other}`", lineno + 1)),
            }
        }

        fn need<T>(v: Option<T>, key: &str) -> std::result::Result<T, String> {
            v.ok_or_else(|| format!("missing `{key}`"))
        }
        let transform = GeoTransform::new(
            need(x_min, "x_min")?,
            need(y_max, "y_max")?,
            need(resolution, "resolution")?,
            need(body_radius, "body_radius")?,
        )
        .map_err(|e| e.to_string())?;
        Ok(RasterHeader {
            width: need(width, "width")?,
            height: need(height, "height")?,
            scalar: need(scalar, "scalar")?,
            band: need(band, "band")?,
            nodata,
            transform,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RasterHeader::parse(&text).map_err(|message| Error::Header {
            path: path.to_path_buf(),
            message,
        })
    }

    pub fn value_count(&self) -> usize {
        self.width * self.height
    }
}

impl fmt::Display for RasterHeader {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "width = {}", self.width)?;
        writeln!(f, "height = {}", self.height)?;
        writeln!(f, "scalar = {}", self.scalar)?;
        writeln!(f, "band = {}", self.band)?;
        match self.nodata {
            Some(v) => writeln!(f, "nodata = {v}")?,
            None => writeln!(f, "nodata = none")?,
        }
        writeln!(f, "x_min = {}", self.transform.x_min)?;
        writeln!(f, "y_max = {}", self.transform.y_max)?;
        writeln!(f, "resolution = {}", self.transform.resolution)?;
        writeln!(f, "body_radius = {}", self.transform.body_radius)
    }
}

/// Path of the sidecar header for a payload: `<payload>.hdr`.
pub fn header_path(payload: &Path) -> PathBuf {
    let mut s = payload.as_os_str().to_owned();
    s.push(".hdr");
    PathBuf::from(s)
}

/// Row-major single-band grid. A cell is invalid when it is non-finite or
/// equals the nodata sentinel.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterGrid {
    width: usize,
    height: usize,
    band: BandKind,
    values: Vec<f32>,
    nodata: Option<f32>,
    transform: GeoTransform,
}

impl RasterGrid {
    pub fn new(
        width: usize,
        height: usize,
        band: BandKind,
        values: Vec<f32>,
        nodata: Option<f32>,
        transform: GeoTransform,
    ) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: width * height,
                actual: values.len(),
            });
        }
        transform.validate()?;
        let grid = RasterGrid {
            width,
            height,
            band,
            values,
            nodata,
            transform,
        };
        if band == BandKind::Slope {
            if let Some(bad) = grid
                .values
                .iter()
                .copied()
                .find(|&v| grid.is_valid_value(v) && !(0.0..=90.0).contains(&v))
            {
                return Err(Error::invalid(format!("slope value {bad} outside [0, 90]")));
            }
        }
        Ok(grid)
    }

    /// Grid of `width × height` cells all equal to `value`.
    pub fn filled(
        width: usize,
        height: usize,
        band: BandKind,
        value: f32,
        transform: GeoTransform,
    ) -> Result<Self> {
        RasterGrid::new(
            width,
            height,
            band,
            vec![value; width * height],
            None,
            transform,
        )
    }

    /// Grid evaluating `f(row, col)` at every cell.
    pub fn from_fn(
        width: usize,
        height: usize,
        band: BandKind,
        transform: GeoTransform,
        f: impl Fn(usize, usize) -> f32,
    ) -> Result<Self> {
        let values = (0..height)
            .flat_map(|r| (0..width).map(move |c| (r, c)))
            .map(|(r, c)| f(r, c))
            .collect();
        RasterGrid::new(width, height, band, values, None, transform)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn band(&self) -> BandKind {
        self.band
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn nodata(&self) -> Option<f32> {
        self.nodata
    }

    pub fn transform(&self) -> &GeoTransform {
        &self.transform
    }

    pub fn with_band(mut self, band: BandKind) -> Result<Self> {
        self.band = band;
        RasterGrid::new(
            self.width,
            self.height,
            band,
            self.values,
            self.nodata,
            self.transform,
        )
    }

    pub fn is_valid_value(&self, v: f32) -> bool {
        v.is_finite() && self.nodata != Some(v)
    }

    /// Value at `(row, col)` if that cell is valid.
    pub fn get(&self, row: usize, col: usize) -> Option<f32> {
        let v = self.values[row * self.width + col];
        self.is_valid_value(v).then_some(v)
    }

    pub fn valid_count(&self) -> usize {
        self.values
            .iter()
            .filter(|&&v| self.is_valid_value(v))
            .count()
    }

    /// Min and max over valid cells.
    pub fn valid_range(&self) -> Option<(f32, f32)> {
        value_range(
            self.values
                .iter()
                .copied()
                .filter(|&v| self.is_valid_value(v)),
        )
    }

    fn invalid_marker(&self) -> f32 {
        self.nodata.unwrap_or(f32::NAN)
    }

    fn same_footprint(&self, other: &RasterGrid) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.transform == other.transform
    }
}

fn value_range(values: impl Iterator<Item = f32>) -> Option<(f32, f32)> {
    values.fold(None, |acc, v| match acc {
        None => Some((v, v)),
        Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
    })
}

/// Reads a raw payload described by `header`.
pub fn load_raster(path: &Path, header: &RasterHeader) -> Result<RasterGrid> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let size = header.scalar.size();
    if bytes.len() % size != 0 || bytes.len() / size != header.value_count() {
        return Err(Error::DimensionMismatch {
            expected: header.value_count(),
            actual: bytes.len() / size,
        });
    }
    RasterGrid::new(
        header.width,
        header.height,
        header.band,
        header.scalar.decode(&bytes),
        header.nodata.map(|v| v as f32),
        header.transform,
    )
}

/// Reads a payload and its `<payload>.hdr` sidecar.
pub fn read_raster(path: &Path) -> Result<RasterGrid> {
    if !path.exists() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "raster file not found"),
        ));
    }
    let header = RasterHeader::read(&header_path(path))?;
    load_raster(path, &header)
}

/// Writes the payload at `path` and its sidecar header.
pub fn write_raster(grid: &RasterGrid, path: &Path, scalar: ScalarType) -> Result<()> {
    let mut bytes = Vec::new();
    scalar.encode(&grid.values, &mut bytes);
    fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    let header = RasterHeader {
        width: grid.width,
        height: grid.height,
        scalar,
        band: grid.band,
        nodata: grid.nodata.map(f64::from),
        transform: grid.transform,
    };
    let hdr = header_path(path);
    fs::write(&hdr, header.to_string()).map_err(|e| Error::io(hdr, e))
}

/// Bilinear resampling onto a grid of `target_resolution` meters per pixel
/// sharing the input's top-left corner. The output extent is rounded up so
/// it covers the input. Invalid neighbours are dropped from the stencil and
/// the remaining weights renormalized.
pub fn resample(grid: &RasterGrid, target_resolution: f64) -> Result<RasterGrid> {
    if !(target_resolution.is_finite() && target_resolution > 0.0) {
        return Err(Error::invalid(format!(
            "target resolution must be positive, got {target_resolution}"
        )));
    }
    if grid.valid_count() == 0 {
        return Err(Error::AllNodata);
    }
    let src_res = grid.transform.resolution;
    let ratio = target_resolution / src_res;
    let out_w = ((grid.width as f64 / ratio) - 1e-9).ceil().max(1.0) as usize;
    let out_h = ((grid.height as f64 / ratio) - 1e-9).ceil().max(1.0) as usize;

    // Source-pixel coordinate of an output cell center, clamped into the grid.
    let src_coord = |i: usize, n: usize| -> (usize, usize, f64) {
        let f = ((i as f64 + 0.5) * ratio - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = f.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, f - i0 as f64)
    };
    let cols: Vec<_> = (0..out_w).map(|c| src_coord(c, grid.width)).collect();
    let marker = grid.invalid_marker();

    let values: Vec<f32> = (0..out_h)
        .into_par_iter()
        .flat_map_iter(|r| {
            let (r0, r1, ty) = src_coord(r, grid.height);
            cols.iter().map(move |&(c0, c1, tx)| {
                let taps = [
                    (r0, c0, (1.0 - ty) * (1.0 - tx)),
                    (r0, c1, (1.0 - ty) * tx),
                    (r1, c0, ty * (1.0 - tx)),
                    (r1, c1, ty * tx),
                ];
                let (mut acc, mut wsum) = (0.0f64, 0.0f64);
                let mut any_valid = false;
                for (rr, cc, w) in taps {
                    if let Some(v) = grid.get(rr, cc) {
                        any_valid = true;
                        acc += w * v as f64;
                        wsum += w;
                    }
                }
                if !any_valid {
                    marker
                } else if wsum > 0.0 {
                    (acc / wsum) as f32
                } else {
                    // Only zero-weight taps were valid: take their mean.
                    let vs: Vec<f64> = taps
                        .iter()
                        .filter_map(|&(rr, cc, _)| grid.get(rr, cc).map(f64::from))
                        .collect();
                    (vs.iter().sum::<f64>() / vs.len() as f64) as f32
                }
            })
        })
        .collect();

    RasterGrid::new(
        out_w,
        out_h,
        grid.band,
        values,
        grid.nodata,
        grid.transform.with_resolution(target_resolution),
    )
}

/// Slope in degrees using Horn's 3×3 weighted differences, edges replicated.
/// A cell whose stencil touches an invalid cell is invalid.
pub fn compute_slope(dem: &RasterGrid) -> Result<RasterGrid> {
    if dem.band != BandKind::Elevation {
        return Err(Error::WrongBand {
            expected: BandKind::Elevation,
            actual: dem.band,
        });
    }
    if dem.width < 3 || dem.height < 3 {
        return Err(Error::GridTooSmall {
            width: dem.width,
            height: dem.height,
            min: 3,
        });
    }
    let (w, h) = (dem.width, dem.height);
    let scale = 8.0 * dem.transform.resolution;
    let marker = dem.invalid_marker();

    let values: Vec<f32> = (0..h)
        .into_par_iter()
        .flat_map_iter(|r| {
            let rows = [r.saturating_sub(1), r, (r + 1).min(h - 1)];
            (0..w).map(move |c| {
                let cols = [c.saturating_sub(1), c, (c + 1).min(w - 1)];
                let mut z = [[0.0f64; 3]; 3];
                for (i, &rr) in rows.iter().enumerate() {
                    for (j, &cc) in cols.iter().enumerate() {
                        match dem.get(rr, cc) {
                            Some(v) => z[i][j] = v as f64,
                            None => return marker,
                        }
                    }
                }
                let dzdx = ((z[0][2] + 2.0 * z[1][2] + z[2][2])
                    - (z[0][0] + 2.0 * z[1][0] + z[2][0]))
                    / scale;
                let dzdy = ((z[2][0] + 2.0 * z[2][1] + z[2][2])
                    - (z[0][0] + 2.0 * z[0][1] + z[0][2]))
                    / scale;
                dzdx.hypot(dzdy).atan().to_degrees() as f32
            })
        })
        .collect();

    RasterGrid::new(w, h, BandKind::Slope, values, dem.nodata, dem.transform)
}

/// Linear map of `v` from `[lo, hi]` to a byte; a collapsed range maps to 0.
pub fn scale_to_byte(v: f32, lo: f32, hi: f32) -> u8 {
    let span = hi as f64 - lo as f64;
    if span <= 0.0 {
        return 0;
    }
    (255.0 * (v as f64 - lo as f64) / span)
        .round()
        .clamp(0.0, 255.0) as u8
}

/// Rescales valid cells linearly onto 0–255 over the grid's own range.
/// Invalid cells become 0; a constant grid becomes all zeros.
pub fn rescale_to_byte(grid: &RasterGrid) -> RasterGrid {
    let (lo, hi) = grid.valid_range().unwrap_or((0.0, 0.0));
    let values = grid
        .values
        .iter()
        .map(|&v| {
            if grid.is_valid_value(v) {
                scale_to_byte(v, lo, hi) as f32
            } else {
                0.0
            }
        })
        .collect();
    RasterGrid {
        values,
        nodata: None,
        ..grid.clone()
    }
}

/// Window geometry for tiling: `ps_a`-pixel windows cut from the mosaic,
/// resized to `ps_r` pixels, consecutive windows sharing `overlap` of their side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchSpec {
    pub ps_a: usize,
    pub ps_r: usize,
    pub overlap: f64,
}

impl PatchSpec {
    pub fn new(ps_a: usize, ps_r: usize, overlap: f64) -> Result<Self> {
        let spec = PatchSpec {
            ps_a,
            ps_r,
            overlap,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.ps_r == 0 || self.ps_r > self.ps_a {
            return Err(Error::invalid(format!(
                "need 0 < ps_r <= ps_a, got ps_a={} ps_r={}",
                self.ps_a, self.ps_r
            )));
        }
        if !(0.0..1.0).contains(&self.overlap) {
            return Err(Error::invalid(format!(
                "overlap must lie in [0, 1), got {}",
                self.overlap
            )));
        }
        let stride = self.ps_a as f64 * (1.0 - self.overlap);
        if stride < 1.0 || (stride - stride.round()).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "stride {stride} is not a positive integer"
            )));
        }
        Ok(())
    }

    pub fn stride(&self) -> usize {
        (self.ps_a as f64 * (1.0 - self.overlap)).round() as usize
    }

    pub fn delta_f(&self) -> f64 {
        self.ps_a as f64 / self.ps_r as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PatchId(pub u32);

impl fmt::Display for PatchId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Where a patch sits in the mosaic and how it was resized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchPlacement {
    pub id: PatchId,
    pub row0: usize,
    pub col0: usize,
    pub ps_a: usize,
    pub ps_r: usize,
}

impl PatchPlacement {
    pub fn delta_f(&self) -> f64 {
        self.ps_a as f64 / self.ps_r as f64
    }
}

/// Min/max source for byte scaling of each window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScaleMode {
    /// Range taken inside each window.
    #[default]
    PerPatch,
    /// Range taken over the whole mosaic.
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChannelLayout {
    /// Distinct intensity, elevation and slope channels.
    Fused,
    /// One band copied into all three channels.
    Replicated,
}

/// Resized three-channel byte patch; channels are intensity, elevation, slope.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedPatch {
    pub placement: PatchPlacement,
    pub layout: ChannelLayout,
    pub channels: [Vec<u8>; 3],
}

impl FusedPatch {
    pub fn id(&self) -> PatchId {
        self.placement.id
    }

    pub fn side(&self) -> usize {
        self.placement.ps_r
    }

    pub fn delta_f(&self) -> f64 {
        self.placement.delta_f()
    }
}

/// Window offsets along one axis: multiples of `stride` while the window
/// fits, plus a final window anchored at `extent - window` if the last
/// regular one stops short of the edge.
pub fn patch_offsets(extent: usize, window: usize, stride: usize) -> Vec<usize> {
    if extent < window || stride == 0 {
        return Vec::new();
    }
    let last = extent - window;
    let mut offsets: Vec<usize> = (0..=last).step_by(stride).collect();
    if offsets.last() != Some(&last) {
        offsets.push(last);
    }
    offsets
}

/// Row-major placements covering a `width × height` mosaic.
pub fn plan_patches(width: usize, height: usize, spec: &PatchSpec) -> Result<Vec<PatchPlacement>> {
    spec.validate()?;
    if width < spec.ps_a || height < spec.ps_a {
        return Err(Error::GridTooSmall {
            width,
            height,
            min: spec.ps_a,
        });
    }
    let rows = patch_offsets(height, spec.ps_a, spec.stride());
    let cols = patch_offsets(width, spec.ps_a, spec.stride());
    Ok(rows
        .iter()
        .flat_map(|&r| cols.iter().map(move |&c| (r, c)))
        .enumerate()
        .map(|(i, (row0, col0))| PatchPlacement {
            id: PatchId(i as u32),
            row0,
            col0,
            ps_a: spec.ps_a,
            ps_r: spec.ps_r,
        })
        .collect())
}

/// Tiles co-registered intensity, elevation and slope grids into fused
/// patches with per-window byte scaling.
pub fn tile(
    intensity: &RasterGrid,
    elevation: &RasterGrid,
    slope: &RasterGrid,
    spec: &PatchSpec,
) -> Result<Vec<FusedPatch>> {
    tile_with(intensity, elevation, slope, spec, ScaleMode::PerPatch)
}

pub fn tile_with(
    intensity: &RasterGrid,
    elevation: &RasterGrid,
    slope: &RasterGrid,
    spec: &PatchSpec,
    mode: ScaleMode,
) -> Result<Vec<FusedPatch>> {
    if !intensity.same_footprint(elevation) || !intensity.same_footprint(slope) {
        return Err(Error::GridMismatch);
    }
    let placements = plan_patches(intensity.width, intensity.height, spec)?;
    let grids = [intensity, elevation, slope];
    let ranges = grids.map(|g| global_range(g, mode));
    let plan = ResizePlan::new(spec.ps_a, spec.ps_r);
    Ok(placements
        .into_par_iter()
        .map(|p| FusedPatch {
            placement: p,
            layout: ChannelLayout::Fused,
            channels: [0, 1, 2].map(|k| window_bytes(grids[k], &p, ranges[k], &plan)),
        })
        .collect())
}

/// Tiles a single band, copying its bytes into all three channels.
pub fn replicate_single_band(grid: &RasterGrid, spec: &PatchSpec) -> Result<Vec<FusedPatch>> {
    replicate_single_band_with(grid, spec, ScaleMode::PerPatch)
}

pub fn replicate_single_band_with(
    grid: &RasterGrid,
    spec: &PatchSpec,
    mode: ScaleMode,
) -> Result<Vec<FusedPatch>> {
    let placements = plan_patches(grid.width, grid.height, spec)?;
    let range = global_range(grid, mode);
    let plan = ResizePlan::new(spec.ps_a, spec.ps_r);
    Ok(placements
        .into_par_iter()
        .map(|p| {
            let bytes = window_bytes(grid, &p, range, &plan);
            FusedPatch {
                placement: p,
                layout: ChannelLayout::Replicated,
                channels: [bytes.clone(), bytes.clone(), bytes],
            }
        })
        .collect())
}

fn global_range(grid: &RasterGrid, mode: ScaleMode) -> Option<(f32, f32)> {
    match mode {
        ScaleMode::PerPatch => None,
        ScaleMode::Global => Some(grid.valid_range().unwrap_or((0.0, 0.0))),
    }
}

fn window_bytes(
    grid: &RasterGrid,
    p: &PatchPlacement,
    range: Option<(f32, f32)>,
    plan: &ResizePlan,
) -> Vec<u8> {
    let side = p.ps_a;
    let row_slice = |r: usize| {
        let start = (p.row0 + r) * grid.width + p.col0;
        &grid.values[start..start + side]
    };
    let (lo, hi) = range.unwrap_or_else(|| {
        value_range(
            (0..side)
                .flat_map(|r| row_slice(r).iter().copied())
                .filter(|&v| grid.is_valid_value(v)),
        )
        .unwrap_or((0.0, 0.0))
    });
    let mut bytes = Vec::with_capacity(side * side);
    for r in 0..side {
        bytes.extend(row_slice(r).iter().map(|&v| {
            if grid.is_valid_value(v) {
                scale_to_byte(v, lo, hi)
            } else {
                0
            }
        }));
    }
    plan.apply(&bytes)
}

/// Separable box-filter weights for shrinking a square from `from` to `to`
/// pixels; each output pixel averages the source interval it covers.
#[derive(Debug, Clone)]
struct ResizePlan {
    from: usize,
    to: usize,
    taps: Vec<Vec<(usize, f64)>>,
    norm: f64,
}

impl ResizePlan {
    fn new(from: usize, to: usize) -> Self {
        let f = from as f64 / to as f64;
        let taps = (0..to)
            .map(|o| {
                let (a, b) = (o as f64 * f, (o + 1) as f64 * f);
                let first = a.floor() as usize;
                let last = (b.ceil() as usize).min(from);
                (first..last)
                    .filter_map(|i| {
                        let w = b.min((i + 1) as f64) - a.max(i as f64);
                        (w > 0.0).then_some((i, w))
                    })
                    .collect()
            })
            .collect();
        ResizePlan {
            from,
            to,
            taps,
            norm: f * f,
        }
    }

    fn apply(&self, src: &[u8]) -> Vec<u8> {
        if self.from == self.to {
            return src.to_vec();
        }
        let mut horiz = vec![0.0f64; self.from * self.to];
        for r in 0..self.from {
            let row = &src[r * self.from..(r + 1) * self.from];
            let out = &mut horiz[r * self.to..(r + 1) * self.to];
            for (o, taps) in self.taps.iter().enumerate() {
                out[o] = taps.iter().map(|&(i, w)| w * row[i] as f64).sum();
            }
        }
        let mut out = vec![0u8; self.to * self.to];
        for (o_r, taps) in self.taps.iter().enumerate() {
            for o_c in 0..self.to {
                let sum: f64 = taps
                    .iter()
                    .map(|&(i, w)| w * horiz[i * self.to + o_c])
                    .sum();
                out[o_r * self.to + o_c] = (sum / self.norm).round().clamp(0.0, 255.0) as u8;
            }
        }
        out
    }
}

/// Writes a patch as a binary PPM with channels mapped to RGB.
pub fn write_ppm(patch: &FusedPatch, path: &Path) -> Result<()> {
    let side = patch.side();
    let mut buf = Vec::with_capacity(side * side * 3 + 32);
    write!(buf, "P6\n{side} {side}\n255\n").expect("writing to a Vec cannot fail");
    for i in 0..side * side {
        buf.extend(patch.channels.iter().map(|ch| ch[i]));
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gt(res: f64) -> GeoTransform {
        GeoTransform::new(0.0, 0.0, res, 1_737_400.0).unwrap()
    }

    fn grid(w: usize, h: usize, values: Vec<f32>) -> RasterGrid {
        RasterGrid::new(w, h, BandKind::Elevation, values, None, gt(100.0)).unwrap()
    }

    #[test]
    fn header_round_trips_through_text() {
        let h = RasterHeader {
            width: 3,
            height: 2,
            scalar: ScalarType::I16,
            band: BandKind::Elevation,
            nodata: Some(-32768.0),
            transform: GeoTransform::new(-500.0, 1200.0, 59.0, 3_389_500.0).unwrap(),
        };
        assert_eq!(RasterHeader::parse(&h.to_string()).unwrap(), h);
    }

    #[test]
    fn header_rejects_unknown_band() {
        let text = "width=1\nheight=1\nscalar=f32\nband=radar\nx_min=0\ny_max=0\nresolution=1\nbody_radius=1\n";
        let err = RasterHeader::parse(text).unwrap_err();
        assert!(err.contains("radar"), "{err}");
    }

    #[test]
    fn load_reads_row_major_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.raw");
        let g = grid(2, 2, vec![0.0, 1.0, 2.0, 3.0]);
        write_raster(&g, &path, ScalarType::F32).unwrap();
        let back = read_raster(&path).unwrap();
        assert_eq!((back.width(), back.height()), (2, 2));
        assert_eq!(back.values(), &[0.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn load_rejects_short_payload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.raw");
        std::fs::write(&path, [0u8; 12]).unwrap();
        let header = RasterHeader {
            width: 2,
            height: 2,
            scalar: ScalarType::F32,
            band: BandKind::Intensity,
            nodata: None,
            transform: gt(1.0),
        };
        assert!(matches!(
            load_raster(&path, &header),
            Err(Error::DimensionMismatch {
                expected: 4,
                actual: 3
            })
        ));
    }

    #[test]
    fn load_flags_nodata_cells() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.raw");
        let g = RasterGrid::new(
            2,
            1,
            BandKind::Elevation,
            vec![5.0, -9999.0],
            Some(-9999.0),
            gt(1.0),
        )
        .unwrap();
        write_raster(&g, &path, ScalarType::I16).unwrap();
        let back = read_raster(&path).unwrap();
        assert_eq!(back.get(0, 0), Some(5.0));
        assert_eq!(back.get(0, 1), None);
    }

    #[test]
    fn missing_raster_names_the_path() {
        let err = read_raster(Path::new("/nonexistent/dem.raw")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/dem.raw"));
    }

    #[test]
    fn resample_constant_stays_constant() {
        let g = grid(5, 4, vec![7.0; 20]);
        for res in [30.0, 100.0, 250.0] {
            let out = resample(&g, res).unwrap();
            assert!(out.values().iter().all(|&v| v == 7.0));
            assert_eq!(out.transform().resolution, res);
        }
    }

    #[test]
    fn resample_identity_at_same_resolution() {
        let g = grid(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(resample(&g, 100.0).unwrap(), g);
    }

    #[test]
    fn resample_upsamples_bilinearly() {
        // f(col, row) = 2 col + 2 row on the 2×2 source; output centers sit at
        // source coordinates {-0.25, 0.25, 0.75, 1.25}, clamped to [0, 1].
        let g = grid(2, 2, vec![0.0, 2.0, 2.0, 4.0]);
        let out = resample(&g, 50.0).unwrap();
        assert_eq!((out.width(), out.height()), (4, 4));
        let at = |r, c| out.get(r, c).unwrap();
        assert!((at(1, 1) - 1.0).abs() < 1e-6);
        assert!((at(1, 2) - 2.0).abs() < 1e-6);
        assert!((at(2, 1) - 2.0).abs() < 1e-6);
        assert!((at(2, 2) - 3.0).abs() < 1e-6);
        let center_mean = (at(1, 1) + at(1, 2) + at(2, 1) + at(2, 2)) / 4.0;
        assert!((center_mean - 2.0).abs() < 1e-6);
        assert_eq!(at(0, 0), 0.0);
        assert_eq!(at(3, 3), 4.0);
    }

    #[test]
    fn resample_all_nodata_fails() {
        let g = RasterGrid::new(
            2,
            2,
            BandKind::Elevation,
            vec![-1.0; 4],
            Some(-1.0),
            gt(100.0),
        )
        .unwrap();
        assert!(matches!(resample(&g, 50.0), Err(Error::AllNodata)));
    }

    #[test]
    fn slope_requires_elevation_and_size() {
        let small = grid(2, 5, vec![0.0; 10]);
        assert!(matches!(
            compute_slope(&small),
            Err(Error::GridTooSmall { .. })
        ));
        let intensity = RasterGrid::filled(4, 4, BandKind::Intensity, 1.0, gt(1.0)).unwrap();
        assert!(matches!(
            compute_slope(&intensity),
            Err(Error::WrongBand { .. })
        ));
    }

    #[test]
    fn slope_of_flat_dem_is_zero() {
        let s = compute_slope(&grid(6, 5, vec![1234.5; 30])).unwrap();
        assert!(s.values().iter().all(|&v| v == 0.0));
        assert_eq!(s.band(), BandKind::Slope);
    }

    #[test]
    fn slope_of_plane_matches_arctan() {
        for (g, expected) in [(0.5f64, 0.5f64.atan().to_degrees()), (1.0, 45.0)] {
            let dem = RasterGrid::from_fn(8, 8, BandKind::Elevation, gt(100.0), |_, c| {
                (g * c as f64 * 100.0) as f32
            })
            .unwrap();
            let s = compute_slope(&dem).unwrap();
            for r in 1..7 {
                for c in 1..7 {
                    let v = s.get(r, c).unwrap() as f64;
                    assert!((v - expected).abs() < 0.01, "{v} vs {expected}");
                }
            }
        }
    }

    #[test]
    fn slope_propagates_nodata() {
        let mut values = vec![10.0f32; 25];
        values[12] = -9999.0;
        let dem =
            RasterGrid::new(5, 5, BandKind::Elevation, values, Some(-9999.0), gt(1.0)).unwrap();
        let s = compute_slope(&dem).unwrap();
        for r in 1..4 {
            for c in 1..4 {
                assert_eq!(s.get(r, c), None);
            }
        }
        assert_eq!(s.get(0, 0), Some(0.0));
    }

    #[test]
    fn rescale_examples() {
        let two = rescale_to_byte(&grid(2, 1, vec![0.0, 10.0]));
        assert_eq!(two.values(), &[0.0, 255.0]);
        let three = rescale_to_byte(&grid(3, 1, vec![0.0, 5.0, 10.0]));
        assert_eq!(three.values(), &[0.0, 128.0, 255.0]);
        let flat = rescale_to_byte(&grid(3, 1, vec![4.0; 3]));
        assert_eq!(flat.values(), &[0.0; 3]);
    }

    #[test]
    fn rescale_maps_nodata_to_zero() {
        let g = RasterGrid::new(
            3,
            1,
            BandKind::Elevation,
            vec![-5.0, 0.0, 5.0],
            Some(-5.0),
            gt(1.0),
        )
        .unwrap();
        assert_eq!(rescale_to_byte(&g).values(), &[0.0, 0.0, 255.0]);
    }

    #[test]
    fn patch_spec_validation() {
        assert!(PatchSpec::new(1024, 512, 0.5).is_ok());
        assert!(PatchSpec::new(512, 1024, 0.5).is_err());
        assert!(PatchSpec::new(1024, 512, 1.0).is_err());
        assert!(PatchSpec::new(5, 5, 0.5).is_err());
        assert_eq!(PatchSpec::new(4096, 512, 0.5).unwrap().delta_f(), 8.0);
    }

    #[test]
    fn offsets_enumerate_stride_positions() {
        assert_eq!(patch_offsets(2048, 1024, 512), vec![0, 512, 1024]);
        assert_eq!(patch_offsets(1024, 1024, 512), vec![0]);
        assert_eq!(patch_offsets(1300, 1024, 512), vec![0, 276]);
        assert_eq!(patch_offsets(10, 4, 4), vec![0, 4, 6]);
        assert!(patch_offsets(100, 128, 64).is_empty());
    }

    #[test]
    fn tiling_2048_mosaic_gives_nine_patches() {
        let g = RasterGrid::filled(2048, 2048, BandKind::Elevation, 1.0, gt(100.0)).unwrap();
        let spec = PatchSpec::new(1024, 512, 0.5).unwrap();
        let placements = plan_patches(2048, 2048, &spec).unwrap();
        assert_eq!(placements.len(), 9);
        let patches = tile(&g, &g, &g, &spec).unwrap();
        assert_eq!(patches.len(), 9);
        assert!(patches.iter().all(|p| p.delta_f() == 2.0));
    }

    #[test]
    fn tiling_rejects_mismatched_or_small_grids() {
        let a = RasterGrid::filled(64, 64, BandKind::Intensity, 1.0, gt(100.0)).unwrap();
        let b = RasterGrid::filled(64, 32, BandKind::Elevation, 1.0, gt(100.0)).unwrap();
        let spec = PatchSpec::new(32, 16, 0.5).unwrap();
        assert!(matches!(tile(&a, &b, &a, &spec), Err(Error::GridMismatch)));
        let big = PatchSpec::new(128, 64, 0.5).unwrap();
        assert!(matches!(
            tile(&a, &a, &a, &big),
            Err(Error::GridTooSmall { .. })
        ));
    }

    #[test]
    fn area_downsample_averages_blocks() {
        let plan = ResizePlan::new(4, 2);
        let src: Vec<u8> = vec![0, 2, 10, 10, 4, 2, 10, 10, 0, 0, 255, 255, 0, 0, 255, 255];
        assert_eq!(plan.apply(&src), vec![2, 10, 0, 255]);
        let odd = ResizePlan::new(3, 2);
        assert_eq!(odd.apply(&[90; 9]), vec![90; 4]);
    }

    #[test]
    fn single_band_replicates_channels() {
        let g = RasterGrid::from_fn(64, 64, BandKind::Elevation, gt(100.0), |r, c| {
            (r * 3 + c) as f32
        })
        .unwrap();
        let patches = replicate_single_band(&g, &PatchSpec::new(32, 16, 0.5).unwrap()).unwrap();
        assert_eq!(patches.len(), 9);
        for p in &patches {
            assert_eq!(p.layout, ChannelLayout::Replicated);
            assert_eq!(p.channels[0], p.channels[1]);
            assert_eq!(p.channels[1], p.channels[2]);
        }
        let flat = RasterGrid::filled(32, 32, BandKind::Elevation, 3.0, gt(100.0)).unwrap();
        let one = replicate_single_band(&flat, &PatchSpec::new(32, 16, 0.5).unwrap()).unwrap();
        assert_eq!(one.len(), 1);
        assert!(one[0].channels.iter().all(|ch| ch.iter().all(|&b| b == 0)));
    }

    #[test]
    fn global_scaling_uses_mosaic_range() {
        let g = RasterGrid::from_fn(8, 4, BandKind::Intensity, gt(1.0), |_, c| c as f32).unwrap();
        let spec = PatchSpec::new(4, 4, 0.5).unwrap();
        let local = replicate_single_band_with(&g, &spec, ScaleMode::PerPatch).unwrap();
        let global = replicate_single_band_with(&g, &spec, ScaleMode::Global).unwrap();
        assert_eq!(&local[0].channels[0][..4], &[0, 85, 170, 255]);
        assert_eq!(&global[0].channels[0][..4], &[0, 36, 73, 109]);
    }

    #[test]
    fn ppm_has_header_and_rgb_payload() {
        let dir = tempfile::tempdir().unwrap();
        let g = RasterGrid::filled(4, 4, BandKind::Intensity, 1.0, gt(1.0)).unwrap();
        let patch = &replicate_single_band(&g, &PatchSpec::new(4, 2, 0.5).unwrap()).unwrap()[0];
        let path = dir.path().join("p.ppm");
        write_ppm(patch, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"P6\n2 2\n255\n"));
        assert_eq!(bytes.len(), 11 + 12);
    }
}
