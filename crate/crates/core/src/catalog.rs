//! Ground-truth crater catalogs: delimited-text ingestion with configurable
//! columns, size-band combination, half-open size and region filters, and
//! projection to square boxes in mosaic meters.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bbox::BBox;
use crate::error::{Error, Result};
use crate::geo::lonlat_to_meter;
use crate::raster::GeoTransform;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogCrater {
    pub id: String,
    /// Degrees east.
    pub lon: f64,
    pub lat: f64,
    pub diam_km: f64,
}

impl CatalogCrater {
    pub fn check(&self) -> std::result::Result<(), String> {
        if !self.lon.is_finite() {
            return Err(format!("longitude {} is not finite", self.lon));
        }
        if !(-90.0..=90.0).contains(&self.lat) {
            return Err(format!("latitude {} outside [-90, 90]", self.lat));
        }
        if !(self.diam_km.is_finite() && self.diam_km > 0.0) {
            return Err(format!("diameter {} is not positive", self.diam_km));
        }
        Ok(())
    }

    pub fn radius_m(&self) -> f64 {
        self.diam_km * 500.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    pub name: String,
    pub craters: Vec<CatalogCrater>,
    pub source: String,
}

impl Catalog {
    /// Builds a catalog, rejecting invalid craters and duplicate ids.
    pub fn new(
        name: impl Into<String>,
        craters: Vec<CatalogCrater>,
        source: impl Into<String>,
    ) -> Result<Self> {
        let mut seen = HashSet::new();
        for c in &craters {
            c.check()
                .map_err(|m| Error::invalid(format!("crater {}: {m}", c.id)))?;
            if !seen.insert(c.id.as_str()) {
                return Err(Error::invalid(format!("duplicate crater id {}", c.id)));
            }
        }
        Ok(Catalog {
            name: name.into(),
            craters,
            source: source.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.craters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.craters.is_empty()
    }

    fn derive(&self, craters: Vec<CatalogCrater>, note: String) -> Catalog {
        Catalog {
            name: self.name.clone(),
            craters,
            source: format!("{}; {note}", self.source),
        }
    }
}

/// Column names for one catalog family. Diameter is read in kilometers
/// after multiplying by `diam_to_km`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSchema {
    #[serde(default)]
    pub id: Option<String>,
    pub lon: String,
    pub lat: String,
    pub diam: String,
    #[serde(default = "one")]
    pub diam_to_km: f64,
}

fn one() -> f64 {
    1.0
}

impl ColumnSchema {
    pub fn new(lon: &str, lat: &str, diam: &str) -> Self {
        ColumnSchema {
            id: None,
            lon: lon.into(),
            lat: lat.into(),
            diam: diam.into(),
            diam_to_km: 1.0,
        }
    }

    pub fn with_id(mut self, id: &str) -> Self {
        self.id = Some(id.into());
        self
    }

    /// `Lon,Lat,Diam_km` as in the 20 km+ global lunar list.
    pub fn head() -> Self {
        ColumnSchema::new("Lon", "Lat", "Diam_km")
    }

    /// `LON,LAT,DIAM_KM` as in the 5–20 km lunar list.
    pub fn povilaitis() -> Self {
        ColumnSchema::new("LON", "LAT", "DIAM_KM")
    }

    /// Rim-circle fit columns of the 1 km+ lunar database.
    pub fn robbins() -> Self {
        ColumnSchema::new("LON_CIRC_IMG", "LAT_CIRC_IMG", "DIAM_CIRC_IMG").with_id("CRATER_ID")
    }

    /// `id,lon,lat,diam_km`, the layout [`write_catalog`] produces.
    pub fn native() -> Self {
        ColumnSchema::new("lon", "lat", "diam_km").with_id("id")
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "head" => Some(Self::head()),
            "povilaitis" => Some(Self::povilaitis()),
            "robbins" => Some(Self::robbins()),
            "native" => Some(Self::native()),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LoadedCatalog {
    pub catalog: Catalog,
    pub rows: usize,
    pub rejected: usize,
}

/// Reads a comma-separated catalog with a header row. Rows that fail to
/// parse or violate crater invariants are skipped and counted; the load
/// fails when the rejected fraction exceeds `max_reject_fraction`.
pub fn load_catalog(
    path: &Path,
    schema: &ColumnSchema,
    max_reject_fraction: f64,
) -> Result<LoadedCatalog> {
    let cat_err = |message: String| Error::Catalog {
        path: path.to_path_buf(),
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::io(path, std::io::Error::other(e.to_string())),
            _ => cat_err(e.to_string()),
        })?;
    let headers = reader
        .headers()
        .map_err(|e| cat_err(e.to_string()))?
        .clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| cat_err(format!("missing column `{name}`")))
    };
    let lon_col = column(&schema.lon)?;
    let lat_col = column(&schema.lat)?;
    let diam_col = column(&schema.diam)?;
    let id_col = schema.id.as_deref().map(column).transpose()?;

    let mut craters = Vec::new();
    let mut seen = HashSet::new();
    let (mut rows, mut rejected) = (0usize, 0usize);
    for (i, record) in reader.records().enumerate() {
        rows += 1;
        let parsed = record.map_err(|e| e.to_string()).and_then(|rec| {
            let field = |c: usize| rec.get(c).ok_or_else(|| format!("missing field {c}"));
            let num = |c: usize| {
                field(c)?
                    .parse::<f64>()
                    .map_err(|_| format!("bad number in column {c}"))
            };
            let crater = CatalogCrater {
                id: match id_col {
                    Some(c) => field(c)?.to_string(),
                    None => format!("{}", i + 1),
                },
                lon: num(lon_col)?,
                lat: num(lat_col)?,
                diam_km: num(diam_col)? * schema.diam_to_km,
            };
            crater.check()?;
            Ok(crater)
        });
        match parsed {
            Ok(c) if seen.insert(c.id.clone()) => craters.push(c),
            Ok(c) => {
                log::debug!("{}: row {}: duplicate id {}", path.display(), i + 2, c.id);
                rejected += 1;
            }
            Err(msg) => {
                log::debug!("{}: row {}: {msg}", path.display(), i + 2);
                rejected += 1;
            }
        }
    }
    if rows > 0 && rejected as f64 / rows as f64 > max_reject_fraction {
        return Err(cat_err(format!(
            "{rejected} of {rows} rows rejected, above tolerance {max_reject_fraction}"
        )));
    }
    if rejected > 0 {
        log::warn!("{}: rejected {rejected} of {rows} rows", path.display());
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(LoadedCatalog {
        catalog: Catalog {
            name,
            craters,
            source: path.display().to_string(),
        },
        rows,
        rejected,
    })
}

/// Writes `id,lon,lat,diam_km` rows plus a `<path>.provenance.json` sidecar.
pub fn write_catalog(cat: &Catalog, path: &Path) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    let io = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    w.write_record(["id", "lon", "lat", "diam_km"])
        .map_err(io)?;
    for c in &cat.craters {
        w.write_record([
            c.id.clone(),
            c.lon.to_string(),
            c.lat.to_string(),
            c.diam_km.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;

    let sidecar = provenance_path(path);
    let meta = serde_json::json!({
        "name": cat.name,
        "source": cat.source,
        "count": cat.craters.len(),
    });
    let text = serde_json::to_string_pretty(&meta).expect("json value serializes");
    fs::write(&sidecar, text + "\n").map_err(|e| Error::io(sidecar, e))
}

pub fn provenance_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".provenance.json");
    PathBuf::from(s)
}

/// One input to [`combine`]: a catalog and the `[dmin_km, dmax_km)` band taken from it.
#[derive(Debug, Clone)]
pub struct CatalogPart {
    pub catalog: Catalog,
    pub dmin_km: f64,
    pub dmax_km: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Combined {
    pub catalog: Catalog,
    /// Pairs of parts whose size bands overlap.
    pub warnings: Vec<String>,
}

/// Union of each part restricted to its size band. Ids become `name:id`.
pub fn combine(parts: &[CatalogPart]) -> Result<Combined> {
    if parts.is_empty() {
        return Err(Error::invalid("combine needs at least one catalog"));
    }
    let mut warnings = Vec::new();
    for (i, a) in parts.iter().enumerate() {
        for b in &parts[i + 1..] {
            let a_hi = a.dmax_km.unwrap_or(f64::INFINITY);
            let b_hi = b.dmax_km.unwrap_or(f64::INFINITY);
            if a.dmin_km < b_hi && b.dmin_km < a_hi {
                let msg = format!(
                    "size bands of `{}` and `{}` overlap",
                    a.catalog.name, b.catalog.name
                );
                log::warn!("{msg}");
                warnings.push(msg);
            }
        }
    }
    let craters = parts
        .iter()
        .flat_map(|p| {
            filter_by_size(&p.catalog, p.dmin_km, p.dmax_km)
                .craters
                .into_iter()
                .map(move |c| CatalogCrater {
                    id: format!("{}:{}", p.catalog.name, c.id),
                    ..c
                })
        })
        .collect::<Vec<_>>();
    let name = parts
        .iter()
        .map(|p| p.catalog.name.as_str())
        .collect::<Vec<_>>()
        .join("+");
    let source = parts
        .iter()
        .map(|p| match p.dmax_km {
            Some(hi) => format!("{} [{}, {}) km", p.catalog.name, p.dmin_km, hi),
            None => format!("{} >= {} km", p.catalog.name, p.dmin_km),
        })
        .collect::<Vec<_>>()
        .join(", ");
    let mut seen = HashSet::new();
    if let Some(dup) = craters.iter().find(|c| !seen.insert(c.id.as_str())) {
        return Err(Error::invalid(format!(
            "duplicate id {} after namespacing; part names must differ",
            dup.id
        )));
    }
    Ok(Combined {
        catalog: Catalog {
            name,
            craters,
            source: format!("combined: {source}"),
        },
        warnings,
    })
}

/// Craters with `dmin_km <= diam_km < dmax_km`; `None` leaves the top open.
pub fn filter_by_size(cat: &Catalog, dmin_km: f64, dmax_km: Option<f64>) -> Catalog {
    let hi = dmax_km.unwrap_or(f64::INFINITY);
    let craters = cat
        .craters
        .iter()
        .filter(|c| c.diam_km >= dmin_km && c.diam_km < hi)
        .cloned()
        .collect();
    cat.derive(craters, format!("diameter in [{dmin_km}, {hi}) km"))
}

/// Half-open lon/lat window in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub lon_min: f64,
    pub lon_max: f64,
    pub lat_min: f64,
    pub lat_max: f64,
}

impl Region {
    pub fn contains(&self, lon: f64, lat: f64) -> bool {
        lon >= self.lon_min && lon < self.lon_max && lat >= self.lat_min && lat < self.lat_max
    }
}

pub fn filter_by_region(cat: &Catalog, region: &Region) -> Catalog {
    let craters = cat
        .craters
        .iter()
        .filter(|c| region.contains(c.lon, c.lat))
        .cloned()
        .collect();
    cat.derive(
        craters,
        format!(
            "lon [{}, {}) lat [{}, {})",
            region.lon_min, region.lon_max, region.lat_min, region.lat_max
        ),
    )
}

/// Square box of side `diam` around each projected crater center, in order.
pub fn to_boxes(cat: &Catalog, gt: &GeoTransform) -> Result<Vec<BBox>> {
    cat.craters
        .iter()
        .map(|c| {
            let (x, y) = lonlat_to_meter(c.lon, c.lat, gt)?;
            BBox::square(x, y, c.radius_m())
        })
        .collect()
}
