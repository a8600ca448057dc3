//! Pipeline configuration file (TOML). Relative paths resolve against the
//! directory holding the config file.
//!
//! ```toml
//! seed = 42
//! workers = 4
//! output_dir = "out"
//!
//! [geotransform]            # optional; must agree with the raster headers
//! x_min = 0.0
//! y_max = 409600.0
//! resolution = 100.0
//! body_radius = 1737400.0
//!
//! [rasters]
//! intensity = "wac.raw"
//! elevation = "dem.raw"
//! slope = "slope.raw"       # optional, derived from elevation when absent
//! mode = "fused"            # or "single", tiling `single_band` only
//!
//! [[bands]]
//! name = "small"
//! max_km = 20.0
//! ps_a = 1024
//! ps_r = 512
//!
//! [catalog]
//! path = "head.csv"
//! schema = "head"
//!
//! [detector]
//! kind = "synthetic"        # or "external" with `path`
//!
//! [postprocess]
//! m = 10
//! delta = 0.2
//!
//! [eval]
//! u = 0.3
//! size_floor_km = 5.0
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use crater_core::catalog::ColumnSchema;
use crater_core::detector::NoiseConfig;
use crater_core::eval::{EvalConfig, GridSpec};
use crater_core::postprocess::{BoundaryFilterConfig, NmsConfig};
use crater_core::raster::{BandKind, GeoTransform, PatchSpec, ScaleMode};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    /// Worker threads for patch-level stages; all cores when absent.
    pub workers: Option<usize>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub geotransform: Option<GeoTransform>,
    pub rasters: RasterSection,
    #[serde(default = "default_bands")]
    pub bands: Vec<SizeBand>,
    #[serde(default)]
    pub run: RunSection,
    pub catalog: Option<CatalogSection>,
    #[serde(default)]
    pub detector: DetectorSection,
    #[serde(default)]
    pub postprocess: PostprocessSection,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub gridsearch: GridSpec,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_bands() -> Vec<SizeBand> {
    vec![
        SizeBand {
            name: "small".into(),
            min_km: 0.0,
            max_km: Some(20.0),
            ps_a: 1024,
            ps_r: 512,
            overlap: 0.5,
        },
        SizeBand {
            name: "large".into(),
            min_km: 20.0,
            max_km: None,
            ps_a: 4096,
            ps_r: 512,
            overlap: 0.5,
        },
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TileMode {
    #[default]
    Fused,
    Single,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RasterSection {
    pub intensity: Option<PathBuf>,
    pub elevation: Option<PathBuf>,
    pub slope: Option<PathBuf>,
    #[serde(default)]
    pub mode: TileMode,
    /// Band tiled in single mode.
    #[serde(default = "default_single_band")]
    pub single_band: BandKind,
    #[serde(default)]
    pub scale: ScaleMode,
    /// Resample every input to this many meters per pixel before tiling.
    pub target_resolution: Option<f64>,
}

fn default_single_band() -> BandKind {
    BandKind::Intensity
}

/// Crater size range `[min_km, max_km)` and the patch geometry used for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SizeBand {
    pub name: String,
    #[serde(default)]
    pub min_km: f64,
    pub max_km: Option<f64>,
    pub ps_a: usize,
    pub ps_r: usize,
    #[serde(default = "default_overlap")]
    pub overlap: f64,
}

fn default_overlap() -> f64 {
    0.5
}

impl SizeBand {
    pub fn patch_spec(&self) -> Result<PatchSpec> {
        PatchSpec::new(self.ps_a, self.ps_r, self.overlap)
            .with_context(|| format!("band `{}`", self.name))
    }

    fn upper(&self) -> f64 {
        self.max_km.unwrap_or(f64::INFINITY)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    /// Name of the size band to process; the first band when absent.
    pub band: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SchemaChoice {
    Preset(String),
    Columns(ColumnSchema),
}

impl Default for SchemaChoice {
    fn default() -> Self {
        SchemaChoice::Preset("native".into())
    }
}

impl SchemaChoice {
    pub fn resolve(&self) -> Result<ColumnSchema> {
        match self {
            SchemaChoice::Preset(name) => ColumnSchema::preset(name)
                .with_context(|| format!("unknown catalog schema preset `{name}`")),
            SchemaChoice::Columns(c) => Ok(c.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatalogSection {
    pub path: PathBuf,
    #[serde(default)]
    pub schema: SchemaChoice,
    #[serde(default = "default_reject_fraction")]
    pub max_reject_fraction: f64,
    /// Secondary catalog used by `crossmatch`.
    pub compare: Option<PathBuf>,
    #[serde(default)]
    pub compare_schema: SchemaChoice,
}

fn default_reject_fraction() -> f64 {
    0.01
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorKind {
    #[default]
    Synthetic,
    External,
}

/// Synthetic detector noise; the seed comes from the top-level `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSection {
    pub center_jitter_px: f64,
    pub radius_jitter_frac: f64,
    pub false_positive_rate: f64,
    pub miss_rate: f64,
    pub spurious_diam_km: (f64, f64),
}

impl Default for NoiseSection {
    fn default() -> Self {
        let n = NoiseConfig::default();
        NoiseSection {
            center_jitter_px: n.center_jitter_px,
            radius_jitter_frac: n.radius_jitter_frac,
            false_positive_rate: n.false_positive_rate,
            miss_rate: n.miss_rate,
            spurious_diam_km: n.spurious_diam_km,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSection {
    #[serde(default)]
    pub kind: DetectorKind,
    /// Detections file for the external detector.
    pub path: Option<PathBuf>,
    pub score_floor: Option<f64>,
    #[serde(default)]
    pub noise: NoiseSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PostprocessSection {
    #[serde(default = "default_m")]
    pub m: u32,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_true")]
    pub nms: bool,
}

fn default_m() -> u32 {
    10
}

fn default_delta() -> f64 {
    0.2
}

fn default_true() -> bool {
    true
}

impl Default for PostprocessSection {
    fn default() -> Self {
        PostprocessSection {
            m: default_m(),
            delta: default_delta(),
            nms: true,
        }
    }
}

impl PostprocessSection {
    pub fn boundary(&self) -> BoundaryFilterConfig {
        BoundaryFilterConfig { m: self.m }
    }

    pub fn nms_config(&self) -> NmsConfig {
        NmsConfig {
            delta: self.delta,
            enabled: self.nms,
        }
    }
}

/// Command-line values that replace individual config fields.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub m: Option<u32>,
    pub delta: Option<f64>,
    pub no_nms: bool,
    pub u: Option<f64>,
    pub size_floor_km: Option<f64>,
    pub out: Option<PathBuf>,
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Reads `path` and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let mut cfg =
            Self::parse(&text).with_context(|| format!("invalid config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.rebase(base);
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        for p in [
            &mut self.rasters.intensity,
            &mut self.rasters.elevation,
            &mut self.rasters.slope,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        if let Some(c) = &mut self.catalog {
            fix(&mut c.path);
            if let Some(p) = &mut c.compare {
                fix(p);
            }
        }
        if let Some(p) = &mut self.detector.path {
            fix(p);
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.workers {
            self.workers = Some(v);
        }
        if let Some(v) = o.m {
            self.postprocess.m = v;
        }
        if let Some(v) = o.delta {
            self.postprocess.delta = v;
        }
        if o.no_nms {
            self.postprocess.nms = false;
        }
        if let Some(v) = o.u {
            self.eval.u = v;
        }
        if let Some(v) = o.size_floor_km {
            self.eval.size_floor_km = Some(v);
        }
        if let Some(v) = &o.out {
            self.output_dir = v.clone();
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers == Some(0) {
            bail!("workers must be at least 1");
        }
        if self.bands.is_empty() {
            bail!("at least one size band is required");
        }
        for b in &self.bands {
            b.patch_spec()?;
            if b.min_km < 0.0 || b.upper() <= b.min_km {
                bail!("band `{}` has an empty size range", b.name);
            }
        }
        for (i, a) in self.bands.iter().enumerate() {
            for b in &self.bands[i + 1..] {
                if a.name == b.name {
                    bail!("duplicate band name `{}`", a.name);
                }
                if a.min_km < b.upper() && b.min_km < a.upper() {
                    bail!("size bands `{}` and `{}` overlap", a.name, b.name);
                }
            }
        }
        self.band()?;
        if let Some(gt) = &self.geotransform {
            gt.validate()?;
        }
        self.postprocess.nms_config().validate()?;
        self.eval.validate()?;
        self.noise().validate()?;
        if self.detector.kind == DetectorKind::External && self.detector.path.is_none() {
            bail!("the external detector needs `detector.path`");
        }
        Ok(())
    }

    pub fn band(&self) -> Result<&SizeBand> {
        match &self.run.band {
            None => self.bands.first().context("no size bands configured"),
            Some(name) => self
                .bands
                .iter()
                .find(|b| &b.name == name)
                .with_context(|| format!("unknown size band `{name}`")),
        }
    }

    pub fn noise(&self) -> NoiseConfig {
        let n = &self.detector.noise;
        NoiseConfig {
            center_jitter_px: n.center_jitter_px,
            radius_jitter_frac: n.radius_jitter_frac,
            false_positive_rate: n.false_positive_rate,
            miss_rate: n.miss_rate,
            seed: self.seed,
            spurious_diam_km: n.spurious_diam_km,
        }
    }

    pub fn catalog(&self) -> Result<&CatalogSection> {
        self.catalog
            .as_ref()
            .context("this command needs a [catalog] section")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        [rasters]
        intensity = "a.raw"
    "#;

    #[test]
    fn defaults_fill_missing_sections() {
        let cfg = PipelineConfig::parse(MINIMAL).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.band().unwrap().ps_a, 1024);
        assert_eq!(cfg.bands[1].ps_a, 4096);
        assert_eq!(cfg.postprocess.nms_config(), NmsConfig::threshold(0.2));
        assert_eq!(cfg.eval.u, 0.3);
        assert_eq!(cfg.gridsearch.m_values, vec![0, 1, 5, 10]);
        assert_eq!(cfg.noise(), NoiseConfig::exact(0));
    }

    #[test]
    fn overrides_replace_fields() {
        let mut cfg = PipelineConfig::parse(MINIMAL).unwrap();
        cfg.apply(&Overrides {
            seed: Some(9),
            m: Some(5),
            no_nms: true,
            size_floor_km: Some(5.0),
            ..Default::default()
        });
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.noise().seed, 9);
        assert_eq!(cfg.postprocess.m, 5);
        assert!(!cfg.postprocess.nms);
        assert_eq!(cfg.eval.size_floor_km, Some(5.0));
    }

    #[test]
    fn overlapping_bands_are_rejected() {
        let text = r#"
            [rasters]
            intensity = "a.raw"
            [[bands]]
            name = "a"
            max_km = 20.0
            ps_a = 1024
            ps_r = 512
            [[bands]]
            name = "b"
            min_km = 10.0
            ps_a = 4096
            ps_r = 512
        "#;
        let err = PipelineConfig::parse(text).unwrap().validate().unwrap_err();
        assert!(err.to_string().contains("overlap"));
    }

    #[test]
    fn schema_preset_or_columns() {
        let text = r#"
            [rasters]
            [catalog]
            path = "c.csv"
            schema = { lon = "X", lat = "Y", diam = "D", diam_to_km = 0.001 }
        "#;
        let cfg = PipelineConfig::parse(text).unwrap();
        let s = cfg.catalog().unwrap().schema.resolve().unwrap();
        assert_eq!(s.lon, "X");
        assert!(SchemaChoice::Preset("robbins".into()).resolve().is_ok());
        assert!(SchemaChoice::Preset("nope".into()).resolve().is_err());
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, MINIMAL).unwrap();
        let cfg = PipelineConfig::load(&path).unwrap();
        assert_eq!(cfg.rasters.intensity.unwrap(), dir.path().join("a.raw"));
        assert_eq!(cfg.output_dir, dir.path().join("out"));
    }

    #[test]
    fn unknown_keys_are_errors() {
        assert!(PipelineConfig::parse("bogus = 1\n[rasters]\n").is_err());
    }
}
