//! Crater detection post-processing on planetary orthomosaics: raster
//! preparation and tiling, patch-to-map georeferencing, catalog handling,
//! detector adapters, boundary filtering and NMS, and set-level evaluation.

pub mod bbox;
pub mod catalog;
pub mod detector;
pub mod error;
pub mod eval;
pub mod geo;
pub mod postprocess;
pub mod raster;

pub use bbox::{BBox, BoxIndex};
pub use catalog::{Catalog, CatalogCrater, ColumnSchema};
pub use detector::{Detection, DetectionMap, Detector, NoiseConfig, SyntheticDetector};
pub use error::{Error, Result};
pub use eval::{EvalConfig, GridSpec, MetricsReport};
pub use geo::{MapCrater, PatchFrame, PixelCrater};
pub use postprocess::{BoundaryFilterConfig, GlobalDetection, NmsConfig, PatchIndex};
pub use raster::{
    BandKind, ChannelLayout, FusedPatch, GeoTransform, PatchId, PatchPlacement, PatchSpec,
    RasterGrid, ScaleMode,
};
