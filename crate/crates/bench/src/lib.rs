//! Input generators shared by the benchmarks.

use crater_core::bbox::BBox;
use crater_core::postprocess::{GlobalDetection, Provenance};
use crater_core::raster::{BandKind, GeoTransform, PatchId, RasterGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn transform(resolution: f64) -> GeoTransform {
    GeoTransform::new(0.0, 0.0, resolution, 1_737_400.0).expect("valid transform")
}

/// `n` random boxes over a square of `span` meters, sides up to `max_side`.
pub fn random_detections(n: usize, span: f64, max_side: f64, seed: u64) -> Vec<GlobalDetection> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let (x, y) = (rng.random_range(0.0..span), rng.random_range(0.0..span));
            let (w, h) = (
                rng.random_range(10.0..max_side),
                rng.random_range(10.0..max_side),
            );
            let bbox = BBox::new(x, y, x + w, y + h).expect("positive sides");
            GlobalDetection {
                bbox,
                score: rng.random_range(0.0..1.0),
                provenance: Provenance {
                    patch_id: PatchId((i / 100) as u32),
                    index: (i % 100) as u32,
                    pixel_box: bbox,
                },
            }
        })
        .collect()
}

/// Rolling synthetic terrain of `side × side` cells.
pub fn terrain(side: usize, band: BandKind) -> RasterGrid {
    RasterGrid::from_fn(side, side, band, transform(100.0), |r, c| {
        let (x, y) = (c as f32 * 0.013, r as f32 * 0.017);
        (x.sin() * y.cos() * 400.0 + (x * 0.3 + y * 0.2).sin() * 900.0).abs()
    })
    .expect("sized to fit")
}
