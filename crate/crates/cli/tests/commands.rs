mod common;

use std::collections::BTreeMap;
use std::fs;

use common::*;
use crater_core::raster::{
    read_raster, write_raster, BandKind, GeoTransform, RasterGrid, ScalarType,
};

#[test]
fn slope_of_flat_and_planar_dems() {
    let dir = tempfile::tempdir().unwrap();
    let gt = GeoTransform::new(0.0, 0.0, 10.0, MOON).unwrap();
    let flat = RasterGrid::filled(16, 16, BandKind::Elevation, 5.0, gt).unwrap();
    write_raster(&flat, &dir.path().join("flat.raw"), ScalarType::F32).unwrap();
    let plane =
        RasterGrid::from_fn(16, 16, BandKind::Elevation, gt, |_, c| 5.0 * c as f32).unwrap();
    write_raster(&plane, &dir.path().join("plane.raw"), ScalarType::F32).unwrap();

    let out = dir.path().join("flat_slope.raw");
    let o = crater(&[
        "slope",
        dir.path().join("flat.raw").to_str().unwrap(),
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let s = read_raster(&out).unwrap();
    assert_eq!(s.band(), BandKind::Slope);
    assert!(s.values().iter().all(|&v| v == 0.0));

    let out = dir.path().join("plane_slope.raw");
    let o = crater(&[
        "slope",
        dir.path().join("plane.raw").to_str().unwrap(),
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let s = read_raster(&out).unwrap();
    for r in 1..15 {
        for c in 1..15 {
            assert!((s.get(r, c).unwrap() - 26.565).abs() < 0.01);
        }
    }
}

#[test]
fn slope_missing_input_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere.raw");
    let o = crater(&[
        "slope",
        missing.to_str().unwrap(),
        dir.path().join("o.raw").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nowhere.raw"));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(crater(&[]).status.code(), Some(1));
    assert_eq!(crater(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(crater(&["run"]).status.code(), Some(1));
    assert_eq!(
        crater(&["run", "--config", "x.toml", "--m", "ten"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(crater(&["--help"]).status.code(), Some(0));
}

#[test]
fn bad_config_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "unknown_key = 3\n[rasters]\n").unwrap();
    assert_eq!(crater_with_config(&cfg, "run", &[]).status.code(), Some(2));
    let missing = dir.path().join("absent.toml");
    let o = crater_with_config(&missing, "run", &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("absent.toml"));
}

#[test]
fn tile_writes_patches_and_index() {
    let dir = tempfile::tempdir().unwrap();
    let gt = GeoTransform::new(0.0, 204_800.0, S, MOON).unwrap();
    let a = RasterGrid::from_fn(2048, 2048, BandKind::Intensity, gt, |r, c| {
        ((r + c) % 200) as f32
    })
    .unwrap();
    write_raster(&a, &dir.path().join("wac.raw"), ScalarType::U8).unwrap();
    let config = dir.path().join("tile.toml");
    fs::write(
        &config,
        r#"
[rasters]
intensity = "wac.raw"
mode = "single"

[[bands]]
name = "small"
max_km = 20.0
ps_a = 1024
ps_r = 512
"#,
    )
    .unwrap();
    let o = crater_with_config(&config, "tile", &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let index = fs::read_to_string(dir.path().join("out/patch_index.csv")).unwrap();
    let rows: Vec<&str> = index.lines().collect();
    assert_eq!(rows[0], "patch_id,row0,col0,ps_a,ps_r,delta_f");
    assert_eq!(rows.len(), 10);
    assert_eq!(rows[9], "8,1024,1024,1024,512,2");

    let ppm = fs::read(dir.path().join("out/patches/patch_00004.ppm")).unwrap();
    let header = b"P6\n512 512\n255\n";
    assert_eq!(&ppm[..header.len()], header);
    assert!(ppm[header.len()..]
        .chunks(3)
        .all(|px| px[0] == px[1] && px[1] == px[2]));
}

#[test]
fn tile_rejects_mismatched_grids() {
    let dir = tempfile::tempdir().unwrap();
    let gt = GeoTransform::new(0.0, 0.0, S, MOON).unwrap();
    write_raster(
        &RasterGrid::filled(64, 64, BandKind::Intensity, 1.0, gt).unwrap(),
        &dir.path().join("a.raw"),
        ScalarType::U8,
    )
    .unwrap();
    write_raster(
        &RasterGrid::filled(32, 64, BandKind::Elevation, 1.0, gt).unwrap(),
        &dir.path().join("b.raw"),
        ScalarType::F32,
    )
    .unwrap();
    let config = dir.path().join("c.toml");
    fs::write(
        &config,
        "[rasters]\nintensity = \"a.raw\"\nelevation = \"b.raw\"\n[[bands]]\nname = \"t\"\nps_a = 32\nps_r = 16\n",
    )
    .unwrap();
    let o = crater_with_config(&config, "tile", &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn exact_synthetic_run_scores_perfectly() {
    let ws = Workspace::new("");
    let o = crater_with_config(&ws.config(), "run", &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let m = read_json(&ws.path("out/metrics.json"));
    assert_eq!(m["metrics"]["tp"], 36);
    assert_eq!(m["metrics"]["fp"], 0);
    assert_eq!(m["metrics"]["fn_"], 0);
    assert_eq!(m["metrics"]["scores"]["precision"], 1.0);
    assert_eq!(m["metrics"]["scores"]["recall"], 1.0);

    let no_nms = crater_with_config(
        &ws.config(),
        "run",
        &["--no-nms", "--out", ws.path("raw").to_str().unwrap()],
    );
    assert!(no_nms.status.success());
    let r = read_json(&ws.path("raw/metrics.json"));
    assert!(r["metrics"]["n_detections"].as_u64().unwrap() > 36);
    assert_eq!(r["delta"], serde_json::Value::Null);
}

#[test]
fn manifest_lists_every_output_with_its_digest() {
    let ws = Workspace::new("");
    assert!(crater_with_config(&ws.config(), "run", &[])
        .status
        .success());
    let manifest = read_json(&ws.path("out/manifest.json"));
    let listed: BTreeMap<String, String> = manifest["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|d| {
            (
                d["path"].as_str().unwrap().to_string(),
                d["sha256"].as_str().unwrap().to_string(),
            )
        })
        .collect();
    let mut on_disk = 0;
    for entry in fs::read_dir(ws.path("out")).unwrap() {
        let path = entry.unwrap().path();
        if path.file_name().unwrap() == "manifest.json" {
            continue;
        }
        on_disk += 1;
        use sha2::Digest;
        let digest = hex::encode(sha2::Sha256::digest(fs::read(&path).unwrap()));
        assert_eq!(
            listed.get(path.to_str().unwrap()),
            Some(&digest),
            "{}",
            path.display()
        );
    }
    assert_eq!(on_disk, listed.len());
    let inputs = manifest["inputs"].as_array().unwrap();
    assert!(inputs
        .iter()
        .any(|d| d["path"].as_str().unwrap().ends_with("catalog.csv")));
    assert!(inputs
        .iter()
        .any(|d| d["path"].as_str().unwrap().ends_with("dem.raw.hdr")));
    assert!(manifest["stages"].as_array().unwrap().len() >= 4);
}

#[test]
fn identical_seed_gives_identical_files() {
    let noise = "[detector.noise]\ncenter_jitter_px = 1.5\nradius_jitter_frac = 0.1\nfalse_positive_rate = 1.0\nmiss_rate = 0.1\n";
    let ws = Workspace::new(noise);
    let a = ws.path("a");
    let b = ws.path("b");
    let c = ws.path("c");
    assert!(
        crater_with_config(&ws.config(), "run", &["--out", a.to_str().unwrap()])
            .status
            .success()
    );
    assert!(
        crater_with_config(&ws.config(), "run", &["--out", b.to_str().unwrap()])
            .status
            .success()
    );
    assert!(crater_with_config(
        &ws.config(),
        "run",
        &["--out", c.to_str().unwrap(), "--seed", "12"]
    )
    .status
    .success());
    for f in [
        "global_detections.csv",
        "patch_detections.csv",
        "metrics.json",
    ] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    assert_ne!(
        fs::read(a.join("patch_detections.csv")).unwrap(),
        fs::read(c.join("patch_detections.csv")).unwrap()
    );
}

#[test]
fn external_detections_against_frozen_fixture() {
    // Patches are 256 px windows on a 128 px stride, shrunk to 128 px;
    // patch ids run row-major over a 7×7 layout.
    let ws = Workspace::new("");
    fs::write(
        ws.path("dets.csv"),
        "patch_id,x1,y1,x2,y2,score
0,42.5,42.5,57.5,57.5,0.9
0,43.5,42.5,58.5,57.5,0.8
0,0,10,8,18,0.95
8,53.5,53.5,78.5,78.5,0.85
8,100,100,110,110,0.5
48,67.5,58.5,82.5,73.5,0.7
",
    )
    .unwrap();
    ws.write_config("[detector]\nkind = \"external\"\npath = \"dets.csv\"\n");
    let o = crater_with_config(&ws.config(), "run", &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let m = read_json(&ws.path("out/metrics.json"))["metrics"].clone();
    assert_eq!(
        (m["tp"].as_u64(), m["fp"].as_u64(), m["fn_"].as_u64()),
        (Some(2), Some(2), Some(34))
    );
    let s = &m["scores"];
    assert_eq!(s["precision"].as_f64().unwrap(), 0.5);
    assert!((s["recall"].as_f64().unwrap() - 2.0 / 36.0).abs() < 1e-12);
    assert!((s["f1"].as_f64().unwrap() - 0.1).abs() < 1e-12);
    let global = fs::read_to_string(ws.path("out/global_detections.csv")).unwrap();
    assert_eq!(global.lines().count(), 5);

    fs::write(
        ws.path("dets.csv"),
        "patch_id,x1,y1,x2,y2,score\n99,1,1,2,2,0.5\n",
    )
    .unwrap();
    let o = crater_with_config(&ws.config(), "run", &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("patch 99"));
}

#[test]
fn gridsearch_cells_and_errors() {
    let ws =
        Workspace::new("[gridsearch]\nm_values = [2]\ndeltas = [0.3]\ninclude_no_nms = false\n");
    let o = crater_with_config(&ws.config(), "gridsearch", &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = fs::read_to_string(ws.path("out/gridsearch.csv")).unwrap();
    assert_eq!(table.lines().count(), 2);
    assert!(table.lines().nth(1).unwrap().starts_with("2,0.3,36,0,0,"));
    let best = read_json(&ws.path("out/gridsearch_best.json"));
    assert_eq!(best["m"], 2);

    ws.write_config("[gridsearch]\ndeltas = []\n");
    assert_eq!(
        crater_with_config(&ws.config(), "gridsearch", &[])
            .status
            .code(),
        Some(2)
    );

    ws.write_config("");
    assert!(crater_with_config(&ws.config(), "gridsearch", &[])
        .status
        .success());
    let table = fs::read_to_string(ws.path("out/gridsearch.csv")).unwrap();
    assert_eq!(table.lines().count(), 25);
}

#[test]
fn crossmatch_partitions_detections() {
    let ws = Workspace::new("");
    let o = crater_with_config(&ws.config(), "detect", &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut dets = fs::read_to_string(ws.path("out/patch_detections.csv")).unwrap();
    dets.push_str("8,100,100,110,110,0.5\n");
    fs::write(ws.path("dets.csv"), dets).unwrap();

    // A holds the first 30 lattice craters, B the last 10 (four shared).
    let gt = transform();
    let craters = layout();
    crater_core::catalog::write_catalog(
        &catalog_from("a", &craters[..30], &gt),
        &ws.path("catalog.csv"),
    )
    .unwrap();
    crater_core::catalog::write_catalog(&catalog_from("b", &craters[26..], &gt), &ws.path("b.csv"))
        .unwrap();
    ws.write_config("[detector]\nkind = \"external\"\npath = \"dets.csv\"\n");
    let text = fs::read_to_string(ws.config()).unwrap().replace(
        "schema = \"native\"",
        "schema = \"native\"\ncompare = \"b.csv\"",
    );
    fs::write(ws.config(), text).unwrap();

    let o = crater_with_config(&ws.config(), "crossmatch", &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = read_json(&ws.path("out/crossmatch_summary.json"));
    assert_eq!(summary["detections"], 37);
    assert_eq!(
        (
            summary["known"].as_u64(),
            summary["confirmed_new"].as_u64(),
            summary["unverified"].as_u64()
        ),
        (Some(30), Some(6), Some(1))
    );
    let rows = fs::read_to_string(ws.path("out/crossmatch.csv")).unwrap();
    assert_eq!(rows.lines().count(), 38);
}
