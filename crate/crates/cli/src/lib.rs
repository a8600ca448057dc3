//! Command-line driver for the crater pipeline. Every stage reads one TOML
//! config; flags override single fields of it.

pub mod commands;
pub mod config;
pub mod manifest;

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::{Overrides, PipelineConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "crater",
    version,
    about = "Crater detection post-processing and evaluation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Derive a slope raster (degrees) from a DEM.
    Slope { dem: PathBuf, out: PathBuf },
    /// Cut the mosaic into resized patches and write the patch index.
    Tile(ConfigArgs),
    /// Dump per-patch detections of the synthetic detector.
    Detect(ConfigArgs),
    /// Run the whole pipeline and score it against the catalog.
    Run(ConfigArgs),
    /// Score every (m, delta) pair of the configured grid.
    Gridsearch(ConfigArgs),
    /// Split detections into known, confirmed-new and unverified craters.
    Crossmatch(ConfigArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    #[arg(long, value_name = "N")]
    pub workers: Option<usize>,
    /// Boundary margin in resized-patch pixels.
    #[arg(long, value_name = "N")]
    pub m: Option<u32>,
    /// NMS IOU threshold.
    #[arg(long, value_name = "X")]
    pub delta: Option<f64>,
    #[arg(long)]
    pub no_nms: bool,
    /// IOU needed for a detection to count as a match.
    #[arg(long, value_name = "X")]
    pub u: Option<f64>,
    #[arg(long, value_name = "X")]
    pub size_floor_km: Option<f64>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

impl ConfigArgs {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            workers: self.workers,
            m: self.m,
            delta: self.delta,
            no_nms: self.no_nms,
            u: self.u,
            size_floor_km: self.size_floor_km,
            out: self.out.clone(),
        }
    }

    /// Loads the config file and applies the flag overrides.
    pub fn load(&self) -> anyhow::Result<PipelineConfig> {
        let mut cfg = PipelineConfig::load(&self.config)?;
        cfg.apply(&self.overrides());
        Ok(cfg)
    }
}

fn pct(v: f64) -> String {
    format!("{:.2}%", 100.0 * v)
}

struct Out<'a>(&'a PipelineConfig);

impl fmt::Display for Out<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0.output_dir.display())
    }
}

pub fn execute(command: &Command) -> anyhow::Result<()> {
    match command {
        Command::Slope { dem, out } => {
            let slope = commands::cmd_slope(dem, out)?;
            println!(
                "wrote {} ({}x{})",
                out.display(),
                slope.width(),
                slope.height()
            );
        }
        Command::Tile(a) => {
            let cfg = a.load()?;
            let t = commands::cmd_tile(&cfg)?;
            println!("{} patches, index {}", t.patches, t.index_path.display());
        }
        Command::Detect(a) => {
            let cfg = a.load()?;
            let dets = commands::cmd_detect(&cfg)?;
            let n: usize = dets.values().map(Vec::len).sum();
            println!(
                "{n} detections over {} patches in {}",
                dets.len(),
                Out(&cfg)
            );
        }
        Command::Run(a) => {
            let cfg = a.load()?;
            let r = commands::cmd_run(&cfg)?;
            println!("{}", r.metrics.summary());
            if let (Some(mean), Some(std)) =
                (r.localization.mean_iou_pct, r.localization.std_iou_pct)
            {
                println!(
                    "matched IOU {mean:.2}% ± {std:.2}% over {}",
                    r.localization.n_matched
                );
            }
            println!("outputs in {}", Out(&cfg));
        }
        Command::Gridsearch(a) => {
            let cfg = a.load()?;
            let g = commands::cmd_gridsearch(&cfg)?;
            print!("{}", g.summary());
        }
        Command::Crossmatch(a) => {
            let cfg = a.load()?;
            let r = commands::cmd_crossmatch(&cfg)?;
            let (k, n, u) = r.counts();
            let total = (k + n + u).max(1) as f64;
            println!(
                "known {k} ({})  confirmed new {n} ({})  unverified {u} ({})",
                pct(k as f64 / total),
                pct(n as f64 / total),
                pct(u as f64 / total)
            );
        }
    }
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(&cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_DATA
        }
    }
}
