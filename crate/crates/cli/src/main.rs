//! `panoscan`: plan scan trajectories, generate and fuse panorama tiles,
//! and evaluate structural diversity, all as deterministic batch runs.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use panoscan_cli::config::{PipelineConfig, RawConfig};
use panoscan_cli::{pipeline, CliError};

#[derive(Parser)]
#[command(name = "panoscan", version, about = "Scan-trajectory panorama pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand; each maps onto a config key and
/// overrides the file value.
#[derive(Args)]
struct Common {
    /// Configuration file (`key = value` lines with dotted sections).
    #[arg(long)]
    config: Option<PathBuf>,

    /// Overrides `io.seed`.
    #[arg(long)]
    seed: Option<u64>,

    /// Overrides `io.out_dir`.
    #[arg(long)]
    out_dir: Option<PathBuf>,

    /// Overrides `scan.mode` (linear or snake).
    #[arg(long)]
    mode: Option<String>,

    /// Overrides `canvas.aspect` (e.g. 8:1; needs canvas.short_side).
    #[arg(long)]
    aspect: Option<String>,

    /// Overrides the enhancer: `identity` or `upscale:K` (K may be
    /// fractional, e.g. upscale:1.5).
    #[arg(long)]
    enhancer: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Plan, generate tiles, select, enhance, fuse, and report.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Fuse tiles already on disk (anchors.txt + block_XXXX.sstf).
    Fuse {
        #[command(flatten)]
        common: Common,
        /// Directory holding the tile blocks.
        #[arg(long)]
        tiles_dir: PathBuf,
    },
    /// Evaluate a fused panorama (style loss and structural diversity).
    Metrics {
        #[command(flatten)]
        common: Common,
        /// Panorama tensor file (SSTF with a rank-3 `panorama` array).
        panorama: PathBuf,
        /// Overrides `metrics.features_dir` (external extractor inputs).
        #[arg(long)]
        features_dir: Option<PathBuf>,
    },
    /// Dump the planned trajectory, windows, blocks, and coverage.
    Inspect {
        #[command(flatten)]
        common: Common,
    },
}

fn load_config(common: &Common, extra: &[(String, String)]) -> Result<PipelineConfig, CliError> {
    let mut raw = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
            RawConfig::parse(&text)?
        }
        None => RawConfig::default(),
    };
    if let Some(seed) = common.seed {
        raw.set("io.seed", &seed.to_string());
    }
    if let Some(dir) = &common.out_dir {
        raw.set("io.out_dir", &dir.display().to_string());
    }
    if let Some(mode) = &common.mode {
        raw.set("scan.mode", mode);
    }
    if let Some(aspect) = &common.aspect {
        raw.set("canvas.aspect", aspect);
    }
    if let Some(enhancer) = &common.enhancer {
        match enhancer.split_once(':') {
            Some((kind, scale)) => {
                raw.set("enhancer.kind", kind);
                raw.set("enhancer.scale", scale);
            }
            None => raw.set("enhancer.kind", enhancer),
        }
    }
    for (k, v) in extra {
        raw.set(k, v);
    }
    PipelineConfig::resolve(&raw)
}

fn run() -> Result<(), CliError> {
    let cli = Cli::parse();
    match cli.command {
        Command::Generate { common } => {
            let config = load_config(&common, &[])?;
            let summary = pipeline::run_generate(&config)?;
            println!(
                "generated {} windows -> {} ({} uncovered cells, peak tile bytes {})",
                summary.windows,
                summary.out_dir.display(),
                summary.uncovered_cells,
                summary.peak_tile_bytes
            );
            Ok(())
        }
        Command::Fuse { common, tiles_dir } => {
            let config = load_config(&common, &[])?;
            let summary = pipeline::run_fuse(&config, &tiles_dir)?;
            println!(
                "fused {} blocks -> {} ({} uncovered cells, peak tile bytes {})",
                summary.windows,
                summary.out_dir.display(),
                summary.uncovered_cells,
                summary.peak_tile_bytes
            );
            Ok(())
        }
        Command::Metrics {
            common,
            panorama,
            features_dir,
        } => {
            let extra = match &features_dir {
                Some(dir) => vec![
                    (
                        "metrics.features_dir".to_string(),
                        dir.display().to_string(),
                    ),
                    ("metrics.extractor".to_string(), "external".to_string()),
                ],
                None => Vec::new(),
            };
            let config = load_config(&common, &extra)?;
            let summary = pipeline::run_metrics(&config, &panorama)?;
            println!(
                "partitioned {} patches of side {}",
                summary.patch_count, summary.patch_side
            );
            print!("{}", summary.report.to_csv());
            Ok(())
        }
        Command::Inspect { common } => {
            let config = load_config(&common, &[])?;
            print!("{}", pipeline::run_inspect(&config)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("panoscan: {err}");
            err.exit_code()
        }
    }
}
