//! Batch pipeline runners behind the CLI subcommands.
//!
//! `generate` streams one temporal block at a time: produce the block's
//! frames, select the consensus frame, enhance it, blend it onto the
//! canvas, and drop it before the next block. Peak resident tile data is
//! therefore one block regardless of how many windows the scan has; the
//! [`TileMemoryMeter`] accounts for it and the manifest records the peak.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use panoscan_core::fusion::{
    accumulate, build_ramp_mask, edge_overlaps, finalize, median_consensus, seam_energy,
    EdgeOverlaps, PanoramaCanvas, TileBlock,
};
use panoscan_core::geom::{Extent, GridCoord};
use panoscan_core::io::{
    export_image, read_pairwise_file, read_tensor_file, write_tensor_file,
};
use panoscan_core::metrics::{
    gsd, intra_style_loss, load_feature_file, partition_patches, ExternalFeatures,
    FallbackExtractor, FeatureExtractor, FeatureMap, MetricReport, PatchGrid,
};
use panoscan_core::tensor::Tensor;
use panoscan_core::trajectory::{anchors_from_text, coverage_report, tap_partition};

use crate::config::{ExtractorKind, OverlapMode, PipelineConfig, SourceKind};
use crate::enhance::build_enhancer;
use crate::source::{prepare_sampler, Source, TextureSource};
use crate::CliError;

/// Accounting hook for live tile buffers.
#[derive(Debug, Default)]
pub struct TileMemoryMeter {
    live: usize,
    peak: usize,
}

impl TileMemoryMeter {
    pub fn alloc(&mut self, bytes: usize) {
        self.live += bytes;
        if self.live > self.peak {
            self.peak = self.live;
        }
    }

    pub fn free(&mut self, bytes: usize) {
        self.live = self.live.saturating_sub(bytes);
    }

    pub fn peak(&self) -> usize {
        self.peak
    }
}

/// What a run produced, for callers and tests.
#[derive(Debug)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub windows: usize,
    pub uncovered_cells: usize,
    pub peak_tile_bytes: usize,
}

fn write_text(path: &Path, content: &str) -> Result<(), CliError> {
    fs::write(path, content).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

fn ensure_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

fn tensor_bytes(t: &Tensor<f32>) -> usize {
    t.len() * std::mem::size_of::<f32>()
}

/// Seam positions implied by a set of anchors: every distinct positive
/// anchor coordinate on each axis, kept in bounds.
fn seam_positions(anchors: &[GridCoord], canvas: Extent) -> (Vec<usize>, Vec<usize>) {
    let mut cols: Vec<usize> = anchors
        .iter()
        .filter(|a| a.w > 0 && (a.w as usize) < canvas.w)
        .map(|a| a.w as usize)
        .collect();
    let mut rows: Vec<usize> = anchors
        .iter()
        .filter(|a| a.h > 0 && (a.h as usize) < canvas.h)
        .map(|a| a.h as usize)
        .collect();
    cols.sort_unstable();
    cols.dedup();
    rows.sort_unstable();
    rows.dedup();
    (cols, rows)
}

fn per_tile_overlaps(
    mode: OverlapMode,
    anchors: &[GridCoord],
    tile: Extent,
    scale_num: u64,
    scale_den: u64,
) -> Result<Vec<EdgeOverlaps>, CliError> {
    let geometric = edge_overlaps(anchors, tile);
    match mode {
        OverlapMode::Auto => Ok(geometric),
        OverlapMode::Fixed(base_width) => {
            let scaled = base_width as u64 * scale_num;
            if !scaled.is_multiple_of(scale_den) {
                return Err(CliError::config(format!(
                    "fusion.overlap ({base_width}) does not scale to an integer"
                )));
            }
            let width = (scaled / scale_den) as usize;
            Ok(geometric
                .into_iter()
                .map(|g| EdgeOverlaps {
                    top: if g.top > 0 { width } else { 0 },
                    bottom: if g.bottom > 0 { width } else { 0 },
                    left: if g.left > 0 { width } else { 0 },
                    right: if g.right > 0 { width } else { 0 },
                })
                .collect())
        }
    }
}

struct ManifestRow {
    t: usize,
    anchor: GridCoord,
    interval: (usize, usize),
    tap_block: usize,
    mcs_index: usize,
    tile_file: String,
}

fn write_manifest(
    path: &Path,
    command: &str,
    config_lines: &[(String, String)],
    rows: &[ManifestRow],
) -> Result<(), CliError> {
    let mut out = String::new();
    writeln!(out, "# panoscan run manifest").unwrap();
    writeln!(out, "created_unix_ms = {}", now_ms()).unwrap();
    writeln!(out, "command = {command}").unwrap();
    for (k, v) in config_lines {
        writeln!(out, "{k} = {v}").unwrap();
    }
    writeln!(out, "[windows]").unwrap();
    writeln!(
        out,
        "# t anchor_h anchor_w interval_start interval_end tap_block mcs_index tile_file"
    )
    .unwrap();
    for r in rows {
        writeln!(
            out,
            "{} {} {} {} {} {} {} {}",
            r.t,
            r.anchor.h,
            r.anchor.w,
            r.interval.0,
            r.interval.1,
            r.tap_block,
            r.mcs_index,
            r.tile_file
        )
        .unwrap();
    }
    write_text(path, &out)
}

fn uncovered_image(flags: &[bool], extent: Extent) -> Tensor<f32> {
    let mut img = Tensor::zeros(&[extent.h, extent.w, 1]);
    for (i, &f) in flags.iter().enumerate() {
        if f {
            img.data_mut()[i] = 1.0;
        }
    }
    img
}

/// Plans, generates, selects, enhances, fuses, and reports, writing every
/// artifact under the configured output directory.
pub fn run_generate(config: &PipelineConfig) -> Result<RunSummary, CliError> {
    let out_dir = config.io.out_dir.clone();
    ensure_dir(&out_dir)?;

    let trajectory = config.trajectory();
    let ratio = config.enhancer.ratio();
    let (num, den) = (ratio.num(), ratio.den());
    let tile_base = config.tile_base;
    let tile_scaled = config.tile_scaled();
    let channels = config.io.channels;

    // abort-before-fusion guard; resolve() already proved this once
    let report = coverage_report(&trajectory, config.canvas_base, tile_base);
    if !report.is_fully_covered() || !report.out_of_bounds().is_empty() {
        return Err(CliError::config(format!(
            "refusing to fuse with coverage gaps: {}",
            report.summary()
        )));
    }

    let scaled_anchors: Vec<GridCoord> = trajectory
        .anchors()
        .iter()
        .map(|&a| ratio.scale_coord(a, "anchor"))
        .collect::<Result<_, _>>()?;
    let tap = tap_partition(&trajectory, config.tap_block_size)?;
    let overlaps = per_tile_overlaps(config.overlap_mode, &scaled_anchors, tile_scaled, num, den)?;
    let enhancer = build_enhancer(config.enhancer);

    let source = match config.source {
        SourceKind::Gradient => Source::Gradient {
            canvas: config.canvas_base,
            channels,
        },
        SourceKind::Texture => Source::Texture {
            tex: TextureSource::new(config.io.seed, channels),
            channels,
        },
        SourceKind::Sampler => {
            let artifacts = prepare_sampler(config)?;
            if artifacts.trained_here {
                let mut curve = String::from("iter,loss\n");
                for (iter, loss) in &artifacts.loss_curve {
                    writeln!(curve, "{iter},{loss}").unwrap();
                }
                write_text(&out_dir.join("loss_curve.csv"), &curve)?;
                write_tensor_file(out_dir.join("checkpoint.sstf"), &artifacts.net.named_arrays())?;
            }
            Source::Sampler(Box::new(crate::source::SamplerSource::new(
                artifacts.net,
                channels,
                config.sampler.euler_steps,
                config.io.seed,
            )))
        }
    };

    let tiles_dir = out_dir.join("tiles");
    if config.io.write_tiles {
        ensure_dir(&tiles_dir)?;
    }

    let mut canvas = PanoramaCanvas::<f32>::new(config.canvas_target, channels);
    let mut meter = TileMemoryMeter::default();
    let mut rows = Vec::with_capacity(trajectory.len());

    for block in tap.blocks() {
        for t in block.first_window..=block.last_window {
            let spec = trajectory.window(t)?;
            let frames = source.block_frames(t, spec.anchor, tile_base, config.frames_per_block)?;
            let frame_bytes = tensor_bytes(&frames[0]);
            meter.alloc(frame_bytes * frames.len());
            let tile_block = TileBlock::new(t, frames, spec.anchor)?;
            let (mcs_index, _) = median_consensus(&tile_block, config.statistic)?;
            let freed = (config.frames_per_block - 1) * frame_bytes;
            let selected = tile_block.take_frame(mcs_index);
            meter.free(freed);

            let enhanced = enhancer.enhance(&selected)?;
            if enhanced.shape() != [tile_scaled.h, tile_scaled.w, channels] {
                return Err(CliError::config(format!(
                    "enhancer {} produced shape {:?}, expected {:?} for window {t}",
                    enhancer.name(),
                    enhanced.shape(),
                    [tile_scaled.h, tile_scaled.w, channels]
                )));
            }
            meter.alloc(tensor_bytes(&enhanced));
            meter.free(frame_bytes);
            drop(selected);

            let tile_file = if config.io.write_tiles {
                let rel = format!("tiles/block_{t:04}.sstf");
                write_tensor_file(
                    out_dir.join(&rel),
                    &[("frame_000".to_string(), enhanced.clone())],
                )?;
                rel
            } else {
                "-".to_string()
            };

            let mask = build_ramp_mask(tile_scaled, overlaps[t - 1])?;
            accumulate(&mut canvas, &enhanced, &mask, scaled_anchors[t - 1]).map_err(|e| {
                CliError::config(format!("window {t}: {e}"))
            })?;
            meter.free(tensor_bytes(&enhanced));

            rows.push(ManifestRow {
                t,
                anchor: scaled_anchors[t - 1],
                interval: (spec.interval_start, spec.interval_end),
                tap_block: block.index,
                mcs_index,
                tile_file,
            });
        }
    }

    let (panorama, uncovered) = finalize(&canvas);
    let (seam_cols, seam_rows) = seam_positions(&scaled_anchors, config.canvas_target);
    let seams = seam_energy(&panorama, &seam_cols, &seam_rows)?;

    write_tensor_file(
        out_dir.join("panorama.sstf"),
        &[("panorama".to_string(), panorama.clone())],
    )?;
    export_image(
        &panorama,
        out_dir.join(if channels == 1 {
            "panorama.pgm"
        } else {
            "panorama.ppm"
        }),
    )?;
    export_image(
        &uncovered_image(uncovered.flags(), config.canvas_target),
        out_dir.join("uncovered.pgm"),
    )?;
    write_text(&out_dir.join("seams.csv"), &seams.to_csv())?;
    write_text(&out_dir.join("trajectory.txt"), &trajectory.to_text())?;
    write_text(&out_dir.join("tap_blocks.txt"), &tap.to_text())?;
    write_text(&out_dir.join("config_resolved.cfg"), &config.to_text())?;

    let enhancer_desc = if ratio.is_one() {
        enhancer.name().to_string()
    } else {
        format!("{} x{}", enhancer.name(), ratio)
    };
    let config_lines = vec![
        ("seed".to_string(), config.io.seed.to_string()),
        ("source".to_string(), source.name().to_string()),
        ("enhancer".to_string(), enhancer_desc),
        (
            "canvas_target".to_string(),
            format!("{} {}", config.canvas_target.h, config.canvas_target.w),
        ),
        (
            "canvas_base".to_string(),
            format!("{} {}", config.canvas_base.h, config.canvas_base.w),
        ),
        (
            "tile_base".to_string(),
            format!("{} {}", tile_base.h, tile_base.w),
        ),
        (
            "tile_scaled".to_string(),
            format!("{} {}", tile_scaled.h, tile_scaled.w),
        ),
        ("channels".to_string(), channels.to_string()),
        ("windows".to_string(), trajectory.len().to_string()),
        (
            "frames_per_block".to_string(),
            config.frames_per_block.to_string(),
        ),
        (
            "tap_block_size".to_string(),
            config.tap_block_size.to_string(),
        ),
        (
            "coverage_min".to_string(),
            report.min_multiplicity().to_string(),
        ),
        (
            "coverage_max".to_string(),
            report.max_multiplicity().to_string(),
        ),
        (
            "uncovered_cells".to_string(),
            uncovered.count().to_string(),
        ),
        (
            "peak_tile_bytes".to_string(),
            meter.peak().to_string(),
        ),
    ];
    write_manifest(&out_dir.join("manifest.txt"), "generate", &config_lines, &rows)?;

    Ok(RunSummary {
        out_dir,
        windows: trajectory.len(),
        uncovered_cells: uncovered.count(),
        peak_tile_bytes: meter.peak(),
    })
}

/// Fuses tiles already on disk: `anchors.txt` (one `t h w` line per block)
/// plus `block_%04d.sstf` files whose arrays are the block's frames.
pub fn run_fuse(config: &PipelineConfig, tiles_dir: &Path) -> Result<RunSummary, CliError> {
    let out_dir = config.io.out_dir.clone();
    ensure_dir(&out_dir)?;

    let anchors_path = tiles_dir.join("anchors.txt");
    let text = fs::read_to_string(&anchors_path)
        .map_err(|e| CliError::io(format!("{}: {e}", anchors_path.display())))?;
    let anchors = anchors_from_text(&text)?;
    if anchors.is_empty() {
        return Err(CliError::config(format!(
            "{}: no anchors",
            anchors_path.display()
        )));
    }

    // first block fixes the tile extent and channel count
    let mut blocks: Vec<Vec<(String, Tensor<f32>)>> = Vec::with_capacity(anchors.len());
    for t in 1..=anchors.len() {
        let path = tiles_dir.join(format!("block_{t:04}.sstf"));
        let arrays = read_tensor_file::<f32, _>(&path)
            .map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
        if arrays.is_empty() {
            return Err(CliError::config(format!(
                "{}: no frame arrays",
                path.display()
            )));
        }
        blocks.push(arrays);
    }
    let first = &blocks[0][0].1;
    if first.rank() != 3 {
        return Err(CliError::config(
            "tile arrays must be rank 3 (h, w, c)".to_string(),
        ));
    }
    let tile = Extent::new(first.shape()[0], first.shape()[1]);
    let channels = first.shape()[2];

    let overlaps = per_tile_overlaps(config.overlap_mode, &anchors, tile, 1, 1)?;
    let mut canvas = PanoramaCanvas::<f32>::new(config.canvas_target, channels);
    let mut meter = TileMemoryMeter::default();
    let mut rows = Vec::with_capacity(anchors.len());

    for (idx, frames) in blocks.into_iter().enumerate() {
        let t = idx + 1;
        let frame_tensors: Vec<Tensor<f32>> = frames.into_iter().map(|(_, f)| f).collect();
        let bytes: usize = frame_tensors.iter().map(tensor_bytes).sum();
        meter.alloc(bytes);
        let block = TileBlock::new(t, frame_tensors, anchors[idx])
            .map_err(|e| CliError::config(format!("block {t}: {e}")))?;
        if block.frame_extent() != tile {
            return Err(CliError::config(format!(
                "block {t}: tile extent {} differs from block 1 ({tile})",
                block.frame_extent()
            )));
        }
        let (mcs_index, _) = median_consensus(&block, config.statistic)?;
        let selected = block.take_frame(mcs_index);
        let mask = build_ramp_mask(tile, overlaps[idx])?;
        accumulate(&mut canvas, &selected, &mask, anchors[idx])
            .map_err(|e| CliError::config(format!("block {t}: {e}")))?;
        meter.free(bytes);

        rows.push(ManifestRow {
            t,
            anchor: anchors[idx],
            interval: (0, 0),
            tap_block: (idx / config.tap_block_size) + 1,
            mcs_index,
            tile_file: format!("block_{t:04}.sstf"),
        });
    }

    let (panorama, uncovered) = finalize(&canvas);
    let (seam_cols, seam_rows) = seam_positions(&anchors, config.canvas_target);
    let seams = seam_energy(&panorama, &seam_cols, &seam_rows)?;

    write_tensor_file(
        out_dir.join("panorama.sstf"),
        &[("panorama".to_string(), panorama.clone())],
    )?;
    export_image(
        &panorama,
        out_dir.join(if channels == 1 {
            "panorama.pgm"
        } else {
            "panorama.ppm"
        }),
    )?;
    export_image(
        &uncovered_image(uncovered.flags(), config.canvas_target),
        out_dir.join("uncovered.pgm"),
    )?;
    write_text(&out_dir.join("seams.csv"), &seams.to_csv())?;

    let config_lines = vec![
        ("tiles_dir".to_string(), tiles_dir.display().to_string()),
        (
            "canvas_target".to_string(),
            format!("{} {}", config.canvas_target.h, config.canvas_target.w),
        ),
        ("tile".to_string(), format!("{} {}", tile.h, tile.w)),
        ("channels".to_string(), channels.to_string()),
        ("windows".to_string(), anchors.len().to_string()),
        (
            "uncovered_cells".to_string(),
            uncovered.count().to_string(),
        ),
        ("peak_tile_bytes".to_string(), meter.peak().to_string()),
    ];
    write_manifest(&out_dir.join("manifest.txt"), "fuse", &config_lines, &rows)?;

    Ok(RunSummary {
        out_dir,
        windows: anchors.len(),
        uncovered_cells: uncovered.count(),
        peak_tile_bytes: meter.peak(),
    })
}

/// What `metrics` measured: the report plus the partition it ran on.
#[derive(Debug)]
pub struct MetricsSummary {
    pub report: MetricReport,
    pub patch_count: usize,
    pub patch_side: usize,
}

/// Reads a panorama, partitions it, and evaluates the configured metrics,
/// writing `metrics.csv` and `metrics.json`.
pub fn run_metrics(
    config: &PipelineConfig,
    panorama_path: &Path,
) -> Result<MetricsSummary, CliError> {
    let out_dir = config.io.out_dir.clone();
    ensure_dir(&out_dir)?;

    let arrays = read_tensor_file::<f32, _>(panorama_path)
        .map_err(|e| CliError::io(format!("{}: {e}", panorama_path.display())))?;
    let panorama = arrays
        .iter()
        .find(|(name, t)| name == "panorama" && t.rank() == 3)
        .or_else(|| arrays.iter().find(|(_, t)| t.rank() == 3))
        .map(|(_, t)| t.clone())
        .ok_or_else(|| {
            CliError::config(format!(
                "{}: no rank-3 panorama array",
                panorama_path.display()
            ))
        })?;

    let grid = partition_patches(&panorama)?;
    let report = match config.metrics.extractor {
        ExtractorKind::Fallback => {
            let extractor = FallbackExtractor::new(config.metrics.out_dim);
            evaluate(&grid, &extractor, config.metrics.separation)?
        }
        ExtractorKind::External => {
            let dir = config
                .metrics
                .features_dir
                .as_ref()
                .expect("validated at resolve time");
            let mut maps: Vec<FeatureMap<f32>> = Vec::with_capacity(grid.len());
            for i in 0..grid.len() {
                let path = dir.join(format!("patch_{i:04}.ssft"));
                let map = load_feature_file(&path)
                    .map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
                maps.push(map);
            }
            let pairwise_path = dir.join("pairwise.sspd");
            let pairwise = if pairwise_path.exists() {
                Some(
                    read_pairwise_file(&pairwise_path)
                        .map_err(|e| CliError::io(format!("{}: {e}", pairwise_path.display())))?,
                )
            } else {
                None
            };
            let extractor = ExternalFeatures::new(maps, pairwise)?;
            evaluate(&grid, &extractor, config.metrics.separation)?
        }
    };

    write_text(&out_dir.join("metrics.csv"), &report.to_csv())?;
    write_text(&out_dir.join("metrics.json"), &report.to_json())?;
    Ok(MetricsSummary {
        report,
        patch_count: grid.len(),
        patch_side: grid.side(),
    })
}

fn evaluate<E: FeatureExtractor<f32>>(
    grid: &PatchGrid<f32>,
    extractor: &E,
    separation: usize,
) -> Result<MetricReport, CliError> {
    let style = intra_style_loss(grid, extractor)?;
    let diversity = gsd(grid, extractor, separation)?;
    Ok(MetricReport {
        style_l: Some(style.mean_loss as f64),
        gsd_perceptual: Some(diversity.perceptual as f64),
        gsd_semantic: Some(diversity.semantic as f64),
        ..Default::default()
    })
}

/// Trajectory, window, partition, and coverage dump for inspection.
pub fn run_inspect(config: &PipelineConfig) -> Result<String, CliError> {
    let trajectory = config.trajectory();
    let tap = tap_partition(&trajectory, config.tap_block_size)?;
    let report = coverage_report(&trajectory, config.canvas_base, config.tile_base);

    let mut out = String::new();
    writeln!(out, "# anchors (t h w)").unwrap();
    out.push_str(&trajectory.to_text());
    writeln!(out, "# windows (t start end anchor_h anchor_w)").unwrap();
    for t in 1..=trajectory.len() {
        let w = trajectory.window(t)?;
        writeln!(
            out,
            "{} {} {} {} {}",
            t, w.interval_start, w.interval_end, w.anchor.h, w.anchor.w
        )
        .unwrap();
    }
    writeln!(out, "# tap blocks (block first last)").unwrap();
    out.push_str(&tap.to_text());
    writeln!(out, "# {}", report.summary()).unwrap();
    Ok(out)
}
