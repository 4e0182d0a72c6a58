//! Scan-trajectory planning over the global canvas.
//!
//! A trajectory is the spatial skeleton of a run: the ordered global
//! anchors visited by the scanning window, the per-step unit directions,
//! and the window intervals each step covers. Planners are pure functions
//! over an immutable [`ScanConfig`]; nothing here touches pixels.

use std::fmt::Write as _;

use thiserror::Error;

use crate::geom::{Extent, GridCoord};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TrajectoryError {
    #[error("direction ({dh}, {dw}) is not an axis-aligned unit vector")]
    InvalidDirection { dh: i64, dw: i64 },
    #[error("spatial stride {stride} must be in 1..={window} (window length)")]
    StrideOutOfRange { stride: usize, window: usize },
    #[error("step stride must be positive, got {0}")]
    NonPositiveStepStride(i64),
    #[error("n_steps must be positive")]
    ZeroSteps,
    #[error("window length must be positive")]
    ZeroWindow,
    #[error("initial position {0} has a negative component")]
    NegativeInit(GridCoord),
    #[error("snake grid {rows}x{cols} does not match n_steps {n_steps}")]
    GridMismatch {
        rows: usize,
        cols: usize,
        n_steps: usize,
    },
    #[error("planner for {expected} mode called on a {found} config")]
    ModeMismatch {
        expected: &'static str,
        found: &'static str,
    },
    #[error("window index {t} out of range 1..={n_steps}")]
    WindowOutOfRange { t: usize, n_steps: usize },
    #[error("block size must be at least 1")]
    ZeroBlockSize,
    #[error("anchor line {line}: {reason}")]
    MalformedAnchorLine { line: usize, reason: String },
}

/// Axis-aligned unit step: exactly one of `dh`, `dw` is ±1, the other 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct DirectionVector {
    dh: i64,
    dw: i64,
}

impl DirectionVector {
    pub const RIGHT: DirectionVector = DirectionVector { dh: 0, dw: 1 };
    pub const LEFT: DirectionVector = DirectionVector { dh: 0, dw: -1 };
    pub const DOWN: DirectionVector = DirectionVector { dh: 1, dw: 0 };
    pub const UP: DirectionVector = DirectionVector { dh: -1, dw: 0 };

    pub fn new(dh: i64, dw: i64) -> Result<Self, TrajectoryError> {
        if (dh.abs() == 1 && dw == 0) || (dh == 0 && dw.abs() == 1) {
            Ok(Self { dh, dw })
        } else {
            Err(TrajectoryError::InvalidDirection { dh, dw })
        }
    }

    pub fn dh(&self) -> i64 {
        self.dh
    }

    pub fn dw(&self) -> i64 {
        self.dw
    }

    pub fn offset(&self) -> GridCoord {
        GridCoord::new(self.dh, self.dw)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScanMode {
    /// Constant direction; the window pans along one axis.
    Linear { direction: DirectionVector },
    /// Boustrophedon traversal of a `rows x cols` anchor grid: the top row
    /// left-to-right, one step down, the next row right-to-left, and so on.
    Snake { rows: usize, cols: usize },
}

impl ScanMode {
    fn name(&self) -> &'static str {
        match self {
            ScanMode::Linear { .. } => "linear",
            ScanMode::Snake { .. } => "snake",
        }
    }
}

/// Immutable description of a scan.
///
/// `window_len` and `spatial_stride` shape the per-step window interval;
/// `step_stride` is the anchor displacement between consecutive steps. The
/// two strides are independent knobs; callers that want windows and
/// anchors to move in lockstep set them equal.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScanConfig {
    /// Window length `l` in latent columns.
    pub window_len: usize,
    /// Chunk stride between consecutive window intervals.
    pub spatial_stride: usize,
    /// Anchor displacement per step.
    pub step_stride: i64,
    /// Number of steps (windows) in the scan.
    pub n_steps: usize,
    /// Anchor of the first window.
    pub p_init: GridCoord,
    pub mode: ScanMode,
}

impl ScanConfig {
    pub fn validate(&self) -> Result<(), TrajectoryError> {
        if self.window_len == 0 {
            return Err(TrajectoryError::ZeroWindow);
        }
        if self.spatial_stride == 0 || self.spatial_stride > self.window_len {
            return Err(TrajectoryError::StrideOutOfRange {
                stride: self.spatial_stride,
                window: self.window_len,
            });
        }
        if self.step_stride <= 0 {
            return Err(TrajectoryError::NonPositiveStepStride(self.step_stride));
        }
        if self.n_steps == 0 {
            return Err(TrajectoryError::ZeroSteps);
        }
        if self.p_init.h < 0 || self.p_init.w < 0 {
            return Err(TrajectoryError::NegativeInit(self.p_init));
        }
        if let ScanMode::Snake { rows, cols } = self.mode {
            if rows * cols != self.n_steps {
                return Err(TrajectoryError::GridMismatch {
                    rows,
                    cols,
                    n_steps: self.n_steps,
                });
            }
        }
        Ok(())
    }
}

/// Planned scan: anchors `O_t` (1-based step index `t`) and the unit
/// directions taken between them.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trajectory {
    anchors: Vec<GridCoord>,
    directions: Vec<DirectionVector>,
    config: ScanConfig,
}

impl Trajectory {
    /// Plans according to the config's mode.
    pub fn plan(config: &ScanConfig) -> Result<Self, TrajectoryError> {
        match config.mode {
            ScanMode::Linear { .. } => plan_linear(config),
            ScanMode::Snake { .. } => plan_snake(config),
        }
    }

    pub fn config(&self) -> &ScanConfig {
        &self.config
    }

    pub fn anchors(&self) -> &[GridCoord] {
        &self.anchors
    }

    pub fn directions(&self) -> &[DirectionVector] {
        &self.directions
    }

    /// Number of windows `N`.
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    /// Anchor of window `t`, 1-based.
    pub fn anchor(&self, t: usize) -> Result<GridCoord, TrajectoryError> {
        if t < 1 || t > self.anchors.len() {
            return Err(TrajectoryError::WindowOutOfRange {
                t,
                n_steps: self.anchors.len(),
            });
        }
        Ok(self.anchors[t - 1])
    }

    /// Interval and anchor of window `t`, 1-based.
    pub fn window(&self, t: usize) -> Result<WindowSpec, TrajectoryError> {
        let anchor = self.anchor(t)?;
        let start = (t - 1) * self.config.spatial_stride;
        Ok(WindowSpec {
            t,
            interval_start: start,
            interval_end: start + self.config.window_len,
            anchor,
        })
    }

    /// Line-oriented text form, one `t h w` triple per anchor.
    pub fn to_text(&self) -> String {
        anchors_to_text(&self.anchors)
    }
}

/// One `t h w` line per anchor, 1-based `t`, newline-terminated.
pub fn anchors_to_text(anchors: &[GridCoord]) -> String {
    let mut out = String::new();
    for (i, a) in anchors.iter().enumerate() {
        writeln!(out, "{} {} {}", i + 1, a.h, a.w).unwrap();
    }
    out
}

/// Parses the `t h w` form back into anchors, checking that the `t` column
/// is the contiguous sequence 1..=N. Blank lines and `#` comments are
/// skipped.
pub fn anchors_from_text(text: &str) -> Result<Vec<GridCoord>, TrajectoryError> {
    let mut anchors = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let bad = |reason: &str| TrajectoryError::MalformedAnchorLine {
            line: lineno + 1,
            reason: reason.to_string(),
        };
        let t: usize = parts
            .next()
            .ok_or_else(|| bad("missing t"))?
            .parse()
            .map_err(|_| bad("t is not an integer"))?;
        let h: i64 = parts
            .next()
            .ok_or_else(|| bad("missing h"))?
            .parse()
            .map_err(|_| bad("h is not an integer"))?;
        let w: i64 = parts
            .next()
            .ok_or_else(|| bad("missing w"))?
            .parse()
            .map_err(|_| bad("w is not an integer"))?;
        if parts.next().is_some() {
            return Err(bad("expected exactly three fields"));
        }
        if t != anchors.len() + 1 {
            return Err(bad(&format!("expected t={}, got {}", anchors.len() + 1, t)));
        }
        anchors.push(GridCoord::new(h, w));
    }
    Ok(anchors)
}

/// Plans a constant-direction scan: `O_t = P_init + (t-1)·δ·d`.
pub fn plan_linear(config: &ScanConfig) -> Result<Trajectory, TrajectoryError> {
    config.validate()?;
    let direction = match config.mode {
        ScanMode::Linear { direction } => direction,
        other => {
            return Err(TrajectoryError::ModeMismatch {
                expected: "linear",
                found: other.name(),
            })
        }
    };
    let step = direction.offset() * config.step_stride;
    let anchors = (0..config.n_steps)
        .map(|k| config.p_init + step * k as i64)
        .collect();
    Ok(Trajectory {
        anchors,
        directions: vec![direction; config.n_steps.saturating_sub(1)],
        config: *config,
    })
}

/// Plans a boustrophedon traversal of the snake grid. Every grid cell's
/// anchor is emitted exactly once; the anchor recurrence over `step_stride`
/// holds between consecutive steps.
pub fn plan_snake(config: &ScanConfig) -> Result<Trajectory, TrajectoryError> {
    config.validate()?;
    let (rows, cols) = match config.mode {
        ScanMode::Snake { rows, cols } => (rows, cols),
        other => {
            return Err(TrajectoryError::ModeMismatch {
                expected: "snake",
                found: other.name(),
            })
        }
    };
    let delta = config.step_stride;
    let mut anchors = Vec::with_capacity(config.n_steps);
    let mut directions = Vec::with_capacity(config.n_steps.saturating_sub(1));
    for r in 0..rows {
        let rightward = r % 2 == 0;
        for i in 0..cols {
            let c = if rightward { i } else { cols - 1 - i };
            anchors.push(config.p_init + GridCoord::new(r as i64 * delta, c as i64 * delta));
            if i + 1 < cols {
                directions.push(if rightward {
                    DirectionVector::RIGHT
                } else {
                    DirectionVector::LEFT
                });
            }
        }
        if r + 1 < rows {
            directions.push(DirectionVector::DOWN);
        }
    }
    Ok(Trajectory {
        anchors,
        directions,
        config: *config,
    })
}

/// Interval covered by window `t` (1-based) plus its anchor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowSpec {
    pub t: usize,
    /// `φ_t = (t-1)·Δ`.
    pub interval_start: usize,
    /// `φ_t + l`.
    pub interval_end: usize,
    pub anchor: GridCoord,
}

/// Computes the window interval and anchor directly from the config,
/// without materializing the whole trajectory.
pub fn window_interval(config: &ScanConfig, t: usize) -> Result<WindowSpec, TrajectoryError> {
    config.validate()?;
    if t < 1 || t > config.n_steps {
        return Err(TrajectoryError::WindowOutOfRange {
            t,
            n_steps: config.n_steps,
        });
    }
    let anchor = match config.mode {
        ScanMode::Linear { direction } => {
            config.p_init + direction.offset() * (config.step_stride * (t as i64 - 1))
        }
        ScanMode::Snake { cols, .. } => {
            let r = (t - 1) / cols;
            let i = (t - 1) % cols;
            let c = if r.is_multiple_of(2) { i } else { cols - 1 - i };
            config.p_init + GridCoord::new(r as i64, c as i64) * config.step_stride
        }
    };
    let start = (t - 1) * config.spatial_stride;
    Ok(WindowSpec {
        t,
        interval_start: start,
        interval_end: start + config.window_len,
        anchor,
    })
}

/// Per-cell window multiplicity over a canvas.
#[derive(Clone, Debug)]
pub struct CoverageReport {
    extent: Extent,
    counts: Vec<u32>,
    /// 1-based indices of windows whose footprint leaves the canvas.
    out_of_bounds: Vec<usize>,
}

impl CoverageReport {
    pub fn extent(&self) -> Extent {
        self.extent
    }

    pub fn count_at(&self, h: usize, w: usize) -> u32 {
        self.counts[h * self.extent.w + w]
    }

    pub fn min_multiplicity(&self) -> u32 {
        self.counts.iter().copied().min().unwrap_or(0)
    }

    pub fn max_multiplicity(&self) -> u32 {
        self.counts.iter().copied().max().unwrap_or(0)
    }

    pub fn uncovered_count(&self) -> usize {
        self.counts.iter().filter(|&&c| c == 0).count()
    }

    pub fn is_fully_covered(&self) -> bool {
        self.counts.iter().all(|&c| c > 0)
    }

    pub fn out_of_bounds(&self) -> &[usize] {
        &self.out_of_bounds
    }

    pub fn uncovered_cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.extent.w;
        self.counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == 0)
            .map(move |(i, _)| (i / w, i % w))
    }

    pub fn summary(&self) -> String {
        format!(
            "coverage {}: multiplicity {}..{}, {} uncovered cells, {} out-of-bounds windows",
            self.extent,
            self.min_multiplicity(),
            self.max_multiplicity(),
            self.uncovered_count(),
            self.out_of_bounds.len()
        )
    }
}

/// Counts, per canvas cell, how many window footprints of `tile_extent`
/// anchored along the trajectory cover it. Footprint parts outside the
/// canvas are not counted; fully or partially escaping windows are listed
/// as out-of-bounds.
pub fn coverage_report(
    trajectory: &Trajectory,
    canvas_extent: Extent,
    tile_extent: Extent,
) -> CoverageReport {
    let mut counts = vec![0u32; canvas_extent.cells()];
    let mut out_of_bounds = Vec::new();
    for (i, &anchor) in trajectory.anchors().iter().enumerate() {
        if !canvas_extent.fits(anchor, tile_extent) {
            out_of_bounds.push(i + 1);
        }
        let h0 = anchor.h.max(0) as usize;
        let w0 = anchor.w.max(0) as usize;
        let h1 = ((anchor.h + tile_extent.h as i64).max(0) as usize).min(canvas_extent.h);
        let w1 = ((anchor.w + tile_extent.w as i64).max(0) as usize).min(canvas_extent.w);
        for h in h0..h1 {
            let row = h * canvas_extent.w;
            for w in w0..w1 {
                counts[row + w] += 1;
            }
        }
    }
    CoverageReport {
        extent: canvas_extent,
        counts,
        out_of_bounds,
    }
}

/// One contiguous group of windows sharing a decode block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TapBlock {
    /// 1-based block index.
    pub index: usize,
    /// First window in the block, 1-based inclusive.
    pub first_window: usize,
    /// Last window in the block, 1-based inclusive.
    pub last_window: usize,
    /// Anchor of the first window in the block.
    pub anchor_first: GridCoord,
    /// Anchor of the last window in the block.
    pub anchor_last: GridCoord,
}

impl TapBlock {
    pub fn contains(&self, t: usize) -> bool {
        t >= self.first_window && t <= self.last_window
    }

    pub fn len(&self) -> usize {
        self.last_window - self.first_window + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Partition of the windows into contiguous decode blocks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TapPartition {
    blocks: Vec<TapBlock>,
    /// Window index anchoring the first block (always the first window).
    primary_anchor_index: usize,
}

impl TapPartition {
    pub fn blocks(&self) -> &[TapBlock] {
        &self.blocks
    }

    pub fn primary_anchor_index(&self) -> usize {
        self.primary_anchor_index
    }

    /// Block index (1-based) assigned to window `t`.
    pub fn block_of(&self, t: usize) -> Option<usize> {
        self.blocks.iter().find(|b| b.contains(t)).map(|b| b.index)
    }

    /// Line-oriented text form: `block first_window last_window` per block.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for b in &self.blocks {
            writeln!(out, "{} {} {}", b.index, b.first_window, b.last_window).unwrap();
        }
        out
    }
}

/// Groups windows into `ceil(N / block_size)` contiguous blocks in
/// trajectory order.
pub fn tap_partition(
    trajectory: &Trajectory,
    block_size: usize,
) -> Result<TapPartition, TrajectoryError> {
    if block_size == 0 {
        return Err(TrajectoryError::ZeroBlockSize);
    }
    let n = trajectory.len();
    let mut blocks = Vec::with_capacity(n.div_ceil(block_size));
    let mut first = 1usize;
    while first <= n {
        let last = (first + block_size - 1).min(n);
        blocks.push(TapBlock {
            index: blocks.len() + 1,
            first_window: first,
            last_window: last,
            anchor_first: trajectory.anchors()[first - 1],
            anchor_last: trajectory.anchors()[last - 1],
        });
        first = last + 1;
    }
    Ok(TapPartition {
        blocks,
        primary_anchor_index: 1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_config(
        step_stride: i64,
        direction: DirectionVector,
        p_init: GridCoord,
        n_steps: usize,
    ) -> ScanConfig {
        ScanConfig {
            window_len: 32,
            spatial_stride: 16,
            step_stride,
            n_steps,
            p_init,
            mode: ScanMode::Linear { direction },
        }
    }

    fn snake_config(rows: usize, cols: usize, step_stride: i64) -> ScanConfig {
        ScanConfig {
            window_len: 32,
            spatial_stride: 16,
            step_stride,
            n_steps: rows * cols,
            p_init: GridCoord::ORIGIN,
            mode: ScanMode::Snake { rows, cols },
        }
    }

    #[test]
    fn linear_anchor_formula() {
        // O_t = P_init + (t-1)·δ·d
        let cfg = linear_config(16, DirectionVector::RIGHT, GridCoord::ORIGIN, 4);
        let traj = plan_linear(&cfg).unwrap();
        assert_eq!(traj.anchor(4).unwrap(), GridCoord::new(0, 48));
    }

    #[test]
    fn first_anchor_is_p_init() {
        let cfg = linear_config(7, DirectionVector::DOWN, GridCoord::new(2, 3), 5);
        let traj = plan_linear(&cfg).unwrap();
        assert_eq!(traj.anchor(1).unwrap(), GridCoord::new(2, 3));
        let snake = plan_snake(&snake_config(2, 2, 9)).unwrap();
        assert_eq!(snake.anchor(1).unwrap(), GridCoord::ORIGIN);
    }

    #[test]
    fn linear_vertical_from_offset_init() {
        let cfg = linear_config(8, DirectionVector::DOWN, GridCoord::new(5, 5), 3);
        let traj = plan_linear(&cfg).unwrap();
        assert_eq!(traj.anchor(3).unwrap(), GridCoord::new(21, 5));
    }

    #[test]
    fn invalid_direction_rejected() {
        assert!(DirectionVector::new(1, 1).is_err());
        assert!(DirectionVector::new(0, 0).is_err());
        assert!(DirectionVector::new(0, 2).is_err());
        assert!(DirectionVector::new(-1, 0).is_ok());
    }

    #[test]
    fn snake_2x3_boustrophedon() {
        let traj = plan_snake(&snake_config(2, 3, 10)).unwrap();
        let expected = [(0, 0), (0, 10), (0, 20), (10, 20), (10, 10), (10, 0)];
        let got: Vec<(i64, i64)> = traj.anchors().iter().map(|a| (a.h, a.w)).collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn snake_single_row_matches_linear() {
        let k = 5;
        let snake = plan_snake(&snake_config(1, k, 4)).unwrap();
        let cfg = linear_config(4, DirectionVector::RIGHT, GridCoord::ORIGIN, k);
        let linear = plan_linear(&cfg).unwrap();
        assert_eq!(snake.anchors(), linear.anchors());
        assert_eq!(snake.directions(), linear.directions());
    }

    #[test]
    fn snake_single_column() {
        let traj = plan_snake(&snake_config(2, 1, 6)).unwrap();
        let got: Vec<(i64, i64)> = traj.anchors().iter().map(|a| (a.h, a.w)).collect();
        assert_eq!(got, [(0, 0), (6, 0)]);
    }

    #[test]
    fn snake_grid_mismatch_rejected() {
        let mut cfg = snake_config(2, 3, 10);
        cfg.n_steps = 5;
        assert!(matches!(
            plan_snake(&cfg),
            Err(TrajectoryError::GridMismatch { .. })
        ));
    }

    #[test]
    fn anchor_recurrence_holds() {
        // anchors[t] - anchors[t-1] = δ·directions[t-1], exactly.
        for cfg in [
            linear_config(16, DirectionVector::RIGHT, GridCoord::new(1, 2), 9),
            snake_config(3, 4, 7),
            snake_config(4, 1, 3),
        ] {
            let traj = Trajectory::plan(&cfg).unwrap();
            assert_eq!(traj.directions().len(), traj.len() - 1);
            for t in 1..traj.len() {
                let step = traj.anchors()[t] - traj.anchors()[t - 1];
                assert_eq!(step, traj.directions()[t - 1].offset() * cfg.step_stride);
            }
        }
    }

    #[test]
    fn snake_visits_every_cell_once_up_to_6x6() {
        for rows in 1..=6 {
            for cols in 1..=6 {
                let traj = plan_snake(&snake_config(rows, cols, 5)).unwrap();
                let mut seen = std::collections::HashSet::new();
                for a in traj.anchors() {
                    assert!(seen.insert((a.h, a.w)), "revisited {a} in {rows}x{cols}");
                    assert_eq!(a.h % 5, 0);
                    assert_eq!(a.w % 5, 0);
                    let (r, c) = (a.h / 5, a.w / 5);
                    assert!(r >= 0 && (r as usize) < rows);
                    assert!(c >= 0 && (c as usize) < cols);
                }
                assert_eq!(seen.len(), rows * cols);
            }
        }
    }

    #[test]
    fn window_interval_examples() {
        let mut cfg = linear_config(16, DirectionVector::RIGHT, GridCoord::ORIGIN, 4);
        let w1 = window_interval(&cfg, 1).unwrap();
        assert_eq!((w1.interval_start, w1.interval_end), (0, 32));
        let w3 = window_interval(&cfg, 3).unwrap();
        assert_eq!((w3.interval_start, w3.interval_end), (32, 64));

        cfg.spatial_stride = 32;
        let a = window_interval(&cfg, 1).unwrap();
        let b = window_interval(&cfg, 2).unwrap();
        assert_eq!((b.interval_start, b.interval_end), (32, 64));
        assert_eq!(a.interval_end, b.interval_start); // stride == length abuts
    }

    #[test]
    fn window_interval_out_of_range() {
        let cfg = linear_config(16, DirectionVector::RIGHT, GridCoord::ORIGIN, 4);
        assert!(matches!(
            window_interval(&cfg, 0),
            Err(TrajectoryError::WindowOutOfRange { .. })
        ));
        assert!(matches!(
            window_interval(&cfg, 5),
            Err(TrajectoryError::WindowOutOfRange { .. })
        ));
    }

    #[test]
    fn window_interval_matches_planned_trajectory() {
        for cfg in [
            linear_config(16, DirectionVector::RIGHT, GridCoord::ORIGIN, 8),
            snake_config(3, 4, 11),
        ] {
            let traj = Trajectory::plan(&cfg).unwrap();
            for t in 1..=cfg.n_steps {
                assert_eq!(window_interval(&cfg, t).unwrap(), traj.window(t).unwrap());
            }
        }
    }

    #[test]
    fn window_overlap_width_is_len_minus_stride() {
        let cfg = linear_config(16, DirectionVector::RIGHT, GridCoord::ORIGIN, 4);
        for t in 1..cfg.n_steps {
            let a = window_interval(&cfg, t).unwrap();
            let b = window_interval(&cfg, t + 1).unwrap();
            assert_eq!(
                a.interval_end - b.interval_start,
                cfg.window_len - cfg.spatial_stride
            );
        }
    }

    #[test]
    fn coverage_overlapping_linear_scan() {
        // δ = Δ = l/2: interior multiplicity 2, edge stripes 1.
        let l = 8usize;
        let n = 5usize;
        let cfg = ScanConfig {
            window_len: l,
            spatial_stride: l / 2,
            step_stride: (l / 2) as i64,
            n_steps: n,
            p_init: GridCoord::ORIGIN,
            mode: ScanMode::Linear {
                direction: DirectionVector::RIGHT,
            },
        };
        let traj = plan_linear(&cfg).unwrap();
        let canvas = Extent::new(4, (n - 1) * l / 2 + l);
        let report = coverage_report(&traj, canvas, Extent::new(4, l));
        assert!(report.is_fully_covered());
        assert_eq!(report.min_multiplicity(), 1);
        assert_eq!(report.max_multiplicity(), 2);
        // brute force against an independently counted grid
        for h in 0..canvas.h {
            for w in 0..canvas.w {
                let mut count = 0;
                for t in 0..n {
                    let start = t * l / 2;
                    if w >= start && w < start + l {
                        count += 1;
                    }
                }
                assert_eq!(report.count_at(h, w), count);
            }
        }
    }

    #[test]
    fn coverage_single_window() {
        let cfg = linear_config(16, DirectionVector::RIGHT, GridCoord::ORIGIN, 1);
        let traj = plan_linear(&cfg).unwrap();
        let report = coverage_report(&traj, Extent::new(3, 7), Extent::new(3, 7));
        assert!(report.is_fully_covered());
        assert_eq!(report.min_multiplicity(), 1);
        assert_eq!(report.max_multiplicity(), 1);
    }

    #[test]
    fn coverage_gap_reported() {
        let cfg = linear_config(16, DirectionVector::RIGHT, GridCoord::ORIGIN, 2);
        let traj = plan_linear(&cfg).unwrap();
        // canvas wider than the trajectory reach
        let report = coverage_report(&traj, Extent::new(2, 64), Extent::new(2, 8));
        assert!(!report.is_fully_covered());
        assert!(report.uncovered_count() > 0);
        assert_eq!(report.min_multiplicity(), 0);
        let first_gap = report.uncovered_cells().next().unwrap();
        assert_eq!(report.count_at(first_gap.0, first_gap.1), 0);
    }

    #[test]
    fn coverage_flags_out_of_bounds_windows() {
        let cfg = linear_config(16, DirectionVector::RIGHT, GridCoord::ORIGIN, 3);
        let traj = plan_linear(&cfg).unwrap();
        let report = coverage_report(&traj, Extent::new(2, 24), Extent::new(2, 8));
        assert_eq!(report.out_of_bounds(), &[3]);
    }

    #[test]
    fn tap_contiguous_chunks() {
        let cfg = linear_config(4, DirectionVector::RIGHT, GridCoord::ORIGIN, 7);
        let traj = plan_linear(&cfg).unwrap();
        let part = tap_partition(&traj, 3).unwrap();
        let spans: Vec<(usize, usize)> = part
            .blocks()
            .iter()
            .map(|b| (b.first_window, b.last_window))
            .collect();
        assert_eq!(spans, [(1, 3), (4, 6), (7, 7)]);
        assert_eq!(part.primary_anchor_index(), 1);
        assert_eq!(part.blocks()[1].anchor_first, GridCoord::new(0, 12));
        assert_eq!(part.blocks()[1].anchor_last, GridCoord::new(0, 20));
    }

    #[test]
    fn tap_singletons_and_single_block() {
        let cfg = linear_config(4, DirectionVector::RIGHT, GridCoord::ORIGIN, 4);
        let traj = plan_linear(&cfg).unwrap();
        let singles = tap_partition(&traj, 1).unwrap();
        assert_eq!(singles.blocks().len(), 4);
        assert!(singles.blocks().iter().all(|b| b.len() == 1));

        let cfg6 = linear_config(4, DirectionVector::RIGHT, GridCoord::ORIGIN, 6);
        let traj6 = plan_linear(&cfg6).unwrap();
        let one = tap_partition(&traj6, 6).unwrap();
        assert_eq!(one.blocks().len(), 1);
        assert_eq!(one.primary_anchor_index(), 1);
    }

    #[test]
    fn tap_is_a_partition_for_all_small_n() {
        for n in 1..=64usize {
            let cfg = linear_config(2, DirectionVector::RIGHT, GridCoord::ORIGIN, n);
            let traj = plan_linear(&cfg).unwrap();
            for block_size in 1..=n {
                let part = tap_partition(&traj, block_size).unwrap();
                assert_eq!(part.blocks().len(), n.div_ceil(block_size));
                let mut next = 1usize;
                for b in part.blocks() {
                    assert_eq!(b.first_window, next); // contiguous, disjoint
                    assert!(b.last_window >= b.first_window);
                    assert!(b.len() <= block_size);
                    next = b.last_window + 1;
                }
                assert_eq!(next, n + 1); // complete
            }
        }
    }

    #[test]
    fn tap_zero_block_size_rejected() {
        let cfg = linear_config(4, DirectionVector::RIGHT, GridCoord::ORIGIN, 4);
        let traj = plan_linear(&cfg).unwrap();
        assert!(matches!(
            tap_partition(&traj, 0),
            Err(TrajectoryError::ZeroBlockSize)
        ));
    }

    #[test]
    fn anchor_text_round_trip() {
        let traj = plan_snake(&snake_config(2, 3, 10)).unwrap();
        let text = traj.to_text();
        assert!(text.starts_with("1 0 0\n"));
        let parsed = anchors_from_text(&text).unwrap();
        assert_eq!(parsed, traj.anchors());
    }

    #[test]
    fn anchor_text_rejects_bad_lines() {
        assert!(anchors_from_text("1 0\n").is_err());
        assert!(anchors_from_text("2 0 0\n").is_err());
        assert!(anchors_from_text("1 a 0\n").is_err());
        assert!(anchors_from_text("# comment\n\n1 4 5\n").unwrap().len() == 1);
    }

    #[test]
    fn stride_must_not_exceed_window() {
        let mut cfg = linear_config(4, DirectionVector::RIGHT, GridCoord::ORIGIN, 4);
        cfg.spatial_stride = 33;
        assert!(matches!(
            cfg.validate(),
            Err(TrajectoryError::StrideOutOfRange { .. })
        ));
    }
}
