//! Panoramic tile fusion: per-block median-consensus frame selection and
//! ramp-weighted accumulation onto a global canvas.
//!
//! The canvas keeps paired value/weight accumulators, so tiles stream in
//! one at a time in any order and the final division reconstructs the
//! weighted blend. Opposing linear ramps over an overlap of width `ov`
//! take values `k/(ov+1)`, which makes facing profiles sum to exactly 1.

use std::str::FromStr;

use thiserror::Error;

use crate::geom::{Extent, GridCoord};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FusionError {
    #[error("frame is empty")]
    EmptyFrame,
    #[error("frame must be rank 3 (h, w, c), got rank {0}")]
    BadFrameRank(usize),
    #[error("block has no frames")]
    EmptyBlock,
    #[error("frame {index} shape differs from frame 0")]
    FrameShapeMismatch { index: usize },
    #[error("frame {index} statistic is not finite")]
    NonFiniteStatistic { index: usize },
    #[error("overlap {overlap} must be smaller than the tile extent {extent}")]
    OverlapTooLarge { overlap: usize, extent: usize },
    #[error("mask shape {mask:?} does not match tile {tile:?}")]
    MaskShapeMismatch { mask: Vec<usize>, tile: Vec<usize> },
    #[error("tile has {got} channels, canvas has {expected}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error("tile at anchor {anchor} with extent {tile} escapes the {canvas} canvas")]
    OutOfBounds {
        anchor: GridCoord,
        tile: Extent,
        canvas: Extent,
    },
    #[error("seam position {position} is outside 1..{limit}")]
    SeamOutOfBounds { position: usize, limit: usize },
    #[error("unknown statistic kind {0:?}")]
    UnknownStatistic(String),
}

/// Scalar statistic used to rank frames within a block.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum StatKind {
    /// Mean over all elements.
    #[default]
    Mean,
    /// Mean luminance (Rec.601 weights for 3-channel frames, plain mean
    /// otherwise).
    Luminance,
    /// Population variance over all elements.
    Variance,
}

impl FromStr for StatKind {
    type Err = FusionError;

    fn from_str(s: &str) -> Result<Self, FusionError> {
        match s {
            "mean" => Ok(StatKind::Mean),
            "luminance" => Ok(StatKind::Luminance),
            "variance" => Ok(StatKind::Variance),
            other => Err(FusionError::UnknownStatistic(other.to_string())),
        }
    }
}

/// Scalar statistic of one `(h, w, c)` frame.
pub fn frame_statistic<T: Scalar>(frame: &Tensor<T>, kind: StatKind) -> Result<T, FusionError> {
    if frame.is_empty() {
        return Err(FusionError::EmptyFrame);
    }
    if frame.rank() != 3 {
        return Err(FusionError::BadFrameRank(frame.rank()));
    }
    let n = T::from(frame.len()).unwrap();
    let value = match kind {
        StatKind::Mean => {
            let mut sum = T::zero();
            for &v in frame.data() {
                sum += v;
            }
            sum / n
        }
        StatKind::Luminance => {
            let channels = frame.shape()[2];
            if channels != 3 {
                return frame_statistic(frame, StatKind::Mean);
            }
            let weights = [
                T::from(0.299).unwrap(),
                T::from(0.587).unwrap(),
                T::from(0.114).unwrap(),
            ];
            let pixels = frame.shape()[0] * frame.shape()[1];
            let mut sum = T::zero();
            for p in 0..pixels {
                for c in 0..3 {
                    sum += weights[c] * frame.data()[p * 3 + c];
                }
            }
            sum / T::from(pixels).unwrap()
        }
        StatKind::Variance => {
            let mut sum = T::zero();
            for &v in frame.data() {
                sum += v;
            }
            let mean = sum / n;
            let mut sq = T::zero();
            for &v in frame.data() {
                let d = v - mean;
                sq += d * d;
            }
            sq / n
        }
    };
    Ok(value)
}

/// The frames of one temporal block, all sharing an anchor.
#[derive(Clone, Debug)]
pub struct TileBlock<T> {
    t: usize,
    frames: Vec<Tensor<T>>,
    anchor: GridCoord,
}

impl<T: Scalar> TileBlock<T> {
    pub fn new(t: usize, frames: Vec<Tensor<T>>, anchor: GridCoord) -> Result<Self, FusionError> {
        if frames.is_empty() {
            return Err(FusionError::EmptyBlock);
        }
        let shape = frames[0].shape().to_vec();
        for (index, f) in frames.iter().enumerate() {
            if f.shape() != shape.as_slice() {
                return Err(FusionError::FrameShapeMismatch { index });
            }
        }
        Ok(Self { t, frames, anchor })
    }

    pub fn block_index(&self) -> usize {
        self.t
    }

    pub fn frames(&self) -> &[Tensor<T>] {
        &self.frames
    }

    pub fn anchor(&self) -> GridCoord {
        self.anchor
    }

    pub fn frame_extent(&self) -> Extent {
        Extent::new(self.frames[0].shape()[0], self.frames[0].shape()[1])
    }

    /// Moves frame `index` out of the block.
    pub fn take_frame(mut self, index: usize) -> Tensor<T> {
        self.frames.swap_remove(index)
    }
}

/// Selects the frame whose statistic is closest to the block's median
/// statistic. The median of an even count is the mean of the two central
/// values; distance ties resolve to the lowest frame index.
pub fn median_consensus<T: Scalar>(
    block: &TileBlock<T>,
    kind: StatKind,
) -> Result<(usize, &Tensor<T>), FusionError> {
    let stats: Vec<T> = block
        .frames
        .iter()
        .map(|f| frame_statistic(f, kind))
        .collect::<Result<_, _>>()?;
    for (index, s) in stats.iter().enumerate() {
        if !s.is_finite() {
            return Err(FusionError::NonFiniteStatistic { index });
        }
    }
    let mut sorted = stats.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = sorted.len() / 2;
    let median = if sorted.len() % 2 == 1 {
        sorted[m]
    } else {
        (sorted[m - 1] + sorted[m]) / T::from(2).unwrap()
    };
    let mut best = 0usize;
    let mut best_dist = (stats[0] - median).abs();
    for (i, &s) in stats.iter().enumerate().skip(1) {
        let dist = (s - median).abs();
        if dist < best_dist {
            best = i;
            best_dist = dist;
        }
    }
    Ok((best, &block.frames[best]))
}

/// Ramped overlap width on each tile edge, in cells.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EdgeOverlaps {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl EdgeOverlaps {
    pub fn uniform(overlap: usize) -> Self {
        Self {
            top: overlap,
            bottom: overlap,
            left: overlap,
            right: overlap,
        }
    }
}

/// Separable fusion weights for one tile: the product of a vertical and a
/// horizontal linear ramp profile.
#[derive(Clone, Debug, PartialEq)]
pub struct RampMask<T> {
    weights: Tensor<T>,
    overlaps: EdgeOverlaps,
}

impl<T: Scalar> RampMask<T> {
    pub fn weights(&self) -> &Tensor<T> {
        &self.weights
    }

    pub fn overlaps(&self) -> EdgeOverlaps {
        self.overlaps
    }

    pub fn extent(&self) -> Extent {
        Extent::new(self.weights.shape()[0], self.weights.shape()[1])
    }
}

/// 1-D ramp profile of length `n`: rises `k/(ov+1)` over a ramped edge,
/// reaching 1 strictly inside the overlap, constant 1 elsewhere.
fn ramp_profile<T: Scalar>(n: usize, lead: usize, trail: usize) -> Result<Vec<T>, FusionError> {
    for ov in [lead, trail] {
        if ov >= n {
            return Err(FusionError::OverlapTooLarge {
                overlap: ov,
                extent: n,
            });
        }
    }
    let mut profile = vec![T::one(); n];
    for i in 0..lead {
        profile[i] = T::from(i + 1).unwrap() / T::from(lead + 1).unwrap();
    }
    for i in 0..trail {
        let v = T::from(i + 1).unwrap() / T::from(trail + 1).unwrap();
        let idx = n - 1 - i;
        profile[idx] *= v;
    }
    Ok(profile)
}

pub fn build_ramp_mask<T: Scalar>(
    extent: Extent,
    overlaps: EdgeOverlaps,
) -> Result<RampMask<T>, FusionError> {
    let vertical = ramp_profile::<T>(extent.h, overlaps.top, overlaps.bottom)?;
    let horizontal = ramp_profile::<T>(extent.w, overlaps.left, overlaps.right)?;
    let mut weights = Tensor::zeros(&[extent.h, extent.w]);
    for (h, &vh) in vertical.iter().enumerate() {
        for (w, &vw) in horizontal.iter().enumerate() {
            weights.set2(h, w, vh * vw);
        }
    }
    Ok(RampMask { weights, overlaps })
}

/// Geometric per-edge overlaps for same-extent tiles at the given anchors:
/// for each tile, the widest intrusion of any neighboring tile on each
/// edge, clamped to `extent - 1` so the mask stays buildable even for
/// coincident tiles.
pub fn edge_overlaps(anchors: &[GridCoord], extent: Extent) -> Vec<EdgeOverlaps> {
    let (eh, ew) = (extent.h as i64, extent.w as i64);
    anchors
        .iter()
        .map(|&a| {
            let mut ov = EdgeOverlaps::default();
            for &b in anchors {
                if a == b {
                    continue;
                }
                let h_overlap = (a.h + eh).min(b.h + eh) - a.h.max(b.h);
                let w_overlap = (a.w + ew).min(b.w + ew) - a.w.max(b.w);
                if h_overlap <= 0 || w_overlap <= 0 {
                    continue;
                }
                if b.w > a.w {
                    ov.right = ov.right.max(((a.w + ew - b.w).max(0)) as usize);
                } else if b.w < a.w {
                    ov.left = ov.left.max(((b.w + ew - a.w).max(0)) as usize);
                }
                if b.h > a.h {
                    ov.bottom = ov.bottom.max(((a.h + eh - b.h).max(0)) as usize);
                } else if b.h < a.h {
                    ov.top = ov.top.max(((b.h + eh - a.h).max(0)) as usize);
                }
            }
            let cap_h = extent.h.saturating_sub(1);
            let cap_w = extent.w.saturating_sub(1);
            EdgeOverlaps {
                top: ov.top.min(cap_h),
                bottom: ov.bottom.min(cap_h),
                left: ov.left.min(cap_w),
                right: ov.right.min(cap_w),
            }
        })
        .collect()
}

/// Paired value/weight accumulators over the global canvas.
#[derive(Clone, Debug)]
pub struct PanoramaCanvas<T> {
    values: Tensor<T>,
    weights: Tensor<T>,
    extent: Extent,
    channels: usize,
}

impl<T: Scalar> PanoramaCanvas<T> {
    pub fn new(extent: Extent, channels: usize) -> Self {
        Self {
            values: Tensor::zeros(&[extent.h, extent.w, channels]),
            weights: Tensor::zeros(&[extent.h, extent.w]),
            extent,
            channels,
        }
    }

    pub fn extent(&self) -> Extent {
        self.extent
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn weights(&self) -> &Tensor<T> {
        &self.weights
    }
}

/// Adds `mask ⊙ tile` into the value accumulator and `mask` into the
/// weight accumulator over the tile's footprint at `anchor`.
pub fn accumulate<T: Scalar>(
    canvas: &mut PanoramaCanvas<T>,
    tile: &Tensor<T>,
    mask: &RampMask<T>,
    anchor: GridCoord,
) -> Result<(), FusionError> {
    if tile.rank() != 3 {
        return Err(FusionError::BadFrameRank(tile.rank()));
    }
    let tile_extent = Extent::new(tile.shape()[0], tile.shape()[1]);
    if tile.shape()[2] != canvas.channels {
        return Err(FusionError::ChannelMismatch {
            expected: canvas.channels,
            got: tile.shape()[2],
        });
    }
    if mask.extent() != tile_extent {
        return Err(FusionError::MaskShapeMismatch {
            mask: mask.weights.shape().to_vec(),
            tile: tile.shape().to_vec(),
        });
    }
    if !canvas.extent.fits(anchor, tile_extent) {
        return Err(FusionError::OutOfBounds {
            anchor,
            tile: tile_extent,
            canvas: canvas.extent,
        });
    }
    let channels = canvas.channels;
    for h in 0..tile_extent.h {
        let gh = anchor.h as usize + h;
        for w in 0..tile_extent.w {
            let gw = anchor.w as usize + w;
            let m = mask.weights.at2(h, w);
            let widx = canvas.weights.idx2(gh, gw);
            canvas.weights.data_mut()[widx] += m;
            for c in 0..channels {
                let vidx = canvas.values.idx3(gh, gw, c);
                canvas.values.data_mut()[vidx] += m * tile.at3(h, w, c);
            }
        }
    }
    Ok(())
}

/// Cells never touched by any tile.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UncoveredMask {
    extent: Extent,
    flags: Vec<bool>,
}

impl UncoveredMask {
    pub fn extent(&self) -> Extent {
        self.extent
    }

    pub fn is_uncovered(&self, h: usize, w: usize) -> bool {
        self.flags[h * self.extent.w + w]
    }

    pub fn count(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.iter().all(|&f| !f)
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }
}

/// Divides values by weights where weight > 0; uncovered cells come back
/// as 0 and flagged.
pub fn finalize<T: Scalar>(canvas: &PanoramaCanvas<T>) -> (Tensor<T>, UncoveredMask) {
    let Extent { h, w } = canvas.extent;
    let channels = canvas.channels;
    let mut out = Tensor::zeros(&[h, w, channels]);
    let mut flags = vec![false; h * w];
    for i in 0..h {
        for j in 0..w {
            let weight = canvas.weights.at2(i, j);
            if weight > T::zero() {
                for c in 0..channels {
                    out.set3(i, j, c, canvas.values.at3(i, j, c) / weight);
                }
            } else {
                flags[i * w + j] = true;
            }
        }
    }
    (
        out,
        UncoveredMask {
            extent: canvas.extent,
            flags,
        },
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SeamAxis {
    Column,
    Row,
}

/// Max / mean absolute first difference over a set of cell boundaries.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiffStat<T> {
    pub max_abs: T,
    pub mean_abs: T,
    pub count: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SeamStat<T> {
    pub axis: SeamAxis,
    pub position: usize,
    pub stat: DiffStat<T>,
}

/// Seam energies plus per-axis interior baselines for comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct SeamReport<T> {
    pub seams: Vec<SeamStat<T>>,
    pub interior_cols: Option<DiffStat<T>>,
    pub interior_rows: Option<DiffStat<T>>,
}

impl<T: Scalar> SeamReport<T> {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("kind,position,max_abs_diff,mean_abs_diff\n");
        for s in &self.seams {
            let kind = match s.axis {
                SeamAxis::Column => "col",
                SeamAxis::Row => "row",
            };
            out.push_str(&format!(
                "{kind},{},{},{}\n",
                s.position, s.stat.max_abs, s.stat.mean_abs
            ));
        }
        if let Some(i) = self.interior_cols {
            out.push_str(&format!("interior_cols,,{},{}\n", i.max_abs, i.mean_abs));
        }
        if let Some(i) = self.interior_rows {
            out.push_str(&format!("interior_rows,,{},{}\n", i.max_abs, i.mean_abs));
        }
        out
    }
}

struct DiffAccum<T> {
    max_abs: T,
    sum_abs: T,
    count: usize,
}

impl<T: Scalar> DiffAccum<T> {
    fn new() -> Self {
        Self {
            max_abs: T::zero(),
            sum_abs: T::zero(),
            count: 0,
        }
    }

    fn add(&mut self, d: T) {
        let a = d.abs();
        if a > self.max_abs {
            self.max_abs = a;
        }
        self.sum_abs += a;
        self.count += 1;
    }

    fn finish(self) -> Option<DiffStat<T>> {
        if self.count == 0 {
            return None;
        }
        Some(DiffStat {
            max_abs: self.max_abs,
            mean_abs: self.sum_abs / T::from(self.count).unwrap(),
            count: self.count,
        })
    }
}

/// First-difference energy across the listed seam columns and rows. A seam
/// position `x` names the boundary between column `x-1` and `x` (same for
/// rows); interior statistics cover every other boundary on that axis.
pub fn seam_energy<T: Scalar>(
    panorama: &Tensor<T>,
    seam_cols: &[usize],
    seam_rows: &[usize],
) -> Result<SeamReport<T>, FusionError> {
    if panorama.rank() != 3 {
        return Err(FusionError::BadFrameRank(panorama.rank()));
    }
    let (h, w, channels) = (
        panorama.shape()[0],
        panorama.shape()[1],
        panorama.shape()[2],
    );
    for &x in seam_cols {
        if x == 0 || x >= w {
            return Err(FusionError::SeamOutOfBounds {
                position: x,
                limit: w,
            });
        }
    }
    for &y in seam_rows {
        if y == 0 || y >= h {
            return Err(FusionError::SeamOutOfBounds {
                position: y,
                limit: h,
            });
        }
    }

    let col_diff = |x: usize| {
        let mut acc = DiffAccum::new();
        for i in 0..h {
            for c in 0..channels {
                acc.add(panorama.at3(i, x, c) - panorama.at3(i, x - 1, c));
            }
        }
        acc
    };
    let row_diff = |y: usize| {
        let mut acc = DiffAccum::new();
        for j in 0..w {
            for c in 0..channels {
                acc.add(panorama.at3(y, j, c) - panorama.at3(y - 1, j, c));
            }
        }
        acc
    };

    let mut seams = Vec::new();
    for &x in seam_cols {
        seams.push(SeamStat {
            axis: SeamAxis::Column,
            position: x,
            stat: col_diff(x).finish().unwrap(),
        });
    }
    for &y in seam_rows {
        seams.push(SeamStat {
            axis: SeamAxis::Row,
            position: y,
            stat: row_diff(y).finish().unwrap(),
        });
    }

    let mut interior_cols: DiffAccum<T> = DiffAccum::new();
    for x in 1..w {
        if !seam_cols.contains(&x) {
            let part = col_diff(x);
            interior_cols.max_abs = interior_cols.max_abs.max(part.max_abs);
            interior_cols.sum_abs += part.sum_abs;
            interior_cols.count += part.count;
        }
    }
    let mut interior_rows: DiffAccum<T> = DiffAccum::new();
    for y in 1..h {
        if !seam_rows.contains(&y) {
            let part = row_diff(y);
            interior_rows.max_abs = interior_rows.max_abs.max(part.max_abs);
            interior_rows.sum_abs += part.sum_abs;
            interior_rows.count += part.count;
        }
    }

    Ok(SeamReport {
        seams,
        interior_cols: interior_cols.finish(),
        interior_rows: interior_rows.finish(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_frame(h: usize, w: usize, c: usize, v: f64) -> Tensor<f64> {
        Tensor::filled(&[h, w, c], v)
    }

    #[test]
    fn statistic_of_constant_frame() {
        let f = constant_frame(2, 3, 1, 3.0);
        assert_eq!(frame_statistic(&f, StatKind::Mean).unwrap(), 3.0);
        assert_eq!(frame_statistic(&f, StatKind::Variance).unwrap(), 0.0);
    }

    #[test]
    fn statistic_of_zero_frame() {
        let f = constant_frame(4, 4, 3, 0.0);
        assert_eq!(frame_statistic(&f, StatKind::Mean).unwrap(), 0.0);
    }

    #[test]
    fn statistic_mean_of_two_grays() {
        let f = Tensor::from_vec(&[2, 1, 1], vec![0.2f64, 0.8]).unwrap();
        let mean = frame_statistic(&f, StatKind::Mean).unwrap();
        assert!((mean - 0.5).abs() < 1e-12);
    }

    #[test]
    fn statistic_rejects_empty() {
        let f = Tensor::<f64>::zeros(&[0, 4, 1]);
        assert_eq!(
            frame_statistic(&f, StatKind::Mean).unwrap_err(),
            FusionError::EmptyFrame
        );
    }

    #[test]
    fn luminance_weighs_channels() {
        let mut f = Tensor::<f64>::zeros(&[1, 1, 3]);
        f.set3(0, 0, 1, 1.0); // pure green pixel
        let lum = frame_statistic(&f, StatKind::Luminance).unwrap();
        assert!((lum - 0.587).abs() < 1e-12);
    }

    fn block_from_means(means: &[f64]) -> TileBlock<f64> {
        let frames = means.iter().map(|&m| constant_frame(2, 2, 1, m)).collect();
        TileBlock::new(1, frames, GridCoord::ORIGIN).unwrap()
    }

    #[test]
    fn median_consensus_picks_stat_nearest_median() {
        let block = block_from_means(&[1.0, 5.0, 1.1, 1.05, 9.0]);
        let (index, frame) = median_consensus(&block, StatKind::Mean).unwrap();
        assert_eq!(index, 2);
        assert_eq!(frame.data()[0], 1.1);
    }

    #[test]
    fn median_consensus_single_frame() {
        let block = block_from_means(&[4.25]);
        assert_eq!(median_consensus(&block, StatKind::Mean).unwrap().0, 0);
    }

    #[test]
    fn median_consensus_ties_pick_lowest_index() {
        let all_equal = block_from_means(&[2.0, 2.0, 2.0]);
        assert_eq!(median_consensus(&all_equal, StatKind::Mean).unwrap().0, 0);
        // even count: median 2.5, frames 2.0 and 3.0 tie; lowest index wins
        let even = block_from_means(&[1.0, 2.0, 3.0, 10.0]);
        assert_eq!(median_consensus(&even, StatKind::Mean).unwrap().0, 1);
    }

    #[test]
    fn block_validates_frame_shapes() {
        let frames = vec![constant_frame(2, 2, 1, 0.0), constant_frame(2, 3, 1, 0.0)];
        assert_eq!(
            TileBlock::new(1, frames, GridCoord::ORIGIN).unwrap_err(),
            FusionError::FrameShapeMismatch { index: 1 }
        );
        assert_eq!(
            TileBlock::<f64>::new(1, vec![], GridCoord::ORIGIN).unwrap_err(),
            FusionError::EmptyBlock
        );
    }

    #[test]
    fn ramp_mask_all_ones_without_overlap() {
        let mask = build_ramp_mask::<f64>(Extent::new(3, 4), EdgeOverlaps::default()).unwrap();
        assert!(mask.weights().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn ramp_profile_left_overlap_two() {
        let mask = build_ramp_mask::<f64>(
            Extent::new(1, 6),
            EdgeOverlaps {
                left: 2,
                ..Default::default()
            },
        )
        .unwrap();
        let expected = [1.0 / 3.0, 2.0 / 3.0, 1.0, 1.0, 1.0, 1.0];
        for (got, want) in mask.weights().data().iter().zip(expected) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn opposing_ramps_sum_to_one() {
        for ov in 1..6usize {
            let n = ov + 3;
            let right = ramp_profile::<f64>(n, 0, ov).unwrap();
            let left = ramp_profile::<f64>(n, ov, 0).unwrap();
            // tiles offset by n-ov: right tail of the first overlaps the
            // left head of the second
            for k in 0..ov {
                let sum = right[n - ov + k] + left[k];
                assert!((sum - 1.0).abs() < 1e-12, "ov={ov} k={k} sum={sum}");
            }
        }
    }

    #[test]
    fn ramp_rejects_overlap_at_extent() {
        let err = build_ramp_mask::<f64>(Extent::new(1, 4), EdgeOverlaps::uniform(4)).unwrap_err();
        assert!(matches!(err, FusionError::OverlapTooLarge { .. }));
    }

    #[test]
    fn single_full_mask_tile_round_trips() {
        let mut canvas = PanoramaCanvas::<f64>::new(Extent::new(2, 3), 1);
        let tile = Tensor::from_vec(&[2, 3, 1], (0..6).map(|i| i as f64).collect()).unwrap();
        let mask = build_ramp_mask(Extent::new(2, 3), EdgeOverlaps::default()).unwrap();
        accumulate(&mut canvas, &tile, &mask, GridCoord::ORIGIN).unwrap();
        let (out, uncovered) = finalize(&canvas);
        assert!(uncovered.is_empty());
        assert_eq!(out, tile);
    }

    #[test]
    fn constant_tiles_fuse_to_constant() {
        let mut canvas = PanoramaCanvas::<f64>::new(Extent::new(2, 10), 1);
        let tile = constant_frame(2, 6, 1, 7.0);
        let anchors = [GridCoord::new(0, 0), GridCoord::new(0, 4)];
        let overlaps = edge_overlaps(&anchors, Extent::new(2, 6));
        for (&anchor, &ov) in anchors.iter().zip(&overlaps) {
            let mask = build_ramp_mask(Extent::new(2, 6), ov).unwrap();
            accumulate(&mut canvas, &tile, &mask, anchor).unwrap();
        }
        let (out, uncovered) = finalize(&canvas);
        assert!(uncovered.is_empty());
        for &v in out.data() {
            assert!((v - 7.0).abs() < 1e-6);
        }
    }

    #[test]
    fn opposing_ramp_blend_is_linear() {
        // left tile constant 1, right tile constant 0, overlap 3:
        // the shared cells blend to 3/4, 2/4, 1/4
        let n = 6usize;
        let ov = 3usize;
        let stride = n - ov;
        let mut canvas = PanoramaCanvas::<f64>::new(Extent::new(1, stride + n), 1);
        let left_tile = constant_frame(1, n, 1, 1.0);
        let right_tile = constant_frame(1, n, 1, 0.0);
        let anchors = [GridCoord::new(0, 0), GridCoord::new(0, stride as i64)];
        let overlaps = edge_overlaps(&anchors, Extent::new(1, n));
        let left_mask = build_ramp_mask(Extent::new(1, n), overlaps[0]).unwrap();
        let right_mask = build_ramp_mask(Extent::new(1, n), overlaps[1]).unwrap();
        accumulate(&mut canvas, &left_tile, &left_mask, anchors[0]).unwrap();
        accumulate(&mut canvas, &right_tile, &right_mask, anchors[1]).unwrap();
        let (out, _) = finalize(&canvas);
        let expected = [0.75, 0.5, 0.25];
        for (k, want) in expected.iter().enumerate() {
            let got = out.at3(0, stride + k, 0);
            assert!((got - want).abs() < 1e-12, "cell {k}: {got} vs {want}");
        }
    }

    #[test]
    fn accumulate_rejects_out_of_bounds() {
        let mut canvas = PanoramaCanvas::<f64>::new(Extent::new(2, 4), 1);
        let tile = constant_frame(2, 3, 1, 1.0);
        let mask = build_ramp_mask(Extent::new(2, 3), EdgeOverlaps::default()).unwrap();
        let err = accumulate(&mut canvas, &tile, &mask, GridCoord::new(0, 2)).unwrap_err();
        assert!(matches!(err, FusionError::OutOfBounds { .. }));
    }

    #[test]
    fn finalize_flags_empty_canvas() {
        let canvas = PanoramaCanvas::<f64>::new(Extent::new(2, 2), 3);
        let (out, uncovered) = finalize(&canvas);
        assert_eq!(uncovered.count(), 4);
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn finalize_divides_by_weight_sum() {
        let mut canvas = PanoramaCanvas::<f64>::new(Extent::new(1, 2), 1);
        let tile = constant_frame(1, 2, 1, 5.0);
        let mask = build_ramp_mask(Extent::new(1, 2), EdgeOverlaps::default()).unwrap();
        accumulate(&mut canvas, &tile, &mask, GridCoord::ORIGIN).unwrap();
        accumulate(&mut canvas, &tile, &mask, GridCoord::ORIGIN).unwrap();
        assert_eq!(canvas.weights().at2(0, 0), 2.0);
        let (out, _) = finalize(&canvas);
        assert!(out.data().iter().all(|&v| (v - 5.0).abs() < 1e-12));
    }

    #[test]
    fn edge_overlap_geometry() {
        let extent = Extent::new(2, 8);
        let anchors = [GridCoord::new(0, 0), GridCoord::new(0, 5)];
        let ov = edge_overlaps(&anchors, extent);
        assert_eq!(ov[0].right, 3);
        assert_eq!(ov[0].left, 0);
        assert_eq!(ov[1].left, 3);
        assert_eq!(ov[1].right, 0);
        assert_eq!(ov[0].top, 0);
        assert_eq!(ov[0].bottom, 0);
    }

    #[test]
    fn edge_overlap_clamps_coincident_tiles() {
        let extent = Extent::new(2, 4);
        // vertically offset duplicates share full horizontal footprint
        let anchors = [GridCoord::new(0, 0), GridCoord::new(1, 0)];
        let ov = edge_overlaps(&anchors, extent);
        assert_eq!(ov[0].bottom, 1);
        assert_eq!(ov[1].top, 1);
        assert_eq!(ov[0].left, 0);
        assert_eq!(ov[0].right, 0);
    }

    #[test]
    fn masks_partition_unity_on_a_strip() {
        let extent = Extent::new(2, 8);
        let stride = 5i64;
        let anchors: Vec<GridCoord> = (0..4).map(|i| GridCoord::new(0, i * stride)).collect();
        let overlaps = edge_overlaps(&anchors, extent);
        let canvas_w = (3 * stride) as usize + extent.w;
        let mut sums = vec![0.0f64; canvas_w];
        for (a, ov) in anchors.iter().zip(&overlaps) {
            let mask = build_ramp_mask::<f64>(extent, *ov).unwrap();
            for wloc in 0..extent.w {
                sums[a.w as usize + wloc] += mask.weights().at2(0, wloc);
            }
        }
        for (w, s) in sums.iter().enumerate() {
            assert!((s - 1.0).abs() < 1e-12, "column {w} sums to {s}");
        }
    }

    #[test]
    fn seam_energy_constant_panorama_is_zero() {
        let pano = constant_frame(4, 8, 1, 0.33);
        let report = seam_energy(&pano, &[4], &[2]).unwrap();
        for s in &report.seams {
            assert_eq!(s.stat.max_abs, 0.0);
        }
        assert_eq!(report.interior_cols.unwrap().max_abs, 0.0);
    }

    #[test]
    fn seam_energy_matches_interior_on_gradient() {
        let mut pano = Tensor::<f64>::zeros(&[3, 10, 1]);
        for h in 0..3 {
            for w in 0..10 {
                pano.set3(h, w, 0, 0.1 * w as f64);
            }
        }
        let report = seam_energy(&pano, &[5], &[]).unwrap();
        let seam = report.seams[0].stat;
        let interior = report.interior_cols.unwrap();
        assert!((seam.mean_abs - interior.mean_abs).abs() < 1e-12);
        assert!((seam.max_abs - interior.max_abs).abs() < 1e-12);
        assert!(report.interior_rows.is_some());
    }

    #[test]
    fn seam_energy_bounds_checked() {
        let pano = constant_frame(2, 4, 1, 0.0);
        assert!(matches!(
            seam_energy(&pano, &[0], &[]),
            Err(FusionError::SeamOutOfBounds { .. })
        ));
        assert!(matches!(
            seam_energy(&pano, &[4], &[]),
            Err(FusionError::SeamOutOfBounds { .. })
        ));
    }

    #[test]
    fn stat_kind_parses() {
        assert_eq!(StatKind::from_str("mean").unwrap(), StatKind::Mean);
        assert_eq!(
            StatKind::from_str("variance").unwrap(),
            StatKind::Variance
        );
        assert!(StatKind::from_str("mode").is_err());
    }
}
