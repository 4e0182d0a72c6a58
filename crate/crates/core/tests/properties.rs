//! Property tests over the planning, rotation, fusion, and format layers.

#![allow(clippy::needless_range_loop)]

use proptest::prelude::*;

use panoscan_core::flow::{interpolate, FlowSample};
use panoscan_core::fusion::{
    accumulate, build_ramp_mask, edge_overlaps, finalize, frame_statistic, median_consensus,
    PanoramaCanvas, StatKind, TileBlock,
};
use panoscan_core::geom::{Extent, GridCoord};
use panoscan_core::rng::DeterministicRng;
use panoscan_core::rope::{apply_rotation, rotary_phase, GlobalCoord, RopeParams};
use panoscan_core::tensor::Tensor;
use panoscan_core::trajectory::{
    plan_linear, plan_snake, tap_partition, DirectionVector, ScanConfig, ScanMode, Trajectory,
};

fn direction_strategy() -> impl Strategy<Value = DirectionVector> {
    prop_oneof![
        Just(DirectionVector::RIGHT),
        Just(DirectionVector::LEFT),
        Just(DirectionVector::DOWN),
        Just(DirectionVector::UP),
    ]
}

fn config_strategy() -> impl Strategy<Value = ScanConfig> {
    (
        1usize..=16,                       // spatial stride <= window via max below
        1usize..=32,                       // window length
        1i64..=24,                         // step stride
        0i64..=8,
        0i64..=8,
        prop_oneof![
            direction_strategy()
                .prop_flat_map(|d| (Just(d), 1usize..=24))
                .prop_map(|(direction, n)| (ScanMode::Linear { direction }, n)),
            (1usize..=5, 1usize..=5)
                .prop_map(|(rows, cols)| (ScanMode::Snake { rows, cols }, rows * cols)),
        ],
    )
        .prop_map(|(stride, len, step, ph, pw, (mode, n_steps))| {
            let window_len = len.max(stride);
            ScanConfig {
                window_len,
                spatial_stride: stride,
                step_stride: step,
                n_steps,
                p_init: GridCoord::new(ph, pw),
                mode,
            }
        })
}

proptest! {
    #[test]
    fn anchor_recurrence_is_exact(config in config_strategy()) {
        let traj = Trajectory::plan(&config).unwrap();
        prop_assert_eq!(traj.anchors().len(), config.n_steps);
        prop_assert_eq!(traj.anchors()[0], config.p_init);
        for t in 1..traj.len() {
            let step = traj.anchors()[t] - traj.anchors()[t - 1];
            prop_assert_eq!(step, traj.directions()[t - 1].offset() * config.step_stride);
        }
    }

    #[test]
    fn window_tiling_overlap(config in config_strategy()) {
        let n = config.n_steps;
        for t in 1..n {
            let a = panoscan_core::trajectory::window_interval(&config, t).unwrap();
            let b = panoscan_core::trajectory::window_interval(&config, t + 1).unwrap();
            prop_assert_eq!(a.interval_end - a.interval_start, config.window_len);
            // consecutive windows overlap by exactly l - delta (0 when they abut)
            prop_assert_eq!(
                a.interval_end.saturating_sub(b.interval_start),
                config.window_len - config.spatial_stride
            );
        }
    }

    #[test]
    fn snake_bijective(rows in 1usize..=6, cols in 1usize..=6, step in 1i64..=9) {
        let config = ScanConfig {
            window_len: 4,
            spatial_stride: 4,
            step_stride: step,
            n_steps: rows * cols,
            p_init: GridCoord::ORIGIN,
            mode: ScanMode::Snake { rows, cols },
        };
        let traj = plan_snake(&config).unwrap();
        let mut seen = std::collections::HashSet::new();
        for a in traj.anchors() {
            prop_assert!(seen.insert((a.h, a.w)));
        }
        prop_assert_eq!(seen.len(), rows * cols);
    }

    #[test]
    fn tap_partition_covers_once(n in 1usize..=64, block in 1usize..=64) {
        let block = block.min(n).max(1);
        let config = ScanConfig {
            window_len: 4,
            spatial_stride: 2,
            step_stride: 2,
            n_steps: n,
            p_init: GridCoord::ORIGIN,
            mode: ScanMode::Linear { direction: DirectionVector::RIGHT },
        };
        let traj = plan_linear(&config).unwrap();
        let part = tap_partition(&traj, block).unwrap();
        let mut covered = vec![false; n + 1];
        for b in part.blocks() {
            for t in b.first_window..=b.last_window {
                prop_assert!(!covered[t], "window {} assigned twice", t);
                covered[t] = true;
            }
        }
        prop_assert!(covered[1..].iter().all(|&c| c));
        prop_assert_eq!(part.primary_anchor_index(), 1);
    }

    #[test]
    fn rotation_preserves_norm(
        seed in 0u64..1_000_000,
        t in 0i64..64, h in 0i64..512, w in 0i64..512,
    ) {
        let params = RopeParams::new(10_000.0, 16, [4, 6, 6]).unwrap();
        let mut rng = DeterministicRng::new(seed);
        let v: Vec<f64> = (0..16).map(|_| rng.normal()).collect();
        let phase = rotary_phase(GlobalCoord::new(t, h, w), &params);
        let rotated = apply_rotation(&v, &phase).unwrap();
        let before: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let after: f64 = rotated.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!((before - after).abs() < 1e-9);
    }

    #[test]
    fn interpolate_is_affine_in_tau(seed in 0u64..1_000_000, tau in 0.0f64..=1.0) {
        let mut rng = DeterministicRng::new(seed);
        let z0 = Tensor::from_vec(&[3, 2], (0..6).map(|_| rng.normal()).collect()).unwrap();
        let z1 = Tensor::from_vec(&[3, 2], (0..6).map(|_| rng.normal()).collect()).unwrap();
        let at = |t: f64| interpolate(&FlowSample::new(z0.clone(), z1.clone(), t).unwrap());
        let half = at(tau / 2.0);
        let full = at(tau);
        let start = at(0.0);
        for i in 0..6 {
            let expected = (start.data()[i] + full.data()[i]) / 2.0;
            prop_assert!((half.data()[i] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn median_consensus_matches_oracle(
        stats in proptest::collection::vec(0u8..16, 1..=9)
    ) {
        // 1x1 frames carry exact statistics; the coarse value grid forces ties
        let values: Vec<f64> = stats.iter().map(|&k| k as f64 / 8.0).collect();
        let frames: Vec<Tensor<f64>> = values
            .iter()
            .map(|&v| Tensor::from_vec(&[1, 1, 1], vec![v]).unwrap())
            .collect();
        let block = TileBlock::new(1, frames, GridCoord::ORIGIN).unwrap();
        let (selected, _) = median_consensus(&block, StatKind::Mean).unwrap();
        prop_assert_eq!(selected, oracle_select(&values));
    }

    #[test]
    fn constant_tiles_reconstruct_constant(
        seed in 0u64..1_000_000,
        n_tiles in 1usize..=6,
        tile_w in 2usize..=10,
        value in -5.0f64..5.0,
    ) {
        let mut rng = DeterministicRng::new(seed);
        let stride = 1 + rng.index(tile_w); // 1..=tile_w keeps the strip gap-free
        let extent = Extent::new(3, tile_w);
        let anchors: Vec<GridCoord> = (0..n_tiles)
            .map(|i| GridCoord::new(0, (i * stride) as i64))
            .collect();
        let canvas_w = (n_tiles - 1) * stride + tile_w;
        let mut canvas = PanoramaCanvas::<f64>::new(Extent::new(3, canvas_w), 1);
        let overlaps = edge_overlaps(&anchors, extent);
        let tile = Tensor::filled(&[3, tile_w, 1], value);
        for (&a, &ov) in anchors.iter().zip(&overlaps) {
            let mask = build_ramp_mask(extent, ov).unwrap();
            accumulate(&mut canvas, &tile, &mask, a).unwrap();
        }
        let (out, uncovered) = finalize(&canvas);
        prop_assert!(uncovered.is_empty());
        for &v in out.data() {
            prop_assert!((v - value).abs() < 1e-6);
        }
    }

    #[test]
    fn accumulation_order_does_not_matter(seed in 0u64..1_000_000) {
        let mut rng = DeterministicRng::new(seed);
        let extent = Extent::new(4, 6);
        let stride = 4usize;
        let n_tiles = 4usize;
        let anchors: Vec<GridCoord> = (0..n_tiles)
            .map(|i| GridCoord::new(0, (i * stride) as i64))
            .collect();
        let overlaps = edge_overlaps(&anchors, extent);
        let tiles: Vec<Tensor<f64>> = (0..n_tiles)
            .map(|_| {
                Tensor::from_vec(&[4, 6, 2], (0..48).map(|_| rng.normal()).collect()).unwrap()
            })
            .collect();
        let canvas_w = (n_tiles - 1) * stride + extent.w;

        let fuse = |order: &[usize]| {
            let mut canvas = PanoramaCanvas::<f64>::new(Extent::new(4, canvas_w), 2);
            for &i in order {
                let mask = build_ramp_mask(extent, overlaps[i]).unwrap();
                accumulate(&mut canvas, &tiles[i], &mask, anchors[i]).unwrap();
            }
            finalize(&canvas).0
        };

        let forward = fuse(&[0, 1, 2, 3]);
        let mut order: Vec<usize> = (0..n_tiles).collect();
        // Fisher-Yates off the seeded stream
        for i in (1..order.len()).rev() {
            order.swap(i, rng.index(i + 1));
        }
        let shuffled = fuse(&order);
        for (a, b) in forward.data().iter().zip(shuffled.data()) {
            prop_assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn agreeing_tiles_reconstruct_exactly(seed in 0u64..1_000_000) {
        // overlapping tiles sampled from one global field agree pixelwise,
        // so fusion must reproduce that field on the footprint
        let mut rng = DeterministicRng::new(seed);
        let a = rng.uniform(-1.0f64, 1.0);
        let b = rng.uniform(-1.0f64, 1.0);
        let field = |h: usize, w: usize| a * h as f64 + b * w as f64;
        let extent = Extent::new(4, 8);
        let stride = 5usize;
        let anchors: Vec<GridCoord> =
            (0..4).map(|i| GridCoord::new(0, (i * stride) as i64)).collect();
        let canvas_w = 3 * stride + extent.w;
        let mut canvas = PanoramaCanvas::<f64>::new(Extent::new(4, canvas_w), 1);
        let overlaps = edge_overlaps(&anchors, extent);
        for (&anchor, &ov) in anchors.iter().zip(&overlaps) {
            let mut tile = Tensor::zeros(&[4, 8, 1]);
            for h in 0..4 {
                for w in 0..8 {
                    tile.set3(h, w, 0, field(h, anchor.w as usize + w));
                }
            }
            let mask = build_ramp_mask(extent, ov).unwrap();
            accumulate(&mut canvas, &tile, &mask, anchor).unwrap();
        }
        let (out, uncovered) = finalize(&canvas);
        prop_assert!(uncovered.is_empty());
        for h in 0..4 {
            for w in 0..canvas_w {
                prop_assert!((out.at3(h, w, 0) - field(h, w)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn frame_statistic_mean_bounded_by_extremes(
        values in proptest::collection::vec(-10.0f64..10.0, 1..64)
    ) {
        let frame = Tensor::from_vec(&[values.len(), 1, 1], values.clone()).unwrap();
        let mean = frame_statistic(&frame, StatKind::Mean).unwrap();
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(mean >= lo - 1e-12 && mean <= hi + 1e-12);
    }
}

/// Independent selection rule: median by sorted copy, then linear-scan
/// argmin with strict improvement (ties keep the earliest index).
fn oracle_select(stats: &[f64]) -> usize {
    let mut sorted = stats.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    let median = if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        0.5 * (sorted[mid - 1] + sorted[mid])
    };
    let mut best = 0usize;
    for (i, &s) in stats.iter().enumerate() {
        if (s - median).abs() < (stats[best] - median).abs() {
            best = i;
        }
    }
    best
}
