//! Scanning rotary embeddings: trajectory-aware 3D rotary phases and the
//! attention kernel that consumes them.
//!
//! Standard rotary embeddings encode a position as a rotation so attention
//! depends only on relative displacement. Here the spatial coordinates are
//! globalized first (each token's frame-local position is offset by its
//! window's anchor), so the same relative-displacement property holds
//! across windows anywhere on the canvas.
//!
//! The phase vector for a coordinate `(t, h_g, w_g)` is the concatenation
//! of three per-axis groups in `(t, h, w)` order, each group being the
//! coordinate value times that axis's frequency table. Rotations act on
//! interleaved pairs `(v[2i], v[2i+1])`.

use thiserror::Error;

use crate::geom::GridCoord;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RopeError {
    #[error("frequency base must be a finite positive number")]
    InvalidBase,
    #[error("head dim {0} must be even and positive")]
    InvalidHeadDim(usize),
    #[error("axis split {split:?} must hold even entries >= 2 summing to head dim {head_dim}")]
    InvalidAxisSplit { split: [usize; 3], head_dim: usize },
    #[error("vector length {got} does not match {expected} (2x angle count)")]
    VectorLength { expected: usize, got: usize },
    #[error("{what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
}

/// Rotary embedding parameters: frequency base, head dimension, and how
/// the head dimension is split across the `(t, h, w)` axes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RopeParams {
    base: f64,
    head_dim: usize,
    axis_split: [usize; 3],
}

impl RopeParams {
    pub fn new(base: f64, head_dim: usize, axis_split: [usize; 3]) -> Result<Self, RopeError> {
        if !(base.is_finite() && base > 0.0) {
            return Err(RopeError::InvalidBase);
        }
        if head_dim == 0 || !head_dim.is_multiple_of(2) {
            return Err(RopeError::InvalidHeadDim(head_dim));
        }
        let sum: usize = axis_split.iter().sum();
        if sum != head_dim || axis_split.iter().any(|&d| d < 2 || d % 2 != 0) {
            return Err(RopeError::InvalidAxisSplit {
                split: axis_split,
                head_dim,
            });
        }
        Ok(Self {
            base,
            head_dim,
            axis_split,
        })
    }

    /// Symmetric split of `head_dim` across the three axes.
    pub fn symmetric(base: f64, head_dim: usize) -> Result<Self, RopeError> {
        if !head_dim.is_multiple_of(6) {
            return Err(RopeError::InvalidHeadDim(head_dim));
        }
        let third = head_dim / 3;
        Self::new(base, head_dim, [third, third, third])
    }

    pub fn base(&self) -> f64 {
        self.base
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
    }

    pub fn axis_split(&self) -> [usize; 3] {
        self.axis_split
    }

    pub fn axis_dim(&self, axis: RopeAxis) -> usize {
        self.axis_split[axis as usize]
    }
}

/// The three coordinate axes, in phase-concatenation order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RopeAxis {
    T = 0,
    H = 1,
    W = 2,
}

/// Token coordinate in the unified global system.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct GlobalCoord {
    /// Temporal block index.
    pub t: i64,
    pub h: i64,
    pub w: i64,
}

impl GlobalCoord {
    pub fn new(t: i64, h: i64, w: i64) -> Self {
        Self { t, h, w }
    }

    /// Globalizes a frame-local position under a window anchor.
    pub fn from_local(t: i64, local: (i64, i64), anchor: GridCoord) -> Self {
        let (h, w) = globalize(local, anchor);
        Self { t, h, w }
    }

    pub fn shifted(&self, dt: i64, dh: i64, dw: i64) -> Self {
        Self::new(self.t + dt, self.h + dh, self.w + dw)
    }
}

/// Componentwise sum of a local coordinate and its window anchor.
pub fn globalize(local: (i64, i64), anchor: GridCoord) -> (i64, i64) {
    (local.0 + anchor.h, local.1 + anchor.w)
}

/// Frequency table for one axis: `θ_j = base^(-2j / axis_dim)` for
/// `j = 0 .. axis_dim/2`, strictly decreasing when `base > 1`.
pub fn frequencies<T: Scalar>(params: &RopeParams, axis: RopeAxis) -> Vec<T> {
    let axis_dim = params.axis_dim(axis);
    (0..axis_dim / 2)
        .map(|j| {
            let exp = -2.0 * j as f64 / axis_dim as f64;
            T::from(params.base.powf(exp)).unwrap()
        })
        .collect()
}

/// Per-pair rotation angles for one token, grouped `(t, h, w)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RotaryPhase<T> {
    angles: Vec<T>,
}

impl<T: Scalar> RotaryPhase<T> {
    pub fn angles(&self) -> &[T] {
        &self.angles
    }
}

/// Builds the phase vector for a global coordinate: the concatenation over
/// axes of the coordinate value times the axis frequency table.
pub fn rotary_phase<T: Scalar>(coord: GlobalCoord, params: &RopeParams) -> RotaryPhase<T> {
    let mut angles = Vec::with_capacity(params.head_dim() / 2);
    for (axis, value) in [
        (RopeAxis::T, coord.t),
        (RopeAxis::H, coord.h),
        (RopeAxis::W, coord.w),
    ] {
        let v = T::from(value).unwrap();
        for f in frequencies::<T>(params, axis) {
            angles.push(v * f);
        }
    }
    RotaryPhase { angles }
}

/// Rotates consecutive pairs `(v[2i], v[2i+1])` by `angles[i]`. Preserves
/// the Euclidean norm.
pub fn apply_rotation<T: Scalar>(v: &[T], phase: &RotaryPhase<T>) -> Result<Vec<T>, RopeError> {
    rotate_pairs(v, phase, false)
}

/// Inverse rotation (angles negated); used by backpropagation.
pub fn apply_rotation_inverse<T: Scalar>(
    v: &[T],
    phase: &RotaryPhase<T>,
) -> Result<Vec<T>, RopeError> {
    rotate_pairs(v, phase, true)
}

fn rotate_pairs<T: Scalar>(
    v: &[T],
    phase: &RotaryPhase<T>,
    inverse: bool,
) -> Result<Vec<T>, RopeError> {
    if v.len() != 2 * phase.angles.len() {
        return Err(RopeError::VectorLength {
            expected: 2 * phase.angles.len(),
            got: v.len(),
        });
    }
    let mut out = Vec::with_capacity(v.len());
    for (i, &angle) in phase.angles.iter().enumerate() {
        let a = if inverse { -angle } else { angle };
        let (cos, sin) = (a.cos(), a.sin());
        let x = v[2 * i];
        let y = v[2 * i + 1];
        out.push(x * cos - y * sin);
        out.push(x * sin + y * cos);
    }
    Ok(out)
}

/// Frame-local token coordinates in row-major order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenGrid {
    height: usize,
    width: usize,
    tokens: Vec<(i64, i64)>,
}

impl TokenGrid {
    pub fn new(height: usize, width: usize) -> Self {
        let mut tokens = Vec::with_capacity(height * width);
        for h in 0..height {
            for w in 0..width {
                tokens.push((h as i64, w as i64));
            }
        }
        Self {
            height,
            width,
            tokens,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn locals(&self) -> &[(i64, i64)] {
        &self.tokens
    }

    /// Global coordinates of every token under block index `t` and anchor.
    pub fn global_coords(&self, t: i64, anchor: GridCoord) -> Vec<GlobalCoord> {
        self.tokens
            .iter()
            .map(|&local| GlobalCoord::from_local(t, local, anchor))
            .collect()
    }
}

/// Attention output together with the intermediates the trainer needs.
#[derive(Clone, Debug)]
pub struct AttentionTrace<T> {
    /// `(n, dv)` attention output.
    pub output: Tensor<T>,
    /// `(n, n)` row-stochastic attention weights.
    pub weights: Tensor<T>,
    /// `(n, d)` queries after rotation.
    pub rotated_q: Tensor<T>,
    /// `(n, d)` keys after rotation.
    pub rotated_k: Tensor<T>,
}

/// Scaled dot-product attention with rotary phases applied to `q` and `k`
/// before the dot product. `q`/`k` are `(n, d)` with `d` the rope head
/// dim; `v` is `(n, dv)`. Logits scale by `1/sqrt(d)`; each weight row
/// sums to 1. Runs as a single fixed-order computation.
pub fn scanpe_attention<T: Scalar>(
    queries: &Tensor<T>,
    keys: &Tensor<T>,
    values: &Tensor<T>,
    coords: &[GlobalCoord],
    params: &RopeParams,
) -> Result<Tensor<T>, RopeError> {
    Ok(scanpe_attention_traced(queries, keys, values, coords, params)?.output)
}

/// As [`scanpe_attention`] but keeps the rotated projections and the
/// weight matrix for backpropagation.
pub fn scanpe_attention_traced<T: Scalar>(
    queries: &Tensor<T>,
    keys: &Tensor<T>,
    values: &Tensor<T>,
    coords: &[GlobalCoord],
    params: &RopeParams,
) -> Result<AttentionTrace<T>, RopeError> {
    let n = coords.len();
    let d = params.head_dim();
    check_matrix("queries", queries, n, d)?;
    check_matrix("keys", keys, n, d)?;
    if values.rank() != 2 || values.shape()[0] != n {
        return Err(RopeError::Dimension {
            what: "values rows",
            expected: n,
            got: if values.rank() == 2 {
                values.shape()[0]
            } else {
                values.rank()
            },
        });
    }
    let dv = values.shape()[1];

    let phases: Vec<RotaryPhase<T>> = coords
        .iter()
        .map(|&c| rotary_phase(c, params))
        .collect();
    let mut rotated_q = Tensor::zeros(&[n, d]);
    let mut rotated_k = Tensor::zeros(&[n, d]);
    for i in 0..n {
        let rq = apply_rotation(queries.row(i), &phases[i])?;
        let rk = apply_rotation(keys.row(i), &phases[i])?;
        rotated_q.data_mut()[i * d..(i + 1) * d].copy_from_slice(&rq);
        rotated_k.data_mut()[i * d..(i + 1) * d].copy_from_slice(&rk);
    }

    let scale = T::one() / T::from(d).unwrap().sqrt();
    let mut weights = Tensor::zeros(&[n, n]);
    for i in 0..n {
        let qi = rotated_q.row(i);
        let mut row_max = T::neg_infinity();
        let mut logits = Vec::with_capacity(n);
        for j in 0..n {
            let kj = rotated_k.row(j);
            let mut dot = T::zero();
            for c in 0..d {
                dot += qi[c] * kj[c];
            }
            let logit = dot * scale;
            if logit > row_max {
                row_max = logit;
            }
            logits.push(logit);
        }
        let mut denom = T::zero();
        for l in logits.iter_mut() {
            *l = (*l - row_max).exp();
            denom += *l;
        }
        for (j, l) in logits.into_iter().enumerate() {
            weights.set2(i, j, l / denom);
        }
    }

    let mut output = Tensor::zeros(&[n, dv]);
    for i in 0..n {
        for j in 0..n {
            let a = weights.at2(i, j);
            for c in 0..dv {
                let cur = output.at2(i, c);
                output.set2(i, c, cur + a * values.at2(j, c));
            }
        }
    }

    Ok(AttentionTrace {
        output,
        weights,
        rotated_q,
        rotated_k,
    })
}

fn check_matrix<T: Scalar>(
    what: &'static str,
    m: &Tensor<T>,
    rows: usize,
    cols: usize,
) -> Result<(), RopeError> {
    if m.rank() != 2 || m.shape()[0] != rows || m.shape()[1] != cols {
        return Err(RopeError::Dimension {
            what,
            expected: rows * cols,
            got: m.len(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::DeterministicRng;

    fn params(base: f64) -> RopeParams {
        RopeParams::new(base, 12, [4, 4, 4]).unwrap()
    }

    fn random_matrix(rng: &mut DeterministicRng, n: usize, d: usize) -> Tensor<f64> {
        let data = (0..n * d).map(|_| rng.normal()).collect();
        Tensor::from_vec(&[n, d], data).unwrap()
    }

    #[test]
    fn frequency_values() {
        let p = RopeParams::new(10_000.0, 24, [8, 8, 8]).unwrap();
        let f: Vec<f64> = frequencies(&p, RopeAxis::T);
        assert_eq!(f.len(), 4);
        assert!((f[0] - 1.0).abs() < 1e-12);
        assert!((f[2] - 0.01).abs() < 1e-12); // 10000^(-1/2)
    }

    #[test]
    fn unit_base_gives_unit_frequencies() {
        let p = RopeParams::new(1.0, 12, [4, 4, 4]).unwrap();
        for axis in [RopeAxis::T, RopeAxis::H, RopeAxis::W] {
            assert!(frequencies::<f64>(&p, axis).iter().all(|&f| f == 1.0));
        }
    }

    #[test]
    fn frequencies_strictly_decrease_for_base_above_one() {
        let p = RopeParams::new(10_000.0, 32, [16, 8, 8]).unwrap();
        for axis in [RopeAxis::T, RopeAxis::H, RopeAxis::W] {
            let f: Vec<f64> = frequencies(&p, axis);
            for pair in f.windows(2) {
                assert!(pair[1] < pair[0]);
            }
        }
    }

    #[test]
    fn globalize_examples() {
        assert_eq!(globalize((3, 7), GridCoord::new(0, 48)), (3, 55));
        assert_eq!(globalize((3, 7), GridCoord::ORIGIN), (3, 7));
        assert_eq!(globalize((0, 0), GridCoord::new(9, 4)), (9, 4));
    }

    #[test]
    fn zero_coord_zero_phase() {
        let phase: RotaryPhase<f64> = rotary_phase(GlobalCoord::new(0, 0, 0), &params(10_000.0));
        assert!(phase.angles().iter().all(|&a| a == 0.0));
    }

    #[test]
    fn unit_base_unit_time_phase() {
        let phase: RotaryPhase<f64> = rotary_phase(GlobalCoord::new(1, 0, 0), &params(1.0));
        let angles = phase.angles();
        assert_eq!(angles.len(), 6);
        assert!(angles[..2].iter().all(|&a| a == 1.0)); // t group
        assert!(angles[2..].iter().all(|&a| a == 0.0)); // spatial groups
    }

    #[test]
    fn phase_additive_per_axis() {
        let p = params(10_000.0);
        let whole: RotaryPhase<f64> = rotary_phase(GlobalCoord::new(2, 3, 5), &p);
        let t: RotaryPhase<f64> = rotary_phase(GlobalCoord::new(2, 0, 0), &p);
        let h: RotaryPhase<f64> = rotary_phase(GlobalCoord::new(0, 3, 0), &p);
        let w: RotaryPhase<f64> = rotary_phase(GlobalCoord::new(0, 0, 5), &p);
        for i in 0..whole.angles().len() {
            let sum = t.angles()[i] + h.angles()[i] + w.angles()[i];
            assert_eq!(whole.angles()[i], sum);
        }
    }

    #[test]
    fn zero_phase_is_identity_rotation() {
        let phase = RotaryPhase {
            angles: vec![0.0f64; 3],
        };
        let v = [1.0, -2.0, 3.0, 0.5, -0.25, 4.0];
        assert_eq!(apply_rotation(&v, &phase).unwrap(), v.to_vec());
    }

    #[test]
    fn quarter_turn() {
        let phase = RotaryPhase {
            angles: vec![std::f64::consts::FRAC_PI_2],
        };
        let out = apply_rotation(&[1.0, 0.0], &phase).unwrap();
        assert!((out[0] - 0.0).abs() < 1e-9);
        assert!((out[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rotation_preserves_norm() {
        let mut rng = DeterministicRng::new(42);
        let p = params(10_000.0);
        for _ in 0..1000 {
            let coord = GlobalCoord::new(
                rng.index(100) as i64,
                rng.index(1000) as i64,
                rng.index(1000) as i64,
            );
            let phase: RotaryPhase<f64> = rotary_phase(coord, &p);
            let v: Vec<f64> = (0..12).map(|_| rng.normal()).collect();
            let out = apply_rotation(&v, &phase).unwrap();
            let before: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let after: f64 = out.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((before - after).abs() < 1e-9);
        }
    }

    #[test]
    fn rotation_inverse_round_trips() {
        let p = params(10_000.0);
        let phase: RotaryPhase<f64> = rotary_phase(GlobalCoord::new(3, 17, 40), &p);
        let v: Vec<f64> = (0..12).map(|i| i as f64 - 5.5).collect();
        let round = apply_rotation_inverse(&apply_rotation(&v, &phase).unwrap(), &phase).unwrap();
        for (a, b) in v.iter().zip(&round) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rotation_length_mismatch() {
        let phase = RotaryPhase {
            angles: vec![0.0f64; 3],
        };
        assert!(matches!(
            apply_rotation(&[0.0; 5], &phase),
            Err(RopeError::VectorLength {
                expected: 6,
                got: 5
            })
        ));
    }

    #[test]
    fn single_token_attention_returns_value_row() {
        let p = params(10_000.0);
        let q = Tensor::from_vec(&[1, 12], (0..12).map(|i| i as f64).collect()).unwrap();
        let k = q.clone();
        let v = Tensor::from_vec(&[1, 3], vec![7.0, -1.0, 2.5]).unwrap();
        let coords = [GlobalCoord::new(1, 5, 9)];
        let out = scanpe_attention(&q, &k, &v, &coords, &p).unwrap();
        assert_eq!(out.data(), v.data());
    }

    #[test]
    fn equal_coords_match_unrotated_attention() {
        let mut rng = DeterministicRng::new(1);
        let p = params(10_000.0);
        let n = 5;
        let q = random_matrix(&mut rng, n, 12);
        let k = random_matrix(&mut rng, n, 12);
        let v = random_matrix(&mut rng, n, 4);
        let shared = vec![GlobalCoord::new(4, 123, 77); n];
        let zero = vec![GlobalCoord::new(0, 0, 0); n];
        let a = scanpe_attention(&q, &k, &v, &shared, &p).unwrap();
        let b = scanpe_attention(&q, &k, &v, &zero, &p).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn rows_are_stochastic() {
        let mut rng = DeterministicRng::new(2);
        let p = params(10_000.0);
        let n = 7;
        let q = random_matrix(&mut rng, n, 12);
        let k = random_matrix(&mut rng, n, 12);
        let v = random_matrix(&mut rng, n, 4);
        let coords: Vec<GlobalCoord> = (0..n)
            .map(|i| GlobalCoord::new(1, i as i64, 2 * i as i64))
            .collect();
        let trace = scanpe_attention_traced(&q, &k, &v, &coords, &p).unwrap();
        for i in 0..n {
            let sum: f64 = (0..n).map(|j| trace.weights.at2(i, j)).sum();
            assert!((sum - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn logits_invariant_under_coordinate_shift() {
        let mut rng = DeterministicRng::new(3);
        let p = params(10_000.0);
        let n = 6;
        let q = random_matrix(&mut rng, n, 12);
        let k = random_matrix(&mut rng, n, 12);
        let v = random_matrix(&mut rng, n, 4);
        let coords: Vec<GlobalCoord> = (0..n)
            .map(|i| GlobalCoord::new(1 + i as i64, 3 * i as i64, 50 - i as i64))
            .collect();
        let shifted: Vec<GlobalCoord> = coords.iter().map(|c| c.shifted(7, 11, 13)).collect();
        let a = scanpe_attention_traced(&q, &k, &v, &coords, &p).unwrap();
        let b = scanpe_attention_traced(&q, &k, &v, &shifted, &p).unwrap();
        for (x, y) in a.weights.data().iter().zip(b.weights.data()) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let p = params(10_000.0);
        let q = Tensor::<f64>::zeros(&[2, 10]);
        let k = Tensor::<f64>::zeros(&[2, 12]);
        let v = Tensor::<f64>::zeros(&[2, 3]);
        let coords = [GlobalCoord::default(), GlobalCoord::default()];
        assert!(scanpe_attention(&q, &k, &v, &coords, &p).is_err());
    }

    #[test]
    fn token_grid_is_row_major_and_globalizes() {
        let grid = TokenGrid::new(2, 3);
        assert_eq!(grid.len(), 6);
        assert_eq!(grid.locals()[0], (0, 0));
        assert_eq!(grid.locals()[2], (0, 2));
        assert_eq!(grid.locals()[3], (1, 0));
        let coords = grid.global_coords(4, GridCoord::new(10, 100));
        assert_eq!(coords[5], GlobalCoord::new(4, 11, 102));
        assert!(coords.iter().all(|c| c.t == 4));
    }

    #[test]
    fn axis_split_validation() {
        assert!(RopeParams::new(10_000.0, 12, [4, 4, 2]).is_err()); // sums to 10
        assert!(RopeParams::new(10_000.0, 12, [6, 4, 2]).is_ok());
        assert!(RopeParams::new(10_000.0, 12, [5, 4, 3]).is_err()); // odd entries
        assert!(RopeParams::new(10_000.0, 0, [0, 0, 0]).is_err());
        assert!(RopeParams::new(-1.0, 12, [4, 4, 4]).is_err());
        assert!(RopeParams::symmetric(10_000.0, 96).is_ok());
        assert!(RopeParams::symmetric(10_000.0, 16).is_err());
    }
}
