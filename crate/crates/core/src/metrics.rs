//! Structural evaluation of panoramas: 1:1 patch partitioning, Gram-matrix
//! style loss between adjacent patches, and global structural diversity
//! (GSD) over distant patches.
//!
//! Feature extraction is pluggable. The fallback extractor is a cheap
//! deterministic pooling scheme good enough to rank constructions in
//! tests; externally computed features (and optional precomputed pairwise
//! distances) are ingested from `SSFT` / `SSPD` files.

use std::path::Path;

use thiserror::Error;

use crate::io::{read_feature_file, FormatError, PairwiseDistances};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("image is empty")]
    EmptyImage,
    #[error("image must be rank 3 (h, w, c), got rank {0}")]
    BadImageRank(usize),
    #[error("need at least {needed} patches, got {got}")]
    InsufficientPatches { needed: usize, got: usize },
    #[error("no patch pairs at separation >= {separation} among {patches} patches")]
    NoQualifyingPairs { separation: usize, patches: usize },
    #[error("separation must be at least 2, got {0}")]
    BadSeparation(usize),
    #[error("feature map {index} has mismatched shape")]
    FeatureShapeMismatch { index: usize },
    #[error("extractor produced {got} feature maps for {expected} patches")]
    FeatureCount { expected: usize, got: usize },
    #[error("pairwise table covers {got} items, grid has {expected}")]
    PairwiseCount { expected: usize, got: usize },
    #[error(transparent)]
    Format(#[from] FormatError),
}

/// Long-axis orientation of a patch grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LongAxis {
    Horizontal,
    Vertical,
}

/// Square, non-overlapping patches tiling the cropped panorama.
#[derive(Clone, Debug)]
pub struct PatchGrid<T> {
    patches: Vec<Tensor<T>>,
    coords: Vec<(usize, usize)>,
    side: usize,
    channels: usize,
    long_axis: LongAxis,
}

impl<T: Scalar> PatchGrid<T> {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn patch(&self, i: usize) -> &Tensor<T> {
        &self.patches[i]
    }

    pub fn patches(&self) -> &[Tensor<T>] {
        &self.patches
    }

    pub fn coords(&self) -> &[(usize, usize)] {
        &self.coords
    }

    pub fn long_axis(&self) -> LongAxis {
        self.long_axis
    }

    /// Long-axis grid index of patch `i`.
    pub fn axis_index(&self, i: usize) -> usize {
        match self.long_axis {
            LongAxis::Horizontal => self.coords[i].1,
            LongAxis::Vertical => self.coords[i].0,
        }
    }

    /// Concatenates the patches back into the cropped panorama.
    pub fn reassemble(&self) -> Tensor<T> {
        let side = self.side;
        let c = self.channels;
        let n = self.patches.len();
        let (h, w) = match self.long_axis {
            LongAxis::Horizontal => (side, side * n),
            LongAxis::Vertical => (side * n, side),
        };
        let mut out = Tensor::zeros(&[h, w, c]);
        for (i, patch) in self.patches.iter().enumerate() {
            let (oh, ow) = match self.long_axis {
                LongAxis::Horizontal => (0, i * side),
                LongAxis::Vertical => (i * side, 0),
            };
            for ph in 0..side {
                for pw in 0..side {
                    for ch in 0..c {
                        out.set3(oh + ph, ow + pw, ch, patch.at3(ph, pw, ch));
                    }
                }
            }
        }
        out
    }
}

/// Splits a panorama into `floor(long/short)` square patches of side
/// `min(h, w)` along the long axis; the trailing remainder is cropped,
/// never stretched.
pub fn partition_patches<T: Scalar>(panorama: &Tensor<T>) -> Result<PatchGrid<T>, MetricsError> {
    if panorama.rank() != 3 {
        return Err(MetricsError::BadImageRank(panorama.rank()));
    }
    let (h, w, c) = (
        panorama.shape()[0],
        panorama.shape()[1],
        panorama.shape()[2],
    );
    if h == 0 || w == 0 || c == 0 {
        return Err(MetricsError::EmptyImage);
    }
    let side = h.min(w);
    let long_axis = if w >= h {
        LongAxis::Horizontal
    } else {
        LongAxis::Vertical
    };
    let count = h.max(w) / side;
    let mut patches = Vec::with_capacity(count);
    let mut coords = Vec::with_capacity(count);
    for i in 0..count {
        let (oh, ow) = match long_axis {
            LongAxis::Horizontal => (0, i * side),
            LongAxis::Vertical => (i * side, 0),
        };
        let mut patch = Tensor::zeros(&[side, side, c]);
        for ph in 0..side {
            for pw in 0..side {
                for ch in 0..c {
                    patch.set3(ph, pw, ch, panorama.at3(oh + ph, ow + pw, ch));
                }
            }
        }
        patches.push(patch);
        coords.push(match long_axis {
            LongAxis::Horizontal => (0, i),
            LongAxis::Vertical => (i, 0),
        });
    }
    Ok(PatchGrid {
        patches,
        coords,
        side,
        channels: c,
        long_axis,
    })
}

/// Where a feature map came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureSource {
    ExternalFile,
    FallbackExtractor,
}

/// Feature values for one patch: rank 3 `(c, h, w)` or rank 1 flat.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap<T> {
    values: Tensor<T>,
    source: FeatureSource,
}

impl<T: Scalar> FeatureMap<T> {
    pub fn new(values: Tensor<T>, source: FeatureSource) -> Result<Self, MetricsError> {
        if values.rank() != 1 && values.rank() != 3 {
            return Err(MetricsError::BadImageRank(values.rank()));
        }
        Ok(Self { values, source })
    }

    pub fn values(&self) -> &Tensor<T> {
        &self.values
    }

    pub fn source(&self) -> FeatureSource {
        self.source
    }

    /// Pooled vector: per-channel spatial mean for rank-3 maps, the values
    /// themselves for flat maps.
    pub fn pooled(&self) -> Vec<T> {
        match self.values.rank() {
            1 => self.values.data().to_vec(),
            3 => {
                let (c, h, w) = (
                    self.values.shape()[0],
                    self.values.shape()[1],
                    self.values.shape()[2],
                );
                let spatial = T::from(h * w).unwrap();
                (0..c)
                    .map(|ch| {
                        let mut sum = T::zero();
                        for i in 0..h * w {
                            sum += self.values.data()[ch * h * w + i];
                        }
                        sum / spatial
                    })
                    .collect()
            }
            _ => unreachable!("rank checked at construction"),
        }
    }
}

/// Loads one externally computed feature map from an `SSFT` file.
pub fn load_feature_file<T: Scalar, P: AsRef<Path>>(path: P) -> Result<FeatureMap<T>, MetricsError> {
    let values = read_feature_file(path)?;
    FeatureMap::new(values, FeatureSource::ExternalFile)
}

/// Gram matrix `F·Fᵀ / (c·h·w)` of a feature map. Flat maps are treated
/// as `(dim, 1, 1)`. The result is symmetric by construction.
pub fn gram_matrix<T: Scalar>(f: &FeatureMap<T>) -> Tensor<T> {
    let (c, spatial) = match f.values.rank() {
        1 => (f.values.shape()[0], 1),
        3 => (f.values.shape()[0], f.values.shape()[1] * f.values.shape()[2]),
        _ => unreachable!(),
    };
    let data = f.values.data();
    let norm = T::from(c * spatial).unwrap();
    let mut gram = Tensor::zeros(&[c, c]);
    for a in 0..c {
        for b in a..c {
            let mut dot = T::zero();
            for p in 0..spatial {
                dot += data[a * spatial + p] * data[b * spatial + p];
            }
            let v = dot / norm;
            gram.set2(a, b, v);
            gram.set2(b, a, v);
        }
    }
    gram
}

/// Cosine similarity with the degenerate cases pinned: two zero vectors
/// are identical (1), a zero against a nonzero shares nothing (0).
pub fn cosine_similarity<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut dot = T::zero();
    let mut na = T::zero();
    let mut nb = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    let (na, nb) = (na.sqrt(), nb.sqrt());
    if na == T::zero() && nb == T::zero() {
        return T::one();
    }
    if na == T::zero() || nb == T::zero() {
        return T::zero();
    }
    dot / (na * nb)
}

fn euclidean<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut sum = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        let d = x - y;
        sum += d * d;
    }
    sum.sqrt()
}

/// Pluggable feature back-end for the style and diversity metrics.
pub trait FeatureExtractor<T: Scalar> {
    /// One feature map per grid patch, in grid order.
    fn extract(&self, grid: &PatchGrid<T>) -> Result<Vec<FeatureMap<T>>, MetricsError>;

    /// Perceptual distance between patches `a` and `b`. Defaults to the
    /// Euclidean distance between pooled feature vectors.
    fn perceptual_distance(
        &self,
        a: usize,
        b: usize,
        features: &[FeatureMap<T>],
    ) -> Result<T, MetricsError> {
        Ok(euclidean(&features[a].pooled(), &features[b].pooled()))
    }
}

/// Deterministic stand-in for a pretrained extractor: zero-means the
/// patch, average-pools it to a coarse grid, appends per-channel means and
/// variances, then zero-means and unit-normalizes the resulting vector.
/// Identical patches map to identical features; a constant shift of the
/// patch leaves the features unchanged.
#[derive(Clone, Copy, Debug)]
pub struct FallbackExtractor {
    pub out_dim: usize,
}

impl FallbackExtractor {
    pub fn new(out_dim: usize) -> Self {
        Self { out_dim: out_dim.max(1) }
    }
}

impl<T: Scalar> FeatureExtractor<T> for FallbackExtractor {
    fn extract(&self, grid: &PatchGrid<T>) -> Result<Vec<FeatureMap<T>>, MetricsError> {
        Ok(grid
            .patches()
            .iter()
            .map(|p| fallback_features(p, self.out_dim))
            .collect())
    }
}

/// Fallback feature computation for a single `(h, w, c)` patch.
pub fn fallback_features<T: Scalar>(patch: &Tensor<T>, out_dim: usize) -> FeatureMap<T> {
    let out_dim = out_dim.max(1);
    let (h, w, c) = (patch.shape()[0], patch.shape()[1], patch.shape()[2]);
    let n = T::from(patch.len()).unwrap();
    let mut global_sum = T::zero();
    for &v in patch.data() {
        global_sum += v;
    }
    let global_mean = global_sum / n;

    // largest pooling grid whose feature vector still fits out_dim
    let mut g = 1usize;
    while c * (g + 1) * (g + 1) + 2 * c <= out_dim && (g + 1) <= h.min(w) {
        g += 1;
    }

    let mut raw: Vec<T> = Vec::with_capacity(c * g * g + 2 * c);
    for ch in 0..c {
        for bh in 0..g {
            let h0 = bh * h / g;
            let h1 = ((bh + 1) * h / g).max(h0 + 1);
            for bw in 0..g {
                let w0 = bw * w / g;
                let w1 = ((bw + 1) * w / g).max(w0 + 1);
                let mut sum = T::zero();
                for i in h0..h1 {
                    for j in w0..w1 {
                        sum += patch.at3(i, j, ch) - global_mean;
                    }
                }
                raw.push(sum / T::from((h1 - h0) * (w1 - w0)).unwrap());
            }
        }
    }
    let pixels = T::from(h * w).unwrap();
    for ch in 0..c {
        let mut sum = T::zero();
        for i in 0..h {
            for j in 0..w {
                sum += patch.at3(i, j, ch) - global_mean;
            }
        }
        raw.push(sum / pixels);
    }
    for ch in 0..c {
        let mut sum = T::zero();
        for i in 0..h {
            for j in 0..w {
                sum += patch.at3(i, j, ch);
            }
        }
        let mean = sum / pixels;
        let mut var = T::zero();
        for i in 0..h {
            for j in 0..w {
                let d = patch.at3(i, j, ch) - mean;
                var += d * d;
            }
        }
        raw.push(var / pixels);
    }

    raw.truncate(out_dim);
    raw.resize(out_dim, T::zero());

    let dim = T::from(raw.len()).unwrap();
    let mut mean = T::zero();
    for &v in &raw {
        mean += v;
    }
    mean /= dim;
    for v in raw.iter_mut() {
        *v -= mean;
    }
    let mut norm = T::zero();
    for &v in &raw {
        norm += v * v;
    }
    let norm = norm.sqrt();
    if norm > T::zero() {
        for v in raw.iter_mut() {
            *v /= norm;
        }
    }
    FeatureMap {
        values: Tensor::from_vec(&[out_dim], raw).unwrap(),
        source: FeatureSource::FallbackExtractor,
    }
}

/// Externally computed features, one map per patch, with an optional
/// precomputed pairwise perceptual-distance table.
#[derive(Clone, Debug)]
pub struct ExternalFeatures<T> {
    maps: Vec<FeatureMap<T>>,
    pairwise: Option<PairwiseDistances<T>>,
}

impl<T: Scalar> ExternalFeatures<T> {
    pub fn new(
        maps: Vec<FeatureMap<T>>,
        pairwise: Option<PairwiseDistances<T>>,
    ) -> Result<Self, MetricsError> {
        if let Some(p) = &pairwise {
            if p.len() != maps.len() {
                return Err(MetricsError::PairwiseCount {
                    expected: maps.len(),
                    got: p.len(),
                });
            }
        }
        Ok(Self { maps, pairwise })
    }
}

impl<T: Scalar> FeatureExtractor<T> for ExternalFeatures<T> {
    fn extract(&self, grid: &PatchGrid<T>) -> Result<Vec<FeatureMap<T>>, MetricsError> {
        if self.maps.len() != grid.len() {
            return Err(MetricsError::FeatureCount {
                expected: grid.len(),
                got: self.maps.len(),
            });
        }
        Ok(self.maps.clone())
    }

    fn perceptual_distance(
        &self,
        a: usize,
        b: usize,
        features: &[FeatureMap<T>],
    ) -> Result<T, MetricsError> {
        match &self.pairwise {
            Some(table) => Ok(table.get(a, b)),
            None => Ok(euclidean(&features[a].pooled(), &features[b].pooled())),
        }
    }
}

/// Mean squared Frobenius distance between Gram matrices of adjacent
/// patches along the long axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StyleReport<T> {
    pub mean_loss: T,
    pub pair_count: usize,
}

pub fn intra_style_loss<T: Scalar, E: FeatureExtractor<T>>(
    grid: &PatchGrid<T>,
    extractor: &E,
) -> Result<StyleReport<T>, MetricsError> {
    if grid.len() < 2 {
        return Err(MetricsError::InsufficientPatches {
            needed: 2,
            got: grid.len(),
        });
    }
    let features = checked_extract(grid, extractor)?;
    let grams: Vec<Tensor<T>> = features.iter().map(gram_matrix).collect();
    let mut total = T::zero();
    let mut pairs = 0usize;
    for i in 0..grid.len() - 1 {
        let (a, b) = (&grams[i], &grams[i + 1]);
        if a.shape() != b.shape() {
            return Err(MetricsError::FeatureShapeMismatch { index: i + 1 });
        }
        let mut loss = T::zero();
        for (x, y) in a.data().iter().zip(b.data()) {
            let d = *x - *y;
            loss += d * d;
        }
        total += loss;
        pairs += 1;
    }
    Ok(StyleReport {
        mean_loss: total / T::from(pairs).unwrap(),
        pair_count: pairs,
    })
}

/// Global structural diversity over patch pairs at least `separation`
/// apart on the long axis: mean perceptual distance (higher is more
/// diverse) and mean cosine similarity of pooled features (lower is less
/// redundant).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GsdReport<T> {
    pub perceptual: T,
    pub semantic: T,
    pub pair_count: usize,
    pub separation: usize,
}

pub fn gsd<T: Scalar, E: FeatureExtractor<T>>(
    grid: &PatchGrid<T>,
    extractor: &E,
    separation: usize,
) -> Result<GsdReport<T>, MetricsError> {
    if separation < 2 {
        return Err(MetricsError::BadSeparation(separation));
    }
    let features = checked_extract(grid, extractor)?;
    let pooled: Vec<Vec<T>> = features.iter().map(|f| f.pooled()).collect();
    let mut perceptual = T::zero();
    let mut semantic = T::zero();
    let mut pairs = 0usize;
    for i in 0..grid.len() {
        for j in i + 1..grid.len() {
            let dist = grid.axis_index(j).abs_diff(grid.axis_index(i));
            if dist < separation {
                continue;
            }
            perceptual += extractor.perceptual_distance(i, j, &features)?;
            semantic += cosine_similarity(&pooled[i], &pooled[j]);
            pairs += 1;
        }
    }
    if pairs == 0 {
        return Err(MetricsError::NoQualifyingPairs {
            separation,
            patches: grid.len(),
        });
    }
    let count = T::from(pairs).unwrap();
    Ok(GsdReport {
        perceptual: perceptual / count,
        semantic: semantic / count,
        pair_count: pairs,
        separation,
    })
}

fn checked_extract<T: Scalar, E: FeatureExtractor<T>>(
    grid: &PatchGrid<T>,
    extractor: &E,
) -> Result<Vec<FeatureMap<T>>, MetricsError> {
    let features = extractor.extract(grid)?;
    if features.len() != grid.len() {
        return Err(MetricsError::FeatureCount {
            expected: grid.len(),
            got: features.len(),
        });
    }
    Ok(features)
}

/// Table-style metric report with the externally computed columns
/// reserved: absent metrics stay empty in CSV and `null` in JSON.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub fid: Option<f64>,
    pub clip: Option<f64>,
    pub kid: Option<f64>,
    pub style_l: Option<f64>,
    pub gsd_perceptual: Option<f64>,
    pub gsd_semantic: Option<f64>,
}

impl MetricReport {
    fn columns(&self) -> [(&'static str, Option<f64>); 6] {
        [
            ("fid", self.fid),
            ("clip", self.clip),
            ("kid", self.kid),
            ("style_l", self.style_l),
            ("gsd_perceptual", self.gsd_perceptual),
            ("gsd_semantic", self.gsd_semantic),
        ]
    }

    pub fn to_csv(&self) -> String {
        let cols = self.columns();
        let header: Vec<&str> = cols.iter().map(|(name, _)| *name).collect();
        let row: Vec<String> = cols
            .iter()
            .map(|(_, v)| v.map(|x| x.to_string()).unwrap_or_default())
            .collect();
        format!("{}\n{}\n", header.join(","), row.join(","))
    }

    pub fn to_json(&self) -> String {
        let fields: Vec<String> = self
            .columns()
            .iter()
            .map(|(name, v)| match v {
                Some(x) => format!("  \"{name}\": {x}"),
                None => format!("  \"{name}\": null"),
            })
            .collect();
        format!("{{\n{}\n}}\n", fields.join(",\n"))
    }
}
