//! Line-oriented `key = value` configuration with dotted sections.
//!
//! Parsing happens in two stages: a raw key/value scan (comments and blank
//! lines skipped, duplicates rejected), then resolution into a fully
//! concrete [`PipelineConfig`] where every default is explicit. The
//! resolved config re-serializes with [`PipelineConfig::to_text`]; parsing
//! that text again yields an identical config.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use panoscan_core::fusion::StatKind;
use panoscan_core::geom::{Extent, GridCoord};
use panoscan_core::rope::RopeParams;
use panoscan_core::trajectory::{
    coverage_report, DirectionVector, ScanConfig, ScanMode, Trajectory,
};

use crate::CliError;

/// Raw `key = value` pairs in file order.
#[derive(Clone, Debug, Default)]
pub struct RawConfig {
    entries: BTreeMap<String, String>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::config(format!(
                    "line {}: expected `key = value`, got {line:?}",
                    lineno + 1
                )));
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() {
                return Err(CliError::config(format!("line {}: empty key", lineno + 1)));
            }
            if entries.insert(key.clone(), value).is_some() {
                return Err(CliError::config(format!(
                    "line {}: duplicate key `{key}`",
                    lineno + 1
                )));
            }
        }
        Ok(Self { entries })
    }

    /// Sets or overrides a key (used for flag overrides).
    pub fn set(&mut self, key: &str, value: &str) {
        self.entries.insert(key.to_string(), value.to_string());
    }
}

struct Resolver<'a> {
    raw: &'a RawConfig,
    used: BTreeSet<String>,
}

impl<'a> Resolver<'a> {
    fn new(raw: &'a RawConfig) -> Self {
        Self {
            raw,
            used: BTreeSet::new(),
        }
    }

    fn get(&mut self, key: &str) -> Option<&'a str> {
        let value = self.raw.entries.get(key)?;
        self.used.insert(key.to_string());
        Some(value.as_str())
    }

    fn parse_opt<T: FromStr>(&mut self, key: &str, expected: &str) -> Result<Option<T>, CliError> {
        match self.get(key) {
            None => Ok(None),
            Some(text) => text.parse::<T>().map(Some).map_err(|_| {
                CliError::config(format!("key `{key}`: expected {expected}, got {text:?}"))
            }),
        }
    }

    fn parse_or<T: FromStr>(&mut self, key: &str, expected: &str, default: T) -> Result<T, CliError> {
        Ok(self.parse_opt(key, expected)?.unwrap_or(default))
    }

    fn finish(self) -> Result<(), CliError> {
        for key in self.raw.entries.keys() {
            if !self.used.contains(key) {
                return Err(CliError::config(format!("unknown key `{key}`")));
            }
        }
        Ok(())
    }
}

/// Reduced positive rational scale factor `>= 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Ratio {
    num: u64,
    den: u64,
}

impl Ratio {
    pub const ONE: Ratio = Ratio { num: 1, den: 1 };

    pub fn new(num: u64, den: u64) -> Result<Self, CliError> {
        if num == 0 || den == 0 {
            return Err(CliError::config("scale must be positive".to_string()));
        }
        let g = gcd(num, den);
        let (num, den) = (num / g, den / g);
        if num < den {
            return Err(CliError::config(format!(
                "enhancer.scale {num}/{den} must be at least 1"
            )));
        }
        Ok(Self { num, den })
    }

    pub fn is_one(&self) -> bool {
        self.num == self.den
    }

    pub fn num(&self) -> u64 {
        self.num
    }

    pub fn den(&self) -> u64 {
        self.den
    }

    /// Scales a length, requiring an integer result.
    pub fn scale_len(&self, n: usize, what: &str) -> Result<usize, CliError> {
        let scaled = n as u64 * self.num;
        if !scaled.is_multiple_of(self.den) {
            return Err(CliError::config(format!(
                "{what} ({n}) times enhancer.scale {} is not an integer",
                self
            )));
        }
        Ok((scaled / self.den) as usize)
    }

    /// Divides a length by the ratio, requiring an integer result.
    pub fn unscale_len(&self, n: usize, what: &str) -> Result<usize, CliError> {
        let base = n as u64 * self.den;
        if !base.is_multiple_of(self.num) {
            return Err(CliError::config(format!(
                "{what} ({n}) is not divisible by enhancer.scale {}",
                self
            )));
        }
        Ok((base / self.num) as usize)
    }

    pub fn scale_coord(&self, c: GridCoord, what: &str) -> Result<GridCoord, CliError> {
        let scale = |v: i64| -> Result<i64, CliError> {
            let scaled = v * self.num as i64;
            if scaled % self.den as i64 != 0 {
                return Err(CliError::config(format!(
                    "{what} coordinate {v} times enhancer.scale {} is not an integer",
                    self
                )));
            }
            Ok(scaled / self.den as i64)
        };
        Ok(GridCoord::new(scale(c.h)?, scale(c.w)?))
    }
}

impl std::fmt::Display for Ratio {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

impl FromStr for Ratio {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let build = |num: u64, den: u64| Ratio::new(num, den).map_err(|e| e.to_string());
        if let Some((a, b)) = s.split_once('/') {
            let num: u64 = a.trim().parse().map_err(|_| "bad numerator".to_string())?;
            let den: u64 = b.trim().parse().map_err(|_| "bad denominator".to_string())?;
            return build(num, den);
        }
        if let Some((whole, frac)) = s.split_once('.') {
            let whole: u64 = if whole.is_empty() {
                0
            } else {
                whole.parse().map_err(|_| "bad integer part".to_string())?
            };
            if frac.is_empty() || frac.len() > 6 || !frac.bytes().all(|b| b.is_ascii_digit()) {
                return Err("bad fractional part".to_string());
            }
            let den = 10u64.pow(frac.len() as u32);
            let num = whole * den + frac.parse::<u64>().map_err(|_| "bad fraction".to_string())?;
            return build(num, den);
        }
        let num: u64 = s.parse().map_err(|_| "expected a number".to_string())?;
        build(num, 1)
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EnhancerSpec {
    Identity,
    Upscale(Ratio),
}

impl EnhancerSpec {
    pub fn ratio(&self) -> Ratio {
        match self {
            EnhancerSpec::Identity => Ratio::ONE,
            EnhancerSpec::Upscale(r) => *r,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SourceKind {
    Gradient,
    Texture,
    Sampler,
}

impl SourceKind {
    fn name(&self) -> &'static str {
        match self {
            SourceKind::Gradient => "gradient",
            SourceKind::Texture => "texture",
            SourceKind::Sampler => "sampler",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OverlapMode {
    /// Overlaps derived from anchor geometry.
    Auto,
    /// Fixed ramp width (base scale) on every neighbor-facing edge.
    Fixed(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExtractorKind {
    Fallback,
    External,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplerConfig {
    pub checkpoint: Option<PathBuf>,
    pub train_iters: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub euler_steps: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsConfig {
    pub separation: usize,
    pub extractor: ExtractorKind,
    pub features_dir: Option<PathBuf>,
    pub out_dim: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IoConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub write_tiles: bool,
    pub channels: usize,
}

/// Fully resolved pipeline configuration; every field is concrete.
#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    /// Final output extent (after the enhancer).
    pub canvas_target: Extent,
    /// Extent at generation scale.
    pub canvas_base: Extent,
    /// Scan plan at generation scale.
    pub scan: ScanConfig,
    /// Tile extent at generation scale.
    pub tile_base: Extent,
    pub tap_block_size: usize,
    pub rope: RopeParams,
    pub statistic: StatKind,
    pub frames_per_block: usize,
    pub overlap_mode: OverlapMode,
    pub enhancer: EnhancerSpec,
    pub source: SourceKind,
    pub sampler: SamplerConfig,
    pub metrics: MetricsConfig,
    pub io: IoConfig,
}

fn stat_name(kind: StatKind) -> &'static str {
    match kind {
        StatKind::Mean => "mean",
        StatKind::Luminance => "luminance",
        StatKind::Variance => "variance",
    }
}

fn direction_name(d: DirectionVector) -> &'static str {
    match (d.dh(), d.dw()) {
        (0, 1) => "right",
        (0, -1) => "left",
        (1, 0) => "down",
        (-1, 0) => "up",
        _ => unreachable!("constructor enforces unit directions"),
    }
}

fn parse_direction(s: &str) -> Option<DirectionVector> {
    match s {
        "right" => Some(DirectionVector::RIGHT),
        "left" => Some(DirectionVector::LEFT),
        "down" => Some(DirectionVector::DOWN),
        "up" => Some(DirectionVector::UP),
        _ => None,
    }
}

impl PipelineConfig {
    /// Resolves raw keys into a validated config with every default made
    /// explicit. Also plans the trajectory once to prove the canvas is
    /// reachable before any work happens.
    pub fn resolve(raw: &RawConfig) -> Result<Self, CliError> {
        let mut r = Resolver::new(raw);

        // enhancer first: the canvas keys are target-scale
        let enhancer_kind = r.get("enhancer.kind").unwrap_or("identity").to_string();
        let scale: Ratio = r.parse_or("enhancer.scale", "a scale like 2 or 1.5", Ratio::ONE)?;
        let enhancer = match enhancer_kind.as_str() {
            "identity" => {
                if !scale.is_one() {
                    return Err(CliError::config(
                        "enhancer.kind = identity requires enhancer.scale = 1".to_string(),
                    ));
                }
                EnhancerSpec::Identity
            }
            "upscale" => EnhancerSpec::Upscale(scale),
            other => {
                return Err(CliError::config(format!(
                    "key `enhancer.kind`: expected identity or upscale, got {other:?}"
                )))
            }
        };
        let ratio = enhancer.ratio();

        // scan mode
        let mode_name = r.get("scan.mode").unwrap_or("linear").to_string();
        let direction = match r.get("scan.direction") {
            Some(s) => parse_direction(s).ok_or_else(|| {
                CliError::config(format!(
                    "key `scan.direction`: expected right/left/down/up, got {s:?}"
                ))
            })?,
            None => DirectionVector::RIGHT,
        };

        // canvas target extent: explicit height/width, or short_side + aspect
        let height: Option<usize> = r.parse_opt("canvas.height", "a positive integer")?;
        let width: Option<usize> = r.parse_opt("canvas.width", "a positive integer")?;
        let short_side: Option<usize> = r.parse_opt("canvas.short_side", "a positive integer")?;
        let aspect = r.get("canvas.aspect").map(str::to_string);
        let canvas_target = match (height, width) {
            (Some(h), Some(w)) => {
                if h == 0 || w == 0 {
                    return Err(CliError::config(
                        "canvas.height and canvas.width must be positive".to_string(),
                    ));
                }
                Extent::new(h, w)
            }
            (None, None) => {
                let (Some(short), Some(aspect)) = (short_side, aspect.as_deref()) else {
                    return Err(CliError::config(
                        "set canvas.height and canvas.width, or canvas.short_side and canvas.aspect"
                            .to_string(),
                    ));
                };
                let (long_part, short_part) = aspect.split_once(':').ok_or_else(|| {
                    CliError::config(format!(
                        "key `canvas.aspect`: expected LONG:SHORT like 8:1, got {aspect:?}"
                    ))
                })?;
                let long_n: usize = long_part.trim().parse().map_err(|_| {
                    CliError::config(format!("key `canvas.aspect`: bad ratio {aspect:?}"))
                })?;
                let short_n: usize = short_part.trim().parse().map_err(|_| {
                    CliError::config(format!("key `canvas.aspect`: bad ratio {aspect:?}"))
                })?;
                if long_n == 0 || short_n == 0 || short == 0 {
                    return Err(CliError::config(
                        "canvas.aspect and canvas.short_side must be positive".to_string(),
                    ));
                }
                if !(short * long_n).is_multiple_of(short_n) {
                    return Err(CliError::config(format!(
                        "canvas.short_side {short} does not divide evenly under aspect {aspect}"
                    )));
                }
                let long = short * long_n / short_n;
                // vertical linear scans grow downward; everything else grows right
                let vertical = mode_name == "linear" && direction.dw() == 0;
                if vertical {
                    Extent::new(long, short)
                } else {
                    Extent::new(short, long)
                }
            }
            _ => {
                return Err(CliError::config(
                    "canvas.height and canvas.width must be set together".to_string(),
                ))
            }
        };
        let canvas_base = Extent::new(
            ratio.unscale_len(canvas_target.h, "canvas.height")?,
            ratio.unscale_len(canvas_target.w, "canvas.width")?,
        );

        // scan strides at base scale
        let window_len: usize = r.parse_or("scan.window_len", "a positive integer", 64)?;
        if window_len == 0 {
            return Err(CliError::config("scan.window_len must be positive".to_string()));
        }
        let step_stride: i64 = r.parse_or(
            "scan.step_stride",
            "a positive integer",
            (window_len / 2).max(1) as i64,
        )?;
        let spatial_stride: usize = r.parse_or(
            "scan.spatial_stride",
            "a positive integer",
            step_stride.max(1) as usize,
        )?;
        if spatial_stride == 0 || spatial_stride > window_len {
            return Err(CliError::config(format!(
                "scan.spatial_stride ({spatial_stride}) must be in 1..=scan.window_len ({window_len})"
            )));
        }
        if step_stride <= 0 {
            return Err(CliError::config("scan.step_stride must be positive".to_string()));
        }
        let p_init = GridCoord::new(
            r.parse_or("scan.p_init_h", "a non-negative integer", 0i64)?,
            r.parse_or("scan.p_init_w", "a non-negative integer", 0i64)?,
        );
        if p_init.h < 0 || p_init.w < 0 {
            return Err(CliError::config("scan.p_init must be non-negative".to_string()));
        }

        // steps along one axis: anchors start at p_init and the last tile
        // must end exactly at the canvas edge
        let steps_along = |span: usize, init: i64, key: &str| -> Result<usize, CliError> {
            let reach = span as i64 - init - window_len as i64;
            if reach < 0 {
                return Err(CliError::config(format!(
                    "scan.window_len ({window_len}) exceeds the canvas span {span} along {key}"
                )));
            }
            if reach % step_stride != 0 {
                return Err(CliError::config(format!(
                    "canvas span {span} minus scan.window_len is not divisible by scan.step_stride \
                     ({step_stride}) along {key}"
                )));
            }
            Ok((reach / step_stride) as usize + 1)
        };

        let (mode, n_steps, tile_base) = match mode_name.as_str() {
            "linear" => {
                let (span, init, cross, key) = if direction.dw() != 0 {
                    (canvas_base.w, p_init.w, canvas_base.h, "canvas.width")
                } else {
                    (canvas_base.h, p_init.h, canvas_base.w, "canvas.height")
                };
                if direction.dw() < 0 || direction.dh() < 0 {
                    return Err(CliError::config(
                        "scan.direction left/up needs an explicit scan.n_steps plan; use right/down"
                            .to_string(),
                    ));
                }
                let derived = steps_along(span, init, key)?;
                let n_steps = r.parse_or("scan.n_steps", "a positive integer", derived)?;
                if n_steps != derived {
                    return Err(CliError::config(format!(
                        "scan.n_steps ({n_steps}) does not cover the canvas; {key} needs {derived}"
                    )));
                }
                let tile = if direction.dw() != 0 {
                    Extent::new(cross, window_len)
                } else {
                    Extent::new(window_len, cross)
                };
                (ScanMode::Linear { direction }, n_steps, tile)
            }
            "snake" => {
                let rows_derived = steps_along(canvas_base.h, p_init.h, "canvas.height")?;
                let cols_derived = steps_along(canvas_base.w, p_init.w, "canvas.width")?;
                let rows = r.parse_or("scan.rows", "a positive integer", rows_derived)?;
                let cols = r.parse_or("scan.cols", "a positive integer", cols_derived)?;
                if rows != rows_derived || cols != cols_derived {
                    return Err(CliError::config(format!(
                        "scan.rows x scan.cols ({rows}x{cols}) does not cover the canvas; \
                         needs {rows_derived}x{cols_derived}"
                    )));
                }
                let n_steps = r.parse_or("scan.n_steps", "a positive integer", rows * cols)?;
                if n_steps != rows * cols {
                    return Err(CliError::config(format!(
                        "scan.n_steps ({n_steps}) must equal scan.rows x scan.cols ({})",
                        rows * cols
                    )));
                }
                (
                    ScanMode::Snake { rows, cols },
                    n_steps,
                    Extent::new(window_len, window_len),
                )
            }
            other => {
                return Err(CliError::config(format!(
                    "key `scan.mode`: expected linear or snake, got {other:?}"
                )))
            }
        };

        let scan = ScanConfig {
            window_len,
            spatial_stride,
            step_stride,
            n_steps,
            p_init,
            mode,
        };
        scan.validate()
            .map_err(|e| CliError::config(format!("scan config: {e}")))?;

        let tap_block_size: usize = r.parse_or("scan.tap_block_size", "a positive integer", 4)?;
        if tap_block_size == 0 {
            return Err(CliError::config("scan.tap_block_size must be positive".to_string()));
        }

        // rope
        let base: f64 = r.parse_or("rope.base", "a positive number", 10_000.0)?;
        let head_dim: usize = r.parse_or("rope.head_dim", "an even positive integer", 12)?;
        let axis_split = match r.get("rope.axis_split") {
            None => {
                if !head_dim.is_multiple_of(6) {
                    return Err(CliError::config(format!(
                        "rope.head_dim ({head_dim}) needs an explicit rope.axis_split \
                         (three even integers summing to it)"
                    )));
                }
                [head_dim / 3; 3]
            }
            Some(text) => {
                let parts: Vec<usize> = text
                    .split(',')
                    .map(|p| p.trim().parse::<usize>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| {
                        CliError::config(format!(
                            "key `rope.axis_split`: expected T,H,W integers, got {text:?}"
                        ))
                    })?;
                if parts.len() != 3 {
                    return Err(CliError::config(
                        "key `rope.axis_split`: expected exactly three values".to_string(),
                    ));
                }
                [parts[0], parts[1], parts[2]]
            }
        };
        let rope = RopeParams::new(base, head_dim, axis_split)
            .map_err(|e| CliError::config(format!("rope config: {e}")))?;

        // fusion
        let statistic = match r.get("fusion.statistic") {
            None => StatKind::Mean,
            Some(s) => s
                .parse::<StatKind>()
                .map_err(|e| CliError::config(format!("key `fusion.statistic`: {e}")))?,
        };
        let frames_per_block: usize =
            r.parse_or("fusion.frames_per_block", "a positive integer", 1)?;
        if frames_per_block == 0 {
            return Err(CliError::config(
                "fusion.frames_per_block must be positive".to_string(),
            ));
        }
        let overlap_mode = match r.get("fusion.overlap") {
            None => OverlapMode::Auto,
            Some("auto") => OverlapMode::Auto,
            Some(text) => {
                let v: usize = text.parse().map_err(|_| {
                    CliError::config(format!(
                        "key `fusion.overlap`: expected auto or an integer, got {text:?}"
                    ))
                })?;
                if v >= window_len {
                    return Err(CliError::config(format!(
                        "fusion.overlap ({v}) must be smaller than scan.window_len ({window_len})"
                    )));
                }
                OverlapMode::Fixed(v)
            }
        };
        if let OverlapMode::Fixed(v) = overlap_mode {
            // the scaled ramp width must stay integral after enhancement
            ratio.scale_len(v, "fusion.overlap")?;
        }

        // source + sampler
        let source = match r.get("source.kind").unwrap_or("gradient") {
            "gradient" => SourceKind::Gradient,
            "texture" => SourceKind::Texture,
            "sampler" => SourceKind::Sampler,
            other => {
                return Err(CliError::config(format!(
                    "key `source.kind`: expected gradient, texture, or sampler, got {other:?}"
                )))
            }
        };
        let sampler = SamplerConfig {
            checkpoint: r.get("sampler.checkpoint").map(PathBuf::from),
            train_iters: r.parse_or("sampler.train_iters", "a positive integer", 200)?,
            learning_rate: r.parse_or("sampler.learning_rate", "a positive number", 0.05)?,
            batch_size: r.parse_or("sampler.batch_size", "a positive integer", 8)?,
            euler_steps: r.parse_or("sampler.euler_steps", "a positive integer", 8)?,
        };
        if sampler.train_iters == 0 || sampler.batch_size == 0 || sampler.euler_steps == 0 {
            return Err(CliError::config(
                "sampler.train_iters, sampler.batch_size, sampler.euler_steps must be positive"
                    .to_string(),
            ));
        }
        if !(sampler.learning_rate > 0.0 && sampler.learning_rate.is_finite()) {
            return Err(CliError::config(
                "sampler.learning_rate must be positive".to_string(),
            ));
        }

        // metrics
        let extractor = match r.get("metrics.extractor").unwrap_or("fallback") {
            "fallback" => ExtractorKind::Fallback,
            "external" => ExtractorKind::External,
            other => {
                return Err(CliError::config(format!(
                    "key `metrics.extractor`: expected fallback or external, got {other:?}"
                )))
            }
        };
        let metrics = MetricsConfig {
            separation: r.parse_or("metrics.separation", "an integer >= 2", 2)?,
            extractor,
            features_dir: r.get("metrics.features_dir").map(PathBuf::from),
            out_dim: r.parse_or("metrics.out_dim", "a positive integer", 64)?,
        };
        if metrics.separation < 2 {
            return Err(CliError::config(
                "metrics.separation must be at least 2".to_string(),
            ));
        }
        if metrics.out_dim == 0 {
            return Err(CliError::config("metrics.out_dim must be positive".to_string()));
        }
        if extractor == ExtractorKind::External && metrics.features_dir.is_none() {
            return Err(CliError::config(
                "metrics.extractor = external requires metrics.features_dir".to_string(),
            ));
        }

        // io
        let channels: usize = r.parse_or("io.channels", "1 or 3", 3)?;
        if channels != 1 && channels != 3 {
            return Err(CliError::config(format!(
                "io.channels must be 1 or 3, got {channels}"
            )));
        }
        let io = IoConfig {
            seed: r.parse_or("io.seed", "an unsigned integer", 0u64)?,
            out_dir: PathBuf::from(r.get("io.out_dir").unwrap_or("out")),
            write_tiles: r.parse_or("io.write_tiles", "true or false", false)?,
            channels,
        };

        r.finish()?;

        let config = PipelineConfig {
            canvas_target,
            canvas_base,
            scan,
            tile_base,
            tap_block_size,
            rope,
            statistic,
            frames_per_block,
            overlap_mode,
            enhancer,
            source,
            sampler,
            metrics,
            io,
        };
        config.check_reachability()?;
        config.check_scaling()?;
        Ok(config)
    }

    /// Plans the trajectory and verifies the base canvas is fully covered
    /// with no window escaping it.
    fn check_reachability(&self) -> Result<(), CliError> {
        let trajectory = Trajectory::plan(&self.scan)
            .map_err(|e| CliError::config(format!("scan config: {e}")))?;
        let report = coverage_report(&trajectory, self.canvas_base, self.tile_base);
        if !report.out_of_bounds().is_empty() {
            return Err(CliError::config(format!(
                "canvas unreachable: windows {:?} escape the base canvas {} ({})",
                report.out_of_bounds(),
                self.canvas_base,
                report.summary()
            )));
        }
        if !report.is_fully_covered() {
            return Err(CliError::config(format!(
                "canvas unreachable: {}",
                report.summary()
            )));
        }
        Ok(())
    }

    /// Every anchor and the tile extent must scale to integers under the
    /// enhancer ratio.
    fn check_scaling(&self) -> Result<(), CliError> {
        let ratio = self.enhancer.ratio();
        if ratio.is_one() {
            return Ok(());
        }
        ratio.scale_len(self.tile_base.h, "tile height")?;
        ratio.scale_len(self.tile_base.w, "tile width")?;
        let trajectory = Trajectory::plan(&self.scan)
            .map_err(|e| CliError::config(format!("scan config: {e}")))?;
        for (i, &a) in trajectory.anchors().iter().enumerate() {
            ratio
                .scale_coord(a, "anchor")
                .map_err(|e| CliError::config(format!("window {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn trajectory(&self) -> Trajectory {
        Trajectory::plan(&self.scan).expect("validated at resolve time")
    }

    /// Tile extent after enhancement.
    pub fn tile_scaled(&self) -> Extent {
        let ratio = self.enhancer.ratio();
        Extent::new(
            ratio.scale_len(self.tile_base.h, "tile height").expect("checked"),
            ratio.scale_len(self.tile_base.w, "tile width").expect("checked"),
        )
    }

    /// Re-serializes with every key explicit; parsing the output resolves
    /// to an identical config.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| writeln!(out, "{k} = {v}").unwrap();

        kv("canvas.height", self.canvas_target.h.to_string());
        kv("canvas.width", self.canvas_target.w.to_string());

        match self.scan.mode {
            ScanMode::Linear { direction } => {
                kv("scan.mode", "linear".to_string());
                kv("scan.direction", direction_name(direction).to_string());
            }
            ScanMode::Snake { rows, cols } => {
                kv("scan.mode", "snake".to_string());
                kv("scan.rows", rows.to_string());
                kv("scan.cols", cols.to_string());
            }
        }
        kv("scan.window_len", self.scan.window_len.to_string());
        kv("scan.spatial_stride", self.scan.spatial_stride.to_string());
        kv("scan.step_stride", self.scan.step_stride.to_string());
        kv("scan.n_steps", self.scan.n_steps.to_string());
        kv("scan.p_init_h", self.scan.p_init.h.to_string());
        kv("scan.p_init_w", self.scan.p_init.w.to_string());
        kv("scan.tap_block_size", self.tap_block_size.to_string());

        kv("rope.base", self.rope.base().to_string());
        kv("rope.head_dim", self.rope.head_dim().to_string());
        let split = self.rope.axis_split();
        kv(
            "rope.axis_split",
            format!("{},{},{}", split[0], split[1], split[2]),
        );

        kv("fusion.statistic", stat_name(self.statistic).to_string());
        kv(
            "fusion.frames_per_block",
            self.frames_per_block.to_string(),
        );
        match self.overlap_mode {
            OverlapMode::Auto => kv("fusion.overlap", "auto".to_string()),
            OverlapMode::Fixed(v) => kv("fusion.overlap", v.to_string()),
        }

        match self.enhancer {
            EnhancerSpec::Identity => {
                kv("enhancer.kind", "identity".to_string());
                kv("enhancer.scale", "1".to_string());
            }
            EnhancerSpec::Upscale(ratio) => {
                kv("enhancer.kind", "upscale".to_string());
                kv("enhancer.scale", ratio.to_string());
            }
        }

        kv("source.kind", self.source.name().to_string());
        if let Some(path) = &self.sampler.checkpoint {
            kv("sampler.checkpoint", path.display().to_string());
        }
        kv("sampler.train_iters", self.sampler.train_iters.to_string());
        kv(
            "sampler.learning_rate",
            self.sampler.learning_rate.to_string(),
        );
        kv("sampler.batch_size", self.sampler.batch_size.to_string());
        kv("sampler.euler_steps", self.sampler.euler_steps.to_string());

        kv("metrics.separation", self.metrics.separation.to_string());
        kv(
            "metrics.extractor",
            match self.metrics.extractor {
                ExtractorKind::Fallback => "fallback".to_string(),
                ExtractorKind::External => "external".to_string(),
            },
        );
        if let Some(dir) = &self.metrics.features_dir {
            kv("metrics.features_dir", dir.display().to_string());
        }
        kv("metrics.out_dim", self.metrics.out_dim.to_string());

        kv("io.seed", self.io.seed.to_string());
        kv("io.out_dir", self.io.out_dir.display().to_string());
        kv("io.write_tiles", self.io.write_tiles.to_string());
        kv("io.channels", self.io.channels.to_string());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resolve(text: &str) -> Result<PipelineConfig, CliError> {
        PipelineConfig::resolve(&RawConfig::parse(text).unwrap())
    }

    #[test]
    fn minimal_config_fills_defaults_and_round_trips() {
        let cfg = resolve("canvas.height = 64\ncanvas.width = 256\nscan.mode = linear\n").unwrap();
        assert_eq!(cfg.scan.window_len, 64);
        assert_eq!(cfg.scan.step_stride, 32);
        assert_eq!(cfg.scan.spatial_stride, 32);
        assert_eq!(cfg.scan.n_steps, 7);
        assert_eq!(cfg.tile_base, Extent::new(64, 64));
        assert_eq!(cfg.source, SourceKind::Gradient);
        let again = resolve(&cfg.to_text()).unwrap();
        assert_eq!(cfg, again);
        let third = resolve(&again.to_text()).unwrap();
        assert_eq!(again, third);
    }

    #[test]
    fn aspect_resolves_long_axis() {
        let cfg = resolve(
            "canvas.short_side = 64\ncanvas.aspect = 8:1\nscan.mode = linear\nscan.window_len = 64\nscan.step_stride = 32\n",
        )
        .unwrap();
        assert_eq!(cfg.canvas_target, Extent::new(64, 512));

        let vertical = resolve(
            "canvas.short_side = 64\ncanvas.aspect = 4:1\nscan.mode = linear\nscan.direction = down\nscan.window_len = 64\nscan.step_stride = 64\n",
        )
        .unwrap();
        assert_eq!(vertical.canvas_target, Extent::new(256, 64));
    }

    #[test]
    fn stride_above_window_rejected_naming_keys() {
        let err = resolve(
            "canvas.height = 64\ncanvas.width = 256\nscan.window_len = 32\nscan.spatial_stride = 40\n",
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("scan.spatial_stride"), "{msg}");
        assert!(msg.contains("scan.window_len"), "{msg}");
    }

    #[test]
    fn snake_grid_mismatch_rejected() {
        let err = resolve(
            "canvas.height = 96\ncanvas.width = 96\nscan.mode = snake\nscan.window_len = 32\n\
             scan.step_stride = 32\nscan.rows = 2\nscan.cols = 3\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("scan.rows"), "{err}");
    }

    #[test]
    fn unknown_key_rejected() {
        let err = resolve("canvas.height = 64\ncanvas.width = 256\nscan.windw_len = 8\n")
            .unwrap_err();
        assert!(err.to_string().contains("scan.windw_len"), "{err}");
    }

    #[test]
    fn unreachable_canvas_rejected() {
        // window 64, stride 32 covers 256 exactly with 7 steps; forcing 5 leaves a gap
        let err = resolve(
            "canvas.height = 64\ncanvas.width = 256\nscan.window_len = 64\nscan.step_stride = 32\nscan.n_steps = 5\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("cover"), "{err}");
    }

    #[test]
    fn indivisible_span_rejected() {
        let err = resolve(
            "canvas.height = 64\ncanvas.width = 250\nscan.window_len = 64\nscan.step_stride = 32\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("divisible"), "{err}");
    }

    #[test]
    fn ratio_parsing() {
        assert_eq!("2".parse::<Ratio>().unwrap(), Ratio::new(2, 1).unwrap());
        assert_eq!("1.5".parse::<Ratio>().unwrap(), Ratio::new(3, 2).unwrap());
        assert_eq!("3/2".parse::<Ratio>().unwrap(), Ratio::new(3, 2).unwrap());
        assert!("0.5".parse::<Ratio>().is_err()); // below 1
        assert!("abc".parse::<Ratio>().is_err());
    }

    #[test]
    fn fractional_scale_needs_divisible_geometry() {
        // target 96 wide / scale 1.5 -> base 64 wide; tile base 64x32 both scale fine,
        // but a fixed overlap of 3 scales to 4.5
        let err = resolve(
            "canvas.height = 96\ncanvas.width = 96\nscan.window_len = 32\nscan.step_stride = 32\n\
             scan.mode = snake\nenhancer.kind = upscale\nenhancer.scale = 1.5\nfusion.overlap = 3\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("fusion.overlap"), "{err}");

        let ok = resolve(
            "canvas.height = 96\ncanvas.width = 96\nscan.window_len = 32\nscan.step_stride = 32\n\
             scan.mode = snake\nenhancer.kind = upscale\nenhancer.scale = 1.5\n",
        )
        .unwrap();
        assert_eq!(ok.canvas_base, Extent::new(64, 64));
        assert_eq!(ok.tile_scaled(), Extent::new(48, 48));
        let again = resolve(&ok.to_text()).unwrap();
        assert_eq!(ok, again);
    }

    #[test]
    fn identity_enhancer_rejects_scale() {
        let err = resolve(
            "canvas.height = 64\ncanvas.width = 256\nenhancer.kind = identity\nenhancer.scale = 2\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("identity"), "{err}");
    }

    #[test]
    fn duplicate_key_rejected() {
        assert!(RawConfig::parse("a.b = 1\na.b = 2\n").is_err());
    }

    #[test]
    fn external_extractor_needs_features_dir() {
        let err = resolve(
            "canvas.height = 64\ncanvas.width = 256\nmetrics.extractor = external\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("features_dir"), "{err}");
    }
}
