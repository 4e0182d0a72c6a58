//! Tile sources for `generate`.
//!
//! Procedural sources are pure functions of the global pixel coordinate
//! (and the run seed), so overlapping windows sample identical values and
//! fusion can reassemble the global field exactly. The sampler source
//! drives the toy flow-matching network instead.

use panoscan_core::flow::{
    sample, train_loop, Condition, FlowSample, NetConfig, TrainConfig, VectorFieldNet,
};
use panoscan_core::geom::{Extent, GridCoord};
use panoscan_core::rng::DeterministicRng;
use panoscan_core::rope::TokenGrid;
use panoscan_core::tensor::Tensor;

use crate::config::PipelineConfig;
use crate::CliError;

/// A single global linear gradient: channel 0 ramps along width, channel 1
/// along height, channel 2 along the diagonal. Frames within a block are
/// identical, so fusing windows of this source reproduces the gradient.
pub struct GradientSource {
    canvas: Extent,
}

impl GradientSource {
    pub fn new(canvas: Extent) -> Self {
        Self { canvas }
    }

    pub fn value(&self, h: i64, w: i64, channel: usize) -> f32 {
        let span = |v: i64, n: usize| -> f64 {
            if n <= 1 {
                0.0
            } else {
                v as f64 / (n - 1) as f64
            }
        };
        let x = span(w, self.canvas.w);
        let y = span(h, self.canvas.h);
        let v = match channel {
            0 => x,
            1 => y,
            _ => 0.5 * (x + y),
        };
        v as f32
    }
}

/// Seeded smooth sinusoid mix, again keyed purely by global coordinates.
/// Frames within a block get a small deterministic per-frame offset so the
/// median-consensus selection has real work to do.
pub struct TextureSource {
    params: Vec<[f64; 5]>,
    ripple: f64,
}

impl TextureSource {
    pub fn new(seed: u64, channels: usize) -> Self {
        let mut params = Vec::with_capacity(channels);
        for ch in 0..channels {
            let mut rng = DeterministicRng::new(seed ^ 0x7e57_7e57).fork(ch as u64 + 1);
            params.push([
                rng.uniform(0.02, 0.11),
                rng.uniform(0.02, 0.11),
                rng.uniform(0.0, std::f64::consts::TAU),
                rng.uniform(0.01, 0.07),
                rng.uniform(0.0, std::f64::consts::TAU),
            ]);
        }
        Self {
            params,
            ripple: 0.02,
        }
    }

    fn value(&self, h: i64, w: i64, channel: usize) -> f32 {
        let [fa, fb, pa, fc, pb] = self.params[channel % self.params.len()];
        let (hf, wf) = (h as f64, w as f64);
        let a = (fa * wf + fb * hf + pa).sin();
        let b = (fc * (wf - hf) + pb).cos();
        (0.5 + 0.25 * a + 0.25 * b) as f32
    }

    fn frame_offset(&self, frame: usize, frames: usize) -> f32 {
        if frames <= 1 {
            return 0.0;
        }
        let centered = frame as f64 - (frames - 1) as f64 / 2.0;
        (self.ripple * centered / (frames - 1) as f64) as f32
    }
}

/// Builds frames by evaluating a per-pixel function of global coordinates.
fn fill_frames(
    tile: Extent,
    channels: usize,
    anchor: GridCoord,
    frames: usize,
    value: impl Fn(i64, i64, usize) -> f32,
    offset: impl Fn(usize) -> f32,
) -> Vec<Tensor<f32>> {
    let mut base = Tensor::zeros(&[tile.h, tile.w, channels]);
    for h in 0..tile.h {
        for w in 0..tile.w {
            for c in 0..channels {
                base.set3(h, w, c, value(anchor.h + h as i64, anchor.w + w as i64, c));
            }
        }
    }
    (0..frames)
        .map(|f| {
            let d = offset(f);
            if d == 0.0 {
                base.clone()
            } else {
                base.map(|v| v + d)
            }
        })
        .collect()
}

/// Dispatching wrapper so the pipeline can hold one source object.
pub enum Source {
    Gradient { canvas: Extent, channels: usize },
    Texture { tex: TextureSource, channels: usize },
    Sampler(Box<SamplerSource>),
}

impl Source {
    pub fn name(&self) -> &'static str {
        match self {
            Source::Gradient { .. } => "gradient",
            Source::Texture { .. } => "texture",
            Source::Sampler(_) => "sampler",
        }
    }

    pub fn block_frames(
        &self,
        t: usize,
        anchor: GridCoord,
        tile: Extent,
        frames: usize,
    ) -> Result<Vec<Tensor<f32>>, CliError> {
        match self {
            Source::Gradient { canvas, channels } => {
                let g = GradientSource::new(*canvas);
                Ok(fill_frames(
                    tile,
                    *channels,
                    anchor,
                    frames,
                    |h, w, c| g.value(h, w, c),
                    |_| 0.0,
                ))
            }
            Source::Texture { tex, channels } => Ok(fill_frames(
                tile,
                *channels,
                anchor,
                frames,
                |h, w, c| tex.value(h, w, c),
                |f| tex.frame_offset(f, frames),
            )),
            Source::Sampler(s) => s.block_frames(t, anchor, tile, frames),
        }
    }
}

/// Outcome of preparing the sampler: where the weights came from, plus the
/// training curve when training happened here.
pub struct SamplerArtifacts {
    pub trained_here: bool,
    pub loss_curve: Vec<(usize, f32)>,
    pub net: VectorFieldNet<f32>,
}

/// Toy flow-matching tile generator: per window, integrate the learned
/// velocity field from seeded noise down to a latent tile whose tokens sit
/// at the window's global coordinates.
pub struct SamplerSource {
    net: VectorFieldNet<f32>,
    channels: usize,
    euler_steps: usize,
    seed: u64,
}

impl SamplerSource {
    pub fn new(net: VectorFieldNet<f32>, channels: usize, euler_steps: usize, seed: u64) -> Self {
        Self {
            net,
            channels,
            euler_steps,
            seed,
        }
    }

    fn block_frames(
        &self,
        t: usize,
        anchor: GridCoord,
        tile: Extent,
        frames: usize,
    ) -> Result<Vec<Tensor<f32>>, CliError> {
        let grid = TokenGrid::new(tile.h, tile.w);
        let coords = grid.global_coords(t as i64, anchor);
        let cond = Condition::new(vec![1.0f32, 0.0]).map_err(CliError::from)?;
        let stream = DeterministicRng::new(self.seed).fork(t as u64);
        let mut out = Vec::with_capacity(frames);
        for f in 0..frames {
            let mut rng = stream.fork(f as u64);
            let noise = Tensor::from_vec(
                &[grid.len(), self.channels],
                (0..grid.len() * self.channels).map(|_| rng.normal()).collect(),
            )
            .expect("shape matches data");
            let latent = sample(&self.net, &noise, &cond, self.euler_steps, &coords)?;
            // latents live in [-1, 1]; pixels in [0, 1]
            let mut frame = Tensor::zeros(&[tile.h, tile.w, self.channels]);
            for (i, &v) in latent.data().iter().enumerate() {
                frame.data_mut()[i] = ((v + 1.0) * 0.5).clamp(0.0, 1.0);
            }
            out.push(frame);
        }
        Ok(out)
    }
}

/// Builds the sampler network: load a checkpoint when configured, train a
/// fresh toy otherwise (on texture tiles drawn across the base canvas).
pub fn prepare_sampler(config: &PipelineConfig) -> Result<SamplerArtifacts, CliError> {
    let channels = config.io.channels;
    let net_config = NetConfig {
        latent_channels: channels,
        model_dim: config.rope.head_dim(),
        ff_dim: 2 * config.rope.head_dim(),
        cond_dim: 2,
        rope: config.rope,
    };

    if let Some(path) = &config.sampler.checkpoint {
        let arrays = panoscan_core::io::read_tensor_file::<f32, _>(path)?;
        let net = VectorFieldNet::from_named_arrays(net_config, &arrays)?;
        return Ok(SamplerArtifacts {
            trained_here: false,
            loss_curve: Vec::new(),
            net,
        });
    }

    let tile = config.tile_base;
    let tokens = tile.h * tile.w;
    let tex = TextureSource::new(config.io.seed, channels);
    let canvas = config.canvas_base;
    let reach_h = (canvas.h.saturating_sub(tile.h)).max(1);
    let reach_w = (canvas.w.saturating_sub(tile.w)).max(1);

    let mut net = VectorFieldNet::init(net_config, config.io.seed)?;
    let train = TrainConfig {
        learning_rate: config.sampler.learning_rate,
        batch_size: config.sampler.batch_size,
        iterations: config.sampler.train_iters,
        seed: config.io.seed,
    };
    let grid = TokenGrid::new(tile.h, tile.w);
    let coords = grid.global_coords(1, GridCoord::ORIGIN);
    let cond = Condition::new(vec![1.0f32, 0.0])?;
    let curve = train_loop(&mut net, &coords, &train, |_, rng| {
        (0..train.batch_size)
            .map(|_| {
                let anchor = GridCoord::new(
                    rng.index(reach_h) as i64,
                    rng.index(reach_w) as i64,
                );
                let mut z0 = Tensor::zeros(&[tokens, channels]);
                for h in 0..tile.h {
                    for w in 0..tile.w {
                        for c in 0..channels {
                            let v = tex.value(anchor.h + h as i64, anchor.w + w as i64, c);
                            z0.set2(h * tile.w + w, c, 2.0 * v - 1.0);
                        }
                    }
                }
                let z1 = Tensor::from_vec(
                    &[tokens, channels],
                    (0..tokens * channels).map(|_| rng.normal()).collect(),
                )
                .expect("shape matches data");
                let tau = rng.uniform(0.0f32, 1.0);
                (
                    FlowSample::new(z0, z1, tau).expect("valid sample"),
                    cond.clone(),
                )
            })
            .collect()
    })?;

    Ok(SamplerArtifacts {
        trained_here: true,
        loss_curve: curve,
        net,
    })
}
