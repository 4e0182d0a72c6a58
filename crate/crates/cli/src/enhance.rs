//! The tile-enhancer seam: where a latent super-resolution stage would
//! plug in, the pipeline accepts any per-tile transform with a declared
//! scale. Built in: identity and a deterministic bilinear upscaler.

use panoscan_core::geom::Extent;
use panoscan_core::tensor::Tensor;

use crate::config::{EnhancerSpec, Ratio};
use crate::CliError;

/// Per-tile enhancement with a fixed spatial scale factor.
pub trait TileEnhancer {
    /// Output dims = input dims x `scale()`.
    fn scale(&self) -> Ratio;

    fn enhance(&self, tile: &Tensor<f32>) -> Result<Tensor<f32>, CliError>;

    fn name(&self) -> &'static str;
}

pub struct IdentityEnhancer;

impl TileEnhancer for IdentityEnhancer {
    fn scale(&self) -> Ratio {
        Ratio::ONE
    }

    fn enhance(&self, tile: &Tensor<f32>) -> Result<Tensor<f32>, CliError> {
        Ok(tile.clone())
    }

    fn name(&self) -> &'static str {
        "identity"
    }
}

/// Endpoint-aligned bilinear resampling: output sample `j` reads source
/// position `j·(n_in-1)/(n_out-1)`, so constants stay constant and linear
/// ramps stay linear at any scale.
pub struct BilinearUpscaler {
    ratio: Ratio,
}

impl BilinearUpscaler {
    pub fn new(ratio: Ratio) -> Self {
        Self { ratio }
    }
}

impl TileEnhancer for BilinearUpscaler {
    fn scale(&self) -> Ratio {
        self.ratio
    }

    fn enhance(&self, tile: &Tensor<f32>) -> Result<Tensor<f32>, CliError> {
        let (h, w, c) = (tile.shape()[0], tile.shape()[1], tile.shape()[2]);
        let oh = self.ratio.scale_len(h, "tile height")?;
        let ow = self.ratio.scale_len(w, "tile width")?;
        Ok(bilinear_resize(tile, Extent::new(oh, ow), c))
    }

    fn name(&self) -> &'static str {
        "upscale"
    }
}

pub fn build_enhancer(spec: EnhancerSpec) -> Box<dyn TileEnhancer> {
    match spec {
        EnhancerSpec::Identity => Box::new(IdentityEnhancer),
        EnhancerSpec::Upscale(ratio) => Box::new(BilinearUpscaler::new(ratio)),
    }
}

fn bilinear_resize(tile: &Tensor<f32>, out: Extent, channels: usize) -> Tensor<f32> {
    let (h, w) = (tile.shape()[0], tile.shape()[1]);
    let mut result = Tensor::zeros(&[out.h, out.w, channels]);
    let src_pos = |j: usize, n_out: usize, n_in: usize| -> (usize, usize, f32) {
        if n_out <= 1 || n_in <= 1 {
            return (0, 0, 0.0);
        }
        let pos = j as f64 * (n_in - 1) as f64 / (n_out - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(n_in - 1);
        (lo, hi, (pos - lo as f64) as f32)
    };
    for i in 0..out.h {
        let (h0, h1, fh) = src_pos(i, out.h, h);
        for j in 0..out.w {
            let (w0, w1, fw) = src_pos(j, out.w, w);
            for ch in 0..channels {
                let top = tile.at3(h0, w0, ch) * (1.0 - fw) + tile.at3(h0, w1, ch) * fw;
                let bottom = tile.at3(h1, w0, ch) * (1.0 - fw) + tile.at3(h1, w1, ch) * fw;
                result.set3(i, j, ch, top * (1.0 - fh) + bottom * fh);
            }
        }
    }
    result
}
