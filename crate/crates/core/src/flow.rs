//! Conditional flow-matching training and sampling for a small
//! vector-field network built around the scanning attention layer.
//!
//! The regression target is the straight-path velocity `z1 - z0` along the
//! linear interpolation `z_tau = (1-tau)·z0 + tau·z1`, with `z0` data and
//! `z1` noise. Sampling integrates the learned field from `tau = 1` down
//! to `tau = 0` with explicit Euler steps.
//!
//! The network is deliberately tiny: a token embedding, one rotary
//! attention layer with a residual connection, and a two-layer tanh
//! feed-forward head, small enough that every parameter gradient can be
//! checked against central finite differences. Backpropagation is written
//! out by hand; there is no autodiff.

use thiserror::Error;

use crate::rng::DeterministicRng;
use crate::rope::{
    apply_rotation_inverse, rotary_phase, scanpe_attention_traced, AttentionTrace, GlobalCoord,
    RopeError, RopeParams, RotaryPhase,
};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("z0 shape {z0:?} does not match z1 shape {z1:?}")]
    EndpointShapes { z0: Vec<usize>, z1: Vec<usize> },
    #[error("tau {0} outside [0, 1]")]
    TauOutOfRange(f64),
    #[error("{what} must be finite")]
    NonFinite { what: &'static str },
    #[error("batch is empty")]
    EmptyBatch,
    #[error("{what}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        what: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("loss is not finite")]
    NonFiniteLoss,
    #[error("training diverged at iteration {iteration}: loss is not finite")]
    Diverged { iteration: usize },
    #[error("sampling diverged at step {step}")]
    SampleDiverged { step: usize },
    #[error("sampler needs at least one step")]
    ZeroSampleSteps,
    #[error("invalid network config: {0}")]
    BadNetConfig(String),
    #[error("checkpoint: {0}")]
    BadCheckpoint(String),
    #[error(transparent)]
    Rope(#[from] RopeError),
}

/// One training pair: a data latent, a noise latent of the same shape,
/// and the interpolation time.
#[derive(Clone, Debug)]
pub struct FlowSample<T> {
    z0: Tensor<T>,
    z1: Tensor<T>,
    tau: T,
}

impl<T: Scalar> FlowSample<T> {
    pub fn new(z0: Tensor<T>, z1: Tensor<T>, tau: T) -> Result<Self, FlowError> {
        if z0.shape() != z1.shape() {
            return Err(FlowError::EndpointShapes {
                z0: z0.shape().to_vec(),
                z1: z1.shape().to_vec(),
            });
        }
        if !(tau >= T::zero() && tau <= T::one()) {
            return Err(FlowError::TauOutOfRange(tau.to_f64().unwrap_or(f64::NAN)));
        }
        Ok(Self { z0, z1, tau })
    }

    pub fn z0(&self) -> &Tensor<T> {
        &self.z0
    }

    pub fn z1(&self) -> &Tensor<T> {
        &self.z1
    }

    pub fn tau(&self) -> T {
        self.tau
    }

    /// Regression target `z1 - z0`.
    pub fn velocity_target(&self) -> Tensor<T> {
        let data = self
            .z1
            .data()
            .iter()
            .zip(self.z0.data())
            .map(|(&a, &b)| a - b)
            .collect();
        Tensor::from_vec(self.z0.shape(), data).unwrap()
    }
}

/// Linear interpolation `(1-tau)·z0 + tau·z1`, elementwise.
pub fn interpolate<T: Scalar>(sample: &FlowSample<T>) -> Tensor<T> {
    let tau = sample.tau;
    let one_minus = T::one() - tau;
    let data = sample
        .z0
        .data()
        .iter()
        .zip(sample.z1.data())
        .map(|(&a, &b)| one_minus * a + tau * b)
        .collect();
    Tensor::from_vec(sample.z0.shape(), data).unwrap()
}

/// Conditioning vector standing in for a prompt embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct Condition<T> {
    embedding: Vec<T>,
}

impl<T: Scalar> Condition<T> {
    pub fn new(embedding: Vec<T>) -> Result<Self, FlowError> {
        if embedding.iter().any(|x| !x.is_finite()) {
            return Err(FlowError::NonFinite {
                what: "condition embedding",
            });
        }
        Ok(Self { embedding })
    }

    pub fn dim(&self) -> usize {
        self.embedding.len()
    }

    pub fn values(&self) -> &[T] {
        &self.embedding
    }
}

/// Anything that evaluates a velocity field; implemented by the network
/// and by test oracles.
pub trait VelocityField<T: Scalar> {
    fn velocity(
        &self,
        z: &Tensor<T>,
        tau: T,
        cond: &Condition<T>,
        coords: &[GlobalCoord],
    ) -> Result<Tensor<T>, FlowError>;
}

/// Network dimensions. `rope.head_dim` must equal `model_dim`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NetConfig {
    pub latent_channels: usize,
    pub model_dim: usize,
    pub ff_dim: usize,
    pub cond_dim: usize,
    pub rope: RopeParams,
}

impl NetConfig {
    pub fn validate(&self) -> Result<(), FlowError> {
        if self.latent_channels == 0 || self.model_dim == 0 || self.ff_dim == 0 {
            return Err(FlowError::BadNetConfig(
                "dimensions must be positive".into(),
            ));
        }
        if self.cond_dim == 0 {
            return Err(FlowError::BadNetConfig("cond_dim must be positive".into()));
        }
        if self.rope.head_dim() != self.model_dim {
            return Err(FlowError::BadNetConfig(format!(
                "rope head_dim {} != model_dim {}",
                self.rope.head_dim(),
                self.model_dim
            )));
        }
        Ok(())
    }
}

pub const PARAM_NAMES: [&str; 11] = [
    "embed.weight",
    "embed.bias",
    "time.weight",
    "cond.weight",
    "attn.q_weight",
    "attn.k_weight",
    "attn.v_weight",
    "ff.w1",
    "ff.b1",
    "ff.w2",
    "ff.b2",
];

/// The named parameter tensors; also the shape of a gradient set.
#[derive(Clone, Debug, PartialEq)]
struct ParamSet<T> {
    embed_w: Tensor<T>, // (d, c)
    embed_b: Tensor<T>, // (d,)
    time_w: Tensor<T>,  // (d,)
    cond_w: Tensor<T>,  // (d, cond)
    attn_q: Tensor<T>,  // (d, d)
    attn_k: Tensor<T>,  // (d, d)
    attn_v: Tensor<T>,  // (d, d)
    ff_w1: Tensor<T>,   // (ff, d)
    ff_b1: Tensor<T>,   // (ff,)
    ff_w2: Tensor<T>,   // (c, ff)
    ff_b2: Tensor<T>,   // (c,)
}

impl<T: Scalar> ParamSet<T> {
    fn zeros(cfg: &NetConfig) -> Self {
        let (c, d, ff, cd) = (cfg.latent_channels, cfg.model_dim, cfg.ff_dim, cfg.cond_dim);
        Self {
            embed_w: Tensor::zeros(&[d, c]),
            embed_b: Tensor::zeros(&[d]),
            time_w: Tensor::zeros(&[d]),
            cond_w: Tensor::zeros(&[d, cd]),
            attn_q: Tensor::zeros(&[d, d]),
            attn_k: Tensor::zeros(&[d, d]),
            attn_v: Tensor::zeros(&[d, d]),
            ff_w1: Tensor::zeros(&[ff, d]),
            ff_b1: Tensor::zeros(&[ff]),
            ff_w2: Tensor::zeros(&[c, ff]),
            ff_b2: Tensor::zeros(&[c]),
        }
    }

    fn get(&self, name: &str) -> Option<&Tensor<T>> {
        match name {
            "embed.weight" => Some(&self.embed_w),
            "embed.bias" => Some(&self.embed_b),
            "time.weight" => Some(&self.time_w),
            "cond.weight" => Some(&self.cond_w),
            "attn.q_weight" => Some(&self.attn_q),
            "attn.k_weight" => Some(&self.attn_k),
            "attn.v_weight" => Some(&self.attn_v),
            "ff.w1" => Some(&self.ff_w1),
            "ff.b1" => Some(&self.ff_b1),
            "ff.w2" => Some(&self.ff_w2),
            "ff.b2" => Some(&self.ff_b2),
            _ => None,
        }
    }

    fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        match name {
            "embed.weight" => Some(&mut self.embed_w),
            "embed.bias" => Some(&mut self.embed_b),
            "time.weight" => Some(&mut self.time_w),
            "cond.weight" => Some(&mut self.cond_w),
            "attn.q_weight" => Some(&mut self.attn_q),
            "attn.k_weight" => Some(&mut self.attn_k),
            "attn.v_weight" => Some(&mut self.attn_v),
            "ff.w1" => Some(&mut self.ff_w1),
            "ff.b1" => Some(&mut self.ff_b1),
            "ff.w2" => Some(&mut self.ff_w2),
            "ff.b2" => Some(&mut self.ff_b2),
            _ => None,
        }
    }
}

/// Gradients of every parameter, in parameter order.
pub struct Gradients<T> {
    set: ParamSet<T>,
}

impl<T: Scalar> Gradients<T> {
    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.set.get(name)
    }
}

/// Minimal trajectory-aware vector-field network.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorFieldNet<T> {
    cfg: NetConfig,
    params: ParamSet<T>,
}

impl<T: Scalar> VectorFieldNet<T> {
    /// Seeded uniform init: weights in `±1/sqrt(fan_in)`, biases and the
    /// time vector start at zero.
    pub fn init(cfg: NetConfig, seed: u64) -> Result<Self, FlowError> {
        cfg.validate()?;
        let mut params = ParamSet::zeros(&cfg);
        let mut rng = DeterministicRng::new(seed);
        for name in PARAM_NAMES {
            let tensor = params.get_mut(name).unwrap();
            if tensor.rank() != 2 {
                continue; // biases and the time vector stay zero
            }
            let fan_in = tensor.shape()[1];
            let bound = T::one() / T::from(fan_in).unwrap().sqrt();
            for v in tensor.data_mut() {
                *v = rng.uniform(-bound, bound);
            }
        }
        Ok(Self { cfg, params })
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    pub fn param_names(&self) -> &'static [&'static str] {
        &PARAM_NAMES
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.params.get_mut(name)
    }

    pub fn param_count(&self) -> usize {
        PARAM_NAMES
            .iter()
            .map(|n| self.params.get(n).unwrap().len())
            .sum()
    }

    /// Named parameter arrays in declaration order, for checkpointing.
    pub fn named_arrays(&self) -> Vec<(String, Tensor<T>)> {
        PARAM_NAMES
            .iter()
            .map(|&n| (n.to_string(), self.params.get(n).unwrap().clone()))
            .collect()
    }

    /// Rebuilds a network from checkpoint arrays, validating names and
    /// shapes against the config.
    pub fn from_named_arrays(
        cfg: NetConfig,
        arrays: &[(String, Tensor<T>)],
    ) -> Result<Self, FlowError> {
        cfg.validate()?;
        let mut net = Self {
            cfg,
            params: ParamSet::zeros(&cfg),
        };
        let mut seen = 0usize;
        for (name, tensor) in arrays {
            let slot = net
                .params
                .get_mut(name)
                .ok_or_else(|| FlowError::BadCheckpoint(format!("unknown parameter {name}")))?;
            if slot.shape() != tensor.shape() {
                return Err(FlowError::BadCheckpoint(format!(
                    "parameter {name}: expected shape {:?}, got {:?}",
                    slot.shape(),
                    tensor.shape()
                )));
            }
            *slot = tensor.clone();
            seen += 1;
        }
        if seen != PARAM_NAMES.len() {
            return Err(FlowError::BadCheckpoint(format!(
                "expected {} parameters, got {seen}",
                PARAM_NAMES.len()
            )));
        }
        Ok(net)
    }

    fn check_latent(&self, z: &Tensor<T>, coords: &[GlobalCoord]) -> Result<(), FlowError> {
        let expected = vec![coords.len(), self.cfg.latent_channels];
        if z.rank() != 2 || z.shape() != expected.as_slice() {
            return Err(FlowError::ShapeMismatch {
                what: "latent",
                expected,
                got: z.shape().to_vec(),
            });
        }
        Ok(())
    }

    fn forward_traced(
        &self,
        z: &Tensor<T>,
        tau: T,
        cond: &Condition<T>,
        coords: &[GlobalCoord],
    ) -> Result<ForwardTrace<T>, FlowError> {
        self.check_latent(z, coords)?;
        if cond.dim() != self.cfg.cond_dim {
            return Err(FlowError::ShapeMismatch {
                what: "condition",
                expected: vec![self.cfg.cond_dim],
                got: vec![cond.dim()],
            });
        }
        let n = coords.len();
        let d = self.cfg.model_dim;
        let p = &self.params;

        // embedding plus additive time / condition injection
        let mut inject = matvec(&p.cond_w, cond.values());
        for (i, v) in inject.iter_mut().enumerate() {
            *v += p.embed_b.data()[i] + tau * p.time_w.data()[i];
        }
        let mut x = Tensor::zeros(&[n, d]);
        for i in 0..n {
            let xi = matvec(&p.embed_w, z.row(i));
            for j in 0..d {
                x.set2(i, j, xi[j] + inject[j]);
            }
        }

        let mut q_proj = Tensor::zeros(&[n, d]);
        let mut k_proj = Tensor::zeros(&[n, d]);
        let mut v_proj = Tensor::zeros(&[n, d]);
        for i in 0..n {
            q_proj.data_mut()[i * d..(i + 1) * d].copy_from_slice(&matvec(&p.attn_q, x.row(i)));
            k_proj.data_mut()[i * d..(i + 1) * d].copy_from_slice(&matvec(&p.attn_k, x.row(i)));
            v_proj.data_mut()[i * d..(i + 1) * d].copy_from_slice(&matvec(&p.attn_v, x.row(i)));
        }
        let att = scanpe_attention_traced(&q_proj, &k_proj, &v_proj, coords, &self.cfg.rope)?;

        let mut h = Tensor::zeros(&[n, d]);
        for i in 0..n * d {
            h.data_mut()[i] = x.data()[i] + att.output.data()[i];
        }

        let ff = self.cfg.ff_dim;
        let c = self.cfg.latent_channels;
        let mut act = Tensor::zeros(&[n, ff]);
        let mut y = Tensor::zeros(&[n, c]);
        for i in 0..n {
            let mut g = matvec(&p.ff_w1, h.row(i));
            for (j, v) in g.iter_mut().enumerate() {
                *v = (*v + p.ff_b1.data()[j]).tanh();
            }
            act.data_mut()[i * ff..(i + 1) * ff].copy_from_slice(&g);
            let mut out = matvec(&p.ff_w2, &g);
            for (j, v) in out.iter_mut().enumerate() {
                *v += p.ff_b2.data()[j];
            }
            y.data_mut()[i * c..(i + 1) * c].copy_from_slice(&out);
        }

        Ok(ForwardTrace {
            x,
            v_proj,
            att,
            h,
            act,
            y,
        })
    }

    pub fn forward(
        &self,
        z: &Tensor<T>,
        tau: T,
        cond: &Condition<T>,
        coords: &[GlobalCoord],
    ) -> Result<Tensor<T>, FlowError> {
        Ok(self.forward_traced(z, tau, cond, coords)?.y)
    }

    /// Loss plus analytic gradients over a batch; the backward pass
    /// mirrors the hand-written forward exactly.
    pub fn loss_and_grad(
        &self,
        batch: &[(FlowSample<T>, Condition<T>)],
        coords: &[GlobalCoord],
    ) -> Result<(T, Gradients<T>), FlowError> {
        if batch.is_empty() {
            return Err(FlowError::EmptyBatch);
        }
        let n = coords.len();
        let d = self.cfg.model_dim;
        let c = self.cfg.latent_channels;
        let ff = self.cfg.ff_dim;
        let p = &self.params;
        let phases: Vec<RotaryPhase<T>> = coords
            .iter()
            .map(|&cd| rotary_phase(cd, &self.cfg.rope))
            .collect();
        let norm = T::one() / T::from(batch.len() * n * c).unwrap();
        let scale = T::one() / T::from(d).unwrap().sqrt();

        let mut grads = ParamSet::zeros(&self.cfg);
        let mut loss = T::zero();

        for (sample, cond) in batch {
            let z_tau = interpolate(sample);
            let trace = self.forward_traced(&z_tau, sample.tau(), cond, coords)?;
            let target = sample.velocity_target();

            // dL/dy, including the mean normalization
            let mut dy = Tensor::zeros(&[n, c]);
            for i in 0..n * c {
                let r = trace.y.data()[i] - target.data()[i];
                loss += r * r;
                dy.data_mut()[i] = (r + r) * norm;
            }

            // feed-forward head
            let mut dh = Tensor::zeros(&[n, d]);
            for i in 0..n {
                let dyi = dy.row(i);
                let acti = trace.act.row(i);
                outer_acc(&mut grads.ff_w2, dyi, acti);
                axpy_slice(grads.ff_b2.data_mut(), dyi);
                let dact = matvec_t(&p.ff_w2, dyi);
                let mut dg = vec![T::zero(); ff];
                for j in 0..ff {
                    dg[j] = dact[j] * (T::one() - acti[j] * acti[j]);
                }
                outer_acc(&mut grads.ff_w1, &dg, trace.h.row(i));
                axpy_slice(grads.ff_b1.data_mut(), &dg);
                let dhi = matvec_t(&p.ff_w1, &dg);
                dh.data_mut()[i * d..(i + 1) * d].copy_from_slice(&dhi);
            }

            // residual: h = x + attention output
            let mut dx = dh.clone();
            let d_out = dh; // gradient flowing into the attention output

            // attention backward
            let att = &trace.att;
            let mut dv_proj = Tensor::zeros(&[n, d]);
            for j in 0..n {
                for i in 0..n {
                    let a = att.weights.at2(i, j);
                    for cdim in 0..d {
                        let cur = dv_proj.at2(j, cdim);
                        dv_proj.set2(j, cdim, cur + a * d_out.at2(i, cdim));
                    }
                }
            }
            let mut d_scores = Tensor::zeros(&[n, n]);
            for i in 0..n {
                let mut row_dot = T::zero();
                let mut datt = vec![T::zero(); n];
                for j in 0..n {
                    let mut dot = T::zero();
                    for cdim in 0..d {
                        dot += d_out.at2(i, cdim) * trace.v_proj.at2(j, cdim);
                    }
                    datt[j] = dot;
                    row_dot += att.weights.at2(i, j) * dot;
                }
                for j in 0..n {
                    d_scores.set2(i, j, att.weights.at2(i, j) * (datt[j] - row_dot));
                }
            }
            let mut d_rq = Tensor::zeros(&[n, d]);
            let mut d_rk = Tensor::zeros(&[n, d]);
            for i in 0..n {
                for j in 0..n {
                    let ds = d_scores.at2(i, j) * scale;
                    for cdim in 0..d {
                        let cur_q = d_rq.at2(i, cdim);
                        d_rq.set2(i, cdim, cur_q + ds * att.rotated_k.at2(j, cdim));
                        let cur_k = d_rk.at2(j, cdim);
                        d_rk.set2(j, cdim, cur_k + ds * att.rotated_q.at2(i, cdim));
                    }
                }
            }
            for i in 0..n {
                let dq = apply_rotation_inverse(d_rq.row(i), &phases[i])?;
                let dk = apply_rotation_inverse(d_rk.row(i), &phases[i])?;
                let dv = dv_proj.row(i);
                outer_acc(&mut grads.attn_q, &dq, trace.x.row(i));
                outer_acc(&mut grads.attn_k, &dk, trace.x.row(i));
                outer_acc(&mut grads.attn_v, dv, trace.x.row(i));
                let back_q = matvec_t(&p.attn_q, &dq);
                let back_k = matvec_t(&p.attn_k, &dk);
                let back_v = matvec_t(&p.attn_v, dv);
                for cdim in 0..d {
                    let cur = dx.at2(i, cdim);
                    dx.set2(i, cdim, cur + back_q[cdim] + back_k[cdim] + back_v[cdim]);
                }
            }

            // embedding and injections
            let mut dx_sum = vec![T::zero(); d];
            for i in 0..n {
                outer_acc(&mut grads.embed_w, dx.row(i), z_tau.row(i));
                axpy_slice(&mut dx_sum, dx.row(i));
            }
            axpy_slice(grads.embed_b.data_mut(), &dx_sum);
            for (g, &s) in grads.time_w.data_mut().iter_mut().zip(&dx_sum) {
                *g += sample.tau() * s;
            }
            outer_acc(&mut grads.cond_w, &dx_sum, cond.values());
        }

        loss *= norm;
        if !loss.is_finite() {
            return Err(FlowError::NonFiniteLoss);
        }
        Ok((loss, Gradients { set: grads }))
    }
}

impl<T: Scalar> VelocityField<T> for VectorFieldNet<T> {
    fn velocity(
        &self,
        z: &Tensor<T>,
        tau: T,
        cond: &Condition<T>,
        coords: &[GlobalCoord],
    ) -> Result<Tensor<T>, FlowError> {
        self.forward(z, tau, cond, coords)
    }
}

struct ForwardTrace<T> {
    x: Tensor<T>,
    v_proj: Tensor<T>,
    att: AttentionTrace<T>,
    h: Tensor<T>,
    act: Tensor<T>,
    y: Tensor<T>,
}

/// `w · x` for a row-major `(out, in)` matrix.
fn matvec<T: Scalar>(w: &Tensor<T>, x: &[T]) -> Vec<T> {
    let (rows, cols) = (w.shape()[0], w.shape()[1]);
    debug_assert_eq!(cols, x.len());
    let mut out = vec![T::zero(); rows];
    for r in 0..rows {
        let row = &w.data()[r * cols..(r + 1) * cols];
        let mut acc = T::zero();
        for (a, b) in row.iter().zip(x) {
            acc += *a * *b;
        }
        out[r] = acc;
    }
    out
}

/// `wᵀ · y` for a row-major `(out, in)` matrix.
fn matvec_t<T: Scalar>(w: &Tensor<T>, y: &[T]) -> Vec<T> {
    let (rows, cols) = (w.shape()[0], w.shape()[1]);
    debug_assert_eq!(rows, y.len());
    let mut out = vec![T::zero(); cols];
    for r in 0..rows {
        let row = &w.data()[r * cols..(r + 1) * cols];
        for c in 0..cols {
            out[c] += row[c] * y[r];
        }
    }
    out
}

/// `acc += y ⊗ x` into a row-major `(|y|, |x|)` matrix.
fn outer_acc<T: Scalar>(acc: &mut Tensor<T>, y: &[T], x: &[T]) {
    let cols = x.len();
    debug_assert_eq!(acc.shape(), &[y.len(), cols]);
    for (r, &yr) in y.iter().enumerate() {
        let row = &mut acc.data_mut()[r * cols..(r + 1) * cols];
        for (slot, &xc) in row.iter_mut().zip(x) {
            *slot += yr * xc;
        }
    }
}

fn axpy_slice<T: Scalar>(acc: &mut [T], add: &[T]) {
    for (a, b) in acc.iter_mut().zip(add) {
        *a += *b;
    }
}

/// Mean over the batch and over every element of the squared residual
/// `‖v(z_tau, tau, c) - (z1 - z0)‖²`.
pub fn fm_loss<T: Scalar, F: VelocityField<T>>(
    field: &F,
    batch: &[(FlowSample<T>, Condition<T>)],
    coords: &[GlobalCoord],
) -> Result<T, FlowError> {
    if batch.is_empty() {
        return Err(FlowError::EmptyBatch);
    }
    let mut total = T::zero();
    let mut elems = 0usize;
    for (sample, cond) in batch {
        let z_tau = interpolate(sample);
        let pred = field.velocity(&z_tau, sample.tau(), cond, coords)?;
        let target = sample.velocity_target();
        if pred.shape() != target.shape() {
            return Err(FlowError::ShapeMismatch {
                what: "velocity prediction",
                expected: target.shape().to_vec(),
                got: pred.shape().to_vec(),
            });
        }
        for (p, t) in pred.data().iter().zip(target.data()) {
            let r = *p - *t;
            total += r * r;
        }
        elems += target.len();
    }
    Ok(total / T::from(elems).unwrap())
}

/// Training hyperparameters. The defaults here are desk-scale toys, far
/// smaller than any production run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), FlowError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(FlowError::BadNetConfig(
                "learning_rate must be positive".into(),
            ));
        }
        if self.batch_size == 0 || self.iterations == 0 {
            return Err(FlowError::BadNetConfig(
                "batch_size and iterations must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// One plain gradient-descent update. Returns the pre-update loss.
pub fn train_step<T: Scalar>(
    net: &mut VectorFieldNet<T>,
    batch: &[(FlowSample<T>, Condition<T>)],
    coords: &[GlobalCoord],
    config: &TrainConfig,
) -> Result<T, FlowError> {
    let (loss, grads) = net.loss_and_grad(batch, coords)?;
    let lr = T::from(config.learning_rate).unwrap();
    for name in PARAM_NAMES {
        let g = grads.set.get(name).unwrap();
        let p = net.params.get_mut(name).unwrap();
        for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
            *pv -= lr * *gv;
        }
    }
    Ok(loss)
}

/// Gradient-descent driver: `iterations` steps over batches produced by
/// `make_batch`, returning the `(iteration, loss)` curve. A non-finite
/// loss aborts with the iteration index.
pub fn train_loop<T: Scalar, F>(
    net: &mut VectorFieldNet<T>,
    coords: &[GlobalCoord],
    config: &TrainConfig,
    mut make_batch: F,
) -> Result<Vec<(usize, T)>, FlowError>
where
    F: FnMut(usize, &mut DeterministicRng) -> Vec<(FlowSample<T>, Condition<T>)>,
{
    config.validate()?;
    let mut rng = DeterministicRng::new(config.seed);
    let mut curve = Vec::with_capacity(config.iterations);
    for iter in 0..config.iterations {
        let batch = make_batch(iter, &mut rng);
        let loss = match train_step(net, &batch, coords, config) {
            Ok(loss) => loss,
            Err(FlowError::NonFiniteLoss) => return Err(FlowError::Diverged { iteration: iter }),
            Err(e) => return Err(e),
        };
        curve.push((iter, loss));
    }
    Ok(curve)
}

/// Integrates `dz/dtau = v(z, tau)` from `tau = 1` down to `tau = 0` with
/// uniform explicit Euler steps, starting from the noise latent `z1`.
pub fn sample<T: Scalar, F: VelocityField<T>>(
    field: &F,
    z1: &Tensor<T>,
    cond: &Condition<T>,
    steps: usize,
    coords: &[GlobalCoord],
) -> Result<Tensor<T>, FlowError> {
    if steps == 0 {
        return Err(FlowError::ZeroSampleSteps);
    }
    let mut z = z1.clone();
    for k in 0..steps {
        let tau_hi = T::from(steps - k).unwrap() / T::from(steps).unwrap();
        let tau_lo = T::from(steps - k - 1).unwrap() / T::from(steps).unwrap();
        let dt = tau_hi - tau_lo;
        let v = field.velocity(&z, tau_hi, cond, coords)?;
        if v.shape() != z.shape() {
            return Err(FlowError::ShapeMismatch {
                what: "velocity",
                expected: z.shape().to_vec(),
                got: v.shape().to_vec(),
            });
        }
        for (zv, vv) in z.data_mut().iter_mut().zip(v.data()) {
            *zv -= dt * *vv;
        }
        if !z.all_finite() {
            return Err(FlowError::SampleDiverged { step: k });
        }
    }
    Ok(z)
}

pub mod toy {
    //! Synthetic datasets for exercising the trainer at desk scale.

    use super::*;

    /// Two-component mixture: each sample picks a component, fills `z0`
    /// with `±center` plus jitter, and carries the component as a one-hot
    /// condition.
    #[derive(Clone, Copy, Debug)]
    pub struct MixtureSpec {
        pub center: f64,
        pub jitter: f64,
        pub tokens: usize,
        pub channels: usize,
    }

    impl Default for MixtureSpec {
        fn default() -> Self {
            Self {
                center: 1.0,
                jitter: 0.1,
                tokens: 8,
                channels: 2,
            }
        }
    }

    pub fn mixture_batch<T: Scalar>(
        rng: &mut DeterministicRng,
        spec: &MixtureSpec,
        batch_size: usize,
    ) -> Vec<(FlowSample<T>, Condition<T>)> {
        let elems = spec.tokens * spec.channels;
        (0..batch_size)
            .map(|_| {
                let positive = rng.next_u64() & 1 == 1;
                let center = T::from(if positive { spec.center } else { -spec.center }).unwrap();
                let jitter = T::from(spec.jitter).unwrap();
                let z0 = Tensor::from_vec(
                    &[spec.tokens, spec.channels],
                    (0..elems)
                        .map(|_| center + jitter * rng.normal::<T>())
                        .collect(),
                )
                .unwrap();
                let z1 = Tensor::from_vec(
                    &[spec.tokens, spec.channels],
                    (0..elems).map(|_| rng.normal()).collect(),
                )
                .unwrap();
                let tau = rng.uniform(T::zero(), T::one());
                let one_hot = if positive {
                    vec![T::one(), T::zero()]
                } else {
                    vec![T::zero(), T::one()]
                };
                (
                    FlowSample::new(z0, z1, tau).unwrap(),
                    Condition::new(one_hot).unwrap(),
                )
            })
            .collect()
    }

    /// Every `z0` is exactly the given per-channel mean.
    pub fn point_mass_batch<T: Scalar>(
        rng: &mut DeterministicRng,
        mean: &[T],
        tokens: usize,
        batch_size: usize,
    ) -> Vec<(FlowSample<T>, Condition<T>)> {
        let channels = mean.len();
        (0..batch_size)
            .map(|_| {
                let z0 = Tensor::from_vec(
                    &[tokens, channels],
                    (0..tokens).flat_map(|_| mean.iter().copied()).collect(),
                )
                .unwrap();
                let z1 = Tensor::from_vec(
                    &[tokens, channels],
                    (0..tokens * channels).map(|_| rng.normal()).collect(),
                )
                .unwrap();
                let tau = rng.uniform(T::zero(), T::one());
                (
                    FlowSample::new(z0, z1, tau).unwrap(),
                    Condition::new(vec![T::one(), T::zero()]).unwrap(),
                )
            })
            .collect()
    }

    /// Token coordinates for a single-row grid at the origin.
    pub fn row_coords(tokens: usize) -> Vec<GlobalCoord> {
        (0..tokens)
            .map(|i| GlobalCoord::new(1, 0, i as i64))
            .collect()
    }

    /// Small net config used by the toy experiments and the gradient
    /// checks; well under 500 parameters.
    pub fn tiny_net_config(channels: usize, cond_dim: usize) -> NetConfig {
        NetConfig {
            latent_channels: channels,
            model_dim: 6,
            ff_dim: 8,
            cond_dim,
            rope: RopeParams::new(100.0, 6, [2, 2, 2]).unwrap(),
        }
    }
}
