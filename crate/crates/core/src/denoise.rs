//! Denoiser abstraction, classifier-free guidance, the sampler update and
//! toy denoisers with known receptive fields.

use crate::error::{LpError, Result};
use crate::latent::{Axis, LatentTensor};

/// Conditioning embedding. The null prompt is an all-zero vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Conditioning {
    values: Vec<f64>,
    is_null: bool,
}

impl Conditioning {
    pub fn new(values: Vec<f64>) -> Self {
        Self {
            values,
            is_null: false,
        }
    }

    pub fn null(len: usize) -> Self {
        Self {
            values: vec![0.0; len],
            is_null: true,
        }
    }

    /// Null conditioning of the same length as `self`.
    pub fn to_null(&self) -> Self {
        Self::null(self.values.len())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_null(&self) -> bool {
        self.is_null
    }

    pub fn mean(&self) -> f64 {
        if self.values.is_empty() {
            0.0
        } else {
            self.values.iter().sum::<f64>() / self.values.len() as f64
        }
    }
}

/// How far, per axis, a denoiser's output at one position can see.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReceptiveField {
    Bounded([usize; 3]),
    Unbounded,
}

/// Noise-prediction network `f(z, t, c)`.
///
/// Implementations must be deterministic and shape-preserving, and must be
/// callable concurrently from several workers.
pub trait Denoiser: Send + Sync {
    fn predict(&self, z: &LatentTensor, t: usize, cond: &Conditioning) -> Result<LatentTensor>;

    fn receptive_field(&self) -> ReceptiveField;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig {
    pub steps: usize,
    /// Euler step size.
    pub eta: f64,
    pub guidance: f64,
}

impl SamplerConfig {
    pub fn new(steps: usize, eta: f64, guidance: f64) -> Result<Self> {
        if steps == 0 {
            return Err(LpError::InvalidConfig("sampler steps must be >= 1".into()));
        }
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(LpError::InvalidConfig(format!(
                "sampler step size must be positive, got {eta}"
            )));
        }
        if !guidance.is_finite() {
            return Err(LpError::InvalidConfig(
                "guidance scale must be finite".into(),
            ));
        }
        Ok(Self {
            steps,
            eta,
            guidance,
        })
    }

    /// Diffusion timestep for 1-based step `i`: `T + 1 - i`.
    pub fn timestep(&self, step: usize) -> usize {
        self.steps + 1 - step
    }
}

/// `uncond + w * (cond - uncond)`.
pub fn cfg_combine(
    uncond: &LatentTensor,
    cond: &LatentTensor,
    guidance: f64,
) -> Result<LatentTensor> {
    uncond.zip_with(cond, |u, c| u + guidance * (c - u))
}

/// Guided prediction from one conditional and one unconditional pass.
pub fn cfg_predict(
    f: &dyn Denoiser,
    z: &LatentTensor,
    t: usize,
    cond: &Conditioning,
    guidance: f64,
) -> Result<LatentTensor> {
    if cond.is_null() {
        return Err(LpError::InvalidConfig(
            "guided prediction needs a non-null prompt embedding".into(),
        ));
    }
    let uncond = f.predict(z, t, &cond.to_null())?;
    let conditional = f.predict(z, t, cond)?;
    cfg_combine(&uncond, &conditional, guidance)
}

/// Explicit Euler update `z - eta * eps`.
pub fn sampler_step(z: &LatentTensor, eps: &LatentTensor, eta: f64) -> Result<LatentTensor> {
    let out = z.zip_with(eps, |a, e| a - eta * e)?;
    if !out.is_finite() {
        return Err(LpError::Denoiser(
            "sampler produced non-finite values".into(),
        ));
    }
    Ok(out)
}

const TIME_COEF: f64 = 1e-3;
const COND_COEF: f64 = 0.1;

/// Timestep/prompt term added by the toy denoisers so guidance has an effect.
pub fn toy_affine(t: usize, cond: &Conditioning) -> f64 {
    TIME_COEF * t as f64 + COND_COEF * cond.mean()
}

/// Per-channel mean over an axis-aligned box, clipped at the tensor edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoxDenoiser {
    radius: [usize; 3],
}

pub fn toy_denoiser_box(radius: [usize; 3]) -> BoxDenoiser {
    BoxDenoiser { radius }
}

/// Windowed sums along one axis. Every output is summed in increasing index
/// order over its own window, so two tensors that agree on a window produce
/// bitwise identical sums there.
fn window_sum(src: &[f64], dims: [usize; 3], axis: usize, radius: usize) -> Vec<f64> {
    let [nt, nh, nw] = dims;
    let strides = [nh * nw, nw, 1];
    let len = dims[axis];
    let mut out = vec![0.0; src.len()];
    for t in 0..nt {
        for h in 0..nh {
            for w in 0..nw {
                let pos = [t, h, w];
                let i = t * strides[0] + h * strides[1] + w;
                let x = pos[axis];
                let lo = x.saturating_sub(radius);
                let hi = (x + radius).min(len - 1);
                let base = i - x * strides[axis];
                let mut s = 0.0;
                for y in lo..=hi {
                    s += src[base + y * strides[axis]];
                }
                out[i] = s;
            }
        }
    }
    out
}

impl Denoiser for BoxDenoiser {
    fn predict(&self, z: &LatentTensor, t: usize, cond: &Conditioning) -> Result<LatentTensor> {
        let shape = z.shape();
        let dims = [shape.temporal, shape.height, shape.width];
        let volume = dims.iter().product::<usize>();
        let offset = toy_affine(t, cond);
        let mut out = Vec::with_capacity(z.numel());
        for c in 0..shape.channels {
            let vol = &z.data()[c * volume..(c + 1) * volume];
            let s = window_sum(vol, dims, 2, self.radius[2]);
            let s = window_sum(&s, dims, 1, self.radius[1]);
            let s = window_sum(&s, dims, 0, self.radius[0]);
            for ti in 0..dims[0] {
                for h in 0..dims[1] {
                    for w in 0..dims[2] {
                        let count = [ti, h, w]
                            .iter()
                            .zip(dims)
                            .zip(self.radius)
                            .map(|((&x, n), r)| (x + r).min(n - 1) - x.saturating_sub(r) + 1)
                            .product::<usize>();
                        let i = (ti * dims[1] + h) * dims[2] + w;
                        out.push(s[i] / count as f64 + offset);
                    }
                }
            }
        }
        LatentTensor::from_vec(shape, z.dtype(), out)
    }

    fn receptive_field(&self) -> ReceptiveField {
        ReceptiveField::Bounded(self.radius)
    }
}

/// Blends every position with its channel's global mean, so each output
/// depends on the whole input.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GlobalDenoiser;

pub fn toy_denoiser_global() -> GlobalDenoiser {
    GlobalDenoiser
}

impl Denoiser for GlobalDenoiser {
    fn predict(&self, z: &LatentTensor, t: usize, cond: &Conditioning) -> Result<LatentTensor> {
        let shape = z.shape();
        let volume = shape.numel() / shape.channels.max(1);
        let offset = toy_affine(t, cond);
        let mut out = Vec::with_capacity(z.numel());
        for chunk in z.data().chunks(volume.max(1)) {
            let mean = chunk.iter().sum::<f64>() / chunk.len() as f64;
            out.extend(chunk.iter().map(|&v| 0.5 * v + 0.5 * mean + offset));
        }
        LatentTensor::from_vec(shape, z.dtype(), out)
    }

    fn receptive_field(&self) -> ReceptiveField {
        ReceptiveField::Unbounded
    }
}

/// Returns its input unchanged.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IdentityDenoiser;

impl Denoiser for IdentityDenoiser {
    fn predict(&self, z: &LatentTensor, _t: usize, _cond: &Conditioning) -> Result<LatentTensor> {
        Ok(z.clone())
    }

    fn receptive_field(&self) -> ReceptiveField {
        ReceptiveField::Bounded([0; 3])
    }
}

/// Final latent plus the latent after every step (`trace[i-1]` is the
/// output of step `i`).
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub final_latent: LatentTensor,
    pub trace: Vec<LatentTensor>,
}

/// Single-device reference: `T` guided predictions and sampler updates.
pub fn run_centralized(
    f: &dyn Denoiser,
    initial: &LatentTensor,
    cfg: &SamplerConfig,
    cond: &Conditioning,
) -> Result<Trajectory> {
    let mut z = initial.clone();
    let mut trace = Vec::with_capacity(cfg.steps);
    for step in 1..=cfg.steps {
        let t = cfg.timestep(step);
        let eps = cfg_predict(f, &z, t, cond, cfg.guidance)?;
        z = sampler_step(&z, &eps, cfg.eta)?;
        trace.push(z.clone());
    }
    Ok(Trajectory {
        final_latent: z,
        trace,
    })
}

/// Index ranges along each axis that can influence output position `pos`.
pub fn influence_box(
    field: ReceptiveField,
    pos: [usize; 3],
    dims: [usize; 3],
) -> [(usize, usize); 3] {
    let mut out = [(0, 0); 3];
    for axis in Axis::ALL {
        let i = axis.ordinal();
        out[i] = match field {
            ReceptiveField::Bounded(r) => (
                pos[i].saturating_sub(r[i]),
                (pos[i] + r[i]).min(dims[i] - 1),
            ),
            ReceptiveField::Unbounded => (0, dims[i] - 1),
        };
    }
    out
}
