//! JSON run configuration and the seeded synthetic inputs.
//!
//! The initial latent and prompt embedding come from ChaCha8 seeded with
//! `seed_from_u64(seed)`. Each `u64` draw `x` maps to a uniform
//! `(x >> 11) * 2^-53` in `[0, 1)`; normals use Box-Muller on two
//! uniforms `(u1, u2)` as `sqrt(-2 ln(1 - u1)) * cos(2 pi u2)` (one normal
//! per pair). Elements are drawn in row-major order (channel outermost),
//! then the embedding: `EMBEDDING_LEN` uniforms scaled to `[-1, 1)`.

use std::path::PathBuf;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::cluster::{ClusterConfig, Parallelism};
use crate::completeness::{constant_schedule, rotating_schedule, PatchGrid};
use crate::cost::CostInputs;
use crate::denoise::{
    toy_denoiser_box, toy_denoiser_global, Conditioning, Denoiser, IdentityDenoiser, SamplerConfig,
};
use crate::error::{LpError, Result};
use crate::latent::{Axis, Dtype, LatentTensor, ModelPreset, PatchGeometry, Shape};

pub const EMBEDDING_LEN: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatentParams {
    #[serde(rename = "C")]
    pub c: usize,
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(rename = "H")]
    pub h: usize,
    #[serde(rename = "W")]
    pub w: usize,
    #[serde(default = "default_dtype_bytes")]
    pub dtype_bytes: usize,
}

fn default_dtype_bytes() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchParams {
    pub p_t: usize,
    pub p_h: usize,
    pub p_w: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerParams {
    pub steps: usize,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_guidance")]
    pub guidance_w: f64,
}

fn default_eta() -> f64 {
    0.01
}

fn default_guidance() -> f64 {
    5.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DenoiserKind {
    Box,
    Global,
    Identity,
}

/// Radius as one number for all axes or `[r_T, r_H, r_W]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Radius {
    Uniform(usize),
    PerAxis([usize; 3]),
}

impl Radius {
    pub fn per_axis(self) -> [usize; 3] {
        match self {
            Radius::Uniform(r) => [r; 3],
            Radius::PerAxis(r) => r,
        }
    }
}

impl Default for Radius {
    fn default() -> Self {
        Radius::Uniform(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenoiserParams {
    pub kind: DenoiserKind,
    #[serde(default)]
    pub radius: Radius,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterParams {
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(default)]
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HybridParams {
    #[serde(rename = "M")]
    pub m: usize,
    /// Defaults to `K` split into `M` near-equal groups, larger first.
    #[serde(default)]
    pub group_sizes: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Rotating,
    Temporal,
    Height,
    Width,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompletenessParams {
    #[serde(default = "default_grid")]
    pub grid: [usize; 3],
    #[serde(default = "default_schedule")]
    pub schedule: ScheduleKind,
    /// `N` in "complete within N steps".
    #[serde(default = "default_n")]
    pub n: usize,
    /// Schedule length to simulate (>= n).
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
}

fn default_grid() -> [usize; 3] {
    [4, 4, 4]
}
fn default_schedule() -> ScheduleKind {
    ScheduleKind::Rotating
}
fn default_n() -> usize {
    2
}
fn default_max_steps() -> usize {
    6
}

impl Default for CompletenessParams {
    fn default() -> Self {
        Self {
            grid: default_grid(),
            schedule: default_schedule(),
            n: default_n(),
            max_steps: default_max_steps(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Json,
    Csv,
    Bin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputParams {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<OutputFormat>,
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_formats() -> Vec<OutputFormat> {
    vec![OutputFormat::Json, OutputFormat::Csv, OutputFormat::Bin]
}

impl Default for OutputParams {
    fn default() -> Self {
        Self {
            dir: default_dir(),
            formats: default_formats(),
        }
    }
}

impl OutputParams {
    pub fn wants(&self, f: OutputFormat) -> bool {
        self.formats.contains(&f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub latent: LatentParams,
    pub patch: PatchParams,
    pub sampler: SamplerParams,
    pub denoiser: DenoiserParams,
    pub cluster: ClusterParams,
    #[serde(default = "default_preset")]
    pub preset: String,
    #[serde(default)]
    pub hybrid: Option<HybridParams>,
    #[serde(default)]
    pub completeness: Option<CompletenessParams>,
    #[serde(default)]
    pub output: OutputParams,
}

fn default_preset() -> String {
    "toy".into()
}

impl RunConfig {
    /// Parse and validate.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Checks everything a run needs, so that failures after this point are
    /// runtime failures.
    pub fn validate(&self) -> Result<()> {
        let shape = self.shape();
        if shape.numel() == 0 {
            return Err(LpError::InvalidConfig(format!("empty latent {shape}")));
        }
        self.dtype()?;
        let patch = self.patch_geometry()?;
        patch.grid(shape)?;
        self.sampler_config()?;
        self.cluster_config()?;
        self.preset_model()?;
        if let Some(h) = &self.hybrid {
            let groups = self.group_sizes()?.unwrap_or_default();
            if h.m > self.cluster.k {
                return Err(LpError::InvalidGrouping(format!(
                    "M = {} exceeds K = {}",
                    h.m, self.cluster.k
                )));
            }
            crate::partition::overlap_patches(1, self.cluster.r, h.m)?;
            let mut probe = self.cost_inputs()?;
            probe.groups = Some(groups);
            crate::cost::cost_hybrid(&probe)?;
        }
        if let Some(c) = &self.completeness {
            PatchGrid::new(c.grid)?;
            if c.max_steps < c.n {
                return Err(LpError::InvalidConfig(format!(
                    "completeness.max_steps {} is below n {}",
                    c.max_steps, c.n
                )));
            }
        }
        if self.output.formats.is_empty() {
            return Err(LpError::InvalidConfig("output.formats is empty".into()));
        }
        Ok(())
    }

    pub fn shape(&self) -> Shape {
        Shape::new(self.latent.c, self.latent.t, self.latent.h, self.latent.w)
    }

    pub fn dtype(&self) -> Result<Dtype> {
        Dtype::from_bytes(self.latent.dtype_bytes)
    }

    pub fn patch_geometry(&self) -> Result<PatchGeometry> {
        PatchGeometry::new(self.patch.p_t, self.patch.p_h, self.patch.p_w)
    }

    pub fn sampler_config(&self) -> Result<SamplerConfig> {
        SamplerConfig::new(
            self.sampler.steps,
            self.sampler.eta,
            self.sampler.guidance_w,
        )
    }

    pub fn preset_model(&self) -> Result<ModelPreset> {
        ModelPreset::by_name(&self.preset)
    }

    pub fn cluster_config(&self) -> Result<ClusterConfig> {
        ClusterConfig::new(
            self.cluster.k,
            self.cluster.r,
            self.patch_geometry()?,
            self.preset_model()?,
        )
    }

    pub fn cluster_with_parallelism(&self, parallelism: Parallelism) -> Result<ClusterConfig> {
        Ok(self.cluster_config()?.with_parallelism(parallelism))
    }

    pub fn denoiser(&self) -> Box<dyn Denoiser> {
        match self.denoiser.kind {
            DenoiserKind::Box => Box::new(toy_denoiser_box(self.denoiser.radius.per_axis())),
            DenoiserKind::Global => Box::new(toy_denoiser_global()),
            DenoiserKind::Identity => Box::new(IdentityDenoiser),
        }
    }

    pub fn seed(&self) -> u64 {
        self.denoiser.seed
    }

    /// Resolved hybrid group sizes, if a hybrid block is present.
    pub fn group_sizes(&self) -> Result<Option<Vec<usize>>> {
        let Some(h) = &self.hybrid else {
            return Ok(None);
        };
        match &h.group_sizes {
            Some(g) => {
                if g.len() != h.m {
                    return Err(LpError::InvalidGrouping(format!(
                        "{} group sizes given for M = {}",
                        g.len(),
                        h.m
                    )));
                }
                Ok(Some(g.clone()))
            }
            None => {
                if h.m == 0 || h.m > self.cluster.k {
                    return Err(LpError::InvalidGrouping(format!(
                        "cannot split K = {} into M = {} groups",
                        self.cluster.k, h.m
                    )));
                }
                Ok(Some(even_groups(self.cluster.k, h.m)))
            }
        }
    }

    pub fn cost_inputs(&self) -> Result<CostInputs> {
        let mut inputs = CostInputs::new(
            self.sampler.steps,
            self.cluster.k,
            self.cluster.r,
            self.shape(),
            self.patch_geometry()?,
            self.preset_model()?,
        );
        inputs.latent_dtype = self.dtype()?;
        if let Some(g) = self.group_sizes()? {
            inputs = inputs.with_groups(g);
        }
        Ok(inputs)
    }

    pub fn completeness_params(&self) -> CompletenessParams {
        self.completeness.clone().unwrap_or_default()
    }
}

/// `k` split into `m` near-equal parts, larger parts first.
pub fn even_groups(k: usize, m: usize) -> Vec<usize> {
    (0..m).map(|i| k / m + usize::from(i < k % m)).collect()
}

pub fn schedule_for(kind: ScheduleKind, steps: usize) -> Vec<Axis> {
    match kind {
        ScheduleKind::Rotating => rotating_schedule(steps),
        ScheduleKind::Temporal => constant_schedule(Axis::Temporal, steps),
        ScheduleKind::Height => constant_schedule(Axis::Height, steps),
        ScheduleKind::Width => constant_schedule(Axis::Width, steps),
    }
}

/// Deterministic source of uniforms and normals; see the module docs.
#[derive(Debug, Clone)]
pub struct SeededSource {
    rng: ChaCha8Rng,
}

impl SeededSource {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform();
        let u2 = self.uniform();
        (-2.0 * (1.0 - u1).ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

/// Initial latent `z_T` and prompt embedding for `seed`.
pub fn synthetic_inputs(shape: Shape, dtype: Dtype, seed: u64) -> (LatentTensor, Conditioning) {
    let mut src = SeededSource::new(seed);
    let z = LatentTensor::from_fn(shape, dtype, |_, _, _, _| src.normal());
    let cond = (0..EMBEDDING_LEN)
        .map(|_| 2.0 * src.uniform() - 1.0)
        .collect();
    (z, Conditioning::new(cond))
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"{
        "latent": {"C": 2, "T": 4, "H": 6, "W": 6, "dtype_bytes": 4},
        "patch": {"p_t": 1, "p_h": 2, "p_w": 2},
        "sampler": {"steps": 3, "eta": 0.05, "guidance_w": 4.0},
        "denoiser": {"kind": "box", "radius": [1, 1, 1], "seed": 7},
        "cluster": {"K": 2, "r": 0.5}
    }"#;

    #[test]
    fn parses_with_defaults() {
        let cfg = RunConfig::from_json(BASE).unwrap();
        assert_eq!(cfg.shape(), Shape::new(2, 4, 6, 6));
        assert_eq!(cfg.preset, "toy");
        assert_eq!(cfg.output.formats.len(), 3);
        assert_eq!(cfg.denoiser.radius.per_axis(), [1, 1, 1]);
        let round = RunConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(round, cfg);
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = BASE.replace("\"K\": 2", "\"K\": 2, \"ring\": true");
        let err = RunConfig::from_json(&text).unwrap_err();
        assert!(err.is_config_error());
    }

    #[test]
    fn invalid_values_rejected() {
        for (from, to) in [
            ("\"r\": 0.5", "\"r\": 1.5"),
            ("\"dtype_bytes\": 4", "\"dtype_bytes\": 3"),
            ("\"steps\": 3", "\"steps\": 0"),
            ("\"p_h\": 2", "\"p_h\": 7"),
            ("\"kind\": \"box\"", "\"kind\": \"unet\""),
        ] {
            let err = RunConfig::from_json(&BASE.replace(from, to)).unwrap_err();
            assert!(err.is_config_error(), "{to}: {err}");
        }
    }

    #[test]
    fn hybrid_groups() {
        assert_eq!(even_groups(5, 2), vec![3, 2]);
        assert_eq!(even_groups(4, 4), vec![1, 1, 1, 1]);
        let text = BASE.replace(
            "\"cluster\": {\"K\": 2, \"r\": 0.5}",
            "\"cluster\": {\"K\": 4, \"r\": 0.5}, \"hybrid\": {\"M\": 2}",
        );
        let cfg = RunConfig::from_json(&text).unwrap();
        assert_eq!(cfg.group_sizes().unwrap(), Some(vec![2, 2]));
        let bad = text.replace("{\"M\": 2}", "{\"M\": 2, \"group_sizes\": [3, 2]}");
        assert!(RunConfig::from_json(&bad).unwrap_err().is_config_error());
    }

    #[test]
    fn seeded_inputs_are_reproducible() {
        let shape = Shape::new(1, 2, 3, 4);
        let (a, ca) = synthetic_inputs(shape, Dtype::F64, 42);
        let (b, cb) = synthetic_inputs(shape, Dtype::F64, 42);
        let (c, _) = synthetic_inputs(shape, Dtype::F64, 43);
        assert_eq!(a, b);
        assert_eq!(ca, cb);
        assert_ne!(a, c);
        assert!(ca.values().iter().all(|v| (-1.0..1.0).contains(v)));
    }

    #[test]
    fn normals_have_unit_scale() {
        let mut src = SeededSource::new(1);
        let xs: Vec<f64> = (0..20000).map(|_| src.normal()).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
        assert!(mean.abs() < 0.03, "{mean}");
        assert!((var - 1.0).abs() < 0.05, "{var}");
    }
}
