//! Closed-form communication volume of layer-split baselines, latent
//! parallelism and the grouped hybrid.
//!
//! All byte counts are exact integers derived from real partition plans.
//! The balanced approximations are reported next to them for comparison.

use serde::Serialize;

use crate::error::{LpError, Result};
use crate::latent::{Axis, Dtype, ModelPreset, PatchGeometry, Shape};
use crate::partition::{plan_axis, rotation_axis, PartitionPlan};

#[derive(Debug, Clone)]
pub struct CostInputs {
    pub steps: usize,
    pub workers: usize,
    pub overlap_ratio: f64,
    pub shape: Shape,
    pub patch: PatchGeometry,
    pub preset: ModelPreset,
    /// Storage type of the latent; activations use the preset's dtype.
    pub latent_dtype: Dtype,
    /// Group sizes `K_m` for the grouped hybrid.
    pub groups: Option<Vec<usize>>,
}

impl CostInputs {
    pub fn new(
        steps: usize,
        workers: usize,
        overlap_ratio: f64,
        shape: Shape,
        patch: PatchGeometry,
        preset: ModelPreset,
    ) -> Self {
        let latent_dtype = preset.dtype;
        Self {
            steps,
            workers,
            overlap_ratio,
            shape,
            patch,
            preset,
            latent_dtype,
            groups: None,
        }
    }

    pub fn with_groups(mut self, groups: Vec<usize>) -> Self {
        self.groups = Some(groups);
        self
    }
}

/// `S_z`: bytes of the full latent.
pub fn latent_bytes(shape: Shape, dtype_bytes: usize) -> u64 {
    (shape.numel() * dtype_bytes) as u64
}

/// `S_H`: bytes of one activation tensor, one token per patch.
pub fn activation_bytes(shape: Shape, patch: &PatchGeometry, preset: &ModelPreset) -> Result<u64> {
    Ok((patch.num_patches(shape)? * preset.hidden_dim * preset.dtype.bytes()) as u64)
}

/// Bytes of the sub-latent of every plan entry, in worker order.
pub fn sublatent_bytes(plan: &PartitionPlan, shape: Shape, dtype_bytes: usize) -> Vec<u64> {
    plan.entries
        .iter()
        .map(|e| latent_bytes(plan.sub_shape(shape, e), dtype_bytes))
        .collect()
}

/// Per-step latent-parallel traffic: `4 * sum_{k>=2} S_sub(k)`.
pub fn lp_step_bytes(plan: &PartitionPlan, shape: Shape, dtype_bytes: usize) -> u64 {
    4 * sublatent_bytes(plan, shape, dtype_bytes)
        .iter()
        .skip(1)
        .sum::<u64>()
}

fn axis_plan(
    shape: Shape,
    patch: &PatchGeometry,
    axis: Axis,
    workers: usize,
    ratio: f64,
) -> Result<PartitionPlan> {
    plan_axis(
        axis,
        axis.ordinal() + 1,
        shape.extent(axis),
        patch.size(axis),
        workers,
        ratio,
    )
}

/// Number of steps among `1..=steps` that partition each axis.
pub fn steps_per_axis(steps: usize) -> [usize; 3] {
    let mut counts = [0; 3];
    for i in 1..=steps {
        counts[rotation_axis(i).ordinal()] += 1;
    }
    counts
}

/// `gamma = S_ext / S_z` when partitioning `axis`.
pub fn expansion_factor(
    shape: Shape,
    patch: &PatchGeometry,
    axis: Axis,
    workers: usize,
    ratio: f64,
) -> Result<f64> {
    Ok(axis_plan(shape, patch, axis, workers, ratio)?.expansion_factor())
}

/// `2T(K-1) * S_H`.
pub fn cost_nmp(inputs: &CostInputs) -> Result<u64> {
    let s_h = activation_bytes(inputs.shape, &inputs.patch, &inputs.preset)?;
    Ok(2 * inputs.steps as u64 * inputs.workers.saturating_sub(1) as u64 * s_h)
}

/// Micro-batching the two guidance passes moves the same tensors.
pub fn cost_pp(inputs: &CostInputs) -> Result<u64> {
    cost_nmp(inputs)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LpCost {
    /// Sum of per-step traffic over the actual axis schedule.
    pub exact: u64,
    /// `4T (K-1)/K * gamma * S_z` with the schedule-averaged gamma.
    pub approx: f64,
    /// Per-step bytes when partitioning temporal, height, width.
    pub step_bytes: [u64; 3],
    /// `S_ext` per axis.
    pub s_ext: [u64; 3],
    pub gamma: [f64; 3],
    /// Gamma averaged over the steps of the schedule.
    pub gamma_mean: f64,
}

pub fn cost_lp(inputs: &CostInputs) -> Result<LpCost> {
    let dtype_bytes = inputs.latent_dtype.bytes();
    let s_z = latent_bytes(inputs.shape, dtype_bytes);
    let counts = steps_per_axis(inputs.steps);
    let mut step_bytes = [0; 3];
    let mut s_ext = [0; 3];
    let mut gamma = [0.0; 3];
    for axis in Axis::ALL {
        let i = axis.ordinal();
        if counts[i] == 0 && inputs.shape.extent(axis) < inputs.patch.size(axis) {
            continue;
        }
        let plan = axis_plan(
            inputs.shape,
            &inputs.patch,
            axis,
            inputs.workers,
            inputs.overlap_ratio,
        )?;
        step_bytes[i] = lp_step_bytes(&plan, inputs.shape, dtype_bytes);
        s_ext[i] = sublatent_bytes(&plan, inputs.shape, dtype_bytes)
            .iter()
            .sum();
        gamma[i] = s_ext[i] as f64 / s_z as f64;
    }
    let exact = (0..3).map(|i| counts[i] as u64 * step_bytes[i]).sum();
    let gamma_mean =
        (0..3).map(|i| counts[i] as f64 * gamma[i]).sum::<f64>() / inputs.steps.max(1) as f64;
    let k = inputs.workers as f64;
    let approx = 4.0 * inputs.steps as f64 * (k - 1.0) / k * gamma_mean * s_z as f64;
    Ok(LpCost {
        exact,
        approx,
        step_bytes,
        s_ext,
        gamma,
        gamma_mean,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LpRatio {
    /// `C_LP / C_NMP` from exact byte counts.
    pub exact: f64,
    /// `(2 gamma / K) * (S_z / S_H)`.
    pub approx: f64,
    pub sz_over_sh: f64,
}

/// Closed-form `(2 gamma / K) * (S_z / S_H)`.
pub fn approx_ratio(gamma: f64, workers: usize, sz_over_sh: f64) -> f64 {
    2.0 * gamma / workers as f64 * sz_over_sh
}

pub fn ratio_lp_vs_nmp(inputs: &CostInputs) -> Result<LpRatio> {
    if inputs.workers < 2 {
        return Err(LpError::InvalidConfig(
            "the LP/NMP ratio needs at least 2 workers".into(),
        ));
    }
    let lp = cost_lp(inputs)?;
    let nmp = cost_nmp(inputs)?;
    let s_z = latent_bytes(inputs.shape, inputs.latent_dtype.bytes());
    let s_h = activation_bytes(inputs.shape, &inputs.patch, &inputs.preset)?;
    let sz_over_sh = s_z as f64 / s_h as f64;
    Ok(LpRatio {
        exact: lp.exact as f64 / nmp as f64,
        approx: approx_ratio(lp.gamma_mean, inputs.workers, sz_over_sh),
        sz_over_sh,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HybridReport {
    pub group_sizes: Vec<usize>,
    #[serde(rename = "C_inter")]
    pub c_inter: u64,
    /// Intra-group traffic of each group over all steps.
    #[serde(rename = "C_intra")]
    pub c_intra: Vec<u64>,
    #[serde(rename = "C_intra_total")]
    pub c_intra_total: u64,
    #[serde(rename = "C_hyb")]
    pub c_hyb: u64,
    #[serde(rename = "ratio_vs_NMP")]
    pub ratio_vs_nmp: Option<f64>,
    /// `(K - M) / (K - 1)`.
    pub bound: Option<f64>,
    pub within_bound: bool,
}

/// Latent parallelism across `M` groups with naive model parallelism inside
/// each group.
pub fn cost_hybrid(inputs: &CostInputs) -> Result<HybridReport> {
    let groups = inputs
        .groups
        .as_ref()
        .ok_or_else(|| LpError::InvalidGrouping("no group sizes given".into()))?;
    let m = groups.len();
    let k = inputs.workers;
    if m == 0 || m > k {
        return Err(LpError::InvalidGrouping(format!(
            "{m} groups for {k} workers"
        )));
    }
    if groups.contains(&0) {
        return Err(LpError::InvalidGrouping("empty group".into()));
    }
    if groups.iter().sum::<usize>() != k {
        return Err(LpError::InvalidGrouping(format!(
            "group sizes {groups:?} do not add up to {k} workers"
        )));
    }

    let dtype_bytes = inputs.latent_dtype.bytes();
    let act_bytes = (inputs.preset.hidden_dim * inputs.preset.dtype.bytes()) as u64;
    let grid = inputs.patch.grid(inputs.shape)?;
    let counts = steps_per_axis(inputs.steps);

    let mut c_inter = 0u64;
    let mut c_intra = vec![0u64; m];
    for axis in Axis::ALL {
        let steps = counts[axis.ordinal()] as u64;
        if steps == 0 {
            continue;
        }
        let plan = axis_plan(inputs.shape, &inputs.patch, axis, m, inputs.overlap_ratio)?;
        c_inter += steps * lp_step_bytes(&plan, inputs.shape, dtype_bytes);
        let others: usize = Axis::ALL
            .iter()
            .filter(|&&a| a != axis)
            .map(|a| grid[a.ordinal()])
            .product();
        for (entry, &size) in plan.entries.iter().zip(groups) {
            // Activation of the group's sub-latent: its own patch tokens.
            let s_h_group = (entry.ext.len() * others) as u64 * act_bytes;
            c_intra[entry.worker_id - 1] += steps * 2 * (size as u64 - 1) * s_h_group;
        }
    }
    let c_intra_total: u64 = c_intra.iter().sum();
    let c_hyb = c_inter + c_intra_total;
    let nmp = cost_nmp(inputs)?;
    let (ratio, bound) = if k >= 2 {
        (
            Some(c_hyb as f64 / nmp as f64),
            Some((k - m) as f64 / (k - 1) as f64),
        )
    } else {
        (None, None)
    };
    let within_bound = matches!((ratio, bound), (Some(r), Some(b)) if r < b);
    Ok(HybridReport {
        group_sizes: groups.clone(),
        c_inter,
        c_intra,
        c_intra_total,
        c_hyb,
        ratio_vs_nmp: ratio,
        bound,
        within_bound,
    })
}

/// Everything the `cost` command reports.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostReport {
    pub steps: usize,
    pub workers: usize,
    pub overlap_ratio: f64,
    #[serde(rename = "S_z")]
    pub s_z: u64,
    #[serde(rename = "S_H")]
    pub s_h: u64,
    #[serde(rename = "S_ext")]
    pub s_ext: [u64; 3],
    pub gamma: [f64; 3],
    pub gamma_mean: f64,
    #[serde(rename = "C_NMP")]
    pub c_nmp: u64,
    #[serde(rename = "C_PP")]
    pub c_pp: u64,
    #[serde(rename = "C_LP")]
    pub c_lp: u64,
    #[serde(rename = "C_LP_approx")]
    pub c_lp_approx: f64,
    pub ratio_r: Option<f64>,
    pub ratio_r_approx: Option<f64>,
    pub sz_over_sh: f64,
    pub hybrid: Option<HybridReport>,
}

impl CostReport {
    pub const CSV_HEADER: [&'static str; 14] = [
        "steps",
        "workers",
        "r",
        "S_z",
        "S_H",
        "gamma_mean",
        "C_NMP",
        "C_PP",
        "C_LP",
        "C_LP_approx",
        "ratio_r",
        "ratio_r_approx",
        "C_hyb",
        "hyb_ratio",
    ];

    pub fn csv_row(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        vec![
            self.steps.to_string(),
            self.workers.to_string(),
            self.overlap_ratio.to_string(),
            self.s_z.to_string(),
            self.s_h.to_string(),
            self.gamma_mean.to_string(),
            self.c_nmp.to_string(),
            self.c_pp.to_string(),
            self.c_lp.to_string(),
            self.c_lp_approx.to_string(),
            opt(self.ratio_r),
            opt(self.ratio_r_approx),
            self.hybrid
                .as_ref()
                .map(|h| h.c_hyb.to_string())
                .unwrap_or_default(),
            opt(self.hybrid.as_ref().and_then(|h| h.ratio_vs_nmp)),
        ]
    }
}

pub fn cost_report(inputs: &CostInputs) -> Result<CostReport> {
    let s_z = latent_bytes(inputs.shape, inputs.latent_dtype.bytes());
    let s_h = activation_bytes(inputs.shape, &inputs.patch, &inputs.preset)?;
    let lp = cost_lp(inputs)?;
    let c_nmp = cost_nmp(inputs)?;
    let ratio = if inputs.workers >= 2 {
        Some(ratio_lp_vs_nmp(inputs)?)
    } else {
        None
    };
    let hybrid = match inputs.groups {
        Some(_) => Some(cost_hybrid(inputs)?),
        None => None,
    };
    Ok(CostReport {
        steps: inputs.steps,
        workers: inputs.workers,
        overlap_ratio: inputs.overlap_ratio,
        s_z,
        s_h,
        s_ext: lp.s_ext,
        gamma: lp.gamma,
        gamma_mean: lp.gamma_mean,
        c_nmp,
        c_pp: cost_pp(inputs)?,
        c_lp: lp.exact,
        c_lp_approx: lp.approx,
        ratio_r: ratio.map(|r| r.exact),
        ratio_r_approx: ratio.map(|r| r.approx),
        sz_over_sh: s_z as f64 / s_h as f64,
        hybrid,
    })
}
