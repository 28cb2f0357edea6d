//! Browser bindings: partition plans with blend weights, schedule
//! reachability and communication cost curves, each returned as JSON.

use lpsim_core::completeness::{
    constant_schedule, rotating_schedule, verify_n_complete, PatchGrid,
};
use lpsim_core::cost::{cost_report, CostInputs};
use lpsim_core::latent::{wan_like_latent, wan_like_patch, Axis, ModelPreset};
use lpsim_core::partition::plan_axis;
use lpsim_core::reconstruct::{build_weight_mask, contributions};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize)]
struct PlanView {
    plan: serde_json::Value,
    /// Per worker: `(position, weight)` over its extent.
    weights: Vec<Vec<(usize, f64)>>,
    /// Per position: sum of the weights covering it.
    totals: Vec<f64>,
}

/// Partition one axis of `extent` latent rows and return the plan, each
/// worker's blend profile and the per-position weight totals.
pub fn plan_view(
    extent: usize,
    patch: usize,
    workers: usize,
    ratio: f64,
) -> Result<String, String> {
    let plan =
        plan_axis(Axis::Temporal, 1, extent, patch, workers, ratio).map_err(|e| e.to_string())?;
    let weights = plan
        .entries
        .iter()
        .map(|e| {
            build_weight_mask(e)
                .profile
                .into_iter()
                .enumerate()
                .map(|(j, w)| (e.latent.start + j, w))
                .collect()
        })
        .collect();
    let totals = contributions(&plan)
        .iter()
        .map(|cs| cs.iter().map(|c| c.weight).sum())
        .collect();
    let view = PlanView {
        plan: serde_json::to_value(&plan).map_err(|e| e.to_string())?,
        weights,
        totals,
    };
    serde_json::to_string(&view).map_err(|e| e.to_string())
}

#[derive(Debug, Serialize)]
struct ReachView {
    dims: [usize; 3],
    complete_at: Option<usize>,
    /// Per step: number of positions whose reach covers the grid.
    complete_positions: Vec<usize>,
    min_reach: Vec<usize>,
    /// Row-major over the grid; `null` where never complete.
    min_steps: Vec<Option<usize>>,
}

/// Reachability under a `rotating` or single-axis (`temporal`, `height`,
/// `width`) schedule of `steps` steps.
pub fn reach_view(
    dims: [usize; 3],
    workers: usize,
    ratio: f64,
    schedule: &str,
    steps: usize,
) -> Result<String, String> {
    let grid = PatchGrid::new(dims).map_err(|e| e.to_string())?;
    let schedule = match schedule {
        "rotating" => rotating_schedule(steps),
        other => {
            let axis = Axis::parse(other).ok_or_else(|| format!("unknown schedule {other:?}"))?;
            constant_schedule(axis, steps)
        }
    };
    let v = verify_n_complete(grid, workers, ratio, &schedule, steps.min(2))
        .map_err(|e| e.to_string())?;
    let view = ReachView {
        dims,
        complete_at: v.complete_at,
        complete_positions: v.coverage.iter().map(|c| c.complete_positions).collect(),
        min_reach: v.coverage.iter().map(|c| c.min_reach).collect(),
        min_steps: v.min_steps,
    };
    serde_json::to_string(&view).map_err(|e| e.to_string())
}

#[derive(Debug, Serialize)]
struct CostPoint {
    workers: usize,
    c_lp: u64,
    c_nmp: u64,
    ratio: Option<f64>,
    gamma_mean: f64,
}

/// LP and NMP totals for K = 1..=max_workers on the WAN-like preset.
pub fn cost_curve(
    frames: usize,
    steps: usize,
    max_workers: usize,
    ratio: f64,
) -> Result<String, String> {
    if frames == 0 || steps == 0 {
        return Err("frames and steps must be >= 1".into());
    }
    let shape = wan_like_latent(frames);
    let points = (1..=max_workers)
        .filter(|&k| ratio <= (k - 1) as f64)
        .map(|k| {
            let inputs = CostInputs::new(
                steps,
                k,
                ratio,
                shape,
                wan_like_patch(),
                ModelPreset::wan21_like(),
            );
            let r = cost_report(&inputs).map_err(|e| e.to_string())?;
            Ok(CostPoint {
                workers: k,
                c_lp: r.c_lp,
                c_nmp: r.c_nmp,
                ratio: r.ratio_r,
                gamma_mean: r.gamma_mean,
            })
        })
        .collect::<Result<Vec<_>, String>>()?;
    serde_json::to_string(&points).map_err(|e| e.to_string())
}

fn js(r: Result<String, String>) -> Result<String, JsValue> {
    r.map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn partition_plan(
    extent: usize,
    patch: usize,
    workers: usize,
    ratio: f64,
) -> Result<String, JsValue> {
    js(plan_view(extent, patch, workers, ratio))
}

#[wasm_bindgen]
pub fn reachability(
    t: usize,
    h: usize,
    w: usize,
    workers: usize,
    ratio: f64,
    schedule: &str,
    steps: usize,
) -> Result<String, JsValue> {
    js(reach_view([t, h, w], workers, ratio, schedule, steps))
}

#[wasm_bindgen]
pub fn cost_sweep(
    frames: usize,
    steps: usize,
    max_workers: usize,
    ratio: f64,
) -> Result<String, JsValue> {
    js(cost_curve(frames, steps, max_workers, ratio))
}
