use std::fmt::Write as _;
use std::path::Path;

use lpsim_core::cluster::{run_lp, run_nmp_emulation, run_pp_emulation, Parallelism};
use lpsim_core::completeness::{verify_n_complete, PatchGrid};
use lpsim_core::config::{schedule_for, synthetic_inputs, OutputFormat, RunConfig};
use lpsim_core::cost::cost_report;
use lpsim_core::denoise::run_centralized;
use lpsim_core::io::write_latent;
use lpsim_core::partition::build_plan;
use lpsim_core::reconstruct::build_weight_mask;
use lpsim_core::LpError;
use serde_json::json;

pub enum Failure {
    Config(String),
    Runtime(String),
}

impl From<LpError> for Failure {
    fn from(e: LpError) -> Self {
        if e.is_config_error() {
            Failure::Config(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

/// One output file, held in memory until the command has succeeded.
pub struct Artifact {
    pub name: String,
    pub format: OutputFormat,
    pub bytes: Vec<u8>,
}

impl Artifact {
    fn json(name: &str, value: &serde_json::Value) -> Result<Self, Failure> {
        let mut bytes =
            serde_json::to_vec_pretty(value).map_err(|e| Failure::Runtime(e.to_string()))?;
        bytes.push(b'\n');
        Ok(Self {
            name: name.into(),
            format: OutputFormat::Json,
            bytes,
        })
    }

    fn csv(name: &str, text: String) -> Self {
        Self {
            name: name.into(),
            format: OutputFormat::Csv,
            bytes: text.into_bytes(),
        }
    }
}

pub struct Loaded {
    pub config: RunConfig,
    pub seed: u64,
    pub parallelism: Parallelism,
}

pub fn load(path: &Path, seed: Option<u64>) -> Result<Loaded, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
    let config = RunConfig::from_json(&text)?;
    let threads = std::env::var("LPSIM_THREADS").ok();
    let parallelism = Parallelism::from_env_value(threads.as_deref())
        .map_err(|e| Failure::Config(e.to_string()))?;
    Ok(Loaded {
        seed: seed.unwrap_or(config.seed()),
        config,
        parallelism,
    })
}

pub fn simulate(l: &Loaded) -> Result<Vec<Artifact>, Failure> {
    let cfg = &l.config;
    let shape = cfg.shape();
    let dtype = cfg.dtype()?;
    let (z, cond) = synthetic_inputs(shape, dtype, l.seed);
    let cluster = cfg.cluster_with_parallelism(l.parallelism)?;
    let f = cfg.denoiser();
    let run = run_lp(f.as_ref(), &z, &cfg.sampler_config()?, &cond, &cluster)?;
    let summary = run.summary()?;

    let mut bin = Vec::new();
    write_latent(&run.final_latent, &mut bin)?;
    let mut ledger = Vec::new();
    run.ledger.write_csv(&mut ledger)?;

    let report = json!({
        "seed": l.seed,
        "shape": shape,
        "dtype_bytes": dtype.bytes(),
        "steps": cfg.sampler.steps,
        "workers": cfg.cluster.k,
        "overlap_ratio": cfg.cluster.r,
        "total_bytes": summary.grand_total,
        "grand_total": summary.grand_total,
        "per_worker_totals": summary.per_worker_totals,
        "formula_check": summary.formula_check,
    });
    Ok(vec![
        Artifact {
            name: "z0.bin".into(),
            format: OutputFormat::Bin,
            bytes: bin,
        },
        Artifact {
            name: "ledger.csv".into(),
            format: OutputFormat::Csv,
            bytes: ledger,
        },
        Artifact::json("summary.json", &report)?,
    ])
}

pub fn compare(l: &Loaded) -> Result<Vec<Artifact>, Failure> {
    let cfg = &l.config;
    let shape = cfg.shape();
    let (z, cond) = synthetic_inputs(shape, cfg.dtype()?, l.seed);
    let cluster = cfg.cluster_with_parallelism(l.parallelism)?;
    let layers = cluster.preset.num_blocks;
    if cluster.workers > layers {
        return Err(Failure::Config(format!(
            "preset {:?} has {layers} blocks, too few to split over K = {}",
            cluster.preset.name, cluster.workers
        )));
    }
    let sampler = cfg.sampler_config()?;
    let f = cfg.denoiser();
    let lp = run_lp(f.as_ref(), &z, &sampler, &cond, &cluster)?;
    let central = run_centralized(f.as_ref(), &z, &sampler, &cond)?;
    let nmp = run_nmp_emulation(layers, shape, sampler.steps, &cluster)?;
    let pp = run_pp_emulation(layers, shape, sampler.steps, &cluster)?;

    let mut csv = String::from("step,axis,max_abs_diff,rms_diff\n");
    for ((a, b), plan) in lp.trace.iter().zip(&central.trace).zip(&lp.plans) {
        writeln!(
            csv,
            "{},{},{:e},{:e}",
            plan.step,
            plan.axis,
            a.max_abs_diff(b)?,
            a.rms_diff(b)?
        )
        .expect("write to string");
    }
    let report = json!({
        "seed": l.seed,
        "denoiser": cfg.denoiser.kind,
        "workers": cfg.cluster.k,
        "overlap_ratio": cfg.cluster.r,
        "final_max_abs_diff": lp.final_latent.max_abs_diff(&central.final_latent)?,
        "final_rms_diff": lp.final_latent.rms_diff(&central.final_latent)?,
        "totals": {
            "LP": lp.ledger.grand_total(),
            "NMP": nmp.grand_total(),
            "PP": pp.grand_total(),
        },
        "formula_check": lp.formula_check(),
    });
    Ok(vec![
        Artifact::csv("compare_steps.csv", csv),
        Artifact::json("compare.json", &report)?,
    ])
}

pub fn cost(l: &Loaded) -> Result<Vec<Artifact>, Failure> {
    let report = cost_report(&l.config.cost_inputs()?)?;
    let header = lpsim_core::cost::CostReport::CSV_HEADER.join(",");
    let row = report.csv_row().join(",");
    Ok(vec![
        Artifact::json("cost.json", &json!(report))?,
        Artifact::csv("cost.csv", format!("{header}\n{row}\n")),
    ])
}

pub fn completeness(l: &Loaded) -> Result<Vec<Artifact>, Failure> {
    let cfg = &l.config;
    let params = cfg.completeness_params();
    let grid = PatchGrid::new(params.grid)?;
    let schedule = schedule_for(params.schedule, params.max_steps);
    let v = verify_n_complete(grid, cfg.cluster.k, cfg.cluster.r, &schedule, params.n)?;

    let mut csv = String::from("step,axis,min_reach,total_reach,complete_positions\n");
    for c in &v.coverage {
        writeln!(
            csv,
            "{},{},{},{},{}",
            c.step, c.axis, c.min_reach, c.total_reach, c.complete_positions
        )
        .expect("write to string");
    }
    let report = json!({
        "grid": params.grid,
        "workers": cfg.cluster.k,
        "overlap_ratio": cfg.cluster.r,
        "n": params.n,
        "complete": v.complete,
        "complete_at": v.complete_at,
        "worst_position": v.worst_position,
        "schedule": v.schedule,
        "min_steps": v.min_steps,
    });
    Ok(vec![
        Artifact::json("completeness.json", &report)?,
        Artifact::csv("coverage.csv", csv),
    ])
}

pub fn partition_plan(l: &Loaded, step: usize) -> Result<Vec<Artifact>, Failure> {
    if step == 0 {
        return Err(Failure::Config("--step is 1-based".into()));
    }
    let cfg = &l.config;
    let plan = build_plan(
        cfg.shape(),
        &cfg.patch_geometry()?,
        step,
        cfg.cluster.k,
        cfg.cluster.r,
    )?;
    let mut csv = String::from("position,worker_id,weight\n");
    for e in &plan.entries {
        let mask = build_weight_mask(e);
        for (j, w) in mask.profile.iter().enumerate() {
            writeln!(csv, "{},{},{}", e.latent.start + j, e.worker_id, w).expect("write to string");
        }
    }
    Ok(vec![
        Artifact::json("plan.json", &json!(plan))?,
        Artifact::csv("weights.csv", csv),
    ])
}
