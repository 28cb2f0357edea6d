//! End-to-end acceptance checks, one line per criterion on stdout.

use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use lpsim_core::cluster::{run_lp, run_nmp_emulation, run_pp_emulation, ClusterConfig};
use lpsim_core::completeness::{
    constant_schedule, rotating_schedule, verify_n_complete, PatchGrid,
};
use lpsim_core::config::{synthetic_inputs, SeededSource};
use lpsim_core::cost::{cost_lp, cost_nmp, cost_report, lp_step_bytes, CostInputs};
use lpsim_core::denoise::{run_centralized, toy_denoiser_box, IdentityDenoiser, SamplerConfig};
use lpsim_core::latent::{
    wan_like_latent, wan_like_patch, Axis, Dtype, LatentTensor, ModelPreset, PatchGeometry, Shape,
};
use lpsim_core::partition::{plan_axis, PartitionPlan};
use lpsim_core::reconstruct::{contributions, reconstruct};

/// Write past the test harness's output capture so every verdict is visible.
fn report(id: u32, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    writeln!(out, "acceptance {id} [{verdict}] {name}: {detail}").unwrap();
    out.flush().unwrap();
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let v = f();
    (v, start.elapsed())
}

fn pick<T: Copy>(src: &mut SeededSource, items: &[T]) -> T {
    items[(src.uniform() * items.len() as f64) as usize]
}

fn range(src: &mut SeededSource, lo: usize, hi: usize) -> usize {
    lo + (src.uniform() * (hi - lo + 1) as f64) as usize
}

#[test]
fn criterion_1_oracle_equivalence() {
    let shape = Shape::new(4, 12, 16, 16);
    let patch = PatchGeometry::new(2, 2, 2).unwrap();
    let f = toy_denoiser_box([2, 2, 2]);
    let sampler = SamplerConfig::new(6, 0.05, 5.0).unwrap();
    // K=2 with r=1 gives O = L, so every extent spans its whole axis.
    let r = 1.0;
    let cluster = ClusterConfig::new(2, r, patch, ModelPreset::toy()).unwrap();
    for axis in Axis::ALL {
        let plan = plan_axis(axis, 1, shape.extent(axis), 2, 2, r).unwrap();
        assert!(plan.overlap_patches * 2 >= 2);
    }

    let ((d4, d8), elapsed) = timed(|| {
        let diff = |dtype: Dtype| {
            let (z, cond) = synthetic_inputs(shape, dtype, 1);
            let central = run_centralized(&f, &z, &sampler, &cond).unwrap();
            let lp = run_lp(&f, &z, &sampler, &cond, &cluster).unwrap();
            lp.final_latent.max_abs_diff(&central.final_latent).unwrap()
        };
        (diff(Dtype::F32), diff(Dtype::F64))
    });

    // Informational: half overlap leaves seams inside the receptive field.
    let (z, cond) = synthetic_inputs(shape, Dtype::F64, 1);
    let half = ClusterConfig::new(2, 0.5, patch, ModelPreset::toy()).unwrap();
    let central = run_centralized(&f, &z, &sampler, &cond).unwrap();
    let d_half = run_lp(&f, &z, &sampler, &cond, &half)
        .unwrap()
        .final_latent
        .max_abs_diff(&central.final_latent)
        .unwrap();

    let pass = d4 <= 1e-6 && d8 <= 1e-12 && elapsed < Duration::from_secs(5);
    report(
        1,
        "oracle equivalence",
        pass,
        &format!(
            "r=1.0: max|diff| f32 {d4:e} (<= 1e-6), f64 {d8:e} (<= 1e-12), {:.2}s (< 5s); r=0.5 for reference: {d_half:e}",
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_2_ledger_formula_agreement() {
    let mut src = SeededSource::new(2024);
    let mut configs = 0;
    let mut divisible = 0;
    let mut mismatches = Vec::new();
    let (_, elapsed) = timed(|| {
        while configs < 60 {
            let k = range(&mut src, 1, 8);
            let r: f64 = pick(&mut src, &[0.0, 0.25, 0.5, 1.0]);
            if r > (k - 1) as f64 {
                continue;
            }
            let p = [
                range(&mut src, 1, 2),
                range(&mut src, 1, 2),
                range(&mut src, 1, 2),
            ];
            let mut dims = [
                range(&mut src, 2, 16),
                range(&mut src, 2, 16),
                range(&mut src, 2, 16),
            ];
            if configs % 2 == 0 {
                // Every axis splits into K equal patch-aligned cores.
                for i in 0..3 {
                    dims[i] = p[i] * k * range(&mut src, 1, 2);
                }
            }
            let dtype = pick(&mut src, &[Dtype::Bf16, Dtype::F32, Dtype::F64]);
            let steps = range(&mut src, 1, 7);
            let shape = Shape::new(range(&mut src, 1, 3), dims[0], dims[1], dims[2]);
            let patch = PatchGeometry::new(p[0], p[1], p[2]).unwrap();
            if (0..3).all(|i| (dims[i] / p[i]).is_multiple_of(k) && dims[i].is_multiple_of(p[i])) {
                divisible += 1;
            }
            let (z, cond) = synthetic_inputs(shape, dtype, configs as u64);
            let cluster = ClusterConfig::new(k, r, patch, ModelPreset::toy()).unwrap();
            let s = SamplerConfig::new(steps, 0.1, 3.0).unwrap();
            let run = run_lp(&IdentityDenoiser, &z, &s, &cond, &cluster).unwrap();
            let mut inputs = CostInputs::new(steps, k, r, shape, patch, ModelPreset::toy());
            inputs.latent_dtype = dtype;
            let exact = cost_lp(&inputs).unwrap().exact;
            let mut ok = run.ledger.grand_total() == exact;
            for plan in &run.plans {
                let row_bytes = (shape.numel() / shape.extent(plan.axis) * dtype.bytes()) as u64;
                let s_sub: u64 = plan.entries[1..]
                    .iter()
                    .map(|e| e.len() as u64 * row_bytes)
                    .sum();
                ok &= run.ledger.step_total(plan.step) == 4 * s_sub;
                ok &= lp_step_bytes(plan, shape, dtype.bytes()) == 4 * s_sub;
            }
            if !ok {
                mismatches.push(format!("{shape} K={k} r={r}"));
            }
            configs += 1;
        }
    });
    let pass = mismatches.is_empty() && elapsed < Duration::from_secs(30);
    report(
        2,
        "ledger/formula agreement",
        pass,
        &format!(
            "{configs} configs ({divisible} fully divisible), {} mismatches, {:.2}s (< 30s)",
            mismatches.len(),
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass, "{mismatches:?}");
}

#[test]
fn criterion_3_baseline_totals() {
    let mut src = SeededSource::new(3);
    let mut bad = Vec::new();
    let mut n = 0;
    for preset in [ModelPreset::toy(), ModelPreset::wan21_like()] {
        for _ in 0..20 {
            let k = range(&mut src, 1, preset.num_blocks.min(8));
            let steps = range(&mut src, 1, 60);
            let shape = Shape::new(
                range(&mut src, 1, 16),
                range(&mut src, 1, 13),
                range(&mut src, 2, 60),
                range(&mut src, 2, 104),
            );
            let patch = PatchGeometry::new(1, 2, 2).unwrap();
            let cluster = ClusterConfig::new(k, 0.0, patch, preset.clone()).unwrap();
            let nmp = run_nmp_emulation(preset.num_blocks, shape, steps, &cluster).unwrap();
            let pp = run_pp_emulation(preset.num_blocks, shape, steps, &cluster).unwrap();
            let s_h = (patch.num_patches(shape).unwrap() * preset.hidden_dim * preset.dtype.bytes())
                as u64;
            let formula = 2 * steps as u64 * (k as u64 - 1) * s_h;
            let model = cost_nmp(&CostInputs::new(
                steps,
                k,
                0.0,
                shape,
                patch,
                preset.clone(),
            ))
            .unwrap();
            if nmp.grand_total() != formula || pp.grand_total() != formula || model != formula {
                bad.push(format!("{shape} K={k} T={steps}"));
            }
            n += 1;
        }
    }
    let pass = bad.is_empty();
    report(
        3,
        "baseline totals",
        pass,
        &format!(
            "{n} configs, NMP == PP == 2T(K-1)S_H, {} mismatches",
            bad.len()
        ),
    );
    assert!(pass, "{bad:?}");
}

#[test]
fn criterion_4_reduction_at_desk_scale() {
    let inputs = CostInputs::new(
        60,
        4,
        0.5,
        wan_like_latent(49),
        wan_like_patch(),
        ModelPreset::wan21_like(),
    );
    let r = cost_report(&inputs).unwrap();
    let ratio = r.c_lp as f64 / r.c_nmp as f64;
    let pass = ratio <= 0.05;
    report(
        4,
        "LP <= 5% of NMP (WAN-like, K=4, r=0.5)",
        pass,
        &format!(
            "C_LP {} B, C_NMP {} B, ratio {ratio:.4} (reduction {:.1}%)",
            r.c_lp,
            r.c_nmp,
            100.0 * (1.0 - ratio)
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_5_two_completeness() {
    let mut checked = 0;
    let mut failures = Vec::new();
    let (_, elapsed) = timed(|| {
        for t in 2..=5 {
            for h in 2..=5 {
                for w in 2..=5 {
                    let grid = PatchGrid::new([t, h, w]).unwrap();
                    let feasible = t.min(h).min(w);
                    for k in 2..=4usize.min(feasible) {
                        for r in [0.0, 0.5] {
                            let v =
                                verify_n_complete(grid, k, r, &rotating_schedule(2), 2).unwrap();
                            if !v.complete {
                                failures.push(format!("rotating {t}x{h}x{w} K={k} r={r}"));
                            }
                            checked += 1;
                        }
                        for axis in Axis::ALL {
                            let v =
                                verify_n_complete(grid, k, 0.0, &constant_schedule(axis, 50), 50)
                                    .unwrap();
                            if v.complete {
                                failures.push(format!("constant {axis} {t}x{h}x{w} K={k}"));
                            }
                            checked += 1;
                        }
                    }
                }
            }
        }
    });
    let pass = failures.is_empty() && elapsed < Duration::from_secs(60);
    report(
        5,
        "2-completeness of the rotating schedule",
        pass,
        &format!(
            "{checked} checks, {} failures, {:.2}s (< 60s)",
            failures.len(),
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass, "{failures:?}");
}

fn check_reconstruction_case(plan: &PartitionPlan, src: &mut SeededSource) -> Result<(), String> {
    let full = Shape::new(1, plan.extent, 2, 1);
    let entries = &plan.entries;
    if entries[0].core_latent.start != 0 || entries.last().unwrap().core_latent.end != plan.extent {
        return Err("cores do not span the axis".into());
    }
    if entries
        .windows(2)
        .any(|w| w[0].core_latent.end != w[1].core_latent.start)
    {
        return Err("cores not contiguous".into());
    }
    let contribs = contributions(plan);
    for cs in &contribs {
        let z: f64 = cs.iter().map(|c| c.weight).sum();
        if z < 1.0 {
            return Err(format!("Z = {z}"));
        }
        let norm: f64 = cs.iter().map(|c| c.weight / z).sum();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(format!("normalized weights sum to {norm}"));
        }
    }
    let preds: Vec<LatentTensor> = entries
        .iter()
        .map(|e| {
            LatentTensor::from_fn(plan.sub_shape(full, e), Dtype::F64, |_, _, _, _| {
                src.normal()
            })
        })
        .collect();
    let out = reconstruct(&preds, plan, full).map_err(|e| e.to_string())?;
    for (x, cs) in contribs.iter().enumerate() {
        for h in 0..2 {
            let vals: Vec<f64> = cs
                .iter()
                .map(|c| preds[c.entry].get(0, c.local, h, 0))
                .collect();
            let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let v = out.get(0, x, h, 0);
            if v < lo - 1e-12 || v > hi + 1e-12 {
                return Err(format!("value {v} outside [{lo}, {hi}]"));
            }
        }
    }
    let c = src.normal();
    let consts: Vec<LatentTensor> = entries
        .iter()
        .map(|e| LatentTensor::filled(plan.sub_shape(full, e), Dtype::F64, c))
        .collect();
    if reconstruct(&consts, plan, full)
        .unwrap()
        .data()
        .iter()
        .any(|&v| v != c)
    {
        return Err("constant field not preserved".into());
    }
    if plan.overlap_patches == 0 && out != LatentTensor::concat_axis(&preds, plan.axis).unwrap() {
        return Err("zero-overlap blend is not a concatenation".into());
    }
    Ok(())
}

#[test]
fn criterion_6_reconstruction_invariants() {
    let mut src = SeededSource::new(6);
    let mut cases = 0;
    let mut zero_overlap = 0;
    let mut failures = Vec::new();
    let (_, elapsed) = timed(|| {
        while cases < 1200 {
            let k = range(&mut src, 1, 8);
            let p = range(&mut src, 1, 4);
            let d = range(&mut src, p, 48);
            let r: f64 = pick(&mut src, &[0.0, 0.0, 0.25, 0.5, 1.0, 2.0, 3.5]);
            if r > (k - 1) as f64 {
                continue;
            }
            let plan = plan_axis(Axis::Temporal, 1, d, p, k, r).unwrap();
            zero_overlap += usize::from(plan.overlap_patches == 0);
            if let Err(e) = check_reconstruction_case(&plan, &mut src) {
                failures.push(format!("D={d} p={p} K={k} r={r}: {e}"));
            }
            cases += 1;
        }
    });
    let pass = failures.is_empty() && cases >= 1000 && elapsed < Duration::from_secs(60);
    report(
        6,
        "reconstruction invariants",
        pass,
        &format!(
            "{cases} randomized plans ({zero_overlap} with O=0), {} failures, {:.2}s (< 60s)",
            failures.len(),
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass, "{failures:?}");
}

fn simulate(config: &Path, out: &Path, threads: Option<&str>) {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_lpsim"));
    cmd.args(["simulate", "--quiet", "--config"])
        .arg(config)
        .arg("--out")
        .arg(out);
    match threads {
        Some(t) => cmd.env("LPSIM_THREADS", t),
        None => cmd.env_remove("LPSIM_THREADS"),
    };
    let status = cmd.status().unwrap();
    assert!(status.success());
}

#[test]
fn criterion_7_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.json");
    std::fs::write(
        &config,
        r#"{
            "latent": {"C": 3, "T": 9, "H": 14, "W": 10, "dtype_bytes": 4},
            "patch": {"p_t": 1, "p_h": 2, "p_w": 2},
            "sampler": {"steps": 12, "eta": 0.02, "guidance_w": 5.0},
            "denoiser": {"kind": "box", "radius": [1, 2, 1], "seed": 77},
            "cluster": {"K": 4, "r": 0.5}
        }"#,
    )
    .unwrap();
    let runs = [
        ("a", None),
        ("b", None),
        ("serial", Some("0")),
        ("capped", Some("2")),
    ];
    for (name, threads) in runs {
        simulate(&config, &dir.path().join(name), threads);
    }
    let mut differing = Vec::new();
    for file in ["z0.bin", "ledger.csv", "summary.json"] {
        let reference = std::fs::read(dir.path().join("a").join(file)).unwrap();
        for (name, _) in &runs[1..] {
            if std::fs::read(dir.path().join(name).join(file)).unwrap() != reference {
                differing.push(format!("{name}/{file}"));
            }
        }
    }
    let pass = differing.is_empty();
    report(
        7,
        "determinism",
        pass,
        &format!("3 files x 4 runs (parallel twice, LPSIM_THREADS=0, LPSIM_THREADS=2); differing: {differing:?}"),
    );
    assert!(pass);
}

#[test]
fn criterion_8_gamma_monotonicity() {
    // Grid fixed up front: the WAN-like 49-frame latent, 60 steps.
    let shape = wan_like_latent(49);
    let patch = wan_like_patch();
    let ratios = [0.0, 0.25, 0.5, 0.75, 1.0];
    let ks = 1..=8usize;
    let gamma = |k: usize, r: f64| {
        let inputs = CostInputs::new(60, k, r, shape, patch, ModelPreset::wan21_like());
        cost_lp(&inputs).unwrap().gamma_mean
    };
    let mut below_one = Vec::new();
    let mut in_r = Vec::new();
    let mut in_k = Vec::new();
    for k in ks.clone() {
        let valid: Vec<f64> = ratios
            .iter()
            .copied()
            .filter(|&r| r <= (k - 1) as f64)
            .collect();
        for w in valid.windows(2) {
            let (a, b) = (gamma(k, w[0]), gamma(k, w[1]));
            if b < a {
                in_r.push(format!("K={k}: r {}->{} gives {a:.4}->{b:.4}", w[0], w[1]));
            }
        }
        for &r in &valid {
            let g = gamma(k, r);
            if g < 1.0 {
                below_one.push(format!("K={k} r={r}: {g}"));
            }
            if k < 8 {
                let g2 = gamma(k + 1, r);
                if g2 < g {
                    in_k.push(format!("r={r}: K {k}->{} gives {g:.4}->{g2:.4}", k + 1));
                }
            }
        }
    }
    let pass = below_one.is_empty() && in_r.is_empty() && in_k.is_empty();
    report(
        8,
        "expansion factor monotone in r and K",
        pass,
        &format!("gamma < 1: {below_one:?}; decreases in r: {in_r:?}; decreases in K: {in_k:?}"),
    );
    assert!(pass);
}
