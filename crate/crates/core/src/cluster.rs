//! Simulated multi-worker execution of the latent-parallel denoising loop,
//! with every transferred byte recorded in a [`CommLedger`].
//!
//! Worker 1 is the master: it builds the partition plan, keeps partition 1
//! for itself, scatters the remaining sub-latents, gathers the predictions
//! and reconstructs. Workers run in their own threads and exchange only
//! typed messages with the master. Layer-split baselines (naive model
//! parallelism and pipeline parallelism) are emulated at the counter level.

use std::collections::VecDeque;
use std::io::Write;
use std::sync::{mpsc, Mutex};

use serde::Serialize;

use crate::cost;
use crate::denoise::{cfg_combine, sampler_step, Conditioning, Denoiser, SamplerConfig};
use crate::error::{LpError, Result};
use crate::latent::{Dtype, LatentTensor, ModelPreset, PatchGeometry, Shape};
use crate::partition::{build_plan, extract_sublatents, PartitionPlan};
use crate::reconstruct::reconstruct;

pub const MASTER: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Pass {
    Cond,
    Uncond,
}

impl Pass {
    pub const BOTH: [Pass; 2] = [Pass::Cond, Pass::Uncond];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TransferKind {
    Scatter,
    Gather,
    Activation,
}

/// One point-to-point transfer. Serialized as a ledger CSV row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CommRecord {
    pub step: usize,
    pub pass: Pass,
    pub kind: TransferKind,
    pub src: usize,
    pub dst: usize,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LedgerSummary {
    /// Bytes sent plus bytes received by each worker, index 0 is worker 1.
    pub per_worker_totals: Vec<u64>,
    /// Sum over unique transfers.
    pub grand_total: u64,
    pub formula_check: bool,
}

/// Byte counters for every transfer in a run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommLedger {
    workers: usize,
    records: Vec<CommRecord>,
    running_total: u64,
}

impl CommLedger {
    pub fn new(workers: usize) -> Self {
        Self {
            workers,
            records: Vec::new(),
            running_total: 0,
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn record(
        &mut self,
        step: usize,
        pass: Pass,
        kind: TransferKind,
        src: usize,
        dst: usize,
        elements: usize,
        dtype: Dtype,
    ) {
        debug_assert!(src != dst && src >= 1 && dst >= 1);
        let bytes = (elements * dtype.bytes()) as u64;
        self.running_total += bytes;
        self.records.push(CommRecord {
            step,
            pass,
            kind,
            src,
            dst,
            bytes,
        });
    }

    pub fn records(&self) -> &[CommRecord] {
        &self.records
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    pub fn grand_total(&self) -> u64 {
        self.records.iter().map(|r| r.bytes).sum()
    }

    pub fn step_total(&self, step: usize) -> u64 {
        self.records
            .iter()
            .filter(|r| r.step == step)
            .map(|r| r.bytes)
            .sum()
    }

    pub fn kind_total(&self, kind: TransferKind) -> u64 {
        self.records
            .iter()
            .filter(|r| r.kind == kind)
            .map(|r| r.bytes)
            .sum()
    }

    pub fn per_worker_totals(&self) -> Vec<u64> {
        let mut totals = vec![0; self.workers];
        for r in &self.records {
            totals[r.src - 1] += r.bytes;
            totals[r.dst - 1] += r.bytes;
        }
        totals
    }

    /// Cross-check the running counter against the records and summarize.
    pub fn finalize(&self, formula_check: bool) -> Result<LedgerSummary> {
        let total = self.grand_total();
        if total != self.running_total {
            return Err(LpError::Ledger(format!(
                "records sum to {total} but {} bytes were metered",
                self.running_total
            )));
        }
        Ok(LedgerSummary {
            per_worker_totals: self.per_worker_totals(),
            grand_total: total,
            formula_check,
        })
    }

    /// CSV with columns `step,pass,kind,src,dst,bytes`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.records {
            w.serialize(r)?;
        }
        if self.records.is_empty() {
            w.write_record(["step", "pass", "kind", "src", "dst", "bytes"])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// How worker computations are scheduled on the host.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Parallelism {
    /// All workers run one after another on the calling thread.
    Serial,
    /// At most this many worker threads at a time.
    Threads(usize),
    /// One thread per worker.
    #[default]
    Unbounded,
}

impl Parallelism {
    /// Interpret an `LPSIM_THREADS` value: `0` is serial, `n` caps threads.
    pub fn from_env_value(value: Option<&str>) -> Result<Self> {
        match value.map(str::trim) {
            None | Some("") => Ok(Parallelism::Unbounded),
            Some(v) => match v.parse::<usize>() {
                Ok(0) => Ok(Parallelism::Serial),
                Ok(n) => Ok(Parallelism::Threads(n)),
                Err(_) => Err(LpError::InvalidConfig(format!(
                    "LPSIM_THREADS must be a non-negative integer, got {v:?}"
                ))),
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClusterConfig {
    pub workers: usize,
    pub overlap_ratio: f64,
    pub patch: PatchGeometry,
    pub preset: ModelPreset,
    pub parallelism: Parallelism,
}

impl ClusterConfig {
    pub fn new(
        workers: usize,
        overlap_ratio: f64,
        patch: PatchGeometry,
        preset: ModelPreset,
    ) -> Result<Self> {
        if workers == 0 {
            return Err(LpError::InvalidConfig("worker count must be >= 1".into()));
        }
        crate::partition::overlap_patches(1, overlap_ratio, workers)?;
        Ok(Self {
            workers,
            overlap_ratio,
            patch,
            preset,
            parallelism: Parallelism::default(),
        })
    }

    pub fn with_parallelism(mut self, parallelism: Parallelism) -> Self {
        self.parallelism = parallelism;
        self
    }

    pub fn master_id(&self) -> usize {
        MASTER
    }
}

/// Sub-latent sent from the master to a worker for one guidance pass.
#[derive(Debug)]
struct SubLatentMsg {
    worker: usize,
    pass: Pass,
    tensor: LatentTensor,
}

/// Local noise prediction returned to the master.
#[derive(Debug)]
struct PredictionMsg {
    worker: usize,
    pass: Pass,
    tensor: LatentTensor,
}

struct WorkerJob {
    worker: usize,
    inbox: Vec<SubLatentMsg>,
}

type WorkerReply = std::result::Result<Vec<PredictionMsg>, (usize, String)>;

fn run_worker(
    f: &dyn Denoiser,
    job: WorkerJob,
    t: usize,
    cond: &Conditioning,
    null: &Conditioning,
) -> WorkerReply {
    job.inbox
        .into_iter()
        .map(|msg| {
            debug_assert_eq!(msg.worker, job.worker);
            let c = match msg.pass {
                Pass::Cond => cond,
                Pass::Uncond => null,
            };
            f.predict(&msg.tensor, t, c)
                .map(|tensor| PredictionMsg {
                    worker: msg.worker,
                    pass: msg.pass,
                    tensor,
                })
                .map_err(|e| (job.worker, e.to_string()))
        })
        .collect()
}

fn execute_jobs(
    f: &dyn Denoiser,
    jobs: Vec<WorkerJob>,
    t: usize,
    cond: &Conditioning,
    parallelism: Parallelism,
) -> Vec<WorkerReply> {
    let null = cond.to_null();
    let threads = match parallelism {
        Parallelism::Serial => 0,
        Parallelism::Threads(n) => n.min(jobs.len()),
        Parallelism::Unbounded => jobs.len(),
    };
    if threads == 0 {
        return jobs
            .into_iter()
            .map(|job| run_worker(f, job, t, cond, &null))
            .collect();
    }
    let queue = Mutex::new(jobs.into_iter().collect::<VecDeque<_>>());
    let (tx, rx) = mpsc::channel();
    std::thread::scope(|s| {
        for _ in 0..threads {
            let tx = tx.clone();
            let (queue, null) = (&queue, &null);
            s.spawn(move || loop {
                let next = queue.lock().expect("job queue poisoned").pop_front();
                let Some(job) = next else { break };
                let worker = job.worker;
                if tx
                    .send((worker, run_worker(f, job, t, cond, null)))
                    .is_err()
                {
                    break;
                }
            });
        }
    });
    drop(tx);
    // Arrival order is arbitrary; the master consumes replies by worker id.
    let mut replies: Vec<(usize, WorkerReply)> = rx.into_iter().collect();
    replies.sort_by_key(|(w, _)| *w);
    replies.into_iter().map(|(_, r)| r).collect()
}

/// Result of a latent-parallel run.
#[derive(Debug, Clone)]
pub struct LpRun {
    pub final_latent: LatentTensor,
    pub ledger: CommLedger,
    pub trace: Vec<LatentTensor>,
    pub plans: Vec<PartitionPlan>,
}

impl LpRun {
    /// Every step's metered bytes equal `4 * sum_{k>=2} S_sub(k)`.
    pub fn formula_check(&self) -> bool {
        let shape = self.final_latent.shape();
        let dtype = self.final_latent.dtype();
        self.plans.iter().all(|plan| {
            self.ledger.step_total(plan.step) == cost::lp_step_bytes(plan, shape, dtype.bytes())
        })
    }

    pub fn summary(&self) -> Result<LedgerSummary> {
        self.ledger.finalize(self.formula_check())
    }
}

/// Latent-parallel denoising of `initial` over `sampler.steps` steps.
pub fn run_lp(
    f: &dyn Denoiser,
    initial: &LatentTensor,
    sampler: &SamplerConfig,
    cond: &Conditioning,
    cluster: &ClusterConfig,
) -> Result<LpRun> {
    if cond.is_null() {
        return Err(LpError::InvalidConfig(
            "guided prediction needs a non-null prompt embedding".into(),
        ));
    }
    let shape = initial.shape();
    let dtype = initial.dtype();
    let mut ledger = CommLedger::new(cluster.workers);
    let mut z = initial.clone();
    let mut trace = Vec::with_capacity(sampler.steps);
    let mut plans = Vec::with_capacity(sampler.steps);
    let null = cond.to_null();

    for step in 1..=sampler.steps {
        let t = sampler.timestep(step);
        let plan = build_plan(
            shape,
            &cluster.patch,
            step,
            cluster.workers,
            cluster.overlap_ratio,
        )?;
        let mut subs = extract_sublatents(&z, &plan)?.into_iter();
        let own = subs.next().expect("plan has at least one partition");

        // Scatter: each remote sub-latent goes out once per guidance pass.
        let mut jobs = Vec::with_capacity(plan.entries.len() - 1);
        for (entry, sub) in plan.entries[1..].iter().zip(subs) {
            let worker = entry.worker_id;
            let mut inbox = Vec::with_capacity(2);
            for pass in Pass::BOTH {
                ledger.record(
                    step,
                    pass,
                    TransferKind::Scatter,
                    MASTER,
                    worker,
                    sub.numel(),
                    dtype,
                );
                inbox.push(SubLatentMsg {
                    worker,
                    pass,
                    tensor: sub.clone(),
                });
            }
            jobs.push(WorkerJob { worker, inbox });
        }

        let replies = std::thread::scope(|s| {
            let remote = s.spawn(|| execute_jobs(f, jobs, t, cond, cluster.parallelism));
            let local = run_worker(
                f,
                WorkerJob {
                    worker: MASTER,
                    inbox: Pass::BOTH
                        .iter()
                        .map(|&pass| SubLatentMsg {
                            worker: MASTER,
                            pass,
                            tensor: own.clone(),
                        })
                        .collect(),
                },
                t,
                cond,
                &null,
            );
            let mut all = vec![local];
            all.extend(remote.join().expect("worker pool panicked"));
            all
        });

        // Gather in worker order, then combine guidance per partition.
        let mut guided = Vec::with_capacity(plan.entries.len());
        for reply in replies {
            let mut preds = reply.map_err(|(worker, reason)| LpError::WorkerFailure {
                worker,
                step,
                reason,
            })?;
            preds.sort_by_key(|p| p.pass);
            let [cond_pred, uncond_pred] = <[PredictionMsg; 2]>::try_from(preds).map_err(|p| {
                LpError::ShapeMismatch(format!("expected 2 predictions, got {}", p.len()))
            })?;
            let worker = cond_pred.worker;
            let expected = plan.sub_shape(shape, &plan.entries[worker - 1]);
            for p in [&cond_pred, &uncond_pred] {
                if p.tensor.shape() != expected {
                    return Err(LpError::WorkerFailure {
                        worker,
                        step,
                        reason: format!(
                            "returned shape {} for extent {expected}",
                            p.tensor.shape()
                        ),
                    });
                }
                if worker != MASTER {
                    ledger.record(
                        step,
                        p.pass,
                        TransferKind::Gather,
                        worker,
                        MASTER,
                        p.tensor.numel(),
                        dtype,
                    );
                }
            }
            guided.push(cfg_combine(
                &uncond_pred.tensor,
                &cond_pred.tensor,
                sampler.guidance,
            )?);
        }

        let eps = reconstruct(&guided, &plan, shape)?;
        z = sampler_step(&z, &eps, sampler.eta)?;
        trace.push(z.clone());
        plans.push(plan);
    }

    Ok(LpRun {
        final_latent: z,
        ledger,
        trace,
        plans,
    })
}

/// Contiguous block ranges per worker when `layers` blocks are spread over
/// `workers` devices; earlier devices take the remainder.
pub fn layer_split(layers: usize, workers: usize) -> Result<Vec<std::ops::Range<usize>>> {
    if workers == 0 || layers < workers {
        return Err(LpError::InvalidConfig(format!(
            "cannot spread {layers} blocks over {workers} devices"
        )));
    }
    let base = layers / workers;
    let extra = layers % workers;
    let mut start = 0;
    Ok((0..workers)
        .map(|k| {
            let len = base + usize::from(k < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect())
}

fn activation_elements(shape: Shape, patch: &PatchGeometry, preset: &ModelPreset) -> Result<usize> {
    Ok(patch.num_patches(shape)? * preset.hidden_dim)
}

/// Naive model parallelism: every guidance pass pushes the activation
/// tensor across each of the `K - 1` device boundaries.
pub fn run_nmp_emulation(
    layers: usize,
    shape: Shape,
    steps: usize,
    cluster: &ClusterConfig,
) -> Result<CommLedger> {
    layer_split(layers, cluster.workers)?;
    let elements = activation_elements(shape, &cluster.patch, &cluster.preset)?;
    let mut ledger = CommLedger::new(cluster.workers);
    for step in 1..=steps {
        for pass in Pass::BOTH {
            for b in 1..cluster.workers {
                ledger.record(
                    step,
                    pass,
                    TransferKind::Activation,
                    b,
                    b + 1,
                    elements,
                    cluster.preset.dtype,
                );
            }
        }
    }
    Ok(ledger)
}

/// Pipeline parallelism with the two guidance passes as micro-batches: the
/// same transfers as naive model parallelism, interleaved per boundary.
pub fn run_pp_emulation(
    layers: usize,
    shape: Shape,
    steps: usize,
    cluster: &ClusterConfig,
) -> Result<CommLedger> {
    layer_split(layers, cluster.workers)?;
    let elements = activation_elements(shape, &cluster.patch, &cluster.preset)?;
    let mut ledger = CommLedger::new(cluster.workers);
    for step in 1..=steps {
        for b in 1..cluster.workers {
            for pass in Pass::BOTH {
                ledger.record(
                    step,
                    pass,
                    TransferKind::Activation,
                    b,
                    b + 1,
                    elements,
                    cluster.preset.dtype,
                );
            }
        }
    }
    Ok(ledger)
}
