//! Rotating, patch-aligned overlapping partition of a latent tensor.
//!
//! Each denoising step picks one axis (temporal, height, width in turn),
//! splits its patches into `K` equal core ranges and widens every core by
//! `O = floor(L * r)` patches on each side. Patch bounds are then scaled back
//! to latent indices.

use serde::ser::{SerializeStruct, Serializer};
use serde::Serialize;

use crate::error::{LpError, Result};
use crate::latent::{Axis, LatentTensor, PatchGeometry, Shape};

/// Half-open index range `[start, end)`. Serialized as `[start, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start <= end);
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn contains(&self, x: usize) -> bool {
        self.start <= x && x < self.end
    }

    fn scale(&self, p: usize) -> Span {
        Span::new(self.start * p, self.end * p)
    }
}

impl Serialize for Span {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        [self.start, self.end].serialize(s)
    }
}

/// Axis partitioned at 1-based step `i`: temporal, height, width, repeating.
///
/// # Panics
/// If `step` is 0.
pub fn rotation_axis(step: usize) -> Axis {
    assert!(step >= 1, "denoising steps are counted from 1");
    match (step - 1) % 3 {
        0 => Axis::Temporal,
        1 => Axis::Height,
        _ => Axis::Width,
    }
}

/// Core patch ranges for `workers` partitions of `patches` patches.
///
/// Every core gets `L = ceil(N / K)` patches; the last is clamped to `N` and
/// cores starting at or beyond `N` are dropped.
pub fn core_bounds(patches: usize, workers: usize) -> Vec<Span> {
    assert!(patches >= 1 && workers >= 1);
    let per_core = patches.div_ceil(workers);
    (0..workers)
        .map(|k| k * per_core)
        .take_while(|&start| start < patches)
        .map(|start| Span::new(start, (start + per_core).min(patches)))
        .collect()
}

/// `O = floor(L * r)` after checking `r` lies in `[0, K-1]`.
pub fn overlap_patches(per_core: usize, ratio: f64, workers: usize) -> Result<usize> {
    let max = workers.saturating_sub(1);
    if !ratio.is_finite() || ratio < 0.0 || ratio > max as f64 {
        return Err(LpError::InvalidOverlapRatio { ratio, max });
    }
    Ok((per_core as f64 * ratio).floor() as usize)
}

/// Widen each core by `O` patches per side, clamped to `[0, N)`.
pub fn extend_overlap(
    cores: &[Span],
    patches: usize,
    per_core: usize,
    ratio: f64,
    workers: usize,
) -> Result<Vec<Span>> {
    let overlap = overlap_patches(per_core, ratio, workers)?;
    Ok(cores
        .iter()
        .map(|c| {
            Span::new(
                c.start.saturating_sub(overlap),
                (c.end + overlap).min(patches),
            )
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionEntry {
    /// 1-based; worker 1 is the master.
    pub worker_id: usize,
    /// Core patch range `[alpha, beta)`.
    pub core: Span,
    /// Extended patch range `[alpha', beta')`.
    pub ext: Span,
    /// Latent range `[s, e)` of the sub-latent sent to this worker.
    pub latent: Span,
    /// Core region in latent units. The final core absorbs remainder rows.
    pub core_latent: Span,
    pub delta_start: usize,
    pub delta_end: usize,
}

impl PartitionEntry {
    pub fn len(&self) -> usize {
        self.latent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.latent.is_empty()
    }
}

/// Partition of one axis for one denoising step.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionPlan {
    pub axis: Axis,
    pub step: usize,
    /// Latent extent `D` of the partitioned axis.
    pub extent: usize,
    pub patch_size: usize,
    /// `N = floor(D / p)`.
    pub patches: usize,
    /// Requested worker count `K`.
    pub workers: usize,
    pub overlap_ratio: f64,
    /// `L`
    pub patches_per_core: usize,
    /// `O`
    pub overlap_patches: usize,
    pub entries: Vec<PartitionEntry>,
}

impl PartitionPlan {
    /// Number of workers that actually receive a partition.
    pub fn effective_workers(&self) -> usize {
        self.entries.len()
    }

    /// Sum of sub-latent lengths along the partitioned axis.
    pub fn extended_length(&self) -> usize {
        self.entries.iter().map(PartitionEntry::len).sum()
    }

    /// `S_ext / S_z` for this plan.
    pub fn expansion_factor(&self) -> f64 {
        self.extended_length() as f64 / self.extent as f64
    }

    /// Shape of the sub-latent for `entry` when the full latent is `full`.
    pub fn sub_shape(&self, full: Shape, entry: &PartitionEntry) -> Shape {
        full.with_extent(self.axis, entry.len())
    }
}

impl Serialize for PartitionPlan {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct EntryView {
            k: usize,
            core: Span,
            ext: Span,
            latent: Span,
            delta: [usize; 2],
        }
        let entries: Vec<EntryView> = self
            .entries
            .iter()
            .map(|e| EntryView {
                k: e.worker_id,
                core: e.core,
                ext: e.ext,
                latent: e.latent,
                delta: [e.delta_start, e.delta_end],
            })
            .collect();
        let mut st = s.serialize_struct("PartitionPlan", 5)?;
        st.serialize_field("axis", &self.axis)?;
        st.serialize_field("step", &self.step)?;
        st.serialize_field("L", &self.patches_per_core)?;
        st.serialize_field("O", &self.overlap_patches)?;
        st.serialize_field("entries", &entries)?;
        st.end()
    }
}

/// Partition an axis of latent extent `extent` with patch size `patch_size`.
pub fn plan_axis(
    axis: Axis,
    step: usize,
    extent: usize,
    patch_size: usize,
    workers: usize,
    ratio: f64,
) -> Result<PartitionPlan> {
    if workers == 0 {
        return Err(LpError::InvalidConfig("worker count must be >= 1".into()));
    }
    if patch_size == 0 || extent < patch_size {
        return Err(LpError::DegenerateAxis {
            axis,
            extent,
            patch: patch_size,
        });
    }
    let patches = extent / patch_size;
    let per_core = patches.div_ceil(workers);
    let cores = core_bounds(patches, workers);
    let exts = extend_overlap(&cores, patches, per_core, ratio, workers)?;
    let overlap = overlap_patches(per_core, ratio, workers)?;
    if cores.len() < workers {
        log::warn!(
            "{axis} has {patches} patches for {workers} workers; only {} receive a partition",
            cores.len()
        );
    }

    let last = cores.len() - 1;
    let entries = cores
        .iter()
        .zip(&exts)
        .enumerate()
        .map(|(i, (&core, &ext))| {
            let mut latent = ext.scale(patch_size);
            let mut core_latent = core.scale(patch_size);
            if i == last {
                // Rows past N*p belong to the last partition.
                latent.end = extent;
                core_latent.end = extent;
            }
            PartitionEntry {
                worker_id: i + 1,
                core,
                ext,
                latent,
                core_latent,
                delta_start: (core.start - ext.start) * patch_size,
                delta_end: (ext.end - core.end) * patch_size,
            }
        })
        .collect();

    Ok(PartitionPlan {
        axis,
        step,
        extent,
        patch_size,
        patches,
        workers,
        overlap_ratio: ratio,
        patches_per_core: per_core,
        overlap_patches: overlap,
        entries,
    })
}

/// Plan for 1-based denoising step `step` of a latent with shape `shape`.
pub fn build_plan(
    shape: Shape,
    patch: &PatchGeometry,
    step: usize,
    workers: usize,
    ratio: f64,
) -> Result<PartitionPlan> {
    let axis = rotation_axis(step);
    plan_axis(
        axis,
        step,
        shape.extent(axis),
        patch.size(axis),
        workers,
        ratio,
    )
}

/// Slice `z` into one sub-latent per plan entry, in entry order.
pub fn extract_sublatents(z: &LatentTensor, plan: &PartitionPlan) -> Result<Vec<LatentTensor>> {
    if z.shape().extent(plan.axis) != plan.extent {
        return Err(LpError::ShapeMismatch(format!(
            "plan covers {} rows on {} but tensor has {}",
            plan.extent,
            plan.axis,
            z.shape().extent(plan.axis)
        )));
    }
    plan.entries
        .iter()
        .map(|e| z.slice_axis(plan.axis, e.latent.start, e.latent.end))
        .collect()
}
