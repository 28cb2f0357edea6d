//! Receptive-field propagation on patch grids.
//!
//! Each denoising step fuses information inside every partition block, the
//! way one attention pass over a sub-latent would. Tracking, per position,
//! the set of positions its information has reached shows whether a
//! partition schedule lets every position see the whole latent, and after
//! how many steps.

use serde::Serialize;

use crate::error::{LpError, Result};
use crate::latent::Axis;
use crate::partition::{plan_axis, rotation_axis, PartitionPlan};

/// Grids larger than this are rejected by the exhaustive checks.
pub const MAX_GRID_POSITIONS: usize = 4096;

/// Fixed-size bitset over grid positions.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Bitset {
    words: Vec<u64>,
    len: usize,
}

impl Bitset {
    pub fn new(len: usize) -> Self {
        Self {
            words: vec![0; len.div_ceil(64)],
            len,
        }
    }

    pub fn full(len: usize) -> Self {
        let mut b = Self::new(len);
        for i in 0..len {
            b.insert(i);
        }
        b
    }

    #[inline]
    pub fn insert(&mut self, i: usize) {
        debug_assert!(i < self.len);
        self.words[i / 64] |= 1 << (i % 64);
    }

    #[inline]
    pub fn contains(&self, i: usize) -> bool {
        self.words[i / 64] & (1 << (i % 64)) != 0
    }

    pub fn union_with(&mut self, other: &Bitset) {
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a |= b;
        }
    }

    pub fn intersects(&self, other: &Bitset) -> bool {
        self.words.iter().zip(&other.words).any(|(a, b)| a & b != 0)
    }

    pub fn is_superset(&self, other: &Bitset) -> bool {
        self.words
            .iter()
            .zip(&other.words)
            .all(|(a, b)| a & b == *b)
    }

    pub fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_full(&self) -> bool {
        self.count() == self.len
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Patch counts `(N_T, N_H, N_W)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct PatchGrid {
    pub dims: [usize; 3],
}

impl PatchGrid {
    pub fn new(dims: [usize; 3]) -> Result<Self> {
        if dims.contains(&0) {
            return Err(LpError::InvalidConfig(
                "grid dimensions must be >= 1".into(),
            ));
        }
        let n = dims.iter().product::<usize>();
        if n > MAX_GRID_POSITIONS {
            return Err(LpError::InvalidConfig(format!(
                "grid {dims:?} has {n} positions, more than {MAX_GRID_POSITIONS}"
            )));
        }
        Ok(Self { dims })
    }

    pub fn positions(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn index(&self, p: [usize; 3]) -> usize {
        (p[0] * self.dims[1] + p[1]) * self.dims[2] + p[2]
    }

    pub fn coords(&self, i: usize) -> [usize; 3] {
        let w = i % self.dims[2];
        let h = (i / self.dims[2]) % self.dims[1];
        let t = i / (self.dims[1] * self.dims[2]);
        [t, h, w]
    }

    /// Partition plan at patch granularity (unit patch size) for `axis`.
    pub fn plan(
        &self,
        axis: Axis,
        step: usize,
        workers: usize,
        ratio: f64,
    ) -> Result<PartitionPlan> {
        plan_axis(axis, step, self.dims[axis.ordinal()], 1, workers, ratio)
    }

    /// Grid positions covered by each plan entry (full range on the other axes).
    pub fn blocks(&self, plan: &PartitionPlan) -> Result<Vec<Bitset>> {
        let a = plan.axis.ordinal();
        if plan.extent != self.dims[a] || plan.patch_size != 1 {
            return Err(LpError::ShapeMismatch(format!(
                "plan over {} rows of {} does not match grid {:?}",
                plan.extent, plan.axis, self.dims
            )));
        }
        Ok(plan
            .entries
            .iter()
            .map(|e| {
                let mut b = Bitset::new(self.positions());
                for i in 0..self.positions() {
                    if e.latent.contains(self.coords(i)[a]) {
                        b.insert(i);
                    }
                }
                b
            })
            .collect())
    }
}

/// For every grid position, the set of positions its information reached.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReachabilitySet {
    pub grid: PatchGrid,
    pub sets: Vec<Bitset>,
}

impl ReachabilitySet {
    /// Before any step each position knows only itself.
    pub fn initial(grid: PatchGrid) -> Self {
        let n = grid.positions();
        let sets = (0..n)
            .map(|i| {
                let mut b = Bitset::new(n);
                b.insert(i);
                b
            })
            .collect();
        Self { grid, sets }
    }

    pub fn is_complete(&self) -> bool {
        self.sets.iter().all(Bitset::is_full)
    }

    pub fn min_coverage(&self) -> usize {
        self.sets.iter().map(Bitset::count).min().unwrap_or(0)
    }

    pub fn total_coverage(&self) -> usize {
        self.sets.iter().map(Bitset::count).sum()
    }
}

/// One denoising step: information that reached any position of a block
/// spreads to the whole block. Blocks fuse simultaneously from the
/// pre-step sets; a position inside several blocks spreads into all of them.
pub fn propagate_step(r: &ReachabilitySet, plan: &PartitionPlan) -> Result<ReachabilitySet> {
    let blocks = r.grid.blocks(plan)?;
    let sets = r
        .sets
        .iter()
        .map(|s| {
            let mut next = s.clone();
            for b in &blocks {
                if s.intersects(b) {
                    next.union_with(b);
                }
            }
            next
        })
        .collect();
    Ok(ReachabilitySet { grid: r.grid, sets })
}

/// Axis schedule with the temporal/height/width rotation.
pub fn rotating_schedule(steps: usize) -> Vec<Axis> {
    (1..=steps).map(rotation_axis).collect()
}

pub fn constant_schedule(axis: Axis, steps: usize) -> Vec<Axis> {
    vec![axis; steps]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompletenessVerdict {
    /// First step after which every position covers the grid.
    pub complete_at: Option<usize>,
    /// Whether that happened within the requested `N` steps.
    pub complete: bool,
    /// Per position (row-major grid index), first step with full coverage.
    pub min_steps: Vec<Option<usize>>,
    /// Position that is last to reach full coverage (or never does).
    pub worst_position: [usize; 3],
    pub schedule: Vec<Axis>,
    /// Per step: smallest and summed receptive-field sizes.
    pub coverage: Vec<StepCoverage>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct StepCoverage {
    pub step: usize,
    pub axis: Axis,
    pub min_reach: usize,
    pub total_reach: usize,
    pub complete_positions: usize,
}

/// Run `schedule` and report whether all positions reach the full grid
/// within `n` steps.
pub fn verify_n_complete(
    grid: PatchGrid,
    workers: usize,
    ratio: f64,
    schedule: &[Axis],
    n: usize,
) -> Result<CompletenessVerdict> {
    if schedule.len() < n {
        return Err(LpError::InvalidConfig(format!(
            "schedule of {} steps is shorter than N = {n}",
            schedule.len()
        )));
    }
    let mut r = ReachabilitySet::initial(grid);
    let mut min_steps: Vec<Option<usize>> =
        r.sets.iter().map(|s| s.is_full().then_some(0)).collect();
    let mut coverage = Vec::with_capacity(schedule.len());
    let mut complete_at = r.is_complete().then_some(0);

    for (i, &axis) in schedule.iter().enumerate() {
        if complete_at.is_some() {
            break;
        }
        let step = i + 1;
        let plan = grid.plan(axis, step, workers, ratio)?;
        r = propagate_step(&r, &plan)?;
        for (m, s) in min_steps.iter_mut().zip(&r.sets) {
            if m.is_none() && s.is_full() {
                *m = Some(step);
            }
        }
        coverage.push(StepCoverage {
            step,
            axis,
            min_reach: r.min_coverage(),
            total_reach: r.total_coverage(),
            complete_positions: min_steps.iter().filter(|m| m.is_some()).count(),
        });
        if r.is_complete() {
            complete_at = Some(step);
        }
    }

    let worst = (0..min_steps.len())
        .max_by_key(|&i| (min_steps[i].map_or(usize::MAX, |s| s), std::cmp::Reverse(i)))
        .unwrap_or(0);
    Ok(CompletenessVerdict {
        complete: complete_at.is_some_and(|s| s <= n),
        complete_at,
        min_steps,
        worst_position: grid.coords(worst),
        schedule: schedule.to_vec(),
        coverage,
    })
}
