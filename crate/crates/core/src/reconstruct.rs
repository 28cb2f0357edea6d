//! Position-aware reconstruction of a global noise prediction from
//! overlapping local predictions.
//!
//! Each partition weighs its prediction with a 1-D profile along the
//! partitioned axis: a linear ramp up over the front overlap, 1 over the
//! core, a linear ramp down over the rear overlap. The global value at a
//! position is the weight-normalized sum of all partitions covering it.

use crate::error::{LpError, Result};
use crate::latent::{LatentTensor, Shape};
use crate::partition::{PartitionEntry, PartitionPlan};

/// Blend profile of one partition along the partitioned axis.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMask {
    pub profile: Vec<f64>,
    pub delta_start: usize,
    pub delta_end: usize,
}

impl WeightMask {
    pub fn len(&self) -> usize {
        self.profile.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profile.is_empty()
    }
}

pub fn build_weight_mask(entry: &PartitionEntry) -> WeightMask {
    let len = entry.len();
    let (front, rear) = (entry.delta_start, entry.delta_end);
    debug_assert!(front + rear <= len);
    let profile = (0..len)
        .map(|j| {
            if j < front {
                j as f64 / front as f64
            } else if j >= len - rear {
                (len - j) as f64 / rear as f64
            } else {
                1.0
            }
        })
        .collect();
    WeightMask {
        profile,
        delta_start: front,
        delta_end: rear,
    }
}

/// Global index `x` to the local index inside `entry`'s extent.
pub fn local_coord(x: usize, entry: &PartitionEntry) -> Result<usize> {
    if entry.latent.contains(x) {
        Ok(x - entry.latent.start)
    } else {
        Err(LpError::OutsideExtent {
            index: x,
            start: entry.latent.start,
            end: entry.latent.end,
        })
    }
}

/// One partition's contribution at a global position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contribution {
    /// Index into `plan.entries`.
    pub entry: usize,
    pub local: usize,
    pub weight: f64,
}

/// For every global position on the plan's axis, the contributing
/// partitions in worker order with their weights.
pub fn contributions(plan: &PartitionPlan) -> Vec<Vec<Contribution>> {
    let masks: Vec<WeightMask> = plan.entries.iter().map(build_weight_mask).collect();
    (0..plan.extent)
        .map(|x| {
            plan.entries
                .iter()
                .enumerate()
                .filter_map(|(i, e)| {
                    let local = local_coord(x, e).ok()?;
                    Some(Contribution {
                        entry: i,
                        local,
                        weight: masks[i].profile[local],
                    })
                })
                .collect()
        })
        .collect()
}

/// Normalized weighted average of the local `predictions`, one per plan
/// entry, into a tensor of shape `full`.
///
/// Sums run in `f64` in worker order; the result is rounded to the
/// predictions' dtype. Where every contributing prediction holds the same
/// value, that value is returned unchanged.
pub fn reconstruct(
    predictions: &[LatentTensor],
    plan: &PartitionPlan,
    full: Shape,
) -> Result<LatentTensor> {
    if predictions.len() != plan.entries.len() {
        return Err(LpError::ShapeMismatch(format!(
            "{} predictions for {} partitions",
            predictions.len(),
            plan.entries.len()
        )));
    }
    if full.extent(plan.axis) != plan.extent {
        return Err(LpError::ShapeMismatch(format!(
            "plan covers {} rows on {} but target shape is {full}",
            plan.extent, plan.axis
        )));
    }
    for (pred, entry) in predictions.iter().zip(&plan.entries) {
        let expected = plan.sub_shape(full, entry);
        if pred.shape() != expected {
            return Err(LpError::ShapeMismatch(format!(
                "worker {} returned {} but its extent is {expected}",
                entry.worker_id,
                pred.shape()
            )));
        }
    }
    let dtype = predictions[0].dtype();

    let contribs = contributions(plan);
    for (x, cs) in contribs.iter().enumerate() {
        let total: f64 = cs.iter().map(|c| c.weight).sum();
        if total < 1.0 {
            return Err(LpError::ZeroWeight { position: x, total });
        }
    }

    let axis = plan.axis;
    let mut out = LatentTensor::zeros(full, dtype);
    let mut values = Vec::with_capacity(plan.entries.len());
    for c in 0..full.channels {
        for t in 0..full.temporal {
            for h in 0..full.height {
                for w in 0..full.width {
                    let mut pos = [t, h, w];
                    let x = pos[axis.ordinal()];
                    values.clear();
                    for cb in &contribs[x] {
                        pos[axis.ordinal()] = cb.local;
                        values.push(predictions[cb.entry].get(c, pos[0], pos[1], pos[2]));
                    }
                    let v = if values.iter().all(|&v| v == values[0]) {
                        values[0]
                    } else {
                        let (acc, norm) = contribs[x]
                            .iter()
                            .zip(&values)
                            .fold((0.0, 0.0), |(a, z), (cb, &v)| {
                                (a + cb.weight * v, z + cb.weight)
                            });
                        acc / norm
                    };
                    out.set(c, t, h, w, v);
                }
            }
        }
    }
    Ok(out)
}
