use lpsim_core::latent::{Axis, Dtype, LatentTensor, Shape};
use lpsim_core::partition::{core_bounds, plan_axis, rotation_axis, PartitionPlan};
use lpsim_core::reconstruct::{build_weight_mask, contributions, reconstruct};
use proptest::prelude::*;

const RATIOS: [f64; 5] = [0.0, 0.25, 0.5, 1.0, 2.0];

/// (extent, patch, K, r) with r valid for K.
fn plan_params() -> impl Strategy<Value = (usize, usize, usize, f64)> {
    (1usize..=4, 1usize..=8)
        .prop_flat_map(|(p, k)| (Just(p), p..=40usize, Just(k), 0usize..RATIOS.len()))
        .prop_map(|(p, d, k, ri)| {
            let r = RATIOS[ri].min((k - 1) as f64);
            (d, p, k, r)
        })
}

fn plan_of((d, p, k, r): (usize, usize, usize, f64)) -> PartitionPlan {
    plan_axis(Axis::Temporal, 1, d, p, k, r).unwrap()
}

fn random_predictions(plan: &PartitionPlan, full: Shape, seed: u64) -> Vec<LatentTensor> {
    plan.entries
        .iter()
        .map(|e| {
            let mut x = seed ^ (e.worker_id as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
            LatentTensor::from_fn(plan.sub_shape(full, e), Dtype::F64, |_, _, _, _| {
                x = x
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add(1442695040888963407);
                (x >> 11) as f64 / (1u64 << 53) as f64 * 20.0 - 10.0
            })
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn cores_tile_the_axis(params in plan_params()) {
        let plan = plan_of(params);
        let (d, _, k, _) = params;
        prop_assert!(plan.effective_workers() <= k);
        prop_assert_eq!(plan.entries[0].core_latent.start, 0);
        prop_assert_eq!(plan.entries.last().unwrap().core_latent.end, d);
        for w in plan.entries.windows(2) {
            prop_assert_eq!(w[0].core_latent.end, w[1].core_latent.start);
        }
        for e in &plan.entries {
            prop_assert!(!e.core_latent.is_empty());
        }
    }

    #[test]
    fn extents_contain_cores_and_stay_in_bounds(params in plan_params()) {
        let plan = plan_of(params);
        for e in &plan.entries {
            prop_assert!(e.latent.start <= e.core_latent.start);
            prop_assert!(e.core_latent.end <= e.latent.end);
            prop_assert!(e.latent.end <= plan.extent);
            prop_assert_eq!(e.core_latent.start - e.latent.start, e.delta_start);
            prop_assert_eq!(e.latent.end - e.core_latent.end, e.delta_end);
        }
        for w in plan.entries.windows(2) {
            prop_assert!(w[0].latent.start <= w[1].latent.start);
            prop_assert!(w[0].latent.end <= w[1].latent.end);
        }
    }

    #[test]
    fn zero_overlap_lengths_sum_to_extent((d, p, k, _) in plan_params()) {
        let plan = plan_axis(Axis::Height, 2, d, p, k, 0.0).unwrap();
        prop_assert_eq!(plan.extended_length(), d);
        prop_assert!(plan.expansion_factor() >= 1.0);
    }

    #[test]
    fn core_bounds_cover_patches(n in 1usize..200, k in 1usize..16) {
        let cores = core_bounds(n, k);
        prop_assert_eq!(cores.iter().map(|c| c.len()).sum::<usize>(), n);
        prop_assert_eq!(cores.len(), k.min(n.div_ceil(n.div_ceil(k))));
    }

    #[test]
    fn rotation_has_period_three(step in 1usize..10_000) {
        prop_assert_eq!(rotation_axis(step), rotation_axis(step + 3));
        prop_assert_eq!(rotation_axis(step).ordinal(), (step - 1) % 3);
    }

    #[test]
    fn blend_weight_total_at_least_one(params in plan_params()) {
        let plan = plan_of(params);
        for cs in contributions(&plan) {
            prop_assert!(!cs.is_empty());
            let z: f64 = cs.iter().map(|c| c.weight).sum();
            prop_assert!(z >= 1.0);
            for c in &cs {
                prop_assert!((0.0..=1.0).contains(&c.weight));
            }
        }
        for e in &plan.entries {
            let m = build_weight_mask(e);
            prop_assert_eq!(m.len(), e.len());
        }
    }

    #[test]
    fn normalized_weights_sum_to_one(params in plan_params()) {
        let plan = plan_of(params);
        for cs in contributions(&plan) {
            let z: f64 = cs.iter().map(|c| c.weight).sum();
            let s: f64 = cs.iter().map(|c| c.weight / z).sum();
            prop_assert!((s - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn reconstruction_is_convex(params in plan_params(), seed in any::<u64>()) {
        let plan = plan_of(params);
        let full = Shape::new(1, params.0, 2, 1);
        let preds = random_predictions(&plan, full, seed);
        let out = reconstruct(&preds, &plan, full).unwrap();
        for (x, cs) in contributions(&plan).iter().enumerate() {
            for h in 0..2 {
                let vals: Vec<f64> = cs.iter().map(|c| preds[c.entry].get(0, c.local, h, 0)).collect();
                let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let v = out.get(0, x, h, 0);
                prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn agreeing_predictions_are_reproduced(params in plan_params(), seed in any::<u64>()) {
        let plan = plan_of(params);
        let full = Shape::new(2, params.0, 1, 2);
        let truth = random_predictions(&plan_axis(Axis::Temporal, 1, params.0, params.1, 1, 0.0).unwrap(), full, seed)
            .remove(0);
        let preds: Vec<LatentTensor> = plan
            .entries
            .iter()
            .map(|e| truth.slice_axis(Axis::Temporal, e.latent.start, e.latent.end).unwrap())
            .collect();
        prop_assert_eq!(reconstruct(&preds, &plan, full).unwrap(), truth);
    }

    #[test]
    fn constant_field_is_fixed(params in plan_params(), c in -1e6f64..1e6) {
        let plan = plan_of(params);
        let full = Shape::new(1, params.0, 1, 1);
        let preds: Vec<LatentTensor> = plan
            .entries
            .iter()
            .map(|e| LatentTensor::filled(plan.sub_shape(full, e), Dtype::F64, c))
            .collect();
        let out = reconstruct(&preds, &plan, full).unwrap();
        prop_assert!(out.data().iter().all(|&v| v == c));
    }

    #[test]
    fn zero_overlap_is_concatenation((d, p, k, _) in plan_params(), seed in any::<u64>()) {
        let plan = plan_axis(Axis::Temporal, 1, d, p, k, 0.0).unwrap();
        let full = Shape::new(1, d, 2, 2);
        let preds = random_predictions(&plan, full, seed);
        let out = reconstruct(&preds, &plan, full).unwrap();
        prop_assert_eq!(out, LatentTensor::concat_axis(&preds, Axis::Temporal).unwrap());
    }

    #[test]
    fn slice_concat_round_trip(t in 1usize..6, h in 1usize..6, w in 1usize..6, cut in 0usize..6, axis in 0usize..3) {
        let shape = Shape::new(2, t, h, w);
        let axis = Axis::from_ordinal(axis).unwrap();
        let z = LatentTensor::from_fn(shape, Dtype::F32, |c, t, h, w| (c * 1000 + t * 100 + h * 10 + w) as f64);
        let d = shape.extent(axis);
        let cut = cut % d;
        let parts: Vec<LatentTensor> = if cut == 0 {
            vec![z.slice_axis(axis, 0, d).unwrap()]
        } else {
            vec![z.slice_axis(axis, 0, cut).unwrap(), z.slice_axis(axis, cut, d).unwrap()]
        };
        prop_assert_eq!(LatentTensor::concat_axis(&parts, axis).unwrap(), z);
    }
}
