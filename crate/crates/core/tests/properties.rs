use std::collections::BTreeSet;

use oja_hierarchy::harness::substream;
use oja_hierarchy::lower_bound::{check_infeasibility, scenario_cant_fire, scenario_must_fire, RatioParams};
use oja_hierarchy::recognition::{build_static_recognizer, decision_disagreements, random_input, suite_inputs};
use oja_hierarchy::training::{generate_schedule, network_for, train, InvariantViolation, Presentation, SchedulePolicy, TrainOptions,
    TrainOutcome,
};
use oja_hierarchy::{ConceptHierarchy, ConceptId, Fraction, LearnParams};
use proptest::prelude::*;
use rand::Rng;

fn frac(num: i64, den: i64) -> Fraction {
    Fraction::new(num, den).unwrap()
}

fn shape() -> impl Strategy<Value = (usize, usize)> {
    (2usize..=5, 1usize..=3).prop_filter("small universe", |&(k, l)| k.pow(l as u32 + 1) <= 256)
}

fn train_with(h: &ConceptHierarchy, params: &LearnParams, sigma: u64, seed: u64) -> TrainOutcome<f64> {
    let schedule = generate_schedule(h, sigma, SchedulePolicy::Interleaved, true, &mut substream(seed, "schedule", 0));
    let options = TrainOptions { presentation: Presentation::Pipelined, snapshot_every: None, record_steps: false };
    train(h, network_for::<f64>(h, params).unwrap(), &schedule, params, &options, &mut substream(seed, "mark", 0)).unwrap()
}

/// All `m`-subsets of `0..n`.
fn combinations(n: usize, m: usize) -> Vec<Vec<usize>> {
    (0u32..1 << n).filter(|s| s.count_ones() as usize == m).map(|s| (0..n).filter(|i| s >> i & 1 == 1).collect()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn support_grows_with_the_input((k, lmax) in shape(), seed in any::<u64>(), num in 1i64..=20, density in 0.0f64..=1.0) {
        let h = ConceptHierarchy::build(k, lmax, k.pow(lmax as u32 + 1)).unwrap();
        let r = frac(num, 20);
        let mut rng = substream(seed, "prop", 0);
        let b: Vec<u32> = (0..h.n() as u32).filter(|_| rng.gen_bool(density)).collect();
        let small: Vec<u32> = b.iter().copied().filter(|_| rng.gen_bool(0.5)).collect();
        let s_small = h.supported(&small, r).unwrap();
        let s_big = h.supported(&b, r).unwrap();
        prop_assert!(s_small.is_subset(&s_big));
    }

    #[test]
    fn support_shrinks_as_the_ratio_rises((k, lmax) in shape(), seed in any::<u64>(), a in 1i64..=20, d in 0i64..=19) {
        let h = ConceptHierarchy::build(k, lmax, k.pow(lmax as u32 + 1)).unwrap();
        let lo = a.min(20 - d).max(1);
        let hi = (lo + d).min(20);
        let b = random_input(&h, &mut substream(seed, "prop", 1));
        let s_lo = h.supported(&b, frac(lo, 20)).unwrap();
        let s_hi = h.supported(&b, frac(hi, 20)).unwrap();
        prop_assert!(s_hi.is_subset(&s_lo));
        for c in h.concepts() {
            prop_assert_eq!(h.is_supported(c, &b, frac(lo, 20)).unwrap(), s_lo.contains(c));
        }
    }

    #[test]
    fn marks_are_sized_subsets_of_the_leaves((k, lmax) in shape(), seed in any::<u64>(), num in 1i64..=10) {
        let h = ConceptHierarchy::build(k, lmax, k.pow(lmax as u32 + 1)).unwrap();
        let p = frac(num, 10);
        let take = p.ceil_mul(k);
        let mut rng = substream(seed, "mark", 0);
        for c in h.internal_concepts() {
            let m = h.mark(c, p, &mut rng).unwrap();
            let leaves: BTreeSet<u32> = h.leaf_indices(c).unwrap().iter().copied().collect();
            prop_assert_eq!(m.len(), take.pow(c.level));
            prop_assert!(m.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(m.iter().all(|i| leaves.contains(i)));
        }
    }

    #[test]
    fn certificate_matches_the_separation_constraint(k in 2usize..=40, a in 1i64..100, d in 1i64..100, w in 1e-6f64..1e6) {
        let (r1, r2) = (frac(a, 100), frac((a + d).min(100), 100));
        prop_assume!(r1 < r2);
        let p = RatioParams::compute(r1, r2, k).unwrap();
        let cert = check_infeasibility(&p, w).unwrap();
        let quadratic_ok = p.quadratic_lhs() <= p.quadratic_rhs();
        prop_assert_eq!(cert.valid, quadratic_ok);
        prop_assert_eq!(p.validate().is_ok(), quadratic_ok && !r1.mul_is_integer(k));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// The scenarios are light and heavy choices within their bands, not
    /// necessarily the extremes. Both respect the quadratic bounds.
    #[test]
    fn scenarios_are_extremal(k in 3usize..=6, seed in any::<u64>(), weights in proptest::collection::vec(0.0f64..1.0, 36)) {
        let h = ConceptHierarchy::build(k, 2, k.pow(3)).unwrap();
        let params = RatioParams::compute(frac(51, 100), frac(80, 100), k).unwrap();
        let c = h.level(2).next().unwrap();
        let weight_of = |g: ConceptId| weights[g.index as usize % 36] + (seed % 7) as f64 * 1e-3;
        let a = scenario_must_fire(&h, c, &params, weight_of).unwrap();
        let b = scenario_cant_fire(&h, c, &params, weight_of).unwrap();

        let kids = h.children(c).unwrap();
        let grand: Vec<Vec<f64>> =
            kids.iter().map(|&x| h.children(x).unwrap().into_iter().map(weight_of).collect()).collect();
        let m2 = params.r2_prime.ceil_mul(k);
        let m1 = params.r1_prime.floor_mul(k);
        let pick = |ws: &[f64], m: usize, best: fn(f64, f64) -> f64, init: f64| {
            combinations(ws.len(), m).iter().map(|s| s.iter().map(|&i| ws[i]).sum::<f64>()).fold(init, best)
        };
        let min_a = combinations(k, m2)
            .iter()
            .map(|s| s.iter().map(|&i| pick(&grand[i], m2, f64::min, f64::INFINITY)).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        let max_b = combinations(k, m1)
            .iter()
            .map(|full| {
                (0..k)
                    .map(|i| if full.contains(&i) { grand[i].iter().sum() } else { pick(&grand[i], m1, f64::max, 0.0) })
                    .sum::<f64>()
            })
            .fold(0.0, f64::max);
        prop_assert!(min_a <= a.potential + 1e-9);
        prop_assert!(max_b >= b.potential - 1e-9);
        prop_assert!(a.potential <= a.bound + 1e-9);
        prop_assert!(b.potential >= b.bound - 1e-9);
        prop_assert!(h.is_supported(c, &a.input, params.r2).unwrap());
        prop_assert!(!h.is_supported(c, &b.input, params.r1).unwrap());
    }

    #[test]
    fn trained_weights_stay_in_the_unit_interval((k, lmax) in shape(), seed in any::<u64>(), sigma in 1u64..=30) {
        prop_assume!(k >= 3);
        let h = ConceptHierarchy::build(k, lmax, k.pow(lmax as u32 + 1)).unwrap();
        let Ok(params) = LearnParams::noise_free(k, frac(51, 100), frac(80, 100)) else { return Ok(()) };
        let out = train_with(&h, &params, sigma, seed);
        let out_of_range = out.invariants.violations.iter().any(|v| matches!(v, InvariantViolation::WeightBounds { .. }));
        prop_assert!(!out_of_range);
        prop_assert!(out.network.check_weight_bounds().is_ok());
        for l in 1..=lmax {
            prop_assert!(out.network.layer_weights(l).unwrap().iter().all(|w| (0.0..=1.0).contains(w)));
        }
    }

    /// Undertrained children leave every parent potential at zero, so the
    /// invariants are only promised from the analytic sigma on.
    #[test]
    fn invariants_hold_at_the_analytic_sigma(k in 3usize..=5, lmax in 1usize..=2, seed in any::<u64>()) {
        let h = ConceptHierarchy::build(k, lmax, k.pow(lmax as u32 + 1)).unwrap();
        let Ok(params) = LearnParams::noise_free(k, frac(51, 100), frac(80, 100)) else { return Ok(()) };
        let out = train_with(&h, &params, params.sigma(k, lmax), seed);
        prop_assert!(out.invariants.is_clean(), "{:?}", out.invariants.violations.first());
        prop_assert!(out.repmap.is_complete(&h));
        prop_assert!(out.repmap.is_injective());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    /// A trained network and the static recognizer make the same on-time
    /// decision for every bound concept on every suite input.
    #[test]
    fn trained_and_static_agree(seed in any::<u64>()) {
        let h = ConceptHierarchy::build(4, 2, 64).unwrap();
        let (r1, r2) = (frac(51, 100), frac(80, 100));
        let params = LearnParams::noise_free(4, r1, r2).unwrap();
        let trained = train_with(&h, &params, params.sigma(4, 2), seed);
        let (stat, map) = build_static_recognizer::<f64>(&h, r1, r2).unwrap();
        let inputs: Vec<Vec<u32>> =
            suite_inputs(&h, r1, r2, 300, &mut substream(seed, "sampler", 0)).unwrap().into_iter().map(|t| t.2).collect();
        let diffs = decision_disagreements(&h, (&trained.network, &trained.repmap), (&stat, &map), &inputs).unwrap();
        prop_assert!(diffs.is_empty(), "{:?}", diffs.first());
    }
}
