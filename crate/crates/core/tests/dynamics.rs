use oja_hierarchy::dynamics::{iterate_noisy, phi_window_stability, window_growth, NoisyTrajectory};
use oja_hierarchy::harness::substream;
use oja_hierarchy::training::noisy_weight_target;
use oja_hierarchy::Fraction;
use proptest::prelude::*;

fn tail(traj: &NoisyTrajectory, from: usize) -> NoisyTrajectory {
    NoisyTrajectory { records: traj.records[from..].to_vec(), ..traj.clone() }
}

fn mean_in(traj: &NoisyTrajectory, from: usize) -> f64 {
    let recs = &traj.records[from..];
    recs.iter().map(|r| r.w_in.iter().sum::<f64>() / r.w_in.len() as f64).sum::<f64>() / recs.len() as f64
}

/// With `ceil(p k) < k` the symmetric fixed point of the averaged update is
/// `1/sqrt(k)`, not the closed-form target, which assumes independent marks.
#[test]
fn genuinely_noisy_fixed_point_is_inverse_sqrt_k() {
    let (k, p) = (10, Fraction::new(4, 5).unwrap());
    let traj = iterate_noisy(k, p, 1e-3, 1, 60_000, 1000, &mut substream(1, "noise", 0));
    let mean = mean_in(&traj, 30_000);
    let inv_sqrt_k = 1.0 / (k as f64).sqrt();
    let wbar = noisy_weight_target(k, 0.8);
    assert!((mean / inv_sqrt_k - 1.0).abs() < 0.01, "mean {mean} vs {inv_sqrt_k}");
    assert!((wbar / inv_sqrt_k - 1.0).abs() > 0.09, "closed form {wbar}");
}

#[test]
fn degenerate_noise_matches_the_closed_form() {
    // ceil(0.8 * 4) = 4 fires every input, and 1/sqrt(4) sits inside 10% of the target
    let traj = iterate_noisy(4, Fraction::new(4, 5).unwrap(), 1e-3, 1, 20_000, 1000, &mut substream(2, "noise", 0));
    let w = traj.last().w_in.clone();
    assert!(w.iter().all(|&x| (x - 0.5).abs() < 1e-9));
    assert!((0.5 / noisy_weight_target(4, 0.8) - 1.0).abs() < 0.1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    /// Once the in-set mass settles, it stays within a narrow band over
    /// every window; the first window grows it from the start value.
    #[test]
    fn in_set_mass_is_stable_after_burn_in(k in 5usize..=10, num in 6i64..=9, seed in any::<u64>()) {
        let p = Fraction::new(num, 10).unwrap();
        let window = 500;
        let traj = iterate_noisy(k, p, 1e-3, 1, 40_000, window, &mut substream(seed, "noise", 0));
        let settled = phi_window_stability(&tail(&traj, 20_000), window, 80.0);
        prop_assert_eq!(settled.fraction(), 1.0);
        prop_assert!(settled.windows >= 39);
        let growth = window_growth(&traj, window);
        prop_assert!(growth[0] > 1.0);
        prop_assert!(traj.records.iter().all(|r| r.w_in.iter().all(|&w| w > 0.0 && w < 1.0) && r.w_out > 0.0));
    }
}
