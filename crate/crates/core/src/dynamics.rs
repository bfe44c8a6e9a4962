//! Single-neuron Oja dynamics under a fixed firing set `F` of size `k`.
//!
//! In the noise-free case every in-set weight stays equal to every other and
//! likewise for the out-set, so the neuron collapses to two scalars. The
//! noisy variant tracks the `k` in-set weights individually.

use std::io::{self, Write};

use num_rational::BigRational;
use rand::seq::index::sample;
use rand::Rng;
use serde::Serialize;

use crate::ratio::Fraction;
use crate::scalar::{round_dyadic, Scalar};
use crate::training::noisy_weight_target;

/// Shared in-set and out-set weights after `step` updates.
#[derive(Clone, Debug, PartialEq)]
pub struct SingleNeuronState<S> {
    pub step: u64,
    pub w_in: S,
    pub w_out: S,
}

impl<S: Scalar> SingleNeuronState<S> {
    /// Potential under full in-set firing, `k * w_in`.
    pub fn z(&self, k: usize) -> S {
        S::from_usize(k).expect("integer conversion") * self.w_in.clone()
    }
}

/// Noise-free trajectory from `w_in = w_out = 1/k^lmax`, `steps` updates,
/// state 0 included.
pub fn iterate_noise_free<S: Scalar>(k: usize, eta: S, lmax: usize, steps: u64) -> Vec<SingleNeuronState<S>> {
    iterate_with(k, eta, lmax, steps, |x| x)
}

/// Rational audit of [`iterate_noise_free`] with `eta = num/den`.
///
/// With `precision_bits = None` the iteration is exact; the denominator
/// size roughly triples per step, so keep `steps` small. Otherwise every
/// value is floored onto the grid `2^-bits` after each update.
pub fn iterate_noise_free_rational(
    k: usize,
    eta: (i64, i64),
    lmax: usize,
    steps: u64,
    precision_bits: Option<u32>,
) -> Vec<SingleNeuronState<BigRational>> {
    let eta = BigRational::from_ratio(eta.0, eta.1);
    match precision_bits {
        None => iterate_with(k, eta, lmax, steps, |x| x),
        Some(bits) => iterate_with(k, eta, lmax, steps, move |x| round_dyadic(&x, bits)),
    }
}

fn iterate_with<S: Scalar>(
    k: usize,
    eta: S,
    lmax: usize,
    steps: u64,
    round: impl Fn(S) -> S,
) -> Vec<SingleNeuronState<S>> {
    let kk = S::from_usize(k).expect("integer conversion");
    let w0 = S::inverse_power(k as u64, lmax as u32);
    let mut out = Vec::with_capacity(steps as usize + 1);
    let mut cur = SingleNeuronState { step: 0, w_in: w0.clone(), w_out: w0 };
    out.push(cur.clone());
    for step in 1..=steps {
        let z = kk.clone() * cur.w_in.clone();
        let gain = eta.clone() * z.clone();
        let w_in = cur.w_in.clone() + gain.clone() * (S::one() - z.clone() * cur.w_in.clone());
        let w_out = cur.w_out.clone() - gain * z * cur.w_out.clone();
        cur = SingleNeuronState { step, w_in: round(w_in), w_out: round(w_out) };
        out.push(cur.clone());
    }
    out
}

/// Outcome of the per-step monotonicity and range checks.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct MonotoneReport {
    pub steps: u64,
    /// Steps where `w_in` failed to rise (strictly, unless stalls are allowed).
    pub in_not_rising: Vec<u64>,
    pub out_not_falling: Vec<u64>,
    /// Steps with `w_in >= 1/sqrt(k)`, `w_out <= 0`, or `z >= sqrt(k)`.
    pub range: Vec<u64>,
    /// Steps where a float weight stopped changing at its fixed point.
    pub stalls: u64,
}

impl MonotoneReport {
    pub fn is_clean(&self) -> bool {
        self.in_not_rising.is_empty() && self.out_not_falling.is_empty() && self.range.is_empty()
    }
}

/// Checks strict growth of `w_in`, strict decay of `w_out`, `0 < w_out`,
/// and `w_in < 1/sqrt(k)` (equivalently `z < sqrt(k)`) at every step. The
/// bound is tested as `k w_in^2 < 1`, which is exact for rationals.
///
/// `allow_stall` tolerates `w_in(t) == w_in(t-1)`, and `w_in` landing on
/// the rounded bound, once the in-weight is within `1e-12` of `1/sqrt(k)`:
/// in binary floating point the update stops resolving the remaining gap.
pub fn check_monotone<S: Scalar>(traj: &[SingleNeuronState<S>], k: usize, allow_stall: bool) -> MonotoneReport {
    let target = S::from_f64_lossy(1.0 / (k as f64).sqrt());
    let ks = S::from_usize(k).expect("integer conversion");
    let slack = S::from_f64_lossy(1e-12);
    let near = |w: &S| target.clone() - w.clone() <= slack && w.clone() - target.clone() <= slack;
    let mut report = MonotoneReport { steps: traj.len().saturating_sub(1) as u64, ..Default::default() };
    for pair in traj.windows(2) {
        let (prev, cur) = (&pair[0], &pair[1]);
        if cur.w_in <= prev.w_in {
            if allow_stall && cur.w_in == prev.w_in && near(&cur.w_in) {
                report.stalls += 1;
            } else {
                report.in_not_rising.push(cur.step);
            }
        }
        if cur.w_out >= prev.w_out {
            report.out_not_falling.push(cur.step);
        }
        let over = ks.clone() * cur.w_in.clone() * cur.w_in.clone() >= S::one() && !(allow_stall && near(&cur.w_in));
        if over || cur.w_out <= S::zero() {
            report.range.push(cur.step);
        }
    }
    report
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub sigma: u64,
    pub lower_in: f64,
    pub upper_in: f64,
    pub upper_out: f64,
    /// First step from which both bounds hold for the rest of the trajectory.
    pub converged_at: Option<u64>,
    /// Steps `>= sigma` where a bound fails.
    pub violations_after_sigma: Vec<u64>,
}

impl ConvergenceReport {
    pub fn holds(&self) -> bool {
        self.violations_after_sigma.is_empty() && self.converged_at.is_some_and(|c| c <= self.sigma)
    }
}

/// Target bands: `w_in` in `[1/((1+eps) sqrt k), 1/sqrt k]` and
/// `w_out <= 1/k^(lmax+b)`, checked at every step `>= sigma`.
pub fn check_convergence<S: Scalar>(
    traj: &[SingleNeuronState<S>],
    k: usize,
    lmax: usize,
    sigma: u64,
    epsilon: f64,
    b: u32,
) -> ConvergenceReport {
    let sk = (k as f64).sqrt();
    let lower_in = 1.0 / ((1.0 + epsilon) * sk);
    let upper_in = 1.0 / sk;
    let upper_out_s = S::inverse_power(k as u64, (lmax as u32) + b);
    let (lo, hi) = (S::from_f64_lossy(lower_in), S::from_f64_lossy(upper_in));
    let ok: Vec<bool> =
        traj.iter().map(|s| s.w_in >= lo && s.w_in <= hi && s.w_out <= upper_out_s).collect();
    let converged_at = match ok.iter().rposition(|&b| !b) {
        None => traj.first().map(|s| s.step),
        Some(last_bad) => traj.get(last_bad + 1).map(|s| s.step),
    };
    let violations_after_sigma =
        traj.iter().zip(&ok).filter(|(s, &good)| s.step >= sigma && !good).map(|(s, _)| s.step).collect();
    ConvergenceReport {
        sigma,
        lower_in,
        upper_in,
        upper_out: upper_out_s.to_f64_lossy(),
        converged_at,
        violations_after_sigma,
    }
}

/// Upper bound on rounds needed to double an in-set weight below `1/(2 sqrt k)`.
pub fn doubling_time_bound(eta: f64, k: usize) -> f64 {
    4.0 / (3.0 * eta * k as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DoublingSegment {
    pub j: u32,
    /// Rounds from first reaching `1/(2^(j+1) sqrt k)` (or the start, if the
    /// start is already above it) to first reaching `1/(2^j sqrt k)`.
    pub rounds: u64,
}

/// Measured doubling times for every level `1/(2^j sqrt k)`, `j >= 1`, above the start.
pub fn measure_doubling_times(traj: &[SingleNeuronState<f64>], k: usize) -> Vec<DoublingSegment> {
    let sk = (k as f64).sqrt();
    let start = traj.first().map_or(0.0, |s| s.w_in);
    let first_reach = |level: f64| traj.iter().find(|s| s.w_in >= level).map(|s| s.step);
    let mut out = Vec::new();
    let mut j = 1u32;
    loop {
        let upper = 1.0 / (2f64.powi(j as i32) * sk);
        if upper <= start {
            break;
        }
        let lower = upper / 2.0;
        let from = if lower <= start { 0 } else { first_reach(lower).unwrap_or(u64::MAX) };
        if let Some(to) = first_reach(upper) {
            out.push(DoublingSegment { j, rounds: to.saturating_sub(from) });
        }
        j += 1;
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecayReport {
    /// First step with `w_in >= 1/(2 sqrt k)`.
    pub suffix_start: Option<u64>,
    /// Per-round factor bound `1 - eta k / 4`; `15/16` at `eta = 1/(4k)`.
    pub factor: f64,
    pub max_ratio: f64,
    /// Steps on the suffix where `w_out(t+1) > factor * w_out(t)`.
    pub slow_steps: Vec<u64>,
    /// Rounds from the suffix start until `w_out <= 1/k^(lmax+b)`.
    pub rounds_to_target: Option<u64>,
    /// `b log2 k / log2(1/factor)`.
    pub rounds_bound: f64,
    pub reached_zero: bool,
}

/// Out-set decay once the in-set weight has reached `1/(2 sqrt k)`, where
/// `z^2 >= k/4` and each round shrinks `w_out` by at least `1 - eta k / 4`.
pub fn decay_rate_check(traj: &[SingleNeuronState<f64>], k: usize, eta: f64, lmax: usize, b: u32) -> DecayReport {
    let half = 1.0 / (2.0 * (k as f64).sqrt());
    let factor = 1.0 - eta * k as f64 / 4.0;
    let start_idx = traj.iter().position(|s| s.w_in >= half);
    let target = <f64 as Scalar>::inverse_power(k as u64, lmax as u32 + b);
    let mut max_ratio: f64 = 0.0;
    let mut slow_steps = Vec::new();
    let mut rounds_to_target = None;
    if let Some(i0) = start_idx {
        for pair in traj[i0..].windows(2) {
            let ratio = pair[1].w_out / pair[0].w_out;
            max_ratio = max_ratio.max(ratio);
            if pair[1].w_out > pair[0].w_out * factor {
                slow_steps.push(pair[1].step);
            }
        }
        rounds_to_target = traj[i0..].iter().find(|s| s.w_out <= target).map(|s| s.step - traj[i0].step);
    }
    DecayReport {
        suffix_start: start_idx.map(|i| traj[i].step),
        factor,
        max_ratio,
        slow_steps,
        rounds_to_target,
        rounds_bound: b as f64 * (k as f64).log2() / -factor.log2(),
        reached_zero: traj.iter().any(|s| s.w_out <= 0.0),
    }
}

/// One step of the noisy single-neuron process.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NoisyRecord {
    pub step: u64,
    pub w_in: Vec<f64>,
    pub w_out: f64,
    /// Potential used for the update that produced this record (0 at step 0).
    pub z: f64,
    pub psi: f64,
    pub phi: f64,
}

/// Fixed-point distance `psi` and in-set mass `phi` for one step.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NoisyPotentialReport {
    pub wbar: f64,
    pub psi: f64,
    pub phi: f64,
    pub window: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NoisyTrajectory {
    pub k: usize,
    pub p: f64,
    pub eta: f64,
    pub wbar: f64,
    pub window: u64,
    pub records: Vec<NoisyRecord>,
}

impl NoisyTrajectory {
    pub fn report(&self, idx: usize) -> NoisyPotentialReport {
        let r = &self.records[idx];
        NoisyPotentialReport { wbar: self.wbar, psi: r.psi, phi: r.phi, window: self.window }
    }

    pub fn last(&self) -> &NoisyRecord {
        self.records.last().expect("trajectory includes step 0")
    }

    pub fn write_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        let mut header = vec!["step".to_string()];
        header.extend((1..=self.k).map(|i| format!("w{i}")));
        header.extend(["w_out", "z", "psi", "phi"].map(String::from));
        writeln!(out, "{}", header.join(","))?;
        for r in &self.records {
            let mut cells = vec![r.step.to_string()];
            cells.extend(r.w_in.iter().map(|w| format!("{w:?}")));
            cells.extend([r.w_out, r.z, r.psi, r.phi].iter().map(|v| format!("{v:?}")));
            writeln!(out, "{}", cells.join(","))?;
        }
        Ok(())
    }
}

/// `max(w_max / wbar, wbar / w_min)`.
pub fn psi(w_in: &[f64], wbar: f64) -> f64 {
    let max = w_in.iter().copied().fold(f64::MIN, f64::max);
    let min = w_in.iter().copied().fold(f64::MAX, f64::min);
    (max / wbar).max(wbar / min)
}

/// Noisy single-neuron process: each step fires `ceil(p k)` of the `k`
/// in-set inputs uniformly at random and applies Oja's rule. One
/// representative out-set weight is carried along.
pub fn iterate_noisy<R: Rng + ?Sized>(
    k: usize,
    p: Fraction,
    eta: f64,
    lmax: usize,
    steps: u64,
    window: u64,
    rng: &mut R,
) -> NoisyTrajectory {
    let m = p.ceil_mul(k);
    let wbar = noisy_weight_target(k, p.to_f64());
    let w0 = <f64 as Scalar>::inverse_power(k as u64, lmax as u32);
    let mut w_in = vec![w0; k];
    let mut w_out = w0;
    let mut fired = vec![false; k];
    let mut records = Vec::with_capacity(steps as usize + 1);
    records.push(NoisyRecord { step: 0, w_in: w_in.clone(), w_out, z: 0.0, psi: psi(&w_in, wbar), phi: w_in.iter().sum() });
    for step in 1..=steps {
        fired.iter_mut().for_each(|f| *f = false);
        if m >= k {
            fired.iter_mut().for_each(|f| *f = true);
        } else {
            for i in sample(rng, k, m).into_iter() {
                fired[i] = true;
            }
        }
        let z: f64 = w_in.iter().zip(&fired).filter(|(_, &f)| f).map(|(w, _)| w).sum();
        for (w, &f) in w_in.iter_mut().zip(&fired) {
            let x = if f { 1.0 } else { 0.0 };
            *w += eta * z * (x - z * *w);
        }
        w_out -= eta * z * z * w_out;
        records.push(NoisyRecord { step, w_in: w_in.clone(), w_out, z, psi: psi(&w_in, wbar), phi: w_in.iter().sum() });
    }
    NoisyTrajectory { k, p: p.to_f64(), eta, wbar, window, records }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WindowReport {
    pub windows: usize,
    pub within: usize,
    pub low: f64,
    pub high: f64,
}

impl WindowReport {
    pub fn fraction(&self) -> f64 {
        if self.windows == 0 {
            1.0
        } else {
            self.within as f64 / self.windows as f64
        }
    }
}

/// Fraction of non-overlapping windows of length `window` in which `phi`
/// stays within `((1 - 8/b) phi_start, (1 + 8/b) phi_start)`.
pub fn phi_window_stability(traj: &NoisyTrajectory, window: u64, b: f64) -> WindowReport {
    let (low, high) = (1.0 - 8.0 / b, 1.0 + 8.0 / b);
    let w = window.max(1) as usize;
    let mut windows = 0;
    let mut within = 0;
    let recs = &traj.records;
    let mut start = 0;
    while start + w < recs.len() {
        let base = recs[start].phi;
        windows += 1;
        if recs[start..=start + w].iter().all(|r| r.phi > low * base && r.phi < high * base) {
            within += 1;
        }
        start += w;
    }
    WindowReport { windows, within, low, high }
}

/// `phi(s + window) / phi(s)` over non-overlapping windows.
pub fn window_growth(traj: &NoisyTrajectory, window: u64) -> Vec<f64> {
    let w = window.max(1) as usize;
    traj.records.iter().step_by(w).collect::<Vec<_>>().windows(2).map(|p| p[1].phi / p[0].phi).collect()
}

/// Reference window length `2^10 k^4 log2(n) / (p^6 delta^2)` from the noisy analysis.
pub fn reference_window(k: usize, n: usize, p: f64, delta: f64) -> f64 {
    1024.0 * (k as f64).powi(4) * (n as f64).log2() / (p.powi(6) * delta * delta)
}

/// Reference learning rate `1 / (4 T k^4)`.
pub fn reference_eta(window: f64, k: usize) -> f64 {
    1.0 / (4.0 * window * (k as f64).powi(4))
}

/// Noise-free trajectory as CSV: `step,w_in,w_out,z`.
pub fn write_noise_free_csv<W: Write>(traj: &[SingleNeuronState<f64>], k: usize, out: &mut W) -> io::Result<()> {
    writeln!(out, "step,w_in,w_out,z")?;
    for s in traj {
        writeln!(out, "{},{:?},{:?},{:?}", s.step, s.w_in, s.w_out, s.z(k))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn one_step_from_quarter() {
        let t = iterate_noise_free_rational(4, (1, 16), 1, 1, None);
        assert_eq!(t[1].w_in, BigRational::from_ratio(19, 64));
        assert_eq!(t[1].w_out, BigRational::from_ratio(15, 64));
        let f = iterate_noise_free(4, 1.0 / 16.0, 1, 1);
        assert_eq!((f[1].w_in, f[1].w_out), (0.296875, 0.234375));
    }

    #[test]
    fn exact_and_float_agree_on_short_runs() {
        let exact = iterate_noise_free_rational(4, (1, 16), 2, 7, None);
        let float = iterate_noise_free(4, 1.0 / 16.0, 2, 7);
        for (e, f) in exact.iter().zip(&float) {
            assert!((e.w_in.to_f64_lossy() - f.w_in).abs() <= 1e-15 * f.w_in);
            assert!((e.w_out.to_f64_lossy() - f.w_out).abs() <= 1e-15 * f.w_out);
        }
    }

    #[test]
    fn doubling_bound_scales_inversely_with_eta() {
        assert!((doubling_time_bound(1.0 / 16.0, 4) - 16.0 / 3.0).abs() < 1e-12);
        assert!((doubling_time_bound(1.0 / 8.0, 4) - 8.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn wider_band_is_reached_no_later() {
        let traj = iterate_noise_free(4, 1.0 / 16.0, 2, 200);
        let tight = check_convergence(&traj, 4, 2, 140, 0.221_374, 3);
        let loose = check_convergence(&traj, 4, 2, 140, 1.0, 3);
        assert!(loose.converged_at.unwrap() <= tight.converged_at.unwrap());
    }

    #[test]
    fn psi_is_one_exactly_at_the_target() {
        assert_eq!(psi(&[0.5; 4], 0.5), 1.0);
        assert!(psi(&[0.5, 0.5, 0.5, 0.49], 0.5) > 1.0);
        assert!(psi(&[0.51, 0.5, 0.5, 0.5], 0.5) > 1.0);
    }

    #[test]
    fn full_marking_reduces_to_noise_free() {
        let noisy = iterate_noisy(4, Fraction::ONE, 1.0 / 16.0, 2, 100, 10, &mut ChaCha8Rng::seed_from_u64(1));
        let clean = iterate_noise_free(4, 1.0 / 16.0, 2, 100);
        for (n, c) in noisy.records.iter().zip(&clean) {
            assert!(n.w_in.iter().all(|w| (w - c.w_in).abs() <= 1e-12 * c.w_in));
            assert!((n.w_out - c.w_out).abs() <= 1e-12 * c.w_out);
        }
    }

    #[test]
    fn noisy_target_value() {
        let t = iterate_noisy(4, Fraction::from_f64(0.8).unwrap(), 1e-3, 1, 0, 1, &mut ChaCha8Rng::seed_from_u64(0));
        assert!((t.wbar - 1.0 / 3.4f64.sqrt()).abs() < 1e-15);
        assert!((t.wbar - 0.542_33).abs() < 1e-5);
    }

    #[test]
    fn reference_constants_are_astronomical() {
        let delta = crate::training::default_delta(0.51, 0.8);
        let t = reference_window(4, 16, 0.8, delta);
        assert!(t > 5e10 && t < 1e11, "{t}");
        assert!(reference_eta(t, 4) < 1e-13);
    }
}
