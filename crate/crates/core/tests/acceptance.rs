//! Acceptance suite. Prints one `[PASS]` or `[FAIL]` line per criterion and
//! exits non-zero if any criterion fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use num_rational::BigRational;
use oja_hierarchy::dynamics::{
    check_convergence, check_monotone, decay_rate_check, doubling_time_bound, iterate_noise_free,
    iterate_noise_free_rational, measure_doubling_times,
};
use oja_hierarchy::harness::{self, substream, Mode, RunConfig};
use oja_hierarchy::lower_bound::{
    check_infeasibility, derive_r_primes, empirical_counterexample, layer_floor_check, random_single_layer,
};
use oja_hierarchy::recognition::{build_static_recognizer, present, recognition_suite, RecognitionReport};
use oja_hierarchy::training::{
    check_weight_targets, generate_schedule, network_for, noisy_weight_target, sigma_noise_free, train, LearnParams,
    Presentation, SchedulePolicy, TrainOptions, TrainOutcome,
};
use oja_hierarchy::{ConceptHierarchy, Fraction, Network, NetworkState, RepMap, Scalar};
use rayon::prelude::*;

const SEEDS: [u64; 5] = [11, 22, 33, 44, 55];
const BUDGET: usize = 200;

fn f(x: f64) -> Fraction {
    Fraction::from_f64(x).unwrap()
}

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: impl Into<String>) -> Verdict {
    Verdict { passed, detail: detail.into() }
}

struct CleanRun {
    seed: u64,
    sigma: u64,
    outcome: TrainOutcome<f64>,
    spaced: Network,
    suite: RecognitionReport,
}

fn clean_setup() -> (ConceptHierarchy, LearnParams) {
    let h = ConceptHierarchy::build(4, 2, 64).unwrap();
    let p = LearnParams::noise_free(4, f(0.51), f(0.8)).unwrap();
    (h, p)
}

fn clean_run(seed: u64, sigma: u64) -> CleanRun {
    let (h, params) = clean_setup();
    let schedule = generate_schedule(&h, sigma, SchedulePolicy::Interleaved, true, &mut substream(seed, "schedule", 0));
    let run = |presentation| {
        let options = TrainOptions { presentation, snapshot_every: None, record_steps: false };
        train(&h, network_for::<f64>(&h, &params).unwrap(), &schedule, &params, &options, &mut substream(seed, "mark", 0))
            .unwrap()
    };
    let outcome = run(Presentation::Pipelined);
    let spaced = run(Presentation::Spaced).network;
    let suite = recognition_suite(
        &outcome.network,
        &outcome.repmap,
        &h,
        f(0.51),
        f(0.8),
        &mut substream(seed, "sampler", 0),
        BUDGET,
    )
    .unwrap();
    CleanRun { seed, sigma, outcome, spaced, suite }
}

fn criterion_1(runs: &[CleanRun], elapsed: Duration) -> Verdict {
    let (h, params) = clean_setup();
    let formula = sigma_noise_free(4, params.eta, 2, params.epsilon, params.b);
    let mut bad = Vec::new();
    for r in runs {
        let complete = h.internal_concepts().all(|c| r.outcome.repmap.rep(c).is_some());
        let families_hit = r.suite.family_counts().iter().all(|c| c.must_fire.1 + c.must_not_fire.1 > 0);
        if !(r.suite.passed() && complete && families_hit) {
            bad.push(format!("seed {} sigma {}: {} failures", r.seed, r.sigma, r.suite.failures().len()));
        }
    }
    let ok = bad.is_empty()
        && params.b == 3
        && (params.epsilon - 0.22137).abs() < 5e-6
        && formula == 140
        && h.internal_concepts().count() == 20
        && elapsed < Duration::from_secs(10);
    verdict(
        ok,
        format!(
            "noise-free learning k=4 lmax=2 n=64: b={} eps={:.5} sigma(formula)={} (also run at 141); {} runs over 5 seeds, \
             all families 100%: {}; {:.1?} for all runs{}",
            params.b,
            params.epsilon,
            formula,
            runs.len(),
            bad.is_empty(),
            elapsed,
            if bad.is_empty() { String::new() } else { format!("; {}", bad.join("; ")) }
        ),
    )
}

fn criterion_2(runs: &[CleanRun]) -> Verdict {
    let (h, params) = clean_setup();
    let lo = 1.0 / ((1.0 + params.epsilon) * 2.0);
    let mut worst = (f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut ok = (lo - 0.409375).abs() < 5e-6;
    for r in runs {
        let t = check_weight_targets(&r.outcome.network, &r.outcome.repmap, &h, &params, 0.0).unwrap();
        ok &= t.holds() && t.rows == 20 && t.out_high == Some(1.0 / 1024.0) && t.in_high == 0.5;
        worst = (worst.0.min(t.min_in), worst.1.max(t.max_in), worst.2.max(t.max_out));
    }
    verdict(
        ok,
        format!(
            "weight targets: in-children in [{lo:.6}, 0.5] observed [{:?}, {:?}]; others <= 1/1024 observed max {:e}",
            worst.0, worst.1, worst.2
        ),
    )
}

fn criterion_3() -> Verdict {
    let (_, params) = clean_setup();
    let (k, lmax) = (4, 2);
    let sigma = params.sigma(k, lmax);
    let horizon = 10 * sigma;
    let traj = iterate_noise_free::<f64>(k, params.eta, lmax, horizon);
    let mono = check_monotone(&traj, k, true);
    let doubling = measure_doubling_times(&traj, k);
    let bound = doubling_time_bound(params.eta, k).ceil() as u64;
    let max_rounds = doubling.iter().map(|d| d.rounds).max().unwrap_or(0);
    let decay = decay_rate_check(&traj, k, params.eta, lmax, params.b);
    let conv = check_convergence(&traj, k, lmax, sigma, params.epsilon, params.b);
    let conv_141 = check_convergence(&traj, k, lmax, 141, params.epsilon, params.b);

    let audit_steps = 2 * sigma;
    let audit = iterate_noise_free_rational(k, (1, 16), lmax, audit_steps, Some(512));
    let mono_audit = check_monotone(&audit, k, false);
    let conv_audit = check_convergence(&audit, k, lmax, sigma, params.epsilon, params.b);
    let exact = iterate_noise_free_rational(k, (1, 16), lmax, 6, None);
    let rel = |a: &BigRational, x: f64| ((a.to_f64_lossy() - x) / a.to_f64_lossy()).abs();
    let max_rel = traj
        .iter()
        .zip(&audit)
        .flat_map(|(t, a)| [rel(&a.w_in, t.w_in), rel(&a.w_out, t.w_out)])
        .chain(exact.iter().zip(&traj).flat_map(|(a, t)| [rel(&a.w_in, t.w_in), rel(&a.w_out, t.w_out)]))
        .fold(0.0f64, f64::max);
    let exact_matches_rounded = exact.iter().zip(&audit).all(|(e, a)| {
        let tol = BigRational::new(1.into(), num_bigint::BigInt::from(1) << 500u32);
        (e.w_in.clone() - a.w_in.clone()) < tol && (e.w_out.clone() - a.w_out.clone()) < tol
    });

    let ok = mono.is_clean()
        && mono_audit.is_clean()
        && max_rounds <= 6
        && bound == 6
        && decay.slow_steps.is_empty()
        && decay.factor == 15.0 / 16.0
        && decay.max_ratio <= decay.factor
        && decay.rounds_to_target.is_some_and(|r| (r as f64) <= decay.rounds_bound)
        && conv.holds()
        && conv_141.holds()
        && conv_audit.holds()
        && max_rel <= 1e-9
        && exact_matches_rounded;
    verdict(
        ok,
        format!(
            "oracle: monotone (float {} stalls at the fixed point, 2^-512 audit strict) {}/{}; doubling max {max_rounds} <= {bound}; \
             decay max ratio {:.4} <= 0.9375; bounds hold from step {:?} (sigma {sigma}, horizon {horizon}); audit rel diff {max_rel:.1e}",
            mono.stalls,
            mono.is_clean(),
            mono_audit.is_clean(),
            decay.max_ratio,
            conv.converged_at,
        ),
    )
}

/// For every internal concept, presenting its leaves fires `rep(d)` of
/// every internal descendant `d` at exactly `t + level(d)` and never at
/// another offset.
fn timing_deviations<S: Scalar>(net: &NetworkState<S>, repmap: &RepMap, h: &ConceptHierarchy) -> (usize, usize) {
    let mut checks = 0;
    let mut deviations = 0;
    for c in h.internal_concepts() {
        let (history, _) = present(net, h.leaf_indices(c).unwrap()).unwrap();
        for d in h.descendants(c).unwrap().into_iter().filter(|d| d.level > 0) {
            let rep = repmap.rep(d).unwrap();
            for offset in 0..history.fired.len() {
                let fired = history.fired_at(offset, rep);
                let expected = offset == d.level as usize;
                checks += 1;
                deviations += (fired != expected) as usize;
            }
        }
    }
    (checks, deviations)
}

fn criterion_4(runs: &[CleanRun]) -> Verdict {
    let (h, _) = clean_setup();
    let (net, map) = build_static_recognizer::<f64>(&h, f(0.51), f(0.8)).unwrap();
    let (sc, sd) = timing_deviations(&net, &map, &h);
    let (mut tc, mut td) = (0, 0);
    for r in runs {
        let (c, d) = timing_deviations(&r.outcome.network, &r.outcome.repmap, &h);
        tc += c;
        td += d;
    }
    let suite_dev: usize = runs.iter().map(|r| r.suite.timing_deviations()).sum();
    verdict(
        sd == 0 && td == 0 && suite_dev == 0,
        format!("timing: static {sd} deviations in {sc} checks; trained {td} in {tc}; suite deviations {suite_dev}"),
    )
}

struct NoisyRun {
    outcome: TrainOutcome<f64>,
    suite: RecognitionReport,
    in_band: bool,
    min_in: f64,
    max_in: f64,
}

fn noisy_run(seed: u64) -> NoisyRun {
    let h = ConceptHierarchy::build(4, 1, 16).unwrap();
    let p = f(0.8);
    let params = LearnParams::noisy(4, f(0.51), f(0.8), p, 1e-3, Some(0.05)).unwrap();
    let schedule =
        generate_schedule(&h, 50_000, SchedulePolicy::Interleaved, true, &mut substream(seed, "schedule", 0)).with_noise(p);
    let options = TrainOptions { presentation: Presentation::Pipelined, snapshot_every: None, record_steps: false };
    let outcome = train(&h, network_for::<f64>(&h, &params).unwrap(), &schedule, &params, &options, &mut substream(seed, "mark", 0))
        .unwrap();
    let t = check_weight_targets(&outcome.network, &outcome.repmap, &h, &params, 0.1).unwrap();
    let suite =
        recognition_suite(&outcome.network, &outcome.repmap, &h, f(0.51), f(0.8), &mut substream(seed, "sampler", 0), BUDGET)
            .unwrap();
    NoisyRun { outcome, suite, in_band: t.holds(), min_in: t.min_in, max_in: t.max_in }
}

fn criterion_5(runs: &[NoisyRun], elapsed: Duration) -> Verdict {
    let wbar = noisy_weight_target(4, 0.8);
    let params = LearnParams::noisy(4, f(0.51), f(0.8), f(0.8), 1e-3, Some(0.05)).unwrap();
    let good = runs.iter().filter(|r| r.in_band && r.suite.passed()).count();
    let lo = runs.iter().map(|r| r.min_in).fold(f64::INFINITY, f64::min);
    let hi = runs.iter().map(|r| r.max_in).fold(f64::NEG_INFINITY, f64::max);
    verdict(
        good >= 19 && (wbar - 0.5423).abs() < 1e-4 && elapsed < Duration::from_secs(120),
        format!(
            "noisy learning k=4 lmax=1 p=0.8 eta=1e-3 tau={:.4}: {good}/20 seeds in band [{:.4}, {:.4}] with suite passing; \
             in-weights observed [{lo:.6}, {hi:.6}]; {:.1?}",
            params.tau,
            0.9 * wbar,
            1.1 * wbar,
            elapsed
        ),
    )
}

fn criterion_6() -> (Verdict, Duration) {
    let start = Instant::now();
    let h = ConceptHierarchy::build(10, 2, 1000).unwrap();
    let params = derive_r_primes(f(0.51), f(0.8), 10).unwrap();
    let base = check_infeasibility(&params, 1.0).unwrap();
    let results: Vec<(bool, bool, usize, usize)> = (0..1000)
        .into_par_iter()
        .map(|t| {
            let (net, map) = random_single_layer(&h, &mut substream(606, "sampler", t)).unwrap();
            let found = empirical_counterexample(&net, &h, &map, &params).unwrap();
            let witnessed = found.iter().all(|s| s.witness.is_some());
            let valid = found.iter().all(|s| s.certificate.valid && s.certificate.cant_fire_bound >= s.certificate.must_fire_bound);
            let mf = found.iter().filter(|s| s.witness.as_ref().is_some_and(|w| w.clause.name() == "must-fire")).count();
            (witnessed, valid, mf, found.len())
        })
        .collect();
    let elapsed = start.elapsed();
    let witnessed = results.iter().filter(|r| r.0).count();
    let valid = results.iter().filter(|r| r.1).count();
    let mf: usize = results.iter().map(|r| r.2).sum();
    let total: usize = results.iter().map(|r| r.3).sum();
    let ok = params.r1_prime == Fraction::new(1, 2).unwrap()
        && params.r2_prime == Fraction::new(4, 5).unwrap()
        && base.valid
        && base.must_fire_bound == 0.64
        && base.cant_fire_bound == 0.75
        && witnessed == 1000
        && valid == 1000
        && elapsed < Duration::from_secs(30);
    (
        verdict(
            ok,
            format!(
                "lower bound k=10: r1'=1/2 r2'=4/5, 0.64 <= 0.75; witnesses in {witnessed}/1000 networks \
                 ({mf} must-fire, {} must-not-fire over {total} concepts); certificates valid {valid}/1000; {elapsed:.1?}",
                total - mf
            ),
        ),
        elapsed,
    )
}

fn criterion_7(clean: &[CleanRun], noisy: &[NoisyRun]) -> Verdict {
    let (h, _) = clean_setup();
    let mut violations = 0;
    let mut checks = 0;
    let mut floor_ok = true;
    let mut read_only = true;
    let mut injective = true;
    let mut split = 0.0f64;
    for r in clean {
        violations += r.outcome.invariants.violations.len();
        checks += r.outcome.invariants.checks;
        let fl = layer_floor_check(&r.outcome.repmap);
        floor_ok &= fl.holds() && fl.equal == fl.checked;
        read_only &= r.suite.weights_unchanged;
        injective &= r.outcome.repmap.is_injective();
        for l in 1..=2 {
            let (a, b) = (r.outcome.network.layer_weights(l).unwrap(), r.spaced.layer_weights(l).unwrap());
            split = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(split, f64::max);
        }
    }
    for r in noisy {
        violations += r.outcome.invariants.violations.len();
        checks += r.outcome.invariants.checks;
        let fl = layer_floor_check(&r.outcome.repmap);
        floor_ok &= fl.holds() && fl.equal == fl.checked;
        read_only &= r.suite.weights_unchanged;
        injective &= r.outcome.repmap.is_injective();
    }
    let (net, map) = build_static_recognizer::<f64>(&h, f(0.51), f(0.8)).unwrap();
    let s = recognition_suite(&net, &map, &h, f(0.51), f(0.8), &mut substream(7, "sampler", 0), BUDGET).unwrap();
    read_only &= s.weights_unchanged;
    verdict(
        violations == 0 && floor_ok && read_only && injective && split <= 1e-12,
        format!(
            "invariants: {violations} violations in {checks} trace checks; rep injective {injective}; layer floor equality {floor_ok}; \
             recognition read-only {read_only}; pipelined vs spaced max weight difference {split:e}"
        ),
    )
}

fn criterion_8() -> Verdict {
    let base = |mode, k, lmax, n| RunConfig::new(mode, k, lmax, n, 0.51, 0.8, 808);
    let mut clean = base(Mode::LearnClean, 4, 2, 64);
    clean.trials = 5;
    let mut clean_141 = clean.clone();
    clean_141.sigma = Some(141);
    let oracle = base(Mode::Oracle, 4, 2, 64);
    let recognize = base(Mode::Recognize, 4, 2, 64);
    let mut noisy = base(Mode::LearnNoisy, 4, 1, 16);
    noisy.p = Some(0.8);
    noisy.eta = Some(1e-3);
    noisy.delta = Some(0.05);
    noisy.sigma = Some(50_000);
    noisy.trials = 20;
    let mut lower = base(Mode::Lowerbound, 10, 2, 1000);
    lower.trials = 1000;

    let mut lines = Vec::new();
    let mut ok = true;
    for (name, cfg) in
        [("learn-clean", clean), ("learn-clean@141", clean_141), ("oracle", oracle), ("recognize", recognize), ("learn-noisy", noisy), ("lowerbound", lower)]
    {
        let dir = tempfile::tempdir().unwrap();
        let summary = harness::run(&cfg, dir.path()).unwrap();
        let report = harness::replay(&dir.path().join(harness::MANIFEST_FILE)).unwrap();
        ok &= summary.passed && report.identical();
        lines.push(format!("{name} {}/{}", if report.identical() { "identical" } else { "DIVERGED" }, report.files_compared));
    }
    verdict(ok, format!("replay from manifest: {}", lines.join(", ")))
}

fn main() -> ExitCode {
    let start = Instant::now();
    let (_, params) = clean_setup();
    let formula = params.sigma(4, 2);
    let clean: Vec<CleanRun> = SEEDS
        .par_iter()
        .flat_map_iter(|&s| [clean_run(s, formula), clean_run(s, 141)])
        .collect();
    let clean_elapsed = start.elapsed();

    let start = Instant::now();
    let noisy: Vec<NoisyRun> = (0..20u64).into_par_iter().map(|s| noisy_run(500 + s)).collect();
    let noisy_elapsed = start.elapsed();

    let (c6, _) = criterion_6();
    let results = [
        criterion_1(&clean, clean_elapsed),
        criterion_2(&clean),
        criterion_3(),
        criterion_4(&clean),
        criterion_5(&noisy, noisy_elapsed),
        c6,
        criterion_7(&clean, &noisy),
        criterion_8(),
    ];
    let mut failed = 0;
    for (i, v) in results.iter().enumerate() {
        println!("[{}] criterion {}: {}", if v.passed { "PASS" } else { "FAIL" }, i + 1, v.detail);
        failed += (!v.passed) as usize;
    }
    println!("acceptance: {} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
