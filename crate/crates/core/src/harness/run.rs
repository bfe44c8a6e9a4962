//! Run modes and artifact layout.
//!
//! Every run directory holds `manifest.json` plus the artifacts of its mode.
//! Artifacts are rendered in memory, written once, and listed in the
//! manifest with their sizes and FNV-1a digests. Per-step traces, weights
//! and snapshots come from trial 0; reports cover every trial.

use std::fs;
use std::io;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::dynamics::{
    check_convergence, check_monotone, decay_rate_check, iterate_noise_free, iterate_noise_free_rational, iterate_noisy,
    measure_doubling_times, phi_window_stability, psi, write_noise_free_csv,
};
use crate::hierarchy::{ConceptHierarchy, HierarchyError};
use crate::lower_bound::{check_infeasibility, empirical_counterexample, layer_floor_check, random_single_layer, Clause, LowerBoundError};
use crate::network::{NetworkError, NetworkState, NeuronId, WeightSnapshot};
use crate::ratio::Fraction;
use crate::recognition::{build_static_recognizer, recognition_suite, RecognitionError, RecognitionReport};
use crate::scalar::Scalar;
use crate::training::{
    check_weight_targets, generate_schedule, network_for, noisy_weight_target, train, LearnParams, TrainError,
    TrainOptions, TrainOutcome,
};

use super::config::{ConfigError, Mode, RunConfig};
use super::seed::{fnv1a, substream};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

/// Relative half-width of the accepted in-set weight band after noisy learning.
const NOISY_BAND: f64 = 0.1;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid configuration: {0}")]
    Config(#[from] ConfigError),
    #[error("i/o failure: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Recognition(#[from] RecognitionError),
    #[error(transparent)]
    LowerBound(#[from] LowerBoundError),
    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub bytes: u64,
    pub fnv1a: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub crate_version: String,
    pub config: RunConfig,
    /// Artifacts in comparison order.
    pub files: Vec<FileEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunSummary {
    pub mode: Mode,
    pub passed: bool,
    pub trials: usize,
    pub trials_passed: usize,
    pub files: Vec<String>,
    pub report: serde_json::Value,
}

#[derive(Default)]
struct Artifacts {
    files: Vec<(String, Vec<u8>)>,
}

impl Artifacts {
    fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }

    fn add_with(&mut self, name: &str, f: impl FnOnce(&mut Vec<u8>) -> io::Result<()>) -> io::Result<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.add(name, buf);
        Ok(())
    }

    fn write(self, config: &RunConfig, dir: &Path) -> io::Result<Vec<String>> {
        fs::create_dir_all(dir)?;
        let mut entries = Vec::new();
        for (name, bytes) in &self.files {
            fs::write(dir.join(name), bytes)?;
            entries.push(FileEntry { name: name.clone(), bytes: bytes.len() as u64, fnv1a: format!("{:016x}", fnv1a(bytes)) });
        }
        let manifest = Manifest {
            format_version: MANIFEST_VERSION,
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
            files: entries,
        };
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        fs::write(dir.join(MANIFEST_FILE), text)?;
        Ok(self.files.into_iter().map(|(n, _)| n).chain([MANIFEST_FILE.to_string()]).collect())
    }
}

fn json_text(value: &serde_json::Value) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s.into_bytes()
}

fn weights_files<S: Scalar>(art: &mut Artifacts, net: &NetworkState<S>) -> io::Result<()> {
    let snaps = WeightSnapshot::capture_all(net);
    art.add_with("weights_final.bin", |b| snaps.iter().try_for_each(|s| s.write_binary(b)))?;
    art.add_with("weights_final.csv", |b| snaps.iter().try_for_each(|s| s.write_csv(b)))
}

/// Validates `config` and runs its mode, writing artifacts into `out_dir`.
pub fn run(config: &RunConfig, out_dir: &Path) -> Result<RunSummary, RunError> {
    config.validate()?;
    let mut art = Artifacts::default();
    let (passed, trials_passed, report) = match config.mode {
        Mode::LearnClean | Mode::LearnNoisy => run_learn(config, &mut art)?,
        Mode::Recognize => run_recognize(config, &mut art)?,
        Mode::Oracle => run_oracle(config, &mut art)?,
        Mode::Lowerbound => run_lowerbound(config, &mut art)?,
    };
    let files = art.write(config, out_dir)?;
    Ok(RunSummary { mode: config.mode, passed, trials: config.trials, trials_passed, files, report })
}

struct LearnTrial {
    showings: usize,
    steps: usize,
    outcome: TrainOutcome<f64>,
    recognition: RecognitionReport,
    targets: crate::training::WeightTargetReport,
    floor: crate::lower_bound::LayerFloorReport,
}

impl LearnTrial {
    fn passed(&self) -> bool {
        self.outcome.invariants.is_clean()
            && self.recognition.passed()
            && self.targets.holds()
            && self.floor.holds()
            && self.floor.equal == self.floor.checked
    }
}

fn learn_trial(
    config: &RunConfig,
    h: &ConceptHierarchy,
    params: &LearnParams,
    sigma: u64,
    trial: usize,
) -> Result<LearnTrial, RunError> {
    let (r1, r2) = config.ratios()?;
    let mut schedule = generate_schedule(h, sigma, config.policy, config.level0_quota, &mut substream(config.seed, "schedule", trial));
    if let Some(p) = params.mark_probability() {
        schedule = schedule.with_noise(p);
    }
    let keep = trial == 0;
    let options = TrainOptions {
        presentation: config.presentation,
        snapshot_every: keep.then(|| config.snapshot_every.unwrap_or((schedule.len() as u64 / 10).max(1))),
        record_steps: keep,
    };
    let net = network_for::<f64>(h, params)?;
    let outcome = train(h, net, &schedule, params, &options, &mut substream(config.seed, "mark", trial))?;
    let recognition = recognition_suite(
        &outcome.network,
        &outcome.repmap,
        h,
        r1,
        r2,
        &mut substream(config.seed, "sampler", trial),
        config.budget,
    )?;
    let targets = check_weight_targets(&outcome.network, &outcome.repmap, h, params, NOISY_BAND)?;
    let floor = layer_floor_check(&outcome.repmap);
    let steps = outcome.network.time() as usize;
    Ok(LearnTrial { showings: schedule.len(), steps, outcome, recognition, targets, floor })
}

fn run_learn(config: &RunConfig, art: &mut Artifacts) -> Result<(bool, usize, serde_json::Value), RunError> {
    let h = config.hierarchy()?;
    let params = config.learn_params()?;
    let sigma = config.effective_sigma(&params);
    let trials: Vec<LearnTrial> =
        (0..config.trials).into_par_iter().map(|t| learn_trial(config, &h, &params, sigma, t)).collect::<Result<_, _>>()?;

    let first = &trials[0];
    art.add_with("trace.csv", |b| first.outcome.trace.write_csv(b))?;
    weights_files(art, &first.outcome.network)?;
    let mut tracked: Vec<NeuronId> = first.outcome.repmap.iter().filter(|(c, _)| c.level > 0).map(|(_, n)| n).collect();
    tracked.sort();
    art.add_with("snapshots.csv", |b| first.outcome.trace.write_snapshot_csv(&tracked, b))?;
    if let Some(p) = params.mark_probability() {
        art.add_with("psi_phi.csv", |b| write_psi_phi(&h, &first.outcome, noisy_weight_target(h.k(), p.to_f64()), b))?;
    }
    art.add_with("recognition.csv", |b| first.recognition.write_csv(b))?;

    let mut csv = String::from(
        "trial,showings,steps,invariant_checks,invariant_violations,recognition_passed,must_fire_passed,must_fire_total,\
         must_not_fire_passed,must_not_fire_total,timing_deviations,min_in,max_in,max_out,weights_in_band,layer_floor_equal,passed\n",
    );
    for (t, r) in trials.iter().enumerate() {
        let fams = r.recognition.family_counts();
        let mf = fams.iter().fold((0, 0), |a, f| (a.0 + f.must_fire.0, a.1 + f.must_fire.1));
        let mnf = fams.iter().fold((0, 0), |a, f| (a.0 + f.must_not_fire.0, a.1 + f.must_not_fire.1));
        csv.push_str(&format!(
            "{t},{},{},{},{},{},{},{},{},{},{},{:?},{:?},{:?},{},{},{}\n",
            r.showings,
            r.steps,
            r.outcome.invariants.checks,
            r.outcome.invariants.violations.len(),
            r.recognition.passed(),
            mf.0,
            mf.1,
            mnf.0,
            mnf.1,
            r.recognition.timing_deviations(),
            r.targets.min_in,
            r.targets.max_in,
            r.targets.max_out,
            r.targets.holds(),
            r.floor.equal == r.floor.checked,
            r.passed()
        ));
    }
    art.add("report.csv", csv.into_bytes());

    let trials_passed = trials.iter().filter(|t| t.passed()).count();
    let passed = match config.mode {
        Mode::LearnNoisy => trials_passed * 20 >= config.trials * 19,
        _ => trials_passed == config.trials,
    };
    let report = json!({
        "mode": config.mode,
        "params": params,
        "sigma": sigma,
        "trials": config.trials,
        "trials_passed": trials_passed,
        "passed": passed,
        "first_trial": {
            "recognition": serde_json::from_str::<serde_json::Value>(&first.recognition.summary_text()).expect("valid json"),
            "weight_targets": {
                "in_low": first.targets.in_low,
                "in_high": first.targets.in_high,
                "out_high": first.targets.out_high,
                "rows": first.targets.rows,
                "min_in": first.targets.min_in,
                "max_in": first.targets.max_in,
                "max_out": first.targets.max_out,
                "misses": first.targets.in_misses.len() + first.targets.out_misses.len(),
            },
            "invariant_violations": first.outcome.invariants.violations.iter().take(20).collect::<Vec<_>>(),
            "layer_floor": first.floor,
        },
    });
    art.add("report.txt", json_text(&report));
    Ok((passed, trials_passed, report))
}

/// `time,layer,neuron,psi,phi` for every bound rep in every snapshot.
fn write_psi_phi(h: &ConceptHierarchy, outcome: &TrainOutcome<f64>, wbar: f64, out: &mut Vec<u8>) -> io::Result<()> {
    use std::io::Write;
    writeln!(out, "time,layer,neuron,psi,phi")?;
    let rows: Vec<(NeuronId, Vec<u32>)> = h
        .internal_concepts()
        .filter_map(|c| {
            let rep = outcome.repmap.rep(c)?;
            let kids = h.children(c).ok()?.into_iter().filter_map(|b| outcome.repmap.rep(b)).map(|n| n.index).collect();
            Some((rep, kids))
        })
        .collect();
    for snap in &outcome.trace.snapshots {
        let n = snap.width as usize;
        for (rep, kids) in rows.iter().filter(|(r, _)| r.layer == snap.layer) {
            let row = &snap.weights[rep.index as usize * n..(rep.index as usize + 1) * n];
            let w: Vec<f64> = kids.iter().map(|&i| row[i as usize]).collect();
            writeln!(out, "{},{},{},{:?},{:?}", snap.time, snap.layer, rep.index, psi(&w, wbar), w.iter().sum::<f64>())?;
        }
    }
    Ok(())
}

fn run_recognize(config: &RunConfig, art: &mut Artifacts) -> Result<(bool, usize, serde_json::Value), RunError> {
    let h = config.hierarchy()?;
    let (r1, r2) = config.ratios()?;
    let (net, repmap) = build_static_recognizer::<f64>(&h, r1, r2)?;
    let report = recognition_suite(&net, &repmap, &h, r1, r2, &mut substream(config.seed, "sampler", 0), config.budget)?;
    weights_files(art, &net)?;
    art.add_with("report.csv", |b| report.write_csv(b))?;
    let mut text = report.summary_text();
    text.push('\n');
    art.add("report.txt", text.into_bytes());
    let passed = report.passed();
    let summary = serde_json::from_str(&report.summary_text()).expect("valid json");
    Ok((passed, passed as usize, summary))
}

fn run_oracle(config: &RunConfig, art: &mut Artifacts) -> Result<(bool, usize, serde_json::Value), RunError> {
    let params = config.learn_params()?;
    let (k, lmax) = (config.k, config.lmax);
    let sigma = config.effective_sigma(&params);
    let steps = config.steps.unwrap_or(2 * sigma);
    let eta_ratio = if config.eta.is_some() {
        let f = Fraction::from_f64(params.eta).map_err(|_| ConfigError::Ratio { name: "eta", value: params.eta })?;
        (f.numer(), f.denom())
    } else {
        (1, 4 * k as i64)
    };
    let traj = iterate_noise_free::<f64>(k, params.eta, lmax, steps);
    let audit = iterate_noise_free_rational(k, eta_ratio, lmax, steps, Some(512));
    let mono = check_monotone(&traj, k, true);
    let mono_audit = check_monotone(&audit, k, false);
    let conv = check_convergence(&traj, k, lmax, sigma, params.epsilon, params.b);
    let doubling = measure_doubling_times(&traj, k);
    let doubling_bound = (4.0 / (3.0 * params.eta * k as f64)).ceil() as u64;
    let max_doubling = doubling.iter().map(|d| d.rounds).max().unwrap_or(0);
    let decay = decay_rate_check(&traj, k, params.eta, lmax, params.b);
    let audit_rel = traj
        .iter()
        .zip(&audit)
        .flat_map(|(f, a)| [(f.w_in, a.w_in.to_f64_lossy()), (f.w_out, a.w_out.to_f64_lossy())])
        .map(|(f, a)| if a == 0.0 { (f - a).abs() } else { ((f - a) / a).abs() })
        .fold(0.0f64, f64::max);
    let decay_ok = decay.slow_steps.is_empty()
        && decay.rounds_to_target.is_some_and(|r| r as f64 <= decay.rounds_bound.ceil())
        && !decay.reached_zero;
    let mut checks = vec![
        ("monotone_float", mono.is_clean()),
        ("monotone_exact", mono_audit.is_clean()),
        ("doubling", max_doubling <= doubling_bound),
        ("decay", decay_ok),
        ("convergence", conv.holds()),
        ("audit_agreement", audit_rel <= 1e-9),
    ];
    art.add_with("trace.csv", |b| write_noise_free_csv(&traj, k, b))?;

    let mut noisy = serde_json::Value::Null;
    if let Some(p) = config.p {
        let p = Fraction::from_f64(p).map_err(|_| ConfigError::Ratio { name: "p", value: p })?;
        let delta = config.delta.unwrap_or_else(|| crate::training::default_delta(config.r1, config.r2));
        let window = (steps / 50).max(1);
        let t = iterate_noisy(k, p, params.eta, lmax, steps, window, &mut substream(config.seed, "mark", 0));
        let stability = phi_window_stability(&t, window, (100.0 / delta).ceil());
        art.add_with("trajectory_noisy.csv", |b| t.write_csv(b))?;
        noisy = json!({ "wbar": t.wbar, "final_psi": t.last().psi, "final_phi": t.last().phi, "windows": stability });
    }

    let mut csv = String::from("check,passed\n");
    for (name, ok) in &checks {
        csv.push_str(&format!("{name},{ok}\n"));
    }
    art.add("report.csv", csv.into_bytes());
    let passed = checks.iter().all(|c| c.1);
    checks.clear();
    let report = json!({
        "params": params,
        "sigma": sigma,
        "steps": steps,
        "monotone_float": mono,
        "monotone_exact": mono_audit,
        "convergence": conv,
        "doubling": { "bound": doubling_bound, "max_rounds": max_doubling, "segments": doubling },
        "decay": decay,
        "audit_max_relative_difference": audit_rel,
        "noisy": noisy,
        "passed": passed,
    });
    art.add("report.txt", json_text(&report));
    Ok((passed, passed as usize, report))
}

fn run_lowerbound(config: &RunConfig, art: &mut Artifacts) -> Result<(bool, usize, serde_json::Value), RunError> {
    let h = config.hierarchy()?;
    let params = config.ratio_params()?;
    let results: Vec<Vec<crate::lower_bound::ConceptSearch>> = (0..config.trials)
        .into_par_iter()
        .map(|t| {
            let (net, repmap) = random_single_layer(&h, &mut substream(config.seed, "sampler", t))?;
            empirical_counterexample(&net, &h, &repmap, &params)
        })
        .collect::<Result<_, LowerBoundError>>()?;

    let mut csv = String::from("trial,concepts,witnesses,must_fire_witnesses,must_not_fire_witnesses,certificates_valid,passed\n");
    let mut trials_passed = 0;
    for (t, found) in results.iter().enumerate() {
        let witnesses = found.iter().filter(|s| s.witness.is_some()).count();
        let mf = found.iter().filter(|s| s.witness.as_ref().is_some_and(|w| w.clause == Clause::MustFire)).count();
        let valid = found.iter().all(|s| s.certificate.valid);
        let ok = witnesses == found.len() && valid;
        trials_passed += ok as usize;
        csv.push_str(&format!("{t},{},{witnesses},{mf},{},{valid},{ok}\n", found.len(), witnesses - mf));
    }
    art.add("report.csv", csv.into_bytes());

    let mut certs = check_infeasibility(&params, 1.0)?.to_text();
    for s in &results[0] {
        certs.push('\n');
        certs.push_str(&s.certificate.to_text());
    }
    art.add("certificate.txt", certs.into_bytes());

    let passed = trials_passed == config.trials;
    let report = json!({
        "params": params,
        "quadratic_lhs": params.quadratic_lhs().to_string(),
        "quadratic_rhs": params.quadratic_rhs().to_string(),
        "trials": config.trials,
        "trials_passed": trials_passed,
        "passed": passed,
    });
    art.add("report.txt", json_text(&report));
    Ok((passed, trials_passed, report))
}
