//! The synchronous learning loop.

use std::collections::{BTreeSet, HashMap, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hierarchy::{ConceptHierarchy, ConceptId, HierarchyError};
use crate::network::{NetworkError, NetworkParams, NetworkState, NeuronId, WeightSnapshot};
use crate::scalar::Scalar;
use crate::trace::{Engagement, SimulationTrace, TraceStep};

use super::params::{LearnParams, ParamError};
use super::repmap::RepMap;
use super::schedule::{encode_showing, PresentationSchedule, ScheduleViolation, Showing};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid schedule: {0}")]
    Schedule(#[from] ScheduleViolation),
    #[error("invalid learning parameters: {0}")]
    Params(#[from] ParamError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),
    #[error("network does not fit the hierarchy: {0}")]
    Shape(String),
    #[error("internal: {0}")]
    Internal(String),
}

/// Spacing between consecutive showings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Presentation {
    /// One showing per time step.
    #[default]
    Pipelined,
    /// Showings `lmax + 1` steps apart, so wavefronts never overlap.
    Spaced,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOptions {
    pub presentation: Presentation,
    /// Full weight snapshot every this many showings (and at the end).
    pub snapshot_every: Option<u64>,
    /// Keep per-step records.
    pub record_steps: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self { presentation: Presentation::Pipelined, snapshot_every: None, record_steps: true }
    }
}

/// A breach of one of the structural properties learning must preserve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum InvariantViolation {
    RepNotInjective { time: u64 },
    UnboundFired { time: u64, neuron: NeuronId },
    UnboundWeightsMoved { neuron: NeuronId, source: u32, weight: f64 },
    UnsoundFiring { time: u64, neuron: NeuronId, concept: ConceptId, shown: Option<ConceptId> },
    BindingUnstable { time: u64, concept: ConceptId, rep: NeuronId, winner: NeuronId },
    BindToBoundNeuron { time: u64, concept: ConceptId, neuron: NeuronId, holder: ConceptId },
    WeightSplit { time: u64, neuron: NeuronId, source: u32, before: f64, after: f64, in_set: bool },
    WeightBounds { time: u64, neuron: NeuronId, value: f64 },
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct InvariantLog {
    pub violations: Vec<InvariantViolation>,
    /// Number of individual checks performed.
    pub checks: u64,
}

impl InvariantLog {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    fn record(&mut self, ok: bool, v: impl FnOnce() -> InvariantViolation) {
        self.checks += 1;
        if !ok {
            self.violations.push(v());
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<S> {
    pub network: NetworkState<S>,
    pub repmap: RepMap,
    pub trace: SimulationTrace,
    pub invariants: InvariantLog,
    /// Engagement count per bound neuron.
    pub engagements: HashMap<NeuronId, u64>,
}

/// Network matching a hierarchy and learning parameters: `lmax` layers of
/// width `n`, clean initial weights `1 / k^lmax`.
pub fn network_for<S: Scalar>(h: &ConceptHierarchy, params: &LearnParams) -> Result<NetworkState<S>, NetworkError> {
    NetworkState::new(
        NetworkParams {
            max_layer: h.lmax(),
            width: h.n(),
            tau: S::from_f64_lossy(params.tau),
            eta: S::from_f64_lossy(params.eta),
        },
        h.k(),
        h.lmax(),
    )
}

/// Winner-take-all engagement: when a level-`l` concept shown at `t_shown`
/// reaches layer `l` (at `current_t = t_shown + l`), the layer-`l` neuron
/// with the highest current potential is engaged; ties go to the lowest
/// index. `net` must be at time `current_t`.
pub fn engage_controller<S: Scalar>(
    net: &NetworkState<S>,
    shown_level: usize,
    t_shown: u64,
    current_t: u64,
) -> Option<NeuronId> {
    if shown_level == 0 || shown_level > net.max_layer() || current_t != t_shown + shown_level as u64 {
        return None;
    }
    if net.time() != current_t {
        return None;
    }
    let pots = net.potentials(shown_level).ok()?;
    let mut best = 0usize;
    for (i, p) in pots.iter().enumerate().skip(1) {
        if *p > pots[best] {
            best = i;
        }
    }
    Some(NeuronId::new(shown_level as u32, best as u32))
}

struct InFlight {
    concept: ConceptId,
    shown_at: u64,
}

/// Runs the learning loop over `schedule`.
///
/// Each showing drives the input layer for exactly one step. When its
/// wavefront reaches layer `level(c)`, the controller engages one neuron
/// there; the first engagement for a concept binds it. Structural
/// invariants are checked at every step and logged in the outcome.
pub fn train<S: Scalar, R: Rng + ?Sized>(
    h: &ConceptHierarchy,
    mut net: NetworkState<S>,
    schedule: &PresentationSchedule,
    params: &LearnParams,
    options: &TrainOptions,
    rng: &mut R,
) -> Result<TrainOutcome<S>, TrainError> {
    // an empty schedule is a no-op rather than a quota violation
    if !schedule.is_empty() {
        schedule.validate(h)?;
    }
    params.validate(h.k())?;
    params.check_fresh_silence()?;
    if net.width() != h.n() {
        return Err(TrainError::Shape(format!("width {} != universe size {}", net.width(), h.n())));
    }
    if net.max_layer() < h.lmax() {
        return Err(TrainError::Shape(format!("{} layers cannot host level {}", net.max_layer(), h.lmax())));
    }
    if *net.eta() != S::from_f64_lossy(params.eta) || *net.tau() != S::from_f64_lossy(params.tau) {
        return Err(TrainError::Shape("network eta/tau differ from the learning parameters".into()));
    }

    let lmax = h.lmax();
    let gap = match options.presentation {
        Presentation::Pipelined => 1,
        Presentation::Spaced => lmax as u64 + 1,
    };
    let total_steps = if schedule.is_empty() { 0 } else { (schedule.len() as u64 - 1) * gap + 1 + lmax as u64 };
    let noise_free = !params.is_noisy();
    let initial = S::inverse_power(h.k() as u64, lmax as u32);
    let target = S::from_f64_lossy(1.0 / (h.k() as f64).sqrt());
    let saturation = S::from_f64_lossy(1e-12);

    let mut repmap = RepMap::with_inputs(h);
    let mut log = InvariantLog::default();
    let mut trace = SimulationTrace::default();
    let mut engagements: HashMap<NeuronId, u64> = HashMap::new();
    let mut inflight: VecDeque<InFlight> = VecDeque::new();
    let mut shown_at: VecDeque<(u64, ConceptId)> = VecDeque::new();
    let zeros = vec![false; h.n()];
    let mut showings_done = 0u64;

    for s in 0..total_steps {
        let item: Option<&Showing> = (s % gap == 0).then(|| schedule.items.get((s / gap) as usize)).flatten();
        let input = match item {
            Some(showing) => encode_showing(h, showing, rng)?,
            None => zeros.clone(),
        };
        net.propagate(&input)?;
        let t = net.time();
        if let Some(showing) = item {
            inflight.push_back(InFlight { concept: showing.concept, shown_at: t });
            shown_at.push_back((t, showing.concept));
            showings_done += 1;
        }
        while shown_at.front().is_some_and(|&(ts, _)| ts + (net.max_layer() as u64) < t) {
            shown_at.pop_front();
        }

        // firing soundness and the unbound-neuron rule, before any new binding
        let mut fired = Vec::with_capacity(net.max_layer());
        for l in 1..=net.max_layer() {
            let idx: Vec<u32> =
                net.firing(l).iter().enumerate().filter(|(_, &f)| f).map(|(i, _)| i as u32).collect();
            let source = t.checked_sub(l as u64).and_then(|ts| shown_at.iter().find(|&&(x, _)| x == ts).map(|&(_, c)| c));
            for &v in &idx {
                let neuron = NeuronId::new(l as u32, v);
                match repmap.concept_of(neuron) {
                    None => log.record(false, || InvariantViolation::UnboundFired { time: t, neuron }),
                    Some(concept) => {
                        let sound = source.is_some_and(|a| h.is_ancestor_or_self(a, concept));
                        log.record(sound, || InvariantViolation::UnsoundFiring { time: t, neuron, concept, shown: source });
                    }
                }
            }
            fired.push(idx);
        }

        let mut engaged_now = Vec::new();
        let mut still = VecDeque::with_capacity(inflight.len());
        for f in inflight.drain(..) {
            let due = f.shown_at + f.concept.level as u64;
            if due == t && f.concept.level > 0 {
                engaged_now.push(f);
            } else if due > t {
                still.push_back(f);
            }
        }
        inflight = still;

        let mut step_engagements = Vec::new();
        for f in engaged_now {
            let c = f.concept;
            let level = c.level as usize;
            let winner = engage_controller(&net, level, f.shown_at, t)
                .ok_or_else(|| TrainError::Internal(format!("no wavefront for {c} at time {t}")))?;
            match repmap.rep(c) {
                Some(rep) => log.record(rep == winner, || InvariantViolation::BindingUnstable { time: t, concept: c, rep, winner }),
                None => match repmap.concept_of(winner) {
                    Some(holder) => {
                        log.record(false, || InvariantViolation::BindToBoundNeuron { time: t, concept: c, neuron: winner, holder })
                    }
                    None => {
                        repmap.bind(c, winner).map_err(|e| TrainError::Internal(e.to_string()))?;
                        log.record(repmap.is_injective(), || InvariantViolation::RepNotInjective { time: t });
                    }
                },
            }
            let before: Vec<S> = if noise_free { net.row(level, winner.index as usize)?.to_vec() } else { Vec::new() };
            let potential = net.potentials(level)?[winner.index as usize].to_f64_lossy();
            net.engage(winner)?;
            *engagements.entry(winner).or_default() += 1;

            let row = net.row(level, winner.index as usize)?;
            for w in row {
                log.record(*w >= S::zero() && *w <= S::one(), || InvariantViolation::WeightBounds {
                    time: t,
                    neuron: winner,
                    value: w.to_f64_lossy(),
                });
            }
            if noise_free && repmap.rep(c) == Some(winner) {
                let in_set: BTreeSet<u32> = h
                    .children(c)?
                    .into_iter()
                    .filter_map(|child| repmap.rep(child))
                    .map(|n| n.index)
                    .collect();
                check_weight_split(&mut log, t, winner, &before, row, &in_set, &target, &saturation);
            }
            step_engagements.push(Engagement { neuron: winner, concept: c, potential });
        }

        if options.record_steps {
            trace.steps.push(TraceStep {
                time: t,
                shown: item.map(|x| x.concept),
                input_count: input.iter().filter(|&&b| b).count() as u32,
                fired,
                engaged: step_engagements,
            });
        }
        if let Some(every) = options.snapshot_every {
            if item.is_some() && every > 0 && showings_done.is_multiple_of(every) {
                trace.snapshots.extend(WeightSnapshot::capture_all(&net));
            }
        }
    }
    if options.snapshot_every.is_some() {
        trace.snapshots.extend(WeightSnapshot::capture_all(&net));
    }

    // neurons that never learned still carry the clean initial weights
    for l in 1..=net.max_layer() {
        for v in 0..net.width() {
            let neuron = NeuronId::new(l as u32, v as u32);
            if engagements.contains_key(&neuron) {
                continue;
            }
            for (src, w) in net.row(l, v)?.iter().enumerate() {
                log.record(*w == initial, || InvariantViolation::UnboundWeightsMoved {
                    neuron,
                    source: src as u32,
                    weight: w.to_f64_lossy(),
                });
            }
        }
    }

    Ok(TrainOutcome { network: net, repmap, trace, invariants: log, engagements })
}

/// Noise-free weight split at a rep: weights from the children's reps rise
/// and stay below `1/sqrt(k)`; all others fall and stay positive. Within
/// `saturation` of the target a rising weight may stall or land on the
/// rounded target, where the float update no longer resolves the gap.
#[allow(clippy::too_many_arguments)]
fn check_weight_split<S: Scalar>(
    log: &mut InvariantLog,
    time: u64,
    neuron: NeuronId,
    before: &[S],
    after: &[S],
    in_set: &BTreeSet<u32>,
    target: &S,
    saturation: &S,
) {
    for (i, (b, a)) in before.iter().zip(after).enumerate() {
        let member = in_set.contains(&(i as u32));
        let ok = if member {
            let near = |w: &S| target.clone() - w.clone() <= *saturation && w.clone() - target.clone() <= *saturation;
            let rising = a > b || (a == b && near(b));
            rising && (a < target || near(a))
        } else {
            a < b && *a > S::zero()
        };
        log.record(ok, || InvariantViolation::WeightSplit {
            time,
            neuron,
            source: i as u32,
            before: b.to_f64_lossy(),
            after: a.to_f64_lossy(),
            in_set: member,
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ratio::Fraction;
    use crate::training::schedule::{generate_schedule, SchedulePolicy};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> (ConceptHierarchy, LearnParams) {
        let h = ConceptHierarchy::build(4, 1, 16).unwrap();
        let p = LearnParams::noise_free(4, Fraction::from_f64(0.51).unwrap(), Fraction::from_f64(0.8).unwrap()).unwrap();
        (h, p)
    }

    #[test]
    fn fresh_network_first_winner_is_neuron_zero() {
        let (h, p) = small();
        let mut net: NetworkState<f64> = network_for(&h, &p).unwrap();
        let x = encode_showing(&h, &Showing::clean(ConceptId::new(1, 2)), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        net.propagate(&x).unwrap();
        net.propagate(&[false; 16]).unwrap();
        let pots = net.potentials(1).unwrap();
        // brute force: every potential equals k / k^lmax
        assert!(pots.iter().all(|&v| v == 4.0 / 4.0f64.powi(1)));
        assert_eq!(engage_controller(&net, 1, 1, 2), Some(NeuronId::new(1, 0)));
        assert_eq!(engage_controller(&net, 1, 1, 3), None);
        assert_eq!(engage_controller(&net, 0, 2, 2), None);
    }

    #[test]
    fn empty_schedule_leaves_network_unchanged() {
        let (h, p) = small();
        let net: NetworkState<f64> = network_for(&h, &p).unwrap();
        let sched = PresentationSchedule::new(Vec::new(), 1);
        let out = train(&h, net.clone(), &sched, &p, &TrainOptions::default(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(out.network, net);
        assert!(out.trace.is_empty());
        assert_eq!(out.repmap.len(), h.level_size(0));
    }

    #[test]
    fn new_concepts_take_unbound_neurons_and_reshowing_reuses_rep() {
        let (h, p) = small();
        let net: NetworkState<f64> = network_for(&h, &p).unwrap();
        let sigma = p.sigma(4, 1);
        let sched = generate_schedule(&h, sigma, SchedulePolicy::Sequential, false, &mut ChaCha8Rng::seed_from_u64(0));
        let out = train(&h, net, &sched, &p, &TrainOptions::default(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(out.invariants.is_clean(), "{:?}", &out.invariants.violations[..3.min(out.invariants.violations.len())]);
        assert!(out.repmap.is_complete(&h));
        let reps: BTreeSet<NeuronId> = h.level(1).map(|c| out.repmap.rep(c).unwrap()).collect();
        assert_eq!(reps.len(), 4);
        // sequential: concept i binds after concepts 0..i hold neurons 0..i
        for c in h.level(1) {
            assert_eq!(out.repmap.rep(c), Some(NeuronId::new(1, c.index)));
            assert_eq!(out.engagements[&NeuronId::new(1, c.index)], sigma);
        }
    }

    #[test]
    fn mismatched_network_is_rejected() {
        let (h, p) = small();
        let other = ConceptHierarchy::build(4, 1, 20).unwrap();
        let net: NetworkState<f64> = network_for(&other, &p).unwrap();
        let sched = generate_schedule(&h, 1, SchedulePolicy::Sequential, true, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(
            train(&h, net, &sched, &p, &TrainOptions::default(), &mut ChaCha8Rng::seed_from_u64(0)),
            Err(TrainError::Shape(_))
        ));
    }
}
