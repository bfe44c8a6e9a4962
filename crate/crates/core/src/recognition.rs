//! (r1, r2)-recognition: evaluation of any network against a hierarchy, and
//! the static recognizer that embeds the hierarchy digraph directly.
//!
//! A presentation drives the input layer with `B` for one step at time `t`
//! and then lets the wavefront run. `rep(c)` on layer `L` must fire at
//! exactly `t + L` when `c` is `r2`-supported by `B`, and must stay silent
//! at that time when `c` is not `r1`-supported. Between the two bands nothing is
//! required. Engaged flags stay off throughout, so weights never change.

use std::io::{self, Write};

use num_rational::Ratio;
use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::hierarchy::{ConceptHierarchy, ConceptId, HierarchyError};
use crate::network::{NetworkError, NetworkParams, NetworkState, NeuronId};
use crate::ratio::Fraction;
use crate::scalar::Scalar;
use crate::training::RepMap;

#[derive(Debug, Error)]
pub enum RecognitionError {
    #[error("concept {0} has no representing neuron")]
    Unbound(ConceptId),
    #[error("layer width {width} cannot host the {needed} concepts of level {level}")]
    TooNarrow { level: usize, needed: usize, width: usize },
    #[error("ratios must satisfy 0 < r1 < r2 <= 1, got r1={r1}, r2={r2}")]
    Ratios { r1: f64, r2: f64 },
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),
}

/// What recognition demands of `rep(c)` for a given input set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Requirement {
    MustFire,
    MustNotFire,
    Unconstrained,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestFamily {
    Leaves,
    MinimalR2,
    MaximalNonR1,
    Random,
}

impl TestFamily {
    pub const ALL: [TestFamily; 4] = [Self::Leaves, Self::MinimalR2, Self::MaximalNonR1, Self::Random];

    pub fn name(self) -> &'static str {
        match self {
            Self::Leaves => "leaves",
            Self::MinimalR2 => "minimal-r2",
            Self::MaximalNonR1 => "maximal-non-r1",
            Self::Random => "random",
        }
    }
}

/// Outcome for one concept on one input set.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConceptVerdict {
    pub concept: ConceptId,
    pub rep: NeuronId,
    pub requirement: Requirement,
    /// Whether `rep(c)` fired at exactly `t + layer(rep(c))`.
    pub fired_on_time: bool,
    /// Other offsets from `t` at which `rep(c)` fired.
    pub off_time: Vec<u32>,
}

impl ConceptVerdict {
    pub fn passed(&self) -> bool {
        match self.requirement {
            Requirement::MustFire => self.fired_on_time,
            Requirement::MustNotFire => !self.fired_on_time,
            Requirement::Unconstrained => true,
        }
    }
}

/// Per-offset firing of every layer after presenting one input set.
#[derive(Clone, Debug, PartialEq)]
pub struct FiringHistory {
    /// `fired[d][l][i]`: neuron `i` of layer `l` fired at `t + d`.
    pub fired: Vec<Vec<Vec<bool>>>,
}

impl FiringHistory {
    pub fn fired_at(&self, offset: usize, neuron: NeuronId) -> bool {
        self.fired
            .get(offset)
            .and_then(|layers| layers.get(neuron.layer as usize))
            .and_then(|row| row.get(neuron.index as usize))
            .copied()
            .unwrap_or(false)
    }
}

/// Presents `b` on a quiesced clone of `net` and records `max_layer + 2`
/// steps of firing. Returns the clone as well, so callers can confirm the
/// weights are untouched.
pub fn present<S: Scalar>(net: &NetworkState<S>, b: &[u32]) -> Result<(FiringHistory, NetworkState<S>), NetworkError> {
    let mut sim = net.clone();
    sim.quiesce();
    let n = sim.width();
    let mut input = vec![false; n];
    for &i in b {
        *input.get_mut(i as usize).ok_or(NetworkError::NoSuchNeuron { layer: 0, index: i as usize })? = true;
    }
    let zeros = vec![false; n];
    let mut fired = Vec::with_capacity(sim.max_layer() + 2);
    for d in 0..sim.max_layer() + 2 {
        sim.propagate(if d == 0 { &input } else { &zeros })?;
        fired.push((0..=sim.max_layer()).map(|l| sim.firing(l).to_vec()).collect());
    }
    Ok((FiringHistory { fired }, sim))
}

fn classify(h: &ConceptHierarchy, c: ConceptId, b: &[u32], r1: Fraction, r2: Fraction) -> Result<Requirement, HierarchyError> {
    Ok(if h.is_supported(c, b, r2)? {
        Requirement::MustFire
    } else if !h.is_supported(c, b, r1)? {
        Requirement::MustNotFire
    } else {
        Requirement::Unconstrained
    })
}

fn verdict_from(history: &FiringHistory, c: ConceptId, rep: NeuronId, requirement: Requirement) -> ConceptVerdict {
    let layer = rep.layer as usize;
    let off_time =
        (0..history.fired.len()).filter(|&d| d != layer && history.fired_at(d, rep)).map(|d| d as u32).collect();
    ConceptVerdict { concept: c, rep, requirement, fired_on_time: history.fired_at(layer, rep), off_time }
}

/// Presents `b` and judges concept `c` alone.
pub fn evaluate_concept<S: Scalar>(
    net: &NetworkState<S>,
    repmap: &RepMap,
    h: &ConceptHierarchy,
    c: ConceptId,
    b: &[u32],
    r1: Fraction,
    r2: Fraction,
) -> Result<ConceptVerdict, RecognitionError> {
    let rep = repmap.rep(c).ok_or(RecognitionError::Unbound(c))?;
    let requirement = classify(h, c, b, r1, r2)?;
    let (history, _) = present(net, b)?;
    Ok(verdict_from(&history, c, rep, requirement))
}

/// Static recognizer: level-`l` concept `i` is neuron `i` of layer `l`,
/// edge weights are 1 exactly along child links and 0 elsewhere, and every
/// non-input threshold is `(r1 + r2) k / 2`.
pub fn build_static_recognizer<S: Scalar>(
    h: &ConceptHierarchy,
    r1: Fraction,
    r2: Fraction,
) -> Result<(NetworkState<S>, RepMap), RecognitionError> {
    build_static_recognizer_with_width(h, r1, r2, h.n())
}

pub fn build_static_recognizer_with_width<S: Scalar>(
    h: &ConceptHierarchy,
    r1: Fraction,
    r2: Fraction,
    width: usize,
) -> Result<(NetworkState<S>, RepMap), RecognitionError> {
    if r1 >= r2 {
        return Err(RecognitionError::Ratios { r1: r1.to_f64(), r2: r2.to_f64() });
    }
    for level in 0..=h.lmax() {
        if h.level_size(level) > width {
            return Err(RecognitionError::TooNarrow { level, needed: h.level_size(level), width });
        }
    }
    let tau = static_threshold(h.k(), r1, r2);
    let params = NetworkParams {
        max_layer: h.lmax(),
        width,
        tau: S::from_ratio(*tau.numer(), *tau.denom()),
        eta: S::from_ratio(1, 4 * h.k() as i64),
    };
    let mut net = NetworkState::with_uniform_weights(params, S::zero())?;
    let repmap = canonical_repmap(h);
    for c in h.internal_concepts() {
        let row = net.row_mut(c.level as usize, c.index as usize)?;
        for child in h.children(c)? {
            row[child.index as usize] = S::one();
        }
    }
    Ok((net, repmap))
}

/// `(r1 + r2) k / 2`, exact.
pub fn static_threshold(k: usize, r1: Fraction, r2: Fraction) -> Ratio<i64> {
    (r1.as_ratio() + r2.as_ratio()) * Ratio::from_integer(k as i64) / Ratio::from_integer(2)
}

/// Level-`l` concept `i` represented by neuron `i` of layer `l`.
pub fn canonical_repmap(h: &ConceptHierarchy) -> RepMap {
    let mut map = RepMap::new();
    for c in h.concepts() {
        map.bind(c, NeuronId::new(c.level, c.index)).expect("canonical placement is injective");
    }
    map
}

/// `B` made of the leaves under `count(level)` children per node, chosen as
/// the lowest-indexed children, recursively down to level 0.
fn partial_leaves(h: &ConceptHierarchy, c: ConceptId, count: usize, out: &mut Vec<u32>) {
    if c.level == 0 {
        out.push(c.index);
        return;
    }
    for child in h.children(c).expect("concept in hierarchy").into_iter().take(count) {
        partial_leaves(h, child, count, out);
    }
}

/// Smallest `B` with `c` supported at `r2`: `ceil(r2 k)` children at every level.
pub fn minimal_supporting(h: &ConceptHierarchy, c: ConceptId, r2: Fraction) -> Vec<u32> {
    let mut out = Vec::new();
    partial_leaves(h, c, r2.ceil_mul(h.k()).min(h.k()), &mut out);
    out.sort_unstable();
    out
}

/// Largest `B` under `c` that leaves `c` unsupported at `r1`: the most
/// children that still fall short of `r1 k` are included fully, and every
/// other child gets the same treatment recursively. `None` when no such set
/// exists (`r1 = 0`).
pub fn maximal_unsupported(h: &ConceptHierarchy, c: ConceptId, r1: Fraction) -> Option<Vec<u32>> {
    let k = h.k();
    let below = (0..=k).rev().find(|&m| !r1.count_reaches(m, k))?;
    let mut out = Vec::new();
    fill_unsupported(h, c, below, &mut out);
    out.sort_unstable();
    Some(out)
}

fn fill_unsupported(h: &ConceptHierarchy, c: ConceptId, below: usize, out: &mut Vec<u32>) {
    if c.level == 0 {
        return;
    }
    let children = h.children(c).expect("concept in hierarchy");
    for (i, child) in children.into_iter().enumerate() {
        if i < below {
            out.extend_from_slice(h.leaf_indices(child).expect("concept in hierarchy"));
        } else {
            fill_unsupported(h, child, below, out);
        }
    }
}

/// Random input set drawn top-down: every node keeps a uniformly random
/// number of its children, chosen uniformly, and recurses into them. This
/// reaches the supported, unsupported and in-between bands with similar
/// probability at every depth.
pub fn random_input<R: Rng + ?Sized>(h: &ConceptHierarchy, rng: &mut R) -> Vec<u32> {
    let mut out = Vec::new();
    let top: Vec<ConceptId> = h.level(h.lmax()).collect();
    for c in top {
        random_below(h, c, rng, &mut out);
    }
    out.sort_unstable();
    out
}

fn random_below<R: Rng + ?Sized>(h: &ConceptHierarchy, c: ConceptId, rng: &mut R, out: &mut Vec<u32>) {
    if c.level == 0 {
        out.push(c.index);
        return;
    }
    let children = h.children(c).expect("concept in hierarchy");
    let keep = rng.gen_range(0..=children.len());
    let mut picked: Vec<usize> = sample(rng, children.len(), keep).into_vec();
    picked.sort_unstable();
    for i in picked {
        random_below(h, children[i], rng, out);
    }
}

/// One input set and the verdicts for every bound internal concept.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InputTest {
    pub family: TestFamily,
    /// Concept the set was built for; `None` for random sets.
    pub target: Option<ConceptId>,
    pub input: Vec<u32>,
    pub verdicts: Vec<ConceptVerdict>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FamilyCount {
    pub family: TestFamily,
    pub must_fire: (usize, usize),
    pub must_not_fire: (usize, usize),
    pub unconstrained: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RecognitionReport {
    pub tests: Vec<InputTest>,
    /// Internal concepts without a rep; each counts as a failure.
    pub unbound: Vec<ConceptId>,
    pub weights_unchanged: bool,
}

impl RecognitionReport {
    pub fn verdicts(&self) -> impl Iterator<Item = (&InputTest, &ConceptVerdict)> {
        self.tests.iter().flat_map(|t| t.verdicts.iter().map(move |v| (t, v)))
    }

    pub fn failures(&self) -> Vec<(&InputTest, &ConceptVerdict)> {
        self.verdicts().filter(|(_, v)| !v.passed()).collect()
    }

    /// Must-fire verdicts whose rep fired, but not (only) on time.
    pub fn timing_deviations(&self) -> usize {
        self.verdicts()
            .filter(|(_, v)| !v.off_time.is_empty() || (v.requirement == Requirement::MustFire && !v.fired_on_time))
            .count()
    }

    pub fn passed(&self) -> bool {
        self.unbound.is_empty() && self.weights_unchanged && self.verdicts().all(|(_, v)| v.passed())
    }

    pub fn family_counts(&self) -> Vec<FamilyCount> {
        TestFamily::ALL
            .iter()
            .map(|&family| {
                let mut fc = FamilyCount { family, must_fire: (0, 0), must_not_fire: (0, 0), unconstrained: 0 };
                for (_, v) in self.verdicts().filter(|(t, _)| t.family == family) {
                    match v.requirement {
                        Requirement::MustFire => {
                            fc.must_fire.1 += 1;
                            fc.must_fire.0 += v.passed() as usize;
                        }
                        Requirement::MustNotFire => {
                            fc.must_not_fire.1 += 1;
                            fc.must_not_fire.0 += v.passed() as usize;
                        }
                        Requirement::Unconstrained => fc.unconstrained += 1,
                    }
                }
                fc
            })
            .collect()
    }

    /// Structured summary text.
    pub fn summary_text(&self) -> String {
        let summary = serde_json::json!({
            "passed": self.passed(),
            "input_sets": self.tests.len(),
            "verdicts": self.verdicts().count(),
            "failures": self.failures().len(),
            "timing_deviations": self.timing_deviations(),
            "unbound": self.unbound.iter().map(|c| c.to_string()).collect::<Vec<_>>(),
            "weights_unchanged": self.weights_unchanged,
            "families": self.family_counts(),
        });
        serde_json::to_string_pretty(&summary).expect("summary serializes")
    }

    /// `level,index,family,target,requirement,verdict,fired_on_time,off_time`.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        writeln!(out, "level,index,family,target,requirement,verdict,fired_on_time,off_time")?;
        for (t, v) in self.verdicts() {
            let requirement = match v.requirement {
                Requirement::MustFire => "must-fire",
                Requirement::MustNotFire => "must-not-fire",
                Requirement::Unconstrained => "unconstrained",
            };
            let verdict = match (v.requirement, v.passed()) {
                (Requirement::Unconstrained, _) => "logged",
                (_, true) => "pass",
                (_, false) => "fail",
            };
            let off: Vec<String> = v.off_time.iter().map(u32::to_string).collect();
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                v.concept.level,
                v.concept.index,
                t.family.name(),
                t.target.map(|c| c.to_string()).unwrap_or_default(),
                requirement,
                verdict,
                v.fired_on_time,
                off.join(" ")
            )?;
        }
        Ok(())
    }
}

/// One suite input: its family, the concept it was built for, and the set.
pub type SuiteInput = (TestFamily, Option<ConceptId>, Vec<u32>);

/// The input sets of a recognition suite: for every internal concept its
/// leaves, a minimal `r2`-supporting set and a maximal non-`r1`-supporting
/// set, plus `budget` random sets.
pub fn suite_inputs<R: Rng + ?Sized>(
    h: &ConceptHierarchy,
    r1: Fraction,
    r2: Fraction,
    budget: usize,
    sampler: &mut R,
) -> Result<Vec<SuiteInput>, HierarchyError> {
    let mut sets = Vec::new();
    for c in h.internal_concepts() {
        sets.push((TestFamily::Leaves, Some(c), h.leaf_indices(c)?.to_vec()));
        sets.push((TestFamily::MinimalR2, Some(c), minimal_supporting(h, c, r2)));
        if let Some(b) = maximal_unsupported(h, c, r1) {
            sets.push((TestFamily::MaximalNonR1, Some(c), b));
        }
    }
    for _ in 0..budget {
        sets.push((TestFamily::Random, None, random_input(h, sampler)));
    }
    Ok(sets)
}

/// Runs every suite input and judges every bound internal concept on each.
pub fn recognition_suite<S: Scalar, R: Rng + ?Sized>(
    net: &NetworkState<S>,
    repmap: &RepMap,
    h: &ConceptHierarchy,
    r1: Fraction,
    r2: Fraction,
    sampler: &mut R,
    budget: usize,
) -> Result<RecognitionReport, RecognitionError> {
    let inputs = suite_inputs(h, r1, r2, budget, sampler)?;
    run_inputs(net, repmap, h, r1, r2, inputs)
}

pub fn run_inputs<S: Scalar>(
    net: &NetworkState<S>,
    repmap: &RepMap,
    h: &ConceptHierarchy,
    r1: Fraction,
    r2: Fraction,
    inputs: Vec<SuiteInput>,
) -> Result<RecognitionReport, RecognitionError> {
    let bound: Vec<(ConceptId, NeuronId)> =
        h.internal_concepts().filter_map(|c| repmap.rep(c).map(|n| (c, n))).collect();
    let unbound: Vec<ConceptId> = h.internal_concepts().filter(|&c| repmap.rep(c).is_none()).collect();
    let results: Vec<Result<(InputTest, bool), RecognitionError>> = inputs
        .into_par_iter()
        .map(|(family, target, input)| {
            let (history, after) = present(net, &input)?;
            let unchanged = (1..=net.max_layer()).all(|l| after.layer_weights(l).ok() == net.layer_weights(l).ok());
            let supported_r2 = h.supported(&input, r2)?;
            let supported_r1 = h.supported(&input, r1)?;
            let verdicts = bound
                .iter()
                .map(|&(c, rep)| {
                    let requirement = if supported_r2.contains(c) {
                        Requirement::MustFire
                    } else if !supported_r1.contains(c) {
                        Requirement::MustNotFire
                    } else {
                        Requirement::Unconstrained
                    };
                    verdict_from(&history, c, rep, requirement)
                })
                .collect();
            Ok((InputTest { family, target, input, verdicts }, unchanged))
        })
        .collect();
    let mut tests = Vec::with_capacity(results.len());
    let mut weights_unchanged = true;
    for r in results {
        let (t, unchanged) = r?;
        weights_unchanged &= unchanged;
        tests.push(t);
    }
    Ok(RecognitionReport { tests, unbound, weights_unchanged })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Disagreement {
    pub input: Vec<u32>,
    pub concept: ConceptId,
    pub left_fired: bool,
    pub right_fired: bool,
}

/// Inputs on which two networks make different on-time fire decisions
/// for some concept bound in both.
pub fn decision_disagreements<S: Scalar, T: Scalar>(
    h: &ConceptHierarchy,
    left: (&NetworkState<S>, &RepMap),
    right: (&NetworkState<T>, &RepMap),
    inputs: &[Vec<u32>],
) -> Result<Vec<Disagreement>, RecognitionError> {
    let concepts: Vec<(ConceptId, NeuronId, NeuronId)> = h
        .internal_concepts()
        .filter_map(|c| Some((c, left.1.rep(c)?, right.1.rep(c)?)))
        .collect();
    let per_input: Vec<Result<Vec<Disagreement>, RecognitionError>> = inputs
        .par_iter()
        .map(|b| {
            let (hl, _) = present(left.0, b)?;
            let (hr, _) = present(right.0, b)?;
            Ok(concepts
                .iter()
                .filter_map(|&(c, nl, nr)| {
                    let (fl, fr) = (hl.fired_at(nl.layer as usize, nl), hr.fired_at(nr.layer as usize, nr));
                    (fl != fr).then(|| Disagreement { input: b.clone(), concept: c, left_fired: fl, right_fired: fr })
                })
                .collect())
        })
        .collect();
    let mut out = Vec::new();
    for d in per_input {
        out.extend(d?);
    }
    Ok(out)
}
