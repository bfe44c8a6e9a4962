//! Shallow networks cannot recognize deep hierarchies.
//!
//! For a level-2 concept `c` whose rep receives total weight `W` from the
//! reps of its grandchildren, two input sets pin the threshold from both
//! sides. The must-fire set (scenario A) keeps `c` supported at `r2` with
//! potential at most `r2'^2 W`; the can't-fire set (scenario B) keeps `c`
//! unsupported at `r1` with potential at least `(2 r1' - r1'^2) W`. When
//! `r2'^2 <= 2 r1' - r1'^2` no threshold separates them.

use std::cmp::Ordering;
use std::fmt::Write as _;

use num_rational::{BigRational, Ratio};
use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::hierarchy::{ConceptHierarchy, ConceptId, HierarchyError};
use crate::network::{NetworkError, NetworkParams, NetworkState, NeuronId};
use crate::ratio::Fraction;
use crate::scalar::Scalar;
use crate::training::RepMap;

#[derive(Debug, Error, PartialEq)]
pub enum ConstraintError {
    #[error("ordering: need 0 <= r1 <= r2 <= 1, got r1={r1}, r2={r2}")]
    Ordering { r1: f64, r2: f64 },
    #[error("r1-non-integral: r1 k = {0} is an integer")]
    IntegralR1k(i64),
    #[error("quadratic: r2'^2 = {lhs} exceeds 2 r1' - r1'^2 = {rhs}")]
    Quadratic { lhs: f64, rhs: f64 },
    #[error("k must be positive")]
    ZeroK,
}

#[derive(Debug, Error)]
pub enum LowerBoundError {
    #[error(transparent)]
    Constraint(#[from] ConstraintError),
    #[error("total weight must be positive, got {0}")]
    NonPositiveWeight(f64),
    #[error("concept {0} must sit at level 2 or above")]
    TooShallow(ConceptId),
    #[error("scenario {scenario} for {concept} lands in the wrong band")]
    Band { scenario: char, concept: ConceptId },
    #[error("concept {0} has no representing neuron")]
    Unbound(ConceptId),
    #[error("expected a single-layer network, found {0} layers")]
    Depth(usize),
    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RatioParams {
    pub k: usize,
    pub r1: Fraction,
    pub r2: Fraction,
    /// `r1' k = floor(r1 k)`.
    pub r1_prime: Fraction,
    /// `r2' k = ceil(r2 k)`.
    pub r2_prime: Fraction,
}

impl RatioParams {
    /// Computes `r1'` and `r2'` without checking the separation constraint.
    pub fn compute(r1: Fraction, r2: Fraction, k: usize) -> Result<Self, ConstraintError> {
        if k == 0 {
            return Err(ConstraintError::ZeroK);
        }
        if r1 > r2 {
            return Err(ConstraintError::Ordering { r1: r1.to_f64(), r2: r2.to_f64() });
        }
        let ki = k as i64;
        let r1_prime = Fraction::new(r1.floor_mul(k) as i64, ki).expect("floor within [0, k]");
        let r2_prime = Fraction::new(r2.ceil_mul(k) as i64, ki).expect("ceil within [0, k]");
        Ok(Self { k, r1, r2, r1_prime, r2_prime })
    }

    pub fn quadratic_lhs(&self) -> Ratio<i64> {
        let r = self.r2_prime.as_ratio();
        r * r
    }

    /// `2 r1' - r1'^2`.
    pub fn quadratic_rhs(&self) -> Ratio<i64> {
        let r = self.r1_prime.as_ratio();
        r * Ratio::from_integer(2) - r * r
    }

    pub fn validate(&self) -> Result<(), ConstraintError> {
        if self.r1.mul_is_integer(self.k) {
            return Err(ConstraintError::IntegralR1k(self.r1.floor_mul(self.k) as i64));
        }
        let (lhs, rhs) = (self.quadratic_lhs(), self.quadratic_rhs());
        if lhs > rhs {
            return Err(ConstraintError::Quadratic { lhs: ratio_f64(lhs), rhs: ratio_f64(rhs) });
        }
        Ok(())
    }
}

fn ratio_f64(r: Ratio<i64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

fn big(r: Ratio<i64>) -> BigRational {
    BigRational::new((*r.numer()).into(), (*r.denom()).into())
}

/// `r1'`, `r2'` with every constraint checked.
pub fn derive_r_primes(r1: Fraction, r2: Fraction, k: usize) -> Result<RatioParams, ConstraintError> {
    let p = RatioParams::compute(r1, r2, k)?;
    p.validate()?;
    Ok(p)
}

/// One constructed input set for concept `c`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Scenario {
    pub concept: ConceptId,
    /// Sorted leaf indices.
    pub input: Vec<u32>,
    pub children: Vec<ConceptId>,
    /// `W`: total weight over all grandchildren.
    pub total_weight: f64,
    /// Sum of the selected grandchildren weights.
    pub potential: f64,
    /// `r2'^2 W` for scenario A, `(2 r1' - r1'^2) W` for scenario B.
    pub bound: f64,
}

fn by_weight(a: &(ConceptId, f64), b: &(ConceptId, f64)) -> Ordering {
    a.1.total_cmp(&b.1).then(a.0.cmp(&b.0))
}

type Weighted = (ConceptId, f64);

struct Family {
    /// Per child: the child, `W(child)`, and its children with their weights.
    children: Vec<(ConceptId, f64, Vec<Weighted>)>,
    total: f64,
}

fn family(h: &ConceptHierarchy, c: ConceptId, weight_of: &impl Fn(ConceptId) -> f64) -> Result<Family, LowerBoundError> {
    if c.level < 2 {
        return Err(LowerBoundError::TooShallow(c));
    }
    let mut children = Vec::new();
    let mut total = 0.0;
    for b in h.children(c)? {
        let gcs: Vec<(ConceptId, f64)> = h.children(b)?.into_iter().map(|g| (g, weight_of(g))).collect();
        let wb: f64 = gcs.iter().map(|g| g.1).sum();
        total += wb;
        children.push((b, wb, gcs));
    }
    Ok(Family { children, total })
}

fn leaves_of(h: &ConceptHierarchy, picked: &[ConceptId]) -> Result<Vec<u32>, HierarchyError> {
    let mut out = Vec::new();
    for &g in picked {
        out.extend_from_slice(h.leaf_indices(g)?);
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

/// Scenario A: the `r2' k` children of least total weight, and within each
/// its `r2' k` lightest grandchildren. `weight_of` gives the weight into
/// `rep(c)` carried by a grandchild.
pub fn scenario_must_fire(
    h: &ConceptHierarchy,
    c: ConceptId,
    params: &RatioParams,
    weight_of: impl Fn(ConceptId) -> f64,
) -> Result<Scenario, LowerBoundError> {
    let fam = family(h, c, &weight_of)?;
    let m = params.r2_prime.ceil_mul(h.k()).min(h.k());
    let mut order: Vec<(ConceptId, f64)> = fam.children.iter().map(|x| (x.0, x.1)).collect();
    order.sort_by(by_weight);
    let chosen: Vec<ConceptId> = order.iter().take(m).map(|x| x.0).collect();
    let mut picked = Vec::new();
    let mut potential = 0.0;
    for (_, _, gcs) in fam.children.iter().filter(|x| chosen.contains(&x.0)) {
        let mut g = gcs.clone();
        g.sort_by(by_weight);
        for (gc, w) in g.into_iter().take(m) {
            picked.push(gc);
            potential += w;
        }
    }
    let input = leaves_of(h, &picked)?;
    if !h.is_supported(c, &input, params.r2)? {
        return Err(LowerBoundError::Band { scenario: 'A', concept: c });
    }
    let r = params.r2_prime.to_f64();
    Ok(Scenario { concept: c, input, children: chosen, total_weight: fam.total, potential, bound: r * r * fam.total })
}

/// Scenario B: the `r1' k` heaviest children in full, plus the `r1' k`
/// heaviest grandchildren of every other child.
pub fn scenario_cant_fire(
    h: &ConceptHierarchy,
    c: ConceptId,
    params: &RatioParams,
    weight_of: impl Fn(ConceptId) -> f64,
) -> Result<Scenario, LowerBoundError> {
    let fam = family(h, c, &weight_of)?;
    let m = params.r1_prime.floor_mul(h.k());
    let mut order: Vec<(ConceptId, f64)> = fam.children.iter().map(|x| (x.0, x.1)).collect();
    order.sort_by(|a, b| by_weight(b, a));
    let full: Vec<ConceptId> = order.iter().take(m).map(|x| x.0).collect();
    let mut picked = Vec::new();
    let mut potential = 0.0;
    for (b, wb, gcs) in &fam.children {
        if full.contains(b) {
            picked.extend(gcs.iter().map(|g| g.0));
            potential += wb;
        } else {
            let mut g = gcs.clone();
            g.sort_by(|x, y| by_weight(y, x));
            for (gc, w) in g.into_iter().take(m) {
                picked.push(gc);
                potential += w;
            }
        }
    }
    let input = leaves_of(h, &picked)?;
    if h.is_supported(c, &input, params.r1)? {
        return Err(LowerBoundError::Band { scenario: 'B', concept: c });
    }
    let r = params.r1_prime.to_f64();
    Ok(Scenario { concept: c, input, children: full, total_weight: fam.total, potential, bound: (2.0 * r - r * r) * fam.total })
}

/// Which requirement a witness input breaks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Clause {
    MustFire,
    MustNotFire,
}

impl Clause {
    pub fn name(self) -> &'static str {
        match self {
            Self::MustFire => "must-fire",
            Self::MustNotFire => "must-not-fire",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InfeasibilityCertificate {
    pub params: RatioParams,
    pub concept: Option<ConceptId>,
    pub total_weight: f64,
    pub must_fire_bound: f64,
    pub cant_fire_bound: f64,
    /// `cant_fire_bound >= must_fire_bound`, decided in exact arithmetic.
    pub valid: bool,
    pub witness_a: Option<Vec<u32>>,
    pub witness_b: Option<Vec<u32>>,
    pub violated: Option<Clause>,
}

impl InfeasibilityCertificate {
    pub fn to_text(&self) -> String {
        let list = |b: &Option<Vec<u32>>| match b {
            None => "-".to_string(),
            Some(v) => v.iter().map(u32::to_string).collect::<Vec<_>>().join(" "),
        };
        let mut s = String::new();
        let _ = writeln!(s, "certificate");
        let _ = writeln!(s, "k = {}", self.params.k);
        let _ = writeln!(s, "r1 = {:?}", self.params.r1.to_f64());
        let _ = writeln!(s, "r2 = {:?}", self.params.r2.to_f64());
        let _ = writeln!(s, "r1_prime = {}/{}", self.params.r1_prime.numer(), self.params.r1_prime.denom());
        let _ = writeln!(s, "r2_prime = {}/{}", self.params.r2_prime.numer(), self.params.r2_prime.denom());
        let _ = writeln!(s, "concept = {}", self.concept.map(|c| c.to_string()).unwrap_or_else(|| "-".into()));
        let _ = writeln!(s, "total_weight = {:?}", self.total_weight);
        let _ = writeln!(s, "must_fire_bound = {:?}", self.must_fire_bound);
        let _ = writeln!(s, "cant_fire_bound = {:?}", self.cant_fire_bound);
        let _ = writeln!(s, "verdict = {}", if self.valid { "valid" } else { "invalid" });
        let _ = writeln!(s, "violated = {}", self.violated.map(Clause::name).unwrap_or("-"));
        let _ = writeln!(s, "witness_a = {}", list(&self.witness_a));
        let _ = writeln!(s, "witness_b = {}", list(&self.witness_b));
        s
    }
}

/// Certificate for total weight `w`: both bounds, with the verdict decided
/// exactly on the binary value of `w`.
pub fn check_infeasibility(params: &RatioParams, w: f64) -> Result<InfeasibilityCertificate, LowerBoundError> {
    if !(w > 0.0) || !w.is_finite() {
        return Err(LowerBoundError::NonPositiveWeight(w));
    }
    let exact_w = BigRational::from_float(w).expect("finite");
    let must = big(params.quadratic_lhs()) * exact_w.clone();
    let cant = big(params.quadratic_rhs()) * exact_w;
    Ok(InfeasibilityCertificate {
        params: *params,
        concept: None,
        total_weight: w,
        must_fire_bound: must.to_f64_lossy(),
        cant_fire_bound: cant.to_f64_lossy(),
        valid: cant >= must,
        witness_a: None,
        witness_b: None,
        violated: None,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Witness {
    pub concept: ConceptId,
    pub rep: NeuronId,
    pub clause: Clause,
    pub input: Vec<u32>,
    pub potential: f64,
    pub tau: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConceptSearch {
    pub concept: ConceptId,
    pub scenario_a: Scenario,
    pub scenario_b: Scenario,
    pub certificate: InfeasibilityCertificate,
    pub witness: Option<Witness>,
}

/// For every level-2 concept of `h`, builds both scenarios from the actual
/// weights of `rep(c)` on a single-layer network and evaluates them. A
/// must-fire set that stays silent, or a can't-fire set that fires, is a
/// witness that the network fails to recognize `h`.
pub fn empirical_counterexample(
    net: &NetworkState<f64>,
    h: &ConceptHierarchy,
    repmap: &RepMap,
    params: &RatioParams,
) -> Result<Vec<ConceptSearch>, LowerBoundError> {
    if net.max_layer() != 1 {
        return Err(LowerBoundError::Depth(net.max_layer()));
    }
    let tau = *net.tau();
    let mut out = Vec::new();
    for c in h.level(2) {
        let rep = repmap.rep(c).ok_or(LowerBoundError::Unbound(c))?;
        let row = net.row(rep.layer as usize, rep.index as usize)?;
        let input_of = |g: ConceptId| repmap.rep(g).map(|n| n.index as usize);
        let weight_of = |g: ConceptId| input_of(g).map_or(0.0, |i| row[i]);
        let a = scenario_must_fire(h, c, params, weight_of)?;
        let b = scenario_cant_fire(h, c, params, weight_of)?;
        let pot = |input: &[u32]| -> f64 { input.iter().map(|&i| row[i as usize]).sum() };
        let (pa, pb) = (pot(&a.input), pot(&b.input));
        let witness = if pa < tau {
            Some(Witness { concept: c, rep, clause: Clause::MustFire, input: a.input.clone(), potential: pa, tau })
        } else if pb >= tau {
            Some(Witness { concept: c, rep, clause: Clause::MustNotFire, input: b.input.clone(), potential: pb, tau })
        } else {
            None
        };
        let mut certificate = if a.total_weight > 0.0 {
            check_infeasibility(params, a.total_weight)?
        } else {
            InfeasibilityCertificate {
                params: *params,
                concept: None,
                total_weight: 0.0,
                must_fire_bound: 0.0,
                cant_fire_bound: 0.0,
                valid: params.quadratic_rhs() >= params.quadratic_lhs(),
                witness_a: None,
                witness_b: None,
                violated: None,
            }
        };
        certificate.concept = Some(c);
        certificate.witness_a = Some(a.input.clone());
        certificate.witness_b = Some(b.input.clone());
        certificate.violated = witness.as_ref().map(|w| w.clause);
        out.push(ConceptSearch { concept: c, scenario_a: a, scenario_b: b, certificate, witness });
    }
    Ok(out)
}

/// A single-layer network over `h` (which must have `lmax = 2`) with every
/// internal concept bound to its own layer-1 neuron, level 1 first. Rep
/// rows get weights uniform in `[0, 1)`; every other weight is zero. The
/// threshold is uniform in `(0, expected W]`.
pub fn random_single_layer<R: Rng + ?Sized>(h: &ConceptHierarchy, rng: &mut R) -> Result<(NetworkState<f64>, RepMap), LowerBoundError> {
    let mut repmap = RepMap::with_inputs(h);
    let mut next = 0u32;
    for c in h.internal_concepts() {
        repmap.insert_unchecked_layer(c, NeuronId::new(1, next)).expect("fresh neuron");
        next += 1;
    }
    if next as usize > h.n() {
        return Err(LowerBoundError::Network(NetworkError::NoSuchNeuron { layer: 1, index: next as usize - 1 }));
    }
    let k = h.k() as f64;
    let tau = (1.0 - rng.gen::<f64>()) * k * k * 0.5;
    let mut net = NetworkState::with_uniform_weights(NetworkParams { max_layer: 1, width: h.n(), tau, eta: 1.0 }, 0.0)?;
    for (_, rep) in repmap.iter().filter(|(c, _)| c.level > 0) {
        for w in net.row_mut(1, rep.index as usize)? {
            *w = rng.gen::<f64>();
        }
    }
    Ok((net, repmap))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct LayerFloorReport {
    pub checked: usize,
    /// Concepts whose rep sits exactly on their level.
    pub equal: usize,
    pub violations: Vec<(ConceptId, NeuronId)>,
}

impl LayerFloorReport {
    pub fn holds(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Every rep must sit on a layer at least its concept's level.
pub fn layer_floor_check(repmap: &RepMap) -> LayerFloorReport {
    let mut report = LayerFloorReport::default();
    for (c, n) in repmap.iter() {
        report.checked += 1;
        if n.layer < c.level {
            report.violations.push((c, n));
        } else if n.layer == c.level {
            report.equal += 1;
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn f(x: f64) -> Fraction {
        Fraction::from_f64(x).unwrap()
    }

    #[test]
    fn paper_ratios_for_k_ten() {
        let p = derive_r_primes(f(0.51), f(0.8), 10).unwrap();
        assert_eq!(p.r1_prime, Fraction::new(1, 2).unwrap());
        assert_eq!(p.r2_prime, Fraction::new(4, 5).unwrap());
        assert_eq!(p.quadratic_lhs(), Ratio::new(16, 25));
        assert_eq!(p.quadratic_rhs(), Ratio::new(3, 4));
    }

    #[test]
    fn named_constraint_failures() {
        assert_eq!(derive_r_primes(f(0.5), f(0.8), 10), Err(ConstraintError::IntegralR1k(5)));
        assert!(matches!(derive_r_primes(f(0.51), f(0.9), 10), Err(ConstraintError::Quadratic { .. })));
        assert!(matches!(derive_r_primes(f(0.9), f(0.8), 10), Err(ConstraintError::Ordering { .. })));
    }

    #[test]
    fn certificate_bounds_and_scale() {
        let p = derive_r_primes(f(0.51), f(0.8), 10).unwrap();
        let c = check_infeasibility(&p, 1.0).unwrap();
        assert!((c.must_fire_bound - 0.64).abs() < 1e-15 && (c.cant_fire_bound - 0.75).abs() < 1e-15);
        assert!(c.valid);
        let c = check_infeasibility(&p, 8.0).unwrap();
        assert!((c.must_fire_bound - 5.12).abs() < 1e-12 && (c.cant_fire_bound - 6.0).abs() < 1e-12);
        assert!(check_infeasibility(&p, 0.0).is_err());
        let bad = RatioParams::compute(f(0.51), f(0.9), 10).unwrap();
        assert!(!check_infeasibility(&bad, 1.0).unwrap().valid);
    }

    #[test]
    fn uniform_scenarios_hit_the_bounds() {
        let h = ConceptHierarchy::build(10, 2, 1000).unwrap();
        let p = derive_r_primes(f(0.51), f(0.8), 10).unwrap();
        let c = ConceptId::new(2, 4);
        let a = scenario_must_fire(&h, c, &p, |_| 1.0).unwrap();
        assert_eq!(a.children.len(), 8);
        assert_eq!(a.input.len(), 64);
        assert_eq!(a.potential, 64.0);
        assert!((a.bound - 64.0).abs() < 1e-9);
        let b = scenario_cant_fire(&h, c, &p, |_| 1.0).unwrap();
        assert_eq!(b.input.len(), 5 * 10 + 5 * 5);
        assert!((b.bound - 75.0).abs() < 1e-9);
    }

    #[test]
    fn full_r2_prime_takes_all_leaves() {
        let h = ConceptHierarchy::build(4, 2, 64).unwrap();
        let p = RatioParams::compute(f(0.3), Fraction::ONE, 4).unwrap();
        let a = scenario_must_fire(&h, ConceptId::new(2, 1), &p, |g| g.index as f64).unwrap();
        assert_eq!(a.input, h.leaf_indices(ConceptId::new(2, 1)).unwrap().to_vec());
        assert!((a.bound - a.total_weight).abs() < 1e-12);
    }

    #[test]
    fn threshold_sides_give_each_clause() {
        let h = ConceptHierarchy::build(10, 2, 1000).unwrap();
        let p = derive_r_primes(f(0.51), f(0.8), 10).unwrap();
        let mut map = RepMap::with_inputs(&h);
        for (i, c) in h.internal_concepts().enumerate() {
            map.insert_unchecked_layer(c, NeuronId::new(1, i as u32)).unwrap();
        }
        for (tau, clause) in [(60.0, Clause::MustNotFire), (80.0, Clause::MustFire)] {
            let net = NetworkState::with_uniform_weights(NetworkParams { max_layer: 1, width: 1000, tau, eta: 1.0 }, 1.0).unwrap();
            let found = empirical_counterexample(&net, &h, &map, &p).unwrap();
            assert_eq!(found.len(), 10);
            assert!(found.iter().all(|s| s.witness.as_ref().unwrap().clause == clause));
        }
    }

    #[test]
    fn random_networks_always_yield_witnesses() {
        let h = ConceptHierarchy::build(10, 2, 1000).unwrap();
        let p = derive_r_primes(f(0.51), f(0.8), 10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..5 {
            let (net, map) = random_single_layer(&h, &mut rng).unwrap();
            let found = empirical_counterexample(&net, &h, &map, &p).unwrap();
            assert!(found.iter().all(|s| s.witness.is_some() && s.certificate.valid));
        }
    }

    #[test]
    fn layer_floor() {
        let h = ConceptHierarchy::build(4, 2, 64).unwrap();
        let map = crate::recognition::canonical_repmap(&h);
        let r = layer_floor_check(&map);
        assert!(r.holds());
        assert_eq!(r.equal, r.checked);
        let mut shuffled = RepMap::with_inputs(&h);
        shuffled.insert_unchecked_layer(ConceptId::new(2, 0), NeuronId::new(1, 0)).unwrap();
        assert_eq!(layer_floor_check(&shuffled).violations.len(), 1);
    }
}
