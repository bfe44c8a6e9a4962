//! Weight targets after learning.

use serde::Serialize;

use crate::hierarchy::{ConceptHierarchy, HierarchyError};
use crate::network::{NetworkState, NeuronId};
use crate::scalar::Scalar;

use super::params::{noisy_weight_target, LearnMode, LearnParams};
use super::repmap::RepMap;

/// A weight outside its band.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WeightMiss {
    pub neuron: NeuronId,
    pub source: u32,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WeightTargetReport {
    pub in_low: f64,
    pub in_high: f64,
    /// Upper bound on every other incoming weight, if checked.
    pub out_high: Option<f64>,
    pub rows: usize,
    pub min_in: f64,
    pub max_in: f64,
    pub max_out: f64,
    pub in_misses: Vec<WeightMiss>,
    pub out_misses: Vec<WeightMiss>,
}

impl WeightTargetReport {
    pub fn holds(&self) -> bool {
        self.rows > 0 && self.in_misses.is_empty() && self.out_misses.is_empty()
    }
}

/// Checks every bound rep on layer `>= 1`: weights from the reps of its
/// concept's children must lie in `[in_low, in_high]`, and with `out_high`
/// set every other incoming weight must be at most `out_high`.
pub fn check_weight_band<S: Scalar>(
    net: &NetworkState<S>,
    repmap: &RepMap,
    h: &ConceptHierarchy,
    in_low: f64,
    in_high: f64,
    out_high: Option<f64>,
) -> Result<WeightTargetReport, HierarchyError> {
    let mut r = WeightTargetReport {
        in_low,
        in_high,
        out_high,
        rows: 0,
        min_in: f64::INFINITY,
        max_in: f64::NEG_INFINITY,
        max_out: f64::NEG_INFINITY,
        in_misses: Vec::new(),
        out_misses: Vec::new(),
    };
    for c in h.internal_concepts() {
        let Some(rep) = repmap.rep(c) else { continue };
        let Ok(row) = net.row(rep.layer as usize, rep.index as usize) else { continue };
        let kids: Vec<u32> =
            h.children(c)?.into_iter().filter_map(|b| repmap.rep(b)).filter(|n| n.layer + 1 == rep.layer).map(|n| n.index).collect();
        r.rows += 1;
        for (i, w) in row.iter().enumerate() {
            let w = w.to_f64_lossy();
            let miss = WeightMiss { neuron: rep, source: i as u32, weight: w };
            if kids.contains(&(i as u32)) {
                r.min_in = r.min_in.min(w);
                r.max_in = r.max_in.max(w);
                if !(w >= in_low && w <= in_high) {
                    r.in_misses.push(miss);
                }
            } else {
                r.max_out = r.max_out.max(w);
                if out_high.is_some_and(|hi| !(w <= hi)) {
                    r.out_misses.push(miss);
                }
            }
        }
    }
    Ok(r)
}

/// Learned-weight targets for the given learning mode.
///
/// Noise-free: in-set weights in `[1/((1+eps) sqrt k), 1/sqrt k]`, all others
/// at most `1/k^(lmax+b)`. Noisy: in-set weights within `rel` of
/// `1/sqrt(p k + 1 - p)`; other weights are not bounded.
pub fn check_weight_targets<S: Scalar>(
    net: &NetworkState<S>,
    repmap: &RepMap,
    h: &ConceptHierarchy,
    params: &LearnParams,
    rel: f64,
) -> Result<WeightTargetReport, HierarchyError> {
    let k = h.k();
    match params.mode {
        LearnMode::NoiseFree => {
            let sk = (k as f64).sqrt();
            let out = <f64 as Scalar>::inverse_power(k as u64, h.lmax() as u32 + params.b);
            check_weight_band(net, repmap, h, 1.0 / ((1.0 + params.epsilon) * sk), 1.0 / sk, Some(out))
        }
        LearnMode::Noisy { p, .. } => {
            let wbar = noisy_weight_target(k, p.to_f64());
            check_weight_band(net, repmap, h, wbar * (1.0 - rel), wbar * (1.0 + rel), None)
        }
    }
}
