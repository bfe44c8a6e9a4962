//! Showings and sigma-bottom-up presentation schedules.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hierarchy::{ConceptHierarchy, ConceptId, HierarchyError};
use crate::ratio::Fraction;

/// One presentation of a concept. `noise` carries the marking probability
/// of a noisy showing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Showing {
    pub concept: ConceptId,
    pub noise: Option<Fraction>,
}

impl Showing {
    pub fn clean(concept: ConceptId) -> Self {
        Self { concept, noise: None }
    }

    pub fn noisy(concept: ConceptId, p: Fraction) -> Self {
        Self { concept, noise: Some(p) }
    }

    pub fn is_noisy(&self) -> bool {
        self.noise.is_some()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SchedulePolicy {
    /// All repeats of each concept back to back, level by level.
    Sequential,
    /// Random interleaving subject to the bottom-up constraint.
    #[default]
    Interleaved,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PresentationSchedule {
    pub items: Vec<Showing>,
    pub sigma: u64,
    /// Whether level-0 concepts carry a sigma quota of their own.
    pub level0_quota: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ScheduleViolation {
    #[error("position {position}: {concept} is not in the hierarchy")]
    UnknownConcept { position: usize, concept: ConceptId },
    #[error("position {position}: {concept} shown while child {child} has {child_count} of {sigma} showings")]
    Premature { position: usize, concept: ConceptId, child: ConceptId, child_count: u64, sigma: u64 },
    #[error("{concept} shown {count} times, fewer than sigma = {sigma}")]
    Quota { concept: ConceptId, count: u64, sigma: u64 },
    #[error("sigma must be at least 1")]
    ZeroSigma,
}

#[derive(Debug, Error)]
pub enum ScheduleIoError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl PresentationSchedule {
    pub fn new(items: Vec<Showing>, sigma: u64) -> Self {
        Self { items, sigma, level0_quota: true }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Replaces every showing with a noisy one at probability `p`.
    pub fn with_noise(mut self, p: Fraction) -> Self {
        for s in &mut self.items {
            s.noise = Some(p);
        }
        self
    }

    /// Checks the sigma quota of every concept and that no concept is shown
    /// before each of its children reached sigma showings. Reports the first
    /// ordering violation, otherwise the first short quota.
    pub fn validate(&self, h: &ConceptHierarchy) -> Result<(), ScheduleViolation> {
        if self.sigma == 0 {
            return Err(ScheduleViolation::ZeroSigma);
        }
        let mut counts: Vec<Vec<u64>> = (0..=h.lmax()).map(|l| vec![0; h.level_size(l)]).collect();
        for (position, s) in self.items.iter().enumerate() {
            let c = s.concept;
            if !h.contains(c) {
                return Err(ScheduleViolation::UnknownConcept { position, concept: c });
            }
            if c.level >= 1 && (c.level > 1 || self.level0_quota) {
                for &child in h.child_indices(c) {
                    let child_count = counts[c.level as usize - 1][child as usize];
                    if child_count < self.sigma {
                        return Err(ScheduleViolation::Premature {
                            position,
                            concept: c,
                            child: ConceptId::new(c.level - 1, child),
                            child_count,
                            sigma: self.sigma,
                        });
                    }
                }
            }
            counts[c.level as usize][c.index as usize] += 1;
        }
        let first_level = if self.level0_quota { 0 } else { 1 };
        for c in (first_level..=h.lmax()).flat_map(|l| h.level(l)) {
            let count = counts[c.level as usize][c.index as usize];
            if count < self.sigma {
                return Err(ScheduleViolation::Quota { concept: c, count, sigma: self.sigma });
            }
        }
        Ok(())
    }

    /// One showing per line: `level index noisy p`, with `p` empty for clean
    /// showings. A `# sigma=.. level0_quota=..` header carries the metadata.
    pub fn to_text(&self) -> String {
        let mut s = format!("# sigma={} level0_quota={}\n", self.sigma, self.level0_quota);
        for item in &self.items {
            match item.noise {
                Some(p) => s.push_str(&format!("{} {} 1 {}\n", item.concept.level, item.concept.index, p.to_f64())),
                None => s.push_str(&format!("{} {} 0\n", item.concept.level, item.concept.index)),
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, ScheduleIoError> {
        let mut sigma = None;
        let mut level0_quota = true;
        let mut items = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let err = |msg: String| ScheduleIoError::Parse { line: i + 1, msg };
            if line.is_empty() {
                continue;
            }
            if let Some(meta) = line.strip_prefix('#') {
                for kv in meta.split_whitespace() {
                    match kv.split_once('=') {
                        Some(("sigma", v)) => sigma = Some(v.parse().map_err(|_| err(format!("bad sigma '{v}'")))?),
                        Some(("level0_quota", v)) => {
                            level0_quota = v.parse().map_err(|_| err(format!("bad level0_quota '{v}'")))?
                        }
                        _ => {}
                    }
                }
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let num = |idx: usize| -> Result<u32, ScheduleIoError> {
                fields
                    .get(idx)
                    .ok_or_else(|| err(format!("missing field {idx}")))?
                    .parse()
                    .map_err(|_| err(format!("bad integer in field {idx}")))
            };
            let concept = ConceptId::new(num(0)?, num(1)?);
            let noise = match fields.get(2).copied() {
                None | Some("0") => None,
                Some("1") => {
                    let p: f64 = fields
                        .get(3)
                        .ok_or_else(|| err("noisy showing without p".into()))?
                        .parse()
                        .map_err(|_| err("bad p".into()))?;
                    Some(Fraction::from_f64(p).map_err(|e| err(e.to_string()))?)
                }
                Some(other) => return Err(err(format!("bad noisy flag '{other}'"))),
            };
            items.push(Showing { concept, noise });
        }
        let sigma = sigma.ok_or(ScheduleIoError::Parse { line: 0, msg: "missing sigma header".into() })?;
        Ok(Self { items, sigma, level0_quota })
    }

    pub fn load(path: &Path) -> Result<Self, ScheduleIoError> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Generates a valid sigma-bottom-up schedule of clean showings.
pub fn generate_schedule<R: Rng + ?Sized>(
    h: &ConceptHierarchy,
    sigma: u64,
    policy: SchedulePolicy,
    level0_quota: bool,
    rng: &mut R,
) -> PresentationSchedule {
    let first_level = if level0_quota { 0 } else { 1 };
    let items = match policy {
        SchedulePolicy::Sequential => (first_level..=h.lmax())
            .flat_map(|l| h.level(l))
            .flat_map(|c| std::iter::repeat_n(Showing::clean(c), sigma as usize))
            .collect(),
        SchedulePolicy::Interleaved => interleave(h, sigma, first_level, rng),
    };
    PresentationSchedule { items, sigma, level0_quota }
}

fn interleave<R: Rng + ?Sized>(h: &ConceptHierarchy, sigma: u64, first_level: usize, rng: &mut R) -> Vec<Showing> {
    let mut remaining: BTreeMap<ConceptId, u64> = BTreeMap::new();
    // children still short of their quota, per concept
    let mut pending_children: BTreeMap<ConceptId, usize> = BTreeMap::new();
    let mut ready: Vec<ConceptId> = Vec::new();
    for c in (first_level..=h.lmax()).flat_map(|l| h.level(l)) {
        remaining.insert(c, sigma);
        let waits = if c.level as usize > first_level { h.k() } else { 0 };
        pending_children.insert(c, waits);
        if waits == 0 {
            ready.push(c);
        }
    }
    let mut items = Vec::with_capacity(remaining.len() * sigma as usize);
    while !ready.is_empty() {
        let pos = rng.gen_range(0..ready.len());
        let c = ready[pos];
        items.push(Showing::clean(c));
        let left = remaining.get_mut(&c).expect("scheduled concept");
        *left -= 1;
        if *left == 0 {
            ready.swap_remove(pos);
            if let Ok(Some(parent)) = h.parent(c) {
                let waits = pending_children.get_mut(&parent).expect("parent tracked");
                *waits -= 1;
                if *waits == 0 {
                    ready.push(parent);
                }
            }
        }
    }
    items
}

impl fmt::Display for PresentationSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "schedule(sigma={}, {} showings)", self.sigma, self.items.len())
    }
}

/// Input vector for a showing: the reps of `leaves(c)`, or of `mark(c, p)`
/// for a noisy showing. Level-0 reps are the identity onto universe indices.
pub fn encode_showing<R: Rng + ?Sized>(
    h: &ConceptHierarchy,
    showing: &Showing,
    rng: &mut R,
) -> Result<Vec<bool>, HierarchyError> {
    let mut x = vec![false; h.n()];
    match showing.noise {
        None => {
            for &i in h.leaf_indices(showing.concept)? {
                x[i as usize] = true;
            }
        }
        Some(p) => {
            for i in h.mark(showing.concept, p, rng)? {
                x[i as usize] = true;
            }
        }
    }
    Ok(x)
}
