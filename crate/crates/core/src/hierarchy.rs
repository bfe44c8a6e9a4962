//! Concept hierarchies: a forest of `k` roots at level `lmax`, every internal
//! concept with exactly `k` children on the level below, and children sets of
//! distinct same-level concepts pairwise disjoint.

use std::collections::BTreeSet;
use std::fmt;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ratio::Fraction;

#[derive(Debug, Error, PartialEq)]
pub enum HierarchyError {
    #[error("branching factor must be at least 2, got {0}")]
    Branching(usize),
    #[error("maximum level must be at least 1, got {0}")]
    Depth(usize),
    #[error("level-0 universe of {n} items is smaller than the {needed} leaves required")]
    UniverseTooSmall { n: usize, needed: usize },
    #[error("hierarchy size k^(lmax+1) overflows")]
    TooLarge,
    #[error("unknown concept {0}")]
    UnknownConcept(ConceptId),
    #[error("level {level} must hold {expected} concepts, found {found}")]
    LevelSize { level: usize, expected: usize, found: usize },
    #[error("concept {concept} has {found} children, expected {expected}")]
    Degree { concept: ConceptId, expected: usize, found: usize },
    #[error("concept {concept} names child index {child} outside level {level}")]
    ChildOutOfRange { concept: ConceptId, child: u32, level: usize },
    #[error("level-{level} concept {child} is a child of both {first} and {second}")]
    SharedChild { level: usize, child: u32, first: ConceptId, second: ConceptId },
    #[error("{0} is not a level-0 item of the universe")]
    NotLevelZero(ConceptId),
    #[error("marking probability must lie in (0, 1], got {0}")]
    MarkProbability(f64),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// A concept, identified by its level and its index within that level.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ConceptId {
    pub level: u32,
    pub index: u32,
}

impl ConceptId {
    pub const fn new(level: u32, index: u32) -> Self {
        Self { level, index }
    }

    pub const fn leaf(index: u32) -> Self {
        Self { level: 0, index }
    }
}

impl fmt::Display for ConceptId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}#{}", self.level, self.index)
    }
}

/// Immutable concept hierarchy over a level-0 universe of `n` items.
#[derive(Clone, Debug, PartialEq)]
pub struct ConceptHierarchy {
    k: usize,
    lmax: usize,
    n: usize,
    /// `children[l][i]`: indices (at level `l - 1`) of the children of concept `(l, i)`.
    children: Vec<Vec<Vec<u32>>>,
    /// `parent[l][i]`: index at level `l + 1`; `None` on the top level.
    parent: Vec<Vec<Option<u32>>>,
    /// `leaves[l][i]`: sorted level-0 indices below `(l, i)`.
    leaves: Vec<Vec<Vec<u32>>>,
}

fn checked_pow(k: usize, e: usize) -> Result<usize, HierarchyError> {
    k.checked_pow(e as u32).ok_or(HierarchyError::TooLarge)
}

impl ConceptHierarchy {
    /// Canonical hierarchy: concept `(l, i)` has children `i*k .. (i+1)*k` on
    /// level `l - 1`, so level-0 concepts occupy universe indices
    /// `0 .. k^(lmax+1)` from left to right.
    pub fn build(k: usize, lmax: usize, n: usize) -> Result<Self, HierarchyError> {
        Self::check_shape(k, lmax, n)?;
        let mut children = vec![Vec::new()];
        for level in 1..=lmax {
            let count = checked_pow(k, lmax - level + 1)?;
            children.push(
                (0..count)
                    .map(|i| ((i * k) as u32..((i + 1) * k) as u32).collect())
                    .collect(),
            );
        }
        Self::from_children(k, lmax, n, children)
    }

    fn check_shape(k: usize, lmax: usize, n: usize) -> Result<(), HierarchyError> {
        if k < 2 {
            return Err(HierarchyError::Branching(k));
        }
        if lmax < 1 {
            return Err(HierarchyError::Depth(lmax));
        }
        let needed = checked_pow(k, lmax + 1)?;
        if n < needed {
            return Err(HierarchyError::UniverseTooSmall { n, needed });
        }
        Ok(())
    }

    /// Builds and validates a hierarchy from explicit child lists.
    ///
    /// `children[0]` is ignored; `children[l]` lists, for every level-`l`
    /// concept, the indices of its level-`(l-1)` children.
    pub fn from_children(
        k: usize,
        lmax: usize,
        n: usize,
        mut children: Vec<Vec<Vec<u32>>>,
    ) -> Result<Self, HierarchyError> {
        Self::check_shape(k, lmax, n)?;
        if children.len() != lmax + 1 {
            return Err(HierarchyError::LevelSize {
                level: children.len().saturating_sub(1),
                expected: lmax + 1,
                found: children.len(),
            });
        }
        children[0] = vec![Vec::new(); checked_pow(k, lmax + 1)?];
        let mut parent: Vec<Vec<Option<u32>>> = Vec::with_capacity(lmax + 1);
        #[allow(clippy::needless_range_loop)]
        for level in 0..=lmax {
            let expected = checked_pow(k, lmax - level + 1)?;
            if level > 0 && children[level].len() != expected {
                return Err(HierarchyError::LevelSize { level, expected, found: children[level].len() });
            }
            parent.push(vec![None; expected]);
        }
        for level in 1..=lmax {
            let below = parent[level - 1].len();
            for (i, kids) in children[level].iter().enumerate() {
                let concept = ConceptId::new(level as u32, i as u32);
                if kids.len() != k {
                    return Err(HierarchyError::Degree { concept, expected: k, found: kids.len() });
                }
                for &child in kids {
                    if child as usize >= below {
                        return Err(HierarchyError::ChildOutOfRange { concept, child, level: level - 1 });
                    }
                    let slot = &mut parent[level - 1][child as usize];
                    if let Some(first) = *slot {
                        return Err(HierarchyError::SharedChild {
                            level: level - 1,
                            child,
                            first: ConceptId::new(level as u32, first),
                            second: concept,
                        });
                    }
                    *slot = Some(i as u32);
                }
            }
        }

        let mut leaves: Vec<Vec<Vec<u32>>> = vec![(0..parent[0].len() as u32).map(|i| vec![i]).collect()];
        for level in 1..=lmax {
            let layer = children[level]
                .iter()
                .map(|kids| {
                    let mut acc: Vec<u32> =
                        kids.iter().flat_map(|&c| leaves[level - 1][c as usize].iter().copied()).collect();
                    acc.sort_unstable();
                    acc
                })
                .collect();
            leaves.push(layer);
        }
        Ok(Self { k, lmax, n, children, parent, leaves })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn lmax(&self) -> usize {
        self.lmax
    }

    /// Size of the level-0 universe.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of concepts on `level`.
    pub fn level_size(&self, level: usize) -> usize {
        self.parent.get(level).map_or(0, Vec::len)
    }

    pub fn contains(&self, c: ConceptId) -> bool {
        (c.level as usize) <= self.lmax && (c.index as usize) < self.level_size(c.level as usize)
    }

    fn check(&self, c: ConceptId) -> Result<(), HierarchyError> {
        if self.contains(c) {
            Ok(())
        } else {
            Err(HierarchyError::UnknownConcept(c))
        }
    }

    /// All concepts on `level`, in index order.
    pub fn level(&self, level: usize) -> impl Iterator<Item = ConceptId> + '_ {
        (0..self.level_size(level) as u32).map(move |i| ConceptId::new(level as u32, i))
    }

    /// All concepts, level by level.
    pub fn concepts(&self) -> impl Iterator<Item = ConceptId> + '_ {
        (0..=self.lmax).flat_map(move |l| self.level(l))
    }

    /// Concepts at levels `>= 1`.
    pub fn internal_concepts(&self) -> impl Iterator<Item = ConceptId> + '_ {
        (1..=self.lmax).flat_map(move |l| self.level(l))
    }

    pub fn concept_count(&self) -> usize {
        (0..=self.lmax).map(|l| self.level_size(l)).sum()
    }

    pub fn children(&self, c: ConceptId) -> Result<Vec<ConceptId>, HierarchyError> {
        self.check(c)?;
        Ok(self.children[c.level as usize]
            .get(c.index as usize)
            .map(|kids| kids.iter().map(|&i| ConceptId::new(c.level - 1, i)).collect())
            .unwrap_or_default())
    }

    pub(crate) fn child_indices(&self, c: ConceptId) -> &[u32] {
        &self.children[c.level as usize][c.index as usize]
    }

    pub fn parent(&self, c: ConceptId) -> Result<Option<ConceptId>, HierarchyError> {
        self.check(c)?;
        Ok(self.parent[c.level as usize][c.index as usize].map(|p| ConceptId::new(c.level + 1, p)))
    }

    /// Whether `a` equals `c` or lies above it in the tree.
    pub fn is_ancestor_or_self(&self, a: ConceptId, c: ConceptId) -> bool {
        if !self.contains(a) || !self.contains(c) || a.level < c.level {
            return false;
        }
        let mut cur = c;
        while cur.level < a.level {
            match self.parent[cur.level as usize][cur.index as usize] {
                Some(p) => cur = ConceptId::new(cur.level + 1, p),
                None => return false,
            }
        }
        cur == a
    }

    /// Level-0 descendants of `c`.
    pub fn leaves(&self, c: ConceptId) -> Result<BTreeSet<ConceptId>, HierarchyError> {
        Ok(self.leaf_indices(c)?.iter().map(|&i| ConceptId::leaf(i)).collect())
    }

    /// Sorted universe indices of the leaves of `c`.
    pub fn leaf_indices(&self, c: ConceptId) -> Result<&[u32], HierarchyError> {
        self.check(c)?;
        Ok(&self.leaves[c.level as usize][c.index as usize])
    }

    /// Every concept in the subtree rooted at `c`, including `c`.
    pub fn descendants(&self, c: ConceptId) -> Result<BTreeSet<ConceptId>, HierarchyError> {
        self.check(c)?;
        let mut out = BTreeSet::new();
        let mut stack = vec![c];
        while let Some(cur) = stack.pop() {
            out.insert(cur);
            if cur.level > 0 {
                stack.extend(self.child_indices(cur).iter().map(|&i| ConceptId::new(cur.level - 1, i)));
            }
        }
        Ok(out)
    }

    fn leaf_mask(&self, b: &[u32]) -> Result<Vec<bool>, HierarchyError> {
        let mut mask = vec![false; self.n];
        for &i in b {
            if i as usize >= self.n {
                return Err(HierarchyError::NotLevelZero(ConceptId::leaf(i)));
            }
            mask[i as usize] = true;
        }
        Ok(mask)
    }

    /// The concepts supported by the level-0 set `b` at ratio `r`.
    ///
    /// Level 0 keeps the members of `b` that are hierarchy concepts; a level-`l`
    /// concept is supported when at least `r * k` of its children are.
    pub fn supported(&self, b: &[u32], r: Fraction) -> Result<SupportedSet, HierarchyError> {
        let mask = self.leaf_mask(b)?;
        let mut per_level: Vec<Vec<bool>> = Vec::with_capacity(self.lmax + 1);
        per_level.push((0..self.level_size(0)).map(|i| mask[i]).collect());
        for level in 1..=self.lmax {
            let below = &per_level[level - 1];
            let row = self.children[level]
                .iter()
                .map(|kids| {
                    let count = kids.iter().filter(|&&c| below[c as usize]).count();
                    r.count_reaches(count, self.k)
                })
                .collect();
            per_level.push(row);
        }
        Ok(SupportedSet { per_level })
    }

    /// Support test for one concept, walking only its subtree.
    pub fn is_supported(&self, c: ConceptId, b: &[u32], r: Fraction) -> Result<bool, HierarchyError> {
        self.check(c)?;
        let mask = self.leaf_mask(b)?;
        Ok(self.supported_rec(c, &mask, r))
    }

    fn supported_rec(&self, c: ConceptId, mask: &[bool], r: Fraction) -> bool {
        if c.level == 0 {
            return mask[c.index as usize];
        }
        let count = self
            .child_indices(c)
            .iter()
            .filter(|&&i| self.supported_rec(ConceptId::new(c.level - 1, i), mask, r))
            .count();
        r.count_reaches(count, self.k)
    }

    /// Noisy subsampling of `leaves(c)`: a leaf marks itself; an internal
    /// concept picks `ceil(p * k)` children uniformly at random and recurses.
    ///
    /// Returns sorted universe indices; exactly `ceil(p k)^level(c)` of them.
    pub fn mark<R: Rng + ?Sized>(&self, c: ConceptId, p: Fraction, rng: &mut R) -> Result<Vec<u32>, HierarchyError> {
        self.check(c)?;
        if p == Fraction::ZERO {
            return Err(HierarchyError::MarkProbability(p.to_f64()));
        }
        let take = p.ceil_mul(self.k);
        let mut out = Vec::with_capacity(take.pow(c.level));
        self.mark_rec(c, take, rng, &mut out);
        out.sort_unstable();
        Ok(out)
    }

    fn mark_rec<R: Rng + ?Sized>(&self, c: ConceptId, take: usize, rng: &mut R, out: &mut Vec<u32>) {
        if c.level == 0 {
            out.push(c.index);
            return;
        }
        let kids = self.child_indices(c);
        if take >= kids.len() {
            for &i in kids {
                self.mark_rec(ConceptId::new(c.level - 1, i), take, rng, out);
            }
            return;
        }
        for pos in sample(rng, kids.len(), take).into_iter() {
            self.mark_rec(ConceptId::new(c.level - 1, kids[pos]), take, rng, out);
        }
    }

    /// Text form: a `k/lmax/n` header followed by one `concept` record per
    /// concept at levels `>= 1`.
    pub fn to_text(&self) -> String {
        let mut s = String::from("# concept hierarchy v1\n");
        s.push_str(&format!("k {}\nlmax {}\nn {}\n", self.k, self.lmax, self.n));
        for level in (1..=self.lmax).rev() {
            for (i, kids) in self.children[level].iter().enumerate() {
                let list: Vec<String> = kids.iter().map(u32::to_string).collect();
                s.push_str(&format!("concept {level} {i} : {}\n", list.join(" ")));
            }
        }
        s
    }

    /// Parses [`ConceptHierarchy::to_text`] output and validates every invariant.
    pub fn from_text(text: &str) -> Result<Self, HierarchyError> {
        let (mut k, mut lmax, mut n) = (None, None, None);
        let mut records: Vec<(usize, usize, usize, Vec<u32>)> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let line_no = lineno + 1;
            let err = |msg: &str| HierarchyError::Parse { line: line_no, msg: msg.to_string() };
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let key = parts.next().unwrap_or_default();
            let num = |s: Option<&str>| -> Result<usize, HierarchyError> {
                s.ok_or_else(|| err("missing value"))?.parse().map_err(|_| err("expected an integer"))
            };
            match key {
                "k" => k = Some(num(parts.next())?),
                "lmax" => lmax = Some(num(parts.next())?),
                "n" => n = Some(num(parts.next())?),
                "concept" => {
                    let level = num(parts.next())?;
                    let index = num(parts.next())?;
                    if parts.next() != Some(":") {
                        return Err(err("expected ':' after concept index"));
                    }
                    let kids = parts
                        .map(|p| p.parse::<u32>().map_err(|_| err("bad child index")))
                        .collect::<Result<Vec<_>, _>>()?;
                    records.push((line_no, level, index, kids));
                }
                other => return Err(err(&format!("unknown record '{other}'"))),
            }
        }
        let missing = |what: &str| HierarchyError::Parse { line: 0, msg: format!("missing '{what}' header") };
        let k = k.ok_or_else(|| missing("k"))?;
        let lmax = lmax.ok_or_else(|| missing("lmax"))?;
        let n = n.ok_or_else(|| missing("n"))?;
        Self::check_shape(k, lmax, n)?;
        let mut children: Vec<Vec<Option<Vec<u32>>>> =
            (0..=lmax).map(|l| vec![None; if l == 0 { 0 } else { k.pow((lmax - l + 1) as u32) }]).collect();
        for (line, level, index, kids) in records {
            if level == 0 || level > lmax || index >= children[level].len() {
                return Err(HierarchyError::Parse { line, msg: format!("concept ({level}, {index}) out of range") });
            }
            if children[level][index].replace(kids).is_some() {
                return Err(HierarchyError::Parse { line, msg: format!("duplicate concept ({level}, {index})") });
            }
        }
        let mut resolved = vec![Vec::new()];
        for (level, row) in children.into_iter().enumerate().skip(1) {
            let mut out = Vec::with_capacity(row.len());
            for (i, kids) in row.into_iter().enumerate() {
                out.push(kids.ok_or(HierarchyError::UnknownConcept(ConceptId::new(level as u32, i as u32)))?);
            }
            resolved.push(out);
        }
        Self::from_children(k, lmax, n, resolved)
    }
}

/// Result of [`ConceptHierarchy::supported`], sliced by level.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SupportedSet {
    per_level: Vec<Vec<bool>>,
}

impl SupportedSet {
    pub fn contains(&self, c: ConceptId) -> bool {
        self.per_level
            .get(c.level as usize)
            .and_then(|row| row.get(c.index as usize))
            .copied()
            .unwrap_or(false)
    }

    /// Supported concepts on one level.
    pub fn level(&self, level: usize) -> BTreeSet<ConceptId> {
        self.per_level
            .get(level)
            .map(|row| {
                row.iter()
                    .enumerate()
                    .filter(|(_, &on)| on)
                    .map(|(i, _)| ConceptId::new(level as u32, i as u32))
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn to_set(&self) -> BTreeSet<ConceptId> {
        (0..self.per_level.len()).flat_map(|l| self.level(l)).collect()
    }

    pub fn len(&self) -> usize {
        self.per_level.iter().map(|row| row.iter().filter(|&&b| b).count()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Whether every member of `self` is also in `other`.
    pub fn is_subset(&self, other: &SupportedSet) -> bool {
        self.per_level
            .iter()
            .zip(&other.per_level)
            .all(|(a, b)| a.iter().zip(b).all(|(&x, &y)| !x || y))
    }
}
