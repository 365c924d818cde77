//! Endorsements, naive citations and the limited naivety criterion (LNC).

use std::collections::{BTreeSet, HashMap};

use fixedbitset::FixedBitSet;
use serde::{Deserialize, Serialize};

use crate::dag::{ProtocolState, Seen};
use crate::ids::{digest64, UnitHash, ValidatorId, WeightMap};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Endorsement {
    pub endorser: ValidatorId,
    pub target: UnitHash,
}

impl Endorsement {
    /// `endorser:u32 target:u64`, little-endian.
    pub fn encode(&self) -> [u8; 12] {
        let mut out = [0u8; 12];
        out[..4].copy_from_slice(&self.endorser.0.to_le_bytes());
        out[4..].copy_from_slice(&self.target.0.to_le_bytes());
        out
    }

    pub fn digest(&self) -> u64 {
        digest64(&self.encode())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EndorsementMode {
    Off,
    Naive,
    Refined,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RecordOutcome {
    Recorded,
    Duplicate,
    NewlyEndorsed,
}

/// Endorsements seen by one validator. Targets need not be known units
/// yet; their status applies once they arrive.
#[derive(Clone, Debug)]
pub struct EndorsementLedger {
    weights: WeightMap,
    endorsers: HashMap<UnitHash, (BTreeSet<ValidatorId>, u64)>,
    endorsed: Vec<UnitHash>,
}

impl EndorsementLedger {
    pub fn new(weights: WeightMap) -> EndorsementLedger {
        EndorsementLedger { weights, endorsers: HashMap::new(), endorsed: Vec::new() }
    }

    pub fn record(&mut self, e: Endorsement) -> RecordOutcome {
        let entry = self.endorsers.entry(e.target).or_default();
        if !entry.0.insert(e.endorser) {
            return RecordOutcome::Duplicate;
        }
        let before = self.weights.is_majority(entry.1);
        entry.1 += self.weights.weight(e.endorser);
        if !before && self.weights.is_majority(entry.1) {
            self.endorsed.push(e.target);
            RecordOutcome::NewlyEndorsed
        } else {
            RecordOutcome::Recorded
        }
    }

    pub fn is_endorsed(&self, h: UnitHash) -> bool {
        self.endorsers.get(&h).is_some_and(|(_, w)| self.weights.is_majority(*w))
    }

    pub fn endorsers(&self, h: UnitHash) -> impl Iterator<Item = ValidatorId> + '_ {
        self.endorsers.get(&h).into_iter().flat_map(|(s, _)| s.iter().copied())
    }

    pub fn has_endorsed(&self, v: ValidatorId, h: UnitHash) -> bool {
        self.endorsers.get(&h).is_some_and(|(s, _)| s.contains(&v))
    }

    /// Endorsed targets in the order they became endorsed.
    pub fn endorsed(&self) -> &[UnitHash] {
        &self.endorsed
    }

    pub fn clear(&mut self) {
        self.endorsers.clear();
        self.endorsed.clear();
    }
}

/// Naive strategy: endorse unless the sender is a known equivocator.
pub fn should_endorse_naive(equivocators: &BTreeSet<ValidatorId>, sender: ValidatorId) -> bool {
    !equivocators.contains(&sender)
}

/// Refined strategy for the unit at local index `u` of `state`. The sender
/// must not be a known equivocator, and `u` must bring in a unit by some
/// known equivocator `W` that the sender's previous unit did not have,
/// while `W` does not equivocate below `u` itself.
pub fn should_endorse_refined(state: &ProtocolState, equivocators: &BTreeSet<ValidatorId>, u: usize) -> bool {
    let unit = state.unit_at(u);
    if equivocators.contains(&unit.sender()) {
        return false;
    }
    let pano = state.panorama(u);
    let prev = match pano[unit.sender().index()] {
        Seen::Correct(p) => Some(p),
        _ => None,
    };
    let below = state.below(u);
    equivocators.iter().any(|w| {
        if pano[w.index()] == Seen::Faulty {
            return false;
        }
        state.units_by(*w).iter().any(|x| below.contains(*x) && prev.is_none_or(|p| !state.le(*x, p)))
    })
}

/// `u >ₙ v`: `v < u` with no endorsed `w` such that `u > w ≥ v`.
pub fn naively_cites(state: &ProtocolState, endorsed: &FixedBitSet, u: usize, v: usize) -> bool {
    let below = state.below(u);
    if !below.contains(v) {
        return false;
    }
    !below.ones().any(|w| endorsed.contains(w) && state.le(v, w))
}

/// Union of `D̄(w)` over `w` in `set`.
fn closed_union(state: &ProtocolState, set: &FixedBitSet) -> FixedBitSet {
    let mut out = FixedBitSet::with_capacity(state.len());
    // Highest first, so that most lower units are skipped.
    let mut ws: Vec<usize> = set.ones().collect();
    ws.reverse();
    for w in ws {
        if out.contains(w) {
            continue;
        }
        out.union_with(state.below(w));
        out.insert(w);
    }
    out
}

/// Units by `sender` in `below`, in index order.
fn own_units(state: &ProtocolState, sender: ValidatorId, below: &FixedBitSet) -> Vec<usize> {
    state.units_by(sender).iter().copied().filter(|x| below.contains(*x)).collect()
}

/// Finds an LNC violation for a unit by `sender` whose strict downset is
/// `below` (the unit itself may not be in `state` yet). Returns a pair of
/// incomparable same-sender units that the sender's units, up to and
/// including this one, cite naively.
pub fn lnc_violation(
    state: &ProtocolState,
    endorsed: &FixedBitSet,
    sender: ValidatorId,
    below: &FixedBitSet,
) -> Option<(usize, usize)> {
    let faulty: Vec<ValidatorId> = state.equivocators().into_iter().collect();
    if faulty.is_empty() {
        return None;
    }
    let mut f_bits = FixedBitSet::with_capacity(state.len());
    for w in &faulty {
        for x in state.units_by(*w) {
            f_bits.insert(*x);
        }
    }
    f_bits.intersect_with(below);
    if f_bits.is_clear() {
        return None;
    }
    let own = own_units(state, sender, below);
    let chain = own.windows(2).all(|w| state.le(w[0], w[1]));
    let mut naive: Vec<usize> = Vec::new();
    if chain {
        // Along a chain a faulty unit is cited naively by some own unit iff
        // it is by the first own unit above it, and only endorsed units that
        // first appear at that step can cover it.
        let mut prev = FixedBitSet::with_capacity(state.len());
        let steps = own.iter().map(|x| state.below(*x)).chain(std::iter::once(below));
        for b in steps {
            let mut delta = b.clone();
            delta.difference_with(&prev);
            let mut fresh = delta.clone();
            fresh.intersect_with(&f_bits);
            if !fresh.is_clear() {
                let mut top = delta.clone();
                top.intersect_with(endorsed);
                fresh.difference_with(&closed_union(state, &top));
                naive.extend(fresh.ones());
            }
            prev.union_with(b);
        }
    } else {
        let mut seen = FixedBitSet::with_capacity(state.len());
        let steps = own.iter().map(|x| state.below(*x)).chain(std::iter::once(below));
        for b in steps {
            let mut top = b.clone();
            top.intersect_with(endorsed);
            let mut fresh = b.clone();
            fresh.intersect_with(&f_bits);
            fresh.difference_with(&closed_union(state, &top));
            fresh.difference_with(&seen);
            seen.union_with(&fresh);
            naive.extend(fresh.ones());
        }
    }
    naive.sort_unstable();
    naive.dedup();
    for w in faulty {
        let mine: Vec<usize> = naive.iter().copied().filter(|v| state.unit_at(*v).sender() == w).collect();
        if let Some(p) = mine.windows(2).find(|p| !state.le(p[0], p[1])) {
            // Consecutive comparability fails; report an incomparable pair.
            let (a, b) = (p[0], p[1]);
            if !state.le(b, a) {
                return Some((a, b));
            }
            return mine
                .iter()
                .flat_map(|x| mine.iter().map(move |y| (*x, *y)))
                .find(|(x, y)| !state.le(*x, *y) && !state.le(*y, *x));
        }
    }
    None
}

/// LNC for a unit already in `state`.
pub fn lnc_check(state: &ProtocolState, endorsed: &FixedBitSet, u: usize) -> bool {
    let sender = state.unit_at(u).sender();
    let mut below = state.below(u).clone();
    below.grow(state.len());
    // Own units must include those only reachable through `u` itself.
    lnc_violation(state, endorsed, sender, &below).is_none()
}

/// Endorsed status as a bitset over `state`'s local indices.
pub fn endorsed_bits(state: &ProtocolState, ledger: &EndorsementLedger) -> FixedBitSet {
    let mut bits = FixedBitSet::with_capacity(state.len());
    for h in ledger.endorsed() {
        if let Some(i) = state.idx(*h) {
            bits.insert(i);
        }
    }
    bits
}
