//! Summits, the FINAL predicate and confidence levels.
//!
//! Quorums and thresholds are weights. In unweighted runs every weight is 1
//! and they are plain counts.

use std::collections::BTreeSet;

use crate::dag::ProtocolState;
use crate::ids::{BlockHash, UnitHash, ValidatorId};

/// Summit heights are capped here. With a quorum no larger than one
/// validator's weight every level can repeat forever.
pub const MAX_HEIGHT: usize = 64;

/// Output of the greedy summit search.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Summit {
    pub block: BlockHash,
    pub q: u64,
    /// `starts[l][v]`: position in `v`'s chain where level `l` begins. Each
    /// level of a sender runs from there to the sender's latest unit.
    starts: Vec<Vec<Option<usize>>>,
    /// Smallest density over all units in levels 1 and up, so the summit
    /// is also a `(min_density, k)` summit.
    min_density: u64,
}

impl Summit {
    /// `k`. A summit with an empty `C₀` has height 0.
    pub fn height(&self) -> usize {
        self.starts.len() - 1
    }

    pub fn min_density(&self) -> u64 {
        self.min_density
    }

    pub fn senders(&self, level: usize) -> BTreeSet<ValidatorId> {
        self.starts[level].iter().enumerate().filter(|(_, s)| s.is_some()).map(|(v, _)| ValidatorId::from(v)).collect()
    }

    /// Local indices of the units of each level.
    pub fn level_indices(&self, state: &ProtocolState) -> Vec<Vec<usize>> {
        self.starts
            .iter()
            .map(|lv| {
                let mut out = Vec::new();
                for (v, s) in lv.iter().enumerate() {
                    if let Some(s) = s {
                        out.extend_from_slice(&state.units_by(ValidatorId::from(v))[*s..]);
                    }
                }
                out.sort_unstable();
                out
            })
            .collect()
    }

    pub fn levels(&self, state: &ProtocolState) -> Vec<BTreeSet<UnitHash>> {
        self.level_indices(state).into_iter().map(|lv| lv.into_iter().map(|i| state.hash_at(i)).collect()).collect()
    }
}

/// The greedy maximal `(q, k)`-summit for `b`.
pub fn summit(state: &ProtocolState, b: BlockHash, q: u64) -> Summit {
    summit_with_limit(state, b, q, MAX_HEIGHT)
}

/// As [`summit`], stopping once the height reaches `limit`.
pub fn summit_with_limit(state: &ProtocolState, b: BlockHash, q: u64, limit: usize) -> Summit {
    let limit = limit.min(MAX_HEIGHT);
    let weights = state.weights();
    let n = weights.n();
    let tree = state.tree();

    let mut level0 = vec![None; n];
    for v in weights.ids() {
        if state.is_equivocator(v) {
            continue;
        }
        let chain = state.units_by(v);
        for pos in (0..chain.len()).rev() {
            if tree.is_descendant(state.vote_at(chain[pos]), b) {
                level0[v.index()] = Some(pos);
            } else {
                break;
            }
        }
    }
    let mut starts = vec![level0];
    let mut min_density = u64::MAX;

    while starts.len() <= limit {
        let prev = starts.last().expect("non-empty");
        let mut alive: Vec<bool> = prev.iter().map(Option::is_some).collect();
        let (next, dens) = loop {
            let total: u64 = (0..n).filter(|v| alive[*v]).map(|v| weights.as_slice()[v]).sum();
            if total < q {
                break (vec![None; n], u64::MAX);
            }
            let lows: Vec<(usize, u64)> = (0..n)
                .filter(|v| alive[*v])
                .map(|v| (state.units_by(ValidatorId::from(v))[prev[v].unwrap()], weights.as_slice()[v]))
                .collect();
            let density = |u: usize| -> u64 { lows.iter().filter(|(low, _)| state.le(*low, u)).map(|(_, w)| *w).sum() };
            let mut next = vec![None; n];
            let mut dens = u64::MAX;
            let mut changed = false;
            for v in 0..n {
                if !alive[v] {
                    continue;
                }
                let chain = state.units_by(ValidatorId::from(v));
                let from = prev[v].unwrap();
                if density(chain[chain.len() - 1]) < q {
                    alive[v] = false;
                    changed = true;
                    continue;
                }
                // Density grows along a chain, so the qualifying units form
                // a suffix; find where it starts.
                let (mut lo, mut hi) = (from, chain.len() - 1);
                while lo < hi {
                    let mid = (lo + hi) / 2;
                    if density(chain[mid]) >= q {
                        hi = mid;
                    } else {
                        lo = mid + 1;
                    }
                }
                next[v] = Some(lo);
                dens = dens.min(density(chain[lo]));
            }
            if !changed {
                break (next, dens);
            }
        };
        if next.iter().all(Option::is_none) {
            break;
        }
        min_density = min_density.min(dens);
        starts.push(next);
    }
    if starts.len() == 1 {
        min_density = 0;
    }
    Summit { block: b, q, starts, min_density }
}

/// `(2q − N)(1 − 2⁻ᵏ) > t`, exactly. Heights above 64 are treated as 64.
pub fn final_predicate(total: u64, q: u64, k: u32, t: u64) -> bool {
    if 2 * q as u128 <= total as u128 {
        return false;
    }
    let a = 2 * q as u128 - total as u128;
    let k = k.min(64);
    a * ((1u128 << k) - 1) > (t as u128) * (1u128 << k)
}

/// Largest `t` with `final_predicate(total, q, k, t)`, or −1.
pub fn max_threshold(total: u64, q: u64, k: u32) -> i64 {
    if 2 * q as u128 <= total as u128 {
        return -1;
    }
    let a = 2 * q as u128 - total as u128;
    let k = k.min(64);
    let num = a * ((1u128 << k) - 1);
    if num == 0 {
        return -1;
    }
    ((num - 1) >> k) as i64
}

/// Smallest height making `(q, t)` final, if any.
pub fn height_needed(total: u64, q: u64, t: u64) -> Option<u32> {
    (1..=64).find(|k| final_predicate(total, q, *k, t))
}

/// `FINAL(b, σ, t)`.
pub fn is_final(state: &ProtocolState, b: BlockHash, t: u64) -> bool {
    let total = state.weights().total();
    let mut q = (total + t).div_ceil(2);
    while q <= total {
        let Some(need) = height_needed(total, q, t) else {
            q += 1;
            continue;
        };
        let s = summit_with_limit(state, b, q, need as usize);
        let k = s.height() as u32;
        if k == 0 {
            return false;
        }
        if k >= need {
            return true;
        }
        // The same levels form a summit at the larger quorum.
        let qs = s.min_density().min(total);
        if qs > q && final_predicate(total, qs, k, t) {
            return true;
        }
        q = qs.max(q) + 1;
    }
    false
}

/// Largest `t` with `FINAL(b, σ, t)`, or −1.
pub fn confidence(state: &ProtocolState, b: BlockHash) -> i64 {
    let total = state.weights().total();
    let mut best = -1i64;
    let mut q = total / 2 + 1;
    while q <= total {
        // Beyond this height `max_threshold` is already 2q − N − 1.
        let a = 2 * q - total;
        let limit = (64 - a.leading_zeros()) as usize + 1;
        let s = summit_with_limit(state, b, q, limit);
        let k = s.height() as u32;
        if k == 0 {
            break;
        }
        let qs = s.min_density().clamp(q, total);
        best = best.max(max_threshold(total, qs, k));
        q = qs + 1;
    }
    best
}

/// Per-threshold finalized chains in one view, grown incrementally.
#[derive(Clone, Debug)]
pub struct FinalityTracker {
    thresholds: Vec<u64>,
    chains: Vec<Vec<BlockHash>>,
}

impl FinalityTracker {
    /// Every chain starts at `root`.
    pub fn new(thresholds: &[u64], root: BlockHash) -> FinalityTracker {
        let mut thresholds = thresholds.to_vec();
        thresholds.sort_unstable();
        thresholds.dedup();
        let chains = vec![vec![root]; thresholds.len()];
        FinalityTracker { thresholds, chains }
    }

    pub fn thresholds(&self) -> &[u64] {
        &self.thresholds
    }

    pub fn chain(&self, t: u64) -> Option<&[BlockHash]> {
        let i = self.thresholds.iter().position(|x| *x == t)?;
        Some(&self.chains[i])
    }

    pub fn chains(&self) -> impl Iterator<Item = (u64, &[BlockHash])> + '_ {
        self.thresholds.iter().copied().zip(self.chains.iter().map(Vec::as_slice))
    }

    /// Extends every chain as far as `state` allows and returns the new
    /// `(threshold, block)` pairs in order. Chains only grow; a block is
    /// never taken back.
    pub fn update(&mut self, state: &ProtocolState) -> Vec<(u64, BlockHash)> {
        let tree = state.tree();
        let mut out = Vec::new();
        for ti in (0..self.thresholds.len()).rev() {
            let t = self.thresholds[ti];
            // A block final at a higher threshold is final here too.
            if ti + 1 < self.chains.len() && self.chains[ti + 1].len() > self.chains[ti].len() {
                let higher = self.chains[ti + 1].clone();
                let mine = &self.chains[ti];
                if higher[..mine.len()] == mine[..] {
                    for b in &higher[mine.len()..] {
                        out.push((t, *b));
                    }
                    self.chains[ti] = higher;
                }
            }
            loop {
                let tip = *self.chains[ti].last().expect("root");
                if !tree.contains(tip) {
                    break;
                }
                let mut kids: Vec<BlockHash> = tree.children(tip).to_vec();
                kids.sort_unstable();
                match kids.into_iter().find(|c| is_final(state, *c, t)) {
                    Some(c) => {
                        self.chains[ti].push(c);
                        out.push((t, c));
                    }
                    None => break,
                }
            }
        }
        out.sort_by_key(|(t, _)| *t);
        out
    }

    /// Appends `blocks` to the chain for `t` without checking.
    pub fn extend_unchecked(&mut self, t: u64, blocks: &[BlockHash]) {
        if let Some(i) = self.thresholds.iter().position(|x| *x == t) {
            self.chains[i].extend_from_slice(blocks);
        }
    }
}

/// Checks the four summit conditions directly from their definitions.
/// Returns a description of the first failure.
pub fn verify_summit(state: &ProtocolState, s: &Summit) -> Result<(), String> {
    let levels = s.level_indices(state);
    let tree = state.tree();
    let weights = state.weights();
    for l in 1..levels.len() {
        let prev: BTreeSet<usize> = levels[l - 1].iter().copied().collect();
        if !levels[l].iter().all(|u| prev.contains(u)) {
            return Err(format!("level {l} is not nested in level {}", l - 1));
        }
    }
    for &u in &levels[0] {
        if !tree.is_descendant(state.vote_at(u), s.block) {
            return Err(format!("unit {:?} does not vote for the block", state.hash_at(u)));
        }
        if state.is_equivocator(state.unit_at(u).sender()) {
            return Err(format!("sender of {:?} equivocates", state.hash_at(u)));
        }
    }
    for (l, lv) in levels.iter().enumerate() {
        let set: BTreeSet<usize> = lv.iter().copied().collect();
        for &a in lv {
            for &c in lv {
                if state.unit_at(a).sender() != state.unit_at(c).sender() || !state.le(a, c) {
                    continue;
                }
                for &m in state.units_by(state.unit_at(a).sender()) {
                    if state.le(a, m) && state.le(m, c) && !set.contains(&m) {
                        return Err(format!("level {l} is not convex"));
                    }
                }
            }
        }
    }
    for l in 1..levels.len() {
        let senders: BTreeSet<ValidatorId> = levels[l].iter().map(|u| state.unit_at(*u).sender()).collect();
        let prime: Vec<usize> =
            levels[l - 1].iter().copied().filter(|u| senders.contains(&state.unit_at(*u).sender())).collect();
        for &u in &levels[l] {
            let seen: BTreeSet<ValidatorId> =
                prime.iter().filter(|p| state.le(**p, u)).map(|p| state.unit_at(*p).sender()).collect();
            let w = weights.sum(&seen);
            if w < s.q {
                return Err(format!("unit {:?} at level {l} has density {w} < {}", state.hash_at(u), s.q));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixture::Fixture;
    use proptest::prelude::*;

    #[test]
    fn final_arithmetic() {
        assert!(final_predicate(4, 3, 2, 1));
        assert!(final_predicate(10, 8, 3, 5));
        assert!(!final_predicate(10, 8, 3, 6));
        for t in 0..20 {
            for q in 0..=10 {
                assert!(!final_predicate(10, q, 0, t));
            }
        }
        assert_eq!(max_threshold(10, 8, 3), 5);
        assert_eq!(max_threshold(4, 4, 64), 3);
        assert_eq!(max_threshold(4, 3, 0), -1);
        assert_eq!(height_needed(4, 3, 1), Some(2));
    }

    /// Below `⌈(N+t)/2⌉` no height is enough.
    #[test]
    fn scan_lower_bound_is_safe() {
        for total in 1..30u64 {
            for t in 0..total {
                for q in 0..(total + t).div_ceil(2) {
                    assert!(!final_predicate(total, q, 64, t), "{total} {q} {t}");
                }
            }
        }
    }

    proptest! {
        #[test]
        fn max_threshold_matches_scan(total in 1u64..60, q in 0u64..60, k in 0u32..70) {
            let q = q.min(total);
            let scan = (0..total + 1).rev().find(|t| final_predicate(total, q, k, *t)).map_or(-1, |t| t as i64);
            prop_assert_eq!(max_threshold(total, q, k), scan);
        }

        #[test]
        fn greedy_summits_are_valid(seed in any::<u64>()) {
            let fx = Fixture::random(seed, 4, 16);
            let built = fx.build().unwrap();
            let st = &built.state;
            let mut targets = vec![st.genesis()];
            targets.extend(built.blocks.iter().copied());
            for b in targets {
                for q in 1..=4 {
                    let s = summit(st, b, q);
                    prop_assert!(verify_summit(st, &s).is_ok(), "{:?}", verify_summit(st, &s));
                }
            }
        }
    }

    /// Three rounds in which every unit cites all units of the round before.
    fn rounds(n: usize, rounds: usize) -> Fixture {
        let mut text = format!("n = {n}\n");
        text.push_str("unit p 0 block B G\n");
        for r in 0..rounds {
            for v in 0..n {
                text.push_str(&format!("unit r{r}v{v} {v} cites"));
                if r == 0 {
                    text.push_str(" p");
                } else {
                    for w in 0..n {
                        text.push_str(&format!(" r{}v{w}", r - 1));
                    }
                }
                text.push('\n');
            }
        }
        Fixture::parse(&text).unwrap()
    }

    #[test]
    fn unanimous_rounds_give_tall_summit() {
        let fx = rounds(4, 3);
        let built = fx.build().unwrap();
        let b = built.block_by_name(&fx, "B").unwrap();
        let s = summit(&built.state, b, 4);
        assert!(s.height() >= 2);
        for l in 0..=2 {
            assert_eq!(s.senders(l).len(), 4);
        }
        verify_summit(&built.state, &s).unwrap();
        // r0 sees only p, so r1 is the first unit with density 4 over C₀.
        let levels = s.levels(&built.state);
        assert_eq!(levels.len(), 3);
        assert!(is_final(&built.state, b, 1));
        assert_eq!(confidence(&built.state, b), 2);
    }

    #[test]
    fn nothing_votes_for_block() {
        let fx = Fixture::parse("n = 2\nunit a 0 block B G\nunit b 1 block C G\n").unwrap();
        let built = fx.build().unwrap();
        // b does not see a, so only a votes for B.
        let bb = built.block_by_name(&fx, "B").unwrap();
        let other = Fixture::parse("n = 2\nunit x 0\n").unwrap().build().unwrap();
        let s = summit(&other.state, bb, 1);
        assert_eq!(s.height(), 0);
        assert!(s.levels(&other.state)[0].is_empty());
        assert_eq!(confidence(&other.state, bb), -1);
        assert!(!is_final(&built.state, bb, 0));
    }

    #[test]
    fn tracker_grows_chains() {
        let fx = rounds(4, 4);
        let built = fx.build().unwrap();
        let mut tr = FinalityTracker::new(&[0, 1, 2, 3], built.state.genesis());
        let new = tr.update(&built.state);
        let b = built.block_by_name(&fx, "B").unwrap();
        assert!(new.contains(&(0, b)));
        assert_eq!(tr.chain(0).unwrap(), &[built.state.genesis(), b]);
        // Confidence 3 would need q = 4 and (8-4)(1-2^-k) > 3, i.e. k > 2.
        let c = confidence(&built.state, b);
        for t in 0..4u64 {
            let has = tr.chain(t).unwrap().len() == 2;
            assert_eq!(has, (t as i64) <= c, "t={t} c={c}");
        }
    }
}
