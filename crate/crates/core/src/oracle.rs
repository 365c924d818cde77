//! Brute-force summit enumeration for small fixtures, used to check the
//! greedy search.
//!
//! Everything here is recomputed from the fixture's citation lists: its own
//! reachability, equivocator detection, latest messages and GHOST votes.
//! Level sets are bitmasks over fixture units.
//!
//! `R_i` is the set of all level-`i` sets over all summits of height at
//! least `i`. A level-`(i+1)` set is itself a valid level-`i` set, so
//! `R_{i+1} ⊆ R_i` and `R_{i+1}` can be computed by testing pairs inside
//! `R_i`. The sequence either empties or stops changing, in which case
//! summits of every height exist.
//!
//! The greedy search starts each sender's level 0 from its latest unit, so
//! the enumeration does the same: a sender's level-0 run must end at its
//! latest unit. Deeper levels may be any convex subsets. Runs that stop
//! earlier satisfy the summit conditions too but are outside the greedy
//! search's reach; they are counted separately.

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

use crate::finality::{summit, verify_summit, MAX_HEIGHT};
use crate::fixture::{Fixture, FixtureError, GENESIS_NAME};
use crate::ids::BlockHash;

pub const MAX_FIXTURE_UNITS: usize = 12;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("fixture has {0} units; the oracle handles at most {MAX_FIXTURE_UNITS}")]
    TooLarge(usize),
    #[error("unknown block `{0}`")]
    UnknownBlock(String),
    #[error(transparent)]
    Fixture(#[from] FixtureError),
}

#[derive(Clone, Debug)]
pub struct OracleReport {
    /// Maximum summit height found by enumeration; `None` if unbounded.
    pub oracle_height: Option<usize>,
    pub greedy_height: usize,
    /// Union of all level-`i` sets, as unit names.
    pub oracle_levels: Vec<Vec<String>>,
    pub greedy_levels: Vec<Vec<String>>,
    pub summits_enumerated: usize,
    /// Height when level 0 may be any voting run, `None` if unbounded.
    pub literal_height: Option<usize>,
    /// Levels at which such summits escape the greedy output.
    pub literal_uncovered: usize,
    pub violations: Vec<String>,
}

impl OracleReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for OracleReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let h = self.oracle_height.map_or("unbounded".to_string(), |h| h.to_string());
        writeln!(f, "oracle height: {h}")?;
        writeln!(f, "greedy height: {}", self.greedy_height)?;
        writeln!(f, "level sets enumerated: {}", self.summits_enumerated)?;
        let rows = self.oracle_levels.len().max(self.greedy_levels.len()).min(8);
        for i in 0..rows {
            let o = self.oracle_levels.get(i).map(|l| l.join(" ")).unwrap_or_default();
            let g = self.greedy_levels.get(i).map(|l| l.join(" ")).unwrap_or_default();
            writeln!(f, "C{i}: oracle [{o}] greedy [{g}]")?;
        }
        if self.literal_uncovered > 0 {
            let lh = self.literal_height.map_or("unbounded".to_string(), |h| h.to_string());
            writeln!(
                f,
                "note: with unanchored level 0 the height is {lh}; {} level(s) not covered",
                self.literal_uncovered
            )?;
        }
        for v in &self.violations {
            writeln!(f, "VIOLATION: {v}")?;
        }
        writeln!(f, "{}", if self.ok() { "OK" } else { "MISMATCH" })
    }
}

struct Model {
    weights: Vec<u64>,
    sender: Vec<usize>,
    /// `D̄(u)` as a mask.
    dbar: Vec<u32>,
    /// Block carried by each unit, as an index into the fixture blocks.
    block: Vec<Option<usize>>,
    block_parent: Vec<Option<usize>>,
    block_hash: Vec<BlockHash>,
    equivocators: BTreeSet<usize>,
    /// Vote of each unit; `None` is genesis.
    vote: Vec<Option<usize>>,
}

impl Model {
    fn new(fx: &Fixture, block_hash: Vec<BlockHash>) -> Model {
        let m = fx.units.len();
        let mut dbar = vec![0u32; m];
        for (u, below) in dbar.iter_mut().enumerate() {
            let mut stack = vec![u];
            while let Some(x) = stack.pop() {
                if *below & (1 << x) == 0 {
                    *below |= 1 << x;
                    stack.extend(fx.units[x].cites.iter().copied());
                }
            }
        }
        let sender: Vec<usize> = fx.units.iter().map(|u| u.sender as usize).collect();
        let mut equivocators = BTreeSet::new();
        for a in 0..m {
            for b in 0..m {
                if a != b && sender[a] == sender[b] && dbar[a] & (1 << b) == 0 && dbar[b] & (1 << a) == 0 {
                    equivocators.insert(sender[a]);
                }
            }
        }
        let mut model = Model {
            weights: fx.weights.clone(),
            sender,
            dbar,
            block: fx.units.iter().map(|u| u.block).collect(),
            block_parent: fx.blocks.iter().map(|b| b.parent).collect(),
            block_hash,
            equivocators,
            vote: Vec::new(),
        };
        for u in 0..m {
            let v = model.compute_vote(u);
            model.vote.push(v);
        }
        model
    }

    fn hash_of(&self, b: Option<usize>) -> Option<BlockHash> {
        b.map(|i| self.block_hash[i])
    }

    /// `b ≥ anc`, with `None` as genesis.
    fn block_ge(&self, mut b: Option<usize>, anc: Option<usize>) -> bool {
        loop {
            if b == anc {
                return true;
            }
            match b {
                Some(i) => b = self.block_parent[i],
                None => return false,
            }
        }
    }

    fn compute_vote(&self, u: usize) -> Option<usize> {
        let strict = self.dbar[u] & !(1 << u);
        let mut opinions: Vec<(Option<usize>, u64)> = Vec::new();
        for v in 0..self.weights.len() {
            let mine: Vec<usize> =
                (0..self.sender.len()).filter(|x| strict & (1 << x) != 0 && self.sender[*x] == v).collect();
            let chain = mine
                .iter()
                .all(|a| mine.iter().all(|b| self.dbar[*a] & (1 << b) != 0 || self.dbar[*b] & (1 << a) != 0));
            if mine.is_empty() || !chain {
                continue;
            }
            let top = *mine.iter().max_by_key(|x| self.dbar[**x].count_ones()).unwrap();
            opinions.push((self.vote[top], self.weights[v]));
        }
        let member: Vec<usize> =
            (0..self.sender.len()).filter(|x| self.dbar[u] & (1 << x) != 0).filter_map(|x| self.block[x]).collect();
        let mut head: Option<usize> = None;
        loop {
            let kids: Vec<usize> = member.iter().copied().filter(|b| self.block_parent[*b] == head).collect();
            let Some(best) = kids.into_iter().max_by(|a, b| {
                let ta: u64 = opinions.iter().filter(|(o, _)| self.block_ge(*o, Some(*a))).map(|(_, w)| w).sum();
                let tb: u64 = opinions.iter().filter(|(o, _)| self.block_ge(*o, Some(*b))).map(|(_, w)| w).sum();
                ta.cmp(&tb).then(self.block_hash[*b].cmp(&self.block_hash[*a]))
            }) else {
                return head;
            };
            head = Some(best);
        }
    }

    fn chain(&self, v: usize) -> Vec<usize> {
        let mut chain: Vec<usize> = (0..self.sender.len()).filter(|x| self.sender[*x] == v).collect();
        chain.sort_by_key(|x| self.dbar[*x].count_ones());
        chain
    }

    /// All unions of one choice per sender (possibly empty), minus the
    /// empty set.
    fn product(per_sender: Vec<Vec<u32>>) -> Vec<u32> {
        let mut sets: Vec<u32> = vec![0];
        for runs in per_sender {
            sets = sets.iter().flat_map(|s| runs.iter().map(move |r| s | r)).collect();
        }
        sets.retain(|s| *s != 0);
        sets
    }

    /// Level-0 candidates. Each honest sender contributes a contiguous run
    /// of its chain voting for the block, or nothing. With `anchored` the
    /// run must end at the sender's latest unit.
    fn level0(&self, target: Option<usize>, anchored: bool) -> Vec<u32> {
        let mut per = Vec::new();
        for v in 0..self.weights.len() {
            if self.equivocators.contains(&v) {
                continue;
            }
            let chain = self.chain(v);
            let votes: Vec<bool> = chain.iter().map(|x| self.block_ge(self.vote[*x], target)).collect();
            let mut runs: Vec<u32> = vec![0];
            for i in 0..chain.len() {
                for j in i..chain.len() {
                    if !votes[j] {
                        break;
                    }
                    if anchored && j + 1 != chain.len() {
                        continue;
                    }
                    runs.push(chain[i..=j].iter().fold(0, |m, x| m | (1 << x)));
                }
            }
            per.push(runs);
        }
        Model::product(per)
    }

    /// Every convex set inside `region`.
    fn convex_within(&self, region: u32) -> Vec<u32> {
        let mut per = Vec::new();
        for v in 0..self.weights.len() {
            let chain = self.chain(v);
            let mut runs: Vec<u32> = vec![0];
            for i in 0..chain.len() {
                let mut mask = 0u32;
                for &x in &chain[i..] {
                    if region & (1 << x) == 0 {
                        break;
                    }
                    mask |= 1 << x;
                    runs.push(mask);
                }
            }
            per.push(runs);
        }
        Model::product(per)
    }

    /// `R_0, R_1, ...` and whether the sequence became stationary.
    fn enumerate(&self, target: Option<usize>, q: u64, anchored: bool) -> (Vec<Vec<u32>>, bool) {
        let r0 = self.level0(target, anchored);
        if r0.is_empty() {
            return (Vec::new(), false);
        }
        let region = r0.iter().fold(0, |a, b| a | b);
        let r1: Vec<u32> =
            self.convex_within(region).into_iter().filter(|y| r0.iter().any(|x| self.follows(*x, *y, q))).collect();
        let mut levels = vec![r0];
        if r1.is_empty() {
            return (levels, false);
        }
        levels.push(r1);
        loop {
            let cur = levels.last().expect("non-empty");
            let next: Vec<u32> = cur.iter().copied().filter(|y| cur.iter().any(|x| self.follows(*x, *y, q))).collect();
            if next.is_empty() {
                return (levels, false);
            }
            if next.len() == cur.len() {
                return (levels, true);
            }
            levels.push(next);
        }
    }

    fn senders(&self, set: u32) -> u32 {
        (0..self.sender.len()).filter(|x| set & (1 << x) != 0).fold(0, |m, x| m | (1 << self.sender[x]))
    }

    /// `y` may follow `x` as the next level.
    fn follows(&self, x: u32, y: u32, q: u64) -> bool {
        if y & !x != 0 {
            return false;
        }
        let ys = self.senders(y);
        let prime: u32 = (0..self.sender.len())
            .filter(|p| x & (1 << p) != 0 && ys & (1 << self.sender[*p]) != 0)
            .fold(0, |m, p| m | (1 << p));
        (0..self.sender.len()).filter(|u| y & (1 << u) != 0).all(|u| {
            let seen = self.senders(prime & self.dbar[u]);
            let w: u64 = (0..self.weights.len()).filter(|v| seen & (1 << v) != 0).map(|v| self.weights[v]).sum();
            w >= q
        })
    }
}

/// Compares the greedy summit for `block` at quorum `q` against full
/// enumeration.
pub fn compare(fx: &Fixture, block: &str, q: u64) -> Result<OracleReport, OracleError> {
    if fx.units.len() > MAX_FIXTURE_UNITS {
        return Err(OracleError::TooLarge(fx.units.len()));
    }
    let built = fx.build()?;
    let target: Option<usize> = if block == GENESIS_NAME {
        None
    } else {
        Some(fx.blocks.iter().position(|b| b.name == block).ok_or_else(|| OracleError::UnknownBlock(block.into()))?)
    };
    let model = Model::new(fx, built.blocks.clone());
    let state = &built.state;
    let mut violations = Vec::new();

    for (u, h) in built.units.iter().enumerate() {
        let got = state.vote(*h).expect("built");
        let want = model.hash_of(model.vote[u]).unwrap_or(state.genesis());
        if got != want {
            violations.push(format!("vote of {} differs: state {got:?}, oracle {want:?}", fx.units[u].name));
        }
    }

    let (levels, unbounded) = model.enumerate(target, q, true);
    let enumerated: usize = levels.iter().map(Vec::len).sum();
    let oracle_height = if unbounded { None } else { Some(levels.len().saturating_sub(1)) };

    let bh = target.map_or(state.genesis(), |i| built.blocks[i]);
    let greedy = summit(state, bh, q);
    if let Err(e) = verify_summit(state, &greedy) {
        violations.push(format!("greedy output is not a summit: {e}"));
    }
    let unit_of = |local: usize| built.units.iter().position(|h| *h == state.hash_at(local)).expect("fixture unit");
    let greedy_masks: Vec<u32> =
        greedy.level_indices(state).iter().map(|lv| lv.iter().fold(0u32, |m, i| m | (1 << unit_of(*i)))).collect();

    let expected_height = match oracle_height {
        Some(h) => h,
        None => MAX_HEIGHT,
    };
    if greedy.height() != expected_height {
        violations.push(format!(
            "greedy height {} but enumeration gives {}",
            greedy.height(),
            oracle_height.map_or("unbounded".into(), |h| h.to_string())
        ));
    }
    for (i, gm) in greedy_masks.iter().enumerate() {
        let Some(all) = levels.get(i.min(levels.len().saturating_sub(1))) else {
            if *gm != 0 {
                violations.push(format!("greedy level {i} is non-empty but no summit exists"));
            }
            continue;
        };
        if *gm != 0 && !all.contains(gm) {
            violations.push(format!("greedy level {i} is not a valid level set"));
        }
        for y in all {
            if y & !gm != 0 {
                violations.push(format!("level {i}: enumerated set {y:#x} not inside greedy {gm:#x}"));
                break;
            }
        }
    }
    if greedy_masks.len() < levels.len() {
        violations.push(format!("greedy stops at height {} below {}", greedy.height(), levels.len() - 1));
    }

    // The definition read literally also admits level-0 runs that stop
    // before the sender's latest unit. Those are reported, not enforced.
    let (literal, literal_unbounded) = model.enumerate(target, q, false);
    let literal_height = if literal_unbounded { None } else { Some(literal.len().saturating_sub(1)) };
    let literal_uncovered = literal
        .iter()
        .enumerate()
        .filter(|(i, all)| {
            let gm = greedy_masks.get(*i).copied().unwrap_or(0);
            all.iter().any(|y| y & !gm != 0)
        })
        .count();

    let names = |m: u32| -> Vec<String> {
        (0..fx.units.len()).filter(|x| m & (1 << x) != 0).map(|x| fx.units[x].name.clone()).collect()
    };
    let oracle_levels = levels.iter().map(|l| names(l.iter().fold(0, |a, b| a | b))).collect();
    let greedy_levels = greedy_masks.iter().map(|m| names(*m)).collect();
    Ok(OracleReport {
        oracle_height,
        greedy_height: greedy.height(),
        oracle_levels,
        greedy_levels,
        summits_enumerated: enumerated,
        literal_height,
        literal_uncovered,
        violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_votes_both_zero() {
        let fx = Fixture::parse("n = 2\nunit a 0 block B G\nunit b 1 block C G\n").unwrap();
        let r = compare(&fx, "B", 2).unwrap();
        assert!(r.ok(), "{r}");
        assert_eq!(r.greedy_height, 0);
        assert_eq!(r.oracle_height, Some(0));
    }

    #[test]
    fn unanimous_rounds_match() {
        let text = "n = 3\nunit p 0 block B G\n\
            unit a0 0 cites p\nunit b0 1 cites p\nunit c0 2 cites p\n\
            unit a1 0 cites a0 b0 c0\nunit b1 1 cites a0 b0 c0\nunit c1 2 cites a0 b0 c0\n\
            unit a2 0 cites a1 b1 c1\nunit b2 1 cites a1 b1 c1\nunit c2 2 cites a1 b1 c1\n";
        let fx = Fixture::parse(text).unwrap();
        let r = compare(&fx, "B", 3).unwrap();
        assert!(r.ok(), "{r}");
        assert_eq!(r.oracle_height, Some(2));
    }

    #[test]
    fn single_validator_quorum_is_unbounded() {
        let fx = Fixture::parse("n = 3\nunit p 0 block B G\n").unwrap();
        let r = compare(&fx, "B", 1).unwrap();
        assert!(r.ok(), "{r}");
        assert_eq!(r.oracle_height, None);
        assert_eq!(r.greedy_height, MAX_HEIGHT);
    }

    #[test]
    fn stale_runs_are_reported_not_enforced() {
        let fx = Fixture::random(1, 4, 12);
        let r = compare(&fx, "B2", 1).unwrap();
        assert!(r.ok(), "{r}");
        assert!(r.literal_uncovered > 0);
    }

    #[test]
    fn too_large_is_refused() {
        let mut text = "n = 2\n".to_string();
        for i in 0..13 {
            text.push_str(&format!(
                "unit u{i} 0{}\n",
                if i > 0 { format!(" cites u{}", i - 1) } else { String::new() }
            ));
        }
        let fx = Fixture::parse(&text).unwrap();
        assert!(matches!(compare(&fx, "G", 1), Err(OracleError::TooLarge(13))));
    }

    #[test]
    fn random_fixtures_agree() {
        for seed in 0..40 {
            let fx = Fixture::random(seed, 4, 12);
            let mut targets = vec![GENESIS_NAME.to_string()];
            targets.extend(fx.blocks.iter().map(|b| b.name.clone()));
            for b in &targets {
                for q in 1..=4 {
                    let r = compare(&fx, b, q).unwrap();
                    assert!(r.ok(), "seed {seed} block {b} q {q}\n{fx}\n{r}");
                }
            }
        }
    }
}
