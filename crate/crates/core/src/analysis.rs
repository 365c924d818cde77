//! Measurements over finished runs: antichains, downset sizes, liveness
//! windows and finality propagation.

use std::collections::{BTreeMap, BTreeSet};

use crate::dag::ProtocolState;
use crate::engine::Validator;
use crate::ids::{BlockHash, Tick, ValidatorId};
use crate::scenario::{Adversary, Scenario};
use crate::sim::Outcome;

/// Size of the largest set of pairwise incomparable units among `units`
/// (indices into `state`). By Dilworth's theorem this is `|units|` minus
/// a maximum matching in the strict comparability graph.
pub fn max_antichain(state: &ProtocolState, units: &[usize]) -> usize {
    let n = units.len();
    let above: Vec<Vec<usize>> =
        (0..n).map(|i| (0..n).filter(|&j| i != j && state.le(units[i], units[j])).collect()).collect();
    let mut owner: Vec<Option<usize>> = vec![None; n];
    let mut matched = 0;
    for i in 0..n {
        let mut seen = vec![false; n];
        if augment(i, &above, &mut owner, &mut seen) {
            matched += 1;
        }
    }
    n - matched
}

fn augment(i: usize, above: &[Vec<usize>], owner: &mut [Option<usize>], seen: &mut [bool]) -> bool {
    for &j in &above[i] {
        if seen[j] {
            continue;
        }
        seen[j] = true;
        if owner[j].is_none_or(|k| augment(k, above, owner, seen)) {
            owner[j] = Some(i);
            return true;
        }
    }
    false
}

/// Largest antichain of `sender`'s units in the local DAG of `v`.
pub fn sender_antichain(v: &Validator, sender: ValidatorId) -> usize {
    max_antichain(v.dag(), v.dag().units_by(sender))
}

/// Largest antichain of `sender`'s units inside a single downset `D̄(u)`
/// of `v`'s DAG. Downsets grow upwards, so only maximal units are tried.
pub fn downset_antichain(v: &Validator, sender: ValidatorId) -> usize {
    let dag = v.dag();
    let mine = dag.units_by(sender);
    dag.tips()
        .map(|t| {
            let below = dag.below(t);
            let units: Vec<usize> = mine.iter().copied().filter(|i| *i == t || below.contains(*i)).collect();
            max_antichain(dag, &units)
        })
        .max()
        .unwrap_or(0)
}

/// Largest antichain of `sender`'s endorsed units that `v` knows.
pub fn endorsed_antichain(v: &Validator, sender: ValidatorId) -> usize {
    let known = v.known();
    let units: Vec<usize> =
        known.units_by(sender).iter().copied().filter(|i| v.ledger().is_endorsed(known.hash_at(*i))).collect();
    max_antichain(known, &units)
}

/// `|D(u)|` of `v`'s own units in its DAG, as `(N, size)` where `u` is
/// the `N`-th unit (1-based).
pub fn own_downsets(v: &Validator) -> Vec<(u64, usize)> {
    let dag = v.dag();
    dag.units_by(v.id()).iter().map(|&i| (dag.unit_at(i).seq() + 1, dag.below(i).count_ones(..) + 1)).collect()
}

/// Largest `|D(u)| / (n·N·(1 + f))` over `v`'s own units, with `f` the
/// number of equivocators in its DAG.
pub fn downset_ratio(v: &Validator) -> f64 {
    let n = v.config().weights.n() as f64;
    let f = v.dag().equivocators().len() as f64;
    own_downsets(v).into_iter().map(|(nth, size)| size as f64 / (n * nth as f64 * (1.0 + f))).fold(0.0, f64::max)
}

/// Validators that follow the protocol and never crash.
pub fn correct(s: &Scenario) -> Vec<ValidatorId> {
    (0..s.n as u32).map(ValidatorId).filter(|v| s.adversary_of(*v).is_none()).collect()
}

fn alive_at(s: &Scenario, v: ValidatorId, tick: Tick) -> bool {
    match s.adversary_of(v) {
        None => true,
        Some(Adversary::Crash { at, .. }) => tick < *at,
        Some(_) => false,
    }
}

/// Starts of fixed-length rounds in `[from, horizon)` whose leader is
/// honest and not yet crashed.
pub fn honest_leader_rounds(s: &Scenario, from: Tick) -> Vec<Tick> {
    let len = s.base_round();
    let first = from.div_ceil(len) * len;
    (first..s.horizon)
        .step_by(len as usize)
        .filter(|start| {
            let leader = s.schedule.leader_at(*start, len, s.n);
            alive_at(s, leader, *start)
        })
        .collect()
}

/// A stretch of consecutive honest-leader rounds in which a validator's
/// chain did not grow.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Stall {
    pub validator: ValidatorId,
    pub from: Tick,
    pub to: Tick,
}

/// Every window of `width` consecutive honest-leader rounds starting at or
/// after `from` (and ending by the horizon) in which some correct
/// validator finalized nothing at `t`.
pub fn liveness_stalls(o: &Outcome, t: u64, from: Tick, width: usize) -> (usize, Vec<Stall>) {
    let s = &o.scenario;
    let len = s.base_round();
    let rounds = honest_leader_rounds(s, from);
    let windows: Vec<(Tick, Tick)> =
        rounds.windows(width).map(|w| (w[0], w[width - 1] + len)).filter(|(_, end)| *end <= s.horizon).collect();
    let mut stalls = Vec::new();
    for v in correct(s) {
        let ticks: Vec<Tick> =
            o.finals.iter().filter(|e| e.validator == v && e.threshold == t).map(|e| e.tick).collect();
        for &(a, b) in &windows {
            if !ticks.iter().any(|x| a <= *x && *x < b) {
                stalls.push(Stall { validator: v, from: a, to: b });
            }
        }
    }
    (windows.len(), stalls)
}

/// For each block finalized at `t` by a correct validator: the first
/// finalization tick and the tick by which every correct validator had it
/// (`None` if some never did).
pub fn propagation(o: &Outcome, t: u64) -> Vec<(BlockHash, Tick, Option<Tick>)> {
    let who = correct(&o.scenario);
    let mut by_block: BTreeMap<BlockHash, BTreeMap<ValidatorId, Tick>> = BTreeMap::new();
    for e in o.finals.iter().filter(|e| e.threshold == t && who.contains(&e.validator)) {
        by_block.entry(e.block).or_default().entry(e.validator).or_insert(e.tick);
    }
    let everyone: BTreeSet<ValidatorId> = who.iter().copied().collect();
    let mut out: Vec<(BlockHash, Tick, Option<Tick>)> = by_block
        .into_iter()
        .map(|(b, m)| {
            let first = *m.values().min().expect("nonempty");
            let all = m.keys().copied().collect::<BTreeSet<_>>() == everyone;
            (b, first, all.then(|| *m.values().max().expect("nonempty")))
        })
        .collect();
    out.sort_by_key(|(b, first, _)| (*first, *b));
    out
}
