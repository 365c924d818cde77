//! Trace replay: rebuild every honest local DAG from the `admit` events
//! and recompute finality at any set of thresholds, without simulating.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::dag::{InsertOutcome, ProtocolState};
use crate::finality::FinalityTracker;
use crate::fixture::genesis_block;
use crate::ids::{BlockHash, Tick, UnitHash, ValidatorId, WeightMap};
use crate::scenario::{Scenario, ScenarioError};
use crate::sim::{weights, EventKind, Trace};
use crate::unit::{Block, Unit};

#[derive(Debug, Error)]
pub enum CheckError {
    #[error("embedded scenario: {0}")]
    Scenario(#[from] ScenarioError),
    #[error("trace has no `unit` record for {0}")]
    MissingUnit(UnitHash),
    #[error("unit record at tick {tick} does not decode to {digest:016x}")]
    BadUnit { tick: Tick, digest: u64 },
    #[error("era record at tick {tick} names unknown block {block}")]
    UnknownBlock { tick: Tick, block: BlockHash },
    #[error("record at tick {tick}: {msg}")]
    Malformed { tick: Tick, msg: String },
    #[error("v{validator} at tick {tick}: replaying {unit} gave {outcome}")]
    Replay { validator: ValidatorId, tick: Tick, unit: UnitHash, outcome: String },
}

/// One finalized chain as `(block, height)` pairs from the era-0 genesis.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ChainView {
    pub validator: ValidatorId,
    pub threshold: u64,
    pub blocks: Vec<(BlockHash, u64)>,
    /// Replay tick at which each block became final (0 for genesis).
    pub ticks: Vec<Tick>,
}

/// Two finalized chains that disagree at `height`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Conflict {
    pub a: (ValidatorId, u64),
    pub b: (ValidatorId, u64),
    pub height: u64,
    pub blocks: (BlockHash, BlockHash),
    /// The observed equivocation weight exceeds the smaller threshold, so
    /// the pair does not contradict safety.
    pub permitted: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Verdict {
    pub thresholds: Vec<u64>,
    pub chains: Vec<ChainView>,
    /// Senders with two incomparable units anywhere in the trace.
    pub equivocators: BTreeSet<ValidatorId>,
    /// Their total weight.
    pub f: u64,
    pub conflicts: Vec<Conflict>,
    /// `(validator, lower, higher)` where the lower threshold's chain does
    /// not extend the higher one's.
    pub order_violations: Vec<(ValidatorId, u64, u64)>,
}

impl Verdict {
    pub fn is_clean(&self) -> bool {
        self.conflicts.iter().all(|c| c.permitted)
    }

    pub fn violations(&self) -> impl Iterator<Item = &Conflict> + '_ {
        self.conflicts.iter().filter(|c| !c.permitted)
    }

    pub fn chain(&self, v: ValidatorId, t: u64) -> Option<&[(BlockHash, u64)]> {
        self.chains.iter().find(|c| c.validator == v && c.threshold == t).map(|c| c.blocks.as_slice())
    }
}

struct View {
    id: ValidatorId,
    era: u64,
    state: ProtocolState,
    tracker: FinalityTracker,
    chains: Vec<Vec<(BlockHash, u64)>>,
    ticks: Vec<Vec<Tick>>,
    dirty: bool,
}

struct Replay<'a> {
    thresholds: Vec<u64>,
    era_length: u64,
    weights: WeightMap,
    units: &'a HashMap<UnitHash, Arc<Unit>>,
    blocks: &'a HashMap<BlockHash, Block>,
    views: BTreeMap<ValidatorId, View>,
    /// Finalizations implied by era changes that contradict a chain.
    era_conflicts: Vec<Conflict>,
}

impl Replay<'_> {
    fn settle(&mut self, now: Tick, v: ValidatorId) {
        let Some(view) = self.views.get_mut(&v) else { return };
        if !view.dirty {
            return;
        }
        view.dirty = false;
        let boundary = match self.era_length {
            0 => u64::MAX,
            k => k * (view.era + 1) - 1,
        };
        for (t, b) in view.tracker.update(&view.state) {
            let height = view.state.tree().height(b).expect("finalized block is in the tree");
            if height > boundary {
                continue;
            }
            let i = self.thresholds.iter().position(|x| *x == t).expect("tracked");
            view.chains[i].push((b, height));
            view.ticks[i].push(now);
        }
    }

    fn settle_all(&mut self, now: Tick) {
        let ids: Vec<ValidatorId> = self.views.keys().copied().collect();
        for v in ids {
            self.settle(now, v);
        }
    }

    fn admit(&mut self, tick: Tick, v: ValidatorId, h: UnitHash) -> Result<(), CheckError> {
        let Some(view) = self.views.get_mut(&v) else { return Ok(()) };
        let unit = self.units.get(&h).ok_or(CheckError::MissingUnit(h))?.clone();
        if unit.era() != view.era {
            return Err(CheckError::Replay {
                validator: v,
                tick,
                unit: h,
                outcome: format!("era {} while the view is in era {}", unit.era(), view.era),
            });
        }
        match view.state.insert_arc(unit) {
            InsertOutcome::Accepted => {
                view.dirty = true;
                Ok(())
            }
            other => Err(CheckError::Replay { validator: v, tick, unit: h, outcome: format!("{other:?}") }),
        }
    }

    fn new_era(&mut self, tick: Tick, v: ValidatorId, genesis: BlockHash) -> Result<(), CheckError> {
        if !self.views.contains_key(&v) {
            return Ok(());
        }
        self.settle(tick, v);
        let g = self.blocks.get(&genesis).ok_or(CheckError::UnknownBlock { tick, block: genesis })?.clone();
        // The path from the new genesis down to height 0.
        let mut path = vec![(genesis, g.height())];
        let mut cur = g.parent();
        while let Some(p) = cur {
            let b = self.blocks.get(&p).ok_or(CheckError::UnknownBlock { tick, block: p })?;
            path.push((p, b.height()));
            cur = b.parent();
        }
        path.reverse();
        let view = self.views.get_mut(&v).expect("checked");
        for (i, (chain, ticks)) in view.chains.iter_mut().zip(&mut view.ticks).enumerate() {
            let t = self.thresholds[i];
            let clash = chain.iter().zip(&path).find(|(a, b)| a.0 != b.0);
            if let Some((mine, theirs)) = clash {
                self.era_conflicts.push(Conflict {
                    a: (v, t),
                    b: (v, u64::MAX),
                    height: mine.1,
                    blocks: (mine.0, theirs.0),
                    permitted: false,
                });
                continue;
            }
            if chain.len() < path.len() {
                ticks.resize(path.len(), tick);
                chain.extend_from_slice(&path[chain.len()..]);
            }
        }
        view.era += 1;
        view.state = ProtocolState::new(self.weights.clone(), g, view.era);
        view.tracker = FinalityTracker::new(&self.thresholds, genesis);
        view.dirty = false;
        Ok(())
    }
}

/// Decoded `unit` records by hash.
pub fn units_of(trace: &Trace) -> Result<HashMap<UnitHash, Arc<Unit>>, CheckError> {
    let mut units = HashMap::new();
    for r in trace.records.iter().filter(|r| r.kind == EventKind::Unit) {
        let digest =
            r.digest.ok_or_else(|| CheckError::Malformed { tick: r.tick, msg: "unit without digest".into() })?;
        let bytes = hex::decode(&r.detail).map_err(|_| CheckError::BadUnit { tick: r.tick, digest })?;
        let unit = Unit::from_wire(&bytes).ok_or(CheckError::BadUnit { tick: r.tick, digest })?;
        if unit.hash().0 != digest {
            return Err(CheckError::BadUnit { tick: r.tick, digest });
        }
        units.insert(unit.hash(), Arc::new(unit));
    }
    Ok(units)
}

/// Senders with two distinct units at one sequence number in one era,
/// judged over every unit in the trace.
pub fn equivocators_of(units: &HashMap<UnitHash, Arc<Unit>>) -> BTreeSet<ValidatorId> {
    let mut by_slot: HashMap<(u64, ValidatorId, u64), UnitHash> = HashMap::new();
    let mut out = BTreeSet::new();
    let mut sorted: Vec<&Arc<Unit>> = units.values().collect();
    sorted.sort_by_key(|u| u.hash());
    for u in sorted {
        if let Some(prev) = by_slot.insert((u.era(), u.sender(), u.seq()), u.hash()) {
            if prev != u.hash() {
                out.insert(u.sender());
            }
        }
    }
    out
}

/// Replays `trace` and computes the finalized chains of every honest
/// validator at each of `thresholds`.
pub fn check(trace: &Trace, thresholds: &[u64]) -> Result<Verdict, CheckError> {
    let scenario = Scenario::parse(&trace.scenario_text())?;
    let mut thresholds = thresholds.to_vec();
    thresholds.sort_unstable();
    thresholds.dedup();
    let units = units_of(trace)?;
    let mut blocks: HashMap<BlockHash, Block> = HashMap::new();
    let genesis = genesis_block();
    blocks.insert(genesis.hash(), genesis.clone());
    for u in units.values() {
        if let Some(b) = u.block() {
            blocks.insert(b.hash(), b.clone());
        }
    }
    let weights = weights(&scenario);
    let views = scenario
        .honest()
        .into_iter()
        .map(|v| {
            let view = View {
                id: v,
                era: 0,
                state: ProtocolState::new(weights.clone(), genesis.clone(), 0),
                tracker: FinalityTracker::new(&thresholds, genesis.hash()),
                chains: vec![vec![(genesis.hash(), genesis.height())]; thresholds.len()],
                ticks: vec![vec![0]; thresholds.len()],
                dirty: false,
            };
            (v, view)
        })
        .collect();
    let mut replay = Replay {
        thresholds: thresholds.clone(),
        era_length: scenario.era_length,
        weights: weights.clone(),
        units: &units,
        blocks: &blocks,
        views,
        era_conflicts: Vec::new(),
    };
    let mut now = 0;
    for r in &trace.records {
        if !matches!(r.kind, EventKind::Admit | EventKind::Era) {
            continue;
        }
        if r.tick > now {
            replay.settle_all(now);
            now = r.tick;
        }
        let malformed = |msg: &str| CheckError::Malformed { tick: r.tick, msg: msg.to_string() };
        let v = ValidatorId(r.sender.ok_or_else(|| malformed("missing sender"))?);
        let digest = r.digest.ok_or_else(|| malformed("missing digest"))?;
        match r.kind {
            EventKind::Admit => replay.admit(r.tick, v, UnitHash(digest))?,
            _ => replay.new_era(r.tick, v, BlockHash(digest))?,
        }
    }
    replay.settle_all(now);

    let equivocators = equivocators_of(&units);
    let f = weights.sum(&equivocators);
    let mut chains = Vec::new();
    for view in replay.views.values() {
        for (i, c) in view.chains.iter().enumerate() {
            chains.push(ChainView {
                validator: view.id,
                threshold: thresholds[i],
                blocks: c.clone(),
                ticks: view.ticks[i].clone(),
            });
        }
    }
    let mut conflicts = replay.era_conflicts;
    for c in &mut conflicts {
        // The era genesis is final at the validator's smallest threshold.
        let tmin = scenario.thresholds_of(c.b.0).iter().min().copied().unwrap_or(0);
        c.b.1 = tmin;
        c.permitted = f > c.a.1.min(tmin);
    }
    for (i, x) in chains.iter().enumerate() {
        for y in &chains[i + 1..] {
            let clash = x.blocks.iter().zip(&y.blocks).find(|(a, b)| a.0 != b.0);
            if let Some((a, b)) = clash {
                conflicts.push(Conflict {
                    a: (x.validator, x.threshold),
                    b: (y.validator, y.threshold),
                    height: a.1,
                    blocks: (a.0, b.0),
                    permitted: f > x.threshold.min(y.threshold),
                });
            }
        }
    }
    let mut order_violations = Vec::new();
    for view in replay.views.values() {
        for i in 1..thresholds.len() {
            let (lo, hi) = (&view.chains[i - 1], &view.chains[i]);
            if lo.len() < hi.len() || lo[..hi.len()] != hi[..] {
                order_violations.push((view.id, thresholds[i - 1], thresholds[i]));
            }
        }
    }
    Ok(Verdict { thresholds, chains, equivocators, f, conflicts, order_violations })
}
