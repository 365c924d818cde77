//! The per-validator state machine.
//!
//! A validator keeps two views. `known` holds every unit it has received
//! whose dependencies are present; endorsement decisions are made there.
//! `dag` is the local DAG the strategy talks about: units move into it at
//! the prescribed times and only if they pass LNC. Finality and new units
//! are computed from `dag` alone.

pub mod clock;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::sync::Arc;

use fixedbitset::FixedBitSet;
use serde::{Deserialize, Serialize};

use crate::dag::{InsertOutcome, ProtocolState};
use crate::endorsement::{
    lnc_violation, should_endorse_naive, should_endorse_refined, Endorsement, EndorsementLedger, EndorsementMode,
    RecordOutcome,
};
use crate::finality::FinalityTracker;
use crate::ids::{digest64, mix, BlockHash, Tick, UnitHash, ValidatorId, WeightMap};
use crate::unit::{Block, Unit, UnitFields, UnitKind};

pub use clock::{thirds, Exponent, ExponentParams, RoundMode, Schedule};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidatorConfig {
    pub id: ValidatorId,
    pub weights: WeightMap,
    pub thresholds: Vec<u64>,
    pub rounds: RoundMode,
    pub schedule: Schedule,
    pub endorsements: EndorsementMode,
    pub lnc: bool,
    pub era_length: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Message {
    /// A unit plus whichever of its ancestors the recipient may lack, in
    /// topological order.
    Unit {
        unit: Arc<Unit>,
        deps: Vec<Arc<Unit>>,
    },
    Endorse(Endorsement),
    /// All endorsements of one target, sent once it becomes endorsed.
    Quorum(Arc<[Endorsement]>),
}

impl Message {
    pub fn tag(&self) -> &'static str {
        match self {
            Message::Unit { .. } => "unit",
            Message::Endorse(_) => "endorse",
            Message::Quorum(_) => "quorum",
        }
    }

    pub fn digest(&self) -> u64 {
        match self {
            Message::Unit { unit, .. } => unit.hash().0,
            Message::Endorse(e) => e.digest(),
            Message::Quorum(es) => {
                let mut bytes = Vec::with_capacity(es.len() * 12);
                for e in es.iter() {
                    bytes.extend_from_slice(&e.encode());
                }
                digest64(&bytes)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Send {
    pub to: ValidatorId,
    pub msg: Message,
}

/// Things a validator reports for the trace.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Note {
    Created(Arc<Unit>),
    Admitted(UnitHash),
    Finalized { threshold: u64, block: BlockHash, height: u64 },
    Exponent(u32),
    Era { era: u64, genesis: BlockHash },
    Dropped { unit: UnitHash, reason: String },
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stats {
    pub units_created: u64,
    pub endorsements_sent: u64,
    pub dropped: u64,
    pub lnc_parked: u64,
    pub lnc_overflow: u64,
    pub confirmations_skipped: u64,
}

/// Units held back for LNC per era before the oldest are dropped.
pub const LNC_BUFFER_CAP: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Slot {
    /// `[0, R/3)`: buffer everything except the leader's proposal.
    Early,
    /// `[R/3, 2R/3)`: add immediately.
    Middle,
    /// `[2R/3, R)`: buffer.
    Late,
}

#[derive(Clone, Debug)]
struct Round {
    start: Tick,
    len: Tick,
    leader: ValidatorId,
    /// The leader's proposal for this round, once received.
    proposal: Option<UnitHash>,
    confirmed: bool,
}

impl Round {
    fn slot(&self, now: Tick) -> Slot {
        let (a, b) = thirds(self.len);
        let off = now.saturating_sub(self.start);
        if off >= self.len || off >= b {
            Slot::Late
        } else if off >= a {
            Slot::Middle
        } else {
            Slot::Early
        }
    }
}

pub struct Validator {
    cfg: ValidatorConfig,
    exponent: Option<Exponent>,
    era: u64,
    banned: BTreeSet<ValidatorId>,
    known: ProtocolState,
    dag: ProtocolState,
    ledger: EndorsementLedger,
    dag_endorsed: FixedBitSet,
    mine: HashSet<UnitHash>,
    equivocators_seen: usize,
    /// Last unit this validator created in the current era.
    own_last: Option<UnitHash>,
    /// Equivocators whose evidence was forwarded.
    gossiped: BTreeSet<ValidatorId>,
    /// Received units whose dependencies are not all in `known`.
    received: HashMap<UnitHash, Arc<Unit>>,
    waiting: HashMap<UnitHash, Vec<UnitHash>>,
    /// Units stamped later than the current tick.
    early: BTreeMap<Tick, Vec<Arc<Unit>>>,
    /// Units for a later era.
    future: Vec<Arc<Unit>>,
    /// `known` indices waiting for a drain.
    buffer: Vec<usize>,
    /// `known` indices released for the DAG but not yet in it.
    eligible: BTreeSet<usize>,
    /// `known` indices held back by LNC, in arrival order.
    blocked: BTreeSet<usize>,
    lnc_dirty: bool,
    /// The DAG or endorsements changed since the last confirmation attempt.
    confirm_dirty: bool,
    peer_has: Vec<FixedBitSet>,
    round: Option<Round>,
    tracker: FinalityTracker,
    /// Finalized chain per tracked threshold across eras.
    chains: Vec<(u64, Vec<(BlockHash, u64)>)>,
    fin_ticks: Vec<Tick>,
    dirty: bool,
    notes: Vec<Note>,
    stats: Stats,
}

impl Validator {
    pub fn new(cfg: ValidatorConfig, genesis: Block) -> Validator {
        let n = cfg.weights.n();
        let mut tracked = cfg.thresholds.clone();
        let exponent = match &cfg.rounds {
            RoundMode::Dynamic(p) => {
                tracked.push(p.t0);
                Some(Exponent::new(p))
            }
            RoundMode::Fixed { .. } => None,
        };
        tracked.sort_unstable();
        tracked.dedup();
        let root = genesis.hash();
        let height = genesis.height();
        Validator {
            exponent,
            era: 0,
            banned: BTreeSet::new(),
            known: ProtocolState::new(cfg.weights.clone(), genesis.clone(), 0),
            dag: ProtocolState::new(cfg.weights.clone(), genesis, 0),
            ledger: EndorsementLedger::new(cfg.weights.clone()),
            dag_endorsed: FixedBitSet::new(),
            mine: HashSet::new(),
            equivocators_seen: 0,
            own_last: None,
            gossiped: BTreeSet::new(),
            received: HashMap::new(),
            waiting: HashMap::new(),
            early: BTreeMap::new(),
            future: Vec::new(),
            buffer: Vec::new(),
            eligible: BTreeSet::new(),
            blocked: BTreeSet::new(),
            lnc_dirty: false,
            confirm_dirty: false,
            peer_has: vec![FixedBitSet::new(); n],
            round: None,
            tracker: FinalityTracker::new(&tracked, root),
            chains: tracked.iter().map(|t| (*t, vec![(root, height)])).collect(),
            fin_ticks: Vec::new(),
            dirty: false,
            notes: Vec::new(),
            stats: Stats::default(),
            cfg,
        }
    }

    pub fn id(&self) -> ValidatorId {
        self.cfg.id
    }

    pub fn config(&self) -> &ValidatorConfig {
        &self.cfg
    }

    pub fn dag(&self) -> &ProtocolState {
        &self.dag
    }

    pub fn known(&self) -> &ProtocolState {
        &self.known
    }

    pub fn ledger(&self) -> &EndorsementLedger {
        &self.ledger
    }

    pub fn era(&self) -> u64 {
        self.era
    }

    pub fn banned(&self) -> &BTreeSet<ValidatorId> {
        &self.banned
    }

    pub fn exponent(&self) -> Option<u32> {
        self.exponent.as_ref().map(|e| e.m)
    }

    pub fn stats(&self) -> &Stats {
        &self.stats
    }

    /// Cautious once any equivocation is known in this era.
    pub fn is_cautious(&self) -> bool {
        self.equivocators_seen > 0
    }

    /// Finalized chain for `t` across eras, as `(block, height)` pairs.
    pub fn chain(&self, t: u64) -> Option<&[(BlockHash, u64)]> {
        self.chains.iter().find(|(x, _)| *x == t).map(|(_, c)| c.as_slice())
    }

    pub fn chains(&self) -> impl Iterator<Item = (u64, &[(BlockHash, u64)])> + '_ {
        self.chains.iter().map(|(t, c)| (*t, c.as_slice()))
    }

    pub fn take_notes(&mut self) -> Vec<Note> {
        std::mem::take(&mut self.notes)
    }

    pub fn pending(&self) -> usize {
        self.received.len() + self.buffer.len() + self.eligible.len() + self.blocked.len()
    }

    /// Units that received units are waiting for.
    pub fn missing(&self) -> Vec<UnitHash> {
        let mut m: Vec<UnitHash> = self.waiting.keys().copied().filter(|h| !self.received.contains_key(h)).collect();
        m.sort_unstable();
        m
    }

    fn n(&self) -> usize {
        self.cfg.weights.n()
    }

    fn round_len(&self) -> Tick {
        match (&self.cfg.rounds, &self.exponent) {
            (_, Some(e)) => e.round_len(),
            (RoundMode::Fixed { length }, None) => *length,
            (RoundMode::Dynamic(p), None) => 1 << p.n_min,
        }
    }

    /// Next tick after `now` at which `on_tick` has work.
    pub fn next_wakeup(&self, now: Tick) -> Tick {
        let len = self.round_len();
        let start = now - now % len;
        let (a, b) = thirds(len);
        let mut next = [start + a, start + b, start + len].into_iter().find(|t| *t > now).unwrap_or(start + len);
        if let Some((t, _)) = self.early.iter().next() {
            next = next.min((*t).max(now + 1));
        }
        next
    }

    pub fn on_tick(&mut self, now: Tick) -> Vec<Send> {
        let mut out = Vec::new();
        self.release_early(now, &mut out);
        if let (Some(e), RoundMode::Dynamic(p)) = (&mut self.exponent, &self.cfg.rounds) {
            if e.is_check(p, now) {
                let from = e.window_start(p, now);
                let b_fin = self.fin_ticks.iter().filter(|t| **t > from && **t <= now).count();
                if let Some(m) = e.step(p, now, b_fin as u64) {
                    self.notes.push(Note::Exponent(m));
                }
            }
        }
        let len = self.round_len();
        let (a, b) = thirds(len);
        let off = now % len;
        let start = now - off;
        if self.round.as_ref().is_none_or(|r| r.start != start) {
            self.end_round_bookkeeping();
            let leader = self.cfg.schedule.leader_at(start, self.cfg.rounds.base(), self.n());
            self.round = Some(Round { start, len, leader, proposal: None, confirmed: false });
            if leader == self.id() && off < a {
                self.drain();
                self.admit_eligible();
                self.create(now, UnitKind::Proposal, &mut out);
            }
        }
        if off == a {
            self.drain();
            self.admit_eligible();
        } else if off == b {
            self.create(now, UnitKind::Witness, &mut out);
        }
        out
    }

    pub fn on_message(&mut self, now: Tick, from: ValidatorId, msg: Message) -> Vec<Send> {
        let mut out = Vec::new();
        match msg {
            Message::Unit { unit, deps } => {
                for d in deps {
                    self.learn(now, from, d, &mut out);
                }
                let h = unit.hash();
                if let Some(r) = &mut self.round {
                    if r.slot(now) == Slot::Early
                        && r.leader != self.cfg.id
                        && unit.sender() == r.leader
                        && unit.kind() == UnitKind::Proposal
                        && unit.round_id() == r.start
                        && unit.era() == self.era
                    {
                        r.proposal = Some(h);
                    }
                }
                self.learn(now, from, unit, &mut out);
                let is_proposal = self.round.as_ref().is_some_and(|r| r.proposal == Some(h));
                if is_proposal && !self.dag.contains(h) {
                    if let Some(k) = self.known.idx(h) {
                        self.eligible.insert(k);
                    }
                }
            }
            Message::Endorse(e) => self.record(e, &mut out),
            Message::Quorum(es) => {
                for e in es.iter() {
                    self.record(*e, &mut out);
                }
            }
        }
        self.admit_eligible();
        self.maybe_confirm(now, &mut out);
        out
    }

    /// End-of-tick work: finality, era rollover. Repeats while an era
    /// change admits more units.
    pub fn settle(&mut self, now: Tick) -> Vec<Send> {
        let mut out = Vec::new();
        while self.dirty {
            self.dirty = false;
            self.settle_once(now, &mut out);
        }
        out
    }

    fn settle_once(&mut self, now: Tick, out: &mut Vec<Send>) {
        let fresh = self.tracker.update(&self.dag);
        let t0 = match &self.cfg.rounds {
            RoundMode::Dynamic(p) => Some(p.t0),
            RoundMode::Fixed { .. } => None,
        };
        let k = self.cfg.era_length;
        let boundary = if k > 0 { k * (self.era + 1) - 1 } else { u64::MAX };
        for (t, b) in fresh {
            let height = self.dag.tree().height(b).expect("finalized block is in the tree");
            // Blocks past the era boundary are never part of the ledger.
            if height > boundary {
                continue;
            }
            if let Some((_, c)) = self.chains.iter_mut().find(|(x, _)| *x == t) {
                c.push((b, height));
            }
            if Some(t) == t0 {
                self.fin_ticks.push(now);
            }
            self.notes.push(Note::Finalized { threshold: t, block: b, height });
        }
        self.maybe_new_era(now, out);
    }

    fn release_early(&mut self, now: Tick, out: &mut Vec<Send>) {
        let later = self.early.split_off(&(now + 1));
        let ready = std::mem::replace(&mut self.early, later);
        for (_, units) in ready {
            for u in units {
                let from = u.sender();
                self.learn(now, from, u, out);
            }
        }
    }

    // ---- reception ----

    fn learn(&mut self, now: Tick, from: ValidatorId, unit: Arc<Unit>, out: &mut Vec<Send>) {
        let h = unit.hash();
        if let Some(k) = self.known.idx(h) {
            self.mark_has(from, k);
            return;
        }
        if self.received.contains_key(&h) {
            return;
        }
        if unit.era() < self.era {
            return;
        }
        if unit.era() > self.era {
            self.future.push(unit);
            return;
        }
        if self.banned.contains(&unit.sender()) {
            self.drop_unit(h, "banned sender");
            return;
        }
        if unit.timestamp() > now {
            self.early.entry(unit.timestamp()).or_default().push(unit);
            return;
        }
        self.received.insert(h, unit);
        self.try_known(now, h, from, out);
    }

    fn try_known(&mut self, now: Tick, h: UnitHash, from: ValidatorId, out: &mut Vec<Send>) {
        let mut queue = vec![h];
        while let Some(h) = queue.pop() {
            let Some(unit) = self.received.get(&h).cloned() else { continue };
            let missing: Vec<UnitHash> =
                unit.citations().iter().copied().filter(|c| !self.known.contains(*c)).collect();
            if !missing.is_empty() {
                for m in missing {
                    let w = self.waiting.entry(m).or_default();
                    if !w.contains(&h) {
                        w.push(h);
                    }
                }
                continue;
            }
            self.received.remove(&h);
            if let Err(reason) = self.budget_ok(&unit) {
                self.drop_unit(h, &reason);
                continue;
            }
            match self.known.insert_arc(unit.clone()) {
                InsertOutcome::Accepted => {
                    let k = self.known.idx(h).expect("just inserted");
                    self.mark_has(unit.sender(), k);
                    self.mark_has(from, k);
                    self.on_known(now, k, out);
                    self.gossip_evidence(out);
                    if let Some(ws) = self.waiting.remove(&h) {
                        queue.extend(ws.into_iter().rev());
                    }
                }
                InsertOutcome::Duplicate => {}
                InsertOutcome::Rejected(r) => self.drop_unit(h, &format!("{r}")),
                InsertOutcome::MissingDependencies(_) => unreachable!("dependencies checked"),
            }
        }
    }

    /// Vertical spam filter: round starts on the grid, timestamps not
    /// before the round, and at most two units per round in one chain.
    fn budget_ok(&self, unit: &Unit) -> Result<(), String> {
        let base = self.cfg.rounds.base();
        if !unit.round_id().is_multiple_of(base) {
            return Err(format!("round {} is off the grid", unit.round_id()));
        }
        if unit.timestamp() < unit.round_id() {
            return Err("timestamp before round start".into());
        }
        if unit.seq() == 0 {
            return Ok(());
        }
        let pred = |u: &Unit| -> Option<Arc<Unit>> {
            u.citations()
                .iter()
                .filter_map(|c| self.known.get(*c))
                .find(|p| p.sender() == u.sender() && p.seq() + 1 == u.seq())
                .cloned()
        };
        let p = pred(unit).ok_or("missing predecessor")?;
        if p.round_id() > unit.round_id() || p.timestamp() > unit.timestamp() {
            return Err("goes back in time".into());
        }
        if p.round_id() == unit.round_id() {
            if let Some(pp) = pred(&p) {
                if pp.round_id() == unit.round_id() {
                    return Err("more than two units in one round".into());
                }
            }
        }
        Ok(())
    }

    fn mark_has(&mut self, v: ValidatorId, k: usize) {
        if v == self.cfg.id {
            return;
        }
        let bits = &mut self.peer_has[v.index()];
        bits.grow(self.known.len());
        bits.union_with(self.known.below(k));
        bits.insert(k);
    }

    fn drop_unit(&mut self, h: UnitHash, reason: &str) {
        self.stats.dropped += 1;
        self.notes.push(Note::Dropped { unit: h, reason: reason.to_string() });
    }

    fn on_known(&mut self, now: Tick, k: usize, out: &mut Vec<Send>) {
        self.endorse_policy(Some(k), out);
        let h = self.known.hash_at(k);
        if self.dag.contains(h) {
            return;
        }
        let immediate = match &self.round {
            Some(r) => r.slot(now) == Slot::Middle || r.proposal == Some(h),
            None => false,
        };
        if immediate {
            self.eligible.insert(k);
        } else {
            self.buffer.push(k);
        }
    }

    fn drain(&mut self) {
        for k in std::mem::take(&mut self.buffer) {
            self.eligible.insert(k);
        }
    }

    // ---- endorsements ----

    fn endorse_policy(&mut self, fresh: Option<usize>, out: &mut Vec<Send>) {
        let mode = self.cfg.endorsements;
        if mode == EndorsementMode::Off {
            return;
        }
        let eq = self.known.equivocators();
        let rescan = eq.len() != self.equivocators_seen;
        self.equivocators_seen = eq.len();
        if eq.is_empty() {
            return;
        }
        let candidates: Vec<usize> = if rescan { (0..self.known.len()).collect() } else { fresh.into_iter().collect() };
        for k in candidates {
            let h = self.known.hash_at(k);
            if self.mine.contains(&h) {
                continue;
            }
            let ok = match mode {
                EndorsementMode::Naive => should_endorse_naive(&eq, self.known.unit_at(k).sender()),
                EndorsementMode::Refined => should_endorse_refined(&self.known, &eq, k),
                EndorsementMode::Off => false,
            };
            if ok {
                self.endorse(h, out);
            }
        }
    }

    fn endorse(&mut self, h: UnitHash, out: &mut Vec<Send>) {
        self.mine.insert(h);
        let e = Endorsement { endorser: self.cfg.id, target: h };
        self.stats.endorsements_sent += 1;
        self.broadcast(Message::Endorse(e), out);
        self.record(e, out);
    }

    fn record(&mut self, e: Endorsement, out: &mut Vec<Send>) {
        if e.endorser.index() >= self.n() {
            return;
        }
        if self.ledger.record(e) == RecordOutcome::NewlyEndorsed {
            if let Some(i) = self.dag.idx(e.target) {
                self.dag_endorsed.grow(self.dag.len());
                self.dag_endorsed.insert(i);
            }
            self.lnc_dirty = true;
            self.confirm_dirty = true;
            if self.cfg.endorsements != EndorsementMode::Off {
                let all: Vec<Endorsement> =
                    self.ledger.endorsers(e.target).map(|v| Endorsement { endorser: v, target: e.target }).collect();
                self.broadcast(Message::Quorum(all.into()), out);
            }
        }
    }

    fn broadcast(&self, msg: Message, out: &mut Vec<Send>) {
        for v in self.cfg.weights.ids() {
            if v != self.cfg.id {
                out.push(Send { to: v, msg: msg.clone() });
            }
        }
    }

    // ---- the local DAG ----

    fn admit_eligible(&mut self) {
        if self.lnc_dirty {
            self.lnc_dirty = false;
            let blocked = std::mem::take(&mut self.blocked);
            self.eligible.extend(blocked);
        }
        let todo = std::mem::take(&mut self.eligible);
        for k in todo {
            if !self.admit(k) {
                self.blocked.insert(k);
            }
        }
        while self.blocked.len() > LNC_BUFFER_CAP {
            let first = *self.blocked.iter().next().expect("nonempty");
            self.blocked.remove(&first);
            self.stats.lnc_overflow += 1;
        }
    }

    /// Adds `known` unit `k` and its missing ancestors to the DAG.
    fn admit(&mut self, k: usize) -> bool {
        let mut stack = vec![k];
        while let Some(&x) = stack.last() {
            let unit = self.known.unit_at(x).clone();
            if self.dag.contains(unit.hash()) {
                stack.pop();
                continue;
            }
            if let Some(c) = unit.citations().iter().find(|c| !self.dag.contains(**c)) {
                stack.push(self.known.idx(*c).expect("known is closed"));
                continue;
            }
            if self.cfg.lnc && !self.dag.equivocators().is_empty() {
                let cites: Vec<usize> = unit.citations().iter().map(|c| self.dag.idx(*c).expect("present")).collect();
                let cand = self.dag.candidate(&cites);
                if lnc_violation(&self.dag, &self.endorsed_bits(), unit.sender(), &cand.below).is_some() {
                    self.stats.lnc_parked += 1;
                    return false;
                }
            }
            self.insert_dag(unit);
            stack.pop();
        }
        true
    }

    fn endorsed_bits(&self) -> FixedBitSet {
        let mut b = self.dag_endorsed.clone();
        b.grow(self.dag.len());
        b
    }

    fn insert_dag(&mut self, unit: Arc<Unit>) {
        let h = unit.hash();
        let outcome = self.dag.insert_arc(unit);
        debug_assert_eq!(outcome, InsertOutcome::Accepted, "known accepted {h}");
        if outcome == InsertOutcome::Accepted {
            let i = self.dag.idx(h).expect("inserted");
            self.dag_endorsed.grow(self.dag.len());
            if self.ledger.is_endorsed(h) {
                self.dag_endorsed.insert(i);
            }
            self.dirty = true;
            self.confirm_dirty = true;
            self.notes.push(Note::Admitted(h));
        }
    }

    // ---- unit creation ----

    /// Own latest plus every maximal unit; once equivocations are in the
    /// DAG, a non-endorsed tip is cited only if LNC still holds for the
    /// new unit, and otherwise replaced by the highest endorsed units
    /// below it. Tips by known equivocators are always replaced.
    fn select_citations(&self) -> Vec<usize> {
        let own = self.own_last.and_then(|h| self.dag.idx(h));
        let tips: Vec<usize> = self.dag.tips().collect();
        let mut chosen: Vec<usize> = own.into_iter().collect();
        let guarded = self.cfg.lnc && !self.dag.equivocators().is_empty();
        if !guarded {
            chosen.extend(tips.iter().copied().filter(|t| Some(*t) != own));
        } else {
            let endorsed = self.endorsed_bits();
            let mut faulty = self.known.equivocators();
            faulty.extend(self.dag.equivocators());
            for t in tips {
                if Some(t) == own || chosen.contains(&t) {
                    continue;
                }
                let by_faulty = faulty.contains(&self.dag.unit_at(t).sender());
                if endorsed.contains(t) && !by_faulty {
                    chosen.push(t);
                    continue;
                }
                let mut trial = chosen.clone();
                trial.push(t);
                let cand = self.dag.candidate(&trial);
                if !by_faulty && lnc_violation(&self.dag, &endorsed, self.cfg.id, &cand.below).is_none() {
                    chosen.push(t);
                } else {
                    for e in self.endorsed_frontier(t, &endorsed) {
                        if !chosen.contains(&e) {
                            chosen.push(e);
                        }
                    }
                }
            }
        }
        // Drop citations already implied by others, keeping the own one.
        let all = chosen.clone();
        chosen.retain(|c| Some(*c) == own || !all.iter().any(|d| d != c && self.dag.le(*c, *d)));
        chosen.sort_unstable();
        chosen
    }

    /// Highest endorsed units in `D̄(t)`.
    fn endorsed_frontier(&self, t: usize, endorsed: &FixedBitSet) -> Vec<usize> {
        let mut seen = FixedBitSet::with_capacity(self.dag.len());
        let mut stack = vec![t];
        let mut out = Vec::new();
        while let Some(x) = stack.pop() {
            if seen.put(x) {
                continue;
            }
            if endorsed.contains(x) {
                out.push(x);
                continue;
            }
            for c in self.dag.unit_at(x).citations() {
                stack.push(self.dag.idx(*c).expect("closed"));
            }
        }
        out
    }

    fn create(&mut self, now: Tick, kind: UnitKind, out: &mut Vec<Send>) -> Option<UnitHash> {
        let round = self.round.as_ref()?;
        let cites = self.select_citations();
        let seq = self.own_last.and_then(|h| self.dag.get(h)).map_or(0, |u| u.seq() + 1);
        let block = if kind == UnitKind::Proposal {
            let parent = self.dag.choose_proposal_parent(&cites);
            let parent = self.dag.tree().get(parent).expect("parent in tree").clone();
            // The block at height K·(era+1) − 1 closes the era.
            let k = self.cfg.era_length;
            if k > 0 && parent.height() + 1 > k * (self.era + 1) - 1 {
                return None;
            }
            let payload = format!("{}@{}", self.cfg.id, round.start).into_bytes();
            Some(Block::new(&parent, payload, self.cfg.id, now))
        } else {
            None
        };
        let unit = Arc::new(Unit::new(UnitFields {
            sender: self.cfg.id,
            seq,
            round_id: round.start,
            timestamp: now,
            kind,
            citations: cites.iter().map(|i| self.dag.hash_at(*i)).collect(),
            block,
            era: self.era,
        }));
        let h = unit.hash();
        let outcome = self.known.insert_arc(unit.clone());
        assert_eq!(outcome, InsertOutcome::Accepted, "own unit rejected by known view");
        self.insert_dag(unit.clone());
        self.stats.units_created += 1;
        self.notes.push(Note::Created(unit.clone()));
        self.own_last = Some(h);
        let k = self.known.idx(h).expect("inserted");
        self.ship(k, true, out);
        self.endorse_policy(Some(k), out);
        Some(h)
    }

    /// Sends `known` unit `k` with whatever ancestors each peer may lack;
    /// unless `always`, peers believed to have it are skipped.
    fn ship(&mut self, k: usize, always: bool, out: &mut Vec<Send>) {
        let unit = self.known.unit_at(k).clone();
        let mut closure = self.known.below(k).clone();
        closure.grow(self.known.len());
        closure.insert(k);
        for v in self.cfg.weights.ids() {
            if v == self.cfg.id {
                continue;
            }
            let has = &mut self.peer_has[v.index()];
            has.grow(self.known.len());
            if !always && has.contains(k) {
                continue;
            }
            let deps: Vec<Arc<Unit>> =
                closure.difference(has).filter(|x| *x != k).map(|x| self.known.unit_at(x).clone()).collect();
            has.union_with(&closure);
            out.push(Send { to: v, msg: Message::Unit { unit: unit.clone(), deps } });
        }
    }

    /// Forwards both units of the first evidence against each new
    /// equivocator, so that everyone learns of it.
    fn gossip_evidence(&mut self, out: &mut Vec<Send>) {
        let fresh: Vec<(UnitHash, UnitHash)> = self
            .known
            .evidence()
            .iter()
            .filter(|p| {
                let s = self.known.get(p.first).expect("evidence is known").sender();
                !self.gossiped.contains(&s)
            })
            .map(|p| (p.first, p.second))
            .collect();
        for (a, b) in fresh {
            let s = self.known.get(a).expect("evidence is known").sender();
            if !self.gossiped.insert(s) || s == self.cfg.id {
                continue;
            }
            for h in [a, b] {
                let k = self.known.idx(h).expect("evidence is known");
                self.ship(k, false, out);
            }
        }
    }

    fn maybe_confirm(&mut self, now: Tick, out: &mut Vec<Send>) {
        let Some(r) = &self.round else { return };
        if r.confirmed || r.slot(now) != Slot::Early || !self.confirm_dirty {
            return;
        }
        self.confirm_dirty = false;
        let Some(p) = r.proposal else { return };
        let Some(pi) = self.dag.idx(p) else { return };
        let cites = self.select_citations();
        if !cites.iter().any(|c| self.dag.le(pi, *c)) {
            return;
        }
        if let Some(r) = &mut self.round {
            r.confirmed = true;
        }
        self.create(now, UnitKind::Confirmation, out);
    }

    /// Counts a skipped confirmation for the round that just ended.
    fn end_round_bookkeeping(&mut self) {
        if let Some(r) = &self.round {
            if r.leader != self.cfg.id && !r.confirmed {
                self.stats.confirmations_skipped += 1;
            }
        }
    }

    // ---- eras ----

    fn maybe_new_era(&mut self, now: Tick, out: &mut Vec<Send>) {
        let k = self.cfg.era_length;
        if k == 0 {
            return;
        }
        let Some(tmin) = self.cfg.thresholds.iter().min().copied() else { return };
        let boundary = k * (self.era + 1) - 1;
        let Some((_, chain)) = self.chains.iter().find(|(t, _)| *t == tmin) else { return };
        let Some(&(tip, tip_height)) = chain.last() else { return };
        if tip_height < boundary {
            return;
        }
        let genesis_hash = self.dag.tree().ancestor_at(tip, boundary).expect("boundary is on the chain");
        let genesis = self.dag.tree().get(genesis_hash).expect("in tree").clone();
        // Chains that had not reached the new genesis take the minimum
        // threshold's prefix.
        let prefix: Vec<(BlockHash, u64)> = chain.iter().copied().take_while(|(_, hgt)| *hgt <= boundary).collect();
        for (t, c) in &mut self.chains {
            for &(b, hgt) in prefix.iter().skip(c.len()) {
                c.push((b, hgt));
                self.notes.push(Note::Finalized { threshold: *t, block: b, height: hgt });
            }
        }
        self.banned.extend(self.known.equivocators());
        self.era += 1;
        let weights = self.cfg.weights.clone();
        self.known = ProtocolState::new(weights.clone(), genesis.clone(), self.era);
        self.dag = ProtocolState::new(weights.clone(), genesis, self.era);
        self.ledger = EndorsementLedger::new(weights);
        self.dag_endorsed = FixedBitSet::new();
        self.mine.clear();
        self.equivocators_seen = 0;
        self.own_last = None;
        self.gossiped.clear();
        self.received.clear();
        self.waiting.clear();
        self.early.clear();
        self.buffer.clear();
        self.eligible.clear();
        self.blocked.clear();
        self.peer_has = vec![FixedBitSet::new(); self.n()];
        let tracked: Vec<u64> = self.chains.iter().map(|(t, _)| *t).collect();
        self.tracker = FinalityTracker::new(&tracked, genesis_hash);
        if let Some(r) = &mut self.round {
            r.proposal = None;
        }
        self.notes.push(Note::Era { era: self.era, genesis: genesis_hash });
        let future = std::mem::take(&mut self.future);
        for u in future {
            let from = u.sender();
            self.learn(now, from, u, out);
        }
        self.admit_eligible();
    }
}

/// Payload-free digest of a validator's finalized chains, for tests.
pub fn chains_digest(v: &Validator) -> u64 {
    let mut words = Vec::new();
    for (t, c) in v.chains() {
        words.push(t);
        words.extend(c.iter().map(|(b, _)| b.0));
    }
    mix(&words)
}
