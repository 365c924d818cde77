//! Deterministic discrete-event simulation of a validator set.
//!
//! Events are ordered by `(tick, sequence number)`. When time advances,
//! every validator touched during the last tick settles (finality, era
//! changes) in id order. All randomness comes from the scenario seed.

pub mod adversary;
pub mod network;
pub mod trace;

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeSet, BinaryHeap, HashMap, HashSet};
use std::io::{self, Write};
use std::sync::Arc;

use serde::Serialize;

use crate::engine::{Message, Note, Send, Stats, Validator, ValidatorConfig};
use crate::fixture::genesis_block;
use crate::ids::{mix, BlockHash, Tick, UnitHash, ValidatorId, WeightMap};
use crate::scenario::{Adversary, Scenario};
use crate::unit::{Unit, UnitKind};

pub use adversary::{Equivocator, ForkBomb};
pub use network::Network;
pub use trace::{EventKind, Record, Trace, TraceError, TraceSink, TRACE_VERSION};

enum Driver {
    Honest(Validator),
    Crash {
        v: Validator,
        at: Tick,
        dead: bool,
    },
    Equivocator(Box<Equivocator>),
    Withholder {
        v: Validator,
        targets: Vec<ValidatorId>,
    },
    Delayer {
        v: Validator,
        extra: Tick,
    },
    /// Member of the fork-bomb coalition; the coalition itself lives on
    /// the simulator.
    Bomb,
}

impl Driver {
    fn validator(&self) -> Option<&Validator> {
        match self {
            Driver::Honest(v) | Driver::Crash { v, .. } | Driver::Withholder { v, .. } | Driver::Delayer { v, .. } => {
                Some(v)
            }
            Driver::Equivocator(e) => Some(&e.inner),
            Driver::Bomb => None,
        }
    }

    fn validator_mut(&mut self) -> Option<&mut Validator> {
        match self {
            Driver::Honest(v) | Driver::Withholder { v, .. } | Driver::Delayer { v, .. } => Some(v),
            Driver::Crash { v, dead, .. } => (!*dead).then_some(v),
            Driver::Equivocator(e) => Some(&mut e.inner),
            Driver::Bomb => None,
        }
    }
}

#[derive(Debug)]
enum What {
    Timer(ValidatorId),
    Deliver { from: ValidatorId, to: ValidatorId, msg: Message },
    Crash(ValidatorId),
    BombTimer,
}

#[derive(Debug)]
struct Event {
    time: Tick,
    seq: u64,
    what: What,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.time, self.seq).cmp(&(other.time, other.seq))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct FinalEvent {
    pub tick: Tick,
    pub validator: ValidatorId,
    pub threshold: u64,
    pub block: BlockHash,
    pub height: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Created {
    pub tick: Tick,
    pub sender: ValidatorId,
    pub unit: UnitHash,
    pub kind: UnitKindName,
    pub round_id: Tick,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum UnitKindName {
    Proposal,
    Confirmation,
    Witness,
}

impl From<UnitKind> for UnitKindName {
    fn from(k: UnitKind) -> Self {
        match k {
            UnitKind::Proposal => UnitKindName::Proposal,
            UnitKind::Confirmation => UnitKindName::Confirmation,
            UnitKind::Witness => UnitKindName::Witness,
        }
    }
}

impl UnitKindName {
    pub fn as_str(self) -> &'static str {
        match self {
            UnitKindName::Proposal => "proposal",
            UnitKindName::Confirmation => "confirmation",
            UnitKindName::Witness => "witness",
        }
    }
}

/// Everything a finished run reports.
pub struct Outcome {
    pub scenario: Scenario,
    /// Hex SHA-256 of the trace.
    pub digest: String,
    /// Trace lines, if kept.
    pub trace: Vec<String>,
    /// Final engine state per validator; `None` for fork-bomb members.
    pub validators: Vec<Option<Validator>>,
    pub finals: Vec<FinalEvent>,
    pub created: Vec<Created>,
    /// `(tick, validator, unit)` for every unit entering a local DAG.
    pub admits: Vec<(Tick, ValidatorId, UnitHash)>,
    pub exponents: Vec<(Tick, ValidatorId, u32)>,
    pub eras: Vec<(Tick, ValidatorId, u64)>,
    pub messages: u64,
    pub max_post_gst_delay: Tick,
    pub twins: u64,
    pub bomb_units: u64,
}

impl Outcome {
    pub fn validator(&self, v: ValidatorId) -> Option<&Validator> {
        self.validators.get(v.index()).and_then(Option::as_ref)
    }

    /// Validators that count for safety, with their engines.
    pub fn honest(&self) -> impl Iterator<Item = &Validator> + '_ {
        self.scenario.honest().into_iter().filter_map(|v| self.validator(v))
    }

    pub fn stats(&self) -> Vec<(ValidatorId, Stats)> {
        self.validators.iter().flatten().map(|v| (v.id(), v.stats().clone())).collect()
    }
}

/// Where the trace goes.
pub struct TraceOptions {
    pub out: Option<Box<dyn Write + std::marker::Send>>,
    pub keep: bool,
}

impl TraceOptions {
    pub fn none() -> TraceOptions {
        TraceOptions { out: None, keep: false }
    }

    pub fn keep() -> TraceOptions {
        TraceOptions { out: None, keep: true }
    }
}

pub struct Simulator {
    scenario: Scenario,
    net: Network,
    drivers: Vec<Driver>,
    bomb: Option<ForkBomb>,
    timers: Vec<Tick>,
    queue: BinaryHeap<Reverse<Event>>,
    seq: u64,
    now: Tick,
    touched: BTreeSet<usize>,
    sink: TraceSink,
    logged: HashSet<UnitHash>,
    finals: Vec<FinalEvent>,
    created: Vec<Created>,
    admits: Vec<(Tick, ValidatorId, UnitHash)>,
    exponents: Vec<(Tick, ValidatorId, u32)>,
    eras: Vec<(Tick, ValidatorId, u64)>,
    messages: u64,
    max_post_gst_delay: Tick,
    nonces: HashMap<(u32, u32, u64, Tick), u64>,
}

/// Engine configuration of validator `v` under `s`.
pub fn validator_config(s: &Scenario, v: ValidatorId) -> ValidatorConfig {
    ValidatorConfig {
        id: v,
        weights: weights(s),
        thresholds: s.thresholds_of(v).to_vec(),
        rounds: s.round_mode(),
        schedule: s.schedule,
        endorsements: s.endorsements,
        lnc: s.lnc,
        era_length: s.era_length,
    }
}

pub fn weights(s: &Scenario) -> WeightMap {
    match &s.weights {
        Some(w) => WeightMap::new(w.clone()),
        None => WeightMap::uniform(s.n),
    }
}

impl Simulator {
    pub fn new(scenario: Scenario, trace: TraceOptions) -> Simulator {
        let net = Network::from_scenario(&scenario);
        let mut bomb = None;
        let drivers: Vec<Driver> = (0..scenario.n as u32)
            .map(ValidatorId)
            .map(|v| {
                let engine = || Validator::new(validator_config(&scenario, v), genesis_block());
                match scenario.adversary_of(v) {
                    None => Driver::Honest(engine()),
                    Some(Adversary::Crash { at, .. }) => Driver::Crash { v: engine(), at: *at, dead: false },
                    Some(Adversary::Equivocator { rate, .. }) => Driver::Equivocator(Box::new(Equivocator::new(
                        engine(),
                        *rate,
                        mix(&[scenario.seed, v.0 as u64, 0xe9]),
                    ))),
                    Some(Adversary::Withholder { targets, .. }) => {
                        Driver::Withholder { v: engine(), targets: targets.clone() }
                    }
                    Some(Adversary::Delayer { extra, .. }) => Driver::Delayer { v: engine(), extra: *extra },
                    Some(Adversary::ForkBomb { coalition, depth }) => {
                        if bomb.is_none() {
                            bomb = Some(ForkBomb::new(
                                coalition.clone(),
                                *depth,
                                weights(&scenario),
                                genesis_block(),
                                scenario.base_round(),
                            ));
                        }
                        Driver::Bomb
                    }
                }
            })
            .collect();
        let mut sink = TraceSink::new(trace.out, trace.keep);
        sink.raw(&format!("# {TRACE_VERSION}"));
        for line in scenario.to_string().lines() {
            if let Some((k, v)) = line.split_once(" = ") {
                sink.header(&format!("scenario.{k}"), v);
            }
        }
        let n = scenario.n;
        Simulator {
            net,
            drivers,
            bomb,
            timers: vec![0; n],
            queue: BinaryHeap::new(),
            seq: 0,
            now: 0,
            touched: BTreeSet::new(),
            sink,
            logged: HashSet::new(),
            finals: Vec::new(),
            created: Vec::new(),
            admits: Vec::new(),
            exponents: Vec::new(),
            eras: Vec::new(),
            messages: 0,
            max_post_gst_delay: 0,
            nonces: HashMap::new(),
            scenario,
        }
    }

    fn push(&mut self, time: Tick, what: What) {
        self.seq += 1;
        self.queue.push(Reverse(Event { time, seq: self.seq, what }));
    }

    pub fn run(mut self) -> io::Result<Outcome> {
        for i in 0..self.drivers.len() {
            let v = ValidatorId(i as u32);
            match &self.drivers[i] {
                Driver::Bomb => {}
                Driver::Crash { at, .. } => {
                    let at = *at;
                    self.push(at, What::Crash(v));
                    self.push(0, What::Timer(v));
                }
                _ => self.push(0, What::Timer(v)),
            }
        }
        if self.bomb.is_some() {
            self.push(0, What::BombTimer);
        }
        let horizon = self.scenario.horizon;
        while let Some(Reverse(ev)) = self.queue.pop() {
            if ev.time > horizon {
                break;
            }
            if ev.time > self.now {
                self.settle_all();
                self.now = ev.time;
            }
            self.handle(ev.what);
        }
        self.settle_all();
        self.finish()
    }

    fn handle(&mut self, what: What) {
        let now = self.now;
        match what {
            What::Timer(v) => {
                if self.timers[v.index()] != now {
                    return;
                }
                self.timers[v.index()] = Tick::MAX;
                let Some(engine) = self.drivers[v.index()].validator_mut() else { return };
                let sends = engine.on_tick(now);
                self.after(v, sends);
            }
            What::BombTimer => {
                let bomb = self.bomb.as_mut().expect("bomb timer without a bomb");
                let sends = bomb.on_tick(now);
                let next = bomb.next_wakeup(now);
                for (from, s) in sends {
                    self.send(from, s, 0);
                }
                self.push(next, What::BombTimer);
            }
            What::Crash(v) => {
                if let Driver::Crash { dead, .. } = &mut self.drivers[v.index()] {
                    *dead = true;
                }
                let mut r = Record::new(now, EventKind::Crash);
                r.sender = Some(v.0);
                self.sink.record(&r);
            }
            What::Deliver { from, to, msg } => {
                let mut r = Record::new(now, EventKind::Deliver);
                r.sender = Some(from.0);
                r.recipient = Some(to.0);
                r.digest = Some(msg.digest());
                r.detail = msg.tag().to_string();
                self.sink.record(&r);
                if matches!(self.drivers[to.index()], Driver::Bomb) {
                    self.bomb.as_mut().expect("bomb member without a bomb").on_message(msg);
                    return;
                }
                let Some(engine) = self.drivers[to.index()].validator_mut() else { return };
                let sends = engine.on_message(now, from, msg);
                self.after(to, sends);
            }
        }
    }

    /// Logs notes, routes sends and re-arms the timer of `v`.
    fn after(&mut self, v: ValidatorId, sends: Vec<Send>) {
        let now = self.now;
        self.touched.insert(v.index());
        self.drain_notes(v);
        self.route(v, sends);
        let Some(engine) = self.drivers[v.index()].validator() else { return };
        let next = engine.next_wakeup(now);
        if next < self.timers[v.index()] {
            self.timers[v.index()] = next;
            self.push(next, What::Timer(v));
        }
    }

    fn route(&mut self, v: ValidatorId, sends: Vec<Send>) {
        let now = self.now;
        let mut sends = sends;
        if let Driver::Equivocator(e) = &mut self.drivers[v.index()] {
            sends = e.rewrite(sends);
            for twin in e.take_fresh() {
                let more = e.inner.on_message(now, v, Message::Unit { unit: twin, deps: Vec::new() });
                sends.extend(e.rewrite(more));
            }
        }
        for s in sends {
            let extra = match &self.drivers[v.index()] {
                Driver::Withholder { targets, .. } => {
                    let own = matches!(&s.msg, Message::Unit { unit, .. } if unit.sender() == v);
                    if own && !targets.contains(&s.to) {
                        continue;
                    }
                    0
                }
                Driver::Delayer { extra, .. } if s.to.index() < self.scenario.n / 2 => *extra,
                _ => 0,
            };
            self.send(v, s, extra);
        }
    }

    fn log_unit(&mut self, u: &Arc<Unit>) {
        if self.logged.insert(u.hash()) {
            let mut r = Record::new(self.now, EventKind::Unit);
            r.sender = Some(u.sender().0);
            r.digest = Some(u.hash().0);
            r.detail = hex::encode(u.wire_bytes());
            self.sink.record(&r);
        }
    }

    fn send(&mut self, from: ValidatorId, s: Send, extra: Tick) {
        let now = self.now;
        let mut r = Record::new(now, EventKind::Send);
        r.sender = Some(from.0);
        r.recipient = Some(s.to.0);
        r.digest = Some(s.msg.digest());
        r.detail = match &s.msg {
            Message::Unit { unit, deps } => {
                for d in deps {
                    self.log_unit(d);
                }
                self.log_unit(unit);
                format!("unit+{}", deps.len())
            }
            m => m.tag().to_string(),
        };
        self.sink.record(&r);
        let key = (from.0, s.to.0, s.msg.digest(), now);
        let nonce = self.nonces.entry(key).or_insert(0);
        *nonce += 1;
        let delay = self.net.delay(from, s.to, s.msg.digest(), now, *nonce) + extra;
        if now >= self.scenario.gst && extra == 0 {
            self.max_post_gst_delay = self.max_post_gst_delay.max(delay);
        }
        self.messages += 1;
        self.push(now + delay, What::Deliver { from, to: s.to, msg: s.msg });
    }

    fn settle_all(&mut self) {
        self.nonces.clear();
        let touched = std::mem::take(&mut self.touched);
        for i in touched {
            let v = ValidatorId(i as u32);
            let now = self.now;
            let Some(engine) = self.drivers[i].validator_mut() else { continue };
            let sends = engine.settle(now);
            self.drain_notes(v);
            self.route(v, sends);
        }
    }

    fn drain_notes(&mut self, v: ValidatorId) {
        let Some(engine) = self.drivers[v.index()].validator_mut() else { return };
        let notes = engine.take_notes();
        let now = self.now;
        for note in notes {
            let mut r = Record::new(now, EventKind::Create);
            r.sender = Some(v.0);
            match note {
                Note::Created(u) => {
                    self.log_unit(&u);
                    r.digest = Some(u.hash().0);
                    let kind = UnitKindName::from(u.kind());
                    r.detail = kind.as_str().to_string();
                    self.created.push(Created { tick: now, sender: v, unit: u.hash(), kind, round_id: u.round_id() });
                }
                Note::Admitted(h) => {
                    r.kind = EventKind::Admit;
                    r.digest = Some(h.0);
                    self.admits.push((now, v, h));
                }
                Note::Finalized { threshold, block, height } => {
                    r.kind = EventKind::Final;
                    r.digest = Some(block.0);
                    r.detail = format!("{threshold}:{height}");
                    self.finals.push(FinalEvent { tick: now, validator: v, threshold, block, height });
                }
                Note::Exponent(m) => {
                    r.kind = EventKind::Exponent;
                    r.detail = m.to_string();
                    self.exponents.push((now, v, m));
                }
                Note::Era { era, genesis } => {
                    r.kind = EventKind::Era;
                    r.digest = Some(genesis.0);
                    r.detail = era.to_string();
                    self.eras.push((now, v, era));
                }
                Note::Dropped { unit, reason } => {
                    r.kind = EventKind::Drop;
                    r.digest = Some(unit.0);
                    r.detail = reason;
                }
            }
            self.sink.record(&r);
        }
    }

    fn finish(mut self) -> io::Result<Outcome> {
        self.sink.raw("# summary");
        for d in &self.drivers {
            let Some(v) = d.validator() else { continue };
            for (t, chain) in v.chains() {
                let (b, h) = chain.last().copied().expect("chains start at genesis");
                self.sink.header(&format!("head.{}.{}", v.id().0, t), &format!("{h} {:016x}", b.0));
            }
        }
        self.sink.header("messages", &self.messages.to_string());
        self.sink.header("units", &self.logged.len().to_string());
        let (digest, trace) = self.sink.finish()?;
        let twins = self
            .drivers
            .iter()
            .map(|d| match d {
                Driver::Equivocator(e) => e.twins_made,
                _ => 0,
            })
            .sum();
        let bomb_units = self.bomb.as_ref().map_or(0, |b| b.units_made);
        let validators = self
            .drivers
            .into_iter()
            .map(|d| match d {
                Driver::Honest(v)
                | Driver::Crash { v, .. }
                | Driver::Withholder { v, .. }
                | Driver::Delayer { v, .. } => Some(v),
                Driver::Equivocator(e) => Some(e.inner),
                Driver::Bomb => None,
            })
            .collect();
        Ok(Outcome {
            scenario: self.scenario,
            digest,
            trace,
            validators,
            finals: self.finals,
            created: self.created,
            admits: self.admits,
            exponents: self.exponents,
            eras: self.eras,
            messages: self.messages,
            max_post_gst_delay: self.max_post_gst_delay,
            twins,
            bomb_units,
        })
    }
}

/// Runs `s` without writing a trace anywhere.
pub fn run(s: &Scenario) -> Outcome {
    Simulator::new(s.clone(), TraceOptions::none()).run().expect("no trace output to fail")
}

/// Runs `s` and keeps the trace lines in memory.
pub fn run_kept(s: &Scenario) -> Outcome {
    Simulator::new(s.clone(), TraceOptions::keep()).run().expect("no trace output to fail")
}
