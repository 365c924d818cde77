//! Byzantine behaviours driven by the simulator.

use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dag::{InsertOutcome, ProtocolState};
use crate::endorsement::Endorsement;
use crate::engine::{Message, Send, Validator};
use crate::ids::{Tick, UnitHash, ValidatorId, WeightMap};
use crate::unit::{Block, Unit, UnitFields, UnitKind};

/// Honest engine whose own units are forked: with probability `rate` a
/// unit gets a twin, which goes to the odd-numbered validators while the
/// original goes to the even ones. Both get endorsed.
pub struct Equivocator {
    pub inner: Validator,
    rate: f64,
    rng: ChaCha8Rng,
    twins: HashMap<UnitHash, Option<Arc<Unit>>>,
    fresh: Vec<Arc<Unit>>,
    pub twins_made: u64,
}

impl Equivocator {
    pub fn new(inner: Validator, rate: f64, seed: u64) -> Equivocator {
        Equivocator {
            inner,
            rate,
            rng: ChaCha8Rng::seed_from_u64(seed),
            twins: HashMap::new(),
            fresh: Vec::new(),
            twins_made: 0,
        }
    }

    fn gets_twin(v: ValidatorId) -> bool {
        v.0 % 2 == 1
    }

    fn twin_of(&mut self, unit: &Arc<Unit>) -> Option<Arc<Unit>> {
        if let Some(t) = self.twins.get(&unit.hash()) {
            return t.clone();
        }
        let twin = if self.rng.random_bool(self.rate) { self.make_twin(unit) } else { None };
        if let Some(t) = &twin {
            self.twins_made += 1;
            self.fresh.push(t.clone());
        }
        self.twins.insert(unit.hash(), twin.clone());
        twin
    }

    fn make_twin(&self, unit: &Unit) -> Option<Arc<Unit>> {
        let (kind, block) = match unit.kind() {
            UnitKind::Proposal => {
                let b = unit.block()?;
                let parent = self.inner.known().tree().get(b.parent()?)?;
                let mut payload = b.payload().to_vec();
                payload.push(b'\'');
                (UnitKind::Proposal, Some(Block::new(parent, payload, b.creator(), b.slot())))
            }
            UnitKind::Witness => (UnitKind::Confirmation, None),
            UnitKind::Confirmation => (UnitKind::Witness, None),
        };
        Some(Arc::new(Unit::new(UnitFields {
            sender: unit.sender(),
            seq: unit.seq(),
            round_id: unit.round_id(),
            timestamp: unit.timestamp(),
            kind,
            citations: unit.citations().to_vec(),
            block,
            era: unit.era(),
        })))
    }

    /// Twins made since the last call. Peers assume the equivocator has
    /// its own units, so the engine must be given them directly.
    pub fn take_fresh(&mut self) -> Vec<Arc<Unit>> {
        std::mem::take(&mut self.fresh)
    }

    /// Rewrites the engine's outgoing messages.
    pub fn rewrite(&mut self, sends: Vec<Send>) -> Vec<Send> {
        let me = self.inner.id();
        let mut out = Vec::with_capacity(sends.len());
        for s in sends {
            match &s.msg {
                Message::Unit { unit, deps } if unit.sender() == me => match self.twin_of(unit) {
                    Some(t) if Self::gets_twin(s.to) => {
                        out.push(Send { to: s.to, msg: Message::Unit { unit: t, deps: deps.clone() } })
                    }
                    _ => out.push(s),
                },
                Message::Endorse(e) if e.endorser == me => {
                    let twin = self.twins.get(&e.target).cloned().flatten();
                    let to = s.to;
                    out.push(s);
                    if let Some(t) = twin {
                        let e2 = Endorsement { endorser: me, target: t.hash() };
                        out.push(Send { to, msg: Message::Endorse(e2) });
                    }
                }
                _ => out.push(s),
            }
        }
        out
    }
}

/// A coalition of `2k` validators that, every round and for every honest
/// validator separately, builds a binary tree of equivocations: level `j`
/// (1-based) holds `2^j` units by the `j`-th pair, each citing two units
/// of the level below, and the leaves cite the honest tips. Only the two
/// top units are sent, with the rest attached as dependencies.
pub struct ForkBomb {
    members: Vec<ValidatorId>,
    depth: u32,
    targets: Vec<ValidatorId>,
    view: ProtocolState,
    pending: HashMap<UnitHash, Arc<Unit>>,
    round_len: Tick,
    pub units_made: u64,
}

impl ForkBomb {
    pub fn new(members: Vec<ValidatorId>, depth: u32, weights: WeightMap, genesis: Block, round_len: Tick) -> ForkBomb {
        let targets = weights.ids().filter(|v| !members.contains(v)).collect();
        ForkBomb {
            members,
            depth,
            targets,
            view: ProtocolState::new(weights, genesis, 0),
            pending: HashMap::new(),
            round_len,
            units_made: 0,
        }
    }

    pub fn members(&self) -> &[ValidatorId] {
        &self.members
    }

    pub fn view(&self) -> &ProtocolState {
        &self.view
    }

    pub fn next_wakeup(&self, now: Tick) -> Tick {
        now - now % self.round_len + self.round_len
    }

    pub fn on_message(&mut self, msg: Message) {
        if let Message::Unit { unit, deps } = msg {
            for d in deps {
                self.absorb(d);
            }
            self.absorb(unit);
        }
    }

    fn absorb(&mut self, unit: Arc<Unit>) {
        if unit.era() != self.view.era() {
            return;
        }
        match self.view.insert_arc(unit.clone()) {
            InsertOutcome::MissingDependencies(_) => {
                self.pending.insert(unit.hash(), unit);
            }
            InsertOutcome::Accepted => loop {
                let ready: Vec<UnitHash> = self
                    .pending
                    .values()
                    .filter(|u| u.citations().iter().all(|c| self.view.contains(*c)))
                    .map(|u| u.hash())
                    .collect();
                if ready.is_empty() {
                    break;
                }
                let mut ready = ready;
                ready.sort_unstable();
                for h in ready {
                    let u = self.pending.remove(&h).expect("listed");
                    self.view.insert_arc(u);
                }
            },
            _ => {}
        }
    }

    /// Patterns for this round, as `(sender, send)` pairs.
    pub fn on_tick(&mut self, now: Tick) -> Vec<(ValidatorId, Send)> {
        if !now.is_multiple_of(self.round_len) {
            return Vec::new();
        }
        let mut base: Vec<usize> = self.targets.iter().filter_map(|v| self.view.latest_of(*v)).collect();
        base.sort_unstable();
        let base_hashes: Vec<UnitHash> = base.iter().map(|i| self.view.hash_at(*i)).collect();
        let parent = self.view.choose_proposal_parent(&base);
        let parent = self.view.tree().get(parent).expect("parent in tree").clone();
        let k = self.depth as usize;
        let mut out = Vec::new();
        for x in self.targets.clone() {
            let mut all: Vec<Arc<Unit>> = Vec::new();
            let leaf_pair = &self.members[2 * (k - 1)..2 * k];
            let mut level: Vec<Arc<Unit>> = (0..1usize << k)
                .map(|j| {
                    let creator = leaf_pair[j % 2];
                    let payload = format!("x{}:{}:{}", now, x.0, j).into_bytes();
                    Arc::new(Unit::new(UnitFields {
                        sender: creator,
                        seq: 0,
                        round_id: now,
                        timestamp: now,
                        kind: UnitKind::Proposal,
                        citations: base_hashes.clone(),
                        block: Some(Block::new(&parent, payload, creator, now)),
                        era: 0,
                    }))
                })
                .collect();
            all.extend(level.iter().cloned());
            for j in (1..k).rev() {
                let pair = &self.members[2 * (j - 1)..2 * j];
                level = level
                    .chunks(2)
                    .enumerate()
                    .map(|(i, kids)| {
                        Arc::new(Unit::new(UnitFields {
                            sender: pair[i % 2],
                            seq: 0,
                            round_id: now,
                            timestamp: now,
                            kind: UnitKind::Witness,
                            citations: kids.iter().map(|u| u.hash()).collect(),
                            block: None,
                            era: 0,
                        }))
                    })
                    .collect();
                all.extend(level.iter().cloned());
            }
            self.units_made += all.len() as u64;
            for u in &all {
                self.view.insert_arc(u.clone());
            }
            // `level` now holds the top units; everything else rides along.
            let tops: Vec<UnitHash> = level.iter().map(|u| u.hash()).collect();
            let deps: Vec<Arc<Unit>> = all.iter().filter(|u| !tops.contains(&u.hash())).cloned().collect();
            for (i, top) in level.iter().enumerate() {
                let deps = if i == 0 { deps.clone() } else { Vec::new() };
                out.push((top.sender(), Send { to: x, msg: Message::Unit { unit: top.clone(), deps } }));
            }
        }
        out
    }
}
