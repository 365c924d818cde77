//! Small hand-written DAGs for tests and the `oracle` command.
//!
//! ```text
//! # comment
//! n = 3
//! weights = [1, 2, 1]
//! unit a0 0
//! unit b0 1 cites a0 block B1 G
//! unit a1 0 cites a0 b0
//! ```
//!
//! `unit NAME SENDER [cites NAME...] [block NAME PARENT]`. `G` names the
//! genesis block. Sequence numbers and timestamps are assigned
//! automatically.

use std::collections::HashMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dag::{InsertOutcome, ProtocolState};
use crate::ids::{BlockHash, UnitHash, ValidatorId, WeightMap};
use crate::unit::{Block, Unit, UnitFields, UnitKind};

pub const GENESIS_NAME: &str = "G";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FixtureError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("missing `n`")]
    MissingN,
    #[error("unit {name}: {msg}")]
    Build { name: String, msg: String },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FixtureUnit {
    pub name: String,
    pub sender: u32,
    /// Indices of earlier units.
    pub cites: Vec<usize>,
    /// Index into [`Fixture::blocks`].
    pub block: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FixtureBlock {
    pub name: String,
    /// Index of the parent block, `None` for genesis.
    pub parent: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fixture {
    pub weights: Vec<u64>,
    pub units: Vec<FixtureUnit>,
    pub blocks: Vec<FixtureBlock>,
}

/// A fixture loaded into a protocol state.
pub struct Built {
    pub state: ProtocolState,
    pub units: Vec<UnitHash>,
    pub blocks: Vec<BlockHash>,
}

impl Built {
    pub fn block_by_name(&self, fx: &Fixture, name: &str) -> Option<BlockHash> {
        if name == GENESIS_NAME {
            return Some(self.state.genesis());
        }
        fx.blocks.iter().position(|b| b.name == name).map(|i| self.blocks[i])
    }
}

pub fn genesis_block() -> Block {
    Block::genesis(b"genesis")
}

impl Fixture {
    pub fn n(&self) -> usize {
        self.weights.len()
    }

    pub fn parse(text: &str) -> Result<Fixture, FixtureError> {
        let mut weights: Option<Vec<u64>> = None;
        let mut n: Option<usize> = None;
        let mut units: Vec<FixtureUnit> = Vec::new();
        let mut blocks: Vec<FixtureBlock> = Vec::new();
        let mut unit_names: HashMap<String, usize> = HashMap::new();
        let mut block_names: HashMap<String, usize> = HashMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = lineno + 1;
            let err = |msg: String| FixtureError::Parse { line, msg };
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            if let Some((k, v)) = body.split_once('=') {
                let (k, v) = (k.trim(), v.trim());
                match k {
                    "n" => n = Some(v.parse().map_err(|_| err(format!("bad n `{v}`")))?),
                    "weights" => {
                        let inner = v
                            .strip_prefix('[')
                            .and_then(|s| s.strip_suffix(']'))
                            .ok_or_else(|| err("weights must be a bracketed list".into()))?;
                        let ws: Result<Vec<u64>, _> =
                            inner.split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::parse).collect();
                        weights = Some(ws.map_err(|_| err("bad weight".into()))?);
                    }
                    _ => return Err(err(format!("unknown key `{k}`"))),
                }
                continue;
            }
            let toks: Vec<&str> = body.split_whitespace().collect();
            if toks.first() != Some(&"unit") || toks.len() < 3 {
                return Err(err("expected `unit NAME SENDER ...`".into()));
            }
            let name = toks[1].to_string();
            if unit_names.contains_key(&name) {
                return Err(err(format!("duplicate unit `{name}`")));
            }
            let sender: u32 = toks[2].parse().map_err(|_| err(format!("bad sender `{}`", toks[2])))?;
            let mut cites = Vec::new();
            let mut block = None;
            let mut i = 3;
            while i < toks.len() {
                match toks[i] {
                    "cites" => {
                        i += 1;
                        while i < toks.len() && toks[i] != "block" {
                            let c =
                                unit_names.get(toks[i]).ok_or_else(|| err(format!("unknown unit `{}`", toks[i])))?;
                            cites.push(*c);
                            i += 1;
                        }
                    }
                    "block" => {
                        if i + 2 >= toks.len() {
                            return Err(err("expected `block NAME PARENT`".into()));
                        }
                        let bname = toks[i + 1].to_string();
                        let pname = toks[i + 2];
                        if bname == GENESIS_NAME || block_names.contains_key(&bname) {
                            return Err(err(format!("duplicate block `{bname}`")));
                        }
                        let parent = if pname == GENESIS_NAME {
                            None
                        } else {
                            Some(*block_names.get(pname).ok_or_else(|| err(format!("unknown block `{pname}`")))?)
                        };
                        block_names.insert(bname.clone(), blocks.len());
                        block = Some(blocks.len());
                        blocks.push(FixtureBlock { name: bname, parent });
                        i += 3;
                    }
                    other => return Err(err(format!("unexpected `{other}`"))),
                }
            }
            unit_names.insert(name.clone(), units.len());
            units.push(FixtureUnit { name, sender, cites, block });
        }
        let weights = match (weights, n) {
            (Some(w), Some(n)) if w.len() != n => {
                return Err(FixtureError::Parse { line: 0, msg: "weights length differs from n".into() })
            }
            (Some(w), _) => w,
            (None, Some(n)) => vec![1; n],
            (None, None) => return Err(FixtureError::MissingN),
        };
        if weights.is_empty() || weights.contains(&0) {
            return Err(FixtureError::Parse { line: 0, msg: "weights must be positive".into() });
        }
        for u in &units {
            if u.sender as usize >= weights.len() {
                return Err(FixtureError::Build {
                    name: u.name.clone(),
                    msg: format!("sender {} out of range", u.sender),
                });
            }
        }
        Ok(Fixture { weights, units, blocks })
    }

    pub fn build(&self) -> Result<Built, FixtureError> {
        let mut state = ProtocolState::new(WeightMap::new(self.weights.clone()), genesis_block(), 0);
        let mut units = Vec::new();
        let mut blocks: Vec<Block> = Vec::new();
        let mut seqs: Vec<u64> = Vec::new();
        for (k, fu) in self.units.iter().enumerate() {
            let seq = fu
                .cites
                .iter()
                .filter(|c| self.units[**c].sender == fu.sender)
                .map(|c| seqs[*c] + 1)
                .max()
                .unwrap_or(0);
            let block = fu.block.map(|bi| {
                let fb = &self.blocks[bi];
                let parent = match fb.parent {
                    Some(p) => blocks[p].clone(),
                    None => genesis_block(),
                };
                Block::new(&parent, fb.name.as_bytes().to_vec(), ValidatorId(fu.sender), k as u64)
            });
            if let Some(b) = &block {
                blocks.push(b.clone());
            }
            let unit = Unit::new(UnitFields {
                sender: ValidatorId(fu.sender),
                seq,
                round_id: k as u64,
                timestamp: k as u64,
                kind: if block.is_some() { UnitKind::Proposal } else { UnitKind::Witness },
                citations: fu.cites.iter().map(|c| units[*c]).collect(),
                block,
                era: 0,
            });
            let h = unit.hash();
            match state.insert(unit) {
                InsertOutcome::Accepted => {}
                other => return Err(FixtureError::Build { name: fu.name.clone(), msg: format!("{other:?}") }),
            }
            units.push(h);
            seqs.push(seq);
        }
        Ok(Built { state, units, blocks: blocks.iter().map(Block::hash).collect() })
    }

    /// A random valid fixture. Proposals pick their parent by GHOST so that
    /// they pass the vote check; about one unit in eight forks its sender's
    /// chain.
    pub fn random(seed: u64, n: usize, units: usize) -> Fixture {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fx = Fixture { weights: vec![1; n], units: Vec::new(), blocks: Vec::new() };
        let mut state = ProtocolState::new(WeightMap::uniform(n), genesis_block(), 0);
        let mut hashes: Vec<UnitHash> = Vec::new();
        let mut block_objs: Vec<Block> = Vec::new();
        let mut seqs: Vec<u64> = Vec::new();
        let mut latest: Vec<Option<usize>> = vec![None; n];
        for k in 0..units {
            let sender = rng.random_range(0..n);
            let mut cites: Vec<usize> = Vec::new();
            let fork = rng.random_bool(0.125);
            match latest[sender] {
                Some(l) if !fork => cites.push(l),
                Some(l) if fx.units[l].cites.iter().any(|c| fx.units[*c].sender as usize == sender) => {
                    let prev = *fx.units[l].cites.iter().find(|c| fx.units[**c].sender as usize == sender).unwrap();
                    cites.push(prev);
                }
                _ => {}
            }
            for j in 0..k {
                if fx.units[j].sender as usize != sender && rng.random_bool(0.4) {
                    cites.push(j);
                }
            }
            cites.sort_unstable();
            cites.dedup();
            let seq = cites
                .iter()
                .filter(|c| fx.units[**c].sender as usize == sender)
                .map(|c| seqs[*c] + 1)
                .max()
                .unwrap_or(0);
            let local: Vec<usize> = cites.iter().map(|c| state.idx(hashes[*c]).unwrap()).collect();
            let block = if rng.random_bool(0.35) {
                let ph = state.choose_proposal_parent(&local);
                let parent_idx = block_objs.iter().position(|b| b.hash() == ph);
                let parent = match parent_idx {
                    Some(p) => block_objs[p].clone(),
                    None => genesis_block(),
                };
                let name = format!("B{}", fx.blocks.len());
                let b = Block::new(&parent, name.as_bytes().to_vec(), ValidatorId(sender as u32), k as u64);
                fx.blocks.push(FixtureBlock { name, parent: parent_idx });
                block_objs.push(b.clone());
                Some((fx.blocks.len() - 1, b))
            } else {
                None
            };
            let unit = Unit::new(UnitFields {
                sender: ValidatorId(sender as u32),
                seq,
                round_id: k as u64,
                timestamp: k as u64,
                kind: if block.is_some() { UnitKind::Proposal } else { UnitKind::Witness },
                citations: cites.iter().map(|c| hashes[*c]).collect(),
                block: block.as_ref().map(|(_, b)| b.clone()),
                era: 0,
            });
            hashes.push(unit.hash());
            let outcome = state.insert(unit);
            debug_assert_eq!(outcome, InsertOutcome::Accepted);
            seqs.push(seq);
            latest[sender] = Some(k);
            fx.units.push(FixtureUnit {
                name: format!("u{k}"),
                sender: sender as u32,
                cites,
                block: block.map(|(i, _)| i),
            });
        }
        fx
    }
}

impl fmt::Display for Fixture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "n = {}", self.weights.len())?;
        if self.weights.iter().any(|w| *w != 1) {
            let ws: Vec<String> = self.weights.iter().map(u64::to_string).collect();
            writeln!(f, "weights = [{}]", ws.join(", "))?;
        }
        for u in &self.units {
            write!(f, "unit {} {}", u.name, u.sender)?;
            if !u.cites.is_empty() {
                write!(f, " cites")?;
                for c in &u.cites {
                    write!(f, " {}", self.units[*c].name)?;
                }
            }
            if let Some(b) = u.block {
                let fb = &self.blocks[b];
                let parent = fb.parent.map_or(GENESIS_NAME, |p| self.blocks[p].name.as_str());
                write!(f, " block {} {}", fb.name, parent)?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}
