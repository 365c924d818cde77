//! Scenario files: flat `key = value` lines, lists in brackets.
//!
//! See `docs/scenario-format.md` for the grammar.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::endorsement::EndorsementMode;
use crate::engine::{ExponentParams, RoundMode, Schedule};
use crate::ids::{Tick, ValidatorId};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScenarioError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("missing required field `{0}`")]
    Missing(&'static str),
    #[error("invalid scenario: {}", .0.join("; "))]
    Invalid(Vec<String>),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum RoundSpec {
    /// `3Δ`, or `6Δ` when endorsements are on.
    Fixed,
    /// `2^e` ticks.
    FixedExp(u32),
    Dynamic(ExponentParams),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Adversary {
    /// Forks a fraction `rate` of its own units, sending the twin to the
    /// upper half of the other validators.
    Equivocator {
        id: ValidatorId,
        rate: f64,
    },
    /// Sends its own units only to `targets`.
    Withholder {
        id: ValidatorId,
        targets: Vec<ValidatorId>,
    },
    /// Adds `extra` ticks to everything it sends to the lower half.
    Delayer {
        id: ValidatorId,
        extra: Tick,
    },
    /// Honest until `at`, silent afterwards.
    Crash {
        id: ValidatorId,
        at: Tick,
    },
    ForkBomb {
        coalition: Vec<ValidatorId>,
        depth: u32,
    },
}

impl Adversary {
    pub fn ids(&self) -> Vec<ValidatorId> {
        match self {
            Adversary::Equivocator { id, .. }
            | Adversary::Withholder { id, .. }
            | Adversary::Delayer { id, .. }
            | Adversary::Crash { id, .. } => vec![*id],
            Adversary::ForkBomb { coalition, .. } => coalition.clone(),
        }
    }

    pub fn is_byzantine(&self) -> bool {
        !matches!(self, Adversary::Crash { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub n: usize,
    pub weights: Option<Vec<u64>>,
    pub delta: Tick,
    pub gst: Tick,
    pub max_pre_gst_delay: Tick,
    pub horizon: Tick,
    pub era_length: u64,
    pub rounds: RoundSpec,
    pub endorsements: EndorsementMode,
    pub lnc: bool,
    pub schedule: Schedule,
    pub thresholds: Vec<u64>,
    pub thresholds_for: BTreeMap<u32, Vec<u64>>,
    pub adversaries: Vec<Adversary>,
    /// From this tick on, every delay is multiplied by the factor.
    pub delay_step: Option<(Tick, u64)>,
    pub seed: u64,
}

impl Scenario {
    /// Defaults for everything except `n`, `delta` and `horizon`.
    pub fn new(n: usize, delta: Tick, horizon: Tick) -> Scenario {
        Scenario {
            n,
            weights: None,
            delta,
            gst: 0,
            max_pre_gst_delay: 4 * delta,
            horizon,
            era_length: 1000,
            rounds: RoundSpec::Fixed,
            endorsements: EndorsementMode::Naive,
            lnc: true,
            schedule: Schedule::RoundRobin,
            thresholds: vec![0],
            thresholds_for: BTreeMap::new(),
            adversaries: Vec::new(),
            delay_step: None,
            seed: 0,
        }
    }

    pub fn parse(text: &str) -> Result<Scenario, ScenarioError> {
        let mut fields: BTreeMap<String, (usize, String)> = BTreeMap::new();
        let mut adversaries = Vec::new();
        let mut per_validator = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let err = |msg: String| ScenarioError::Parse { line, msg };
            let (key, value) = content.split_once('=').ok_or_else(|| err("expected `key = value`".into()))?;
            let key = key.trim();
            let value = value.trim().to_string();
            if key == "adversary" {
                adversaries.push(parse_adversary(&value).map_err(err)?);
                continue;
            }
            if let Some(v) = key.strip_prefix("thresholds.") {
                let v: u32 = v.parse().map_err(|_| err(format!("bad validator id `{v}`")))?;
                per_validator.insert(v, parse_list(&value).map_err(err)?);
                continue;
            }
            if !KEYS.contains(&key) {
                return Err(err(format!("unknown field `{key}`")));
            }
            if fields.insert(key.to_string(), (line, value)).is_some() {
                return Err(err(format!("duplicate field `{key}`")));
            }
        }
        let get = |k: &str| fields.get(k);
        let num = |k: &'static str| -> Result<Option<u64>, ScenarioError> {
            match get(k) {
                None => Ok(None),
                Some((line, v)) => v.parse::<u64>().map(Some).map_err(|_| ScenarioError::Parse {
                    line: *line,
                    msg: format!("`{k}` must be a non-negative integer, got `{v}`"),
                }),
            }
        };
        let n = num("n")?.ok_or(ScenarioError::Missing("n"))? as usize;
        let delta = num("delta")?.ok_or(ScenarioError::Missing("delta"))?;
        let horizon = num("horizon")?.ok_or(ScenarioError::Missing("horizon"))?;
        let mut s = Scenario::new(n, delta, horizon);
        if let Some((line, v)) = get("weights") {
            s.weights = Some(parse_list(v).map_err(|msg| ScenarioError::Parse { line: *line, msg })?);
        }
        if let Some(g) = num("gst")? {
            s.gst = g;
        }
        if let Some(d) = num("max_pre_gst_delay")? {
            s.max_pre_gst_delay = d;
        }
        if let Some(k) = num("era_length")? {
            s.era_length = k;
        }
        if let Some(seed) = num("seed")? {
            s.seed = seed;
        }
        if let Some((line, v)) = get("endorsements") {
            s.endorsements = match v.as_str() {
                "off" => EndorsementMode::Off,
                "naive" => EndorsementMode::Naive,
                "refined" => EndorsementMode::Refined,
                _ => {
                    return Err(ScenarioError::Parse {
                        line: *line,
                        msg: format!("`endorsements` must be off, naive or refined, got `{v}`"),
                    })
                }
            };
        }
        s.lnc = s.endorsements != EndorsementMode::Off;
        if let Some((line, v)) = get("lnc") {
            s.lnc = match v.as_str() {
                "on" => true,
                "off" => false,
                _ => {
                    return Err(ScenarioError::Parse {
                        line: *line,
                        msg: format!("`lnc` must be on or off, got `{v}`"),
                    })
                }
            };
        }
        if let Some((line, v)) = get("schedule") {
            s.schedule = match v.split_whitespace().collect::<Vec<_>>().as_slice() {
                ["round_robin"] => Schedule::RoundRobin,
                ["seeded"] => Schedule::Seeded(s.seed),
                ["seeded", x] => Schedule::Seeded(
                    x.parse()
                        .map_err(|_| ScenarioError::Parse { line: *line, msg: format!("bad schedule seed `{x}`") })?,
                ),
                _ => {
                    return Err(ScenarioError::Parse {
                        line: *line,
                        msg: format!("`schedule` must be round_robin or seeded [SEED], got `{v}`"),
                    })
                }
            };
        }
        if let Some((line, v)) = get("rounds") {
            s.rounds = parse_rounds(v).map_err(|msg| ScenarioError::Parse { line: *line, msg })?;
        }
        if let Some((line, v)) = get("thresholds") {
            s.thresholds = parse_list(v).map_err(|msg| ScenarioError::Parse { line: *line, msg })?;
        }
        if let Some((line, v)) = get("delay_step") {
            let parts: Vec<&str> = v.split_whitespace().collect();
            let bad =
                || ScenarioError::Parse { line: *line, msg: format!("`delay_step` must be `TICK FACTOR`, got `{v}`") };
            if parts.len() != 2 {
                return Err(bad());
            }
            s.delay_step = Some((parts[0].parse().map_err(|_| bad())?, parts[1].parse().map_err(|_| bad())?));
        }
        s.thresholds_for = per_validator;
        s.adversaries = adversaries;
        s.validate()?;
        Ok(s)
    }

    /// Lists every problem at once.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let mut errs = Vec::new();
        if self.n == 0 {
            errs.push("n: must be at least 1".to_string());
        }
        if self.delta < 2 {
            errs.push("delta: must be at least 2 ticks".into());
        }
        if self.max_pre_gst_delay == 0 {
            errs.push("max_pre_gst_delay: must be positive".into());
        }
        if let Some(w) = &self.weights {
            if w.len() != self.n {
                errs.push(format!("weights: {} entries for n = {}", w.len(), self.n));
            }
            if w.contains(&0) {
                errs.push("weights: must be positive".into());
            }
        }
        let total = self.total_weight();
        for t in self.thresholds.iter().chain(self.thresholds_for.values().flatten()) {
            if *t >= total {
                errs.push(format!("thresholds: {t} is not below the total weight {total}"));
            }
        }
        if self.thresholds.is_empty() {
            errs.push("thresholds: need at least one".into());
        }
        for v in self.thresholds_for.keys() {
            if *v as usize >= self.n {
                errs.push(format!("thresholds.{v}: no such validator"));
            }
        }
        match &self.rounds {
            RoundSpec::Fixed => {}
            RoundSpec::FixedExp(e) => {
                if !(2..=40).contains(e) {
                    errs.push(format!("rounds: exponent {e} out of range 2..=40"));
                }
            }
            RoundSpec::Dynamic(p) => {
                if let Err(e) = p.validate() {
                    errs.push(format!("rounds: {e}"));
                }
            }
        }
        if let Some((_, f)) = self.delay_step {
            if f == 0 {
                errs.push("delay_step: factor must be positive".into());
            }
        }
        let mut owner: BTreeMap<u32, usize> = BTreeMap::new();
        for (i, a) in self.adversaries.iter().enumerate() {
            for id in a.ids() {
                if id.index() >= self.n {
                    errs.push(format!("adversary {}: validator {} out of range", i + 1, id.0));
                } else if let Some(j) = owner.insert(id.0, i) {
                    errs.push(format!("adversary {}: validator {} already taken by adversary {}", i + 1, id.0, j + 1));
                }
            }
            match a {
                Adversary::Equivocator { rate, .. } if !(0.0..=1.0).contains(rate) => {
                    errs.push(format!("adversary {}: rate must be in [0, 1]", i + 1));
                }
                Adversary::Withholder { targets, .. } => {
                    if targets.iter().any(|t| t.index() >= self.n) {
                        errs.push(format!("adversary {}: target out of range", i + 1));
                    }
                }
                Adversary::ForkBomb { coalition, depth } => {
                    if *depth == 0 || coalition.len() != 2 * *depth as usize {
                        errs.push(format!("adversary {}: fork_bomb needs 2·depth members", i + 1));
                    }
                    if *depth > 8 {
                        errs.push(format!("adversary {}: depth above 8", i + 1));
                    }
                }
                _ => {}
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(ScenarioError::Invalid(errs))
        }
    }

    pub fn total_weight(&self) -> u64 {
        self.weights.as_ref().map_or(self.n as u64, |w| w.iter().sum())
    }

    pub fn round_mode(&self) -> RoundMode {
        match self.rounds {
            RoundSpec::Fixed => {
                let k = if self.endorsements == EndorsementMode::Off { 3 } else { 6 };
                RoundMode::Fixed { length: k * self.delta }
            }
            RoundSpec::FixedExp(e) => RoundMode::Fixed { length: 1 << e },
            RoundSpec::Dynamic(p) => RoundMode::Dynamic(p),
        }
    }

    /// Round length at the start of the run.
    pub fn base_round(&self) -> Tick {
        self.round_mode().base()
    }

    pub fn thresholds_of(&self, v: ValidatorId) -> &[u64] {
        self.thresholds_for.get(&v.0).map_or(&self.thresholds, Vec::as_slice)
    }

    pub fn adversary_of(&self, v: ValidatorId) -> Option<&Adversary> {
        self.adversaries.iter().find(|a| a.ids().contains(&v))
    }

    pub fn is_byzantine(&self, v: ValidatorId) -> bool {
        self.adversary_of(v).is_some_and(Adversary::is_byzantine)
    }

    /// Neither Byzantine nor crashing.
    pub fn is_correct(&self, v: ValidatorId) -> bool {
        self.adversary_of(v).is_none()
    }

    /// Validators whose views count for safety: all but the Byzantine.
    pub fn honest(&self) -> Vec<ValidatorId> {
        (0..self.n as u32).map(ValidatorId).filter(|v| !self.is_byzantine(*v)).collect()
    }

    pub fn byzantine_count(&self) -> usize {
        (0..self.n as u32).filter(|v| self.is_byzantine(ValidatorId(*v))).count()
    }
}

const KEYS: &[&str] = &[
    "n",
    "weights",
    "delta",
    "gst",
    "max_pre_gst_delay",
    "horizon",
    "era_length",
    "rounds",
    "endorsements",
    "lnc",
    "schedule",
    "thresholds",
    "delay_step",
    "seed",
];

fn parse_list<T: std::str::FromStr>(v: &str) -> Result<Vec<T>, String> {
    let inner = v
        .trim()
        .strip_prefix('[')
        .and_then(|x| x.strip_suffix(']'))
        .ok_or_else(|| format!("expected a bracketed list, got `{v}`"))?;
    inner
        .split(',')
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .map(|x| x.parse::<T>().map_err(|_| format!("bad list element `{x}`")))
        .collect()
}

fn parse_rounds(v: &str) -> Result<RoundSpec, String> {
    let parts: Vec<&str> = v.split_whitespace().collect();
    let num = |s: &str| s.parse::<u64>().map_err(|_| format!("bad number `{s}` in rounds"));
    match parts.as_slice() {
        ["fixed"] => Ok(RoundSpec::Fixed),
        ["fixed", e] => Ok(RoundSpec::FixedExp(num(e)? as u32)),
        ["dynamic", a, b, t0] => {
            Ok(RoundSpec::Dynamic(ExponentParams::standard(num(a)? as u32, num(b)? as u32, num(t0)?)))
        }
        ["dynamic", a, b, t0, cf, cs, c, d] => Ok(RoundSpec::Dynamic(ExponentParams {
            n_min: num(a)? as u32,
            n_max: num(b)? as u32,
            t0: num(t0)?,
            c_fail: num(cf)?,
            c_succ: num(cs)?,
            c: num(c)?,
            d: num(d)?,
        })),
        _ => Err(format!(
            "`rounds` must be `fixed`, `fixed E` or `dynamic N_MIN N_MAX T0 [C_FAIL C_SUCC C D]`, got `{v}`"
        )),
    }
}

fn parse_ids(v: &str) -> Result<Vec<ValidatorId>, String> {
    Ok(parse_list::<u32>(v)?.into_iter().map(ValidatorId).collect())
}

fn parse_adversary(v: &str) -> Result<Adversary, String> {
    let (kind, rest) = v.split_once(char::is_whitespace).unwrap_or((v, ""));
    let rest = rest.trim();
    let id_and = |rest: &str| -> Result<(ValidatorId, Vec<String>), String> {
        let mut it = rest.splitn(2, char::is_whitespace);
        let id = it.next().unwrap_or("");
        let id: u32 = id.parse().map_err(|_| format!("bad validator id `{id}`"))?;
        let tail = it.next().unwrap_or("").trim();
        let words = if tail.is_empty() {
            vec![]
        } else {
            let (k, val) = tail.split_once(char::is_whitespace).unwrap_or((tail, ""));
            vec![k.to_string(), val.trim().to_string()]
        };
        Ok((ValidatorId(id), words))
    };
    match kind {
        "equivocator" => {
            let (id, w) = id_and(rest)?;
            let rate = match w.as_slice() {
                [] => 1.0,
                [k, r] if k == "rate" => r.parse().map_err(|_| format!("bad rate `{r}`"))?,
                _ => return Err("expected `equivocator ID [rate R]`".into()),
            };
            Ok(Adversary::Equivocator { id, rate })
        }
        "withholder" => match id_and(rest)? {
            (id, w) if w.len() == 2 && w[0] == "targets" => {
                Ok(Adversary::Withholder { id, targets: parse_ids(&w[1])? })
            }
            _ => Err("expected `withholder ID targets [..]`".into()),
        },
        "delayer" => match id_and(rest)? {
            (id, w) if w.len() == 2 && w[0] == "extra" => {
                Ok(Adversary::Delayer { id, extra: w[1].parse().map_err(|_| format!("bad delay `{}`", w[1]))? })
            }
            _ => Err("expected `delayer ID extra TICKS`".into()),
        },
        "crash" => match id_and(rest)? {
            (id, w) if w.len() == 2 && w[0] == "at" => {
                Ok(Adversary::Crash { id, at: w[1].parse().map_err(|_| format!("bad tick `{}`", w[1]))? })
            }
            _ => Err("expected `crash ID at TICK`".into()),
        },
        "fork_bomb" => {
            let close = rest.find(']').ok_or("expected `fork_bomb [IDS] depth K`")?;
            let coalition = parse_ids(&rest[..=close])?;
            let tail: Vec<&str> = rest[close + 1..].split_whitespace().collect();
            match tail.as_slice() {
                ["depth", k] => {
                    Ok(Adversary::ForkBomb { coalition, depth: k.parse().map_err(|_| format!("bad depth `{k}`"))? })
                }
                _ => Err("expected `fork_bomb [IDS] depth K`".into()),
            }
        }
        _ => Err(format!("unknown adversary `{kind}`")),
    }
}

fn ids_text(ids: &[ValidatorId]) -> String {
    let v: Vec<String> = ids.iter().map(|i| i.0.to_string()).collect();
    format!("[{}]", v.join(", "))
}

fn list_text(v: &[u64]) -> String {
    let v: Vec<String> = v.iter().map(u64::to_string).collect();
    format!("[{}]", v.join(", "))
}

impl fmt::Display for Adversary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Adversary::Equivocator { id, rate } => write!(f, "equivocator {} rate {rate}", id.0),
            Adversary::Withholder { id, targets } => {
                write!(f, "withholder {} targets {}", id.0, ids_text(targets))
            }
            Adversary::Delayer { id, extra } => write!(f, "delayer {} extra {extra}", id.0),
            Adversary::Crash { id, at } => write!(f, "crash {} at {at}", id.0),
            Adversary::ForkBomb { coalition, depth } => {
                write!(f, "fork_bomb {} depth {depth}", ids_text(coalition))
            }
        }
    }
}

/// Canonical text; parses back to the same scenario.
impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "n = {}", self.n)?;
        if let Some(w) = &self.weights {
            writeln!(f, "weights = {}", list_text(w))?;
        }
        writeln!(f, "delta = {}", self.delta)?;
        writeln!(f, "gst = {}", self.gst)?;
        writeln!(f, "max_pre_gst_delay = {}", self.max_pre_gst_delay)?;
        writeln!(f, "horizon = {}", self.horizon)?;
        writeln!(f, "era_length = {}", self.era_length)?;
        match &self.rounds {
            RoundSpec::Fixed => writeln!(f, "rounds = fixed")?,
            RoundSpec::FixedExp(e) => writeln!(f, "rounds = fixed {e}")?,
            RoundSpec::Dynamic(p) => writeln!(
                f,
                "rounds = dynamic {} {} {} {} {} {} {}",
                p.n_min, p.n_max, p.t0, p.c_fail, p.c_succ, p.c, p.d
            )?,
        }
        let e = match self.endorsements {
            EndorsementMode::Off => "off",
            EndorsementMode::Naive => "naive",
            EndorsementMode::Refined => "refined",
        };
        writeln!(f, "endorsements = {e}")?;
        writeln!(f, "lnc = {}", if self.lnc { "on" } else { "off" })?;
        match self.schedule {
            Schedule::RoundRobin => writeln!(f, "schedule = round_robin")?,
            Schedule::Seeded(x) => writeln!(f, "schedule = seeded {x}")?,
        }
        writeln!(f, "thresholds = {}", list_text(&self.thresholds))?;
        for (v, t) in &self.thresholds_for {
            writeln!(f, "thresholds.{v} = {}", list_text(t))?;
        }
        for a in &self.adversaries {
            writeln!(f, "adversary = {a}")?;
        }
        if let Some((t, k)) = self.delay_step {
            writeln!(f, "delay_step = {t} {k}")?;
        }
        writeln!(f, "seed = {}", self.seed)
    }
}
