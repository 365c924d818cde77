//! Run reports derived from a trace and its replay verdict, as text or as
//! JSON lines.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::Serialize;
use serde_json::json;

use crate::check::{units_of, CheckError, Verdict};
use crate::ids::{BlockHash, Tick, ValidatorId};
use crate::sim::{EventKind, Trace};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Latency {
    pub threshold: u64,
    /// Finalizations counted, over all honest validators.
    pub count: u64,
    pub mean: f64,
    pub max: Tick,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ValidatorStats {
    pub validator: u32,
    pub created: u64,
    pub admitted: u64,
    pub dropped: u64,
    /// Units in the DAG of the current era at the end.
    pub dag: u64,
    pub era: u64,
}

/// Per threshold, the common-prefix height of each pair of honest
/// validators, or `None` where their chains conflict.
pub type Agreement = (u64, Vec<ValidatorId>, Vec<Vec<Option<u64>>>);

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Report {
    pub n: usize,
    pub horizon: Tick,
    pub seed: u64,
    pub thresholds: Vec<u64>,
    pub messages: u64,
    pub units: u64,
    pub endorsements: u64,
    pub latencies: Vec<Latency>,
    pub agreement: Vec<Agreement>,
    pub validators: Vec<ValidatorStats>,
    pub verdict: Verdict,
}

impl Report {
    pub fn build(trace: &Trace, verdict: Verdict) -> Result<Report, CheckError> {
        let scenario = crate::scenario::Scenario::parse(&trace.scenario_text())?;
        let units = units_of(trace)?;
        let mut born: HashMap<BlockHash, Tick> = HashMap::new();
        let mut messages = 0;
        let mut endorsements = 0;
        let mut stats: BTreeMap<u32, ValidatorStats> =
            (0..scenario.n as u32).map(|v| (v, ValidatorStats { validator: v, ..Default::default() })).collect();
        for r in &trace.records {
            let who = r.sender.and_then(|v| stats.get_mut(&v));
            match r.kind {
                EventKind::Send => {
                    messages += 1;
                    if r.detail == "endorse" {
                        endorsements += 1;
                    }
                }
                EventKind::Unit => {
                    let b = r.digest.and_then(|d| units.get(&crate::ids::UnitHash(d))).and_then(|u| u.block());
                    if let Some(b) = b {
                        born.entry(b.hash()).or_insert(r.tick);
                    }
                }
                EventKind::Create => {
                    if let Some(s) = who {
                        s.created += 1;
                    }
                }
                EventKind::Admit => {
                    if let Some(s) = who {
                        s.admitted += 1;
                        s.dag += 1;
                    }
                }
                EventKind::Drop => {
                    if let Some(s) = who {
                        s.dropped += 1;
                    }
                }
                EventKind::Era => {
                    if let Some(s) = who {
                        s.era += 1;
                        s.dag = 0;
                    }
                }
                _ => {}
            }
        }
        let latencies = verdict
            .thresholds
            .iter()
            .map(|&t| {
                let mut count = 0u64;
                let mut sum = 0u64;
                let mut max = 0;
                for c in verdict.chains.iter().filter(|c| c.threshold == t) {
                    for ((b, _), fin) in c.blocks.iter().zip(&c.ticks).skip(1) {
                        if let Some(start) = born.get(b) {
                            let d = fin.saturating_sub(*start);
                            count += 1;
                            sum += d;
                            max = max.max(d);
                        }
                    }
                }
                let mean = if count == 0 { 0.0 } else { (sum as f64 / count as f64 * 10.0).round() / 10.0 };
                Latency { threshold: t, count, mean, max }
            })
            .collect();
        let agreement = verdict
            .thresholds
            .iter()
            .map(|&t| {
                let chains: Vec<_> = verdict.chains.iter().filter(|c| c.threshold == t).collect();
                let ids = chains.iter().map(|c| c.validator).collect();
                let m = chains
                    .iter()
                    .map(|a| {
                        chains
                            .iter()
                            .map(|b| {
                                let common = a.blocks.iter().zip(&b.blocks).take_while(|(x, y)| x == y).count();
                                let conflict = common < a.blocks.len().min(b.blocks.len());
                                (!conflict).then(|| a.blocks[common - 1].1)
                            })
                            .collect()
                    })
                    .collect();
                (t, ids, m)
            })
            .collect();
        Ok(Report {
            n: scenario.n,
            horizon: scenario.horizon,
            seed: scenario.seed,
            thresholds: verdict.thresholds.clone(),
            messages,
            units: units.len() as u64,
            endorsements,
            latencies,
            agreement,
            validators: stats.into_values().collect(),
            verdict,
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let v = &self.verdict;
        let _ = writeln!(s, "scenario: n={} horizon={} seed={}", self.n, self.horizon, self.seed);
        let _ = writeln!(
            s,
            "traffic: {} messages, {} units, {} endorsements",
            self.messages, self.units, self.endorsements
        );
        let _ = writeln!(s, "\nfinality latency (ticks from proposal)");
        let _ = writeln!(s, "  {:>9} {:>7} {:>8} {:>6}", "threshold", "count", "mean", "max");
        for l in &self.latencies {
            let _ = writeln!(s, "  {:>9} {:>7} {:>8.1} {:>6}", l.threshold, l.count, l.mean, l.max);
        }
        for (t, ids, m) in &self.agreement {
            let _ = writeln!(s, "\nagreement at t={t} (common prefix height, X = conflict)");
            let _ = write!(s, "  {:>4}", "");
            for id in ids {
                let _ = write!(s, " {:>6}", id.to_string());
            }
            s.push('\n');
            for (id, row) in ids.iter().zip(m) {
                let _ = write!(s, "  {:>4}", id.to_string());
                for cell in row {
                    match cell {
                        Some(h) => {
                            let _ = write!(s, " {h:>6}");
                        }
                        None => s.push_str("      X"),
                    }
                }
                s.push('\n');
            }
        }
        let _ = writeln!(s, "\nvalidators");
        let _ =
            writeln!(s, "  {:>4} {:>8} {:>9} {:>8} {:>6} {:>4}", "id", "created", "admitted", "dropped", "dag", "era");
        for x in &self.validators {
            let _ = writeln!(
                s,
                "  {:>4} {:>8} {:>9} {:>8} {:>6} {:>4}",
                format!("v{}", x.validator),
                x.created,
                x.admitted,
                x.dropped,
                x.dag,
                x.era
            );
        }
        let eq: Vec<String> = v.equivocators.iter().map(|x| x.to_string()).collect();
        let _ = writeln!(s, "\nequivocators: [{}] (weight {})", eq.join(", "), v.f);
        for c in &v.conflicts {
            let _ = writeln!(
                s,
                "conflict: {} at t={} has {} but {} at t={} has {} (height {}){}",
                c.a.0,
                c.a.1,
                c.blocks.0,
                c.b.0,
                c.b.1,
                c.blocks.1,
                c.height,
                if c.permitted { ", permitted since f exceeds the smaller threshold" } else { "" }
            );
        }
        for (id, lo, hi) in &v.order_violations {
            let _ = writeln!(s, "order: {id} chain at t={lo} does not extend t={hi}");
        }
        let _ = writeln!(s, "safety: {}", if v.is_clean() { "clean" } else { "VIOLATED" });
        s
    }

    pub fn to_json_lines(&self) -> String {
        let v = &self.verdict;
        let mut lines = vec![json!({
            "kind": "run",
            "n": self.n,
            "horizon": self.horizon,
            "seed": self.seed,
            "thresholds": self.thresholds,
            "messages": self.messages,
            "units": self.units,
            "endorsements": self.endorsements,
        })];
        for l in &self.latencies {
            lines.push(
                json!({ "kind": "latency", "threshold": l.threshold, "count": l.count, "mean": l.mean, "max": l.max }),
            );
        }
        for (t, ids, m) in &self.agreement {
            lines.push(json!({ "kind": "agreement", "threshold": t, "validators": ids, "common": m }));
        }
        for c in &v.chains {
            let (tip, height) = c.blocks.last().copied().expect("chains start at genesis");
            lines.push(json!({
                "kind": "chain",
                "validator": c.validator,
                "threshold": c.threshold,
                "height": height,
                "tip": tip.to_string(),
            }));
        }
        for x in &self.validators {
            let mut o = serde_json::to_value(x).expect("plain data");
            o["kind"] = json!("validator");
            lines.push(o);
        }
        for c in &v.conflicts {
            lines.push(json!({
                "kind": "conflict",
                "a": c.a,
                "b": c.b,
                "height": c.height,
                "blocks": [c.blocks.0.to_string(), c.blocks.1.to_string()],
                "permitted": c.permitted,
            }));
        }
        lines.push(json!({
            "kind": "verdict",
            "clean": v.is_clean(),
            "equivocators": v.equivocators,
            "f": v.f,
            "order_violations": v.order_violations,
        }));
        let mut out = String::new();
        for l in lines {
            out.push_str(&l.to_string());
            out.push('\n');
        }
        out
    }
}
