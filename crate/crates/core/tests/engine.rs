use std::collections::BTreeSet;
use std::sync::Arc;

use highway_core::check::units_of;
use highway_core::engine::{Message, Send, Validator};
use highway_core::fixture::genesis_block;
use highway_core::ids::{Tick, ValidatorId};
use highway_core::scenario::Scenario;
use highway_core::sim::{self, Trace};
use highway_core::unit::{Unit, UnitKind};

fn scenario(text: &str) -> Scenario {
    Scenario::parse(text).unwrap()
}

/// n = 4, R = 30 ticks, thirds at 10 and 20.
const BASE: &str = "n = 4\ndelta = 10\nhorizon = 300\nendorsements = off\n";

fn engine(s: &Scenario, v: u32) -> Validator {
    Validator::new(sim::validator_config(s, ValidatorId(v)), genesis_block())
}

fn units(sends: &[Send]) -> Vec<Arc<Unit>> {
    let mut seen = BTreeSet::new();
    sends
        .iter()
        .filter_map(|s| match &s.msg {
            Message::Unit { unit, .. } if seen.insert(unit.hash()) => Some(unit.clone()),
            _ => None,
        })
        .collect()
}

#[test]
fn leader_proposes_once_then_witnesses() {
    let s = scenario(BASE);
    let mut v0 = engine(&s, 0);
    let first = v0.on_tick(0);
    let made = units(&first);
    assert_eq!(made.len(), 1);
    assert_eq!(made[0].kind(), UnitKind::Proposal);
    assert!(made[0].block().is_some());
    let to: BTreeSet<u32> = first.iter().map(|s| s.to.0).collect();
    assert_eq!(to, BTreeSet::from([1, 2, 3]));
    assert!(v0.on_tick(0).is_empty());
    assert!(units(&v0.on_tick(10)).is_empty());
    let w = units(&v0.on_tick(20));
    assert_eq!(w.len(), 1);
    assert_eq!(w[0].kind(), UnitKind::Witness);
    assert!(w[0].block().is_none());
    assert_eq!(w[0].seq(), 1);
}

#[test]
fn non_leader_confirms_the_proposal() {
    let s = scenario(BASE);
    let mut v0 = engine(&s, 0);
    let mut v1 = engine(&s, 1);
    let proposal = units(&v0.on_tick(0)).remove(0);
    assert!(v1.on_tick(0).is_empty());
    let got = v1.on_message(4, ValidatorId(0), Message::Unit { unit: proposal.clone(), deps: Vec::new() });
    let c = units(&got);
    assert_eq!(c.len(), 1);
    assert_eq!(c[0].kind(), UnitKind::Confirmation);
    assert!(c[0].citations().contains(&proposal.hash()));
    assert!(v1.dag().contains(proposal.hash()));
    let w = units(&v1.on_tick(20));
    assert_eq!(w.len(), 1);
    assert_eq!(w[0].kind(), UnitKind::Witness);
    assert_eq!(v1.stats().units_created, 2);
}

#[test]
fn late_proposal_is_not_confirmed() {
    let s = scenario(BASE);
    let mut v0 = engine(&s, 0);
    let mut v1 = engine(&s, 1);
    let proposal = units(&v0.on_tick(0)).remove(0);
    v1.on_tick(0);
    v1.on_tick(10);
    let got = v1.on_message(12, ValidatorId(0), Message::Unit { unit: proposal.clone(), deps: Vec::new() });
    assert!(units(&got).is_empty());
    let w = units(&v1.on_tick(20));
    assert_eq!(w[0].kind(), UnitKind::Witness);
    assert!(w[0].citations().contains(&proposal.hash()));
}

/// Units of an honest run where validator 3 is silent from the start, so a
/// fresh validator 3 can replay them as an observer.
fn observed() -> (Scenario, Vec<Arc<Unit>>) {
    let s = scenario(&format!("{BASE}adversary = crash 3 at 0\n"));
    let o = sim::run_kept(&s);
    let t = Trace::parse_lines(&o.trace).unwrap();
    let all = units_of(&t).unwrap();
    let order: Vec<Arc<Unit>> = o.created.iter().map(|c| all[&c.unit].clone()).collect();
    (s, order)
}

fn feed(v: &mut Validator, now: Tick, u: &Arc<Unit>) {
    v.on_message(now, u.sender(), Message::Unit { unit: u.clone(), deps: Vec::new() });
}

#[test]
fn buffered_units_wait_for_the_next_third() {
    let (s, order) = observed();
    let mut v3 = engine(&s, 3);
    let round0: Vec<_> = order.iter().filter(|u| u.round_id() == 0).cloned().collect();
    let round1: Vec<_> = order.iter().filter(|u| u.round_id() == 30).cloned().collect();
    for t in 0..=22 {
        v3.on_tick(t);
    }
    for u in &round0 {
        feed(&mut v3, 22, u);
    }
    for u in &round0 {
        assert!(v3.known().contains(u.hash()));
        assert!(!v3.dag().contains(u.hash()), "late arrivals are buffered");
    }
    for t in 23..=39 {
        v3.on_tick(t);
    }
    assert!(round0.iter().all(|u| !v3.dag().contains(u.hash())));
    v3.on_tick(40);
    assert!(round0.iter().all(|u| v3.dag().contains(u.hash())));

    let leader = s.schedule.leader_at(30, 30, 4);
    let proposal = round1.iter().find(|u| u.kind() == UnitKind::Proposal).unwrap();
    assert_eq!(proposal.sender(), leader);
    let confirmations: Vec<_> = round1.iter().filter(|u| u.kind() == UnitKind::Confirmation).collect();
    let (held, early) = confirmations.split_last().unwrap();
    assert!(!early.is_empty());

    let mut v3 = engine(&s, 3);
    for t in 0..=31 {
        v3.on_tick(t);
    }
    for u in &round0 {
        feed(&mut v3, 31, u);
    }
    for c in early {
        feed(&mut v3, 31, c);
    }
    feed(&mut v3, 32, proposal);
    assert!(v3.dag().contains(proposal.hash()), "the round's proposal skips the buffer");
    assert!(early.iter().all(|c| !v3.dag().contains(c.hash())));
    for t in 32..=45 {
        v3.on_tick(t);
    }
    assert!(early.iter().all(|c| v3.dag().contains(c.hash())));
    feed(&mut v3, 45, held);
    assert!(v3.dag().contains(held.hash()), "middle third adds at once");
}

#[test]
fn era_rolls_over_at_the_boundary() {
    let s = scenario("n = 4\ndelta = 5\nhorizon = 1500\nthresholds = [0, 1]\nera_length = 20\n");
    let o = sim::run(&s);
    for v in o.honest() {
        assert!(v.era() >= 2, "{} reached era {}", v.id(), v.era());
        let chain = v.chain(0).unwrap();
        for era in 1..=v.era() {
            let at = chain.iter().find(|(_, h)| *h == 20 * era - 1);
            assert!(at.is_some(), "{} has the era {era} genesis", v.id());
        }
        let heights: Vec<u64> = chain.iter().map(|(_, h)| *h).collect();
        assert!(heights.windows(2).all(|w| w[1] == w[0] + 1), "contiguous across eras");
    }
    let eras: BTreeSet<(ValidatorId, u64)> = o.eras.iter().map(|(_, v, e)| (*v, *e)).collect();
    for v in 0..4 {
        assert!(eras.contains(&(ValidatorId(v), 1)));
    }
    let first = o.honest().map(|v| v.chain(0).unwrap().to_vec()).collect::<Vec<_>>();
    let short = first.iter().map(Vec::len).min().unwrap();
    assert!(first.iter().all(|c| c[..short] == first[0][..short]));
}

#[test]
fn evidence_reaches_every_honest_view() {
    let s = scenario(
        "n = 7\ndelta = 5\nhorizon = 900\nthresholds = [2]\nendorsements = naive\nadversary = equivocator 1 rate 1.0\n",
    );
    let o = sim::run(&s);
    assert!(o.twins > 0);
    for v in o.honest() {
        assert!(v.known().equivocators().contains(&ValidatorId(1)), "{} saw the fork", v.id());
        assert!(!v.known().equivocators().contains(&v.id()));
        assert!(v.chain(2).unwrap().len() > 3, "{} keeps finalizing", v.id());
    }
}
