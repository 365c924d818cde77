use std::collections::{BTreeMap, BTreeSet, HashMap};

use proptest::prelude::*;

use highway_core::analysis::{correct, sender_antichain};
use highway_core::check::{check, units_of};
use highway_core::ids::{Tick, ValidatorId};
use highway_core::scenario::Scenario;
use highway_core::sim::{self, EventKind, Outcome, Trace, UnitKindName};

fn scenario(text: &str) -> Scenario {
    Scenario::parse(text).unwrap()
}

fn small(seed: u64, n: usize, delta: Tick, gst: Tick, endorse: &str, adversary: Option<String>) -> Scenario {
    let mut text = format!(
        "n = {n}\ndelta = {delta}\ngst = {gst}\nhorizon = {}\nthresholds = [0, 1]\nendorsements = {endorse}\nseed = {seed}\n",
        gst + 12 * 6 * delta
    );
    if let Some(a) = adversary {
        text.push_str(&format!("adversary = {a}\n"));
    }
    scenario(&text)
}

fn arb_scenario() -> impl Strategy<Value = Scenario> {
    (any::<u64>(), 4usize..=7, 2u64..=8, 0u64..=6, prop_oneof![Just("off"), Just("naive"), Just("refined")], 0u8..4)
        .prop_map(|(seed, n, delta, g, endorse, adv)| {
            let a = match adv {
                0 => None,
                1 => Some(format!("equivocator {} rate 0.7", n - 1)),
                2 => Some(format!("withholder {} targets [0]", n - 1)),
                _ => Some(format!("crash {} at {}", n - 1, 20 * delta)),
            };
            small(seed, n, delta, g * delta, endorse, a)
        })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, .. ProptestConfig::default() })]

    #[test]
    fn trace_invariants(s in arb_scenario()) {
        let o = sim::run_kept(&s);
        let again = sim::run(&s);
        prop_assert_eq!(&o.digest, &again.digest);
        prop_assert!(o.max_post_gst_delay < s.delta);

        let t = Trace::parse_lines(&o.trace).unwrap();
        let mut sent: HashMap<(u32, u32, u64), i64> = HashMap::new();
        for r in &t.records {
            let key = || (r.sender.unwrap(), r.recipient.unwrap(), r.digest.unwrap());
            match r.kind {
                EventKind::Send => *sent.entry(key()).or_default() += 1,
                EventKind::Deliver => *sent.entry(key()).or_default() -= 1,
                _ => {}
            }
        }
        // Messages still in flight at the horizon are the only unmatched sends.
        prop_assert!(sent.values().all(|c| *c >= 0));

        let honest = s.honest();
        for v in o.honest() {
            for w in &honest {
                prop_assert_eq!(sender_antichain(v, *w), 1.min(v.dag().units_by(*w).len()));
            }
        }
        let units = units_of(&t).unwrap();
        let mut slots = BTreeSet::new();
        for u in units.values().filter(|u| honest.contains(&u.sender())) {
            prop_assert!(slots.insert((u.era(), u.sender(), u.seq())), "honest seq reused");
        }

        let mut per_round: BTreeMap<(ValidatorId, Tick), Vec<UnitKindName>> = BTreeMap::new();
        for c in o.created.iter().filter(|c| honest.contains(&c.sender)) {
            per_round.entry((c.sender, c.round_id)).or_default().push(c.kind);
        }
        for ((v, round), kinds) in &per_round {
            prop_assert!((1..=2).contains(&kinds.len()), "{} made {:?} in round {}", v, kinds, round);
            let proposals = kinds.iter().filter(|k| **k == UnitKindName::Proposal).count();
            prop_assert!(proposals <= 1);
        }

        let verdict = check(&t, &[0, 1]).unwrap();
        prop_assert!(verdict.is_clean());
        for v in o.honest() {
            for th in [0, 1] {
                prop_assert_eq!(verdict.chain(v.id(), th).unwrap(), v.chain(th).unwrap());
            }
        }
    }
}

#[test]
fn seed_determines_the_digest() {
    let a = sim::run(&small(1, 5, 5, 40, "naive", None));
    let b = sim::run(&small(2, 5, 5, 40, "naive", None));
    assert_ne!(a.digest, b.digest);
    assert_eq!(a.digest, sim::run(&small(1, 5, 5, 40, "naive", None)).digest);
}

#[test]
fn pre_gst_delays_may_exceed_delta() {
    let s = scenario("n = 4\ndelta = 4\ngst = 400\nmax_pre_gst_delay = 40\nhorizon = 900\n");
    let o = sim::run_kept(&s);
    let t = Trace::parse_lines(&o.trace).unwrap();
    let mut sent: HashMap<(u32, u32, u64), Vec<Tick>> = HashMap::new();
    let mut worst_pre = 0;
    for r in &t.records {
        let key = (r.sender.unwrap_or(0), r.recipient.unwrap_or(0), r.digest.unwrap_or(0));
        match r.kind {
            EventKind::Send => sent.entry(key).or_default().push(r.tick),
            EventKind::Deliver => {
                let at = sent.get_mut(&key).unwrap().remove(0);
                if at < s.gst {
                    worst_pre = worst_pre.max(r.tick - at);
                }
            }
            _ => {}
        }
    }
    assert!(worst_pre >= s.delta, "{worst_pre}");
    assert!(o.max_post_gst_delay < s.delta);
}

fn chain_len(o: &Outcome, v: u32, t: u64) -> usize {
    o.validator(ValidatorId(v)).and_then(|x| x.chain(t)).map_or(0, <[_]>::len)
}

#[test]
fn crashed_validator_goes_silent() {
    let s = scenario("n = 4\ndelta = 5\nhorizon = 1200\nthresholds = [1]\nadversary = crash 2 at 300\n");
    let o = sim::run(&s);
    let last = o.created.iter().filter(|c| c.sender == ValidatorId(2)).map(|c| c.tick).max().unwrap();
    assert!(last < 300);
    let at_crash = o.finals.iter().filter(|f| f.validator == ValidatorId(2)).count();
    assert!(at_crash > 0);
    assert_eq!(correct(&s), vec![ValidatorId(0), ValidatorId(1), ValidatorId(3)]);
    for v in [0, 1, 3] {
        assert!(chain_len(&o, v, 1) > 10);
    }
}

#[test]
fn withheld_units_reach_only_targets_first() {
    let s = scenario(
        "n = 4\ndelta = 5\nhorizon = 900\nthresholds = [0]\nendorsements = off\nadversary = withholder 3 targets [0]\n",
    );
    let o = sim::run_kept(&s);
    let t = Trace::parse_lines(&o.trace).unwrap();
    let units = units_of(&t).unwrap();
    for r in t.records.iter().filter(|r| r.kind == EventKind::Send && r.sender == Some(3)) {
        if r.detail.starts_with("unit") {
            let own = units.get(&highway_core::ids::UnitHash(r.digest.unwrap())).is_none_or(|u| u.sender().0 == 3);
            assert!(!own || r.recipient == Some(0), "{r:?}");
        }
    }
    for v in [0, 1, 2] {
        assert!(chain_len(&o, v, 0) > 10);
    }
}

#[test]
fn fork_bomb_is_contained_with_lnc() {
    let s = scenario(
        "n = 10\ndelta = 10\nhorizon = 1200\nthresholds = [1]\nadversary = fork_bomb [4, 5, 6, 7, 8, 9] depth 3\n",
    );
    let o = sim::run(&s);
    assert!(o.bomb_units > 0);
    let mut off = s.clone();
    off.lnc = false;
    let loose = sim::run(&off);
    for (a, b) in o.honest().zip(loose.honest()) {
        assert!(a.dag().len() < b.dag().len(), "{}: {} vs {}", a.id(), a.dag().len(), b.dag().len());
    }
}
