use proptest::prelude::*;

use highway_core::endorsement::{Endorsement, EndorsementLedger};
use highway_core::ids::{UnitHash, ValidatorId, WeightMap};
use highway_core::scenario::Scenario;
use highway_core::sim;

proptest! {
    #[test]
    fn endorsed_status_only_grows(
        weights in proptest::collection::vec(1u64..5, 3..8),
        events in proptest::collection::vec((0usize..8, 0u64..6), 0..60),
    ) {
        let n = weights.len();
        let w = WeightMap::new(weights.clone());
        let mut ledger = EndorsementLedger::new(w);
        let mut was: Vec<bool> = vec![false; 6];
        for (v, target) in events {
            let e = Endorsement { endorser: ValidatorId((v % n) as u32), target: UnitHash(target) };
            ledger.record(e);
            for (t, before) in was.iter_mut().enumerate() {
                let now = ledger.is_endorsed(UnitHash(t as u64));
                prop_assert!(!*before || now);
                let weight: u64 = ledger.endorsers(UnitHash(t as u64)).map(|x| weights[x.index()]).sum();
                prop_assert_eq!(now, 2 * weight > weights.iter().sum::<u64>());
                *before = now;
            }
        }
        let listed: std::collections::BTreeSet<_> = ledger.endorsed().iter().copied().collect();
        prop_assert_eq!(listed.len(), ledger.endorsed().len());
        prop_assert!(listed.iter().all(|h| ledger.is_endorsed(*h)));
    }
}

#[test]
fn honest_endorsers_never_cover_a_fork() {
    for mode in ["naive", "refined"] {
        let s = Scenario::parse(&format!(
            "n = 7\ndelta = 5\nhorizon = 1500\nthresholds = [2]\nendorsements = {mode}\n\
             adversary = equivocator 1 rate 1.0\nadversary = equivocator 4 rate 0.5\n"
        ))
        .unwrap();
        let o = sim::run(&s);
        let honest = s.honest();
        let mut checked = 0;
        for view in o.honest() {
            let known = view.known();
            for sender in [ValidatorId(1), ValidatorId(4)] {
                let units = known.units_by(sender);
                for e in &honest {
                    let covered: Vec<usize> =
                        units.iter().copied().filter(|i| view.ledger().has_endorsed(*e, known.hash_at(*i))).collect();
                    checked += covered.len();
                    for (k, a) in covered.iter().enumerate() {
                        for b in &covered[k + 1..] {
                            assert!(known.le(*a, *b) || known.le(*b, *a), "{mode}: {e} endorsed a fork of {sender}");
                        }
                    }
                }
            }
        }
        assert!(checked > 0, "{mode}: some endorsements of the equivocators are seen");
    }
}
