//! Acceptance suite. Prints one line per criterion and exits nonzero if
//! any fails. Run with `cargo test -p highway-core --test acceptance`.

use std::collections::BTreeMap;
use std::process::{Command, ExitCode};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use highway_core::analysis::{
    correct, downset_antichain, downset_ratio, endorsed_antichain, liveness_stalls, own_downsets, propagation,
};
use highway_core::check::check;
use highway_core::endorsement::EndorsementMode;
use highway_core::finality::final_predicate;
use highway_core::fixture::Fixture;
use highway_core::ids::{BlockHash, Tick, ValidatorId};
use highway_core::oracle;
use highway_core::scenario::{Adversary, RoundSpec, Scenario};
use highway_core::sim::{self, Outcome, Trace};

const FUZZ_RUNS: u64 = 500;
const FUZZ_ROUNDS: u64 = 20;
const FIXTURES: u64 = 100;
/// Constant in the downset bound, fixed from the first passing run.
const DOWNSET_C: f64 = 1.0;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn scenario(text: &str) -> Scenario {
    Scenario::parse(text).expect("suite scenarios parse")
}

/// Height-indexed finalized blocks of each (validator, threshold) pair,
/// rebuilt from the finalization events of the run.
fn chains(o: &Outcome) -> BTreeMap<(ValidatorId, u64), BTreeMap<u64, BlockHash>> {
    let mut out: BTreeMap<(ValidatorId, u64), BTreeMap<u64, BlockHash>> = BTreeMap::new();
    for e in &o.finals {
        out.entry((e.validator, e.threshold)).or_default().insert(e.height, e.block);
    }
    out
}

/// Pairs of honest chains that disagree at some height although both
/// thresholds are at least `f`.
fn unsafe_pairs(o: &Outcome, f: u64) -> usize {
    let honest = o.scenario.honest();
    let cs: Vec<_> = chains(o).into_iter().filter(|((v, t), _)| honest.contains(v) && *t >= f).collect();
    let mut bad = 0;
    for (i, (_, a)) in cs.iter().enumerate() {
        for (_, b) in &cs[i + 1..] {
            if a.iter().any(|(h, x)| b.get(h).is_some_and(|y| y != x)) {
                bad += 1;
            }
        }
    }
    bad
}

fn fuzz_scenario(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(0xf022 ^ seed);
    let n = rng.random_range(4..=10usize);
    let f = rng.random_range(0..=(n - 1) / 3);
    let delta = rng.random_range(2..=12);
    let mut s = Scenario::new(n, delta, 0);
    s.seed = seed;
    s.endorsements = [EndorsementMode::Off, EndorsementMode::Naive, EndorsementMode::Refined][rng.random_range(0..3)];
    s.gst = rng.random_range(0..=10) * delta;
    let mut ids: Vec<u32> = (0..n as u32).collect();
    ids.shuffle(&mut rng);
    for &id in &ids[..f] {
        let a = if rng.random_bool(0.6) {
            Adversary::Equivocator { id: ValidatorId(id), rate: rng.random_range(0.2..=1.0) }
        } else {
            let targets = (0..n as u32).filter(|t| *t != id && rng.random_bool(0.5)).map(ValidatorId).collect();
            Adversary::Withholder { id: ValidatorId(id), targets }
        };
        s.adversaries.push(a);
    }
    let top = (n as u64 - 1).min(f as u64 + 2);
    s.thresholds = vec![f as u64];
    for v in 0..n as u32 {
        if rng.random_bool(0.5) {
            let mut ts = vec![f as u64, rng.random_range(0..=top)];
            ts.sort_unstable();
            ts.dedup();
            s.thresholds_for.insert(v, ts);
        }
    }
    s.horizon = s.gst + FUZZ_ROUNDS * s.base_round();
    s.validate().expect("fuzz scenarios are valid");
    s
}

struct FuzzSummary {
    seed: u64,
    f: u64,
    unsafe_pairs: usize,
    finals: usize,
    endorsed_width: Option<usize>,
    digest: String,
}

fn fuzz_one(seed: u64) -> FuzzSummary {
    let s = fuzz_scenario(seed);
    let o = sim::run(&s);
    let f = s.byzantine_count() as u64;
    let endorsed_width = (s.endorsements != EndorsementMode::Off).then(|| {
        o.honest().flat_map(|v| (0..s.n as u32).map(move |w| endorsed_antichain(v, ValidatorId(w)))).max().unwrap_or(0)
    });
    FuzzSummary { seed, f, unsafe_pairs: unsafe_pairs(&o, f), finals: o.finals.len(), endorsed_width, digest: o.digest }
}

fn c1_safety(fuzz: &[FuzzSummary]) -> Verdict {
    let bad: Vec<u64> = fuzz.iter().filter(|x| x.unsafe_pairs > 0).map(|x| x.seed).collect();
    let finals: usize = fuzz.iter().map(|x| x.finals).sum();
    let with_f = fuzz.iter().filter(|x| x.f > 0).count();
    verdict(
        fuzz.len() as u64 >= FUZZ_RUNS && bad.is_empty(),
        format!(
            "{} scenarios ({} with adversaries), {} finalizations, unsafe seeds {:?}",
            fuzz.len(),
            with_f,
            finals,
            bad
        ),
    )
}

fn liveness_scenario(mode: &str) -> Scenario {
    scenario(&format!(
        "n = 10\ndelta = 10\ngst = 200\nhorizon = 6000\nthresholds = [2]\nendorsements = {mode}\n\
         adversary = equivocator 1 rate 1.0\nadversary = equivocator 3 rate 0.5\nadversary = crash 5 at 1000\n"
    ))
}

fn c2_liveness(runs: &[Outcome]) -> Verdict {
    let t = 2u64;
    let width = ((t + 1) as f64).log2().ceil() as usize + 2;
    let mut parts = Vec::new();
    let mut pass = true;
    for o in runs {
        let s = &o.scenario;
        let from = s.gst + 2 * s.base_round();
        let (windows, stalls) = liveness_stalls(o, t, from, width);
        let mut per: BTreeMap<ValidatorId, usize> = BTreeMap::new();
        for st in &stalls {
            *per.entry(st.validator).or_default() += 1;
        }
        let worst = per.values().copied().max().unwrap_or(0);
        pass &= windows > 0 && worst <= 1;
        parts.push(format!("{:?}: {windows} windows of {width}, worst validator {worst} stalls", s.endorsements));
    }
    verdict(pass, parts.join("; "))
}

fn c3_propagation(runs: &[Outcome]) -> Verdict {
    let t = 2u64;
    let rounds = ((t + 1) as f64).log2().ceil() as u64 + 2;
    let mut pass = true;
    let mut parts = Vec::new();
    for o in runs {
        let s = &o.scenario;
        let bound = rounds * s.base_round();
        let mut worst = 0;
        let mut missing = 0;
        let mut checked = 0;
        for (_, first, all) in propagation(o, t) {
            if first + bound > s.horizon {
                continue;
            }
            checked += 1;
            match all {
                Some(all) => worst = worst.max(all - first),
                None => missing += 1,
            }
        }
        pass &= checked > 0 && missing == 0 && worst <= bound;
        parts.push(format!(
            "{:?}: {checked} blocks, max lag {worst} ticks (bound {bound}), {missing} never reached everyone",
            s.endorsements
        ));
    }
    verdict(pass, parts.join("; "))
}

fn c4_summit() -> Verdict {
    let mut bad = Vec::new();
    let mut queries = 0;
    for seed in 0..FIXTURES {
        let n = 2 + (seed % 3) as usize;
        let fx = Fixture::random(1000 + seed, n, 12);
        let mut targets = vec!["G".to_string()];
        targets.extend(fx.blocks.iter().map(|b| b.name.clone()));
        for b in &targets {
            for q in 1..=n as u64 {
                queries += 1;
                match oracle::compare(&fx, b, q) {
                    Ok(r) if r.ok() => {}
                    Ok(r) => bad.push(format!("seed {seed} {b} q={q}: {}", r.violations.join(", "))),
                    Err(e) => bad.push(format!("seed {seed}: {e}")),
                }
            }
        }
    }
    verdict(
        bad.is_empty(),
        format!("{FIXTURES} fixtures, {queries} queries, {} violations {:?}", bad.len(), bad.first()),
    )
}

fn c5_arithmetic() -> Verdict {
    let pinned = [((4, 3, 2, 1), true), ((10, 8, 3, 5), true), ((10, 8, 3, 6), false)];
    let mut ok = pinned.iter().all(|((n, q, k, t), want)| final_predicate(*n, *q, *k, *t) == *want);
    for n in 1..=20 {
        for q in 0..=n {
            for t in 0..=n {
                ok &= !final_predicate(n, q, 0, t);
            }
        }
    }
    verdict(ok, "pinned tuples and k = 0 over n <= 20")
}

fn c6_endorsed(fuzz: &[FuzzSummary]) -> Verdict {
    let widths: Vec<usize> = fuzz.iter().filter_map(|x| x.endorsed_width).collect();
    let max = widths.iter().copied().max().unwrap_or(0);
    verdict(
        !widths.is_empty() && max <= 3,
        format!("{} traces with endorsements, max endorsed antichain {max}", widths.len()),
    )
}

const BOMB: &str = "n = 10\ndelta = 10\nhorizon = 3000\nthresholds = [1]\n";

fn bomb_scenarios() -> [Scenario; 3] {
    let bomb = "adversary = fork_bomb [4, 5, 6, 7, 8, 9] depth 3\n";
    [scenario(BOMB), scenario(&format!("{BOMB}lnc = off\n{bomb}")), scenario(&format!("{BOMB}{bomb}"))]
}

fn largest_downset(o: &Outcome) -> usize {
    o.honest().flat_map(|v| own_downsets(v).into_iter().map(|(_, d)| d)).max().unwrap_or(0)
}

fn c7_fork_bomb(runs: &[Outcome]) -> Verdict {
    let [base, off, on] = runs else { unreachable!() };
    let base_max = largest_downset(base);
    let off_max = largest_downset(off);
    let ratio = on.honest().map(downset_ratio).fold(0.0, f64::max);
    let base_ratio = base.honest().map(downset_ratio).fold(0.0, f64::max);
    let s = &on.scenario;
    let f = s.byzantine_count();
    let bound = 3 * f + (s.n - f) + 1;
    let members: Vec<ValidatorId> = (0..s.n as u32).map(ValidatorId).filter(|v| s.is_byzantine(*v)).collect();
    let width = on.honest().flat_map(|v| members.iter().map(move |m| downset_antichain(v, *m))).max().unwrap_or(0);
    let pass = off_max > 2 * base_max && ratio <= DOWNSET_C && width <= bound && on.bomb_units > 0;
    verdict(
        pass,
        format!(
            "largest honest downset {off_max} with LNC off vs {base_max} baseline; \
             LNC on max |D(u)|/(nN(1+f)) = {ratio:.3} (c = {DOWNSET_C}, baseline {base_ratio:.3}); \
             per-downset antichain {width} <= {bound}"
        ),
    )
}

fn c8_replay(o: &Outcome, dir: &std::path::Path) -> Verdict {
    let path = dir.join("replay.trace");
    std::fs::write(&path, o.trace.join("\n") + "\n").expect("write trace");
    let run = || {
        Command::new(env!("CARGO_BIN_EXE_highway"))
            .args(["check", path.to_str().unwrap(), "--thresholds", "0,1,2,3", "--json"])
            .output()
            .expect("highway runs")
    };
    let (a, b) = (run(), run());
    let identical = a.stdout == b.stdout && a.status.success() && b.status.success();
    let trace = Trace::parse_lines(&o.trace).expect("trace parses");
    let v = check(&trace, &[0, 1, 2, 3]).expect("replay");
    let mut prefix = true;
    for id in o.scenario.honest() {
        for w in [0u64, 1, 2, 3].windows(2) {
            let (lo, hi) = (v.chain(id, w[0]).unwrap_or(&[]), v.chain(id, w[1]).unwrap_or(&[]));
            prefix &= lo.len() >= hi.len() && lo[..hi.len()] == *hi;
        }
    }
    let lengths: Vec<usize> = [0, 1, 2, 3].iter().map(|t| v.chain(ValidatorId(0), *t).map_or(0, <[_]>::len)).collect();
    verdict(
        identical && prefix && v.is_clean() && v.order_violations.is_empty(),
        format!(
            "{} output bytes, identical {identical}, prefix-consistent {prefix}, v0 chain lengths at 0..3 {lengths:?}",
            a.stdout.len()
        ),
    )
}

fn dynamic_scenario(seed: u64) -> Scenario {
    scenario(&format!(
        "n = 4\ndelta = 20\nhorizon = 24000\nthresholds = [0]\nendorsements = off\n\
         rounds = dynamic 3 9 0\ndelay_step = 12000 2\nseed = {seed}\n"
    ))
}

fn exponent_at(o: &Outcome, v: ValidatorId, tick: Tick, start: u32) -> u32 {
    o.exponents.iter().rfind(|(t, w, _)| *w == v && *t <= tick).map_or(start, |x| x.2)
}

fn c9_dynamic(runs: &[Outcome], again: &Outcome) -> Verdict {
    let mut pass = again.digest == runs[0].digest && again.exponents == runs[0].exponents;
    let mut parts = Vec::new();
    for o in runs {
        let s = &o.scenario;
        let (step, _) = s.delay_step.expect("step");
        let RoundSpec::Dynamic(p) = s.rounds else { unreachable!() };
        let mut latest = 0;
        let mut finals = Vec::new();
        for v in correct(s) {
            let before = exponent_at(o, v, step, p.n_min);
            let limit = step + 2 * p.c * (1 << before);
            let up = o.exponents.iter().find(|(t, w, e)| *w == v && *t > step && *e > before);
            match up {
                Some((t, _, _)) if *t <= limit => latest = latest.max(*t),
                _ => pass = false,
            }
            finals.push(exponent_at(o, v, s.horizon, p.n_min));
        }
        let common = finals.iter().all(|e| *e == finals[0]);
        pass &= common;
        parts.push(format!("seed {}: last increase at {latest}, final exponents {finals:?}", s.seed));
    }
    verdict(pass, parts.join("; "))
}

fn c10_determinism(named: &[&Outcome], fuzz: &[FuzzSummary]) -> Verdict {
    let mut diffs = Vec::new();
    for o in named {
        if sim::run(&o.scenario).digest != o.digest {
            diffs.push(format!("{:?}", o.scenario.adversaries));
        }
    }
    let sample: Vec<&FuzzSummary> = fuzz.iter().step_by(5).collect();
    let fuzz_diffs: Vec<u64> =
        sample.par_iter().filter(|x| fuzz_one(x.seed).digest != x.digest).map(|x| x.seed).collect();
    verdict(
        diffs.is_empty() && fuzz_diffs.is_empty(),
        format!(
            "{} suite runs and {} fuzz runs repeated; differing {:?} {:?}",
            named.len(),
            sample.len(),
            diffs,
            fuzz_diffs
        ),
    )
}

fn main() -> ExitCode {
    let started = Instant::now();
    let mut results: Vec<(&str, Verdict)> = Vec::new();

    let fuzz: Vec<FuzzSummary> = (0..FUZZ_RUNS).into_par_iter().map(fuzz_one).collect();
    results.push(("C1 safety fuzz", c1_safety(&fuzz)));

    let live: Vec<Outcome> = ["naive", "refined"].iter().map(|m| sim::run(&liveness_scenario(m))).collect();
    results.push(("C2 liveness", c2_liveness(&live)));
    results.push(("C3 finality propagation", c3_propagation(&live)));
    results.push(("C4 summit vs enumeration", c4_summit()));
    results.push(("C5 FINAL arithmetic", c5_arithmetic()));
    results.push(("C6 endorsed antichain", c6_endorsed(&fuzz)));

    let bombs: Vec<Outcome> = bomb_scenarios().iter().map(sim::run).collect();
    results.push(("C7 fork-bomb containment", c7_fork_bomb(&bombs)));

    let dir = tempfile::tempdir().expect("tempdir");
    let mut replay = liveness_scenario("naive");
    replay.thresholds = vec![0, 2];
    replay.horizon = 3000;
    let replay = sim::run_kept(&replay);
    results.push(("C8 threshold replay", c8_replay(&replay, dir.path())));

    let dynamic: Vec<Outcome> = (1..=2).map(|seed| sim::run(&dynamic_scenario(seed))).collect();
    let again = sim::run(&dynamic_scenario(1));
    results.push(("C9 dynamic rounds", c9_dynamic(&dynamic, &again)));

    let named: Vec<&Outcome> = live.iter().chain(&bombs).chain(&dynamic).chain([&replay]).collect();
    results.push(("C10 determinism", c10_determinism(&named, &fuzz)));

    let mut failed = 0;
    for (name, v) in &results {
        println!("{name:<26} {}  {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        failed += usize::from(!v.pass);
    }
    println!(
        "{} of {} criteria passed in {:.1}s",
        results.len() - failed,
        results.len(),
        started.elapsed().as_secs_f64()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
