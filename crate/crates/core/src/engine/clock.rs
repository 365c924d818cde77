//! Round lengths, the leader schedule and round-exponent maintenance.

use serde::{Deserialize, Serialize};

use crate::ids::{mix, Tick, ValidatorId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExponentParams {
    pub n_min: u32,
    pub n_max: u32,
    pub t0: u64,
    pub c_fail: u64,
    pub c_succ: u64,
    pub c: u64,
    pub d: u64,
}

impl ExponentParams {
    /// `(C_fail, C_succ, C) = (10, 32, 40)` and `D = 3`.
    pub fn standard(n_min: u32, n_max: u32, t0: u64) -> ExponentParams {
        ExponentParams { n_min, n_max, t0, c_fail: 10, c_succ: 32, c: 40, d: 3 }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.n_min >= self.n_max {
            return Err(format!("n_min {} must be below n_max {}", self.n_min, self.n_max));
        }
        if self.n_max > 40 {
            return Err(format!("n_max {} is too large", self.n_max));
        }
        if !(0 < self.c_fail && self.c_fail < self.c_succ && self.c_succ < self.c) {
            return Err("need 0 < C_fail < C_succ < C".into());
        }
        if (1u64 << self.n_min) < 3 {
            return Err("rounds must be at least 3 ticks long".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RoundMode {
    /// Every round is `length` ticks.
    Fixed {
        length: Tick,
    },
    Dynamic(ExponentParams),
}

impl RoundMode {
    /// Granularity of round starts; every round start is a multiple.
    pub fn base(&self) -> Tick {
        match self {
            RoundMode::Fixed { length } => *length,
            RoundMode::Dynamic(p) => 1 << p.n_min,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Schedule {
    RoundRobin,
    Seeded(u64),
}

impl Schedule {
    pub fn leader_of_round(&self, round: u64, n: usize) -> ValidatorId {
        let i = match self {
            Schedule::RoundRobin => round % n as u64,
            Schedule::Seeded(seed) => mix(&[*seed, round]) % n as u64,
        };
        ValidatorId(i as u32)
    }

    /// Leader of the round that starts at `start`; `base` is the smallest
    /// possible round length.
    pub fn leader_at(&self, start: Tick, base: Tick, n: usize) -> ValidatorId {
        match self {
            Schedule::RoundRobin => self.leader_of_round(start / base, n),
            Schedule::Seeded(seed) => ValidatorId((mix(&[*seed, start]) % n as u64) as u32),
        }
    }
}

/// Offsets of the two in-round deadlines. Exact when `len` is a multiple
/// of 3, floored otherwise.
pub fn thirds(len: Tick) -> (Tick, Tick) {
    (len / 3, 2 * len / 3)
}

/// Exponent state of one validator.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Exponent {
    pub m: u32,
    pub cnt_succ: u64,
    /// Tick of the last change; no adjustment happens until `C` full
    /// rounds at the current exponent have passed.
    pub since: Tick,
}

impl Exponent {
    pub fn new(p: &ExponentParams) -> Exponent {
        Exponent { m: p.n_min, cnt_succ: 0, since: 0 }
    }

    pub fn round_len(&self) -> Tick {
        1 << self.m
    }

    /// Whether tick `i` is an adjustment point.
    pub fn is_check(&self, p: &ExponentParams, i: Tick) -> bool {
        i > 0 && i.is_multiple_of(1 << (self.m + 1)) && i - self.since >= p.c << self.m
    }

    /// Start of the window `b_fin` is counted over.
    pub fn window_start(&self, p: &ExponentParams, i: Tick) -> Tick {
        i.saturating_sub(p.c << self.m)
    }

    /// Applies the maintenance rule at tick `i` given `b_fin`. Returns the
    /// new exponent if it changed.
    pub fn step(&mut self, p: &ExponentParams, i: Tick, b_fin: u64) -> Option<u32> {
        if !self.is_check(p, i) {
            return None;
        }
        let m = self.m;
        let mut next = m;
        if b_fin <= p.c_fail {
            next = (m + 1).min(p.n_max);
        }
        if b_fin >= p.c_succ {
            self.cnt_succ += 1;
        } else {
            self.cnt_succ = 0;
        }
        if i.is_multiple_of(p.c << (m + 1)) && self.cnt_succ >= p.d {
            next = m.saturating_sub(1).max(p.n_min);
            self.cnt_succ = 0;
        }
        if next != m {
            self.m = next;
            self.since = i;
            Some(next)
        } else {
            None
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> ExponentParams {
        ExponentParams::standard(4, 8, 0)
    }

    /// An exponent state at `m` that is past its warm-up at tick `i`.
    fn warmed(m: u32) -> Exponent {
        Exponent { m, cnt_succ: 0, since: 0 }
    }

    #[test]
    fn round_robin() {
        assert_eq!(Schedule::RoundRobin.leader_of_round(6, 4), ValidatorId(2));
        let seen: std::collections::BTreeSet<_> = (0..8).map(|r| Schedule::RoundRobin.leader_of_round(r, 4)).collect();
        assert_eq!(seen.len(), 4);
    }

    #[test]
    fn seeded_schedule_is_reproducible() {
        let a: Vec<_> = (0..50).map(|r| Schedule::Seeded(9).leader_of_round(r, 7)).collect();
        let b: Vec<_> = (0..50).map(|r| Schedule::Seeded(9).leader_of_round(r, 7)).collect();
        assert_eq!(a, b);
        let c: Vec<_> = (0..50).map(|r| Schedule::Seeded(10).leader_of_round(r, 7)).collect();
        assert_ne!(a, c);
    }

    #[test]
    fn few_finalized_blocks_raise_the_exponent() {
        let p = params();
        let mut e = warmed(5);
        let i = 64 * 40;
        assert_eq!(e.step(&p, i, 5), Some(6));
        let mut top = warmed(8);
        assert_eq!(top.step(&p, 512 * 40, 5), None);
        assert_eq!(top.m, 8);
    }

    #[test]
    fn sustained_success_lowers_the_exponent() {
        let p = params();
        let mut e = warmed(5);
        let w = 1u64 << 6;
        // Checks at consecutive multiples of 2^(m+1), ending on one that
        // is a multiple of C·2^(m+1).
        let end = 40 * w * 2;
        assert_eq!(e.step(&p, end - 2 * w, 35), None);
        assert_eq!(e.step(&p, end - w, 35), None);
        assert_eq!(e.cnt_succ, 2);
        assert_eq!(e.step(&p, end, 35), Some(4));
        assert_eq!(e.cnt_succ, 0);
        let mut low = warmed(4);
        low.cnt_succ = 3;
        assert_eq!(low.step(&p, 40 * 32, 35), None);
        assert_eq!(low.m, 4);
    }

    #[test]
    fn middling_rate_resets_the_counter() {
        let p = params();
        let mut e = warmed(5);
        e.cnt_succ = 2;
        assert_eq!(e.step(&p, 64 * 40, 20), None);
        assert_eq!(e.cnt_succ, 0);
        assert_eq!(e.m, 5);
    }

    #[test]
    fn only_at_multiples_and_after_warmup() {
        let p = params();
        let mut e = warmed(5);
        assert_eq!(e.step(&p, 64 * 40 + 32, 0), None);
        let mut fresh = Exponent { m: 5, cnt_succ: 0, since: 64 * 40 };
        assert_eq!(fresh.step(&p, 64 * 41, 0), None);
        assert_eq!(fresh.step(&p, 64 * 40 + 32 * 40, 0), Some(6));
    }

    #[test]
    fn validation() {
        assert!(params().validate().is_ok());
        assert!(ExponentParams { n_min: 5, ..params() }.validate().is_ok());
        assert!(ExponentParams { n_min: 8, ..params() }.validate().is_err());
        assert!(ExponentParams { c_fail: 33, ..params() }.validate().is_err());
        assert!(ExponentParams { n_min: 1, ..params() }.validate().is_err());
    }

    #[test]
    fn thirds_floor() {
        assert_eq!(thirds(30), (10, 20));
        assert_eq!(thirds(16), (5, 10));
    }
}
