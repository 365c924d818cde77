//! Message delays. Every delay is a pure function of the seed and the
//! message, so runs replay exactly.

use crate::ids::{mix, Tick, ValidatorId};
use crate::scenario::Scenario;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Network {
    pub seed: u64,
    pub delta: Tick,
    pub gst: Tick,
    pub max_pre_gst_delay: Tick,
    pub delay_step: Option<(Tick, u64)>,
}

impl Network {
    pub fn from_scenario(s: &Scenario) -> Network {
        Network {
            seed: s.seed,
            delta: s.delta,
            gst: s.gst,
            max_pre_gst_delay: s.max_pre_gst_delay,
            delay_step: s.delay_step,
        }
    }

    /// Delay in `[1, Δ-1]` after GST, `[1, max_pre_gst_delay]` before it,
    /// times the step factor once the step is active. `nonce` tells
    /// identical sends apart.
    pub fn delay(&self, from: ValidatorId, to: ValidatorId, digest: u64, sent: Tick, nonce: u64) -> Tick {
        let r = mix(&[self.seed, from.0 as u64, to.0 as u64, digest, sent, nonce]);
        let base = if sent >= self.gst { 1 + r % (self.delta - 1) } else { 1 + r % self.max_pre_gst_delay };
        match self.delay_step {
            Some((at, factor)) if sent >= at => base * factor,
            _ => base,
        }
    }

    /// Upper bound on a post-GST delay before any step.
    pub fn bound(&self) -> Tick {
        self.delta - 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net() -> Network {
        Network { seed: 3, delta: 10, gst: 100, max_pre_gst_delay: 50, delay_step: Some((500, 4)) }
    }

    #[test]
    fn delays_respect_the_bounds() {
        let n = net();
        let (a, b) = (ValidatorId(0), ValidatorId(1));
        let mut pre_max = 0;
        for i in 0..2000u64 {
            let post = n.delay(a, b, i, 100 + i % 300, 0);
            assert!((1..10).contains(&post), "{post}");
            pre_max = pre_max.max(n.delay(a, b, i, i % 100, 0));
            let stepped = n.delay(a, b, i, 500 + i, 0);
            assert!((4..40).contains(&stepped) && stepped.is_multiple_of(4));
        }
        assert!(pre_max > 9 && pre_max <= 50);
    }

    #[test]
    fn delays_are_pure() {
        let n = net();
        let d = |s| n.delay(ValidatorId(2), ValidatorId(5), 77, s, 1);
        assert_eq!(d(120), d(120));
        let other = Network { seed: 4, ..net() };
        let diff =
            (0..100).filter(|i| other.delay(ValidatorId(2), ValidatorId(5), 77, 120 + i, 1) != d(120 + i)).count();
        assert!(diff > 50);
    }
}
