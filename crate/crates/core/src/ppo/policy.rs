//! Frozen policy used for evaluation and sessions.

use crate::dynamics::mirror_action;
use crate::env::Observation;
use crate::rng::RngHandle;
use crate::types::TargetEnd;

use super::dist::{greedy_action, sample_action};
use super::mlp::Mlp;

/// A network plus the direction it was trained for. Asking it to guide
/// the other way reflects the observation about `x = 0.5` and reflects the
/// chosen action back.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub net: Mlp,
    pub trained_for: TargetEnd,
}

impl Policy {
    pub fn new(net: Mlp, trained_for: TargetEnd) -> Self {
        Policy { net, trained_for }
    }

    pub fn act(
        &self,
        obs: &Observation,
        target: TargetEnd,
        greedy: bool,
        rng: &mut RngHandle,
    ) -> usize {
        let mirror = target != self.trained_for;
        let input = if mirror { obs.mirrored() } else { *obs };
        let (logits, _) = self.net.forward(&input.to_array());
        let (a, _) = if greedy {
            greedy_action(&logits)
        } else {
            sample_action(&logits, rng)
        };
        if mirror {
            mirror_action(a)
        } else {
            a
        }
    }

    /// Action probabilities for guiding toward `target`, indexed by action.
    pub fn probabilities(&self, obs: &Observation, target: TargetEnd) -> Vec<f64> {
        let mirror = target != self.trained_for;
        let input = if mirror { obs.mirrored() } else { *obs };
        let probs = super::dist::softmax(&self.net.forward(&input.to_array()).0);
        if mirror {
            (0..probs.len()).map(|a| probs[mirror_action(a)]).collect()
        } else {
            probs
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::make_rng;
    use crate::types::Vec2;

    #[test]
    fn mirrored_probabilities_are_reflected() {
        let mut rng = make_rng(3, 0);
        let mut net = Mlp::init(&[8], &mut rng);
        net.params.iter_mut().for_each(|p| *p *= 5.0);
        let right = Policy::new(net.clone(), TargetEnd::Right);
        let left = Policy::new(net, TargetEnd::Left);
        let obs = Observation {
            reference_point: Vec2::new(0.2, 0.6),
            own_position: Vec2::new(0.7, 0.3),
        };
        let pr = right.probabilities(&obs, TargetEnd::Right);
        let pl = left.probabilities(&obs.mirrored(), TargetEnd::Right);
        for a in 0..8 {
            assert!((pr[a] - pl[mirror_action(a)]).abs() < 1e-15);
        }
    }

    #[test]
    fn greedy_act_is_reflected() {
        let mut rng = make_rng(4, 0);
        let mut net = Mlp::init(&[8], &mut rng);
        net.params.iter_mut().for_each(|p| *p *= 5.0);
        let p = Policy::new(net, TargetEnd::Right);
        let obs = Observation {
            reference_point: Vec2::new(0.4, 0.5),
            own_position: Vec2::new(0.1, 0.9),
        };
        let a = p.act(&obs, TargetEnd::Right, true, &mut rng);
        let b = p.act(&obs.mirrored(), TargetEnd::Left, true, &mut rng);
        assert_eq!(b, mirror_action(a));
    }
}
