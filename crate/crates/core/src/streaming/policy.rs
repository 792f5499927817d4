use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// When to run flip refinement: hard-view prototypes, a threshold on the
/// difficulty score and a hysteresis margin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefinementPolicy {
    pub prototypes: Vec<Vec<f64>>,
    /// Activation threshold in `[0, 1]`: 0 means always on, 1 always off.
    pub theta_flip: f64,
    /// Once active, refinement stays on until the score drops below
    /// `theta_flip − hysteresis`.
    pub hysteresis: f64,
    /// Width of the score's Gaussian falloff in cosine distance.
    pub sigma: f64,
}

pub const DEFAULT_HYSTERESIS: f64 = 0.05;
pub const DEFAULT_SIGMA: f64 = 0.3;

impl RefinementPolicy {
    pub fn new(prototypes: Vec<Vec<f64>>, theta_flip: f64) -> Self {
        Self { prototypes, theta_flip, hysteresis: DEFAULT_HYSTERESIS, sigma: DEFAULT_SIGMA }
    }

    /// A policy that never refines, whatever the score.
    pub fn never(prototype_dim: usize) -> Self {
        Self::new(vec![vec![1.0; prototype_dim]], 1.0)
    }

    pub fn with_theta(&self, theta_flip: f64) -> Self {
        Self { theta_flip, ..self.clone() }
    }

    /// Next activation state given the previous one and this frame's score.
    pub fn decide(&self, score: f64, was_active: bool) -> bool {
        if self.theta_flip <= 0.0 {
            return true;
        }
        if self.theta_flip >= 1.0 {
            return false;
        }
        if was_active {
            score >= self.theta_flip - self.hysteresis
        } else {
            score > self.theta_flip
        }
    }
}

fn cosine_distance<T: Real>(a: &[T], b: &[f64]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let x = x.as_f64();
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return 1.0;
    }
    (1.0 - ab / (aa.sqrt() * bb.sqrt())).max(0.0)
}

/// `exp(−d²/σ²)` with `d` the smallest cosine distance from `v_row` to a
/// prototype: 1 on a prototype, falling toward 0 away from all of them.
pub fn difficulty_score<T: Real>(v_row: &[T], policy: &RefinementPolicy) -> Result<f64> {
    if policy.prototypes.is_empty() {
        return Err(Error::EmptyPrototypes);
    }
    let d = policy.prototypes.iter().map(|p| cosine_distance(v_row, p)).fold(f64::INFINITY, f64::min);
    Ok((-(d * d) / (policy.sigma * policy.sigma)).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn score_examples() {
        let p = RefinementPolicy { sigma: 0.1, ..RefinementPolicy::new(vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]], 0.5) };
        assert_eq!(difficulty_score(&[2.0, 0.0, 0.0], &p).unwrap(), 1.0);
        assert!(difficulty_score(&[0.0, 0.0, 3.0], &p).unwrap() < 1e-40);
        let empty = RefinementPolicy::new(vec![], 0.5);
        assert_eq!(difficulty_score(&[1.0], &empty), Err(Error::EmptyPrototypes));
    }

    #[test]
    fn closer_to_a_prototype_scores_higher() {
        let p = RefinementPolicy::new(vec![vec![1.0, 0.0]], 0.5);
        let mut last = 2.0;
        for k in 0..20 {
            let ang = k as f64 * 0.15;
            let s = difficulty_score(&[ang.cos(), ang.sin()], &p).unwrap();
            assert!(s < last);
            last = s;
        }
    }

    #[test]
    fn boundaries_and_hysteresis() {
        let p = RefinementPolicy::new(vec![vec![1.0]], 0.0);
        assert!(p.decide(0.0, false));
        let p = p.with_theta(1.0);
        assert!(!p.decide(1.0, true));
        let p = p.with_theta(0.5);
        assert!(!p.decide(0.5, false));
        assert!(p.decide(0.51, false));
        assert!(p.decide(0.46, true));
        assert!(!p.decide(0.44, true));
    }

    proptest! {
        #[test]
        fn activation_is_monotone_in_theta(scores in prop::collection::vec(0.0f64..1.0, 1..200), a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let base = RefinementPolicy::new(vec![vec![1.0]], 0.0);
            let (pl, ph) = (base.with_theta(lo), base.with_theta(hi));
            let (mut al, mut ah) = (false, false);
            for &s in &scores {
                al = pl.decide(s, al);
                ah = ph.decide(s, ah);
                // Active at the higher threshold implies active at the lower.
                prop_assert!(!ah || al);
            }
        }
    }
}
