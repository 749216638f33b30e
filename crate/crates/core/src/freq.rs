//! Distribution-free L1 radii from Hoeffding-type concentration bounds and the
//! Good-Turing support restriction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{empirical_distribution, Dataset};
use crate::robust::{AmbiguitySet, MAX_RADIUS};

/// Total failure probability `delta`, split evenly over `pairs` state-action
/// pairs whose transition vectors have `support` entries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceBudget {
    pub delta: f64,
    pub pairs: usize,
    pub support: usize,
}

impl ConfidenceBudget {
    pub fn new(delta: f64, num_states: usize, num_actions: usize) -> Result<Self> {
        Self::with_pairs(delta, num_states * num_actions, num_states)
    }

    /// Budget for a problem with a single uncertain transition vector.
    pub fn single_pair(delta: f64, support: usize) -> Result<Self> {
        Self::with_pairs(delta, 1, support)
    }

    pub fn with_pairs(delta: f64, pairs: usize, support: usize) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::invalid(format!("delta {delta} must lie in (0, 1)")));
        }
        if pairs == 0 || support == 0 {
            return Err(Error::invalid("budget needs at least one pair and one successor"));
        }
        Ok(Self {
            delta,
            pairs,
            support,
        })
    }

    /// `delta / (S A)`.
    pub fn per_pair(&self) -> f64 {
        self.delta / self.pairs as f64
    }
}

fn radius_from_log(n: usize, log_term: f64) -> f64 {
    if n == 0 {
        return MAX_RADIUS;
    }
    (2.0 / n as f64 * log_term).sqrt().min(MAX_RADIUS)
}

/// `min(2, sqrt(2/n ln(S A 2^S / delta)))`, and 2 when `n = 0`.
pub fn hoeffding_radius(n: usize, budget: &ConfidenceBudget) -> f64 {
    let log_term = (budget.pairs as f64).ln() + budget.support as f64 * std::f64::consts::LN_2
        - budget.delta.ln();
    radius_from_log(n, log_term)
}

/// `min(2, sqrt(2/n ln(S^2 A / delta)))`, and 2 when `n = 0`.
pub fn hoeffding_monotone_radius(n: usize, budget: &ConfidenceBudget) -> f64 {
    let log_term =
        (budget.support as f64).ln() + (budget.pairs as f64).ln() - budget.delta.ln();
    radius_from_log(n, log_term)
}

/// True where a successor was observed; all true when nothing was observed.
pub fn good_turing_support(counts: &[u64]) -> Vec<bool> {
    if counts.iter().all(|&c| c == 0) {
        return vec![true; counts.len()];
    }
    counts.iter().map(|&c| c > 0).collect()
}

/// Which concentration bound sets the radius.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HoeffdingBound {
    Standard,
    Monotone,
}

/// L1 balls around the empirical kernel, with radii from `bound` and the
/// visit counts of each pair. With `good_turing` the balls exclude unobserved
/// successors.
pub fn hoeffding_ambiguity_set(
    data: &Dataset,
    budget: &ConfidenceBudget,
    bound: HoeffdingBound,
    good_turing: bool,
) -> Result<AmbiguitySet> {
    let (ns, na, k) = (data.num_states(), data.num_actions(), data.num_successors());
    let mut nominal = Vec::with_capacity(ns);
    let mut psi = Vec::with_capacity(ns);
    let mut mask = Vec::with_capacity(ns);
    for s in 0..ns {
        let (mut pn, mut pr, mut pm) = (Vec::new(), Vec::new(), Vec::new());
        for a in 0..na {
            let counts = data.counts(s, a);
            pn.push(empirical_distribution(counts, k));
            let n = data.visits(s, a) as usize;
            pr.push(match bound {
                HoeffdingBound::Standard => hoeffding_radius(n, budget),
                HoeffdingBound::Monotone => hoeffding_monotone_radius(n, budget),
            });
            pm.push(good_turing_support(counts));
        }
        nominal.push(pn);
        psi.push(pr);
        mask.push(pm);
    }
    AmbiguitySet::new(nominal, psi, good_turing.then_some(mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::Transition;

    fn budget(delta: f64, s: usize, a: usize) -> ConfidenceBudget {
        ConfidenceBudget::new(delta, s, a).unwrap()
    }

    /// Second implementation: product form, no log-space shortcuts.
    fn direct(n: usize, inner: f64) -> f64 {
        if n == 0 {
            2.0
        } else {
            f64::min(2.0, (2.0 / n as f64 * inner.ln()).sqrt())
        }
    }

    #[test]
    fn hoeffding_examples() {
        let b = budget(0.1, 3, 1);
        let h = hoeffding_radius(10, &b);
        assert!((h - 1.0470).abs() < 5e-5, "{h}");
        assert!((h - direct(10, 3.0 * 8.0 / 0.1)).abs() < 1e-12);
        let m = hoeffding_monotone_radius(10, &b);
        assert!((m - 0.9487).abs() < 5e-5, "{m}");
        assert!((m - direct(10, 9.0 / 0.1)).abs() < 1e-12);
        assert_eq!(hoeffding_radius(0, &b), 2.0);
        assert_eq!(hoeffding_monotone_radius(0, &b), 2.0);
        assert_eq!(hoeffding_radius(1, &b), 2.0);
    }

    #[test]
    fn radii_are_monotone() {
        let mut prev = f64::INFINITY;
        for n in 1..2000 {
            let r = hoeffding_radius(n, &budget(0.05, 5, 2));
            assert!(r <= prev);
            prev = r;
        }
        assert!(prev < 0.2);
        for n in [5usize, 40, 500] {
            for s in 2..8 {
                let small = budget(0.05, s, 2);
                let big_s = budget(0.05, s + 1, 2);
                let big_a = budget(0.05, s, 3);
                let small_delta = budget(0.01, s, 2);
                for f in [hoeffding_radius, hoeffding_monotone_radius] {
                    let base = f(n, &small);
                    if base < 2.0 {
                        assert!(f(n, &big_s) > base);
                        assert!(f(n, &big_a) > base);
                        assert!(f(n, &small_delta) > base);
                        assert!(f(n + 1, &small) < base);
                    }
                }
                assert!(hoeffding_monotone_radius(n, &small) <= hoeffding_radius(n, &small));
            }
        }
    }

    #[test]
    fn budget_validation() {
        assert!(ConfidenceBudget::new(0.0, 3, 1).is_err());
        assert!(ConfidenceBudget::new(1.0, 3, 1).is_err());
        assert!(ConfidenceBudget::new(0.1, 0, 1).is_err());
        assert!((budget(0.1, 5, 2).per_pair() - 0.01).abs() < 1e-15);
        let single = ConfidenceBudget::single_pair(0.2, 5).unwrap();
        assert_eq!(single.per_pair(), 0.2);
    }

    #[test]
    fn good_turing_examples() {
        assert_eq!(good_turing_support(&[3, 2, 5]), vec![true, true, true]);
        assert_eq!(good_turing_support(&[3, 0, 5]), vec![true, false, true]);
        assert_eq!(good_turing_support(&[0, 0, 0]), vec![true, true, true]);
    }

    #[test]
    fn set_construction() {
        let mut d = Dataset::new(2, 1);
        for _ in 0..4 {
            d.push(Transition { s: 0, a: 0, next: 1 }).unwrap();
        }
        let b = budget(0.1, 2, 1);
        let set = hoeffding_ambiguity_set(&d, &b, HoeffdingBound::Standard, true).unwrap();
        assert_eq!(set.nominal(0, 0), &[0.0, 1.0]);
        assert_eq!(set.nominal(1, 0), &[0.5, 0.5]);
        assert!((set.psi(0, 0) - hoeffding_radius(4, &b)).abs() < 1e-15);
        assert_eq!(set.psi(1, 0), 2.0);
        assert_eq!(set.mask(0, 0), Some(&[false, true][..]));
        assert_eq!(set.mask(1, 0), Some(&[true, true][..]));
        let plain = hoeffding_ambiguity_set(&d, &b, HoeffdingBound::Monotone, false).unwrap();
        assert!(!plain.has_mask());
        assert!(plain.psi(0, 0) <= set.psi(0, 0));
    }
}
