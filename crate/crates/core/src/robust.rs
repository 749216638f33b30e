//! Robust Bellman operators over s,a-rectangular L1 ambiguity sets.
//!
//! Nature picks, independently for each state and action, the transition
//! vector `p` in `{p in simplex : ||p - nominal||_1 <= psi}` that minimizes
//! `p'v`. The inner problem has a closed-form greedy solution: move up to
//! `psi / 2` probability mass onto the lowest-valued state, taking it from the
//! highest-valued states first.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::{LinearProgram, Relation};
use crate::mdp::{argmax_first, check_simplex, dot, residual_threshold, Policy, ValueFunction};

/// Diameter of the probability simplex in the L1 norm.
pub const MAX_RADIUS: f64 = 2.0;

/// Tolerance applied when validating externally supplied nominal points.
pub const NOMINAL_TOL: f64 = 1e-9;

#[derive(Deserialize)]
struct RawSet {
    nominal: Vec<Vec<Vec<f64>>>,
    psi: Vec<Vec<f64>>,
    #[serde(default)]
    support_mask: Option<Vec<Vec<Vec<bool>>>>,
}

/// Per-(s, a) L1 balls `{p : ||p - nominal[s][a]||_1 <= psi[s][a]}`, optionally
/// restricted to the successors allowed by `support_mask[s][a]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSet")]
pub struct AmbiguitySet {
    nominal: Vec<Vec<Vec<f64>>>,
    psi: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    support_mask: Option<Vec<Vec<Vec<bool>>>>,
}

impl TryFrom<RawSet> for AmbiguitySet {
    type Error = Error;
    fn try_from(raw: RawSet) -> Result<Self> {
        AmbiguitySet::new(raw.nominal, raw.psi, raw.support_mask)
    }
}

impl AmbiguitySet {
    /// Radii are clamped to `[0, 2]`; negative radii are rejected.
    pub fn new(
        nominal: Vec<Vec<Vec<f64>>>,
        psi: Vec<Vec<f64>>,
        support_mask: Option<Vec<Vec<Vec<bool>>>>,
    ) -> Result<Self> {
        let num_states = nominal.len();
        if num_states == 0 || psi.len() != num_states {
            return Err(Error::dim("nominal and psi must cover the same states"));
        }
        let num_actions = nominal[0].len();
        for s in 0..num_states {
            if nominal[s].len() != num_actions || psi[s].len() != num_actions {
                return Err(Error::dim(format!("state {s} has inconsistent action count")));
            }
        }
        let dim = nominal[0].first().map_or(0, Vec::len);
        let mut psi = psi;
        for s in 0..num_states {
            for a in 0..num_actions {
                let p = &nominal[s][a];
                if p.len() != dim {
                    return Err(Error::dim(format!("nominal ({s},{a}) has length {}", p.len())));
                }
                check_simplex(p, NOMINAL_TOL)
                    .map_err(|e| Error::invalid(format!("nominal ({s},{a}): {e}")))?;
                psi[s][a] = clamp_radius(psi[s][a])?;
            }
        }
        if let Some(mask) = &support_mask {
            if mask.len() != num_states {
                return Err(Error::dim("support mask state count"));
            }
            for s in 0..num_states {
                if mask[s].len() != num_actions {
                    return Err(Error::dim("support mask action count"));
                }
                for a in 0..num_actions {
                    let m = &mask[s][a];
                    if m.len() != dim {
                        return Err(Error::dim("support mask length"));
                    }
                    if !m.iter().any(|&b| b) {
                        return Err(Error::invalid(format!("support mask ({s},{a}) is empty")));
                    }
                    if m.iter().zip(&nominal[s][a]).any(|(&keep, &p)| !keep && p > NOMINAL_TOL) {
                        return Err(Error::invalid(format!(
                            "nominal ({s},{a}) puts mass on a masked-out successor"
                        )));
                    }
                }
            }
        }
        Ok(Self {
            nominal,
            psi,
            support_mask,
        })
    }

    /// Singleton sets at the given kernel.
    pub fn nominal_only(nominal: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let psi = nominal.iter().map(|row| vec![0.0; row.len()]).collect();
        Self::new(nominal, psi, None)
    }

    /// Every pair gets the same radius.
    pub fn uniform_radius(nominal: Vec<Vec<Vec<f64>>>, psi: f64) -> Result<Self> {
        let radii = nominal.iter().map(|row| vec![psi; row.len()]).collect();
        Self::new(nominal, radii, None)
    }

    pub fn num_states(&self) -> usize {
        self.nominal.len()
    }

    pub fn num_actions(&self) -> usize {
        self.nominal[0].len()
    }

    /// Length of each nominal vector.
    pub fn num_successors(&self) -> usize {
        self.nominal[0][0].len()
    }

    pub fn nominal(&self, s: usize, a: usize) -> &[f64] {
        &self.nominal[s][a]
    }

    pub fn psi(&self, s: usize, a: usize) -> f64 {
        self.psi[s][a]
    }

    pub fn radii(&self) -> &[Vec<f64>] {
        &self.psi
    }

    pub fn mask(&self, s: usize, a: usize) -> Option<&[bool]> {
        self.support_mask.as_ref().map(|m| m[s][a].as_slice())
    }

    pub fn has_mask(&self) -> bool {
        self.support_mask.is_some()
    }

    /// Replace the set of one pair.
    pub fn set_pair(&mut self, s: usize, a: usize, nominal: Vec<f64>, psi: f64) -> Result<()> {
        if nominal.len() != self.num_successors() {
            return Err(Error::dim("nominal length"));
        }
        check_simplex(&nominal, NOMINAL_TOL)?;
        self.nominal[s][a] = nominal;
        self.psi[s][a] = clamp_radius(psi)?;
        if let Some(mask) = &mut self.support_mask {
            mask[s][a] = vec![true; self.nominal[s][a].len()];
        }
        Ok(())
    }

    /// Worst-case expectation of `v` over the set of `(s, a)`.
    pub fn worst_case(&self, s: usize, a: usize, v: &[f64]) -> Result<(Vec<f64>, f64)> {
        if v.len() != self.num_successors() {
            return Err(Error::dim("value function length"));
        }
        let order = descending_order(v);
        Ok(greedy_worst_case(v, &order, &self.nominal[s][a], self.psi[s][a], self.mask(s, a)))
    }

    fn check_mdp_dims(&self, rewards: &[Vec<f64>]) -> Result<()> {
        if rewards.len() != self.num_states()
            || rewards.iter().any(|r| r.len() != self.num_actions())
        {
            return Err(Error::dim("rewards do not match the ambiguity set"));
        }
        if self.num_successors() != self.num_states() {
            return Err(Error::dim("ambiguity set successors must equal the state count"));
        }
        Ok(())
    }
}

fn clamp_radius(psi: f64) -> Result<f64> {
    if psi.is_nan() || psi < 0.0 {
        return Err(Error::invalid(format!("radius {psi} must be nonnegative")));
    }
    Ok(psi.min(MAX_RADIUS))
}

/// Indices sorted by decreasing value, equal values by increasing index.
pub(crate) fn descending_order(v: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&i, &j| v[j].total_cmp(&v[i]).then(i.cmp(&j)));
    order
}

/// Lowest-index minimizer of `v` among allowed states.
pub(crate) fn argmin_allowed(v: &[f64], mask: Option<&[bool]>) -> usize {
    let mut best = usize::MAX;
    for (i, &x) in v.iter().enumerate() {
        if mask.is_some_and(|m| !m[i]) {
            continue;
        }
        if best == usize::MAX || x < v[best] {
            best = i;
        }
    }
    best
}

fn greedy_worst_case(
    v: &[f64],
    order_desc: &[usize],
    p_bar: &[f64],
    psi: f64,
    mask: Option<&[bool]>,
) -> (Vec<f64>, f64) {
    let mut q = p_bar.to_vec();
    let low = argmin_allowed(v, mask);
    let add = (psi / 2.0).min(1.0 - p_bar[low]).max(0.0);
    q[low] += add;
    let mut remaining = add;
    for &i in order_desc {
        if remaining <= 0.0 {
            break;
        }
        if i == low || mask.is_some_and(|m| !m[i]) {
            continue;
        }
        let take = q[i].min(remaining);
        q[i] -= take;
        remaining -= take;
    }
    let obj = dot(&q, v);
    (q, obj)
}

fn greedy_objective(
    v: &[f64],
    order_desc: &[usize],
    p_bar: &[f64],
    psi: f64,
    mask: Option<&[bool]>,
) -> f64 {
    let low = argmin_allowed(v, mask);
    let add = (psi / 2.0).min(1.0 - p_bar[low]).max(0.0);
    let mut obj = dot(p_bar, v) + add * v[low];
    let mut remaining = add;
    for &i in order_desc {
        if remaining <= 0.0 {
            break;
        }
        if i == low || mask.is_some_and(|m| !m[i]) {
            continue;
        }
        let take = p_bar[i].min(remaining);
        obj -= take * v[i];
        remaining -= take;
    }
    obj
}

fn check_kernel_args(v: &[f64], p_bar: &[f64], psi: f64) -> Result<()> {
    if v.len() != p_bar.len() {
        return Err(Error::dim("value function and nominal point lengths differ"));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("non-finite value"));
    }
    if psi.is_nan() || psi < 0.0 {
        return Err(Error::invalid(format!("radius {psi} must be nonnegative")));
    }
    check_simplex(p_bar, NOMINAL_TOL)
}

/// Exact minimizer of `q'v` over `{q in simplex : ||q - p_bar||_1 <= psi}`.
pub fn worst_case_l1(v: &[f64], p_bar: &[f64], psi: f64) -> Result<(Vec<f64>, f64)> {
    worst_case_l1_masked(v, p_bar, psi, None)
}

/// As [`worst_case_l1`], with nature restricted to successors where
/// `mask` is true. `p_bar` must put no mass on masked-out successors.
pub fn worst_case_l1_masked(
    v: &[f64],
    p_bar: &[f64],
    psi: f64,
    mask: Option<&[bool]>,
) -> Result<(Vec<f64>, f64)> {
    check_kernel_args(v, p_bar, psi)?;
    if let Some(m) = mask {
        if m.len() != v.len() || !m.iter().any(|&b| b) {
            return Err(Error::invalid("support mask must match and keep one successor"));
        }
        if m.iter().zip(p_bar).any(|(&keep, &p)| !keep && p > NOMINAL_TOL) {
            return Err(Error::invalid("nominal point has mass outside the support mask"));
        }
    }
    let order = descending_order(v);
    Ok(greedy_worst_case(v, &order, p_bar, psi.min(MAX_RADIUS), mask))
}

/// The `n + 2` band-constraint vectors `1_{k..n} - 1_{1..k-1}`, `k = 0..=n+1`
/// (1-based state indices, empty ranges contribute nothing).
pub fn monotone_constraint_vectors(n: usize) -> Vec<Vec<f64>> {
    (0..=n + 1)
        .map(|k| (1..=n).map(|i| if i >= k.max(1) { 1.0 } else { -1.0 }).collect())
        .collect()
}

/// Nominal point and radius read through the band constraints instead of
/// the full L1 ball. For values sorted in decreasing order both give the
/// same worst case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotoneConstraintSet {
    pub nominal: Vec<f64>,
    pub psi: f64,
}

impl MonotoneConstraintSet {
    pub fn new(nominal: Vec<f64>, psi: f64) -> Result<Self> {
        check_simplex(&nominal, NOMINAL_TOL)?;
        Ok(Self {
            nominal,
            psi: clamp_radius(psi)?,
        })
    }

    pub fn constraint_vectors(&self) -> Vec<Vec<f64>> {
        monotone_constraint_vectors(self.nominal.len())
    }

    /// Whether `p` satisfies every band constraint (and lies on the simplex).
    pub fn contains(&self, p: &[f64], tol: f64) -> bool {
        check_simplex(p, tol).is_ok()
            && self.constraint_vectors().iter().all(|c| {
                let lhs: f64 = c.iter().zip(p.iter().zip(&self.nominal)).map(|(ci, (x, y))| ci * (x - y)).sum();
                lhs <= self.psi + tol
            })
    }

    pub fn worst_case(&self, v: &[f64]) -> Result<f64> {
        worst_case_l1_monotone(v, &self.nominal, self.psi)
    }
}

/// Optimal value of `min v'p` over the simplex intersected with the band
/// constraints `(1_{k..n} - 1_{1..k-1})'(p - p_bar) <= psi`, solved as an LP.
pub fn worst_case_l1_monotone(v: &[f64], p_bar: &[f64], psi: f64) -> Result<f64> {
    check_kernel_args(v, p_bar, psi)?;
    let n = v.len();
    let mut lp = LinearProgram::new(n);
    for (j, &vj) in v.iter().enumerate() {
        lp.set_objective(j, vj);
    }
    for c in monotone_constraint_vectors(n) {
        let rhs = psi + dot(&c, p_bar);
        lp.add_dense(&c, Relation::Le, rhs);
    }
    lp.add_dense(&vec![1.0; n], Relation::Eq, 1.0);
    Ok(lp.solve()?.objective)
}

/// `(T v)(s) = max_a min_{p in P_{s,a}} r[s][a] + gamma p'v`.
pub fn robust_bellman_backup(
    rewards: &[Vec<f64>],
    gamma: f64,
    sets: &AmbiguitySet,
    v: &ValueFunction,
) -> Result<(ValueFunction, Policy)> {
    sets.check_mdp_dims(rewards)?;
    if v.len() != sets.num_states() {
        return Err(Error::dim("value function length"));
    }
    Ok(backup_unchecked(rewards, gamma, sets, v, None))
}

fn backup_unchecked(
    rewards: &[Vec<f64>],
    gamma: f64,
    sets: &AmbiguitySet,
    v: &[f64],
    fixed: Option<&Policy>,
) -> (ValueFunction, Policy) {
    let order = descending_order(v);
    let q = |s: usize, a: usize| {
        rewards[s][a]
            + gamma * greedy_objective(v, &order, sets.nominal(s, a), sets.psi(s, a), sets.mask(s, a))
    };
    let mut out = Vec::with_capacity(v.len());
    let mut policy = Vec::with_capacity(v.len());
    for s in 0..sets.num_states() {
        let (a, value) = match fixed {
            Some(pi) => (pi[s], q(s, pi[s])),
            None => argmax_first((0..sets.num_actions()).map(|a| q(s, a))),
        };
        out.push(value);
        policy.push(a);
    }
    (ValueFunction(out), Policy(policy))
}

fn iterate(
    rewards: &[Vec<f64>],
    gamma: f64,
    sets: &AmbiguitySet,
    tol: f64,
    fixed: Option<&Policy>,
) -> Result<(ValueFunction, Policy)> {
    if !(tol > 0.0) {
        return Err(Error::invalid("tolerance must be positive"));
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::invalid("discount must lie in [0, 1)"));
    }
    sets.check_mdp_dims(rewards)?;
    if let Some(pi) = fixed {
        if pi.len() != sets.num_states() || pi.iter().any(|&a| a >= sets.num_actions()) {
            return Err(Error::invalid("policy does not fit the ambiguity set"));
        }
    }
    let threshold = residual_threshold(tol, gamma);
    let mut v = ValueFunction::zeros(sets.num_states());
    loop {
        let (next, _) = backup_unchecked(rewards, gamma, sets, &v, fixed);
        let residual = next.sup_distance(&v);
        v = next;
        if residual <= threshold {
            let (_, greedy) = backup_unchecked(rewards, gamma, sets, &v, fixed);
            return Ok((v, greedy));
        }
    }
}

/// Robust value iteration; the result is within `tol` of the robust fixed
/// point and the policy is greedy (lowest index on ties) with respect to it.
pub fn robust_value_iteration(
    rewards: &[Vec<f64>],
    gamma: f64,
    sets: &AmbiguitySet,
    tol: f64,
) -> Result<(ValueFunction, Policy)> {
    iterate(rewards, gamma, sets, tol, None)
}

/// Robust value of a fixed policy, within `tol` of the fixed point.
pub fn robust_policy_evaluation(
    rewards: &[Vec<f64>],
    gamma: f64,
    sets: &AmbiguitySet,
    pi: &Policy,
    tol: f64,
) -> Result<ValueFunction> {
    iterate(rewards, gamma, sets, tol, Some(pi)).map(|(v, _)| v)
}

/// `p0' v_hat` for the given policy, or for the robust optimal policy when
/// `pi` is `None`.
pub fn robust_return(
    rewards: &[Vec<f64>],
    gamma: f64,
    sets: &AmbiguitySet,
    pi: Option<&Policy>,
    p0: &[f64],
    tol: f64,
) -> Result<f64> {
    let v = match pi {
        Some(pi) => robust_policy_evaluation(rewards, gamma, sets, pi, tol)?,
        None => robust_value_iteration(rewards, gamma, sets, tol)?.0,
    };
    crate::mdp::total_return(&v, p0)
}
