//! Robustification with sensible value functions.
//!
//! Instead of a credible ball that is safe for every value function, RSVF
//! only asks the ambiguity set of each pair to intersect the half-spaces
//! `K(v) = {p : p'v <= g(v)}` of a small set of candidate value functions,
//! where `g(v)` is a lower posterior quantile of `p'v`. The smallest L1 ball
//! meeting all the half-spaces is found by a linear program; the candidate
//! set grows with each robust solve until the final value function is
//! itself covered.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bayes::{bci_radius, posterior_mean, tail_count, PosteriorSamples};
use crate::error::{Error, Result};
use crate::lp::{LinearProgram, LpError, Relation};
use crate::mdp::{dot, total_return, value_iteration, Policy, TabularMdp, ValueFunction};
use crate::robust::{
    argmin_allowed, descending_order, robust_value_iteration, AmbiguitySet, MAX_RADIUS,
};

/// Slack allowed when testing whether a ball meets a half-space.
pub const INTERSECTION_TOL: f64 = 1e-9;

/// Value functions closer than this in sup-norm count as the same member.
pub const DUPLICATE_TOL: f64 = 1e-12;

pub const DEFAULT_MAX_ITER: usize = 20;

/// `K_{s,a}(v) = {p in simplex : p'v <= g}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetyHalfspace {
    pub v: Vec<f64>,
    pub g: f64,
    pub s: usize,
    pub a: usize,
}

impl SafetyHalfspace {
    pub fn new(v: Vec<f64>, g: f64, s: usize, a: usize) -> Result<Self> {
        if !g.is_finite() || v.is_empty() || v.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("half-space needs a finite threshold and normal"));
        }
        Ok(Self { v, g, s, a })
    }

    pub fn min_value(&self) -> f64 {
        self.v.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn is_empty(&self) -> bool {
        self.g < self.min_value()
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        dot(p, &self.v) <= self.g
    }
}

/// Candidate value functions, in insertion order and without duplicates.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PovSet {
    members: Vec<ValueFunction>,
}

impl PovSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `v` unless it duplicates a member; reports whether it was added.
    pub fn insert(&mut self, v: ValueFunction) -> bool {
        if self.members.iter().any(|u| u.sup_distance(&v) <= DUPLICATE_TOL) {
            return false;
        }
        self.members.push(v);
        true
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ValueFunction> {
        self.members.iter()
    }
}

fn sorted_projections(rows: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    let mut y: Vec<f64> = rows.iter().map(|q| dot(q, v)).collect();
    y.sort_by(f64::total_cmp);
    y
}

fn threshold_for_tail(rows: &[Vec<f64>], v: &[f64], tail: f64) -> Result<f64> {
    if rows.is_empty() {
        return Err(Error::invalid("no posterior draws"));
    }
    if rows.iter().any(|q| q.len() != v.len()) {
        return Err(Error::dim("value function and draws differ in length"));
    }
    let y = sorted_projections(rows, v);
    Ok(y[tail_count(rows.len(), tail)])
}

/// The `(floor(m (1 - zeta)) + 1)`-th smallest of the draws' values `v'q_i`:
/// the largest `g` with at least `zeta m` draws satisfying `v'q_i >= g`.
pub fn quantile_threshold_g(rows: &[Vec<f64>], v: &[f64], zeta: f64) -> Result<f64> {
    if !(zeta > 0.0 && zeta < 1.0) {
        return Err(Error::invalid(format!("zeta {zeta} must lie in (0, 1)")));
    }
    threshold_for_tail(rows, v, 1.0 - zeta)
}

/// L1 projection of `p` onto `K(v)`: mass moves from the highest-valued
/// coordinates to the lowest-valued one until `q'v <= g`.
pub fn dist_to_halfspace(p: &[f64], h: &SafetyHalfspace) -> Result<(f64, Vec<f64>)> {
    if p.len() != h.v.len() {
        return Err(Error::dim("point and half-space differ in dimension"));
    }
    let v = &h.v;
    let low = argmin_allowed(v, None);
    if h.g < v[low] {
        return Err(Error::EmptyHalfspace {
            threshold: h.g,
            min_value: v[low],
        });
    }
    let mut q = p.to_vec();
    let mut excess = dot(p, v) - h.g;
    if excess <= 0.0 {
        return Ok((0.0, q));
    }
    let mut moved = 0.0;
    for i in descending_order(v) {
        let gain = v[i] - v[low];
        if excess <= 0.0 || gain <= 0.0 {
            break;
        }
        let t = q[i].min(excess / gain);
        q[i] -= t;
        q[low] += t;
        moved += t;
        excess -= t * gain;
    }
    Ok((2.0 * moved, q))
}

/// Whether the ball `(theta, psi)` meets `K(v)`.
pub fn termination_check(theta: &[f64], psi: f64, h: &SafetyHalfspace) -> bool {
    match dist_to_halfspace(theta, h) {
        Ok((d, _)) => d <= psi + INTERSECTION_TOL,
        Err(_) => false,
    }
}

fn farthest_halfspace(p: &[f64], halfspaces: &[SafetyHalfspace]) -> Result<f64> {
    halfspaces
        .iter()
        .try_fold(0.0f64, |acc, h| Ok(acc.max(dist_to_halfspace(p, h)?.0)))
}

/// Variables: `p`, one transfer vector `w_v` per half-space, then `psi`.
/// Moving `w_{v,i} <= p_i` onto `argmin v` costs `2 sum w_v` and must bring
/// `p'v` down to `g_v`.
fn center_lp(halfspaces: &[SafetyHalfspace], n: usize, extra: usize) -> (LinearProgram, usize) {
    let k = halfspaces.len();
    let psi = n * (k + 1);
    let mut lp = LinearProgram::new(psi + 1 + extra);
    lp.add_constraint((0..n).map(|i| (i, 1.0)).collect(), Relation::Eq, 1.0);
    for (j, h) in halfspaces.iter().enumerate() {
        let w = n * (j + 1);
        // K(v) is unchanged by shifting and scaling v and g alike, so every
        // half-space enters with values in [0, 1]
        let vmin = h.min_value();
        let range = h.v.iter().fold(0.0f64, |m, &x| m.max(x - vmin));
        let unit = if range > 0.0 { 1.0 / range } else { 1.0 };
        let v: Vec<f64> = h.v.iter().map(|&x| (x - vmin) * unit).collect();
        let mut budget = vec![(psi, -1.0)];
        let mut reach: Vec<(usize, f64)> = (0..n).map(|i| (i, v[i])).collect();
        for i in 0..n {
            let gain = v[i];
            if gain > 0.0 {
                lp.add_constraint(vec![(w + i, 1.0), (i, -1.0)], Relation::Le, 0.0);
                budget.push((w + i, 2.0));
                reach.push((w + i, -gain));
            }
        }
        lp.add_constraint(budget, Relation::Le, 0.0);
        lp.add_constraint(reach, Relation::Le, (h.g - vmin) * unit);
    }
    (lp, psi)
}

fn normalize(mut p: Vec<f64>) -> Vec<f64> {
    p.iter_mut().for_each(|x| *x = x.max(0.0));
    let z: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= z);
    p
}

/// Smallest L1 ball meeting every half-space (of the same pair).
///
/// Among the optimal centers, the one closest in L1 to `anchor` is returned
/// when given. The radius is recomputed at the returned center, so the ball
/// meets every half-space.
pub fn minimax_center(
    halfspaces: &[SafetyHalfspace],
    anchor: Option<&[f64]>,
) -> Result<(Vec<f64>, f64)> {
    let first = halfspaces
        .first()
        .ok_or_else(|| Error::invalid("minimax center needs at least one half-space"))?;
    let n = first.v.len();
    for h in halfspaces {
        if h.v.len() != n {
            return Err(Error::dim("half-spaces differ in dimension"));
        }
        if h.is_empty() {
            return Err(Error::EmptyHalfspace {
                threshold: h.g,
                min_value: h.min_value(),
            });
        }
    }
    if let Some(a) = anchor {
        if a.len() != n {
            return Err(Error::dim("anchor length"));
        }
    }
    let (mut lp, psi_var) = center_lp(halfspaces, n, 0);
    lp.set_objective(psi_var, 1.0);
    let stage1 = lp.solve()?;
    let psi_star = stage1.objective.max(0.0);
    let theta = match anchor {
        None => stage1.x[..n].to_vec(),
        Some(anchor) => {
            let (mut lp, psi_var) = center_lp(halfspaces, n, n);
            let e = psi_var + 1;
            lp.add_constraint(vec![(psi_var, 1.0)], Relation::Le, psi_star + 1e-9);
            for i in 0..n {
                lp.set_objective(e + i, 1.0);
                lp.add_constraint(vec![(i, 1.0), (e + i, -1.0)], Relation::Le, anchor[i]);
                lp.add_constraint(vec![(i, -1.0), (e + i, -1.0)], Relation::Le, -anchor[i]);
            }
            match lp.solve() {
                Ok(sol) => sol.x[..n].to_vec(),
                Err(LpError::Infeasible(_) | LpError::Numerical(_)) => stage1.x[..n].to_vec(),
                Err(e) => return Err(e.into()),
            }
        }
    };
    let theta = normalize(theta);
    let psi = farthest_halfspace(&theta, halfspaces)?.min(MAX_RADIUS);
    Ok((theta, psi))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RsvfOptions {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for RsvfOptions {
    fn default() -> Self {
        Self {
            max_iter: DEFAULT_MAX_ITER,
            tol: crate::mdp::DEFAULT_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RsvfDiagnostics {
    pub iterations: usize,
    pub terminated: bool,
    /// Robust return after each robust solve, fallback solves included.
    pub rho_trace: Vec<f64>,
    /// `[s][a]`: whether the final ball meets `K(v_hat)`.
    pub termination: Vec<Vec<bool>>,
    pub fallback_used: Vec<Vec<bool>>,
    pub fallback: Vec<(usize, usize)>,
    pub psi: Vec<Vec<f64>>,
    pub theta: Vec<Vec<Vec<f64>>>,
    pub pov_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RsvfSolution {
    pub policy: Policy,
    pub value: ValueFunction,
    pub safe_return: f64,
    pub sets: AmbiguitySet,
    pub diagnostics: RsvfDiagnostics,
}

struct Problem<'a> {
    samples: &'a PosteriorSamples,
    mean: Vec<Vec<Vec<f64>>>,
    delta_sa: f64,
}

impl Problem<'_> {
    fn halfspace(&self, v: &[f64], s: usize, a: usize) -> Result<SafetyHalfspace> {
        let g = threshold_for_tail(self.samples.pair(s, a), v, self.delta_sa)?;
        // rounding in q'v can put the order statistic a hair below min(v)
        let vmin = v.iter().cloned().fold(f64::INFINITY, f64::min);
        SafetyHalfspace::new(v.to_vec(), g.max(vmin), s, a)
    }

    fn pairs(&self) -> Vec<(usize, usize)> {
        let na = self.samples.num_actions();
        (0..self.samples.num_states())
            .flat_map(|s| (0..na).map(move |a| (s, a)))
            .collect()
    }

    fn check_all(&self, sets: &AmbiguitySet, v: &[f64]) -> Result<Vec<Vec<bool>>> {
        let na = self.samples.num_actions();
        let flags = self
            .pairs()
            .par_iter()
            .map(|&(s, a)| {
                let h = self.halfspace(v, s, a)?;
                Ok(termination_check(sets.nominal(s, a), sets.psi(s, a), &h))
            })
            .collect::<Result<Vec<bool>>>()?;
        Ok(flags.chunks(na).map(<[bool]>::to_vec).collect())
    }
}

/// The RSVF loop.
///
/// Starting from the optimal value function of the posterior-mean model,
/// every iteration adds the latest value function to the candidate set,
/// rebuilds the per-pair balls with [`minimax_center`] and solves the robust
/// MDP. The loop stops once every ball meets the half-space of the new
/// value function. Pairs still failing after `max_iter` iterations switch
/// to their credible (BCI) balls, repeatedly, until every pair passes.
pub fn rsvf_solve(
    rewards: &[Vec<f64>],
    gamma: f64,
    p0: &[f64],
    samples: &PosteriorSamples,
    delta: f64,
    options: &RsvfOptions,
) -> Result<RsvfSolution> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid(format!("delta {delta} must lie in (0, 1)")));
    }
    if options.max_iter == 0 {
        return Err(Error::invalid("max_iter must be at least 1"));
    }
    let (ns, na) = (samples.num_states(), samples.num_actions());
    if samples.num_successors() != ns {
        return Err(Error::dim("posterior draws must range over the states"));
    }
    let problem = Problem {
        samples,
        mean: posterior_mean(samples),
        delta_sa: delta / (ns * na) as f64,
    };
    let mean_mdp = TabularMdp::new(rewards.to_vec(), problem.mean.clone(), gamma, p0.to_vec())?;
    let mut v_k = value_iteration(&mean_mdp, options.tol)?.0;

    let pairs = problem.pairs();
    let mut pov = PovSet::new();
    let mut halfspaces: Vec<Vec<SafetyHalfspace>> = vec![Vec::new(); pairs.len()];
    let mut rho_trace = Vec::new();
    let mut iterations = 0;
    let mut last: Option<(AmbiguitySet, ValueFunction, Policy, Vec<Vec<bool>>)> = None;

    while iterations < options.max_iter {
        if !pov.insert(v_k.clone()) && last.is_some() {
            break;
        }
        iterations += 1;
        for (h, &(s, a)) in halfspaces.iter_mut().zip(&pairs) {
            h.push(problem.halfspace(&v_k, s, a)?);
        }
        let centers = pairs
            .par_iter()
            .zip(&halfspaces)
            .map(|(&(s, a), hs)| minimax_center(hs, Some(&problem.mean[s][a])))
            .collect::<Result<Vec<_>>>()?;
        let mut nominal = vec![Vec::with_capacity(na); ns];
        let mut psi = vec![Vec::with_capacity(na); ns];
        for (&(s, _), (theta, radius)) in pairs.iter().zip(centers) {
            nominal[s].push(theta);
            psi[s].push(radius);
        }
        let sets = AmbiguitySet::new(nominal, psi, None)?;
        let (v, pi) = robust_value_iteration(rewards, gamma, &sets, options.tol)?;
        rho_trace.push(total_return(&v, p0)?);
        let flags = problem.check_all(&sets, &v)?;
        let done = flags.iter().flatten().all(|&f| f);
        v_k = v.clone();
        last = Some((sets, v, pi, flags));
        if done {
            break;
        }
    }

    let (mut sets, mut v, mut pi, mut flags) = last.expect("at least one iteration ran");
    let terminated = flags.iter().flatten().all(|&f| f);
    let mut fallback_used = vec![vec![false; na]; ns];
    let mut fallback = Vec::new();
    while !flags.iter().flatten().all(|&f| f) {
        for &(s, a) in &pairs {
            if !flags[s][a] && !fallback_used[s][a] {
                let (center, radius) = bci_radius(samples.pair(s, a), problem.delta_sa)?;
                sets.set_pair(s, a, center, radius)?;
                fallback_used[s][a] = true;
                fallback.push((s, a));
            } else if !flags[s][a] {
                return Err(Error::Solver(format!(
                    "credible ball of ({s},{a}) misses its safety half-space"
                )));
            }
        }
        let (nv, npi) = robust_value_iteration(rewards, gamma, &sets, options.tol)?;
        rho_trace.push(total_return(&nv, p0)?);
        flags = problem.check_all(&sets, &nv)?;
        v = nv;
        pi = npi;
    }

    let safe_return = total_return(&v, p0)?;
    let diagnostics = RsvfDiagnostics {
        iterations,
        terminated,
        rho_trace,
        termination: flags,
        fallback_used,
        fallback,
        psi: sets.radii().to_vec(),
        theta: (0..ns)
            .map(|s| (0..na).map(|a| sets.nominal(s, a).to_vec()).collect())
            .collect(),
        pov_size: pov.len(),
    };
    Ok(RsvfSolution {
        policy: pi,
        value: v,
        safe_return,
        sets,
        diagnostics,
    })
}

/// RSVF for one uncertain outcome vector with a fixed value `v`: the ball is
/// built from the single half-space `K(v)` anchored at the posterior mean,
/// and the estimate is its worst case `min p'v`.
pub fn single_decision_estimate(rows: &[Vec<f64>], v: &[f64], delta: f64) -> Result<(Vec<f64>, f64, f64)> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid(format!("delta {delta} must lie in (0, 1)")));
    }
    let g = threshold_for_tail(rows, v, delta)?;
    let vmin = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let h = SafetyHalfspace::new(v.to_vec(), g.max(vmin), 0, 0)?;
    let mean = posterior_mean(&PosteriorSamples::new(vec![vec![rows.to_vec()]])?);
    let (theta, psi) = minimax_center(&[h], Some(&mean[0][0]))?;
    let (_, estimate) = crate::robust::worst_case_l1(v, &theta, psi)?;
    Ok((theta, psi, estimate))
}

/// `max_v dist(p, K(v))`, the objective that [`minimax_center`] minimizes.
pub fn center_objective(p: &[f64], halfspaces: &[SafetyHalfspace]) -> Result<f64> {
    farthest_halfspace(p, halfspaces)
}
