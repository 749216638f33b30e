//! Tabular MDPs, transition datasets and the nominal Bellman machinery.

use std::ops::{Deref, Index};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for "lies on the probability simplex".
pub const SIMPLEX_TOL: f64 = 1e-12;

/// Default value-iteration tolerance, in return units.
pub const DEFAULT_TOL: f64 = 1e-6;

/// Checks that `p` is a probability vector within `tol`.
pub fn check_simplex(p: &[f64], tol: f64) -> Result<()> {
    if p.is_empty() {
        return Err(Error::invalid("empty probability vector"));
    }
    let mut sum = 0.0;
    for (i, &x) in p.iter().enumerate() {
        if !x.is_finite() || x < -tol {
            return Err(Error::invalid(format!("entry {i} = {x} is not a probability")));
        }
        sum += x;
    }
    if (sum - 1.0).abs() > tol {
        return Err(Error::invalid(format!("probabilities sum to {sum}")));
    }
    Ok(())
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Stopping threshold on `||v - Tv||` that guarantees `||v' - v*|| <= tol`
/// for the returned iterate `v' = Tv` of a `discount`-contraction.
pub(crate) fn residual_threshold(tol: f64, discount: f64) -> f64 {
    if discount == 0.0 {
        f64::INFINITY
    } else {
        tol * (1.0 - discount) / (2.0 * discount)
    }
}

/// A state-indexed value vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ValueFunction(pub Vec<f64>);

impl ValueFunction {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn sup_distance(&self, other: &ValueFunction) -> f64 {
        sup_distance(&self.0, &other.0)
    }
}

impl Deref for ValueFunction {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for ValueFunction {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// A deterministic stationary policy: one action index per state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Policy(pub Vec<usize>);

impl Policy {
    pub fn action(&self, state: usize) -> usize {
        self.0[state]
    }
}

impl Index<usize> for Policy {
    type Output = usize;
    fn index(&self, s: usize) -> &usize {
        &self.0[s]
    }
}

impl Deref for Policy {
    type Target = [usize];
    fn deref(&self) -> &[usize] {
        &self.0
    }
}

#[derive(Deserialize)]
struct RawMdp {
    num_states: usize,
    num_actions: usize,
    discount: f64,
    rewards: Vec<Vec<f64>>,
    transitions: Vec<Vec<Vec<f64>>>,
    initial_dist: Vec<f64>,
}

/// A finite discounted MDP with known rewards.
///
/// `rewards[s][a]`, `transitions[s][a][s']`; the serialized form uses exactly
/// these field names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMdp")]
pub struct TabularMdp {
    num_states: usize,
    num_actions: usize,
    discount: f64,
    rewards: Vec<Vec<f64>>,
    transitions: Vec<Vec<Vec<f64>>>,
    initial_dist: Vec<f64>,
}

impl TryFrom<RawMdp> for TabularMdp {
    type Error = Error;
    fn try_from(raw: RawMdp) -> Result<Self> {
        let mdp = TabularMdp::new(raw.rewards, raw.transitions, raw.discount, raw.initial_dist)?;
        if mdp.num_states != raw.num_states || mdp.num_actions != raw.num_actions {
            return Err(Error::dim(format!(
                "declared {}x{} but arrays are {}x{}",
                raw.num_states, raw.num_actions, mdp.num_states, mdp.num_actions
            )));
        }
        Ok(mdp)
    }
}

impl TabularMdp {
    pub fn new(
        rewards: Vec<Vec<f64>>,
        transitions: Vec<Vec<Vec<f64>>>,
        discount: f64,
        initial_dist: Vec<f64>,
    ) -> Result<Self> {
        let num_states = rewards.len();
        if num_states == 0 {
            return Err(Error::invalid("an MDP needs at least one state"));
        }
        let num_actions = rewards[0].len();
        if num_actions == 0 {
            return Err(Error::invalid("an MDP needs at least one action"));
        }
        if !(0.0..1.0).contains(&discount) {
            return Err(Error::invalid(format!("discount {discount} must lie in [0, 1)")));
        }
        if rewards.iter().any(|r| r.len() != num_actions) {
            return Err(Error::dim("ragged reward table"));
        }
        if rewards.iter().flatten().any(|r| !r.is_finite()) {
            return Err(Error::invalid("non-finite reward"));
        }
        validate_kernel(&transitions, num_states, num_actions, num_states, SIMPLEX_TOL)?;
        if initial_dist.len() != num_states {
            return Err(Error::dim("initial distribution length"));
        }
        check_simplex(&initial_dist, SIMPLEX_TOL)
            .map_err(|e| Error::invalid(format!("initial distribution: {e}")))?;
        Ok(Self {
            num_states,
            num_actions,
            discount,
            rewards,
            transitions,
            initial_dist,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn rewards(&self) -> &[Vec<f64>] {
        &self.rewards
    }

    pub fn transitions(&self) -> &[Vec<Vec<f64>>] {
        &self.transitions
    }

    pub fn transition(&self, s: usize, a: usize) -> &[f64] {
        &self.transitions[s][a]
    }

    pub fn initial_dist(&self) -> &[f64] {
        &self.initial_dist
    }

    /// Same rewards, discount and initial distribution with a new kernel.
    pub fn with_transitions(&self, transitions: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        Self::new(
            self.rewards.clone(),
            transitions,
            self.discount,
            self.initial_dist.clone(),
        )
    }
}

pub(crate) fn validate_kernel(
    kernel: &[Vec<Vec<f64>>],
    num_states: usize,
    num_actions: usize,
    num_successors: usize,
    tol: f64,
) -> Result<()> {
    if kernel.len() != num_states {
        return Err(Error::dim(format!(
            "kernel has {} states, expected {num_states}",
            kernel.len()
        )));
    }
    for (s, row) in kernel.iter().enumerate() {
        if row.len() != num_actions {
            return Err(Error::dim(format!("kernel state {s} has {} actions", row.len())));
        }
        for (a, p) in row.iter().enumerate() {
            if p.len() != num_successors {
                return Err(Error::dim(format!("kernel ({s},{a}) has length {}", p.len())));
            }
            check_simplex(p, tol).map_err(|e| Error::invalid(format!("kernel ({s},{a}): {e}")))?;
        }
    }
    Ok(())
}

/// One logged transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub s: usize,
    pub a: usize,
    #[serde(rename = "sprime")]
    pub next: usize,
}

/// A multiset of transitions together with per-(s, a) counts.
///
/// `num_successors` equals `num_states` for MDP data; single-decision
/// problems use one state and action with several successor outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    num_states: usize,
    num_actions: usize,
    num_successors: usize,
    samples: Vec<Transition>,
    counts: Vec<Vec<Vec<u64>>>,
}

impl Dataset {
    pub fn new(num_states: usize, num_actions: usize) -> Self {
        Self::with_successors(num_states, num_actions, num_states)
    }

    pub fn with_successors(num_states: usize, num_actions: usize, num_successors: usize) -> Self {
        Self {
            num_states,
            num_actions,
            num_successors,
            samples: Vec::new(),
            counts: vec![vec![vec![0; num_successors]; num_actions]; num_states],
        }
    }

    pub fn from_samples(
        num_states: usize,
        num_actions: usize,
        samples: impl IntoIterator<Item = Transition>,
    ) -> Result<Self> {
        let mut d = Self::new(num_states, num_actions);
        for t in samples {
            d.push(t)?;
        }
        Ok(d)
    }

    pub fn push(&mut self, t: Transition) -> Result<()> {
        if t.s >= self.num_states || t.a >= self.num_actions || t.next >= self.num_successors {
            return Err(Error::dim(format!(
                "transition ({}, {}, {}) outside {}x{}x{}",
                t.s, t.a, t.next, self.num_states, self.num_actions, self.num_successors
            )));
        }
        self.counts[t.s][t.a][t.next] += 1;
        self.samples.push(t);
        Ok(())
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn num_successors(&self) -> usize {
        self.num_successors
    }

    pub fn samples(&self) -> &[Transition] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Successor counts `c[s][a][.]`.
    pub fn counts(&self, s: usize, a: usize) -> &[u64] {
        &self.counts[s][a]
    }

    pub fn all_counts(&self) -> &[Vec<Vec<u64>>] {
        &self.counts
    }

    /// `n[s][a]`, the number of samples leaving `(s, a)`.
    pub fn visits(&self, s: usize, a: usize) -> u64 {
        self.counts[s][a].iter().sum()
    }
}

/// Empirical transition frequencies; unvisited pairs get the uniform vector.
pub fn empirical_model(dataset: &Dataset) -> Vec<Vec<Vec<f64>>> {
    let k = dataset.num_successors();
    (0..dataset.num_states())
        .map(|s| {
            (0..dataset.num_actions())
                .map(|a| empirical_distribution(dataset.counts(s, a), k))
                .collect()
        })
        .collect()
}

pub(crate) fn empirical_distribution(counts: &[u64], k: usize) -> Vec<f64> {
    let n: u64 = counts.iter().sum();
    if n == 0 {
        vec![1.0 / k as f64; k]
    } else {
        counts.iter().map(|&c| c as f64 / n as f64).collect()
    }
}

/// Greedy maximization over actions, ties going to the lowest index.
pub(crate) fn argmax_first(values: impl Iterator<Item = f64>) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

/// One application of the Bellman optimality operator.
pub fn bellman_backup(mdp: &TabularMdp, v: &ValueFunction) -> Result<(ValueFunction, Policy)> {
    if v.len() != mdp.num_states {
        return Err(Error::dim("value function length"));
    }
    let mut out = Vec::with_capacity(mdp.num_states);
    let mut policy = Vec::with_capacity(mdp.num_states);
    for s in 0..mdp.num_states {
        let (a, q) = argmax_first(
            (0..mdp.num_actions)
                .map(|a| mdp.rewards[s][a] + mdp.discount * dot(&mdp.transitions[s][a], v)),
        );
        out.push(q);
        policy.push(a);
    }
    Ok((ValueFunction(out), Policy(policy)))
}

/// Value iteration until the returned value is within `tol` of `v*` in
/// sup-norm. The policy is greedy with respect to the returned value.
pub fn value_iteration(mdp: &TabularMdp, tol: f64) -> Result<(ValueFunction, Policy)> {
    if !(tol > 0.0) {
        return Err(Error::invalid("tolerance must be positive"));
    }
    let threshold = residual_threshold(tol, mdp.discount);
    let mut v = ValueFunction::zeros(mdp.num_states);
    loop {
        let (next, _) = bellman_backup(mdp, &v)?;
        let residual = next.sup_distance(&v);
        v = next;
        if residual <= threshold {
            let (_, greedy) = bellman_backup(mdp, &v)?;
            return Ok((v, greedy));
        }
    }
}

/// Solve a dense square system by Gaussian elimination with partial pivoting.
pub(crate) fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .expect("non-empty range");
        if a[pivot][col].abs() < 1e-14 {
            return Err(Error::invalid("singular linear system"));
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in (col + 1)..n {
            let f = a[row][col] / a[col][col];
            if f != 0.0 {
                for k in col..n {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let tail: f64 = ((row + 1)..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - tail) / a[row][row];
    }
    Ok(x)
}

/// Exact value of a deterministic policy: solves `(I - gamma P_pi) v = r_pi`.
pub fn policy_evaluation(mdp: &TabularMdp, pi: &Policy) -> Result<ValueFunction> {
    let n = mdp.num_states;
    if pi.len() != n {
        return Err(Error::dim("policy length"));
    }
    if pi.iter().any(|&a| a >= mdp.num_actions) {
        return Err(Error::invalid("policy action out of range"));
    }
    let mut a = vec![vec![0.0; n]; n];
    let mut b = vec![0.0; n];
    for s in 0..n {
        let act = pi[s];
        for (sp, &p) in mdp.transitions[s][act].iter().enumerate() {
            a[s][sp] -= mdp.discount * p;
        }
        a[s][s] += 1.0;
        b[s] = mdp.rewards[s][act];
    }
    solve_linear(a, b).map(ValueFunction)
}

/// `p0' v`.
pub fn total_return(v: &ValueFunction, p0: &[f64]) -> Result<f64> {
    if v.len() != p0.len() {
        return Err(Error::dim("initial distribution length"));
    }
    Ok(dot(v, p0))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    pub(crate) fn random_mdp(rng: &mut impl Rng, s: usize, a: usize, gamma: f64) -> TabularMdp {
        let rewards = (0..s)
            .map(|_| (0..a).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let transitions = (0..s)
            .map(|_| {
                (0..a)
                    .map(|_| {
                        let raw: Vec<f64> = (0..s).map(|_| rng.random::<f64>() + 1e-3).collect();
                        let z: f64 = raw.iter().sum();
                        raw.into_iter().map(|x| x / z).collect()
                    })
                    .collect()
            })
            .collect();
        TabularMdp::new(rewards, transitions, gamma, vec![1.0 / s as f64; s]).unwrap()
    }

    fn chain(discount: f64) -> TabularMdp {
        TabularMdp::new(
            vec![vec![1.0], vec![1.0]],
            vec![vec![vec![0.0, 1.0]], vec![vec![1.0, 0.0]]],
            discount,
            vec![0.5, 0.5],
        )
        .unwrap()
    }

    #[test]
    fn empirical_model_matches_counts() {
        let mut d = Dataset::new(3, 1);
        for (next, k) in [(0, 3), (1, 2), (2, 5)] {
            for _ in 0..k {
                d.push(Transition { s: 0, a: 0, next }).unwrap();
            }
        }
        d.push(Transition { s: 1, a: 0, next: 2 }).unwrap();
        let model = empirical_model(&d);
        assert_eq!(model[0][0], vec![0.3, 0.2, 0.5]);
        assert_eq!(model[1][0], vec![0.0, 0.0, 1.0]);
        assert_eq!(model[2][0], vec![1.0 / 3.0; 3]);
        assert_eq!(d.visits(0, 0), 10);
        assert_eq!(d.len(), 11);
    }

    #[test]
    fn dataset_rejects_out_of_range() {
        let mut d = Dataset::new(2, 1);
        assert!(d.push(Transition { s: 0, a: 1, next: 0 }).is_err());
        assert!(d.push(Transition { s: 0, a: 0, next: 2 }).is_err());
    }

    #[test]
    fn mdp_validation() {
        let bad = TabularMdp::new(vec![vec![0.0]], vec![vec![vec![0.9]]], 0.5, vec![1.0]);
        assert!(bad.is_err());
        let bad = TabularMdp::new(vec![vec![0.0]], vec![vec![vec![1.0]]], 1.0, vec![1.0]);
        assert!(bad.is_err());
    }

    #[test]
    fn backup_examples() {
        let mdp = chain(0.9);
        let (v, pi) = bellman_backup(&mdp, &ValueFunction::zeros(2)).unwrap();
        assert_eq!(v.0, vec![1.0, 1.0]);
        assert_eq!(pi.0, vec![0, 0]);

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let myopic = random_mdp(&mut rng, 4, 3, 0.0);
        let (v, _) = bellman_backup(&myopic, &ValueFunction(vec![5.0; 4])).unwrap();
        for s in 0..4 {
            let best = myopic.rewards()[s].iter().cloned().fold(f64::MIN, f64::max);
            assert_eq!(v[s], best);
        }
    }

    #[test]
    fn backup_matches_enumeration() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let mdp = random_mdp(&mut rng, 4, 3, 0.8);
        let v = ValueFunction((0..4).map(|_| rng.random_range(-3.0..3.0)).collect());
        let (out, pi) = bellman_backup(&mdp, &v).unwrap();
        for s in 0..4 {
            let mut best = f64::MIN;
            let mut arg = 0;
            for a in 0..3 {
                let mut q = mdp.rewards()[s][a];
                for sp in 0..4 {
                    q += 0.8 * mdp.transition(s, a)[sp] * v[sp];
                }
                if q > best {
                    best = q;
                    arg = a;
                }
            }
            assert!((out[s] - best).abs() < 1e-12);
            assert_eq!(pi[s], arg);
        }
    }

    #[test]
    fn ties_go_to_lowest_action() {
        let mdp = TabularMdp::new(
            vec![vec![1.0, 1.0, 1.0]],
            vec![vec![vec![1.0], vec![1.0], vec![1.0]]],
            0.5,
            vec![1.0],
        )
        .unwrap();
        let (_, pi) = bellman_backup(&mdp, &ValueFunction::zeros(1)).unwrap();
        assert_eq!(pi.0, vec![0]);
    }

    #[test]
    fn value_iteration_geometric_series() {
        let mdp = TabularMdp::new(vec![vec![1.0]], vec![vec![vec![1.0]]], 0.5, vec![1.0]).unwrap();
        let (v, _) = value_iteration(&mdp, 1e-6).unwrap();
        assert!((v[0] - 2.0).abs() <= 1e-6);

        let myopic =
            TabularMdp::new(vec![vec![3.0, 4.0]], vec![vec![vec![1.0], vec![1.0]]], 0.0, vec![1.0])
                .unwrap();
        let (v, pi) = value_iteration(&myopic, 1e-6).unwrap();
        assert_eq!(v[0], 4.0);
        assert_eq!(pi[0], 1);
    }

    #[test]
    fn policy_evaluation_examples() {
        let mdp = TabularMdp::new(vec![vec![1.0]], vec![vec![vec![1.0]]], 0.9, vec![1.0]).unwrap();
        let v = policy_evaluation(&mdp, &Policy(vec![0])).unwrap();
        assert!((v[0] - 10.0).abs() < 1e-12);

        let zero = TabularMdp::new(
            vec![vec![0.0], vec![0.0]],
            vec![vec![vec![0.5, 0.5]], vec![vec![0.2, 0.8]]],
            0.9,
            vec![0.5, 0.5],
        )
        .unwrap();
        assert_eq!(policy_evaluation(&zero, &Policy(vec![0, 0])).unwrap().0, vec![0.0, 0.0]);
    }

    #[test]
    fn policy_evaluation_matches_iteration() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mdp = random_mdp(&mut rng, 5, 2, 0.9);
        let pi = Policy((0..5).map(|_| rng.random_range(0..2)).collect());
        let exact = policy_evaluation(&mdp, &pi).unwrap();
        // residual of the linear system
        for s in 0..5 {
            let a = pi[s];
            let rhs = mdp.rewards()[s][a] + 0.9 * dot(mdp.transition(s, a), &exact);
            assert!((exact[s] - rhs).abs() < 1e-9);
        }
        let mut v = vec![0.0; 5];
        for _ in 0..2000 {
            v = (0..5)
                .map(|s| mdp.rewards()[s][pi[s]] + 0.9 * dot(mdp.transition(s, pi[s]), &v))
                .collect();
        }
        assert!(sup_distance(&v, &exact) < 1e-8);
    }

    #[test]
    fn value_iteration_agrees_with_policy_evaluation() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let mdp = random_mdp(&mut rng, 6, 3, 0.95);
            let tol = 1e-6;
            let (v, pi) = value_iteration(&mdp, tol).unwrap();
            let exact = policy_evaluation(&mdp, &pi).unwrap();
            assert!(v.sup_distance(&exact) <= 2.0 * tol);
        }
    }

    #[test]
    fn total_return_examples() {
        let v = ValueFunction(vec![1.0, 2.0, 3.0]);
        assert_eq!(total_return(&v, &[0.0, 1.0, 0.0]).unwrap(), 2.0);
        assert!((total_return(&v, &[1.0 / 3.0; 3]).unwrap() - 2.0).abs() < 1e-15);
        assert!(total_return(&v, &[1.0]).is_err());
    }

    #[test]
    fn json_round_trip_and_field_names() {
        let mdp = chain(0.9);
        let text = serde_json::to_string(&mdp).unwrap();
        for field in ["num_states", "num_actions", "discount", "rewards", "transitions", "initial_dist"] {
            assert!(text.contains(field));
        }
        let back: TabularMdp = serde_json::from_str(&text).unwrap();
        assert_eq!(back, mdp);
        let bad = text.replace("\"num_states\":2", "\"num_states\":3");
        assert!(serde_json::from_str::<TabularMdp>(&bad).is_err());
    }

    proptest! {
        #[test]
        fn bellman_is_a_contraction(seed in 0u64..10_000, gamma in 0.0f64..0.99) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mdp = random_mdp(&mut rng, 4, 3, gamma);
            let v = ValueFunction((0..4).map(|_| rng.random_range(-10.0..10.0)).collect());
            let w = ValueFunction((0..4).map(|_| rng.random_range(-10.0..10.0)).collect());
            let (tv, _) = bellman_backup(&mdp, &v).unwrap();
            let (tw, _) = bellman_backup(&mdp, &w).unwrap();
            prop_assert!(tv.sup_distance(&tw) <= gamma * v.sup_distance(&w) + 1e-12);
        }

        #[test]
        fn empirical_rows_on_simplex(counts in proptest::collection::vec(0u64..20, 1..8)) {
            let p = empirical_distribution(&counts, counts.len());
            prop_assert!(check_simplex(&p, SIMPLEX_TOL).is_ok());
        }
    }
}
