//! LP and grid oracles built on an independent solver.
#![allow(dead_code)]

use minilp::{ComparisonOp, OptimizationDirection, Problem};
use rand::Rng;

use safe_rmdp::rsvf::{center_objective, SafetyHalfspace};

pub fn simplex(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let sparse = rng.random_bool(0.3);
    let mut x: Vec<f64> = (0..n)
        .map(|_| if sparse && rng.random_bool(0.4) { 0.0 } else { -rng.random::<f64>().max(1e-300).ln() })
        .collect();
    if x.iter().all(|&w| w == 0.0) {
        x[rng.random_range(0..n)] = 1.0;
    }
    let z: f64 = x.iter().sum();
    x.iter_mut().for_each(|w| *w /= z);
    x
}

pub fn values(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    if rng.random_bool(0.25) {
        (0..n).map(|_| rng.random_range(0..4) as f64).collect()
    } else {
        (0..n).map(|_| rng.random_range(-5.0..5.0)).collect()
    }
}

/// `min p'v` over the L1 ball around `p_bar` intersected with the simplex.
pub fn lp_worst_case(v: &[f64], p_bar: &[f64], psi: f64) -> f64 {
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let p: Vec<_> = v.iter().map(|&vi| lp.add_var(vi, (0.0, 1.0))).collect();
    let e: Vec<_> = v.iter().map(|_| lp.add_var(0.0, (0.0, f64::INFINITY))).collect();
    for i in 0..v.len() {
        lp.add_constraint([(e[i], 1.0), (p[i], -1.0)], ComparisonOp::Ge, -p_bar[i]);
        lp.add_constraint([(e[i], 1.0), (p[i], 1.0)], ComparisonOp::Ge, p_bar[i]);
    }
    lp.add_constraint(e.iter().map(|&x| (x, 1.0)).collect::<Vec<_>>(), ComparisonOp::Le, psi);
    lp.add_constraint(p.iter().map(|&x| (x, 1.0)).collect::<Vec<_>>(), ComparisonOp::Eq, 1.0);
    lp.solve().expect("feasible").objective()
}

/// Adds `q` in the half-space and `e >= |q - center|` for LP variables
/// `center`, returning the `e` variables.
fn add_projection(
    lp: &mut Problem,
    center: &[minilp::Variable],
    h: &SafetyHalfspace,
    e_cost: f64,
) -> Vec<minilp::Variable> {
    let q: Vec<_> = center.iter().map(|_| lp.add_var(0.0, (0.0, 1.0))).collect();
    let e: Vec<_> = center.iter().map(|_| lp.add_var(e_cost, (0.0, f64::INFINITY))).collect();
    for i in 0..center.len() {
        lp.add_constraint([(e[i], 1.0), (q[i], -1.0), (center[i], 1.0)], ComparisonOp::Ge, 0.0);
        lp.add_constraint([(e[i], 1.0), (q[i], 1.0), (center[i], -1.0)], ComparisonOp::Ge, 0.0);
    }
    lp.add_constraint(q.iter().map(|&x| (x, 1.0)).collect::<Vec<_>>(), ComparisonOp::Eq, 1.0);
    lp.add_constraint(q.iter().zip(&h.v).map(|(&x, &vi)| (x, vi)).collect::<Vec<_>>(), ComparisonOp::Le, h.g);
    e
}

/// L1 distance from a fixed `p` to the half-space.
pub fn lp_distance(p: &[f64], h: &SafetyHalfspace) -> f64 {
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let center: Vec<_> = p.iter().map(|&pi| lp.add_var(0.0, (pi, pi))).collect();
    add_projection(&mut lp, &center, h, 1.0);
    lp.solve().expect("feasible").objective()
}

/// `min_theta max_h dist(theta, K_h)` with one projection per half-space.
pub fn lp_minimax(halfspaces: &[SafetyHalfspace]) -> f64 {
    let n = halfspaces[0].v.len();
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let theta: Vec<_> = (0..n).map(|_| lp.add_var(0.0, (0.0, 1.0))).collect();
    let psi = lp.add_var(1.0, (0.0, f64::INFINITY));
    lp.add_constraint(theta.iter().map(|&x| (x, 1.0)).collect::<Vec<_>>(), ComparisonOp::Eq, 1.0);
    for h in halfspaces {
        let e = add_projection(&mut lp, &theta, h, 0.0);
        let mut row: Vec<_> = e.iter().map(|&x| (x, 1.0)).collect();
        row.push((psi, -1.0));
        lp.add_constraint(row, ComparisonOp::Le, 0.0);
    }
    lp.solve().expect("feasible").objective()
}

pub fn grid_minimum(halfspaces: &[SafetyHalfspace]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..=100 {
        for j in 0..=100 - i {
            let p = [i as f64 / 100.0, j as f64 / 100.0, (100 - i - j) as f64 / 100.0];
            best = best.min(center_objective(&p, halfspaces).unwrap());
        }
    }
    best
}

pub fn random_halfspace(rng: &mut impl Rng, n: usize) -> SafetyHalfspace {
    let v = values(rng, n);
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let g = if rng.random_bool(0.1) { lo } else { rng.random_range(lo..=hi) };
    SafetyHalfspace::new(v, g, 0, 0).unwrap()
}
