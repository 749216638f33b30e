//! Dense two-phase simplex method for small linear programs.
//!
//! Problems are stated as
//!
//! ```text
//! minimize    c'x
//! subject to  a_i'x (<= | = | >=) b_i    for every constraint i
//!             x >= 0
//! ```
//!
//! The solver keeps a full tableau, so it is meant for the few-hundred-variable
//! programs that arise from per-(state, action) ambiguity set construction.
//! Pricing uses Dantzig's rule and switches to Bland's rule after a run of
//! degenerate pivots, which rules out cycling.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LpError {
    #[error("infeasible (phase one residual {0:e})")]
    Infeasible(f64),
    #[error("unbounded")]
    Unbounded,
    #[error("iteration limit of {0} pivots reached")]
    IterationLimit(usize),
    #[error("malformed problem: {0}")]
    Malformed(String),
    #[error("numerically unreliable solution (constraint violation {0:e})")]
    Numerical(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone)]
struct Row {
    coeffs: Vec<(usize, f64)>,
    relation: Relation,
    rhs: f64,
}

/// A minimization problem over nonnegative variables.
#[derive(Debug, Clone)]
pub struct LinearProgram {
    num_vars: usize,
    objective: Vec<f64>,
    rows: Vec<Row>,
    max_pivots: usize,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub pivots: usize,
}

const PIVOT_TOL: f64 = 1e-10;
const COST_TOL: f64 = 1e-11;
const FEAS_TOL: f64 = 1e-8;
const DEGENERATE_STREAK: usize = 30;
const VERIFY_TOL: f64 = 1e-7;
const UNBOUNDED_TOL: f64 = 1e-7;
const HARRIS_TOL: f64 = 1e-10;

impl LinearProgram {
    pub fn new(num_vars: usize) -> Self {
        Self {
            num_vars,
            objective: vec![0.0; num_vars],
            rows: Vec::new(),
            max_pivots: 200_000,
        }
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn num_constraints(&self) -> usize {
        self.rows.len()
    }

    pub fn set_objective(&mut self, var: usize, coeff: f64) {
        self.objective[var] = coeff;
    }

    pub fn set_max_pivots(&mut self, max_pivots: usize) {
        self.max_pivots = max_pivots;
    }

    /// Add a sparse constraint. Repeated indices are summed.
    pub fn add_constraint(&mut self, coeffs: Vec<(usize, f64)>, relation: Relation, rhs: f64) {
        self.rows.push(Row {
            coeffs,
            relation,
            rhs,
        });
    }

    /// Add a constraint from a dense coefficient vector.
    pub fn add_dense(&mut self, coeffs: &[f64], relation: Relation, rhs: f64) {
        let sparse = coeffs
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != 0.0)
            .map(|(j, c)| (j, *c))
            .collect();
        self.add_constraint(sparse, relation, rhs);
    }

    /// Largest violation of any constraint at `x`, relative to the row's
    /// magnitude at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        self.rows
            .iter()
            .map(|row| {
                let (lhs, size) = row
                    .coeffs
                    .iter()
                    .fold((0.0, row.rhs.abs()), |(l, m), &(j, c)| (l + c * x[j], m + (c * x[j]).abs()));
                let gap = match row.relation {
                    Relation::Le => lhs - row.rhs,
                    Relation::Ge => row.rhs - lhs,
                    Relation::Eq => (lhs - row.rhs).abs(),
                };
                gap.max(0.0) / (1.0 + size)
            })
            .fold(0.0, f64::max)
    }

    pub fn solve(&self) -> Result<LpSolution, LpError> {
        for (i, row) in self.rows.iter().enumerate() {
            if !row.rhs.is_finite() {
                return Err(LpError::Malformed(format!("row {i} has non-finite rhs")));
            }
            for &(j, c) in &row.coeffs {
                if j >= self.num_vars {
                    return Err(LpError::Malformed(format!(
                        "row {i} references variable {j} of {}",
                        self.num_vars
                    )));
                }
                if !c.is_finite() {
                    return Err(LpError::Malformed(format!("row {i} has non-finite coefficient")));
                }
            }
        }
        if self.objective.iter().any(|c| !c.is_finite()) {
            return Err(LpError::Malformed("non-finite objective".into()));
        }
        Tableau::build(self).run(self)
    }
}

/// Column layout: [structural | slack/surplus | artificial | rhs].
struct Tableau {
    m: usize,
    width: usize,
    n_struct: usize,
    n_real: usize,
    data: Vec<f64>,
    basis: Vec<usize>,
    pivots: usize,
}

impl Tableau {
    fn build(lp: &LinearProgram) -> Self {
        let m = lp.rows.len();
        let n_struct = lp.num_vars;
        let n_slack = lp
            .rows
            .iter()
            .filter(|r| r.relation != Relation::Eq)
            .count();
        let n_art = lp
            .rows
            .iter()
            .filter(|r| {
                let flip = r.rhs < 0.0;
                matches!(
                    (r.relation, flip),
                    (Relation::Eq, _) | (Relation::Ge, false) | (Relation::Le, true)
                )
            })
            .count();
        let n_real = n_struct + n_slack;
        let width = n_real + n_art + 1;
        let mut data = vec![0.0; m * width];
        let mut basis = vec![0; m];
        let mut next_slack = n_struct;
        let mut next_art = n_real;
        for (i, row) in lp.rows.iter().enumerate() {
            let sign = if row.rhs < 0.0 { -1.0 } else { 1.0 };
            let line = &mut data[i * width..(i + 1) * width];
            for &(j, c) in &row.coeffs {
                line[j] += sign * c;
            }
            // equilibrate: largest coefficient of every row becomes 1
            let largest = line[..n_struct].iter().fold(0.0f64, |m, c| m.max(c.abs()));
            let scale = if largest > 0.0 { 1.0 / largest } else { 1.0 };
            line[..n_struct].iter_mut().for_each(|c| *c *= scale);
            line[width - 1] = sign * row.rhs * scale;
            let relation = match (row.relation, sign < 0.0) {
                (Relation::Le, true) => Relation::Ge,
                (Relation::Ge, true) => Relation::Le,
                (r, _) => r,
            };
            match relation {
                Relation::Le => {
                    line[next_slack] = 1.0;
                    basis[i] = next_slack;
                    next_slack += 1;
                }
                Relation::Ge => {
                    line[next_slack] = -1.0;
                    next_slack += 1;
                    line[next_art] = 1.0;
                    basis[i] = next_art;
                    next_art += 1;
                }
                Relation::Eq => {
                    line[next_art] = 1.0;
                    basis[i] = next_art;
                    next_art += 1;
                }
            }
        }
        Self {
            m,
            width,
            n_struct,
            n_real,
            data,
            basis,
            pivots: 0,
        }
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.width + j]
    }

    fn rhs(&self, i: usize) -> f64 {
        self.at(i, self.width - 1)
    }

    fn pivot(&mut self, p: usize, q: usize) {
        let w = self.width;
        let inv = 1.0 / self.at(p, q);
        for v in &mut self.data[p * w..(p + 1) * w] {
            *v *= inv;
        }
        self.data[p * w + q] = 1.0;
        let (before, rest) = self.data.split_at_mut(p * w);
        let (prow, after) = rest.split_at_mut(w);
        let eliminate = |line: &mut [f64]| {
            let f = line[q];
            if f != 0.0 {
                for (a, b) in line.iter_mut().zip(prow.iter()) {
                    *a -= f * b;
                }
                line[q] = 0.0;
            }
        };
        before.chunks_mut(w).for_each(eliminate);
        after.chunks_mut(w).for_each(eliminate);
        self.basis[p] = q;
        self.pivots += 1;
    }

    /// Reduced costs of columns `0..limit` for the cost vector `cost`.
    fn reduced_costs(&self, cost: &[f64], limit: usize) -> Vec<f64> {
        let mut d: Vec<f64> = cost[..limit].to_vec();
        for i in 0..self.m {
            let cb = cost[self.basis[i]];
            if cb != 0.0 {
                let line = &self.data[i * self.width..i * self.width + limit];
                for (dj, a) in d.iter_mut().zip(line) {
                    *dj -= cb * a;
                }
            }
        }
        d
    }

    /// Smallest ratio, ties broken by the lowest basic index.
    fn ratio_test_bland(&self, q: usize) -> Option<(usize, f64)> {
        let mut leave: Option<(usize, f64)> = None;
        for i in 0..self.m {
            let a = self.at(i, q);
            if a > PIVOT_TOL {
                let ratio = self.rhs(i).max(0.0) / a;
                leave = match leave {
                    Some((r, best))
                        if !(ratio < best - 1e-12
                            || (ratio <= best + 1e-12 && self.basis[i] < self.basis[r])) =>
                    {
                        Some((r, best))
                    }
                    _ => Some((i, ratio)),
                };
            }
        }
        leave
    }

    /// Harris two-pass test: among rows whose ratio is within the relaxed
    /// bound, take the one with the largest pivot entry.
    fn ratio_test_harris(&self, q: usize) -> Option<(usize, f64)> {
        let mut bound = f64::INFINITY;
        for i in 0..self.m {
            let a = self.at(i, q);
            if a > PIVOT_TOL {
                bound = bound.min((self.rhs(i).max(0.0) + HARRIS_TOL) / a);
            }
        }
        let mut leave: Option<(usize, f64, f64)> = None;
        for i in 0..self.m {
            let a = self.at(i, q);
            if a > PIVOT_TOL {
                let ratio = self.rhs(i).max(0.0) / a;
                if ratio <= bound && leave.is_none_or(|(_, _, best)| a > best) {
                    leave = Some((i, ratio, a));
                }
            }
        }
        leave.map(|(i, ratio, _)| (i, ratio))
    }

    /// Minimize `cost` over columns `0..limit`, starting from the current basis.
    fn optimize(&mut self, cost: &[f64], limit: usize, max_pivots: usize) -> Result<(), LpError> {
        let mut d = self.reduced_costs(cost, limit);
        let mut degenerate = 0usize;
        // columns without a usable pivot entry, skipped until the next pivot
        let mut blocked = vec![false; limit];
        loop {
            if self.pivots >= max_pivots {
                return Err(LpError::IterationLimit(max_pivots));
            }
            let bland = degenerate >= DEGENERATE_STREAK;
            let candidates = (0..limit).filter(|&j| !blocked[j] && d[j] < -COST_TOL);
            let entering = if bland {
                candidates.min()
            } else {
                candidates.min_by(|&a, &b| d[a].total_cmp(&d[b]))
            };
            let Some(q) = entering else {
                if (0..limit).any(|j| blocked[j] && d[j] < -UNBOUNDED_TOL) {
                    return Err(LpError::Unbounded);
                }
                return Ok(());
            };
            let leave = if bland {
                self.ratio_test_bland(q)
            } else {
                self.ratio_test_harris(q)
            };
            let Some((p, ratio)) = leave else {
                // a ray, or drift in the reduced costs: recompute before judging
                d = self.reduced_costs(cost, limit);
                blocked[q] = true;
                continue;
            };
            if ratio <= 1e-14 {
                degenerate += 1;
            } else {
                degenerate = 0;
            }
            // update reduced costs in place: d -= d_q * (pivot row / a_pq)
            let dq = d[q];
            self.pivot(p, q);
            let row = &self.data[p * self.width..p * self.width + limit];
            for (dj, a) in d.iter_mut().zip(row) {
                *dj -= dq * a;
            }
            d[q] = 0.0;
            blocked.iter_mut().for_each(|b| *b = false);
            if self.pivots.is_multiple_of(64) {
                d = self.reduced_costs(cost, limit);
            }
        }
    }

    fn run(mut self, lp: &LinearProgram) -> Result<LpSolution, LpError> {
        let total = self.width - 1;
        if self.basis.iter().any(|&b| b >= self.n_real) {
            let mut phase1 = vec![0.0; total];
            for c in &mut phase1[self.n_real..] {
                *c = 1.0;
            }
            self.optimize(&phase1, total, lp.max_pivots)?;
            let residual: f64 = (0..self.m)
                .filter(|&i| self.basis[i] >= self.n_real)
                .map(|i| self.rhs(i))
                .sum();
            let scale = 1.0 + (0..self.m).map(|i| self.rhs(i).abs()).fold(0.0, f64::max);
            if residual > FEAS_TOL * scale {
                return Err(LpError::Infeasible(residual));
            }
            // Drive remaining (zero-level) artificials out of the basis.
            for i in 0..self.m {
                if self.basis[i] >= self.n_real {
                    let col = (0..self.n_real)
                        .filter(|&j| self.at(i, j).abs() > 1e-9)
                        .max_by(|&a, &b| self.at(i, a).abs().total_cmp(&self.at(i, b).abs()));
                    if let Some(j) = col {
                        self.pivot(i, j);
                    }
                    // otherwise the row is redundant; the artificial stays basic at zero
                }
            }
        }
        let mut cost = vec![0.0; total];
        cost[..self.n_struct].copy_from_slice(&lp.objective);
        self.optimize(&cost, self.n_real, lp.max_pivots)?;

        let mut x = vec![0.0; self.n_struct];
        for i in 0..self.m {
            let b = self.basis[i];
            if b < self.n_struct {
                x[b] = self.rhs(i).max(0.0);
            }
        }
        let violation = lp.max_violation(&x);
        if violation > VERIFY_TOL {
            return Err(LpError::Numerical(violation));
        }
        let objective = lp.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
        Ok(LpSolution {
            x,
            objective,
            pivots: self.pivots,
        })
    }
}
