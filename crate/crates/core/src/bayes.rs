//! Posterior draws of transition vectors and Bayesian credible L1 balls.

use std::path::Path;

use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::freq::ConfidenceBudget;
use crate::mdp::{check_simplex, Dataset};
use crate::robust::{AmbiguitySet, MAX_RADIUS};
use crate::seed;

/// Row tolerance for samples produced inside the crate.
pub const SAMPLE_TOL: f64 = 1e-10;

/// Row tolerance for samples read from an external sampler.
pub const INGEST_TOL: f64 = 1e-6;

/// `m` posterior draws of every transition vector, indexed `[s][a][i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSamples {
    num_successors: usize,
    draws: Vec<Vec<Vec<Vec<f64>>>>,
}

impl PosteriorSamples {
    pub fn new(draws: Vec<Vec<Vec<Vec<f64>>>>) -> Result<Self> {
        Self::validated(draws, SAMPLE_TOL)
    }

    pub(crate) fn validated(draws: Vec<Vec<Vec<Vec<f64>>>>, tol: f64) -> Result<Self> {
        let num_actions = draws.first().map_or(0, Vec::len);
        if num_actions == 0 {
            return Err(Error::invalid("posterior samples need at least one pair"));
        }
        let m = draws[0][0].len();
        let k = draws[0][0].first().map_or(0, Vec::len);
        if m == 0 || k == 0 {
            return Err(Error::invalid("posterior samples need m >= 1 nonempty rows"));
        }
        for (s, row) in draws.iter().enumerate() {
            if row.len() != num_actions {
                return Err(Error::dim(format!("state {s} has {} actions", row.len())));
            }
            for (a, pair) in row.iter().enumerate() {
                if pair.len() != m {
                    return Err(Error::dim(format!(
                        "pair ({s},{a}) has {} samples, expected {m}",
                        pair.len()
                    )));
                }
                for (i, p) in pair.iter().enumerate() {
                    if p.len() != k {
                        return Err(Error::dim(format!("sample {i} of ({s},{a}) has length {}", p.len())));
                    }
                    check_simplex(p, tol)
                        .map_err(|e| Error::invalid(format!("sample {i} of ({s},{a}): {e}")))?;
                }
            }
        }
        Ok(Self {
            num_successors: k,
            draws,
        })
    }

    /// `m` copies of a fixed kernel.
    pub fn point_mass(kernel: &[Vec<Vec<f64>>], m: usize) -> Result<Self> {
        Self::new(
            kernel
                .iter()
                .map(|row| row.iter().map(|p| vec![p.clone(); m]).collect())
                .collect(),
        )
    }

    /// Regroup whole-kernel draws `kernels[i][s][a]` by pair.
    pub fn from_kernel_draws(kernels: &[Vec<Vec<Vec<f64>>>]) -> Result<Self> {
        let first = kernels
            .first()
            .ok_or_else(|| Error::invalid("no kernel draws"))?;
        let mut draws: Vec<Vec<Vec<Vec<f64>>>> = first
            .iter()
            .map(|row| row.iter().map(|_| Vec::with_capacity(kernels.len())).collect())
            .collect();
        for kernel in kernels {
            if kernel.len() != first.len() {
                return Err(Error::dim("kernel draws disagree on the state count"));
            }
            for (s, row) in kernel.iter().enumerate() {
                if row.len() != draws[s].len() {
                    return Err(Error::dim("kernel draws disagree on the action count"));
                }
                for (a, p) in row.iter().enumerate() {
                    draws[s][a].push(p.clone());
                }
            }
        }
        Self::new(draws)
    }

    pub fn num_states(&self) -> usize {
        self.draws.len()
    }

    pub fn num_actions(&self) -> usize {
        self.draws[0].len()
    }

    pub fn num_successors(&self) -> usize {
        self.num_successors
    }

    /// Draws per pair.
    pub fn m(&self) -> usize {
        self.draws[0][0].len()
    }

    pub fn pair(&self, s: usize, a: usize) -> &[Vec<f64>] {
        &self.draws[s][a]
    }
}

/// Independent Dirichlet posteriors, one per pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirichletPosterior {
    alpha: Vec<Vec<Vec<f64>>>,
}

impl DirichletPosterior {
    pub fn new(alpha: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        if alpha.is_empty() || alpha[0].is_empty() {
            return Err(Error::invalid("concentration array is empty"));
        }
        let k = alpha[0][0].len();
        for row in &alpha {
            if row.len() != alpha[0].len() {
                return Err(Error::dim("concentration rows disagree on the action count"));
            }
            for a in row {
                if a.len() != k || k == 0 {
                    return Err(Error::dim("concentration vectors disagree in length"));
                }
                if a.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
                    return Err(Error::invalid("concentration parameters must be positive"));
                }
            }
        }
        Ok(Self { alpha })
    }

    /// The same `alpha` vector for every pair.
    pub fn symmetric(num_states: usize, num_actions: usize, alpha: &[f64]) -> Result<Self> {
        Self::new(vec![vec![alpha.to_vec(); num_actions]; num_states])
    }

    pub fn alpha(&self, s: usize, a: usize) -> &[f64] {
        &self.alpha[s][a]
    }

    pub fn num_states(&self) -> usize {
        self.alpha.len()
    }

    pub fn num_actions(&self) -> usize {
        self.alpha[0].len()
    }

    pub fn num_successors(&self) -> usize {
        self.alpha[0][0].len()
    }

    /// Analytic posterior means `alpha / sum(alpha)`.
    pub fn mean(&self) -> Vec<Vec<Vec<f64>>> {
        self.alpha
            .iter()
            .map(|row| {
                row.iter()
                    .map(|a| {
                        let z: f64 = a.iter().sum();
                        a.iter().map(|x| x / z).collect()
                    })
                    .collect()
            })
            .collect()
    }
}

/// Conjugate update `alpha' = alpha + counts`.
pub fn dirichlet_posterior(prior: &DirichletPosterior, data: &Dataset) -> Result<DirichletPosterior> {
    if prior.num_states() != data.num_states()
        || prior.num_actions() != data.num_actions()
        || prior.num_successors() != data.num_successors()
    {
        return Err(Error::dim("prior and dataset shapes differ"));
    }
    let mut alpha = prior.alpha.clone();
    for (s, row) in alpha.iter_mut().enumerate() {
        for (a, vec) in row.iter_mut().enumerate() {
            for (x, &c) in vec.iter_mut().zip(data.counts(s, a)) {
                *x += c as f64;
            }
        }
    }
    DirichletPosterior::new(alpha)
}

/// One Dirichlet draw as normalized Gamma variates.
pub fn sample_dirichlet(rng: &mut seed::Rng, alpha: &[f64]) -> Vec<f64> {
    loop {
        let mut x: Vec<f64> = alpha
            .iter()
            .map(|&a| Gamma::new(a, 1.0).expect("positive shape").sample(rng))
            .collect();
        let z: f64 = x.iter().sum();
        if z > 0.0 && z.is_finite() {
            x.iter_mut().for_each(|v| *v /= z);
            return x;
        }
    }
}

/// `m` draws per pair; pair `(s, a)` uses its own stream derived from
/// `(seed, s, a)`, so results do not depend on scheduling.
pub fn sample_posterior(posterior: &DirichletPosterior, m: usize, seed: u64) -> Result<PosteriorSamples> {
    if m == 0 {
        return Err(Error::invalid("need at least one posterior draw"));
    }
    let (ns, na) = (posterior.num_states(), posterior.num_actions());
    let draws = (0..ns)
        .into_par_iter()
        .map(|s| {
            (0..na)
                .map(|a| {
                    let mut rng = seed::rng(seed::derive(seed, &[s as u64, a as u64]));
                    (0..m).map(|_| sample_dirichlet(&mut rng, posterior.alpha(s, a))).collect()
                })
                .collect()
        })
        .collect();
    PosteriorSamples::new(draws)
}

fn mean_row(rows: &[Vec<f64>]) -> Vec<f64> {
    let mut mean = vec![0.0; rows[0].len()];
    for r in rows {
        for (m, x) in mean.iter_mut().zip(r) {
            *m += x;
        }
    }
    let m = rows.len() as f64;
    mean.iter_mut().for_each(|x| *x /= m);
    mean
}

/// Coordinatewise sample mean of every pair.
pub fn posterior_mean(samples: &PosteriorSamples) -> Vec<Vec<Vec<f64>>> {
    samples
        .draws
        .iter()
        .map(|row| row.iter().map(|pair| mean_row(pair)).collect())
        .collect()
}

pub(crate) fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Number of draws allowed outside a set of confidence `1 - delta`, i.e.
/// `floor(delta * m)`, guarded against representation error in the product.
pub(crate) fn tail_count(m: usize, delta: f64) -> usize {
    ((delta * m as f64 + 1e-9).floor() as usize).min(m - 1)
}

/// Sample mean and the smallest L1 radius around it that covers
/// `ceil((1 - delta_sa) m)` of the draws.
pub fn bci_radius(rows: &[Vec<f64>], delta_sa: f64) -> Result<(Vec<f64>, f64)> {
    if rows.is_empty() {
        return Err(Error::invalid("no posterior draws"));
    }
    if !(delta_sa > 0.0 && delta_sa < 1.0) {
        return Err(Error::invalid(format!("delta {delta_sa} must lie in (0, 1)")));
    }
    let p_bar = mean_row(rows);
    let mut d: Vec<f64> = rows.iter().map(|r| l1(&p_bar, r)).collect();
    d.sort_by(f64::total_cmp);
    let index = rows.len() - tail_count(rows.len(), delta_sa);
    Ok((p_bar, d[index - 1].clamp(0.0, MAX_RADIUS)))
}

/// Credible balls for every pair with the per-pair budget `delta / (S A)`.
pub fn bci_ambiguity_set(samples: &PosteriorSamples, budget: &ConfidenceBudget) -> Result<AmbiguitySet> {
    let delta_sa = budget.per_pair();
    let mut nominal = Vec::with_capacity(samples.num_states());
    let mut psi = Vec::with_capacity(samples.num_states());
    for row in &samples.draws {
        let (mut pn, mut pr) = (Vec::new(), Vec::new());
        for pair in row {
            let (center, radius) = bci_radius(pair, delta_sa)?;
            pn.push(center);
            pr.push(radius);
        }
        nominal.push(pn);
        psi.push(pr);
    }
    AmbiguitySet::new(nominal, psi, None)
}

/// Load draws written as CSV `s,a,sample_index,p0,p1,...`.
pub fn ingest_posterior_samples(path: impl AsRef<Path>) -> Result<PosteriorSamples> {
    crate::io::read_posterior_samples(path)
}
