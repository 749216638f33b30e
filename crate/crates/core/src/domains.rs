//! Benchmark problems: the single-state evaluation of one Bellman update,
//! RiverSwim, an exponential population model, and random Dirichlet MDPs.
//!
//! Each domain knows how to draw a ground truth, simulate a dataset from it
//! and sample the posterior over transition vectors given that dataset.

use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bayes::{dirichlet_posterior, sample_dirichlet, sample_posterior, DirichletPosterior, PosteriorSamples};
use crate::error::{Error, Result};
use crate::mdp::{Dataset, TabularMdp, Transition};
use crate::seed;

/// Terminal values of the single-state problems.
pub const SINGLE_STATE_VALUES: [f64; 5] = [1.0, 2.0, 3.0, 4.0, 5.0];

fn weighted(rng: &mut seed::Rng, p: &[f64]) -> Result<usize> {
    let dist = WeightedIndex::new(p).map_err(|e| Error::invalid(format!("bad distribution: {e}")))?;
    Ok(dist.sample(rng))
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Demand `D ~ N(mu, sigma)` with `mu ~ N(mu0, sigma0)`; after one period
/// the stock `stock - D` is rounded to one of `1..=levels`, with the end
/// levels absorbing the tails.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InventoryPrior {
    pub mu0: f64,
    pub sigma0: f64,
    pub sigma: f64,
    pub stock: f64,
}

impl Default for InventoryPrior {
    fn default() -> Self {
        Self {
            mu0: 3.0,
            sigma0: 1.0,
            sigma: 1.0,
            stock: 5.0,
        }
    }
}

impl InventoryPrior {
    fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma0 > 0.0) {
            return Err(Error::invalid("inventory noise scales must be positive"));
        }
        Ok(())
    }

    /// Distribution of the next level (index `i` is level `i + 1`).
    pub fn level_distribution(&self, mu: f64, levels: usize) -> Vec<f64> {
        // level i <=> D in (stock - i - 0.5, stock - i + 0.5]
        let upper = |i: usize| -> f64 {
            if i == 1 {
                1.0
            } else if i > levels {
                0.0
            } else {
                normal_cdf((self.stock - i as f64 + 0.5 - mu) / self.sigma)
            }
        };
        (1..=levels).map(|i| upper(i) - upper(i + 1)).collect()
    }

    /// Index of the level reached after demand `d`.
    pub fn level_of(&self, d: f64, levels: usize) -> usize {
        let level = (self.stock - d + 0.5).floor().clamp(1.0, levels as f64);
        level as usize - 1
    }

    /// Conjugate posterior `(mean, std)` of `mu` given observed demands.
    pub fn posterior(&self, demands: &[f64]) -> (f64, f64) {
        let prior_prec = 1.0 / (self.sigma0 * self.sigma0);
        let noise_prec = 1.0 / (self.sigma * self.sigma);
        let prec = prior_prec + demands.len() as f64 * noise_prec;
        let total: f64 = demands.iter().sum();
        let mean = (prior_prec * self.mu0 + noise_prec * total) / prec;
        (mean, prec.sqrt().recip())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SingleStatePrior {
    Dirichlet { alpha: Vec<f64> },
    Inventory(InventoryPrior),
}

/// One state, one action, `values.len()` terminal successors with fixed
/// values; only the transition vector is uncertain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleStateProblem {
    pub values: Vec<f64>,
    pub prior: SingleStatePrior,
}

/// Ground truth of a single-state problem.
#[derive(Debug, Clone, PartialEq)]
pub struct SingleStateTruth {
    pub probs: Vec<f64>,
    pub mu: Option<f64>,
}

/// Observed successor counts, plus raw demands for the inventory variant.
#[derive(Debug, Clone, PartialEq)]
pub struct SingleStateData {
    pub counts: Vec<u64>,
    pub demands: Vec<f64>,
}

impl SingleStateData {
    pub fn len(&self) -> usize {
        self.counts.iter().sum::<u64>() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn make_single_state_dirichlet() -> SingleStateProblem {
    SingleStateProblem {
        values: SINGLE_STATE_VALUES.to_vec(),
        prior: SingleStatePrior::Dirichlet {
            alpha: vec![1.0; SINGLE_STATE_VALUES.len()],
        },
    }
}

pub fn make_single_state_inventory() -> SingleStateProblem {
    SingleStateProblem {
        values: SINGLE_STATE_VALUES.to_vec(),
        prior: SingleStatePrior::Inventory(InventoryPrior::default()),
    }
}

impl SingleStateProblem {
    pub fn validate(&self) -> Result<()> {
        if self.values.len() < 2 {
            return Err(Error::invalid("need at least two outcomes"));
        }
        match &self.prior {
            SingleStatePrior::Dirichlet { alpha } => {
                if alpha.len() != self.values.len() || alpha.iter().any(|&a| !(a > 0.0)) {
                    return Err(Error::invalid("Dirichlet prior must be positive, one entry per outcome"));
                }
                Ok(())
            }
            SingleStatePrior::Inventory(inv) => inv.validate(),
        }
    }

    pub fn num_outcomes(&self) -> usize {
        self.values.len()
    }

    pub fn sample_truth(&self, rng: &mut seed::Rng) -> SingleStateTruth {
        match &self.prior {
            SingleStatePrior::Dirichlet { alpha } => SingleStateTruth {
                probs: sample_dirichlet(rng, alpha),
                mu: None,
            },
            SingleStatePrior::Inventory(inv) => {
                let z: f64 = rng.sample(StandardNormal);
                let mu = inv.mu0 + inv.sigma0 * z;
                SingleStateTruth {
                    probs: inv.level_distribution(mu, self.num_outcomes()),
                    mu: Some(mu),
                }
            }
        }
    }

    pub fn simulate(&self, truth: &SingleStateTruth, n: usize, rng: &mut seed::Rng) -> Result<SingleStateData> {
        let k = self.num_outcomes();
        let mut counts = vec![0u64; k];
        let mut demands = Vec::new();
        match (&self.prior, truth.mu) {
            (SingleStatePrior::Inventory(inv), Some(mu)) => {
                let noise = Normal::new(mu, inv.sigma).map_err(|e| Error::invalid(e.to_string()))?;
                for _ in 0..n {
                    let d = noise.sample(rng);
                    counts[inv.level_of(d, k)] += 1;
                    demands.push(d);
                }
            }
            (SingleStatePrior::Inventory(_), None) => {
                return Err(Error::invalid("inventory truth needs a demand mean"));
            }
            (SingleStatePrior::Dirichlet { .. }, _) => {
                for _ in 0..n {
                    counts[weighted(rng, &truth.probs)?] += 1;
                }
            }
        }
        Ok(SingleStateData { counts, demands })
    }

    /// `m` posterior draws of the outcome distribution.
    pub fn posterior_samples(&self, data: &SingleStateData, m: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        let k = self.num_outcomes();
        match &self.prior {
            SingleStatePrior::Dirichlet { alpha } => {
                let mut d = Dataset::with_successors(1, 1, k);
                for (next, &c) in data.counts.iter().enumerate() {
                    for _ in 0..c {
                        d.push(Transition { s: 0, a: 0, next })?;
                    }
                }
                let prior = DirichletPosterior::symmetric(1, 1, alpha)?;
                let samples = sample_posterior(&dirichlet_posterior(&prior, &d)?, m, seed)?;
                Ok(samples.pair(0, 0).to_vec())
            }
            SingleStatePrior::Inventory(inv) => {
                let (mean, std) = inv.posterior(&data.demands);
                let mut rng = seed::rng(seed);
                Ok((0..m)
                    .map(|_| {
                        let z: f64 = rng.sample(StandardNormal);
                        inv.level_distribution(mean + std * z, k)
                    })
                    .collect())
            }
        }
    }

    /// Posterior mean of the outcome distribution, from the draws.
    pub fn expected_return(&self, probs: &[f64]) -> f64 {
        crate::mdp::dot(probs, &self.values)
    }
}

/// Six-state chain: swimming right fights the current, swimming left always
/// succeeds. Action 0 is left, 1 is right.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiverSwimSpec {
    pub num_states: usize,
    /// Right from the first state: stay, move right.
    pub start_right: [f64; 2],
    /// Right from an interior state: left, stay, right.
    pub interior_right: [f64; 3],
    /// Right from the last state: left, stay.
    pub end_right: [f64; 2],
    pub left_reward: f64,
    pub right_reward: f64,
    pub discount: f64,
    /// Symmetric Dirichlet concentration of the prior over successors.
    pub prior_alpha: f64,
}

impl Default for RiverSwimSpec {
    fn default() -> Self {
        Self {
            num_states: 6,
            start_right: [0.4, 0.6],
            interior_right: [0.05, 0.6, 0.35],
            end_right: [0.4, 0.6],
            left_reward: 5.0,
            right_reward: 10_000.0,
            discount: 0.95,
            prior_alpha: 1.0,
        }
    }
}

pub fn make_riverswim(spec: &RiverSwimSpec) -> Result<TabularMdp> {
    let n = spec.num_states;
    if n < 3 {
        return Err(Error::invalid("RiverSwim needs at least three states"));
    }
    let mut transitions = vec![vec![vec![0.0; n]; 2]; n];
    let mut rewards = vec![vec![0.0; 2]; n];
    for s in 0..n {
        transitions[s][0][s.saturating_sub(1)] = 1.0;
        let right = &mut transitions[s][1];
        if s == 0 {
            right[0] = spec.start_right[0];
            right[1] = spec.start_right[1];
        } else if s == n - 1 {
            right[s - 1] = spec.end_right[0];
            right[s] = spec.end_right[1];
        } else {
            right[s - 1] = spec.interior_right[0];
            right[s] = spec.interior_right[1];
            right[s + 1] = spec.interior_right[2];
        }
    }
    rewards[0][0] = spec.left_reward;
    rewards[n - 1][1] = spec.right_reward;
    TabularMdp::new(rewards, transitions, spec.discount, vec![1.0 / n as f64; n])
}

/// Population dynamics `N' = min(lambda N, K)` with growth rate
/// `lambda = lambda_bar - z N beta1 - z max(0, N - N_bar)^2 beta2 + noise`
/// and observations `y = N + noise`, discretized into equal-width bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationParams {
    pub capacity: f64,
    pub threshold: f64,
    pub bins: usize,
    /// Prior means and standard deviations of `(lambda_bar, beta1, beta2)`.
    pub prior_mean: [f64; 3],
    pub prior_std: [f64; 3],
    pub growth_sigma: f64,
    pub obs_sigma: f64,
    /// Grid resolution of the growth noise.
    pub noise_nodes: usize,
    pub population_cost: f64,
    pub treatment_cost: f64,
    pub discount: f64,
}

impl Default for PopulationParams {
    fn default() -> Self {
        Self {
            capacity: 20.0,
            threshold: 10.0,
            bins: 20,
            prior_mean: [1.4, 0.03, 0.004],
            prior_std: [0.1, 0.01, 0.002],
            growth_sigma: 0.3,
            obs_sigma: 0.3,
            noise_nodes: 41,
            population_cost: 1.0,
            treatment_cost: 3.0,
            discount: 0.9,
        }
    }
}

/// One logged growth rate with its regression features.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrowthObservation {
    pub features: [f64; 3],
    pub rate: f64,
}

/// Symmetric grid on `[-5 sigma, 5 sigma]` weighted by the normal density.
fn noise_grid(sigma: f64, nodes: usize) -> (Vec<f64>, Vec<f64>) {
    let half = (nodes / 2) as f64;
    let points: Vec<f64> = (0..nodes).map(|k| (k as f64 - half) / half * 5.0).collect();
    let raw: Vec<f64> = points.iter().map(|z| (-0.5 * z * z).exp()).collect();
    let total: f64 = raw.iter().sum();
    (
        points.iter().map(|z| z * sigma).collect(),
        raw.iter().map(|w| w / total).collect(),
    )
}

pub struct PopulationModel {
    params: PopulationParams,
    noise: Vec<f64>,
    noise_weights: Vec<f64>,
    noise_dist: WeightedIndex<f64>,
}

impl PopulationModel {
    pub fn new(params: PopulationParams) -> Result<Self> {
        if !(params.capacity > 0.0) || params.bins != 20 {
            return Err(Error::invalid("population model needs K > 0 and 20 bins"));
        }
        if !(params.growth_sigma > 0.0 && params.obs_sigma > 0.0) || params.noise_nodes < 3 {
            return Err(Error::invalid("population noise must be positive on a grid of >= 3 nodes"));
        }
        if params.prior_std.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::invalid("prior standard deviations must be positive"));
        }
        let (noise, noise_weights) = noise_grid(params.growth_sigma, params.noise_nodes);
        let noise_dist = WeightedIndex::new(&noise_weights).map_err(|e| Error::invalid(e.to_string()))?;
        Ok(Self {
            params,
            noise,
            noise_weights,
            noise_dist,
        })
    }

    pub fn params(&self) -> &PopulationParams {
        &self.params
    }

    fn width(&self) -> f64 {
        self.params.capacity / self.params.bins as f64
    }

    /// Population represented by state `s` (the bin midpoint).
    pub fn bin_value(&self, s: usize) -> f64 {
        (s as f64 + 0.5) * self.width()
    }

    pub fn bin_of(&self, y: f64) -> usize {
        ((y / self.width()).floor().max(0.0) as usize).min(self.params.bins - 1)
    }

    pub fn features(&self, n: f64, treat: bool) -> [f64; 3] {
        if treat {
            let over = (n - self.params.threshold).max(0.0);
            [1.0, -n, -over * over]
        } else {
            [1.0, 0.0, 0.0]
        }
    }

    fn next_population(&self, n: f64, rate: f64) -> f64 {
        (rate * n).clamp(0.0, self.params.capacity)
    }

    /// Adds the bin distribution of `y = n_next + noise` into `out`.
    fn add_observation(&self, n_next: f64, weight: f64, out: &mut [f64]) {
        let bins = self.params.bins;
        let mut prev = 0.0;
        for (j, slot) in out.iter_mut().enumerate() {
            let upper = if j + 1 == bins {
                1.0
            } else {
                normal_cdf(((j + 1) as f64 * self.width() - n_next) / self.params.obs_sigma)
            };
            *slot += weight * (upper - prev);
            prev = upper;
        }
    }

    /// Transition kernel for parameters `theta = (lambda_bar, beta1, beta2)`.
    pub fn kernel(&self, theta: &[f64; 3]) -> Vec<Vec<Vec<f64>>> {
        let bins = self.params.bins;
        (0..bins)
            .map(|s| {
                let n = self.bin_value(s);
                [false, true]
                    .iter()
                    .map(|&treat| {
                        let x = self.features(n, treat);
                        let mean: f64 = x.iter().zip(theta).map(|(a, b)| a * b).sum();
                        let mut p = vec![0.0; bins];
                        for (eps, w) in self.noise.iter().zip(&self.noise_weights) {
                            self.add_observation(self.next_population(n, mean + eps), *w, &mut p);
                        }
                        let z: f64 = p.iter().sum();
                        p.iter_mut().for_each(|x| *x /= z);
                        p
                    })
                    .collect()
            })
            .collect()
    }

    pub fn rewards(&self) -> Vec<Vec<f64>> {
        (0..self.params.bins)
            .map(|s| {
                let cost = self.params.population_cost * self.bin_value(s);
                vec![-cost, -cost - self.params.treatment_cost]
            })
            .collect()
    }

    pub fn mdp(&self, theta: &[f64; 3]) -> Result<TabularMdp> {
        let bins = self.params.bins;
        TabularMdp::new(self.rewards(), self.kernel(theta), self.params.discount, vec![1.0 / bins as f64; bins])
    }

    pub fn sample_prior(&self, rng: &mut seed::Rng) -> [f64; 3] {
        std::array::from_fn(|i| {
            let z: f64 = rng.sample(StandardNormal);
            self.params.prior_mean[i] + self.params.prior_std[i] * z
        })
    }

    /// `per_pair` steps from every (state, action), simulated with parameters
    /// `theta`; returns the binned transitions and the logged growth rates.
    pub fn simulate(
        &self,
        theta: &[f64; 3],
        per_pair: usize,
        rng: &mut seed::Rng,
    ) -> Result<(Dataset, Vec<GrowthObservation>)> {
        let bins = self.params.bins;
        let mut data = Dataset::new(bins, 2);
        let mut growth = Vec::with_capacity(bins * 2 * per_pair);
        let obs = Normal::new(0.0, self.params.obs_sigma).map_err(|e| Error::invalid(e.to_string()))?;
        for s in 0..bins {
            let n = self.bin_value(s);
            for a in 0..2 {
                let x = self.features(n, a == 1);
                let mean: f64 = x.iter().zip(theta).map(|(a, b)| a * b).sum();
                for _ in 0..per_pair {
                    let rate = mean + self.noise[self.noise_dist.sample(rng)];
                    let y = self.next_population(n, rate) + obs.sample(rng);
                    data.push(Transition { s, a, next: self.bin_of(y) })?;
                    growth.push(GrowthObservation { features: x, rate });
                }
            }
        }
        Ok((data, growth))
    }

    /// Gaussian posterior `(mean, cholesky factor of the covariance)` of
    /// `theta` by Bayesian linear regression with known noise.
    pub fn posterior(&self, growth: &[GrowthObservation]) -> Result<([f64; 3], [[f64; 3]; 3])> {
        let noise_prec = 1.0 / (self.params.growth_sigma * self.params.growth_sigma);
        let mut prec = [[0.0; 3]; 3];
        let mut rhs = [0.0; 3];
        for i in 0..3 {
            let p = 1.0 / (self.params.prior_std[i] * self.params.prior_std[i]);
            prec[i][i] = p;
            rhs[i] = p * self.params.prior_mean[i];
        }
        for g in growth {
            for i in 0..3 {
                rhs[i] += noise_prec * g.features[i] * g.rate;
                for j in 0..3 {
                    prec[i][j] += noise_prec * g.features[i] * g.features[j];
                }
            }
        }
        let mean = crate::mdp::solve_linear(prec.iter().map(|r| r.to_vec()).collect(), rhs.to_vec())?;
        let cov: Vec<Vec<f64>> = (0..3)
            .map(|j| {
                let e: Vec<f64> = (0..3).map(|i| if i == j { 1.0 } else { 0.0 }).collect();
                crate::mdp::solve_linear(prec.iter().map(|r| r.to_vec()).collect(), e)
            })
            .collect::<Result<_>>()?;
        Ok(([mean[0], mean[1], mean[2]], cholesky3(&cov)?))
    }

    /// Kernels of `m` posterior parameter draws.
    pub fn posterior_samples(&self, growth: &[GrowthObservation], m: usize, seed: u64) -> Result<PosteriorSamples> {
        let (mean, chol) = self.posterior(growth)?;
        let mut rng = seed::rng(seed);
        let thetas: Vec<[f64; 3]> = (0..m)
            .map(|_| {
                let z: [f64; 3] = std::array::from_fn(|_| rng.sample(StandardNormal));
                std::array::from_fn(|i| mean[i] + (0..=i).map(|j| chol[i][j] * z[j]).sum::<f64>())
            })
            .collect();
        use rayon::prelude::*;
        let kernels: Vec<_> = thetas.par_iter().map(|t| self.kernel(t)).collect();
        PosteriorSamples::from_kernel_draws(&kernels)
    }
}

fn cholesky3(a: &[Vec<f64>]) -> Result<[[f64; 3]; 3]> {
    let mut l = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..=i {
            let sum: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = a[i][i] - sum;
                if !(d > 0.0) {
                    return Err(Error::invalid("posterior covariance is not positive definite"));
                }
                l[i][j] = d.sqrt();
            } else {
                l[i][j] = (a[i][j] - sum) / l[j][j];
            }
        }
    }
    Ok(l)
}

/// Fixed rewards with every transition vector drawn from a symmetric
/// Dirichlet prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomDirichletSpec {
    pub rewards: Vec<Vec<f64>>,
    pub discount: f64,
    pub initial_dist: Vec<f64>,
    pub prior_alpha: f64,
}

impl RandomDirichletSpec {
    /// Rewards uniform on `[0, 1)`, uniform initial distribution.
    pub fn random(num_states: usize, num_actions: usize, discount: f64, seed: u64) -> Self {
        let mut rng = seed::rng(seed);
        Self {
            rewards: (0..num_states)
                .map(|_| (0..num_actions).map(|_| rng.random::<f64>()).collect())
                .collect(),
            discount,
            initial_dist: vec![1.0 / num_states as f64; num_states],
            prior_alpha: 1.0,
        }
    }

    pub fn num_states(&self) -> usize {
        self.rewards.len()
    }

    pub fn num_actions(&self) -> usize {
        self.rewards.first().map_or(0, Vec::len)
    }
}

/// Domain configurations, serializable with every constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DomainConfig {
    SingleState(SingleStateProblem),
    RiverSwim(RiverSwimSpec),
    Population(PopulationParams),
    RandomDirichlet(RandomDirichletSpec),
}

impl DomainConfig {
    pub fn name(&self) -> &'static str {
        match self {
            DomainConfig::SingleState(p) => match p.prior {
                SingleStatePrior::Dirichlet { .. } => "single_state_dirichlet",
                SingleStatePrior::Inventory(_) => "single_state_inventory",
            },
            DomainConfig::RiverSwim(_) => "riverswim",
            DomainConfig::Population(_) => "population",
            DomainConfig::RandomDirichlet(_) => "random_dirichlet",
        }
    }

    /// Look up a built-in domain by name.
    pub fn preset(name: &str) -> Option<Self> {
        Some(match name {
            "single_state_dirichlet" => DomainConfig::SingleState(make_single_state_dirichlet()),
            "single_state_inventory" => DomainConfig::SingleState(make_single_state_inventory()),
            "riverswim" => DomainConfig::RiverSwim(RiverSwimSpec::default()),
            "population" => DomainConfig::Population(PopulationParams::default()),
            "random_dirichlet" => DomainConfig::RandomDirichlet(RandomDirichletSpec::random(3, 2, 0.9, 0)),
            _ => return None,
        })
    }

    pub const PRESETS: [&'static str; 5] = [
        "single_state_dirichlet",
        "single_state_inventory",
        "riverswim",
        "population",
        "random_dirichlet",
    ];
}

/// Ground truth of a tabular domain, with the parameters it came from.
#[derive(Debug, Clone)]
pub struct TabularTruth {
    pub mdp: TabularMdp,
    pub theta: Option<[f64; 3]>,
}

/// Logged data of a tabular domain.
#[derive(Debug, Clone)]
pub struct TabularData {
    pub dataset: Dataset,
    pub growth: Vec<GrowthObservation>,
}

/// Tabular domains behind one interface.
pub enum TabularDomain {
    RiverSwim(RiverSwimSpec, TabularMdp),
    Population(PopulationModel),
    RandomDirichlet(RandomDirichletSpec),
}

impl TabularDomain {
    pub fn from_config(config: &DomainConfig) -> Result<Self> {
        match config {
            DomainConfig::RiverSwim(spec) => Ok(TabularDomain::RiverSwim(spec.clone(), make_riverswim(spec)?)),
            DomainConfig::Population(p) => Ok(TabularDomain::Population(PopulationModel::new(p.clone())?)),
            DomainConfig::RandomDirichlet(spec) => {
                if spec.num_states() == 0 || spec.num_actions() == 0 || !(spec.prior_alpha > 0.0) {
                    return Err(Error::invalid("random Dirichlet domain needs states, actions and alpha > 0"));
                }
                Ok(TabularDomain::RandomDirichlet(spec.clone()))
            }
            DomainConfig::SingleState(_) => Err(Error::invalid("single-state problems are not tabular MDPs")),
        }
    }

    pub fn num_states(&self) -> usize {
        match self {
            TabularDomain::RiverSwim(_, mdp) => mdp.num_states(),
            TabularDomain::Population(m) => m.params().bins,
            TabularDomain::RandomDirichlet(spec) => spec.num_states(),
        }
    }

    pub fn num_actions(&self) -> usize {
        match self {
            TabularDomain::RiverSwim(_, mdp) => mdp.num_actions(),
            TabularDomain::Population(_) => 2,
            TabularDomain::RandomDirichlet(spec) => spec.num_actions(),
        }
    }

    /// The configured reference model (RiverSwim's canonical kernel, the
    /// population model at its prior mean, a random Dirichlet at the prior
    /// mean).
    pub fn nominal_truth(&self) -> Result<TabularTruth> {
        match self {
            TabularDomain::RiverSwim(_, mdp) => Ok(TabularTruth {
                mdp: mdp.clone(),
                theta: None,
            }),
            TabularDomain::Population(model) => {
                let theta = model.params().prior_mean;
                Ok(TabularTruth {
                    mdp: model.mdp(&theta)?,
                    theta: Some(theta),
                })
            }
            TabularDomain::RandomDirichlet(spec) => {
                let n = spec.num_states();
                let kernel = vec![vec![vec![1.0 / n as f64; n]; spec.num_actions()]; n];
                Ok(TabularTruth {
                    mdp: TabularMdp::new(spec.rewards.clone(), kernel, spec.discount, spec.initial_dist.clone())?,
                    theta: None,
                })
            }
        }
    }

    fn dirichlet_prior(&self) -> Option<(f64, &[Vec<f64>], f64, &[f64])> {
        match self {
            TabularDomain::RiverSwim(spec, mdp) => {
                Some((spec.prior_alpha, mdp.rewards(), mdp.discount(), mdp.initial_dist()))
            }
            TabularDomain::RandomDirichlet(spec) => {
                Some((spec.prior_alpha, &spec.rewards, spec.discount, &spec.initial_dist))
            }
            TabularDomain::Population(_) => None,
        }
    }

    /// Draw `P*` from the prior; rewards, discount and initial distribution
    /// come from the domain.
    pub fn sample_ground_truth(&self, rng: &mut seed::Rng) -> Result<TabularTruth> {
        if let TabularDomain::Population(model) = self {
            let theta = model.sample_prior(rng);
            return Ok(TabularTruth {
                mdp: model.mdp(&theta)?,
                theta: Some(theta),
            });
        }
        let (alpha, rewards, discount, p0) = self.dirichlet_prior().expect("Dirichlet domain");
        let n = self.num_states();
        let kernel = (0..n)
            .map(|_| (0..self.num_actions()).map(|_| sample_dirichlet(rng, &vec![alpha; n])).collect())
            .collect();
        Ok(TabularTruth {
            mdp: TabularMdp::new(rewards.to_vec(), kernel, discount, p0.to_vec())?,
            theta: None,
        })
    }

    pub fn simulate(&self, truth: &TabularTruth, per_pair: usize, rng: &mut seed::Rng) -> Result<TabularData> {
        match (self, truth.theta) {
            (TabularDomain::Population(model), Some(theta)) => {
                let (dataset, growth) = model.simulate(&theta, per_pair, rng)?;
                Ok(TabularData { dataset, growth })
            }
            (TabularDomain::Population(_), None) => Err(Error::invalid("population truth needs parameters")),
            _ => Ok(TabularData {
                dataset: simulate_dataset(&truth.mdp, per_pair, rng)?,
                growth: Vec::new(),
            }),
        }
    }

    pub fn posterior_samples(&self, data: &TabularData, m: usize, seed: u64) -> Result<PosteriorSamples> {
        if let TabularDomain::Population(model) = self {
            return model.posterior_samples(&data.growth, m, seed);
        }
        let (alpha, ..) = self.dirichlet_prior().expect("Dirichlet domain");
        let n = self.num_states();
        let prior = DirichletPosterior::symmetric(n, self.num_actions(), &vec![alpha; n])?;
        sample_posterior(&dirichlet_posterior(&prior, &data.dataset)?, m, seed)
    }

    pub fn rewards(&self) -> Vec<Vec<f64>> {
        match self {
            TabularDomain::RiverSwim(_, mdp) => mdp.rewards().to_vec(),
            TabularDomain::Population(model) => model.rewards(),
            TabularDomain::RandomDirichlet(spec) => spec.rewards.clone(),
        }
    }
}

/// `per_pair` successor draws from `P*(s, a, .)` for every pair.
pub fn simulate_dataset(truth: &TabularMdp, per_pair: usize, rng: &mut seed::Rng) -> Result<Dataset> {
    let mut data = Dataset::new(truth.num_states(), truth.num_actions());
    for s in 0..truth.num_states() {
        for a in 0..truth.num_actions() {
            let dist = WeightedIndex::new(truth.transition(s, a)).map_err(|e| Error::invalid(e.to_string()))?;
            for _ in 0..per_pair {
                data.push(Transition { s, a, next: dist.sample(rng) })?;
            }
        }
    }
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{check_simplex, empirical_model, value_iteration};

    #[test]
    fn inventory_levels() {
        let inv = InventoryPrior::default();
        let p = inv.level_distribution(3.0, 5);
        assert!(check_simplex(&p, 1e-12).is_ok());
        // level 2 <=> D in (2.5, 3.5]
        assert!((p[1] - (normal_cdf(0.5) - normal_cdf(-0.5))).abs() < 1e-12);
        assert!((p[0] - (1.0 - normal_cdf(0.5))).abs() < 1e-12);
        assert!((p[4] - normal_cdf(-2.5)).abs() < 1e-12);
        assert_eq!(inv.level_of(3.0, 5), 1);
        assert_eq!(inv.level_of(9.0, 5), 0);
        assert_eq!(inv.level_of(-3.0, 5), 4);
        assert_eq!(inv.level_of(2.5, 5), 2);
    }

    #[test]
    fn inventory_posterior() {
        let inv = InventoryPrior::default();
        let (mean, std) = inv.posterior(&[5.0]);
        assert!((mean - 4.0).abs() < 1e-12);
        assert!((std - 0.5f64.sqrt()).abs() < 1e-12);
        // numeric integration of prior x likelihood on a grid
        let (mut z, mut first) = (0.0, 0.0);
        for i in 0..20_000 {
            let mu = -5.0 + i as f64 * 0.001;
            let w = (-0.5 * (mu - 3.0f64).powi(2) - 0.5 * (5.0 - mu).powi(2)).exp();
            z += w;
            first += w * mu;
        }
        assert!((first / z - 4.0).abs() < 1e-6);
        let many: Vec<f64> = (0..100_000).map(|i| 2.0 + (i % 3) as f64).collect();
        assert!((inv.posterior(&many).0 - 3.0).abs() < 1e-3);
        assert_eq!(inv.posterior(&[]), (3.0, 1.0));
    }

    #[test]
    fn single_state_sampling() {
        let problem = make_single_state_dirichlet();
        let mut rng = seed::rng(1);
        let mut mean = [0.0; 5];
        for _ in 0..1000 {
            let t = problem.sample_truth(&mut rng);
            assert!(check_simplex(&t.probs, 1e-12).is_ok());
            mean.iter_mut().zip(&t.probs).for_each(|(m, p)| *m += p / 1000.0);
        }
        assert!(mean.iter().all(|m| (m - 0.2).abs() < 0.03));
        let truth = problem.sample_truth(&mut seed::rng(2));
        assert_eq!(truth, problem.sample_truth(&mut seed::rng(2)));
        let data = problem.simulate(&truth, 40, &mut rng).unwrap();
        assert_eq!(data.len(), 40);
        let rows = problem.posterior_samples(&data, 10, 3).unwrap();
        assert_eq!(rows.len(), 10);

        let inventory = make_single_state_inventory();
        let truth = inventory.sample_truth(&mut rng);
        let data = inventory.simulate(&truth, 25, &mut rng).unwrap();
        assert_eq!(data.demands.len(), 25);
        assert_eq!(data.len(), 25);
        let rows = inventory.posterior_samples(&data, 10, 3).unwrap();
        assert!(rows.iter().all(|r| check_simplex(r, 1e-12).is_ok()));
    }

    #[test]
    fn riverswim_structure() {
        let mdp = make_riverswim(&RiverSwimSpec::default()).unwrap();
        for s in 0..6 {
            let left = mdp.transition(s, 0);
            assert_eq!(left[s.saturating_sub(1)], 1.0);
            assert!(check_simplex(mdp.transition(s, 1), 1e-12).is_ok());
        }
        let (_, pi) = value_iteration(&mdp, 1e-8).unwrap();
        assert!(pi.iter().all(|&a| a == 1), "{pi:?}");
    }

    #[test]
    fn population_kernels() {
        let model = PopulationModel::new(PopulationParams::default()).unwrap();
        let kernel = model.kernel(&[1.4, 0.03, 0.004]);
        for row in &kernel {
            for p in row {
                assert!(check_simplex(p, 1e-12).is_ok());
            }
        }
        let inert = model.kernel(&[1.4, 0.0, 0.0]);
        for row in &inert {
            assert_eq!(row[0], row[1]);
        }
        let small = PopulationModel::new(PopulationParams {
            capacity: 20.0,
            obs_sigma: 0.01,
            ..PopulationParams::default()
        })
        .unwrap();
        // with almost no observation noise, growth from the lowest bin stays low
        let k = small.kernel(&[1.4, 0.03, 0.004]);
        assert!(k[0][0][10..].iter().all(|&p| p < 1e-12));
    }

    #[test]
    fn population_posterior_concentrates() {
        let model = PopulationModel::new(PopulationParams::default()).unwrap();
        let theta = [1.5, 0.025, 0.005];
        let (_, growth) = model.simulate(&theta, 400, &mut seed::rng(5)).unwrap();
        let (mean, chol) = model.posterior(&growth).unwrap();
        assert!((mean[0] - 1.5).abs() < 0.01);
        assert!((mean[1] - 0.025).abs() < 0.003);
        assert!(chol[0][0] > 0.0 && chol[0][0] < 0.01);
        let samples = model.posterior_samples(&growth, 5, 1).unwrap();
        assert_eq!((samples.num_states(), samples.num_actions(), samples.m()), (20, 2, 5));
    }

    #[test]
    fn dataset_simulation() {
        let mdp = make_riverswim(&RiverSwimSpec::default()).unwrap();
        let mut rng = seed::rng(8);
        assert!(simulate_dataset(&mdp, 0, &mut rng).unwrap().is_empty());
        let data = simulate_dataset(&mdp, 5, &mut rng).unwrap();
        assert!(data.counts(3, 0)[2] == 5);
        let data = simulate_dataset(&mdp, 20_000, &mut rng).unwrap();
        let model = empirical_model(&data);
        for s in 0..6 {
            for a in 0..2 {
                for (x, y) in model[s][a].iter().zip(mdp.transition(s, a)) {
                    assert!((x - y).abs() < 0.02);
                }
            }
        }
        let again = simulate_dataset(&mdp, 5, &mut seed::rng(8)).unwrap();
        assert_eq!(again, simulate_dataset(&mdp, 5, &mut seed::rng(8)).unwrap());
    }

    #[test]
    fn chi_square_goodness_of_fit() {
        let problem = make_single_state_dirichlet();
        let truth = SingleStateTruth {
            probs: vec![0.1, 0.2, 0.3, 0.25, 0.15],
            mu: None,
        };
        let n = 20_000;
        let rejections = (0..100)
            .filter(|&seed| {
                let data = problem.simulate(&truth, n, &mut seed::rng(seed)).unwrap();
                let stat: f64 = data
                    .counts
                    .iter()
                    .zip(&truth.probs)
                    .map(|(&c, &p)| (c as f64 - n as f64 * p).powi(2) / (n as f64 * p))
                    .sum();
                // 99th percentile of chi-square with 4 degrees of freedom
                stat > 13.28
            })
            .count();
        // at the 1% level, 5 or more rejections in 100 has probability < 0.4%
        assert!(rejections < 5, "{rejections}");
    }

    #[test]
    fn tabular_domain_round_trip() {
        for name in DomainConfig::PRESETS {
            let config = DomainConfig::preset(name).unwrap();
            let text = serde_json::to_string(&config).unwrap();
            assert_eq!(serde_json::from_str::<DomainConfig>(&text).unwrap(), config);
        }
        let domain = TabularDomain::from_config(&DomainConfig::preset("random_dirichlet").unwrap()).unwrap();
        let mut rng = seed::rng(3);
        let truth = domain.sample_ground_truth(&mut rng).unwrap();
        let data = domain.simulate(&truth, 3, &mut rng).unwrap();
        let post = domain.posterior_samples(&data, 4, 1).unwrap();
        assert_eq!(post.m(), 4);
    }
}
