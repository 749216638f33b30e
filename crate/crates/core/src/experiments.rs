//! Replicated dataset-to-estimate experiments.
//!
//! Every replication draws a ground truth, simulates a dataset, builds each
//! method's ambiguity set, solves for a policy and a safe return estimate,
//! and scores the estimate against the true return. All methods in a
//! replication see the same truth, dataset and posterior draws.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bayes::{
    bci_ambiguity_set, bci_radius, dirichlet_posterior, posterior_mean, sample_posterior, DirichletPosterior,
    PosteriorSamples,
};
use crate::domains::{DomainConfig, SingleStateProblem, TabularDomain, TabularTruth};
use crate::error::{Error, Result};
use crate::freq::{
    good_turing_support, hoeffding_ambiguity_set, hoeffding_monotone_radius, hoeffding_radius, ConfidenceBudget,
    HoeffdingBound,
};
use crate::mdp::{
    dot, empirical_distribution, policy_evaluation, total_return, value_iteration, Dataset, Policy, TabularMdp,
    ValueFunction,
};
use crate::robust::{robust_value_iteration, worst_case_l1, worst_case_l1_masked, AmbiguitySet};
use crate::rsvf::{rsvf_solve, single_decision_estimate, RsvfDiagnostics, RsvfOptions};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MethodId {
    MeanTransition,
    Hoeffding,
    HoeffdingMonotone,
    #[serde(rename = "BCI")]
    Bci,
    #[serde(rename = "RSVF")]
    Rsvf,
}

impl MethodId {
    pub const ALL: [MethodId; 5] = [
        MethodId::MeanTransition,
        MethodId::Hoeffding,
        MethodId::HoeffdingMonotone,
        MethodId::Bci,
        MethodId::Rsvf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MethodId::MeanTransition => "MeanTransition",
            MethodId::Hoeffding => "Hoeffding",
            MethodId::HoeffdingMonotone => "HoeffdingMonotone",
            MethodId::Bci => "BCI",
            MethodId::Rsvf => "RSVF",
        }
    }

    fn needs_posterior(self) -> bool {
        matches!(self, MethodId::MeanTransition | MethodId::Bci | MethodId::Rsvf)
    }
}

impl fmt::Display for MethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MethodId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let key: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
        Ok(match key.as_str() {
            "meantransition" | "mean" => MethodId::MeanTransition,
            "hoeffding" => MethodId::Hoeffding,
            "hoeffdingmonotone" | "monotone" => MethodId::HoeffdingMonotone,
            "bci" => MethodId::Bci,
            "rsvf" => MethodId::Rsvf,
            _ => return Err(Error::invalid(format!("unknown method {s:?}"))),
        })
    }
}

/// Where the ground truth of a replication comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// A fresh draw from the prior in every replication.
    Bayesian,
    /// The domain's reference model in every replication.
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub domain: DomainConfig,
    pub methods: Vec<MethodId>,
    pub sample_sizes: Vec<usize>,
    pub replications: usize,
    pub delta: f64,
    pub posterior_samples: usize,
    pub master_seed: u64,
    pub protocol: Protocol,
    pub good_turing: bool,
    pub max_iter: usize,
    pub tol: f64,
}

impl ExperimentConfig {
    fn base(domain: DomainConfig) -> Self {
        Self {
            domain,
            methods: MethodId::ALL.to_vec(),
            sample_sizes: vec![5, 10, 20, 50, 100, 200],
            replications: 200,
            delta: 0.05,
            posterior_samples: 1000,
            master_seed: 2019,
            protocol: Protocol::Bayesian,
            // hiding unseen successors voids the Hoeffding guarantee whenever
            // the truth has rare transitions; available as an option
            good_turing: false,
            max_iter: crate::rsvf::DEFAULT_MAX_ITER,
            tol: crate::mdp::DEFAULT_TOL,
        }
    }

    /// Default experiment of a built-in domain.
    pub fn preset(name: &str) -> Option<Self> {
        let domain = DomainConfig::preset(name)?;
        let mut config = Self::base(domain);
        match name {
            "riverswim" => {
                config.sample_sizes = vec![5, 10, 20, 50, 100];
                config.replications = 100;
                config.protocol = Protocol::Fixed;
            }
            "population" => {
                config.sample_sizes = vec![5, 20, 50];
                config.replications = 40;
                config.delta = 0.10;
            }
            "random_dirichlet" => {
                config.sample_sizes = vec![10];
            }
            _ => {}
        }
        Some(config)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::invalid(format!("delta {} must lie in (0, 1)", self.delta)));
        }
        if self.methods.is_empty() || self.sample_sizes.is_empty() || self.replications == 0 {
            return Err(Error::invalid("need at least one method, sample size and replication"));
        }
        if self.posterior_samples == 0 || self.max_iter == 0 || !(self.tol > 0.0) {
            return Err(Error::invalid("posterior_samples, max_iter and tol must be positive"));
        }
        if let DomainConfig::SingleState(p) = &self.domain {
            p.validate()?;
        }
        Ok(())
    }
}

/// One (method, sample size, replication) outcome.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentResult {
    pub method: MethodId,
    pub sample_size: usize,
    pub replication: usize,
    pub seed: u64,
    pub safe_return: f64,
    pub true_return: f64,
    pub true_opt: f64,
    pub regret: f64,
    pub violation: bool,
    #[serde(skip)]
    pub error: Option<String>,
}

/// `|rho(pi*, P*) - rho_tilde|`.
pub fn regret(true_opt: f64, safe_estimate: f64) -> f64 {
    (true_opt - safe_estimate).abs()
}

/// Seeds of one replication cell.
#[derive(Debug, Clone, Copy)]
struct CellSeeds {
    cell: u64,
    truth: u64,
    dataset: u64,
    posterior: u64,
}

fn cell_seeds(master: u64, sample_size: usize, replication: usize) -> CellSeeds {
    let cell = seed::derive(master, &[sample_size as u64, replication as u64]);
    CellSeeds {
        cell,
        // the truth depends on the replication only, so every sample size
        // is evaluated against the same ground truths
        truth: seed::derive(master, &[seed::tag("truth"), replication as u64]),
        dataset: seed::derive(cell, &[seed::tag("dataset")]),
        posterior: seed::derive(cell, &[seed::tag("posterior")]),
    }
}

struct Scored {
    safe_return: f64,
    true_return: f64,
}

fn row(
    method: MethodId,
    sample_size: usize,
    replication: usize,
    seeds: CellSeeds,
    true_opt: f64,
    margin: f64,
    scored: Result<Scored>,
) -> ExperimentResult {
    match scored {
        Ok(s) => ExperimentResult {
            method,
            sample_size,
            replication,
            seed: seeds.cell,
            safe_return: s.safe_return,
            true_return: s.true_return,
            true_opt,
            regret: regret(true_opt, s.safe_return),
            violation: s.safe_return > s.true_return + margin,
            error: None,
        },
        Err(e) => ExperimentResult {
            method,
            sample_size,
            replication,
            seed: seeds.cell,
            safe_return: f64::NAN,
            true_return: f64::NAN,
            true_opt,
            regret: f64::NAN,
            violation: false,
            error: Some(e.to_string()),
        },
    }
}

fn single_state_cell(
    config: &ExperimentConfig,
    problem: &SingleStateProblem,
    methods: &[MethodId],
    n: usize,
    rep: usize,
) -> Result<Vec<ExperimentResult>> {
    let seeds = cell_seeds(config.master_seed, n, rep);
    let truth = problem.sample_truth(&mut seed::rng(seeds.truth));
    let value = &problem.values;
    let true_opt = dot(&truth.probs, value);
    let data = problem.simulate(&truth, n, &mut seed::rng(seeds.dataset))?;
    let rows = if methods.iter().any(|m| m.needs_posterior()) {
        problem.posterior_samples(&data, config.posterior_samples, seeds.posterior)?
    } else {
        Vec::new()
    };
    let k = problem.num_outcomes();
    let budget = ConfidenceBudget::single_pair(config.delta, k)?;
    let hoeffding = |radius: f64| -> Result<f64> {
        let nominal = empirical_distribution(&data.counts, k);
        let mask = config.good_turing.then(|| good_turing_support(&data.counts));
        Ok(worst_case_l1_masked(value, &nominal, radius, mask.as_deref())?.1)
    };
    let estimate = |method: MethodId| -> Result<f64> {
        match method {
            MethodId::MeanTransition => {
                let mean = posterior_mean(&crate::bayes::PosteriorSamples::new(vec![vec![rows.clone()]])?);
                Ok(dot(&mean[0][0], value))
            }
            MethodId::Hoeffding => hoeffding(hoeffding_radius(data.len(), &budget)),
            MethodId::HoeffdingMonotone => hoeffding(hoeffding_monotone_radius(data.len(), &budget)),
            MethodId::Bci => {
                let (center, psi) = bci_radius(&rows, budget.per_pair())?;
                Ok(worst_case_l1(value, &center, psi)?.1)
            }
            MethodId::Rsvf => Ok(single_decision_estimate(&rows, value, budget.per_pair())?.2),
        }
    };
    Ok(methods
        .iter()
        .map(|&m| {
            let scored = estimate(m).map(|safe_return| Scored {
                safe_return,
                true_return: true_opt,
            });
            row(m, n, rep, seeds, true_opt, config.tol, scored)
        })
        .collect())
}

fn tabular_cell(
    config: &ExperimentConfig,
    domain: &TabularDomain,
    fixed_truth: Option<&(TabularTruth, f64)>,
    methods: &[MethodId],
    n: usize,
    rep: usize,
) -> Result<Vec<ExperimentResult>> {
    let seeds = cell_seeds(config.master_seed, n, rep);
    let sampled;
    let (truth, true_opt) = match fixed_truth {
        Some((t, opt)) => (t, *opt),
        None => {
            let t = domain.sample_ground_truth(&mut seed::rng(seeds.truth))?;
            let opt = total_return(&value_iteration(&t.mdp, config.tol)?.0, t.mdp.initial_dist())?;
            sampled = t;
            (&sampled, opt)
        }
    };
    let mdp = &truth.mdp;
    let data = domain.simulate(truth, n, &mut seed::rng(seeds.dataset))?;
    let samples = if methods.iter().any(|m| m.needs_posterior()) {
        Some(domain.posterior_samples(&data, config.posterior_samples, seeds.posterior)?)
    } else {
        None
    };
    let p0 = mdp.initial_dist();
    let options = SolveOptions {
        delta: config.delta,
        posterior_samples: config.posterior_samples,
        seed: seeds.posterior,
        good_turing: config.good_turing,
        max_iter: config.max_iter,
        tol: config.tol,
        ..SolveOptions::default()
    };
    let solve = |method: MethodId| -> Result<(f64, Policy)> {
        let sol = solve_from_data(mdp, Some(&data.dataset), method, samples.as_ref(), &options)?;
        Ok((sol.safe_return, sol.policy))
    };
    Ok(methods
        .iter()
        .map(|&m| {
            let scored = solve(m).and_then(|(safe_return, pi)| {
                let true_return = total_return(&policy_evaluation(mdp, &pi)?, p0)?;
                Ok(Scored {
                    safe_return,
                    true_return,
                })
            });
            row(m, n, rep, seeds, true_opt, config.tol, scored)
        })
        .collect())
}

enum Prepared {
    Single(SingleStateProblem),
    Tabular(TabularDomain, Option<(TabularTruth, f64)>),
}

fn prepare(config: &ExperimentConfig) -> Result<Prepared> {
    config.validate()?;
    Ok(match &config.domain {
        DomainConfig::SingleState(p) => Prepared::Single(p.clone()),
        other => {
            let domain = TabularDomain::from_config(other)?;
            let fixed = match config.protocol {
                Protocol::Bayesian => None,
                Protocol::Fixed => {
                    let truth = domain.nominal_truth()?;
                    let opt = total_return(&value_iteration(&truth.mdp, config.tol)?.0, truth.mdp.initial_dist())?;
                    Some((truth, opt))
                }
            };
            Prepared::Tabular(domain, fixed)
        }
    })
}

fn cell(prepared: &Prepared, config: &ExperimentConfig, methods: &[MethodId], n: usize, rep: usize) -> Vec<ExperimentResult> {
    let out = match prepared {
        Prepared::Single(p) => single_state_cell(config, p, methods, n, rep),
        Prepared::Tabular(d, fixed) => tabular_cell(config, d, fixed.as_ref(), methods, n, rep),
    };
    out.unwrap_or_else(|e| {
        let seeds = cell_seeds(config.master_seed, n, rep);
        methods
            .iter()
            .map(|&m| row(m, n, rep, seeds, f64::NAN, config.tol, Err(Error::invalid(e.to_string()))))
            .collect()
    })
}

/// Settings of a one-off solve from logged transitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveOptions {
    pub delta: f64,
    pub posterior_samples: usize,
    /// Seed of the posterior draws when none are supplied.
    pub seed: u64,
    /// Symmetric Dirichlet prior used when none are supplied.
    pub prior_alpha: f64,
    pub good_turing: bool,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            delta: 0.05,
            posterior_samples: 1000,
            seed: 2019,
            prior_alpha: 1.0,
            good_turing: false,
            max_iter: crate::rsvf::DEFAULT_MAX_ITER,
            tol: crate::mdp::DEFAULT_TOL,
        }
    }
}

/// Policy, values and safe return estimate of one method.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSolution {
    pub method: MethodId,
    pub policy: Policy,
    pub value: ValueFunction,
    pub safe_return: f64,
    pub sets: AmbiguitySet,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rsvf: Option<RsvfDiagnostics>,
}

/// Builds the method's ambiguity sets from `data` and solves the robust MDP
/// with the rewards, discount and initial distribution of `mdp`.
///
/// Bayesian methods use `posterior` when given and otherwise draw from the
/// Dirichlet posterior under a symmetric prior. Without data, the mean
/// transition method solves `mdp` itself.
pub fn solve_from_data(
    mdp: &TabularMdp,
    data: Option<&Dataset>,
    method: MethodId,
    posterior: Option<&PosteriorSamples>,
    options: &SolveOptions,
) -> Result<MethodSolution> {
    let (s_count, a_count) = (mdp.num_states(), mdp.num_actions());
    if let Some(d) = data {
        if d.num_states() != s_count || d.num_actions() != a_count || d.num_successors() != s_count {
            return Err(Error::dim(format!(
                "dataset is {}x{}x{}, model has {s_count} states and {a_count} actions",
                d.num_states(),
                d.num_actions(),
                d.num_successors()
            )));
        }
    }
    let drawn;
    let samples = match (posterior, data) {
        (Some(p), _) => Some(p),
        (None, Some(data)) if method.needs_posterior() => {
            let prior = DirichletPosterior::symmetric(s_count, a_count, &vec![options.prior_alpha; s_count])?;
            drawn = sample_posterior(&dirichlet_posterior(&prior, data)?, options.posterior_samples, options.seed)?;
            Some(&drawn)
        }
        _ => None,
    };
    let required = || samples.ok_or_else(|| Error::invalid(format!("{method} needs a dataset or posterior samples")));
    let budget = ConfidenceBudget::new(options.delta, s_count, a_count)?;
    let (rewards, gamma, p0) = (mdp.rewards(), mdp.discount(), mdp.initial_dist());
    let robust = |sets: AmbiguitySet| -> Result<MethodSolution> {
        let (value, policy) = robust_value_iteration(rewards, gamma, &sets, options.tol)?;
        Ok(MethodSolution {
            method,
            safe_return: total_return(&value, p0)?,
            policy,
            value,
            sets,
            rsvf: None,
        })
    };
    let hoeffding = |bound: HoeffdingBound| -> Result<MethodSolution> {
        let data = data.ok_or_else(|| Error::invalid(format!("{method} needs a dataset")))?;
        robust(hoeffding_ambiguity_set(data, &budget, bound, options.good_turing)?)
    };
    match method {
        MethodId::MeanTransition => {
            let model = match samples {
                None => mdp.clone(),
                Some(samples) => mdp.with_transitions(posterior_mean(samples))?,
            };
            let (value, policy) = value_iteration(&model, options.tol)?;
            Ok(MethodSolution {
                method,
                safe_return: total_return(&value, p0)?,
                policy,
                value,
                sets: AmbiguitySet::nominal_only(model.transitions().to_vec())?,
                rsvf: None,
            })
        }
        MethodId::Hoeffding => hoeffding(HoeffdingBound::Standard),
        MethodId::HoeffdingMonotone => hoeffding(HoeffdingBound::Monotone),
        MethodId::Bci => robust(bci_ambiguity_set(required()?, &budget)?),
        MethodId::Rsvf => {
            let rsvf_options = RsvfOptions {
                max_iter: options.max_iter,
                tol: options.tol,
            };
            let sol = rsvf_solve(rewards, gamma, p0, required()?, options.delta, &rsvf_options)?;
            Ok(MethodSolution {
                method,
                policy: sol.policy,
                value: sol.value,
                safe_return: sol.safe_return,
                sets: sol.sets,
                rsvf: Some(sol.diagnostics),
            })
        }
    }
}

/// One method on one replication.
pub fn run_replication(
    config: &ExperimentConfig,
    method: MethodId,
    sample_size: usize,
    replication: usize,
) -> Result<ExperimentResult> {
    let prepared = prepare(config)?;
    Ok(cell(&prepared, config, &[method], sample_size, replication).remove(0))
}

/// All cells of the configuration, ordered by sample size, replication and
/// method. Failures are recorded in the rows instead of aborting the run.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<ExperimentResult>> {
    let prepared = prepare(config)?;
    let cells: Vec<(usize, usize)> = config
        .sample_sizes
        .iter()
        .flat_map(|&n| (0..config.replications).map(move |r| (n, r)))
        .collect();
    Ok(cells
        .par_iter()
        .map(|&(n, r)| cell(&prepared, config, &config.methods, n, r))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect())
}

/// Per (method, sample size) summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateRow {
    pub method: MethodId,
    pub sample_size: usize,
    pub replications: usize,
    pub failures: usize,
    pub mean_regret: f64,
    pub mean_safe_return: f64,
    pub violation_rate: f64,
    pub violation_ci_low: f64,
    pub violation_ci_high: f64,
}

/// Two-sided 95% Wilson score interval for `k` successes in `n` trials.
pub fn wilson_interval(k: usize, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let z = 1.959_963_984_540_054;
    let (nf, p) = (n as f64, k as f64 / n as f64);
    let denom = 1.0 + z * z / nf;
    let center = (p + z * z / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z * z / (4.0 * nf * nf)).sqrt() / denom;
    let lo = if k == 0 { 0.0 } else { (center - half).max(0.0) };
    let hi = if k == n { 1.0 } else { (center + half).min(1.0) };
    (lo, hi)
}

/// Means over successful rows, in order of first appearance.
pub fn aggregate(results: &[ExperimentResult]) -> Vec<AggregateRow> {
    let mut keys: Vec<(MethodId, usize)> = Vec::new();
    for r in results {
        if !keys.contains(&(r.method, r.sample_size)) {
            keys.push((r.method, r.sample_size));
        }
    }
    keys.into_iter()
        .map(|(method, sample_size)| {
            let cell: Vec<&ExperimentResult> = results
                .iter()
                .filter(|r| r.method == method && r.sample_size == sample_size)
                .collect();
            let ok: Vec<&&ExperimentResult> = cell.iter().filter(|r| r.error.is_none()).collect();
            let n = ok.len();
            let violations = ok.iter().filter(|r| r.violation).count();
            let mean = |f: fn(&ExperimentResult) -> f64| -> f64 {
                if n == 0 {
                    f64::NAN
                } else {
                    ok.iter().map(|r| f(r)).sum::<f64>() / n as f64
                }
            };
            let (lo, hi) = wilson_interval(violations, n);
            AggregateRow {
                method,
                sample_size,
                replications: n,
                failures: cell.len() - n,
                mean_regret: mean(|r| r.regret),
                mean_safe_return: mean(|r| r.safe_return),
                violation_rate: if n == 0 { f64::NAN } else { violations as f64 / n as f64 },
                violation_ci_low: lo,
                violation_ci_high: hi,
            }
        })
        .collect()
}

pub fn write_results_csv<W: Write>(writer: W, results: &[ExperimentResult]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record([
        "method",
        "sample_size",
        "replication",
        "seed",
        "safe_return",
        "true_return",
        "true_opt",
        "regret",
        "violation",
    ])?;
    for r in results {
        csv.write_record([
            r.method.name().to_string(),
            r.sample_size.to_string(),
            r.replication.to_string(),
            r.seed.to_string(),
            r.safe_return.to_string(),
            r.true_return.to_string(),
            r.true_opt.to_string(),
            r.regret.to_string(),
            r.violation.to_string(),
        ])?;
    }
    csv.flush()?;
    Ok(())
}

pub fn write_aggregate_csv<W: Write>(writer: W, rows: &[AggregateRow]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    for r in rows {
        csv.serialize(r)?;
    }
    if rows.is_empty() {
        let header = [
            "method",
            "sample_size",
            "replications",
            "failures",
            "mean_regret",
            "mean_safe_return",
            "violation_rate",
            "violation_ci_low",
            "violation_ci_high",
        ];
        csv.write_record(header)?;
    }
    csv.flush()?;
    Ok(())
}

/// Writes `results.csv`, `aggregate.csv` and the resolved `config.json`.
pub fn write_outputs(dir: impl AsRef<Path>, config: &ExperimentConfig, results: &[ExperimentResult]) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    write_results_csv(std::fs::File::create(dir.join("results.csv"))?, results)?;
    write_aggregate_csv(std::fs::File::create(dir.join("aggregate.csv"))?, &aggregate(results))?;
    crate::io::write_json(dir.join("config.json"), config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(name: &str) -> ExperimentConfig {
        let mut c = ExperimentConfig::preset(name).unwrap();
        c.sample_sizes = vec![10];
        c.replications = 3;
        c.posterior_samples = 100;
        c
    }

    #[test]
    fn regret_examples() {
        assert_eq!(regret(4.0, 4.0), 0.0);
        assert_eq!(regret(10.0, 7.0), 3.0);
        assert_eq!(regret(7.0, 10.0), 3.0);
    }

    #[test]
    fn method_names_parse() {
        for m in MethodId::ALL {
            assert_eq!(m.name().parse::<MethodId>().unwrap(), m);
        }
        assert_eq!("hoeffding-monotone".parse::<MethodId>().unwrap(), MethodId::HoeffdingMonotone);
        assert!("bogus".parse::<MethodId>().is_err());
        assert_eq!(serde_json::to_string(&MethodId::Bci).unwrap(), "\"BCI\"");
    }

    #[test]
    fn wilson_examples() {
        let (lo, hi) = wilson_interval(0, 200);
        assert_eq!(lo, 0.0);
        assert!((hi - 0.018_85).abs() < 1e-4, "{hi}");
        let (lo, hi) = wilson_interval(10, 200);
        assert!((lo - 0.027_4).abs() < 1e-3 && (hi - 0.089_8).abs() < 1e-3, "{lo} {hi}");
    }

    fn synthetic(method: MethodId, n: usize, regret: f64, violation: bool) -> ExperimentResult {
        ExperimentResult {
            method,
            sample_size: n,
            replication: 0,
            seed: 0,
            safe_return: 1.0 - regret,
            true_return: 1.0,
            true_opt: 1.0,
            regret,
            violation,
            error: None,
        }
    }

    #[test]
    fn aggregate_synthetic_table() {
        let mut rows: Vec<ExperimentResult> = (0..200)
            .map(|i| synthetic(MethodId::Bci, 5, (i % 4) as f64, i < 10))
            .collect();
        rows.push(synthetic(MethodId::Rsvf, 5, 0.5, false));
        rows.push(synthetic(MethodId::Rsvf, 5, 1.5, false));
        let mut failed = synthetic(MethodId::Rsvf, 5, 9.0, true);
        failed.error = Some("boom".into());
        rows.push(failed);
        let agg = aggregate(&rows);
        assert_eq!(agg.len(), 2);
        assert_eq!(agg[0].mean_regret, 1.5);
        assert_eq!(agg[0].violation_rate, 0.05);
        assert_eq!((agg[1].replications, agg[1].failures), (2, 1));
        assert_eq!(agg[1].mean_regret, 1.0);
        assert_eq!(agg[1].violation_rate, 0.0);
        assert_eq!(agg[1].violation_ci_low, 0.0);
    }

    #[test]
    fn single_state_rows_are_consistent() {
        let config = quick("single_state_dirichlet");
        let rows = run_experiment(&config).unwrap();
        assert_eq!(rows.len(), 15);
        for r in &rows {
            assert!(r.error.is_none(), "{:?}", r.error);
            assert_eq!(r.regret, regret(r.true_opt, r.safe_return));
            assert_eq!(r.violation, r.safe_return > r.true_return + config.tol);
        }
        // methods share the truth within a replication
        assert!(rows.chunks(5).all(|c| c.iter().all(|r| r.true_opt == c[0].true_opt)));
    }

    #[test]
    fn pinned_seed_reproduces_rows() {
        let config = quick("riverswim");
        let a = run_replication(&config, MethodId::Rsvf, 10, 1).unwrap();
        let b = run_replication(&config, MethodId::Rsvf, 10, 1).unwrap();
        assert_eq!(a, b);
        let all = run_experiment(&config).unwrap();
        let same = all
            .iter()
            .find(|r| r.method == MethodId::Rsvf && r.replication == 1)
            .unwrap();
        assert_eq!(same, &a);
    }

    #[test]
    fn mean_transition_with_lots_of_data() {
        let mut config = quick("single_state_dirichlet");
        config.methods = vec![MethodId::MeanTransition];
        config.sample_sizes = vec![200_000];
        for r in run_experiment(&config).unwrap() {
            assert!(r.regret < 0.02, "{}", r.regret);
        }
    }

    #[test]
    fn full_radius_is_maximally_conservative() {
        let config = quick("random_dirichlet");
        let prepared = prepare(&config).unwrap();
        let Prepared::Tabular(domain, _) = &prepared else { panic!() };
        let truth = domain.sample_ground_truth(&mut seed::rng(1)).unwrap();
        let mdp = &truth.mdp;
        let sets = AmbiguitySet::uniform_radius(mdp.transitions().to_vec(), 2.0).unwrap();
        let (v, pi) = robust_value_iteration(mdp.rewards(), mdp.discount(), &sets, 1e-9).unwrap();
        let est = total_return(&v, mdp.initial_dist()).unwrap();
        // the worst case over the whole simplex is the value of staying in the worst state forever
        let true_return = total_return(&policy_evaluation(mdp, &pi).unwrap(), mdp.initial_dist()).unwrap();
        assert!(est <= true_return);
        let best = |s: usize| mdp.rewards()[s].iter().cloned().fold(f64::MIN, f64::max);
        let gamma = mdp.discount();
        let worst = (0..mdp.num_states()).map(best).fold(f64::INFINITY, f64::min) / (1.0 - gamma);
        for s in 0..mdp.num_states() {
            assert!((v[s] - (best(s) + gamma * worst)).abs() < 1e-6);
        }
    }

    #[test]
    fn outputs_are_written() {
        let config = quick("single_state_inventory");
        let rows = run_experiment(&config).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_outputs(dir.path(), &config, &rows).unwrap();
        let text = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
        assert!(text.starts_with("method,sample_size,replication,seed,safe_return,true_return,true_opt,regret,violation\n"));
        assert_eq!(text.lines().count(), rows.len() + 1);
        let back: ExperimentConfig = crate::io::read_json(dir.path().join("config.json")).unwrap();
        assert_eq!(back, config);
        assert!(std::fs::read_to_string(dir.path().join("aggregate.csv")).unwrap().starts_with("method,sample_size,replications"));
    }
}
