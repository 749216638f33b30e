//! `safe-rmdp`: solve robust MDPs from logged data and run replicated
//! experiments on the built-in domains.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use safe_rmdp::domains::DomainConfig;
use safe_rmdp::experiments::{
    aggregate, run_experiment, solve_from_data, write_outputs, AggregateRow, ExperimentConfig, MethodId,
    MethodSolution, Protocol, SolveOptions,
};
use safe_rmdp::{io as files, Error};

#[derive(Parser)]
#[command(name = "safe-rmdp", version, about = "Robust MDPs with safe return estimates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a method's ambiguity sets from data and solve the robust MDP.
    Solve(SolveArgs),
    /// Run a replicated experiment and write per-replication and summary CSVs.
    Experiment(ExperimentArgs),
    /// List the built-in domains and their default experiments.
    Domains {
        /// Print the defaults as JSON.
        #[arg(long)]
        json: bool,
    },
}

#[derive(clap::Args)]
struct SolveArgs {
    /// Model JSON with rewards, discount, initial distribution and transitions.
    #[arg(long)]
    mdp: PathBuf,
    /// Transition log CSV with header `s,a,sprime`.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Posterior draws CSV `s,a,sample_index,p0,...`, used instead of sampling.
    #[arg(long)]
    posterior: Option<PathBuf>,
    #[arg(long, default_value = "RSVF")]
    method: String,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    #[arg(long, default_value_t = 2019)]
    seed: u64,
    /// Number of posterior draws.
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long, default_value_t = 20)]
    max_iter: usize,
    /// Treat never-observed successors as impossible in the Hoeffding sets.
    #[arg(long)]
    good_turing: bool,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(clap::Args)]
struct ExperimentArgs {
    /// Run configuration JSON.
    config: Option<PathBuf>,
    /// Start from a built-in domain's defaults instead of a file.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// Restrict to these methods (repeatable).
    #[arg(long)]
    method: Vec<String>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of posterior draws.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    replications: Option<usize>,
    /// Worker threads; defaults to all cores.
    #[arg(long)]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long)]
    output: Option<PathBuf>,
}

/// Experiment configuration as written by users: a built-in domain plus
/// overrides. Unset fields take the domain's defaults.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    domain: String,
    #[serde(default)]
    domain_overrides: serde_json::Map<String, Value>,
    methods: Option<Vec<MethodId>>,
    delta: Option<f64>,
    sample_sizes: Option<Vec<usize>>,
    replications: Option<usize>,
    master_seed: Option<u64>,
    posterior_samples: Option<usize>,
    max_iter: Option<usize>,
    protocol: Option<Protocol>,
    good_turing: Option<bool>,
    tol: Option<f64>,
    output: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Input(String),
    Solver(String),
}

impl Failure {
    fn from_lib(e: Error) -> Self {
        if e.is_solver_failure() {
            Failure::Solver(e.to_string())
        } else {
            Failure::Input(e.to_string())
        }
    }
}

fn input(e: impl std::fmt::Display) -> Failure {
    Failure::Input(e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    let outcome = match cli.command {
        Command::Solve(args) => cmd_solve(args),
        Command::Experiment(args) => cmd_experiment(args),
        Command::Domains { json } => cmd_domains(json),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Input(msg)) => {
            eprintln!("input error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Solver(msg)) => {
            eprintln!("solver error: {msg}");
            ExitCode::from(3)
        }
    }
}

#[derive(Serialize)]
struct SolveReport<'a> {
    options: &'a SolveOptions,
    #[serde(flatten)]
    solution: &'a MethodSolution,
}

fn cmd_solve(args: SolveArgs) -> Result<(), Failure> {
    let method: MethodId = args.method.parse().map_err(|e: Error| Failure::Usage(e.to_string()))?;
    let mdp = files::read_mdp(&args.mdp).map_err(|e| input(format!("{}: {e}", args.mdp.display())))?;
    let data = args
        .data
        .as_ref()
        .map(|path| {
            files::read_dataset(path, mdp.num_states(), mdp.num_actions())
                .map_err(|e| input(format!("{}: {e}", path.display())))
        })
        .transpose()?;
    let posterior = args
        .posterior
        .as_ref()
        .map(|path| files::read_posterior_samples(path).map_err(|e| input(format!("{}: {e}", path.display()))))
        .transpose()?;
    let needs_data = matches!(method, MethodId::Hoeffding | MethodId::HoeffdingMonotone);
    if data.is_none() && (needs_data || (posterior.is_none() && method != MethodId::MeanTransition)) {
        return Err(Failure::Usage(format!("{method} needs --data")));
    }
    if !(args.delta > 0.0 && args.delta < 1.0) || args.samples == 0 || args.max_iter == 0 {
        return Err(Failure::Usage("--delta must lie in (0, 1); --samples and --max-iter must be positive".into()));
    }
    let options = SolveOptions {
        delta: args.delta,
        posterior_samples: args.samples,
        seed: args.seed,
        good_turing: args.good_turing,
        max_iter: args.max_iter,
        ..SolveOptions::default()
    };
    let solution = solve_from_data(&mdp, data.as_ref(), method, posterior.as_ref(), &options).map_err(Failure::from_lib)?;
    let mut text = serde_json::to_string_pretty(&SolveReport {
        options: &options,
        solution: &solution,
    })
    .map_err(input)?;
    text.push('\n');
    match &args.output {
        Some(path) => fs::write(path, text).map_err(|e| input(format!("{}: {e}", path.display()))),
        None => emit(&text),
    }
}

/// Applies `overrides` to the preset domain, refusing keys it does not have.
fn domain_with_overrides(name: &str, overrides: &serde_json::Map<String, Value>) -> Result<DomainConfig, Failure> {
    let preset = DomainConfig::preset(name).ok_or_else(|| {
        input(format!("unknown domain {name:?}; expected one of {}", DomainConfig::PRESETS.join(", ")))
    })?;
    if overrides.is_empty() {
        return Ok(preset);
    }
    let Value::Object(mut fields) = serde_json::to_value(&preset).map_err(input)? else {
        unreachable!("domain configs serialize to objects")
    };
    for (key, value) in overrides {
        if key == "kind" || !fields.contains_key(key) {
            return Err(input(format!("domain {name} has no parameter {key:?}")));
        }
        fields.insert(key.clone(), value.clone());
    }
    serde_json::from_value(Value::Object(fields)).map_err(|e| input(format!("domain overrides: {e}")))
}

fn load_run_config(args: &ExperimentArgs) -> Result<(ExperimentConfig, Option<PathBuf>), Failure> {
    let run: RunConfig = match (&args.config, &args.preset) {
        (Some(path), _) => {
            let text = fs::read_to_string(path).map_err(|e| input(format!("{}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| input(format!("{}: {e}", path.display())))?
        }
        (None, Some(name)) => RunConfig {
            domain: name.clone(),
            ..RunConfig::default()
        },
        (None, None) => return Err(Failure::Usage("give a config file or --preset".into())),
    };
    let domain = domain_with_overrides(&run.domain, &run.domain_overrides)?;
    let mut config = ExperimentConfig::preset(&run.domain).expect("preset exists for every domain");
    config.domain = domain;
    let methods = if args.method.is_empty() {
        run.methods
    } else {
        Some(
            args.method
                .iter()
                .map(|m| m.parse())
                .collect::<Result<Vec<MethodId>, Error>>()
                .map_err(|e| Failure::Usage(e.to_string()))?,
        )
    };
    config.methods = methods.unwrap_or(config.methods);
    config.delta = args.delta.or(run.delta).unwrap_or(config.delta);
    config.sample_sizes = run.sample_sizes.unwrap_or(config.sample_sizes);
    config.replications = args.replications.or(run.replications).unwrap_or(config.replications);
    config.master_seed = args.seed.or(run.master_seed).unwrap_or(config.master_seed);
    config.posterior_samples = args.samples.or(run.posterior_samples).unwrap_or(config.posterior_samples);
    config.max_iter = args.max_iter.or(run.max_iter).unwrap_or(config.max_iter);
    config.protocol = run.protocol.unwrap_or(config.protocol);
    config.good_turing = run.good_turing.unwrap_or(config.good_turing);
    config.tol = run.tol.unwrap_or(config.tol);
    config.validate().map_err(input)?;
    Ok((config, args.output.clone().or(run.output)))
}

fn cmd_experiment(args: ExperimentArgs) -> Result<(), Failure> {
    let (config, output) = load_run_config(&args)?;
    let output = output.unwrap_or_else(|| PathBuf::from(format!("results-{}", config.domain.name())));
    let results = match args.jobs {
        Some(0) => return Err(Failure::Usage("--jobs must be positive".into())),
        Some(jobs) => rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Failure::Usage(e.to_string()))?
            .install(|| run_experiment(&config)),
        None => run_experiment(&config),
    }
    .map_err(Failure::from_lib)?;
    write_outputs(&output, &config, &results).map_err(|e| input(format!("{}: {e}", output.display())))?;
    emit(&summary(&aggregate(&results), &output))
}

/// Writes to stdout; a closed pipe (e.g. `| head`) is not an error.
fn emit(text: &str) -> Result<(), Failure> {
    match io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(input(e)),
        _ => Ok(()),
    }
}

fn summary(rows: &[AggregateRow], output: &Path) -> String {
    let mut out = format!(
        "{:<18} {:>6} {:>5} {:>12} {:>12} {:>10} {:>17}\n",
        "method", "n", "reps", "mean_regret", "mean_safe", "violation", "95% interval"
    );
    for r in rows {
        out += &format!(
            "{:<18} {:>6} {:>5} {:>12.5} {:>12.5} {:>10.4} [{:.4}, {:.4}]{}\n",
            r.method.name(),
            r.sample_size,
            r.replications,
            r.mean_regret,
            r.mean_safe_return,
            r.violation_rate,
            r.violation_ci_low,
            r.violation_ci_high,
            if r.failures > 0 {
                format!("  ({} failed)", r.failures)
            } else {
                String::new()
            }
        );
    }
    out + &format!("results written to {}\n", output.display())
}

fn cmd_domains(json: bool) -> Result<(), Failure> {
    let presets: Vec<ExperimentConfig> = DomainConfig::PRESETS
        .iter()
        .map(|name| ExperimentConfig::preset(name).expect("preset exists"))
        .collect();
    if json {
        let listing: serde_json::Map<String, Value> = DomainConfig::PRESETS
            .iter()
            .zip(&presets)
            .map(|(name, config)| Ok((name.to_string(), serde_json::to_value(config)?)))
            .collect::<Result<_, serde_json::Error>>()
            .map_err(input)?;
        return emit(&(serde_json::to_string_pretty(&listing).map_err(input)? + "\n"));
    }
    let mut out = String::new();
    for (name, config) in DomainConfig::PRESETS.iter().zip(&presets) {
        let methods: Vec<&str> = config.methods.iter().map(|m| m.name()).collect();
        out += &format!(
            "{name}\n  delta {}, sample sizes {:?}, {} replications, {} posterior draws, seed {}\n",
            config.delta, config.sample_sizes, config.replications, config.posterior_samples, config.master_seed
        );
        out += &format!("  methods {}\n", methods.join(", "));
        out += &format!("  parameters {}\n", serde_json::to_string(&config.domain).map_err(input)?);
    }
    emit(&out)
}
