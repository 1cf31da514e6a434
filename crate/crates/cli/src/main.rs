//! `masg`: run experiments, check certificates and inspect schedules.
//!
//! Exit codes: 0 success, 1 invalid input, 2 a run diverged, 3 a
//! verification check failed.

use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use masg_core::certify::{asymptotic_rate, certified_residual};
use masg_core::harness::{emit_csv, format_float as f, run_algorithm, run_experiment, write_csv, ExperimentSpec};
use masg_core::optimizers::{ac_sa, ac_sa_as_asg_params, varying_asg, AcsaParams};
use masg_core::problems::make_cycle_quadratic;
use masg_core::rng::data_rng;
use masg_core::schedules::{n1_fixed_rate, n1_universal, StagePlan};
use masg_core::{critical_momentum, DVector, Error, NoiseInjector, NoiseStream, StrongConvexityProfile};
use rand::Rng;

#[derive(Parser)]
#[command(name = "masg", version, about = "Multistage accelerated stochastic gradient toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one algorithm from an experiment file for one seed and print its trace.
    Run {
        spec: PathBuf,
        /// Algorithm name; must appear under `[algorithms]` in the file.
        #[arg(long)]
        algo: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run a full experiment file and write the aggregated CSV report.
    Bench {
        spec: PathBuf,
        /// Overrides `run.output`; without either the report goes to stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Check the certificate residual over a grid of stepsizes.
    Verify {
        /// Strong convexity; with `--l`, checks one profile instead of the default set.
        #[arg(long, requires = "l")]
        mu: Option<f64>,
        #[arg(long, requires = "mu")]
        l: Option<f64>,
        /// Log-spaced stepsizes in `[1e-4/L, 1/L]`.
        #[arg(long, default_value_t = 10)]
        alphas: usize,
        /// Allowed minimum eigenvalue relative to the trace norm.
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
    },
    /// Print asymptotic rates over a stepsize and momentum grid.
    Rate {
        #[arg(long)]
        mu: f64,
        #[arg(long)]
        l: f64,
        #[arg(long, default_value_t = 20)]
        alphas: usize,
        #[arg(long, default_value_t = 20)]
        betas: usize,
    },
    /// Print a stage plan as a table.
    Schedule {
        #[arg(long)]
        mu: f64,
        #[arg(long)]
        l: f64,
        #[arg(long, default_value_t = 1.0)]
        p: f64,
        /// Explicit first stage length.
        #[arg(long, conflicts_with = "rule")]
        n1: Option<u64>,
        #[arg(long, value_enum, default_value_t = Rule::FixedRate)]
        rule: Rule,
        /// Constant of the universal rule.
        #[arg(long, default_value_t = 2.0)]
        c: f64,
        /// Total iterations to cover; required by the universal rule.
        #[arg(long, conflicts_with = "stages")]
        budget: Option<u64>,
        /// Number of stages, when no budget is given.
        #[arg(long, default_value_t = 5)]
        stages: usize,
    },
    /// Compare AC-SA with its ASG reparameterization on random parameter sequences.
    AcsaCheck {
        #[arg(long, default_value_t = 5)]
        sequences: usize,
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long, default_value_t = 100)]
        steps: usize,
        #[arg(long, default_value_t = 1e-2)]
        sigma2: f64,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Rule {
    FixedRate,
    Universal,
}

enum Outcome {
    Done,
    Diverged,
    CheckFailed,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let mut out = io::stdout().lock();
    match execute(cli.command, &mut out) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::Diverged) => ExitCode::from(2),
        Ok(Outcome::CheckFailed) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Divergence { .. } => 2,
                _ => 1,
            })
        }
    }
}

fn io_err(e: io::Error) -> Error {
    Error::Io { path: PathBuf::from("<stdout>"), source: e }
}

fn execute(command: Command, out: &mut dyn Write) -> masg_core::Result<Outcome> {
    match command {
        Command::Run { spec, algo, seed } => run(spec, &algo, seed, out),
        Command::Bench { spec, output } => bench(spec, output, out),
        Command::Verify { mu, l, alphas, tol } => verify(mu.zip(l), alphas, tol, out),
        Command::Rate { mu, l, alphas, betas } => rate(mu, l, alphas, betas, out),
        Command::Schedule { mu, l, p, n1, rule, c, budget, stages } => {
            schedule(mu, l, p, n1, rule, c, budget, stages, out)
        }
        Command::AcsaCheck { sequences, seeds, steps, sigma2, tol } => {
            acsa_check(sequences, seeds, steps, sigma2, tol, out)
        }
    }
}

fn run(path: PathBuf, algo: &str, seed: u64, out: &mut dyn Write) -> masg_core::Result<Outcome> {
    let spec = ExperimentSpec::from_path(&path)?;
    let params = spec
        .algorithms
        .get(algo)
        .ok_or_else(|| Error::Spec(format!("`{algo}` is not listed under [algorithms]")))?;
    let oracle = spec.problem.build()?.with_noise(spec.noise.injector()?, spec.noise.seed)?;
    let x0 = DVector::zeros(oracle.dim());
    let trace = run_algorithm(algo, params, &oracle, &x0, spec.run.budget, seed)?;
    writeln!(out, "iter,stage,within,subopt").map_err(io_err)?;
    for p in &trace.points {
        writeln!(out, "{},{},{},{}", p.iter, p.stage, p.within, f(p.subopt)).map_err(io_err)?;
    }
    Ok(Outcome::Done)
}

fn bench(path: PathBuf, output: Option<PathBuf>, out: &mut dyn Write) -> masg_core::Result<Outcome> {
    let spec = ExperimentSpec::from_path(&path)?;
    let report = run_experiment(&spec)?;
    match output.or_else(|| spec.run.output.clone()) {
        Some(file) => {
            write_csv(&report, &file)?;
            log::info!("wrote {}", file.display());
        }
        None => out.write_all(&emit_csv(&report)?).map_err(io_err)?,
    }
    if report.has_divergence() {
        for d in &report.diverged {
            eprintln!("diverged: {} seed {} at stage {}, iteration {}", d.algo, d.seed, d.stage, d.iteration);
        }
        return Ok(Outcome::Diverged);
    }
    Ok(Outcome::Done)
}

const VERIFY_PROFILES: [(f64, f64); 5] = [(0.01, 1.0), (0.1, 1.0), (1.0, 1.0), (1.0, 10.0), (1.0, 100.0)];

fn log_grid(count: usize, decades: f64) -> Vec<f64> {
    if count <= 1 {
        return vec![1.0];
    }
    (0..count).map(|j| 10f64.powf(-decades * j as f64 / (count - 1) as f64)).collect()
}

fn verify(profile: Option<(f64, f64)>, alphas: usize, tol: f64, out: &mut dyn Write) -> masg_core::Result<Outcome> {
    if alphas == 0 {
        return Err(Error::Spec("--alphas must be positive".into()));
    }
    let profiles = match profile {
        Some(p) => vec![p],
        None => VERIFY_PROFILES.to_vec(),
    };
    writeln!(out, "mu,L,alpha,min_eigenvalue,trace_norm,passed").map_err(io_err)?;
    let mut failures = 0;
    for (mu, l) in profiles {
        let profile = StrongConvexityProfile::new(mu, l)?;
        let mut worst = f64::INFINITY;
        for scale in log_grid(alphas, 4.0) {
            let alpha = scale / l;
            let r = certified_residual(alpha, &profile)?;
            let passed = r.is_psd(tol);
            if !passed {
                failures += 1;
            }
            if r.trace_norm > 0.0 {
                worst = worst.min(r.min_eigenvalue / r.trace_norm);
            }
            writeln!(out, "{},{},{},{},{},{passed}", f(mu), f(l), f(alpha), f(r.min_eigenvalue), f(r.trace_norm)).map_err(io_err)?;
        }
        eprintln!("mu={mu} L={l}: worst min eigenvalue / trace norm = {worst:e}");
    }
    Ok(if failures == 0 { Outcome::Done } else { Outcome::CheckFailed })
}

fn rate(mu: f64, l: f64, alphas: usize, betas: usize, out: &mut dyn Write) -> masg_core::Result<Outcome> {
    let profile = StrongConvexityProfile::new(mu, l)?;
    if alphas == 0 || betas == 0 {
        return Err(Error::Spec("grid sizes must be positive".into()));
    }
    writeln!(out, "alpha,beta,rho,critical_beta").map_err(io_err)?;
    for scale in log_grid(alphas, 3.0) {
        let alpha = scale / l;
        let crit = critical_momentum(alpha, mu);
        for j in 0..betas {
            let beta = j as f64 / betas as f64;
            writeln!(out, "{},{},{},{}", f(alpha), f(beta), f(asymptotic_rate(alpha, beta, &profile)), f(crit)).map_err(io_err)?;
        }
        writeln!(out, "{},{},{},{}", f(alpha), f(crit), f(asymptotic_rate(alpha, crit, &profile)), f(crit)).map_err(io_err)?;
    }
    Ok(Outcome::Done)
}

#[allow(clippy::too_many_arguments)]
fn schedule(
    mu: f64,
    l: f64,
    p: f64,
    n1: Option<u64>,
    rule: Rule,
    c: f64,
    budget: Option<u64>,
    stages: usize,
    out: &mut dyn Write,
) -> masg_core::Result<Outcome> {
    let profile = StrongConvexityProfile::new(mu, l)?;
    let n1 = match (n1, rule) {
        (Some(n1), _) => n1,
        (None, Rule::FixedRate) => n1_fixed_rate(&profile, p)?,
        (None, Rule::Universal) => {
            let budget = budget.ok_or_else(|| Error::Spec("the universal rule needs --budget".into()))?;
            let (n1, warning) = n1_universal(&profile, budget, c)?;
            if let Some(w) = warning {
                eprintln!("warning: {w}");
            }
            n1
        }
    };
    let plan = match budget {
        Some(b) => StagePlan::covering(profile, p, n1, b)?,
        None => StagePlan::geometric(profile, p, n1, stages)?,
    };
    writeln!(out, "k,n_k,alpha_k_times_L,beta_k,N_k").map_err(io_err)?;
    for (k, len, alpha_l, beta, total) in plan.table() {
        writeln!(out, "{k},{len},{},{},{total}", f(alpha_l), f(beta)).map_err(io_err)?;
    }
    Ok(Outcome::Done)
}

fn acsa_check(
    sequences: usize,
    seeds: u64,
    steps: usize,
    sigma2: f64,
    tol: f64,
    out: &mut dyn Write,
) -> masg_core::Result<Outcome> {
    let oracle = make_cycle_quadratic(100, 0.01, 2024)?.with_noise(NoiseInjector::AdditiveGaussian { sigma2 }, 11)?;
    let (mu, l) = (oracle.strong_convexity(), oracle.lipschitz());
    let x0 = DVector::zeros(oracle.dim());
    let mut rng = data_rng(77);
    let rel = |u: &DVector<f64>, v: &DVector<f64>| (u - v).norm() / u.norm().max(v.norm()).max(f64::MIN_POSITIVE);
    writeln!(out, "sequence,seed,calls,max_query_deviation,final_iterate_deviation,passed").map_err(io_err)?;
    let mut failures = 0;
    for s in 0..sequences {
        let eta: Vec<f64> = (0..steps).map(|_| rng.random_range(0.05..=1.0)).collect();
        let gamma: Vec<f64> = (0..steps).map(|_| l * rng.random_range(0.5..4.0)).collect();
        let params = AcsaParams::new(eta, gamma)?;
        let (alphas, betas) = ac_sa_as_asg_params(&params, mu)?;
        for seed in 0..seeds {
            let mut s1 = NoiseStream::new(seed);
            let mut s2 = NoiseStream::new(seed);
            let a = ac_sa(&x0, &params, &oracle, &mut s1, true)?;
            let b = varying_asg(&x0, &alphas, &betas, &oracle, &mut s2, true)?;
            let iter_dev = rel(a.final_x(), b.final_x());
            let (qa, qb) = (a.queries.unwrap_or_default(), b.queries.unwrap_or_default());
            let query_dev = qa.iter().zip(&qb).map(|(u, v)| rel(u, v)).fold(0.0, f64::max);
            let passed = s1.calls() == s2.calls() && qa.len() == qb.len() && query_dev <= tol && iter_dev <= tol;
            if !passed {
                failures += 1;
            }
            writeln!(out, "{s},{seed},{},{},{},{passed}", s1.calls(), f(query_dev), f(iter_dev)).map_err(io_err)?;
        }
    }
    Ok(if failures == 0 { Outcome::Done } else { Outcome::CheckFailed })
}
