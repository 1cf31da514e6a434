//! Declarative experiments: a TOML spec names a problem, a noise source, a
//! set of algorithms and a list of seeds. Every (algorithm, seed) cell runs
//! independently, traces are averaged per iteration with normal-approximation
//! 95% intervals, and the report is written as CSV.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::certify;
use crate::error::{Error, Result};
use crate::optimizers::{self, AcsaParams, RunTrace};
use crate::oracle::{GradientOracle, NoiseInjector};
use crate::problems;
use crate::rng::NoiseStream;
use crate::schedules::{n1_fixed_rate, n1_universal, StagePlan};

/// Iterations up to this index are reported densely; later ones are thinned
/// logarithmically.
pub const DENSE_LIMIT: u64 = 10_000;
const POINTS_PER_DECADE: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    CycleQuadratic,
    ConvexCycleQuadratic,
    Logistic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub kind: ProblemKind,
    pub dimension: usize,
    /// Regularization of the cycle quadratic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    /// Number of logistic samples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl ProblemConfig {
    pub fn build(&self) -> Result<GradientOracle> {
        match self.kind {
            ProblemKind::CycleQuadratic => {
                let lambda = self.lambda.ok_or_else(|| Error::Spec("cycle-quadratic needs `lambda`".into()))?;
                problems::make_cycle_quadratic(self.dimension, lambda, self.seed)
            }
            ProblemKind::ConvexCycleQuadratic => problems::make_convex_cycle_quadratic(self.dimension, self.seed),
            ProblemKind::Logistic => {
                let n = self.samples.ok_or_else(|| Error::Spec("logistic needs `samples`".into()))?;
                problems::make_synthetic_logistic(n, self.dimension, self.seed)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    None,
    AdditiveGaussian,
    StateDependent,
    Minibatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub kind: NoiseKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl NoiseConfig {
    pub fn injector(&self) -> Result<NoiseInjector> {
        let need = |v: Option<f64>, key: &str| v.ok_or_else(|| Error::Spec(format!("noise kind needs `{key}`")));
        Ok(match self.kind {
            NoiseKind::None => NoiseInjector::Exact,
            NoiseKind::AdditiveGaussian => NoiseInjector::AdditiveGaussian { sigma2: need(self.sigma2, "sigma2")? },
            NoiseKind::StateDependent => NoiseInjector::StateDependentGaussian {
                sigma2: need(self.sigma2, "sigma2")?,
                eta2: need(self.eta2, "eta2")?,
            },
            NoiseKind::Minibatch => NoiseInjector::Minibatch {
                batch_size: self.batch_size.ok_or_else(|| Error::Spec("minibatch needs `batch_size`".into()))?,
            },
        })
    }
}

/// First-stage rule for the multistage methods.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FirstStageRule {
    /// `ceil((p+1) sqrt(kappa) ln(12 (p+1) kappa))`.
    FixedRate,
    /// `floor(n / c)`.
    Universal,
}

/// Parameters of one algorithm entry. Which keys apply depends on the
/// algorithm; keys that do not apply are rejected.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmParams {
    /// Rate exponent (m-asg, m-asg-general, single-stage).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    /// First stage rule (m-asg, m-asg-general).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_stage: Option<FirstStageRule>,
    /// Explicit first stage length, overriding the rule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n1: Option<u64>,
    /// Budget fraction constant for the universal rule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    /// Initial gap bound (m-asg-star); defaults to the realized `f(x0) - f*`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    /// Constant AC-SA sequences.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
}

/// Names accepted under `[algorithms.<name>]`.
pub const ALGORITHMS: &[&str] = &[
    "m-asg",
    "m-asg-star",
    "m-asg-general",
    "gd",
    "asg",
    "ac-sa",
    "single-stage",
    "convex-asg",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub budget: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    /// Shorthand for `seeds = [0, 1, ..., seed_count - 1]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed_count: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub problem: ProblemConfig,
    pub noise: NoiseConfig,
    pub algorithms: BTreeMap<String, AlgorithmParams>,
    pub run: RunConfig,
}

impl ExperimentSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::Spec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Spec(e.to_string()))
    }

    pub fn seeds(&self) -> Vec<u64> {
        match (&self.run.seeds, self.run.seed_count) {
            (Some(s), _) => s.clone(),
            (None, Some(c)) => (0..c).collect(),
            (None, None) => Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, params) in &self.algorithms {
            if !ALGORITHMS.contains(&name.as_str()) {
                return Err(Error::Spec(format!("unknown algorithm `{name}`; expected one of {ALGORITHMS:?}")));
            }
            check_keys(name, params)?;
        }
        if self.algorithms.is_empty() {
            return Err(Error::Spec("no algorithms listed".into()));
        }
        match (&self.run.seeds, self.run.seed_count) {
            (Some(_), Some(_)) => return Err(Error::Spec("give either `seeds` or `seed_count`, not both".into())),
            (None, None) => return Err(Error::Spec("`run` needs `seeds` or `seed_count`".into())),
            _ => {}
        }
        let seeds = self.seeds();
        if seeds.is_empty() {
            return Err(Error::Spec("at least one seed is required".into()));
        }
        let mut sorted = seeds.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Spec("seeds must be distinct".into()));
        }
        if self.run.budget == 0 {
            return Err(Error::Spec("budget must be positive".into()));
        }
        self.noise.injector()?;
        Ok(())
    }
}

fn check_keys(name: &str, p: &AlgorithmParams) -> Result<()> {
    let used: [(&str, bool); 7] = [
        ("p", p.p.is_some()),
        ("first_stage", p.first_stage.is_some()),
        ("n1", p.n1.is_some()),
        ("c", p.c.is_some()),
        ("delta", p.delta.is_some()),
        ("eta", p.eta.is_some()),
        ("gamma", p.gamma.is_some()),
    ];
    let allowed: &[&str] = match name {
        "m-asg" | "m-asg-general" => &["p", "first_stage", "n1", "c"],
        "m-asg-star" => &["delta"],
        "single-stage" => &["p"],
        "ac-sa" => &["eta", "gamma"],
        _ => &[],
    };
    for (key, set) in used {
        if set && !allowed.contains(&key) {
            return Err(Error::Spec(format!("key `{key}` does not apply to `{name}`")));
        }
    }
    if name == "ac-sa" && (p.eta.is_none() || p.gamma.is_none()) {
        return Err(Error::Spec("`ac-sa` needs constant `eta` and `gamma`".into()));
    }
    Ok(())
}

/// Theoretical curve values attached to an algorithm's iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundCurve {
    pub name: String,
    pub points: BTreeMap<u64, f64>,
}

/// Seed-independent description of how an algorithm was run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSetup {
    pub echo: String,
    pub bound: Option<BoundCurve>,
}

fn multistage_plan(
    params: &AlgorithmParams,
    oracle: &GradientOracle,
    budget: u64,
) -> Result<(StagePlan, String)> {
    let profile = oracle.profile()?;
    let p = params.p.unwrap_or(1.0);
    let (n1, rule) = match (params.n1, params.first_stage.unwrap_or(FirstStageRule::FixedRate)) {
        (Some(n1), _) => (n1, "explicit".to_string()),
        (None, FirstStageRule::FixedRate) => (n1_fixed_rate(&profile, p)?, "fixed-rate".to_string()),
        (None, FirstStageRule::Universal) => {
            let c = params.c.unwrap_or(2.0);
            (n1_universal(&profile, budget, c)?.0, format!("universal c={c}"))
        }
    };
    let plan = StagePlan::covering(profile, p, n1, budget)?;
    let echo = format!(
        "p={p} n1={n1} first_stage={rule} base_len={} stages={}",
        plan.base_len(),
        plan.num_stages()
    );
    Ok((plan, echo))
}

/// Runs one algorithm for one seed from `x0` with total budget `budget`.
pub fn run_algorithm(
    name: &str,
    params: &AlgorithmParams,
    oracle: &GradientOracle,
    x0: &DVector<f64>,
    budget: u64,
    seed: u64,
) -> Result<RunTrace> {
    let mut stream = NoiseStream::new(seed);
    let s = &mut stream;
    match name {
        "m-asg" => {
            let (plan, _) = multistage_plan(params, oracle, budget)?;
            optimizers::m_asg_with(x0, &plan, oracle, s, Some(budget), Default::default())
        }
        "m-asg-general" => {
            let (plan, _) = multistage_plan(params, oracle, budget)?;
            optimizers::m_asg_general_noise(x0, &plan, oracle.noise().eta2, oracle, s, Some(budget), false)
        }
        "m-asg-star" => {
            let delta = match params.delta {
                Some(d) => d,
                None => oracle.suboptimality(x0)?,
            };
            Ok(optimizers::m_asg_star(x0, delta, budget, oracle, s)?.trace)
        }
        "gd" => optimizers::standard_gd(x0, oracle, budget, s),
        "asg" => optimizers::standard_asg(x0, oracle, budget, s),
        "ac-sa" => {
            let n = budget as usize;
            let acsa = AcsaParams::new(vec![params.eta.unwrap_or(1.0); n], vec![params.gamma.unwrap_or(1.0); n])?;
            optimizers::ac_sa(x0, &acsa, oracle, s, false)
        }
        "single-stage" => Ok(optimizers::single_stage(x0, budget, params.p.unwrap_or(1.0), oracle, s)?.trace),
        "convex-asg" => Ok(optimizers::convex_asg(x0, oracle, budget, s)?.trace),
        other => Err(Error::Spec(format!("unknown algorithm `{other}`"))),
    }
}

/// Parameters and bound curve of an algorithm; independent of the seed.
pub fn describe_algorithm(
    name: &str,
    params: &AlgorithmParams,
    oracle: &GradientOracle,
    x0: &DVector<f64>,
    budget: u64,
) -> Result<RunSetup> {
    let delta0 = oracle.suboptimality(x0)?;
    let sigma2 = oracle.noise().sigma2;
    let final_point = |name: &str, v: f64| BoundCurve { name: name.to_string(), points: BTreeMap::from([(budget, v)]) };
    Ok(match name {
        "m-asg" => {
            let (plan, echo) = multistage_plan(params, oracle, budget)?;
            let bound = match sigma2 {
                Some(s2) => {
                    let mut points = BTreeMap::new();
                    for (k, end) in plan.prefix_sums().iter().enumerate().skip(1) {
                        if *end <= budget {
                            points.insert(*end, certify::stage_end_bound(&plan, delta0, s2, k)?);
                        }
                    }
                    Some(BoundCurve { name: "stage-end".into(), points })
                }
                None => None,
            };
            RunSetup { echo: format!("{echo} delta0={delta0}"), bound }
        }
        "m-asg-general" => {
            let (plan, echo) = multistage_plan(params, oracle, budget)?;
            let cap = certify::general_noise_step_limit(plan.profile(), oracle.noise().eta2);
            RunSetup { echo: format!("{echo} step_cap={cap}"), bound: None }
        }
        "m-asg-star" => {
            let delta = match params.delta {
                Some(d) => d,
                None => delta0,
            };
            let s2 = oracle.noise().known_sigma2()?;
            let profile = oracle.profile()?;
            let (n1, _) = crate::schedules::n1_balanced(&profile, delta, Some(s2), budget)?;
            let bound = if budget > n1 {
                Some(final_point("balanced", certify::balanced_bound(&profile, n1, budget, s2)?))
            } else {
                None
            };
            RunSetup { echo: format!("p=1 n1={n1} delta={delta} sigma2={s2}"), bound }
        }
        "gd" => RunSetup { echo: format!("alpha={}", 1.0 / oracle.lipschitz()), bound: None },
        "asg" => {
            let sk = oracle.profile()?.sqrt_kappa();
            RunSetup { echo: format!("alpha={} beta={}", 1.0 / oracle.lipschitz(), (sk - 1.0) / (sk + 1.0)), bound: None }
        }
        "ac-sa" => RunSetup {
            echo: format!("eta={} gamma={}", params.eta.unwrap_or(1.0), params.gamma.unwrap_or(1.0)),
            bound: None,
        },
        "single-stage" => {
            let p = params.p.unwrap_or(1.0);
            let profile = oracle.profile()?;
            let bound = match sigma2 {
                Some(s2) if budget >= 2 => {
                    Some(final_point("single-stage", certify::single_stage_bound(&profile, p, budget, delta0, s2)?))
                }
                _ => None,
            };
            RunSetup { echo: format!("p={p} delta0={delta0}"), bound }
        }
        "convex-asg" => {
            let dist2 = (x0 - oracle.optimum()).norm_squared();
            let bound = match sigma2 {
                Some(s2) if budget >= 2 => Some(final_point(
                    "convex",
                    certify::convex_bound(oracle.lipschitz(), budget, delta0, dist2, s2)?,
                )),
                _ => None,
            };
            RunSetup { echo: format!("delta0={delta0} dist2={dist2}"), bound }
        }
        other => return Err(Error::Spec(format!("unknown algorithm `{other}`"))),
    })
}

/// Per-iteration statistics across seeds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregatePoint {
    pub iter: u64,
    pub mean: f64,
    /// `1.96 s / sqrt(m)`; absent for a single sample.
    pub ci95: Option<f64>,
    pub samples: usize,
}

/// Mean and normal-approximation 95% half-width of each column of `series`
/// (`series[seed][i]`). All series must have the same length.
pub fn aggregate_values(iters: &[u64], series: &[Vec<f64>]) -> Result<Vec<AggregatePoint>> {
    if series.is_empty() {
        return Err(Error::Spec("cannot aggregate zero traces".into()));
    }
    if let Some(bad) = series.iter().find(|s| s.len() != iters.len()) {
        return Err(Error::DimensionMismatch { expected: iters.len(), got: bad.len() });
    }
    let m = series.len();
    Ok(iters
        .iter()
        .enumerate()
        .map(|(i, &iter)| {
            let mean = series.iter().map(|s| s[i]).sum::<f64>() / m as f64;
            let ci95 = (m > 1).then(|| {
                let var = series.iter().map(|s| (s[i] - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
                1.96 * var.sqrt() / (m as f64).sqrt()
            });
            AggregatePoint { iter, mean, ci95, samples: m }
        })
        .collect())
}

/// Aggregates suboptimality traces that share an iteration grid.
pub fn aggregate(traces: &[&RunTrace]) -> Result<Vec<AggregatePoint>> {
    let first = traces.first().ok_or_else(|| Error::Spec("cannot aggregate zero traces".into()))?;
    let iters: Vec<u64> = first.points.iter().map(|p| p.iter).collect();
    for t in traces {
        if t.points.len() != iters.len() || t.points.iter().zip(&iters).any(|(p, &i)| p.iter != i) {
            return Err(Error::Spec("traces do not share an iteration grid".into()));
        }
    }
    let series: Vec<Vec<f64>> = traces.iter().map(|t| t.subopts()).collect();
    aggregate_values(&iters, &series)
}

/// Report iterations: every index up to [`DENSE_LIMIT`], then about 100 per
/// decade, always ending at `last`.
pub fn report_grid(last: u64) -> Vec<u64> {
    let mut grid: Vec<u64> = (0..=last.min(DENSE_LIMIT)).collect();
    if last > DENSE_LIMIT {
        let mut j = 1u32;
        loop {
            let exponent = (DENSE_LIMIT as f64).log10() + j as f64 / POINTS_PER_DECADE;
            let v = 10f64.powf(exponent).round() as u64;
            if v >= last {
                break;
            }
            if v > *grid.last().unwrap() {
                grid.push(v);
            }
            j += 1;
        }
        grid.push(last);
    }
    grid
}

/// A seed whose run diverged.
#[derive(Debug, Clone, PartialEq)]
pub struct DivergedRun {
    pub algo: String,
    pub seed: u64,
    pub stage: usize,
    pub iteration: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub iter: u64,
    pub stage: usize,
    pub mean: f64,
    pub ci95: Option<f64>,
    pub samples: usize,
    pub bound_name: Option<String>,
    pub bound_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlgorithmSeries {
    pub algo: String,
    pub setup: String,
    pub rows: Vec<ReportRow>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentReport {
    /// Comment lines echoed into the CSV header.
    pub header: Vec<String>,
    pub series: Vec<AlgorithmSeries>,
    pub diverged: Vec<DivergedRun>,
}

impl ExperimentReport {
    pub fn has_divergence(&self) -> bool {
        !self.diverged.is_empty()
    }

    pub fn series(&self, algo: &str) -> Option<&AlgorithmSeries> {
        self.series.iter().find(|s| s.algo == algo)
    }
}

/// Runs every (algorithm, seed) cell in parallel and aggregates per
/// algorithm. Diverged runs are excluded from the statistics and listed in
/// the report.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    spec.validate()?;
    let base = spec.problem.build()?;
    let oracle = base.with_noise(spec.noise.injector()?, spec.noise.seed)?;
    let x0 = DVector::zeros(oracle.dim());
    let budget = spec.run.budget;
    let mut seeds = spec.seeds();
    seeds.sort_unstable();

    let mut header = vec![
        format!("spec: {}", spec.to_toml_string()?.trim_end().replace('\n', " | ")),
        format!(
            "problem: dim={} mu={} L={} f_star={} delta0={}",
            oracle.dim(),
            oracle.strong_convexity(),
            oracle.lipschitz(),
            oracle.optimal_value(),
            oracle.suboptimality(&x0)?
        ),
        format!("seeds: {seeds:?}"),
    ];

    let mut setups = BTreeMap::new();
    for (name, params) in &spec.algorithms {
        let setup = describe_algorithm(name, params, &oracle, &x0, budget)?;
        header.push(format!("algo {name}: {}", setup.echo));
        setups.insert(name.clone(), setup);
    }

    let cells: Vec<(&String, &AlgorithmParams, u64)> = spec
        .algorithms
        .iter()
        .flat_map(|(n, p)| seeds.iter().map(move |&s| (n, p, s)))
        .collect();
    let results: Vec<Result<RunTrace>> = cells
        .par_iter()
        .map(|(n, p, s)| run_algorithm(n, p, &oracle, &x0, budget, *s))
        .collect();

    let grid = report_grid(budget);
    let mut report = ExperimentReport { header, series: Vec::new(), diverged: Vec::new() };
    let mut by_algo: BTreeMap<&String, Vec<RunTrace>> = BTreeMap::new();
    for ((name, _, seed), res) in cells.iter().zip(results) {
        match res {
            Ok(trace) => by_algo.entry(*name).or_default().push(trace),
            Err(Error::Divergence { stage, iteration }) => {
                log::warn!("{name} diverged for seed {seed} at stage {stage}, iteration {iteration}");
                report.diverged.push(DivergedRun { algo: (*name).clone(), seed: *seed, stage, iteration });
            }
            Err(e) => return Err(e),
        }
    }
    for name in spec.algorithms.keys() {
        let setup = &setups[name];
        let traces = by_algo.remove(name).unwrap_or_default();
        let rows = if traces.is_empty() {
            Vec::new()
        } else {
            let refs: Vec<&RunTrace> = traces.iter().collect();
            let agg = aggregate(&refs)?;
            let first = &traces[0];
            grid.iter()
                .map(|&it| {
                    let a = agg[it as usize];
                    let (bound_name, bound_value) = match &setup.bound {
                        Some(b) => match b.points.get(&it) {
                            Some(v) => (Some(b.name.clone()), Some(*v)),
                            None => (None, None),
                        },
                        None => (None, None),
                    };
                    ReportRow {
                        iter: it,
                        stage: first.points[it as usize].stage,
                        mean: a.mean,
                        ci95: a.ci95,
                        samples: a.samples,
                        bound_name,
                        bound_value,
                    }
                })
                .collect()
        };
        report.series.push(AlgorithmSeries { algo: name.clone(), setup: setup.echo.clone(), rows });
    }
    if report.has_divergence() {
        report.header.push(format!("WARNING: {} diverged runs excluded", report.diverged.len()));
        for d in &report.diverged {
            report
                .header
                .push(format!("diverged: algo={} seed={} stage={} iteration={}", d.algo, d.seed, d.stage, d.iteration));
        }
    }
    Ok(report)
}

/// Shortest round-trip decimal: positional for moderate magnitudes,
/// scientific otherwise.
pub fn format_float(x: f64) -> String {
    let a = x.abs();
    if a == 0.0 || (1e-4..1e15).contains(&a) || !x.is_finite() {
        x.to_string()
    } else {
        format!("{x:e}")
    }
}

pub const CSV_COLUMNS: [&str; 8] = ["algo", "iter", "stage", "mean_subopt", "ci95", "samples", "bound_name", "bound_value"];

/// Serializes the report: `#` comment lines, a column header, one row per
/// (algorithm, iteration). Floats use the shortest round-trip form.
pub fn emit_csv(report: &ExperimentReport) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for line in &report.header {
        let mut s = String::new();
        let _ = writeln!(s, "# {line}");
        out.extend_from_slice(s.as_bytes());
    }
    let csv_err = |source| Error::Csv { path: PathBuf::from("<memory>"), source };
    {
        let mut w = csv::Writer::from_writer(&mut out);
        w.write_record(CSV_COLUMNS).map_err(csv_err)?;
        for s in &report.series {
            for r in &s.rows {
                w.write_record([
                    s.algo.clone(),
                    r.iter.to_string(),
                    r.stage.to_string(),
                    format_float(r.mean),
                    r.ci95.map_or_else(String::new, format_float),
                    r.samples.to_string(),
                    r.bound_name.clone().unwrap_or_default(),
                    r.bound_value.map_or_else(String::new, format_float),
                ])
                .map_err(csv_err)?;
            }
        }
        w.flush().map_err(|source| Error::Io { path: PathBuf::from("<memory>"), source })?;
    }
    Ok(out)
}

pub fn write_csv(report: &ExperimentReport, path: &Path) -> Result<()> {
    let bytes = emit_csv(report)?;
    let mut f = std::fs::File::create(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    f.write_all(&bytes).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

/// One parsed CSV data row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub algo: String,
    pub row: ReportRow,
}

/// Parses CSV written by [`emit_csv`], skipping comment lines.
pub fn parse_csv(bytes: &[u8]) -> Result<Vec<CsvRow>> {
    let mem = PathBuf::from("<memory>");
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(bytes);
    let bad = |what: &str| Error::Spec(format!("malformed CSV field `{what}`"));
    let opt_f64 = |s: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse().map(Some).map_err(|_| bad(s))
        }
    };
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|source| Error::Csv { path: mem.clone(), source })?;
        if rec.len() != CSV_COLUMNS.len() {
            return Err(Error::Spec(format!("expected {} columns, got {}", CSV_COLUMNS.len(), rec.len())));
        }
        rows.push(CsvRow {
            algo: rec[0].to_string(),
            row: ReportRow {
                iter: rec[1].parse().map_err(|_| bad(&rec[1]))?,
                stage: rec[2].parse().map_err(|_| bad(&rec[2]))?,
                mean: rec[3].parse().map_err(|_| bad(&rec[3]))?,
                ci95: opt_f64(&rec[4])?,
                samples: rec[5].parse().map_err(|_| bad(&rec[5]))?,
                bound_name: (!rec[6].is_empty()).then(|| rec[6].to_string()),
                bound_value: opt_f64(&rec[7])?,
            },
        });
    }
    Ok(rows)
}

pub fn read_csv(path: &Path) -> Result<Vec<CsvRow>> {
    let bytes = std::fs::read(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    parse_csv(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"
[problem]
kind = "cycle-quadratic"
dimension = 20
lambda = 0.05
seed = 3

[noise]
kind = "additive-gaussian"
sigma2 = 1e-3
seed = 9

[algorithms.m-asg]
p = 1

[algorithms.gd]

[run]
budget = 120
seeds = [4, 1, 7]
"#;

    #[test]
    fn aggregate_examples() {
        let iters = [0, 1];
        let same = aggregate_values(&iters, &[vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap();
        assert!(same.iter().all(|p| p.ci95 == Some(0.0)));
        let pair = aggregate_values(&[5], &[vec![0.0], vec![2.0]]).unwrap();
        assert_eq!(pair[0].mean, 1.0);
        assert!((pair[0].ci95.unwrap() - 1.96).abs() < 1e-15);
        let single = aggregate_values(&[5], &[vec![3.0]]).unwrap();
        assert_eq!(single[0].ci95, None);
        assert_eq!(single[0].mean, 3.0);
        assert!(aggregate_values(&[1, 2], &[vec![1.0]]).is_err());
    }

    #[test]
    fn float_format_round_trips() {
        for x in [0.0, 1.0, -2.5, 1e-5, 3.0e-300, 1.0 / 3.0, 6.02e23, 123456.789, f64::MIN_POSITIVE] {
            let s = format_float(x);
            assert_eq!(s.parse::<f64>().unwrap(), x, "{s}");
        }
        assert_eq!(format_float(2.5e-7), "2.5e-7");
        assert_eq!(format_float(0.125), "0.125");
    }

    #[test]
    fn grid_is_dense_then_logarithmic() {
        assert_eq!(report_grid(3), vec![0, 1, 2, 3]);
        let g = report_grid(100_000);
        assert_eq!(g[10_000], 10_000);
        assert_eq!(*g.last().unwrap(), 100_000);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        assert!(g.len() < 10_000 + 120);
    }

    #[test]
    fn spec_rejects_unknown_keys_and_names() {
        let bad_key = SMALL.replace("p = 1", "p = 1\nbogus = 2");
        assert!(matches!(ExperimentSpec::from_toml_str(&bad_key), Err(Error::Spec(_))));
        let bad_name = SMALL.replace("[algorithms.gd]", "[algorithms.sgd]");
        assert!(matches!(ExperimentSpec::from_toml_str(&bad_name), Err(Error::Spec(_))));
        let bad_section = format!("{SMALL}\n[extra]\nx = 1\n");
        assert!(ExperimentSpec::from_toml_str(&bad_section).is_err());
        let dup = SMALL.replace("seeds = [4, 1, 7]", "seeds = [4, 4]");
        assert!(ExperimentSpec::from_toml_str(&dup).is_err());
        let misplaced = SMALL.replace("[algorithms.gd]", "[algorithms.gd]\np = 2");
        assert!(ExperimentSpec::from_toml_str(&misplaced).is_err());
    }

    #[test]
    fn spec_round_trips_through_toml() {
        let spec = ExperimentSpec::from_toml_str(SMALL).unwrap();
        let again = ExperimentSpec::from_toml_str(&spec.to_toml_string().unwrap()).unwrap();
        assert_eq!(spec, again);
    }

    #[test]
    fn experiment_is_deterministic_and_seed_order_free() {
        let spec = ExperimentSpec::from_toml_str(SMALL).unwrap();
        let a = emit_csv(&run_experiment(&spec).unwrap()).unwrap();
        let b = emit_csv(&run_experiment(&spec).unwrap()).unwrap();
        assert_eq!(a, b);
        let permuted = ExperimentSpec::from_toml_str(&SMALL.replace("[4, 1, 7]", "[7, 4, 1]")).unwrap();
        let c = run_experiment(&permuted).unwrap();
        let a_report = run_experiment(&spec).unwrap();
        assert_eq!(a_report.series, c.series);
    }

    #[test]
    fn single_seed_report_equals_trace() {
        let spec = ExperimentSpec::from_toml_str(&SMALL.replace("[4, 1, 7]", "[4]")).unwrap();
        let report = run_experiment(&spec).unwrap();
        let oracle = spec.problem.build().unwrap().with_noise(spec.noise.injector().unwrap(), 9).unwrap();
        let trace = run_algorithm("gd", &AlgorithmParams::default(), &oracle, &DVector::zeros(20), 120, 4).unwrap();
        let gd = report.series("gd").unwrap();
        assert_eq!(gd.rows.len(), 121);
        for (row, p) in gd.rows.iter().zip(&trace.points) {
            assert_eq!(row.mean, p.subopt);
            assert_eq!(row.ci95, None);
            assert_eq!(row.samples, 1);
        }
    }

    #[test]
    fn csv_contract() {
        let empty = emit_csv(&ExperimentReport::default()).unwrap();
        assert_eq!(String::from_utf8(empty.clone()).unwrap().trim_end(), CSV_COLUMNS.join(","));
        assert!(parse_csv(&empty).unwrap().is_empty());

        let row = |iter| ReportRow { iter, stage: 1, mean: 0.1 * iter as f64, ci95: None, samples: 2, bound_name: None, bound_value: None };
        let report = ExperimentReport {
            header: vec!["hello".into()],
            series: vec![
                AlgorithmSeries { algo: "a".into(), setup: String::new(), rows: (0..3).map(row).collect() },
                AlgorithmSeries { algo: "b".into(), setup: String::new(), rows: (0..3).map(row).collect() },
            ],
            diverged: Vec::new(),
        };
        let bytes = emit_csv(&report).unwrap();
        let parsed = parse_csv(&bytes).unwrap();
        assert_eq!(parsed.len(), 6);
        assert!(String::from_utf8(bytes).unwrap().starts_with("# hello\n"));
    }

    #[test]
    fn csv_round_trip_preserves_values() {
        let spec = ExperimentSpec::from_toml_str(SMALL).unwrap();
        let report = run_experiment(&spec).unwrap();
        let parsed = parse_csv(&emit_csv(&report).unwrap()).unwrap();
        let original: Vec<(&str, &ReportRow)> =
            report.series.iter().flat_map(|s| s.rows.iter().map(move |r| (s.algo.as_str(), r))).collect();
        assert_eq!(parsed.len(), original.len());
        for (p, (algo, r)) in parsed.iter().zip(original) {
            assert_eq!(p.algo, algo);
            assert_eq!(&p.row, r);
        }
        let stage_end_rows = report.series("m-asg").unwrap().rows.iter().filter(|r| r.bound_value.is_some()).count();
        assert!(stage_end_rows >= 1);
    }

    #[test]
    fn divergence_is_flagged_not_dropped() {
        // AC-SA with a huge gamma-free step on a stiff problem blows up.
        let text = SMALL
            .replace("[algorithms.m-asg]\np = 1\n", "[algorithms.ac-sa]\neta = 1.0\ngamma = 1e-300\n")
            .replace("lambda = 0.05", "lambda = 1e-9");
        let spec = ExperimentSpec::from_toml_str(&text).unwrap();
        let report = run_experiment(&spec).unwrap();
        assert_eq!(report.diverged.len(), 3);
        assert!(report.series("ac-sa").unwrap().rows.is_empty());
        assert_eq!(report.series("gd").unwrap().rows[0].samples, 3);
        assert!(report.header.iter().any(|h| h.starts_with("WARNING")));
    }
}
