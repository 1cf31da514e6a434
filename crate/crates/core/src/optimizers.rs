//! The accelerated stochastic gradient step and the methods built on it:
//! multistage ASG with restarts, its variance-balanced variant, the
//! state-dependent noise variant, a convex-mode wrapper, single-stage runs,
//! and the GD / ASG / AC-SA baselines.
//!
//! Every method makes exactly one noisy oracle call per iteration and is a
//! pure function of its inputs and the [`NoiseStream`] it is handed.

use nalgebra::DVector;

use crate::certify::{self, general_noise_step_limit, LyapunovCertificate};
use crate::error::{domain, Error, Result};
use crate::oracle::{critical_momentum, GradientOracle, IterateState, StrongConvexityProfile};
use crate::problems::regularize_for_convex;
use crate::rng::NoiseStream;
use crate::schedules::{n1_balanced, ScheduleWarning, Stage, StagePlan};

/// Fixed stepsize, momentum and step count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AsgConfig {
    pub alpha: f64,
    pub beta: f64,
    pub steps: u64,
}

impl AsgConfig {
    /// Critical momentum for `alpha`, which must lie in `(0, 1/L]`.
    pub fn critical(alpha: f64, profile: &StrongConvexityProfile, steps: u64) -> Result<Self> {
        profile.check_step(alpha)?;
        Ok(Self { alpha, beta: critical_momentum(alpha, profile.mu()), steps })
    }

    fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(domain(format!("stepsize must be positive, got {}", self.alpha)));
        }
        if !(self.beta.is_finite() && (0.0..1.0).contains(&self.beta)) {
            return Err(domain(format!("momentum must lie in [0, 1), got {}", self.beta)));
        }
        Ok(())
    }
}

/// One recorded iterate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    /// Global iteration index (number of oracle calls so far).
    pub iter: u64,
    pub stage: usize,
    /// Index within the stage; stage boundaries count as the end of a stage.
    pub within: u64,
    pub subopt: f64,
    pub lyapunov: Option<f64>,
}

/// Full iterate at the end of a stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageSnapshot {
    pub stage: usize,
    pub iter: u64,
    pub x: DVector<f64>,
}

/// Scalar trace of a run plus the vectors needed to continue or inspect it.
#[derive(Debug, Clone)]
pub struct RunTrace {
    /// Starts with the initial point at `iter = 0`.
    pub points: Vec<TracePoint>,
    pub stage_ends: Vec<StageSnapshot>,
    pub final_state: IterateState,
    pub oracle_calls: u64,
    /// Number of suboptimality values clamped from tiny negatives to zero.
    pub clamp_count: u64,
    /// Gradient query points, when requested.
    pub queries: Option<Vec<DVector<f64>>>,
}

impl RunTrace {
    pub fn final_x(&self) -> &DVector<f64> {
        &self.final_state.x_curr
    }

    pub fn final_subopt(&self) -> f64 {
        self.points.last().map_or(f64::NAN, |p| p.subopt)
    }

    pub fn iterations(&self) -> u64 {
        self.points.last().map_or(0, |p| p.iter)
    }

    pub fn subopts(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.subopt).collect()
    }
}

/// Which Lyapunov function to evaluate along a run.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Potential {
    #[default]
    None,
    /// The critical-momentum certificate of the current stage stepsize.
    P,
    /// The state-dependent noise certificate with the given `eta2`.
    Q { eta2: f64 },
}

/// Optional recording beyond per-iteration suboptimality.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TraceOptions {
    pub potential: Potential,
    pub record_queries: bool,
}

struct Recorder<'a> {
    oracle: &'a GradientOracle,
    opts: TraceOptions,
    trace: RunTrace,
    cert: Option<LyapunovCertificate>,
}

impl<'a> Recorder<'a> {
    fn new(oracle: &'a GradientOracle, x0: &DVector<f64>, opts: TraceOptions) -> Self {
        Self {
            oracle,
            opts,
            trace: RunTrace {
                points: Vec::new(),
                stage_ends: Vec::new(),
                final_state: IterateState::restart(x0.clone()),
                oracle_calls: 0,
                clamp_count: 0,
                queries: opts.record_queries.then(Vec::new),
            },
            cert: None,
        }
    }

    fn set_stage_step(&mut self, alpha: f64) -> Result<()> {
        self.cert = match self.opts.potential {
            Potential::None => None,
            Potential::P => Some(certify::build_p_alpha(alpha, &self.oracle.profile()?)?),
            Potential::Q { eta2 } => Some(certify::build_q_alpha(alpha, &self.oracle.profile()?, eta2)?),
        };
        Ok(())
    }

    fn record(&mut self, iter: u64, stage: usize, within: u64, state: &IterateState) -> Result<()> {
        let s = match self.oracle.suboptimality_detailed(&state.x_curr) {
            Ok(s) if s.value.is_finite() => s,
            Ok(_) => return Err(Error::Divergence { stage, iteration: iter }),
            Err(Error::NegativeSuboptimality { value }) if !value.is_finite() => {
                return Err(Error::Divergence { stage, iteration: iter });
            }
            Err(e) => return Err(e),
        };
        if s.clamped {
            self.trace.clamp_count += 1;
        }
        let lyapunov = match &self.cert {
            Some(c) => Some(certify::lyapunov_value(c, state, self.oracle)?),
            None => None,
        };
        self.trace.points.push(TracePoint { iter, stage, within, subopt: s.value, lyapunov });
        Ok(())
    }

    fn query(&mut self, y: &DVector<f64>) {
        if let Some(q) = self.trace.queries.as_mut() {
            q.push(y.clone());
        }
    }

    fn finish(mut self, state: IterateState, calls: u64) -> RunTrace {
        self.trace.final_state = state;
        self.trace.oracle_calls = calls;
        self.trace
    }
}

struct Workspace {
    y: DVector<f64>,
    g: DVector<f64>,
}

impl Workspace {
    fn new(d: usize) -> Self {
        Self { y: DVector::zeros(d), g: DVector::zeros(d) }
    }
}

/// `y = (1+beta) x_k - beta x_{k-1}`, `x_{k+1} = y - alpha g(y)`, in place.
/// Returns `false` if the new iterate is not finite.
fn step_in_place(
    state: &mut IterateState,
    alpha: f64,
    beta: f64,
    oracle: &GradientOracle,
    stream: &mut NoiseStream,
    ws: &mut Workspace,
) -> bool {
    ws.y.copy_from(&state.x_curr);
    ws.y *= 1.0 + beta;
    ws.y.axpy(-beta, &state.x_prev, 1.0);
    oracle.noisy_gradient_into(&ws.y, stream, &mut ws.g);
    std::mem::swap(&mut state.x_prev, &mut state.x_curr);
    state.x_curr.copy_from(&ws.y);
    state.x_curr.axpy(-alpha, &ws.g, 1.0);
    state.x_curr.iter().all(|v| v.is_finite())
}

fn check_dims(oracle: &GradientOracle, x0: &DVector<f64>) -> Result<()> {
    if x0.len() != oracle.dim() {
        return Err(Error::DimensionMismatch { expected: oracle.dim(), got: x0.len() });
    }
    Ok(())
}

/// One ASG step from `state`; exactly one oracle call.
pub fn asg_step(
    state: &IterateState,
    config: &AsgConfig,
    oracle: &GradientOracle,
    stream: &mut NoiseStream,
) -> Result<IterateState> {
    config.validate()?;
    check_dims(oracle, &state.x_curr)?;
    let mut next = state.clone();
    let mut ws = Workspace::new(oracle.dim());
    if !step_in_place(&mut next, config.alpha, config.beta, oracle, stream, &mut ws) {
        return Err(Error::Divergence { stage: 1, iteration: 1 });
    }
    Ok(next)
}

/// Runs stages in order with the restart convention (`x_prev = x_curr` at
/// every stage start), stopping after `budget` steps if given.
fn run_stages(
    x0: &DVector<f64>,
    stages: &[Stage],
    oracle: &GradientOracle,
    stream: &mut NoiseStream,
    budget: Option<u64>,
    opts: TraceOptions,
) -> Result<RunTrace> {
    check_dims(oracle, x0)?;
    let total: u64 = stages.iter().map(|s| s.len).sum();
    let limit = budget.map_or(total, |b| b.min(total));
    let start_calls = stream.calls();
    let mut rec = Recorder::new(oracle, x0, opts);
    let mut ws = Workspace::new(oracle.dim());
    let mut state = IterateState::restart(x0.clone());
    if let Some(first) = stages.first() {
        rec.set_stage_step(first.alpha)?;
    }
    rec.record(0, 1, 0, &state)?;
    let mut iter = 0u64;
    for (idx, st) in stages.iter().enumerate() {
        if iter >= limit {
            break;
        }
        let k = idx + 1;
        if idx > 0 {
            state.x_prev.copy_from(&state.x_curr);
            rec.set_stage_step(st.alpha)?;
        }
        debug_assert_eq!(state.x_prev, state.x_curr);
        let steps = st.len.min(limit - iter);
        for m in 1..=steps {
            if opts.record_queries {
                ws.y.copy_from(&state.x_curr);
                ws.y *= 1.0 + st.beta;
                ws.y.axpy(-st.beta, &state.x_prev, 1.0);
                rec.query(&ws.y);
            }
            if !step_in_place(&mut state, st.alpha, st.beta, oracle, stream, &mut ws) {
                return Err(Error::Divergence { stage: k, iteration: iter + m });
            }
            rec.record(iter + m, k, m, &state)?;
        }
        iter += steps;
        if steps == st.len {
            rec.trace.stage_ends.push(StageSnapshot { stage: k, iter, x: state.x_curr.clone() });
        }
    }
    let calls = stream.calls() - start_calls;
    assert_eq!(calls, iter, "one oracle call per iteration");
    Ok(rec.finish(state, calls))
}

/// A single stage of `config.steps` steps started from the restart state
/// `(x_init, x_init)`.
pub fn run_stage(
    x_init: &DVector<f64>,
    config: &AsgConfig,
    oracle: &GradientOracle,
    stream: &mut NoiseStream,
    opts: TraceOptions,
) -> Result<RunTrace> {
    config.validate()?;
    let stage = Stage { len: config.steps, alpha: config.alpha, beta: config.beta };
    run_stages(x_init, &[stage], oracle, stream, None, opts)
}

fn check_plan_matches(plan: &StagePlan, oracle: &GradientOracle) -> Result<()> {
    let pr = plan.profile();
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs());
    if !(close(pr.mu(), oracle.strong_convexity()) && close(pr.l(), oracle.lipschitz())) {
        return Err(Error::ProfileMismatch {
            plan_mu: pr.mu(),
            plan_l: pr.l(),
            oracle_mu: oracle.strong_convexity(),
            oracle_l: oracle.lipschitz(),
        });
    }
    Ok(())
}

/// Multistage ASG over every stage of `plan`.
pub fn m_asg(x0: &DVector<f64>, plan: &StagePlan, oracle: &GradientOracle, stream: &mut NoiseStream) -> Result<RunTrace> {
    m_asg_with(x0, plan, oracle, stream, None, TraceOptions::default())
}

/// Multistage ASG, optionally truncated after `budget` iterations.
pub fn m_asg_with(
    x0: &DVector<f64>,
    plan: &StagePlan,
    oracle: &GradientOracle,
    stream: &mut NoiseStream,
    budget: Option<u64>,
    opts: TraceOptions,
) -> Result<RunTrace> {
    check_plan_matches(plan, oracle)?;
    run_stages(x0, plan.stages(), oracle, stream, budget, opts)
}

/// Result of the variance-balanced multistage run.
#[derive(Debug, Clone)]
pub struct BalancedRun {
    pub trace: RunTrace,
    pub n1: u64,
    /// `36 (1 + ln 8) sigma2 / ((n - n1) mu)`; absent when `n1 == n`.
    pub bound: Option<f64>,
    pub warning: Option<ScheduleWarning>,
}

/// M-ASG* with budget `n`: `p = 1` and the first stage from the
/// bias/variance balancing rule, using the oracle's declared `sigma2` and an
/// upper bound `delta` on the initial gap.
pub fn m_asg_star(
    x0: &DVector<f64>,
    delta: f64,
    n: u64,
    oracle: &GradientOracle,
    stream: &mut NoiseStream,
) -> Result<BalancedRun> {
    check_dims(oracle, x0)?;
    let sigma2 = oracle.noise().known_sigma2()?;
    if sigma2 <= 0.0 {
        return Err(domain("the balanced first stage needs sigma2 > 0; use the plain multistage run"));
    }
    let gap0 = oracle.suboptimality(x0)?;
    if delta < gap0 * (1.0 - 1e-12) {
        return Err(domain(format!("Delta = {delta} is below the initial gap {gap0}")));
    }
    let profile = oracle.profile()?;
    let (n1, warning) = n1_balanced(&profile, delta, Some(sigma2), n)?;
    let plan = StagePlan::covering(profile, 1.0, n1, n)?;
    let trace = m_asg_with(x0, &plan, oracle, stream, Some(n), TraceOptions::default())?;
    let bound = (n > n1).then(|| certify::balanced_bound(&profile, n1, n, sigma2)).transpose()?;
    Ok(BalancedRun { trace, n1, bound, warning })
}

/// Stochastic gradient descent with `alpha = 1/L`.
pub fn standard_gd(x0: &DVector<f64>, oracle: &GradientOracle, n: u64, stream: &mut NoiseStream) -> Result<RunTrace> {
    let config = AsgConfig { alpha: 1.0 / oracle.lipschitz(), beta: 0.0, steps: n };
    run_stage(x0, &config, oracle, stream, TraceOptions::default())
}

/// ASG with `alpha = 1/L` and `beta = (sqrt(kappa) - 1) / (sqrt(kappa) + 1)`.
pub fn standard_asg(x0: &DVector<f64>, oracle: &GradientOracle, n: u64, stream: &mut NoiseStream) -> Result<RunTrace> {
    let sk = oracle.profile()?.sqrt_kappa();
    let config = AsgConfig { alpha: 1.0 / oracle.lipschitz(), beta: (sk - 1.0) / (sk + 1.0), steps: n };
    run_stage(x0, &config, oracle, stream, TraceOptions::default())
}

/// Result of a single-stage run with the logarithmic stepsize.
#[derive(Debug, Clone)]
pub struct SingleStageRun {
    pub trace: RunTrace,
    pub alpha: f64,
    /// `2 Delta0 / n^p + p sigma2 ln n / (n mu)` with the oracle's `sigma2`.
    pub bound: Option<f64>,
    /// Set when `n < p sqrt(kappa) max(2 ln(p sqrt(kappa)), e)`.
    pub hypothesis_warning: bool,
}

/// One stage of `n` steps with `alpha = (p sqrt(kappa) ln n / n)^2 / L`.
/// A stepsize above `1/L` is an error.
pub fn single_stage(
    x0: &DVector<f64>,
    n: u64,
    p: f64,
    oracle: &GradientOracle,
    stream: &mut NoiseStream,
) -> Result<SingleStageRun> {
    if n < 2 {
        return Err(domain(format!("single-stage budget must be >= 2, got {n}")));
    }
    if !(p.is_finite() && p >= 1.0) {
        return Err(domain(format!("rate exponent p must be >= 1, got {p}")));
    }
    let profile = oracle.profile()?;
    let nf = n as f64;
    let psk = p * profile.sqrt_kappa();
    let alpha = (psk * nf.ln() / nf).powi(2) / profile.l();
    let config = AsgConfig::critical(alpha, &profile, n)?;
    let hypothesis_warning = nf < psk * (2.0 * psk.ln()).max(std::f64::consts::E);
    if hypothesis_warning {
        log::warn!("budget {n} is below the single-stage hypothesis p sqrt(kappa) max(2 ln(p sqrt(kappa)), e)");
    }
    let delta0 = oracle.suboptimality(x0)?;
    let bound = match oracle.noise().sigma2 {
        Some(s2) => Some(certify::single_stage_bound(&profile, p, n, delta0, s2)?),
        None => None,
    };
    let trace = run_stage(x0, &config, oracle, stream, TraceOptions::default())?;
    Ok(SingleStageRun { trace, alpha, bound, hypothesis_warning })
}

/// Multistage ASG under state-dependent noise: every stage stepsize is capped
/// at `min(1/L, mu^3 / (60 eta2)^2)` and momenta are recomputed for the
/// capped steps. Requires `kappa >= 4`.
pub fn m_asg_general_noise(
    x0: &DVector<f64>,
    plan: &StagePlan,
    eta2: f64,
    oracle: &GradientOracle,
    stream: &mut NoiseStream,
    budget: Option<u64>,
    record_potential: bool,
) -> Result<RunTrace> {
    check_plan_matches(plan, oracle)?;
    let profile = *plan.profile();
    if profile.kappa() < 4.0 {
        return Err(domain(format!("state-dependent noise mode needs kappa >= 4, got {}", profile.kappa())));
    }
    if !(eta2.is_finite() && eta2 >= 0.0) {
        return Err(domain(format!("eta2 must be >= 0, got {eta2}")));
    }
    let cap = general_noise_step_limit(&profile, eta2);
    let stages = capped_stages(plan.stages(), cap, profile.mu());
    let opts = TraceOptions {
        potential: if record_potential { Potential::Q { eta2 } } else { Potential::None },
        record_queries: false,
    };
    run_stages(x0, &stages, oracle, stream, budget, opts)
}

/// Stages with stepsizes clamped to `cap` and critical momenta recomputed.
pub fn capped_stages(stages: &[Stage], cap: f64, mu: f64) -> Vec<Stage> {
    stages
        .iter()
        .map(|s| {
            let alpha = s.alpha.min(cap);
            Stage { len: s.len, alpha, beta: critical_momentum(alpha, mu) }
        })
        .collect()
}

/// Result of the convex-mode run.
#[derive(Debug, Clone)]
pub struct ConvexRun {
    /// Suboptimality measured on the original objective.
    pub trace: RunTrace,
    pub lambda: f64,
    pub alpha: f64,
    pub beta: f64,
}

/// ASG on a merely convex objective through proximal regularization
/// `f + (lambda/2) ||x - x0||^2` with `lambda = L / (sqrt(n) - 1)`,
/// `alpha = (ln n)^2 / (n^(3/2) L)` and the critical momentum for
/// `(alpha, lambda)`.
pub fn convex_asg(x0: &DVector<f64>, oracle: &GradientOracle, n: u64, stream: &mut NoiseStream) -> Result<ConvexRun> {
    check_dims(oracle, x0)?;
    let (regularized, lambda) = regularize_for_convex(oracle, n, x0)?;
    let nf = n as f64;
    let alpha = nf.ln().powi(2) / (nf.powf(1.5) * oracle.lipschitz());
    let reg_profile = regularized.profile()?;
    let config = AsgConfig::critical(alpha, &reg_profile, n)?;
    let start_calls = stream.calls();
    let mut rec = Recorder::new(oracle, x0, TraceOptions::default());
    let mut ws = Workspace::new(oracle.dim());
    let mut state = IterateState::restart(x0.clone());
    rec.record(0, 1, 0, &state)?;
    for m in 1..=n {
        if !step_in_place(&mut state, config.alpha, config.beta, &regularized, stream, &mut ws) {
            return Err(Error::Divergence { stage: 1, iteration: m });
        }
        rec.record(m, 1, m, &state)?;
    }
    rec.trace.stage_ends.push(StageSnapshot { stage: 1, iter: n, x: state.x_curr.clone() });
    let calls = stream.calls() - start_calls;
    assert_eq!(calls, n, "one oracle call per iteration");
    Ok(ConvexRun { trace: rec.finish(state, calls), lambda, alpha, beta: config.beta })
}

/// AC-SA parameter sequences `eta_t` in `(0, 1]` and `gamma_t > 0`,
/// `t = 1..=n`.
#[derive(Debug, Clone, PartialEq)]
pub struct AcsaParams {
    eta: Vec<f64>,
    gamma: Vec<f64>,
}

impl AcsaParams {
    pub fn new(eta: Vec<f64>, gamma: Vec<f64>) -> Result<Self> {
        if eta.len() != gamma.len() {
            return Err(Error::DimensionMismatch { expected: eta.len(), got: gamma.len() });
        }
        if let Some(e) = eta.iter().find(|e| !(e.is_finite() && **e > 0.0 && **e <= 1.0)) {
            return Err(domain(format!("eta_t must lie in (0, 1], got {e}")));
        }
        if let Some(g) = gamma.iter().find(|g| !(g.is_finite() && **g > 0.0)) {
            return Err(domain(format!("gamma_t must be positive, got {g}")));
        }
        Ok(Self { eta, gamma })
    }

    pub fn len(&self) -> usize {
        self.eta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eta.is_empty()
    }

    pub fn eta(&self) -> &[f64] {
        &self.eta
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    fn check_denominators(&self, mu: f64) -> Result<()> {
        for (t, (&e, &g)) in self.eta.iter().zip(&self.gamma).enumerate() {
            let den = g + (1.0 - e * e) * mu;
            if !(den > 0.0 && mu + g > 0.0) {
                return Err(domain(format!("AC-SA denominator vanishes at t = {}", t + 1)));
            }
        }
        Ok(())
    }
}

/// AC-SA with modulus `mu` (the oracle's declared value). The trace follows
/// `x_t^ag`; the oracle is queried once per iteration at `x_t^md`.
pub fn ac_sa(
    x0: &DVector<f64>,
    params: &AcsaParams,
    oracle: &GradientOracle,
    stream: &mut NoiseStream,
    record_queries: bool,
) -> Result<RunTrace> {
    check_dims(oracle, x0)?;
    let mu = oracle.strong_convexity();
    params.check_denominators(mu)?;
    let opts = TraceOptions { potential: Potential::None, record_queries };
    let start_calls = stream.calls();
    let mut rec = Recorder::new(oracle, x0, opts);
    let d = oracle.dim();
    let mut ag = x0.clone();
    let mut x = x0.clone();
    let mut prev_ag = x0.clone();
    let mut md = DVector::zeros(d);
    let mut g = DVector::zeros(d);
    rec.record(0, 1, 0, &IterateState::restart(ag.clone()))?;
    for (i, (&eta, &gamma)) in params.eta.iter().zip(&params.gamma).enumerate() {
        let t = i as u64 + 1;
        let den = gamma + (1.0 - eta * eta) * mu;
        md.copy_from(&ag);
        md *= (1.0 - eta) * (mu + gamma) / den;
        md.axpy(eta * ((1.0 - eta) * mu + gamma) / den, &x, 1.0);
        rec.query(&md);
        oracle.noisy_gradient_into(&md, stream, &mut g);
        // x_t = (eta mu md + [(1-eta) mu + gamma] x_{t-1} - eta G) / (mu + gamma)
        let scale = 1.0 / (mu + gamma);
        x *= ((1.0 - eta) * mu + gamma) * scale;
        x.axpy(eta * mu * scale, &md, 1.0);
        x.axpy(-eta * scale, &g, 1.0);
        prev_ag.copy_from(&ag);
        ag *= 1.0 - eta;
        ag.axpy(eta, &x, 1.0);
        if !ag.iter().all(|v| v.is_finite()) {
            return Err(Error::Divergence { stage: 1, iteration: t });
        }
        rec.record(t, 1, t, &IterateState { x_curr: ag.clone(), x_prev: prev_ag.clone() })?;
    }
    let calls = stream.calls() - start_calls;
    assert_eq!(calls, params.len() as u64, "one oracle call per iteration");
    let state = IterateState { x_prev: prev_ag, x_curr: ag };
    Ok(rec.finish(state, calls))
}

/// Time-varying ASG parameters reproducing AC-SA:
/// `alpha_t = eta_t^2 / (mu + gamma_t)` and
/// `beta_t = eta_t (1 - eta_{t-1}) [(1 - eta_t) mu + gamma_t] / (eta_{t-1} [gamma_t + (1 - eta_t^2) mu])`,
/// with `beta_1 = 0`.
pub fn ac_sa_as_asg_params(params: &AcsaParams, mu: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(mu.is_finite() && mu >= 0.0) {
        return Err(domain(format!("mu must be >= 0, got {mu}")));
    }
    params.check_denominators(mu)?;
    let n = params.len();
    let mut alphas = Vec::with_capacity(n);
    let mut betas = Vec::with_capacity(n);
    for t in 0..n {
        let (eta, gamma) = (params.eta[t], params.gamma[t]);
        alphas.push(eta * eta / (mu + gamma));
        let beta = if t == 0 {
            0.0
        } else {
            let prev = params.eta[t - 1];
            eta * (1.0 - prev) * ((1.0 - eta) * mu + gamma) / (prev * (gamma + (1.0 - eta * eta) * mu))
        };
        betas.push(beta);
    }
    Ok((alphas, betas))
}

/// ASG with per-iteration `(alpha_t, beta_t)` from the restart state
/// `(x0, x0)`.
pub fn varying_asg(
    x0: &DVector<f64>,
    alphas: &[f64],
    betas: &[f64],
    oracle: &GradientOracle,
    stream: &mut NoiseStream,
    record_queries: bool,
) -> Result<RunTrace> {
    check_dims(oracle, x0)?;
    if alphas.len() != betas.len() {
        return Err(Error::DimensionMismatch { expected: alphas.len(), got: betas.len() });
    }
    let opts = TraceOptions { potential: Potential::None, record_queries };
    let start_calls = stream.calls();
    let mut rec = Recorder::new(oracle, x0, opts);
    let mut ws = Workspace::new(oracle.dim());
    let mut state = IterateState::restart(x0.clone());
    rec.record(0, 1, 0, &state)?;
    for (i, (&a, &b)) in alphas.iter().zip(betas).enumerate() {
        let t = i as u64 + 1;
        if record_queries {
            ws.y.copy_from(&state.x_curr);
            ws.y *= 1.0 + b;
            ws.y.axpy(-b, &state.x_prev, 1.0);
            rec.query(&ws.y);
        }
        if !step_in_place(&mut state, a, b, oracle, stream, &mut ws) {
            return Err(Error::Divergence { stage: 1, iteration: t });
        }
        rec.record(t, 1, t, &state)?;
    }
    let calls = stream.calls() - start_calls;
    assert_eq!(calls, alphas.len() as u64, "one oracle call per iteration");
    Ok(rec.finish(state, calls))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{FnObjective, NoiseInjector};
    use crate::problems::{make_cycle_quadratic, DenseQuadratic};
    use std::sync::Arc;

    fn half_square(l: f64) -> GradientOracle {
        let obj = Arc::new(FnObjective::new(
            1,
            move |x: &DVector<f64>| 0.5 * l * x[0] * x[0],
            move |x: &DVector<f64>, g: &mut DVector<f64>| g[0] = l * x[0],
        ));
        GradientOracle::new(obj, l, l, DVector::zeros(1), 0.0).unwrap()
    }

    #[test]
    fn step_examples() {
        let o = half_square(1.0);
        let pr = o.profile().unwrap();
        let cfg = AsgConfig::critical(1.0, &pr, 1).unwrap();
        assert_eq!(cfg.beta, 0.0);
        let next = asg_step(&IterateState::restart(DVector::from_element(1, 1.0)), &cfg, &o, &mut NoiseStream::new(0))
            .unwrap();
        assert_eq!(next.x_curr[0], 0.0);
        assert_eq!(next.x_prev[0], 1.0);

        let q = make_cycle_quadratic(10, 0.1, 2).unwrap();
        let pr = q.profile().unwrap();
        let cfg = AsgConfig::critical(1.0 / pr.l(), &pr, 1).unwrap();
        let at = IterateState::restart(q.optimum().clone());
        let next = asg_step(&at, &cfg, &q, &mut NoiseStream::new(0)).unwrap();
        assert!((&next.x_curr - q.optimum()).norm() < 1e-13);
    }

    #[test]
    fn momentum_free_step_is_gradient_descent() {
        let q = make_cycle_quadratic(10, 0.1, 2).unwrap();
        let x = DVector::from_fn(10, |i, _| i as f64);
        let state = IterateState::new(x.clone(), DVector::from_element(10, 5.0)).unwrap();
        let cfg = AsgConfig { alpha: 0.1, beta: 0.0, steps: 1 };
        let next = asg_step(&state, &cfg, &q, &mut NoiseStream::new(0)).unwrap();
        let expected = &x - q.gradient(&x) * 0.1;
        assert_eq!(next.x_curr, expected);
    }

    #[test]
    fn divergence_is_reported() {
        let o = half_square(1.0);
        let cfg = AsgConfig { alpha: 1e308, beta: 0.0, steps: 3 };
        let err = run_stage(&DVector::from_element(1, 1e10), &cfg, &o, &mut NoiseStream::new(0), TraceOptions::default())
            .unwrap_err();
        assert!(matches!(err, Error::Divergence { stage: 1, iteration: 1 }));
    }

    #[test]
    fn empty_stage_returns_start() {
        let q = make_cycle_quadratic(10, 0.1, 2).unwrap();
        let x0 = DVector::from_element(10, 1.0);
        let cfg = AsgConfig { alpha: 0.1, beta: 0.5, steps: 0 };
        let t = run_stage(&x0, &cfg, &q, &mut NoiseStream::new(0), TraceOptions::default()).unwrap();
        assert_eq!(t.final_x(), &x0);
        assert_eq!(t.points.len(), 1);
        let t = standard_gd(&x0, &q, 0, &mut NoiseStream::new(0)).unwrap();
        assert_eq!(t.points.len(), 1);
        assert_eq!(t.oracle_calls, 0);
    }

    #[test]
    fn gd_one_step_on_scaled_square() {
        let o = half_square(3.0);
        let t = standard_gd(&DVector::from_element(1, 2.0), &o, 1, &mut NoiseStream::new(0)).unwrap();
        assert_eq!(t.final_x()[0], 0.0);
    }

    #[test]
    fn gd_contracts_per_eigenmode() {
        let eig = [0.5, 1.0, 2.0, 4.0];
        let o = DenseQuadratic::diagonal(&eig, DVector::zeros(4)).unwrap();
        let x0 = DVector::from_element(4, 1.0);
        let t = standard_gd(&x0, &o, 30, &mut NoiseStream::new(0)).unwrap();
        // Mode i contracts by |1 - lambda_i / L| per step.
        for (i, lam) in eig.iter().enumerate() {
            let expected = (1.0 - lam / 4.0f64).powi(30);
            assert!((t.final_x()[i] - expected).abs() <= 1e-14);
        }
        let rate = 1.0 - 0.5 / 4.0;
        for w in t.points.windows(2) {
            assert!(w[1].subopt <= rate * rate * w[0].subopt * (1.0 + 1e-12));
        }
    }

    #[test]
    fn standard_asg_with_unit_condition_is_gd() {
        let o = DenseQuadratic::diagonal(&[2.0, 2.0], DVector::from_vec(vec![1.0, -1.0])).unwrap();
        let x0 = DVector::from_vec(vec![3.0, 4.0]);
        let a = standard_asg(&x0, &o, 5, &mut NoiseStream::new(1)).unwrap();
        let b = standard_gd(&x0, &o, 5, &mut NoiseStream::new(1)).unwrap();
        assert_eq!(a.subopts(), b.subopts());
    }

    #[test]
    fn single_plan_stage_equals_run_stage() {
        let q = make_cycle_quadratic(20, 0.05, 4).unwrap().with_noise(NoiseInjector::AdditiveGaussian { sigma2: 1e-3 }, 3).unwrap();
        let pr = q.profile().unwrap();
        let plan = StagePlan::geometric(pr, 1.0, 40, 1).unwrap();
        let x0 = DVector::zeros(20);
        let a = m_asg(&x0, &plan, &q, &mut NoiseStream::new(11)).unwrap();
        let cfg = AsgConfig::critical(1.0 / pr.l(), &pr, 40).unwrap();
        let b = run_stage(&x0, &cfg, &q, &mut NoiseStream::new(11), TraceOptions::default()).unwrap();
        assert_eq!(a.points, b.points);
        assert_eq!(a.final_state, b.final_state);
    }

    #[test]
    fn multistage_bookkeeping() {
        let q = make_cycle_quadratic(20, 0.05, 4).unwrap().with_noise(NoiseInjector::AdditiveGaussian { sigma2: 1e-3 }, 3).unwrap();
        let pr = q.profile().unwrap();
        let plan = StagePlan::geometric(pr, 1.0, 15, 3).unwrap();
        let x0 = DVector::zeros(20);
        let t = m_asg(&x0, &plan, &q, &mut NoiseStream::new(5)).unwrap();
        let total = plan.total_len().unwrap();
        assert_eq!(t.oracle_calls, total);
        assert_eq!(t.points.len() as u64, total + 1);
        assert!(t.points.windows(2).all(|w| w[1].iter == w[0].iter + 1));
        let loc = plan.locator();
        for p in &t.points {
            assert_eq!(loc.locate(p.iter), Some((p.stage, p.within)));
        }
        assert_eq!(t.stage_ends.len(), 3);
        assert_eq!(t.stage_ends[2].x, *t.final_x());
        let again = m_asg(&x0, &plan, &q, &mut NoiseStream::new(5)).unwrap();
        assert_eq!(t.points, again.points);

        let cut = m_asg_with(&x0, &plan, &q, &mut NoiseStream::new(5), Some(50), TraceOptions::default()).unwrap();
        assert_eq!(cut.oracle_calls, 50);
        assert_eq!(cut.points[..], t.points[..51]);
    }

    #[test]
    fn plan_profile_must_match() {
        let q = make_cycle_quadratic(20, 0.05, 4).unwrap();
        let plan = StagePlan::geometric(StrongConvexityProfile::new(0.2, 4.1).unwrap(), 1.0, 5, 2).unwrap();
        assert!(matches!(
            m_asg(&DVector::zeros(20), &plan, &q, &mut NoiseStream::new(0)),
            Err(Error::ProfileMismatch { .. })
        ));
    }

    #[test]
    fn star_requires_known_positive_variance() {
        let q = make_cycle_quadratic(20, 0.05, 4).unwrap();
        let x0 = DVector::zeros(20);
        let delta = q.suboptimality(&x0).unwrap();
        assert!(m_asg_star(&x0, delta, 100, &q, &mut NoiseStream::new(0)).is_err());
        let huge = q.with_noise(NoiseInjector::AdditiveGaussian { sigma2: 1e9 }, 1).unwrap();
        let run = m_asg_star(&x0, delta, 100, &huge, &mut NoiseStream::new(0)).unwrap();
        assert_eq!(run.n1, 1);
        assert!(run.bound.is_some());
    }

    #[test]
    fn single_stage_step_rules() {
        let o = half_square(2.0);
        let mut s = NoiseStream::new(0);
        let run = single_stage(&DVector::from_element(1, 1.0), 100, 1.0, &o, &mut s).unwrap();
        let expected = (100f64.ln() / 100.0).powi(2) / 2.0;
        assert!((run.alpha - expected).abs() <= 1e-16);
        // p sqrt(kappa) ln n / n > 1 makes alpha exceed 1/L.
        assert!(single_stage(&DVector::from_element(1, 1.0), 2, 3.0, &o, &mut s).is_err());
    }

    #[test]
    fn acsa_unit_eta_is_gradient_step() {
        let q = make_cycle_quadratic(8, 0.1, 1).unwrap();
        let mu = q.strong_convexity();
        let x0 = DVector::from_element(8, 1.0);
        let params = AcsaParams::new(vec![1.0; 3], vec![2.0, 3.0, 5.0]).unwrap();
        let t = ac_sa(&x0, &params, &q, &mut NoiseStream::new(0), true).unwrap();
        let queries = t.queries.as_ref().unwrap();
        let mut x = x0.clone();
        for (i, g) in [2.0, 3.0, 5.0].iter().enumerate() {
            assert!((&queries[i] - &x).norm() <= 1e-14 * x.norm().max(1.0));
            x = &x - q.gradient(&x) / (mu + g);
        }
        assert!((t.final_x() - &x).norm() <= 1e-13);
    }

    #[test]
    fn acsa_reparameterization_examples() {
        let mu = 0.3;
        let p = AcsaParams::new(vec![0.5; 4], vec![mu; 4]).unwrap();
        let (a, b) = ac_sa_as_asg_params(&p, mu).unwrap();
        assert!((a[0] - 1.0 / (8.0 * mu)).abs() < 1e-15);
        assert_eq!(b[0], 0.0);
        // With mu = 0 and constant eta, beta collapses to 1 - eta.
        let p = AcsaParams::new(vec![0.3; 4], vec![1.0; 4]).unwrap();
        let (_, b) = ac_sa_as_asg_params(&p, 0.0).unwrap();
        assert!(b[1..].iter().all(|v| (v - 0.7).abs() < 1e-15));
        let p = AcsaParams::new(vec![1.0, 0.4], vec![1.0, 1.0]).unwrap();
        assert_eq!(ac_sa_as_asg_params(&p, 0.5).unwrap().1[1], 0.0);
        assert!(AcsaParams::new(vec![0.0], vec![1.0]).is_err());
        assert!(AcsaParams::new(vec![0.5], vec![0.0]).is_err());
    }

    #[test]
    fn convex_mode_parameters() {
        let q = crate::problems::make_convex_cycle_quadratic(6, 0).unwrap();
        let x0 = DVector::zeros(6);
        let run = convex_asg(&x0, &q, 2, &mut NoiseStream::new(0)).unwrap();
        let l = q.lipschitz();
        assert!((run.lambda - l / (2f64.sqrt() - 1.0)).abs() < 1e-14 * run.lambda);
        assert!((run.alpha - 2f64.ln().powi(2) / (2f64.powf(1.5) * l)).abs() < 1e-16);
        assert!(convex_asg(&x0, &q, 1, &mut NoiseStream::new(0)).is_err());
    }

    #[test]
    fn general_noise_caps_steps() {
        let o = DenseQuadratic::diagonal(&[1.0, 4.0], DVector::from_vec(vec![1.0, 1.0])).unwrap();
        let pr = o.profile().unwrap();
        let plan = StagePlan::geometric(pr, 1.0, 10, 2).unwrap();
        let capped = capped_stages(plan.stages(), general_noise_step_limit(&pr, 1.0 / 60.0), pr.mu());
        assert_eq!(capped[0].alpha, 0.25);
        let capped = capped_stages(plan.stages(), general_noise_step_limit(&pr, 1.0), pr.mu());
        assert!(capped.iter().all(|s| s.alpha <= 1.0 / 3600.0));
        let narrow = DenseQuadratic::diagonal(&[1.0, 3.0], DVector::zeros(2)).unwrap();
        let plan = StagePlan::geometric(narrow.profile().unwrap(), 1.0, 10, 1).unwrap();
        assert!(m_asg_general_noise(&DVector::zeros(2), &plan, 0.1, &narrow, &mut NoiseStream::new(0), None, false).is_err());
    }

    #[test]
    fn general_noise_without_state_noise_matches_multistage() {
        let q = make_cycle_quadratic(20, 0.05, 4).unwrap().with_noise(NoiseInjector::AdditiveGaussian { sigma2: 1e-3 }, 3).unwrap();
        let plan = StagePlan::geometric(q.profile().unwrap(), 1.0, 15, 3).unwrap();
        let x0 = DVector::zeros(20);
        let a = m_asg(&x0, &plan, &q, &mut NoiseStream::new(2)).unwrap();
        let b = m_asg_general_noise(&x0, &plan, 0.0, &q, &mut NoiseStream::new(2), None, false).unwrap();
        assert_eq!(a.points, b.points);
    }
}
