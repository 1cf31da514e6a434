//! Problem-class types, gradient oracles with pluggable noise, and the
//! momentum dynamical-system primitives shared by every optimizer.

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{domain, Error, Result};
use crate::rng::NoiseStream;

/// Relative slack for `alpha <= 1/L` checks; `1.0 / l` times `l` may round up.
const STEP_LIMIT_SLACK: f64 = 1e-12;

/// Suboptimality values in `(-CLAMP_TOL * max(1, |f*|), 0)` are rounding noise.
const CLAMP_TOL: f64 = 1e-12;

/// Strong convexity modulus `mu`, gradient Lipschitz constant `L` and the
/// condition number `kappa = L / mu`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrongConvexityProfile {
    mu: f64,
    l: f64,
    kappa: f64,
}

impl StrongConvexityProfile {
    pub fn new(mu: f64, l: f64) -> Result<Self> {
        if !(mu.is_finite() && l.is_finite() && mu > 0.0 && mu <= l) {
            return Err(domain(format!("need 0 < mu <= L, got mu={mu}, L={l}")));
        }
        Ok(Self { mu, l, kappa: l / mu })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn l(&self) -> f64 {
        self.l
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn sqrt_kappa(&self) -> f64 {
        self.kappa.sqrt()
    }

    /// Whether `alpha` lies in `(0, 1/L]`.
    pub fn admits_step(&self, alpha: f64) -> bool {
        alpha > 0.0 && alpha * self.l <= 1.0 + STEP_LIMIT_SLACK
    }

    pub(crate) fn check_step(&self, alpha: f64) -> Result<()> {
        if self.admits_step(alpha) {
            Ok(())
        } else {
            Err(domain(format!("stepsize must lie in (0, 1/L] = (0, {}], got {alpha}", 1.0 / self.l)))
        }
    }
}

/// Variance bound `E||noise||^2 <= sigma2 + eta2 ||x - x*||^2`.
///
/// `sigma2 == None` marks a finite but unknown variance (minibatch oracles).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub sigma2: Option<f64>,
    pub eta2: f64,
}

impl NoiseModel {
    pub const EXACT: NoiseModel = NoiseModel { sigma2: Some(0.0), eta2: 0.0 };

    pub fn known_sigma2(&self) -> Result<f64> {
        self.sigma2.ok_or(Error::UnknownVariance)
    }
}

/// How a noisy gradient is produced from the exact one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseInjector {
    /// Noiseless oracle.
    Exact,
    /// Isotropic Gaussian with total expected squared norm `sigma2`
    /// (per-coordinate variance `sigma2 / d`).
    AdditiveGaussian { sigma2: f64 },
    /// Isotropic Gaussian with total variance `sigma2 + eta2 ||x - x*||^2`.
    StateDependentGaussian { sigma2: f64, eta2: f64 },
    /// Gradient of a uniformly drawn batch (without replacement) of a
    /// finite-sum objective.
    Minibatch { batch_size: usize },
}

impl NoiseInjector {
    pub fn model(&self) -> NoiseModel {
        match *self {
            NoiseInjector::Exact => NoiseModel::EXACT,
            NoiseInjector::AdditiveGaussian { sigma2 } => NoiseModel { sigma2: Some(sigma2), eta2: 0.0 },
            NoiseInjector::StateDependentGaussian { sigma2, eta2 } => NoiseModel { sigma2: Some(sigma2), eta2 },
            NoiseInjector::Minibatch { .. } => NoiseModel { sigma2: None, eta2: 0.0 },
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            NoiseInjector::Exact => true,
            NoiseInjector::AdditiveGaussian { sigma2 } => sigma2.is_finite() && sigma2 >= 0.0,
            NoiseInjector::StateDependentGaussian { sigma2, eta2 } => {
                sigma2.is_finite() && sigma2 >= 0.0 && eta2.is_finite() && eta2 >= 0.0
            }
            NoiseInjector::Minibatch { batch_size } => batch_size >= 1,
        };
        if ok {
            Ok(())
        } else {
            Err(domain(format!("invalid noise injector {self:?}")))
        }
    }
}

/// A smooth objective with an exact gradient.
pub trait Objective: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    fn value(&self, x: &DVector<f64>) -> f64;

    fn gradient_into(&self, x: &DVector<f64>, out: &mut DVector<f64>);

    /// Cancellation-free `f(x) - f*` when the objective knows its minimizer.
    fn exact_gap(&self, _x: &DVector<f64>) -> Option<f64> {
        None
    }

    fn finite_sum(&self) -> Option<&dyn FiniteSum> {
        None
    }
}

/// Objectives of the form `(1/N) sum_i f_i(x) + r(x)`.
pub trait FiniteSum: Send + Sync {
    fn num_terms(&self) -> usize;

    /// Gradient of `(1/|B|) sum_{i in B} f_i(x) + r(x)`. `indices` is sorted.
    fn batch_gradient_into(&self, x: &DVector<f64>, indices: &[usize], out: &mut DVector<f64>);
}

/// Objective from a pair of closures.
pub struct FnObjective<F, G> {
    dim: usize,
    value: F,
    gradient: G,
}

impl<F, G> FnObjective<F, G>
where
    F: Fn(&DVector<f64>) -> f64 + Send + Sync,
    G: Fn(&DVector<f64>, &mut DVector<f64>) + Send + Sync,
{
    pub fn new(dim: usize, value: F, gradient: G) -> Self {
        Self { dim, value, gradient }
    }
}

impl<F, G> fmt::Debug for FnObjective<F, G> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnObjective").field("dim", &self.dim).finish_non_exhaustive()
    }
}

impl<F, G> Objective for FnObjective<F, G>
where
    F: Fn(&DVector<f64>) -> f64 + Send + Sync,
    G: Fn(&DVector<f64>, &mut DVector<f64>) + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        (self.value)(x)
    }

    fn gradient_into(&self, x: &DVector<f64>, out: &mut DVector<f64>) {
        (self.gradient)(x, out)
    }
}

/// `f(x) - f*` with its clamping status.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Suboptimality {
    pub value: f64,
    pub clamped: bool,
}

/// Objective, exact and noisy gradients, declared curvature, and the known
/// minimizer. Immutable; clone freely and share across threads.
#[derive(Clone, Debug)]
pub struct GradientOracle {
    objective: Arc<dyn Objective>,
    mu: f64,
    l: f64,
    optimum: Arc<DVector<f64>>,
    optimal_value: f64,
    injector: NoiseInjector,
    noise_seed: u64,
}

impl GradientOracle {
    /// Noiseless oracle. `mu` may be zero for merely convex objectives.
    pub fn new(
        objective: Arc<dyn Objective>,
        mu: f64,
        l: f64,
        optimum: DVector<f64>,
        optimal_value: f64,
    ) -> Result<Self> {
        if !(mu.is_finite() && l.is_finite() && mu >= 0.0 && l > 0.0 && mu <= l) {
            return Err(domain(format!("need 0 <= mu <= L, L > 0; got mu={mu}, L={l}")));
        }
        if optimum.len() != objective.dim() {
            return Err(Error::DimensionMismatch { expected: objective.dim(), got: optimum.len() });
        }
        if !optimal_value.is_finite() {
            return Err(domain("optimal value must be finite"));
        }
        Ok(Self {
            objective,
            mu,
            l,
            optimum: Arc::new(optimum),
            optimal_value,
            injector: NoiseInjector::Exact,
            noise_seed: 0,
        })
    }

    /// Same objective with a different noise source.
    pub fn with_noise(&self, injector: NoiseInjector, seed: u64) -> Result<Self> {
        injector.validate()?;
        if matches!(injector, NoiseInjector::Minibatch { .. }) {
            let sum = self.objective.finite_sum().ok_or(Error::NotFiniteSum)?;
            if let NoiseInjector::Minibatch { batch_size } = injector {
                if batch_size > sum.num_terms() {
                    return Err(domain(format!(
                        "batch size {batch_size} exceeds the {} available terms",
                        sum.num_terms()
                    )));
                }
            }
        }
        Ok(Self { injector, noise_seed: seed, ..self.clone() })
    }

    pub fn dim(&self) -> usize {
        self.objective.dim()
    }

    pub fn objective(&self) -> &Arc<dyn Objective> {
        &self.objective
    }

    pub fn strong_convexity(&self) -> f64 {
        self.mu
    }

    pub fn lipschitz(&self) -> f64 {
        self.l
    }

    /// Declared profile; fails for merely convex oracles (`mu == 0`).
    pub fn profile(&self) -> Result<StrongConvexityProfile> {
        StrongConvexityProfile::new(self.mu, self.l)
    }

    pub fn optimum(&self) -> &DVector<f64> {
        &self.optimum
    }

    pub fn optimal_value(&self) -> f64 {
        self.optimal_value
    }

    pub fn injector(&self) -> NoiseInjector {
        self.injector
    }

    pub fn noise(&self) -> NoiseModel {
        self.injector.model()
    }

    pub fn noise_seed(&self) -> u64 {
        self.noise_seed
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        self.objective.value(x)
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(self.dim());
        self.objective.gradient_into(x, &mut g);
        g
    }

    pub fn gradient_into(&self, x: &DVector<f64>, out: &mut DVector<f64>) {
        self.objective.gradient_into(x, out);
    }

    /// One stochastic oracle call. Consumes exactly one substream of `stream`.
    pub fn noisy_gradient_into(&self, x: &DVector<f64>, stream: &mut NoiseStream, out: &mut DVector<f64>) {
        match self.injector {
            NoiseInjector::Exact => {
                stream.skip();
                self.objective.gradient_into(x, out);
            }
            NoiseInjector::AdditiveGaussian { sigma2 } => {
                let mut rng = stream.next_substream(self.noise_seed);
                self.objective.gradient_into(x, out);
                add_gaussian(out, sigma2, &mut rng);
            }
            NoiseInjector::StateDependentGaussian { sigma2, eta2 } => {
                let mut rng = stream.next_substream(self.noise_seed);
                self.objective.gradient_into(x, out);
                let dist2 = (x - &*self.optimum).norm_squared();
                add_gaussian(out, sigma2 + eta2 * dist2, &mut rng);
            }
            NoiseInjector::Minibatch { batch_size } => {
                let mut rng = stream.next_substream(self.noise_seed);
                let sum = self
                    .objective
                    .finite_sum()
                    .expect("minibatch injector is only attached to finite-sum objectives");
                let mut idx = rand::seq::index::sample(&mut rng, sum.num_terms(), batch_size).into_vec();
                idx.sort_unstable();
                sum.batch_gradient_into(x, &idx, out);
            }
        }
    }

    pub fn noisy_gradient(&self, x: &DVector<f64>, stream: &mut NoiseStream) -> DVector<f64> {
        let mut g = DVector::zeros(self.dim());
        self.noisy_gradient_into(x, stream, &mut g);
        g
    }

    /// `f(x) - f*`, clamped at zero for tiny negative rounding.
    pub fn suboptimality(&self, x: &DVector<f64>) -> Result<f64> {
        self.suboptimality_detailed(x).map(|s| s.value)
    }

    pub fn suboptimality_detailed(&self, x: &DVector<f64>) -> Result<Suboptimality> {
        let raw = match self.objective.exact_gap(x) {
            Some(gap) => gap,
            None => self.objective.value(x) - self.optimal_value,
        };
        if raw >= 0.0 {
            return Ok(Suboptimality { value: raw, clamped: false });
        }
        if raw > -CLAMP_TOL * self.optimal_value.abs().max(1.0) {
            log::debug!("clamping suboptimality {raw:e} to zero");
            return Ok(Suboptimality { value: 0.0, clamped: true });
        }
        Err(Error::NegativeSuboptimality { value: raw })
    }
}

fn add_gaussian<R: Rng>(out: &mut DVector<f64>, total_variance: f64, rng: &mut R) {
    if total_variance == 0.0 {
        return;
    }
    let sd = (total_variance / out.len() as f64).sqrt();
    for v in out.iter_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *v += sd * z;
    }
}

/// Stacked state `(x_k, x_{k-1})` of the momentum iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterateState {
    pub x_curr: DVector<f64>,
    pub x_prev: DVector<f64>,
}

impl IterateState {
    pub fn new(x_curr: DVector<f64>, x_prev: DVector<f64>) -> Result<Self> {
        if x_curr.len() != x_prev.len() {
            return Err(Error::DimensionMismatch { expected: x_curr.len(), got: x_prev.len() });
        }
        Ok(Self { x_curr, x_prev })
    }

    /// Restart convention: both blocks equal `x`.
    pub fn restart(x: DVector<f64>) -> Self {
        Self { x_prev: x.clone(), x_curr: x }
    }

    pub fn dim(&self) -> usize {
        self.x_curr.len()
    }

    /// The projection onto the first block.
    pub fn first_block(&self) -> &DVector<f64> {
        &self.x_curr
    }
}

/// Kronecker factors of the momentum iteration written as a linear system
/// `xi' = A xi + B g`, `y = C xi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemMatrices {
    pub a: [[f64; 2]; 2],
    pub b: [f64; 2],
    pub c: [f64; 2],
}

impl SystemMatrices {
    pub fn new(alpha: f64, beta: f64) -> Self {
        Self {
            a: [[1.0 + beta, -beta], [1.0, 0.0]],
            b: [-alpha, 0.0],
            c: [1.0 + beta, -beta],
        }
    }
}

/// Momentum giving the fastest asymptotic rate on quadratics for stepsize
/// `alpha`: `(1 - sqrt(alpha mu)) / (1 + sqrt(alpha mu))`.
pub fn critical_momentum(alpha: f64, mu: f64) -> f64 {
    let s = (alpha * mu).sqrt();
    (1.0 - s) / (1.0 + s)
}

/// Critical momentum and system matrices for a stepsize in `(0, 1/L]`.
pub fn make_asg_params(alpha: f64, profile: &StrongConvexityProfile) -> Result<(f64, SystemMatrices)> {
    profile.check_step(alpha)?;
    let beta = critical_momentum(alpha, profile.mu());
    Ok((beta, SystemMatrices::new(alpha, beta)))
}

/// Outcome of sampling the two-sided curvature inequality.
#[derive(Debug, Clone)]
pub struct MembershipReport {
    pub pairs: usize,
    pub lower_violations: usize,
    pub upper_violations: usize,
    /// `min (D - mu/2 ||x-y||^2)` over pairs, where `D = f(x) - f(y) - grad f(y)'(x-y)`.
    pub worst_lower_margin: f64,
    /// `min (L/2 ||x-y||^2 - D)` over pairs.
    pub worst_upper_margin: f64,
    pub worst_lower_pair: Option<(DVector<f64>, DVector<f64>)>,
    pub worst_upper_pair: Option<(DVector<f64>, DVector<f64>)>,
}

impl MembershipReport {
    pub fn passed(&self) -> bool {
        self.lower_violations == 0 && self.upper_violations == 0
    }
}

/// Tests `mu/2 ||x-y||^2 <= f(x) - f(y) - grad f(y)'(x-y) <= L/2 ||x-y||^2`
/// on `sample_count` Gaussian pairs centered at `x*` with per-coordinate
/// scale `1 + ||x*|| / sqrt(d)`. Margins below `-1e-9 (1 + |f(x)|)` count as
/// violations.
pub fn check_membership<R: Rng>(oracle: &GradientOracle, sample_count: usize, rng: &mut R) -> MembershipReport {
    let d = oracle.dim();
    let center = oracle.optimum();
    let scale = 1.0 + center.norm() / (d as f64).sqrt();
    let draw = |rng: &mut R| -> DVector<f64> {
        DVector::from_fn(d, |i, _| {
            let z: f64 = StandardNormal.sample(rng);
            center[i] + scale * z
        })
    };
    let mut report = MembershipReport {
        pairs: 0,
        lower_violations: 0,
        upper_violations: 0,
        worst_lower_margin: f64::INFINITY,
        worst_upper_margin: f64::INFINITY,
        worst_lower_pair: None,
        worst_upper_pair: None,
    };
    for _ in 0..sample_count {
        let x = draw(rng);
        let y = draw(rng);
        evaluate_pair(oracle, &x, &y, &mut report);
    }
    report
}

/// Adds one `(x, y)` pair to a membership report.
pub fn evaluate_pair(oracle: &GradientOracle, x: &DVector<f64>, y: &DVector<f64>, report: &mut MembershipReport) {
    let fx = oracle.value(x);
    let fy = oracle.value(y);
    let gy = oracle.gradient(y);
    let diff = x - y;
    let bregman = fx - fy - gy.dot(&diff);
    let dist2 = diff.norm_squared();
    let tol = 1e-9 * (1.0 + fx.abs());
    let lower = bregman - 0.5 * oracle.strong_convexity() * dist2;
    let upper = 0.5 * oracle.lipschitz() * dist2 - bregman;
    report.pairs += 1;
    if lower < -tol {
        report.lower_violations += 1;
    }
    if upper < -tol {
        report.upper_violations += 1;
    }
    if lower < report.worst_lower_margin {
        report.worst_lower_margin = lower;
        report.worst_lower_pair = Some((x.clone(), y.clone()));
    }
    if upper < report.worst_upper_margin {
        report.worst_upper_margin = upper;
        report.worst_upper_pair = Some((x.clone(), y.clone()));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scaled_square(dim: usize, c: f64) -> Arc<dyn Objective> {
        Arc::new(FnObjective::new(
            dim,
            move |x: &DVector<f64>| 0.5 * c * x.norm_squared(),
            move |x: &DVector<f64>, g: &mut DVector<f64>| g.copy_from(&(x * c)),
        ))
    }

    #[test]
    fn profile_rejects_bad_domains() {
        assert!(StrongConvexityProfile::new(0.0, 1.0).is_err());
        assert!(StrongConvexityProfile::new(2.0, 1.0).is_err());
        let p = StrongConvexityProfile::new(0.5, 2.0).unwrap();
        assert_eq!(p.kappa(), 4.0);
    }

    #[test]
    fn asg_params_examples() {
        let unit = StrongConvexityProfile::new(3.0, 3.0).unwrap();
        let (beta, _) = make_asg_params(1.0 / 3.0, &unit).unwrap();
        assert!(beta.abs() < 1e-15);

        let p = StrongConvexityProfile::new(1.0, 4.0).unwrap();
        let (beta, m) = make_asg_params(0.25, &p).unwrap();
        assert!((beta - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.a, [[1.0 + beta, -beta], [1.0, 0.0]]);
        assert_eq!(m.b, [-0.25, 0.0]);
        assert_eq!(m.c, [1.0 + beta, -beta]);

        assert!(matches!(make_asg_params(0.0, &p), Err(Error::ParameterDomain(_))));
        assert!(make_asg_params(0.2501, &p).is_err());
    }

    #[test]
    fn momentum_strictly_decreasing_in_step() {
        let p = StrongConvexityProfile::new(0.1, 10.0).unwrap();
        let grid: Vec<f64> = (1..=200).map(|i| i as f64 / 200.0 / p.l()).collect();
        let betas: Vec<f64> = grid.iter().map(|&a| make_asg_params(a, &p).unwrap().0).collect();
        assert!(betas.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn suboptimality_examples() {
        let obj = scaled_square(1, 2.0); // f(x) = x^2
        let oracle = GradientOracle::new(obj, 2.0, 2.0, DVector::zeros(1), 0.0).unwrap();
        assert_eq!(oracle.suboptimality(&DVector::zeros(1)).unwrap(), 0.0);
        assert_eq!(oracle.suboptimality(&DVector::from_element(1, 2.0)).unwrap(), 4.0);
    }

    #[test]
    fn suboptimality_clamps_and_rejects() {
        let obj = scaled_square(1, 1.0);
        let slightly = GradientOracle::new(obj.clone(), 1.0, 1.0, DVector::zeros(1), 1e-14).unwrap();
        let s = slightly.suboptimality_detailed(&DVector::zeros(1)).unwrap();
        assert_eq!(s, Suboptimality { value: 0.0, clamped: true });
        let wrong = GradientOracle::new(obj, 1.0, 1.0, DVector::zeros(1), 0.5).unwrap();
        assert!(matches!(
            wrong.suboptimality(&DVector::zeros(1)),
            Err(Error::NegativeSuboptimality { .. })
        ));
    }

    #[test]
    fn membership_detects_overstated_modulus() {
        // f(x) = x^2 / 2 has modulus 1; declaring mu = 2 must be caught.
        let obj = scaled_square(1, 1.0);
        let oracle = GradientOracle::new(obj, 2.0, 2.0, DVector::zeros(1), 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let report = check_membership(&oracle, 100, &mut rng);
        assert_eq!(report.lower_violations, 100);
        assert_eq!(report.upper_violations, 0);
        let (x, y) = report.worst_lower_pair.clone().unwrap();
        // D = (x-y)^2/2 and mu/2 (x-y)^2 = (x-y)^2, so the margin is -(x-y)^2/2.
        let expected = -0.5 * (x[0] - y[0]).powi(2);
        assert!((report.worst_lower_margin - expected).abs() <= 1e-12 * expected.abs());
    }

    #[test]
    fn membership_identity_pair() {
        let obj = scaled_square(3, 1.0);
        let oracle = GradientOracle::new(obj, 1.0, 1.0, DVector::zeros(3), 0.0).unwrap();
        let x = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let mut report = check_membership(&oracle, 0, &mut ChaCha8Rng::seed_from_u64(0));
        evaluate_pair(&oracle, &x, &x, &mut report);
        assert!(report.passed());
        assert_eq!(report.worst_lower_margin, 0.0);
        assert_eq!(report.worst_upper_margin, 0.0);
    }

    #[test]
    fn noiseless_oracle_still_counts_calls() {
        let obj = scaled_square(2, 1.0);
        let oracle = GradientOracle::new(obj, 1.0, 1.0, DVector::zeros(2), 0.0).unwrap();
        let mut stream = NoiseStream::new(9);
        let x = DVector::from_vec(vec![1.0, 2.0]);
        assert_eq!(oracle.noisy_gradient(&x, &mut stream), x);
        assert_eq!(stream.calls(), 1);
    }

    #[test]
    fn minibatch_requires_finite_sum() {
        let obj = scaled_square(2, 1.0);
        let oracle = GradientOracle::new(obj, 1.0, 1.0, DVector::zeros(2), 0.0).unwrap();
        assert!(matches!(
            oracle.with_noise(NoiseInjector::Minibatch { batch_size: 1 }, 0),
            Err(Error::NotFiniteSum)
        ));
    }

    #[test]
    fn restart_state_blocks_equal() {
        let s = IterateState::restart(DVector::from_vec(vec![1.0, 2.0]));
        assert_eq!(s.first_block(), &s.x_prev);
        assert!(IterateState::new(DVector::zeros(2), DVector::zeros(3)).is_err());
    }
}
