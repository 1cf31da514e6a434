//! Test objectives: cycle-graph quadratics, dense quadratics and regularized
//! logistic regression, plus noise attachment and convex regularization.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{domain, Error, Result};
use crate::linalg::power_iteration;
use crate::oracle::{critical_momentum, FiniteSum, GradientOracle, NoiseInjector, Objective};
use crate::rng::data_rng;

/// Gradient-norm target for the noiseless reference solves.
pub const REFERENCE_GRADIENT_TOL: f64 = 1e-12;

/// `f(x) = x'Qx/2 - b'x + lambda ||x||^2` with `Q` the Laplacian of the
/// `d`-cycle. Gradients cost `O(d)`.
#[derive(Debug, Clone)]
pub struct CycleQuadratic {
    b: DVector<f64>,
    lambda: f64,
    optimum: DVector<f64>,
}

impl CycleQuadratic {
    /// Dense Laplacian of the `d`-cycle.
    pub fn laplacian(d: usize) -> DMatrix<f64> {
        let mut q = DMatrix::zeros(d, d);
        for i in 0..d {
            q[(i, i)] = 2.0;
            q[(i, (i + 1) % d)] = -1.0;
            q[((i + 1) % d, i)] = -1.0;
        }
        q
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    /// `H v` with `H = Q + 2 lambda I`.
    fn hessian_apply(&self, v: &DVector<f64>, out: &mut DVector<f64>) {
        let d = v.len();
        let diag = 2.0 + 2.0 * self.lambda;
        for i in 0..d {
            let left = v[(i + d - 1) % d];
            let right = v[(i + 1) % d];
            out[i] = diag * v[i] - left - right;
        }
    }
}

impl Objective for CycleQuadratic {
    fn dim(&self) -> usize {
        self.b.len()
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        let mut hx = DVector::zeros(x.len());
        self.hessian_apply(x, &mut hx);
        0.5 * x.dot(&hx) - self.b.dot(x)
    }

    fn gradient_into(&self, x: &DVector<f64>, out: &mut DVector<f64>) {
        self.hessian_apply(x, out);
        *out -= &self.b;
    }

    fn exact_gap(&self, x: &DVector<f64>) -> Option<f64> {
        let e = x - &self.optimum;
        let mut he = DVector::zeros(e.len());
        self.hessian_apply(&e, &mut he);
        Some(0.5 * e.dot(&he))
    }
}

/// Cycle quadratic with `b ~ N(0, I)` drawn from `seed`. Declares
/// `mu = 2 lambda` and `L = lambda_max(Q) + 2 lambda`.
pub fn make_cycle_quadratic(d: usize, lambda: f64, seed: u64) -> Result<GradientOracle> {
    let mut rng = data_rng(seed);
    let b = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
    cycle_quadratic_with_b(d, lambda, b)
}

/// Cycle quadratic with an explicit linear term.
pub fn cycle_quadratic_with_b(d: usize, lambda: f64, b: DVector<f64>) -> Result<GradientOracle> {
    if d < 3 {
        return Err(domain(format!("cycle graph needs d >= 3, got {d}")));
    }
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(domain(format!("regularization must be positive, got {lambda}")));
    }
    if b.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: b.len() });
    }
    let q = CycleQuadratic::laplacian(d);
    let q_max = max_eigenvalue(&q);
    let h = &q + DMatrix::identity(d, d) * (2.0 * lambda);
    let optimum = h
        .cholesky()
        .ok_or_else(|| Error::SolverFailed("cycle Hessian not positive definite".into()))?
        .solve(&b);
    let optimal_value = -0.5 * b.dot(&optimum);
    let objective = CycleQuadratic { b, lambda, optimum: optimum.clone() };
    GradientOracle::new(Arc::new(objective), 2.0 * lambda, q_max + 2.0 * lambda, optimum, optimal_value)
}

/// Merely convex cycle quadratic `x'Qx/2 - b'x` (no regularization). `b` is
/// drawn from `seed` and projected orthogonally to the all-ones kernel so a
/// minimizer exists; the declared minimizer has minimum norm.
pub fn make_convex_cycle_quadratic(d: usize, seed: u64) -> Result<GradientOracle> {
    if d < 3 {
        return Err(domain(format!("cycle graph needs d >= 3, got {d}")));
    }
    let mut rng = data_rng(seed);
    let mut b = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
    let mean: f64 = b.mean();
    b.add_scalar_mut(-mean);
    let q = CycleQuadratic::laplacian(d);
    let q_max = max_eigenvalue(&q);
    // Q + 11'/d is positive definite and agrees with Q on the complement of
    // the kernel, so its solve gives the minimum-norm minimizer.
    let shifted = &q + DMatrix::from_element(d, d, 1.0 / d as f64);
    let optimum = shifted
        .cholesky()
        .ok_or_else(|| Error::SolverFailed("shifted Laplacian not positive definite".into()))?
        .solve(&b);
    let optimal_value = -0.5 * b.dot(&optimum);
    let objective = ConvexCycle { b, optimum: optimum.clone() };
    GradientOracle::new(Arc::new(objective), 0.0, q_max, optimum, optimal_value)
}

#[derive(Debug, Clone)]
struct ConvexCycle {
    b: DVector<f64>,
    optimum: DVector<f64>,
}

impl ConvexCycle {
    fn laplacian_apply(v: &DVector<f64>, out: &mut DVector<f64>) {
        let d = v.len();
        for i in 0..d {
            out[i] = 2.0 * v[i] - v[(i + d - 1) % d] - v[(i + 1) % d];
        }
    }
}

impl Objective for ConvexCycle {
    fn dim(&self) -> usize {
        self.b.len()
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        let mut qx = DVector::zeros(x.len());
        Self::laplacian_apply(x, &mut qx);
        0.5 * x.dot(&qx) - self.b.dot(x)
    }

    fn gradient_into(&self, x: &DVector<f64>, out: &mut DVector<f64>) {
        Self::laplacian_apply(x, out);
        *out -= &self.b;
    }

    fn exact_gap(&self, x: &DVector<f64>) -> Option<f64> {
        let e = x - &self.optimum;
        let mut qe = DVector::zeros(e.len());
        Self::laplacian_apply(&e, &mut qe);
        Some(0.5 * e.dot(&qe))
    }
}

/// `f(x) = x'Hx/2 - b'x` for a symmetric positive definite `H`.
#[derive(Debug, Clone)]
pub struct DenseQuadratic {
    h: DMatrix<f64>,
    b: DVector<f64>,
    optimum: DVector<f64>,
}

impl DenseQuadratic {
    /// Builds the oracle with `mu`, `L` the extreme eigenvalues of `H`.
    pub fn oracle(h: DMatrix<f64>, b: DVector<f64>) -> Result<GradientOracle> {
        let d = h.nrows();
        if h.ncols() != d {
            return Err(domain("Hessian must be square"));
        }
        if b.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: b.len() });
        }
        if (&h - h.transpose()).abs().max() > 1e-12 * h.abs().max().max(1.0) {
            return Err(domain("Hessian must be symmetric"));
        }
        let eig = h.clone().symmetric_eigen().eigenvalues;
        let (mu, l) = (eig.min(), eig.max());
        if mu <= 0.0 {
            return Err(domain(format!("Hessian must be positive definite, smallest eigenvalue {mu}")));
        }
        let optimum = h
            .clone()
            .cholesky()
            .ok_or_else(|| Error::SolverFailed("Cholesky factorization failed".into()))?
            .solve(&b);
        let optimal_value = -0.5 * b.dot(&optimum);
        let objective = DenseQuadratic { h, b, optimum: optimum.clone() };
        GradientOracle::new(Arc::new(objective), mu, l, optimum, optimal_value)
    }

    /// Diagonal Hessian, handy when the eigenbasis must be known.
    pub fn diagonal(eigenvalues: &[f64], b: DVector<f64>) -> Result<GradientOracle> {
        Self::oracle(DMatrix::from_diagonal(&DVector::from_column_slice(eigenvalues)), b)
    }
}

impl Objective for DenseQuadratic {
    fn dim(&self) -> usize {
        self.b.len()
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.h * x)) - self.b.dot(x)
    }

    fn gradient_into(&self, x: &DVector<f64>, out: &mut DVector<f64>) {
        self.h.mul_to(x, out);
        *out -= &self.b;
    }

    fn exact_gap(&self, x: &DVector<f64>) -> Option<f64> {
        let e = x - &self.optimum;
        Some(0.5 * e.dot(&(&self.h * &e)))
    }
}

/// Regularized logistic loss
/// `(1/N) sum_i log(1 + exp(-y_i m_i'x)) + lambda ||x||^2`.
#[derive(Debug, Clone)]
pub struct LogisticProblem {
    m: DMatrix<f64>,
    labels: DVector<f64>,
    lambda: f64,
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl LogisticProblem {
    /// Labels `y = sign(M w)` with `sign(0) = +1`.
    pub fn from_data(m: DMatrix<f64>, w: &DVector<f64>, lambda: f64) -> Result<Self> {
        if m.ncols() != w.len() {
            return Err(Error::DimensionMismatch { expected: m.ncols(), got: w.len() });
        }
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(domain(format!("regularization must be positive, got {lambda}")));
        }
        let labels = (&m * w).map(|s| if s >= 0.0 { 1.0 } else { -1.0 });
        Ok(Self { m, labels, lambda })
    }

    pub fn labels(&self) -> &DVector<f64> {
        &self.labels
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.m
    }

    /// `mu = 2 lambda` and `L = lambda_max(M'M) / (4N) + 2 lambda`, with the
    /// spectral norm from power iteration. The estimate is padded by a
    /// relative `1e-8` so the declared `L` stays an upper bound.
    pub fn curvature(&self) -> Result<(f64, f64)> {
        let n = self.m.nrows() as f64;
        let mut tmp = DVector::zeros(self.m.nrows());
        let top = power_iteration(self.m.ncols(), 1e-10, 100_000, |v, out| {
            self.m.mul_to(v, &mut tmp);
            self.m.tr_mul_to(&tmp, out);
        })?;
        let l = top * (1.0 + 1e-8) / (4.0 * n) + 2.0 * self.lambda;
        Ok((2.0 * self.lambda, l))
    }

    fn accumulate(&self, x: &DVector<f64>, rows: impl Iterator<Item = usize>, count: usize, out: &mut DVector<f64>) {
        out.fill(0.0);
        for i in rows {
            let row = self.m.row(i);
            let margin = self.labels[i] * row.dot(&x.transpose());
            let weight = -self.labels[i] * sigmoid(-margin);
            for (o, r) in out.iter_mut().zip(row.iter()) {
                *o += weight * r;
            }
        }
        *out /= count as f64;
        out.axpy(2.0 * self.lambda, x, 1.0);
    }
}

impl Objective for LogisticProblem {
    fn dim(&self) -> usize {
        self.m.ncols()
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        let margins = &self.m * x;
        let loss: f64 = margins
            .iter()
            .zip(self.labels.iter())
            .map(|(s, y)| softplus(-y * s))
            .sum();
        loss / self.m.nrows() as f64 + self.lambda * x.norm_squared()
    }

    fn gradient_into(&self, x: &DVector<f64>, out: &mut DVector<f64>) {
        let n = self.m.nrows();
        self.accumulate(x, 0..n, n, out);
    }

    fn finite_sum(&self) -> Option<&dyn FiniteSum> {
        Some(self)
    }
}

impl FiniteSum for LogisticProblem {
    fn num_terms(&self) -> usize {
        self.m.nrows()
    }

    fn batch_gradient_into(&self, x: &DVector<f64>, indices: &[usize], out: &mut DVector<f64>) {
        self.accumulate(x, indices.iter().copied(), indices.len(), out);
    }
}

/// Synthetic logistic regression: `M` and the hidden `w` have i.i.d.
/// standard normal entries, `y = sign(M w)`, and `lambda = 1/sqrt(N)`.
pub fn make_synthetic_logistic(n: usize, d: usize, seed: u64) -> Result<GradientOracle> {
    if d == 0 || n < d {
        return Err(domain(format!("need N >= d >= 1, got N={n}, d={d}")));
    }
    let mut rng = data_rng(seed);
    let m = DMatrix::from_fn(n, d, |_, _| StandardNormal.sample(&mut rng));
    let w = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
    logistic_oracle(LogisticProblem::from_data(m, &w, 1.0 / (n as f64).sqrt())?)
}

/// Wraps a logistic problem, computing `x*` and `f*` by a noiseless solve.
pub fn logistic_oracle(problem: LogisticProblem) -> Result<GradientOracle> {
    let (mu, l) = problem.curvature()?;
    let x0 = DVector::zeros(problem.dim());
    let optimum = minimize_noiseless(&problem, mu, l, &x0, REFERENCE_GRADIENT_TOL, 1_000_000)?;
    let optimal_value = problem.value(&optimum);
    GradientOracle::new(Arc::new(problem), mu, l, optimum, optimal_value)
}

/// Deterministic ASG with `alpha = 1/L` and critical momentum, run until the
/// gradient norm drops to `tol`.
pub fn minimize_noiseless(
    objective: &dyn Objective,
    mu: f64,
    l: f64,
    x0: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<DVector<f64>> {
    let alpha = 1.0 / l;
    let beta = critical_momentum(alpha, mu);
    let mut x = x0.clone();
    let mut x_prev = x0.clone();
    let mut y = x0.clone();
    let mut g = DVector::zeros(x0.len());
    let mut best = f64::INFINITY;
    for _ in 0..max_iter {
        y.copy_from(&x);
        y *= 1.0 + beta;
        y.axpy(-beta, &x_prev, 1.0);
        objective.gradient_into(&y, &mut g);
        let gn = g.norm();
        if !gn.is_finite() {
            return Err(Error::SolverFailed("reference solve produced a non-finite gradient".into()));
        }
        if gn <= tol {
            return Ok(y);
        }
        best = best.min(gn);
        std::mem::swap(&mut x_prev, &mut x);
        x.copy_from(&y);
        x.axpy(-alpha, &g, 1.0);
    }
    Err(Error::SolverFailed(format!(
        "reference solve stalled at gradient norm {best:e} (target {tol:e})"
    )))
}

/// Same objective with a different noise source; the exact maps are shared.
pub fn attach_noise(oracle: &GradientOracle, injector: NoiseInjector, seed: u64) -> Result<GradientOracle> {
    oracle.with_noise(injector, seed)
}

/// `f(x) + (lambda/2) ||x - anchor||^2`.
#[derive(Debug)]
pub struct RegularizedObjective {
    base: Arc<dyn Objective>,
    lambda: f64,
    anchor: DVector<f64>,
}

impl Objective for RegularizedObjective {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        self.base.value(x) + 0.5 * self.lambda * (x - &self.anchor).norm_squared()
    }

    fn gradient_into(&self, x: &DVector<f64>, out: &mut DVector<f64>) {
        self.base.gradient_into(x, out);
        out.axpy(self.lambda, x, 1.0);
        out.axpy(-self.lambda, &self.anchor, 1.0);
    }
}

/// Proximal regularization used to run strongly convex methods on merely
/// convex objectives: `lambda = L / (sqrt(n) - 1)`, declared profile
/// `(lambda, L + lambda)`. The minimizer is found by a noiseless solve and
/// the returned oracle keeps the input's noise source.
pub fn regularize_for_convex(oracle: &GradientOracle, n: u64, x0: &DVector<f64>) -> Result<(GradientOracle, f64)> {
    if n < 2 {
        return Err(domain(format!("convex regularization needs a budget n >= 2, got {n}")));
    }
    if x0.len() != oracle.dim() {
        return Err(Error::DimensionMismatch { expected: oracle.dim(), got: x0.len() });
    }
    let l = oracle.lipschitz();
    let lambda = l / ((n as f64).sqrt() - 1.0);
    let objective = RegularizedObjective { base: oracle.objective().clone(), lambda, anchor: x0.clone() };
    let (mu_r, l_r) = (lambda, l + lambda);
    let optimum = minimize_noiseless(&objective, mu_r, l_r, x0, REFERENCE_GRADIENT_TOL, 1_000_000)?;
    let optimal_value = objective.value(&optimum);
    let regularized = GradientOracle::new(Arc::new(objective), mu_r, l_r, optimum, optimal_value)?;
    let regularized = match oracle.injector() {
        NoiseInjector::Exact => regularized,
        injector => regularized.with_noise(injector, oracle.noise_seed())?,
    };
    Ok((regularized, lambda))
}

fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigen().eigenvalues.max()
}
