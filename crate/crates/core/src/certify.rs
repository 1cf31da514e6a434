//! Lyapunov certificates for the momentum iteration, the 3x3 LMI residual
//! that certifies them, asymptotic rates on quadratics, and closed-form
//! suboptimality bounds used as comparison curves.

use crate::error::{domain, Result};
use crate::linalg::{det3, symmetric_eigenvalues, symmetric_eigenvalues_2x2};
use crate::oracle::{critical_momentum, GradientOracle, IterateState, StrongConvexityProfile, SystemMatrices};
use crate::schedules::StagePlan;

/// Quadratic weight `P` (2x2, acting blockwise on `(x_k - x*, x_{k-1} - x*)`)
/// with the contraction `rho2` and the per-unit-variance additive term it
/// certifies: `E V(xi') <= rho2 E V(xi) + variance_coeff * sigma2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovCertificate {
    pub p: [[f64; 2]; 2],
    pub rho2: f64,
    pub variance_coeff: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl LyapunovCertificate {
    /// Eigenvalues of `P`, ascending.
    pub fn eigenvalues(&self) -> [f64; 2] {
        symmetric_eigenvalues_2x2(&self.p)
    }
}

/// `P = v v'` with `v = (sqrt(1/(2 alpha)), sqrt(mu/2) - sqrt(1/(2 alpha)))`,
/// certifying `rho2 = 1 - sqrt(alpha mu)` and variance term
/// `alpha (1 + alpha L) / 2` for the critical momentum.
pub fn build_p_alpha(alpha: f64, profile: &StrongConvexityProfile) -> Result<LyapunovCertificate> {
    profile.check_step(alpha)?;
    // Entries expanded so that v0^2 = 1/(2 alpha) is not rounded through a square root.
    let v0_sq = 0.5 / alpha;
    let v1 = (0.5 * profile.mu()).sqrt() - v0_sq.sqrt();
    let off = 0.5 * (profile.mu() / alpha).sqrt() - v0_sq;
    Ok(LyapunovCertificate {
        p: [[v0_sq, off], [off, v1 * v1]],
        rho2: 1.0 - (alpha * profile.mu()).sqrt(),
        variance_coeff: 0.5 * alpha * (1.0 + alpha * profile.l()),
        alpha,
        beta: critical_momentum(alpha, profile.mu()),
    })
}

/// Largest stepsize covered by the state-dependent noise certificate:
/// `min(1/L, mu^3 / (60 eta2)^2)`, or `1/L` without state-dependent noise.
pub fn general_noise_step_limit(profile: &StrongConvexityProfile, eta2: f64) -> f64 {
    let inv_l = 1.0 / profile.l();
    if eta2 > 0.0 {
        inv_l.min(profile.mu().powi(3) / (60.0 * eta2).powi(2))
    } else {
        inv_l
    }
}

/// `Q = P_alpha + 2 alpha eta2 c'c` with `c = (1 + beta, -beta)`, certifying
/// `rho2 = 1 - sqrt(alpha mu)/3` and variance term `2 alpha` under
/// `E||noise||^2 <= sigma2 + eta2 ||y - x*||^2`. Requires `kappa >= 4`.
pub fn build_q_alpha(alpha: f64, profile: &StrongConvexityProfile, eta2: f64) -> Result<LyapunovCertificate> {
    if !(eta2.is_finite() && eta2 >= 0.0) {
        return Err(domain(format!("eta2 must be >= 0, got {eta2}")));
    }
    if profile.kappa() < 4.0 {
        return Err(domain(format!("state-dependent noise certificate needs kappa >= 4, got {}", profile.kappa())));
    }
    let limit = general_noise_step_limit(profile, eta2);
    if !(alpha > 0.0 && alpha <= limit * (1.0 + 1e-12)) {
        return Err(domain(format!("stepsize must lie in (0, {limit}], got {alpha}")));
    }
    let base = build_p_alpha(alpha, profile)?;
    let c = [1.0 + base.beta, -base.beta];
    let w = 2.0 * alpha * eta2;
    let mut p = base.p;
    for (i, row) in p.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v += w * c[i] * c[j];
        }
    }
    Ok(LyapunovCertificate {
        p,
        rho2: 1.0 - (alpha * profile.mu()).sqrt() / 3.0,
        variance_coeff: 2.0 * alpha,
        ..base
    })
}

/// `sum_ij P_ij (x_i - x*)'(x_j - x*) + f(x_curr) - f*`, evaluated blockwise.
pub fn lyapunov_value(cert: &LyapunovCertificate, state: &IterateState, oracle: &GradientOracle) -> Result<f64> {
    if state.dim() != oracle.dim() {
        return Err(crate::Error::DimensionMismatch { expected: oracle.dim(), got: state.dim() });
    }
    let e0 = &state.x_curr - oracle.optimum();
    let e1 = &state.x_prev - oracle.optimum();
    let quad = cert.p[0][0] * e0.norm_squared()
        + 2.0 * cert.p[0][1] * e0.dot(&e1)
        + cert.p[1][1] * e1.norm_squared();
    Ok(quad + oracle.suboptimality(&state.x_curr)?)
}

/// LMI residual `Gamma` with its spectrum summary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmiResidual {
    pub gamma: [[f64; 3]; 3],
    pub min_eigenvalue: f64,
    /// Sum of absolute eigenvalues.
    pub trace_norm: f64,
    pub alpha: f64,
    pub beta: f64,
    pub rho2: f64,
    pub p: [[f64; 2]; 2],
    pub mu: f64,
    pub l: f64,
}

impl LmiResidual {
    pub fn determinant(&self) -> f64 {
        det3(&self.gamma)
    }

    /// PSD up to `-tol * trace_norm`.
    pub fn is_psd(&self, tol: f64) -> bool {
        self.min_eigenvalue >= -tol * self.trace_norm
    }
}

/// `Gamma = rho2 X1 + (1 - rho2) X2 - [[A'PA - rho2 P, A'PB], [B'PA, B'PB]]`
/// where `X1`, `X2` encode the strong convexity / smoothness interpolation
/// inequalities at `(y, x_k)` and `(y, x*)`. `Gamma >= 0` certifies
/// `V(xi') <= rho2 V(xi)` in the noiseless case.
pub fn lmi_residual(
    alpha: f64,
    beta: f64,
    rho2: f64,
    p: &[[f64; 2]; 2],
    profile: &StrongConvexityProfile,
) -> LmiResidual {
    let (mu, l) = (profile.mu(), profile.l());
    let last = alpha * (2.0 - l * alpha);
    let b2 = beta * beta;
    let bp = 1.0 + beta;
    let x1 = [
        [b2 * mu, -b2 * mu, -beta],
        [-b2 * mu, b2 * mu, beta],
        [-beta, beta, last],
    ];
    let x2 = [
        [bp * bp * mu, -beta * bp * mu, -bp],
        [-beta * bp * mu, b2 * mu, beta],
        [-bp, beta, last],
    ];
    let sys = SystemMatrices::new(alpha, beta);
    let (a, b) = (sys.a, sys.b);
    // Block [[A'PA - rho2 P, A'PB], [B'PA, B'PB]].
    let mut pa = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            pa[i][j] = p[i][0] * a[0][j] + p[i][1] * a[1][j];
        }
    }
    let mut block = [[0.0; 3]; 3];
    for i in 0..2 {
        for j in 0..2 {
            block[i][j] = a[0][i] * pa[0][j] + a[1][i] * pa[1][j] - rho2 * p[i][j];
        }
        let pb = [p[0][0] * b[0] + p[0][1] * b[1], p[1][0] * b[0] + p[1][1] * b[1]];
        block[i][2] = a[0][i] * pb[0] + a[1][i] * pb[1];
        block[2][i] = block[i][2];
        if i == 1 {
            block[2][2] = b[0] * pb[0] + b[1] * pb[1];
        }
    }
    let mut gamma = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            gamma[i][j] = 0.5 * (rho2 * x1[i][j] + (1.0 - rho2) * x2[i][j]) - block[i][j];
        }
    }
    let eig = symmetric_eigenvalues(&gamma);
    LmiResidual {
        gamma,
        min_eigenvalue: eig[0],
        trace_norm: eig.iter().map(|e| e.abs()).sum(),
        alpha,
        beta,
        rho2,
        p: *p,
        mu,
        l,
    }
}

/// Residual for the critical-momentum certificate at stepsize `alpha`.
pub fn certified_residual(alpha: f64, profile: &StrongConvexityProfile) -> Result<LmiResidual> {
    let cert = build_p_alpha(alpha, profile)?;
    Ok(lmi_residual(alpha, cert.beta, cert.rho2, &cert.p, profile))
}

/// Spectral radius of the mode iteration `[[(1+beta) a, -beta a], [1, 0]]`
/// with `a = 1 - alpha lambda`.
pub fn mode_rate(alpha: f64, beta: f64, lambda: f64) -> f64 {
    let a = 1.0 - alpha * lambda;
    let t = (1.0 + beta) * a;
    // Discriminant t^2 - 4 beta a, factored to limit cancellation.
    let disc = a * (t * (1.0 + beta) - 4.0 * beta);
    let scale = t * t + 4.0 * (beta * a).abs();
    if disc.abs() <= 64.0 * f64::EPSILON * scale {
        // Double root.
        0.5 * t.abs()
    } else if disc > 0.0 {
        0.5 * t.abs() + 0.5 * disc.sqrt()
    } else {
        (beta * a).sqrt()
    }
}

/// Worst-case asymptotic rate on quadratics with Hessian spectrum in
/// `[mu, L]`: the larger of the mode rates at `mu` and `L`.
pub fn asymptotic_rate(alpha: f64, beta: f64, profile: &StrongConvexityProfile) -> f64 {
    mode_rate(alpha, beta, profile.mu()).max(mode_rate(alpha, beta, profile.l()))
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(domain(format!("{name} must be positive, got {v}")))
    }
}

fn check_nonneg(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(domain(format!("{name} must be >= 0, got {v}")))
    }
}

/// Expected suboptimality bound at the end of stage `k` of a geometric plan:
/// `2 / 2^((p+1)(k-1)) exp(-n1/sqrt(kappa)) Delta0 + sigma2 sqrt(kappa) / (L 2^(k-1))`.
pub fn stage_end_bound(plan: &StagePlan, delta0: f64, sigma2: f64, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(domain("stages are numbered from 1"));
    }
    check_nonneg("initial gap", delta0)?;
    check_nonneg("variance", sigma2)?;
    let pr = plan.profile();
    let sk = pr.sqrt_kappa();
    let km1 = (k - 1) as f64;
    let bias = 2.0 * (-(plan.p() + 1.0) * km1 * std::f64::consts::LN_2 - plan.n1() as f64 / sk).exp() * delta0;
    let variance = sigma2 * sk / (pr.l() * 2f64.powf(km1));
    Ok(bias + variance)
}

/// Bound after a budget of `n` iterations of a geometric plan:
/// `c [ (8 (p+1) sqrt(kappa) ln 2)^(p+1) / (n-n1)^(p+1) exp(-n1/sqrt(kappa)) Delta0
///   + (p+1) sigma2 / ((n-n1) mu) ]`. The constant `c` is not specified by
/// the analysis; pass 1 for the bare expression.
pub fn budget_bound(
    profile: &StrongConvexityProfile,
    p: f64,
    n1: u64,
    n: u64,
    delta0: f64,
    sigma2: f64,
    c: f64,
) -> Result<f64> {
    if n <= n1 {
        return Err(domain(format!("budget {n} must exceed the first stage {n1}")));
    }
    check_nonneg("initial gap", delta0)?;
    check_nonneg("variance", sigma2)?;
    check_positive("constant", c)?;
    let sk = profile.sqrt_kappa();
    let rest = (n - n1) as f64;
    let ratio = 8.0 * (p + 1.0) * sk * std::f64::consts::LN_2 / rest;
    let bias = ((p + 1.0) * ratio.ln() - n1 as f64 / sk).exp() * delta0;
    let variance = (p + 1.0) * sigma2 / (rest * profile.mu());
    Ok(c * (bias + variance))
}

/// Single stage with `alpha = (p sqrt(kappa) ln n / n)^2 / L`:
/// `2 Delta0 / n^p + p sigma2 ln n / (n mu)`.
pub fn single_stage_bound(profile: &StrongConvexityProfile, p: f64, n: u64, delta0: f64, sigma2: f64) -> Result<f64> {
    check_positive("p", p)?;
    check_nonneg("initial gap", delta0)?;
    check_nonneg("variance", sigma2)?;
    if n < 2 {
        return Err(domain(format!("budget must be >= 2, got {n}")));
    }
    let nf = n as f64;
    Ok(2.0 * delta0 / nf.powf(p) + p * sigma2 * nf.ln() / (nf * profile.mu()))
}

/// Variance-optimal bound with a bias-balancing first stage:
/// `36 (1 + ln 8) sigma2 / ((n - n1) mu)`.
pub fn balanced_bound(profile: &StrongConvexityProfile, n1: u64, n: u64, sigma2: f64) -> Result<f64> {
    if n <= n1 {
        return Err(domain(format!("budget {n} must exceed the first stage {n1}")));
    }
    check_nonneg("variance", sigma2)?;
    Ok(36.0 * (1.0 + 8f64.ln()) * sigma2 / ((n - n1) as f64 * profile.mu()))
}

/// Merely convex objectives with proximal regularization:
/// `2 Delta0 / n + L ||x0 - x*||^2 / sqrt(n) + sigma2 ln n / (sqrt(n) L)`.
pub fn convex_bound(l: f64, n: u64, delta0: f64, dist2: f64, sigma2: f64) -> Result<f64> {
    check_positive("L", l)?;
    check_nonneg("initial gap", delta0)?;
    check_nonneg("initial distance", dist2)?;
    check_nonneg("variance", sigma2)?;
    if n < 2 {
        return Err(domain(format!("budget must be >= 2, got {n}")));
    }
    let nf = n as f64;
    let sn = nf.sqrt();
    Ok(2.0 * delta0 / nf + l * dist2 / sn + sigma2 * nf.ln() / (sn * l))
}

/// Reference curve for the deterministic lower bound,
/// `L ||x0 - x*||^2 exp(-c n / sqrt(kappa))`. Not a guarantee.
pub fn bias_reference_curve(profile: &StrongConvexityProfile, dist2: f64, c: f64, n: u64) -> f64 {
    profile.l() * dist2 * (-c * n as f64 / profile.sqrt_kappa()).exp()
}

/// Reference curve for the statistical lower bound, `c sigma2 / (mu n)`.
/// Not a guarantee.
pub fn variance_reference_curve(profile: &StrongConvexityProfile, sigma2: f64, c: f64, n: u64) -> Result<f64> {
    if n == 0 {
        return Err(domain("budget must be positive"));
    }
    Ok(c * sigma2 / (profile.mu() * n as f64))
}
