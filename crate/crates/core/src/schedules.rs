//! Multistage schedules: stage lengths that double while stepsizes shrink by
//! four, the rules for picking the first-stage length, and the map from a
//! global iteration index to `(stage, within-stage index)`.

use std::fmt;

use crate::error::{domain, Error, Result};
use crate::oracle::{critical_momentum, StrongConvexityProfile};

/// Largest stage count accepted; stage lengths grow like `2^k`.
pub const MAX_STAGES: usize = 48;

/// Ceiling with a tie guard: values within `1e-12 * max(1, |x|)` of an
/// integer snap to that integer, so a product that lands one ulp above an
/// integer does not bump the schedule by one on some platforms.
pub fn ceil_guarded(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() <= 1e-12 * x.abs().max(1.0) {
        r
    } else {
        x.ceil()
    }
}

fn to_count(x: f64, what: &str) -> Result<u64> {
    if !(x.is_finite() && x >= 0.0 && x < 2f64.powi(62)) {
        return Err(domain(format!("{what} is not a representable count: {x}")));
    }
    Ok(x as u64)
}

/// Non-fatal conditions met while choosing a schedule.
#[derive(Debug, Clone, PartialEq)]
pub enum ScheduleWarning {
    /// The universal rule assumes `n >= 2 sqrt(kappa)`.
    ShortBudget { n: u64, threshold: f64 },
    /// The balanced rule asked for more than the budget (e.g. `sigma2 = 0`).
    FirstStageCapped { requested: f64, budget: u64 },
}

impl fmt::Display for ScheduleWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScheduleWarning::ShortBudget { n, threshold } => {
                write!(f, "budget {n} is below 2 sqrt(kappa) = {threshold:.3}")
            }
            ScheduleWarning::FirstStageCapped { requested, budget } => {
                write!(f, "first stage length {requested} capped at the budget {budget}")
            }
        }
    }
}

/// One stage: `len` gradient steps with stepsize `alpha` and critical
/// momentum `beta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stage {
    pub len: u64,
    pub alpha: f64,
    pub beta: f64,
}

/// Geometric multistage schedule. Stage 1 runs `n1` steps with `alpha = 1/L`;
/// stage `k >= 2` runs `2^k * base_len` steps with `alpha = 1/(4^k L)`, where
/// `base_len = ceil(sqrt(kappa) * ln(2^(p+2)))`.
#[derive(Debug, Clone, PartialEq)]
pub struct StagePlan {
    p: f64,
    n1: u64,
    base_len: u64,
    stages: Vec<Stage>,
    profile: StrongConvexityProfile,
}

/// `ceil(sqrt(kappa) (p + 2) ln 2)`.
pub fn base_length(profile: &StrongConvexityProfile, p: f64) -> Result<u64> {
    if !(p.is_finite() && p >= 1.0) {
        return Err(domain(format!("rate exponent p must be >= 1, got {p}")));
    }
    let len = to_count(ceil_guarded(profile.sqrt_kappa() * (p + 2.0) * std::f64::consts::LN_2), "base length")?;
    Ok(len.max(1))
}

impl StagePlan {
    /// Plan with exactly `stages` stages.
    pub fn geometric(profile: StrongConvexityProfile, p: f64, n1: u64, stages: usize) -> Result<Self> {
        let base_len = base_length(&profile, p)?;
        if n1 == 0 {
            return Err(domain("first stage length must be >= 1"));
        }
        if stages == 0 || stages > MAX_STAGES {
            return Err(domain(format!("stage count must lie in 1..={MAX_STAGES}, got {stages}")));
        }
        let mut list = Vec::with_capacity(stages);
        for k in 1..=stages {
            let (len, alpha) = if k == 1 {
                (n1, 1.0 / profile.l())
            } else {
                let len = base_len
                    .checked_mul(1u64 << k)
                    .ok_or_else(|| domain(format!("stage {k} length overflows")))?;
                (len, 1.0 / (4f64.powi(k as i32) * profile.l()))
            };
            list.push(Stage { len, alpha, beta: critical_momentum(alpha, profile.mu()) });
        }
        let plan = Self { p, n1, base_len, stages: list, profile };
        plan.total_len()?;
        Ok(plan)
    }

    /// Fewest stages whose total length reaches `budget`. Runs against this
    /// plan stop after `budget` steps, truncating the last stage.
    pub fn covering(profile: StrongConvexityProfile, p: f64, n1: u64, budget: u64) -> Result<Self> {
        let base_len = base_length(&profile, p)?;
        let mut total = n1;
        let mut k = 1usize;
        while total < budget {
            k += 1;
            if k > MAX_STAGES {
                return Err(domain(format!("budget {budget} needs more than {MAX_STAGES} stages")));
            }
            total += base_len << k;
        }
        Self::geometric(profile, p, n1, k)
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn n1(&self) -> u64 {
        self.n1
    }

    pub fn base_len(&self) -> u64 {
        self.base_len
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    pub fn num_stages(&self) -> usize {
        self.stages.len()
    }

    pub fn profile(&self) -> &StrongConvexityProfile {
        &self.profile
    }

    /// Stage `k`, 1-based.
    pub fn stage(&self, k: usize) -> Option<&Stage> {
        k.checked_sub(1).and_then(|i| self.stages.get(i))
    }

    /// Cumulative lengths `[N_0 = 0, N_1, ..., N_K]`.
    pub fn prefix_sums(&self) -> Vec<u64> {
        let mut out = Vec::with_capacity(self.stages.len() + 1);
        let mut acc = 0u64;
        out.push(0);
        for s in &self.stages {
            acc = acc.saturating_add(s.len);
            out.push(acc);
        }
        out
    }

    /// `N_K` by summation.
    pub fn total_len(&self) -> Result<u64> {
        self.stages
            .iter()
            .try_fold(0u64, |acc, s| acc.checked_add(s.len))
            .ok_or_else(|| domain("schedule length overflows"))
    }

    /// `N_K = n1 + (2^(K+1) - 4) base_len`, valid for every `K >= 1`.
    pub fn total_len_closed_form(&self, k: usize) -> u64 {
        self.n1 + ((1u64 << (k + 1)) - 4) * self.base_len
    }

    pub fn locator(&self) -> IterateLocator {
        IterateLocator { n1: self.n1, base_len: self.base_len, prefix: self.prefix_sums() }
    }

    /// Rows `(k, n_k, alpha_k L, beta_k, N_k)`.
    pub fn table(&self) -> Vec<(usize, u64, f64, f64, u64)> {
        let prefix = self.prefix_sums();
        self.stages
            .iter()
            .enumerate()
            .map(|(i, s)| (i + 1, s.len, s.alpha * self.profile.l(), s.beta, prefix[i + 1]))
            .collect()
    }
}

/// Map from a global iteration index to `(stage k, within-stage m)`.
/// Indices on a stage boundary `N_k` belong to the end of stage `k`.
#[derive(Debug, Clone)]
pub struct IterateLocator {
    n1: u64,
    base_len: u64,
    prefix: Vec<u64>,
}

impl IterateLocator {
    pub fn total_len(&self) -> u64 {
        *self.prefix.last().expect("prefix sums start with N_0")
    }

    /// Binary search over prefix sums; `None` past the end of the plan.
    pub fn locate(&self, n: u64) -> Option<(usize, u64)> {
        if n <= self.n1 {
            return Some((1, n));
        }
        if n > self.total_len() {
            return None;
        }
        // First k >= 1 with N_k >= n.
        let k = self.prefix.partition_point(|&acc| acc < n);
        Some((k, n - self.prefix[k - 1]))
    }

    /// `k = ceil(log2((n - n1)/base_len + 4) - 1)`, `m = n - N_{k-1}`,
    /// evaluated in exact integer arithmetic. Valid for any `n`, including
    /// indices past the planned stages.
    pub fn locate_closed_form(&self, n: u64) -> (usize, u64) {
        if n <= self.n1 {
            return (1, n);
        }
        // ceil(log2(q)) is the least j with base_len * 2^j >= (n - n1) + 4 base_len.
        let target = (n - self.n1) as u128 + 4 * self.base_len as u128;
        let mut j = 0usize;
        while (self.base_len as u128) << j < target {
            j += 1;
        }
        let k = j - 1;
        let before = self.n1 as u128 + (((1u128 << k) - 4) * self.base_len as u128);
        (k, (n as u128 - before) as u64)
    }
}

/// First stage as a fixed fraction of the budget: `max(1, floor(n / c))`.
/// Warns when `n < 2 sqrt(kappa)`.
pub fn n1_universal(
    profile: &StrongConvexityProfile,
    n: u64,
    c: f64,
) -> Result<(u64, Option<ScheduleWarning>)> {
    if !(c.is_finite() && c >= 2.0) {
        return Err(domain(format!("budget fraction constant must be >= 2, got {c}")));
    }
    let threshold = 2.0 * profile.sqrt_kappa();
    let warning = ((n as f64) < threshold).then(|| ScheduleWarning::ShortBudget { n, threshold });
    if let Some(w) = &warning {
        log::warn!("{w}");
    }
    let n1 = to_count((n as f64 / c).floor(), "first stage length")?.max(1);
    Ok((n1, warning))
}

/// First stage for a fixed target exponent:
/// `ceil((p+1) sqrt(kappa) ln(12 (p+1) kappa))`.
pub fn n1_fixed_rate(profile: &StrongConvexityProfile, p: f64) -> Result<u64> {
    if !(p.is_finite() && p >= 1.0) {
        return Err(domain(format!("rate exponent p must be >= 1, got {p}")));
    }
    let k = profile.kappa();
    let x = (p + 1.0) * profile.sqrt_kappa() * (12.0 * (p + 1.0) * k).ln();
    Ok(to_count(ceil_guarded(x), "first stage length")?.max(1))
}

/// Schedule reaching expected accuracy `eps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccuracyTarget {
    pub n1: u64,
    pub stages: usize,
    pub budget: u64,
}

/// `n1 = ceil(sqrt(kappa) ln(4 Delta / eps))`,
/// `K = ceil(log2(sigma2 sqrt(kappa) / (L eps))) + 2` (at least 1, and 1 when
/// `sigma2 = 0`), and budget `n1 + ceil(16 (1 + ln 8) sigma2 / (mu eps))`.
pub fn n1_accuracy(
    profile: &StrongConvexityProfile,
    delta: f64,
    eps: f64,
    sigma2: Option<f64>,
) -> Result<AccuracyTarget> {
    let sigma2 = sigma2.ok_or(Error::UnknownVariance)?;
    if !(eps > 0.0 && eps < delta && delta.is_finite()) {
        return Err(domain(format!("need 0 < eps < Delta, got eps={eps}, Delta={delta}")));
    }
    if !(sigma2.is_finite() && sigma2 >= 0.0) {
        return Err(domain(format!("variance must be >= 0, got {sigma2}")));
    }
    let n1 = to_count(ceil_guarded(profile.sqrt_kappa() * (4.0 * delta / eps).ln()), "first stage length")?.max(1);
    let stages = if sigma2 == 0.0 {
        1
    } else {
        let raw = ceil_guarded((sigma2 * profile.sqrt_kappa() / (profile.l() * eps)).log2()) + 2.0;
        if raw > MAX_STAGES as f64 {
            return Err(domain(format!("accuracy target needs {raw} stages")));
        }
        raw.max(1.0) as usize
    };
    let variance_len = to_count(
        ceil_guarded(16.0 * (1.0 + 8f64.ln()) * sigma2 / (profile.mu() * eps)),
        "variance budget",
    )?;
    Ok(AccuracyTarget { n1, stages, budget: n1 + variance_len })
}

/// Bias/variance balancing first stage for known `Delta` and `sigma2`:
/// `ceil(sqrt(kappa) ln(2 L Delta / (sigma2 sqrt(kappa))))`, at least 1. With
/// `sigma2 = 0` (or any request above the budget) the length is capped at
/// `budget` with a warning.
pub fn n1_balanced(
    profile: &StrongConvexityProfile,
    delta: f64,
    sigma2: Option<f64>,
    budget: u64,
) -> Result<(u64, Option<ScheduleWarning>)> {
    let sigma2 = sigma2.ok_or(Error::UnknownVariance)?;
    if !(delta.is_finite() && delta > 0.0) {
        return Err(domain(format!("initial gap bound must be positive, got {delta}")));
    }
    if !(sigma2.is_finite() && sigma2 >= 0.0) {
        return Err(domain(format!("variance must be >= 0, got {sigma2}")));
    }
    let sk = profile.sqrt_kappa();
    let requested = if sigma2 == 0.0 {
        f64::INFINITY
    } else {
        ceil_guarded(sk * (2.0 * profile.l() * delta / (sigma2 * sk)).ln()).max(1.0)
    };
    if requested > budget as f64 {
        let w = ScheduleWarning::FirstStageCapped { requested, budget };
        log::warn!("{w}");
        return Ok((budget.max(1), Some(w)));
    }
    Ok((requested as u64, None))
}
