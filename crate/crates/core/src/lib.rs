//! Multistage accelerated stochastic gradient methods for strongly convex,
//! smooth objectives under noisy gradient oracles.
//!
//! The crate is organized around a few pieces:
//!
//! * [`oracle`]: curvature profiles, gradient oracles with pluggable noise,
//!   and the momentum system matrices.
//! * [`problems`]: quadratic and logistic test objectives.
//! * [`schedules`]: multistage stepsize/length plans and iterate bookkeeping.
//! * [`optimizers`]: the ASG step, M-ASG, M-ASG*, and baselines.
//! * [`certify`]: Lyapunov matrices, LMI residuals, rates and bound curves.
//! * [`harness`]: declarative experiments, multi-seed aggregation and CSV.

pub mod certify;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod optimizers;
pub mod oracle;
pub mod problems;
pub mod rng;
pub mod schedules;

pub use certify::{
    asymptotic_rate, build_p_alpha, build_q_alpha, lmi_residual, lyapunov_value, LmiResidual,
    LyapunovCertificate,
};
pub use error::{Error, Result};
pub use optimizers::{AcsaParams, AsgConfig, RunTrace, TracePoint};
pub use oracle::{
    check_membership, critical_momentum, make_asg_params, GradientOracle, IterateState, MembershipReport,
    NoiseInjector, NoiseModel, Objective, StrongConvexityProfile, SystemMatrices,
};
pub use rng::NoiseStream;
pub use schedules::{IterateLocator, Stage, StagePlan};

/// Vector type used for iterates throughout the API.
pub use nalgebra::DVector;
