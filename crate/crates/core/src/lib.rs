//! Numerics for critical continuous-state branching processes and the
//! generalized coagulation dynamics they drive.
//!
//! The library works at the Laplace-exponent level. A [`BranchingMechanism`]
//! carries the drift, diffusion and jump data of the process; the backward
//! equation `d/dt Phi = -Psi(Phi)` is solved exactly through the
//! hitting-time representation ([`ExactSolver`]) and independently by the
//! Bernstein-preserving implicit Euler scheme ([`euler_phi`]). Weak
//! solutions with initial data compose the fundamental flow with an initial
//! exponent ([`ExponentFlow`]). Distributional information is recovered by
//! numerical transform inversion ([`MeasureView`]), populations are sampled
//! exactly through their Poisson structure ([`simulate`]), and the
//! long-time scaling limits are verified against the generalized
//! Mittag-Leffler laws ([`scaling`], [`MittagLefflerLaw`]).

// negated comparisons like `!(x > 0.0)` are deliberate: they reject NaN
// along with the out-of-domain sign
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod exponent;
pub mod gml;
pub mod measures;
pub mod mechanism;
pub mod numeric;
pub mod scaling;
pub mod simulate;

pub use error::{Error, Result};
pub use exponent::{euler_phi, ExactSolver, ExponentFlow, FlowBackend, InitialExponent};
pub use gml::{prabhakar, AccuracyFlag, MittagLefflerLaw, SelfSimilarFamily};
pub use measures::{gaver_stehfest, InversionFlag, MassCdfPoint, MeasureView, TailIndexReport};
pub use mechanism::{
    moment_functional, AtomicMeasure, BranchingMechanism, Criticality, GreyVerdict, JumpMeasure,
};
pub use scaling::{
    check_conditional_limit, check_fundamental_limit, check_process_limit, check_scaling_limit,
    FittedConstants, ProcessHarness, ScalingReport, TheoremId, Verdict,
};
pub use simulate::{
    sample_conditional, sample_csbp, sample_weak_solution, CsbpSampler, Ensemble, EnsembleSummary,
    WeakSolutionSample,
};
