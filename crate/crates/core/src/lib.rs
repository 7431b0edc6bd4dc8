//! Continuous-time importance sampling for multivariate diffusions.
//!
//! The crate estimates transition densities and expectations of diffusions
//! without time discretisation error. Trajectories are simulated only at the
//! events of a renewal process, each step drawn from a Gaussian kernel with
//! coefficients frozen at the last event, and a signed weight corrects for the
//! frozen coefficients. Around this core sit checkpoint resampling, Wagner's
//! parametrix estimator and the usual discretised baselines.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod cis;
pub mod error;
pub mod gaussian;
pub mod models;
pub mod proposals;
pub mod renewal;
pub mod resampling;
pub mod rng;
pub mod stats;
pub mod wagner;

pub use baselines::{
    dg_density_estimate, dg_replicate, euler_simulate, sis_known_density, BridgeAnchor, DgOutput, SisOutput,
};
pub use cis::{
    density_estimate, expectation_estimate, incremental_weight, incremental_weight_1d, run_cis, run_gcis,
    AdaptationPolicy, CisOutput, CisSampler, CisTrajectory, Estimate, ExpectationMode, Functional, GcisOutput,
};
pub use error::{Error, Result};
pub use models::{
    check_derivatives, BuiltInModel, CirParams, CoefficientBundle, DerivativeReport, DiffusionModel, FiniteDiffModel,
    KnownTransition, State,
};
pub use proposals::{BridgeProposal, LogDensityDerivs, ProposalParams};
pub use renewal::RenewalRate;
pub use resampling::{ess, ParticleSystem, ResamplingConfig, ResamplingScheme};
pub use rng::{stream, StreamRng};
pub use stats::{stats, SampleStats};
pub use wagner::{wgr_density_estimate, wgr_expectation, TimeStep, WagnerConfig, WagnerVariant, WgrOutput};
