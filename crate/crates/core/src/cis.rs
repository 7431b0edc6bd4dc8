//! Continuous-time importance sampling (CIS) for diffusions.
//!
//! A trajectory moves only at the events of a renewal process. Between events
//! it follows a constant-coefficient Gaussian kernel frozen at the last event
//! (the copycat proposal), and at each event `τₖ₊₁` the signed weight is
//! multiplied by
//!
//! ```text
//! ρ(x, y, u) = 1 + [(𝒦 − 𝒦_θ) q](y) / (λ(u) q(y))
//! ```
//!
//! where `𝒦` is the forward operator of the target, `𝒦_θ` that of the frozen
//! kernel, `u = τₖ₊₁ − τₖ`, and `(x, y)` are the anchor and the newly drawn state.
//! Expanding the operators with `Λ` and `K` from
//! [`ProposalParams::log_density_derivs`](crate::proposals::ProposalParams::log_density_derivs):
//!
//! ```text
//! 𝒦q/q   = ½ [γ(y):K + γ₍₂₎(y):𝟙] + [γ₍₁₎(y)𝟙 − b(y)]·Λ − b₍₁₎(y)·𝟙
//! 𝒦_θq/q = ½ γ̃:K − b̃·Λ
//! ```
//!
//! When the next event falls after the horizon `T`, the run stops with last
//! event `s`, anchor `x_s` and weight `w_T`; the signed measure
//! `w_T · q(x_s, ·, T − s)` is an unbiased estimate of the transition law at `T`.
//! `ρ` can be negative, so weights are plain reals and never accumulated in log space.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{CoefficientBundle, DiffusionModel, State};
use crate::proposals::{BridgeProposal, LogDensityDerivs, ProposalParams};
use crate::renewal::RenewalRate;
use crate::rng::std_normal_vec;
use crate::stats::mean_stderr;

/// How the proposal coefficients are refreshed at each event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdaptationPolicy {
    /// Re-anchor drift and diffusion at every event.
    #[default]
    FullCopycat,
    /// Re-anchor the drift only; the diffusion stays at its initial value.
    DriftOnly,
    /// Never re-anchor.
    Frozen,
}

/// `𝒦q/q` for the target operator, given the coefficients at `y`.
pub fn target_forward_ratio(at_y: &CoefficientBundle, derivs: &LogDensityDerivs) -> f64 {
    let ones = DVector::from_element(at_y.drift.len(), 1.0);
    let second = 0.5 * (at_y.gamma.dot(&derivs.k_mat) + at_y.gamma_second_deriv.sum());
    let first = (&at_y.gamma_first_deriv * &ones - &at_y.drift).dot(&derivs.lambda_vec);
    second + first - at_y.drift_diag_deriv.sum()
}

/// `𝒦_θq/q` for the frozen-coefficient kernel.
pub fn proposal_forward_ratio(params: &ProposalParams, derivs: &LogDensityDerivs) -> f64 {
    0.5 * params.anchor_gamma().dot(&derivs.k_mat) - params.anchor_drift().dot(&derivs.lambda_vec)
}

/// Incremental weight with the coefficients at `y` already evaluated.
pub fn incremental_weight_with(
    at_y: &CoefficientBundle,
    params: &ProposalParams,
    x: &State,
    y: &State,
    u: f64,
    rate: &RenewalRate,
) -> Result<f64> {
    let derivs = params.log_density_derivs(x, y, u)?;
    let ones = DVector::from_element(x.len(), 1.0);
    let gamma_term = 0.5 * ((&at_y.gamma - params.anchor_gamma()).dot(&derivs.k_mat) + at_y.gamma_second_deriv.sum());
    let drift_term = (&at_y.gamma_first_deriv * &ones - &at_y.drift + params.anchor_drift()).dot(&derivs.lambda_vec);
    Ok(1.0 + (gamma_term + drift_term - at_y.drift_diag_deriv.sum()) / rate.rate(u))
}

/// Incremental weight `ρ(x, y, u)` in matrix form.
pub fn incremental_weight<M: DiffusionModel + ?Sized>(
    model: &M,
    params: &ProposalParams,
    x: &State,
    y: &State,
    u: f64,
    rate: &RenewalRate,
) -> Result<f64> {
    incremental_weight_with(&model.eval(y)?, params, x, y, u, rate)
}

/// Scalar form of the incremental weight for one-dimensional models.
pub fn incremental_weight_1d<M: DiffusionModel + ?Sized>(
    model: &M,
    params: &ProposalParams,
    x: &State,
    y: &State,
    u: f64,
    rate: &RenewalRate,
) -> Result<f64> {
    if model.dim() != 1 {
        return Err(Error::Dimension {
            expected: 1,
            got: model.dim(),
        });
    }
    let at = model.eval(y)?;
    let (gx, bx) = (params.anchor_gamma()[(0, 0)], params.anchor_drift()[0]);
    let (gy, by) = (at.gamma[(0, 0)], at.drift[0]);
    let (dgy, d2gy, dby) = (
        at.gamma_first_deriv[(0, 0)],
        at.gamma_second_deriv[(0, 0)],
        at.drift_diag_deriv[0],
    );
    let r = y[0] - x[0] - u * bx;
    let braces = 0.5 * (gy - gx) * (r * r / (gx * u) - 1.0) + (by - bx - dgy) * r;
    Ok(1.0 + (braces / (gx * u) + 0.5 * d2gy - dby) / rate.rate(u))
}

/// State of one CIS trajectory between events.
///
/// `next_event` is the already drawn time of the following event; keeping it
/// lets a run be paused at a checkpoint and resumed without changing its law
/// or its random stream. The drawn waiting time is kept as well, since it can
/// be far below the resolution of `next_event − last_event`.
#[derive(Debug, Clone)]
pub struct CisTrajectory {
    pub last_event: f64,
    pub anchor: State,
    pub weight: f64,
    pub params: ProposalParams,
    pub next_event: f64,
    pub event_count: usize,
    pub eval_count: usize,
    gap: f64,
    base: ProposalParams,
}

impl CisTrajectory {
    /// Output view at time `horizon` (which must not precede the last event).
    pub fn output(&self, horizon: f64) -> CisOutput {
        CisOutput {
            last_event_time: self.last_event,
            anchor: self.anchor.clone(),
            weight: self.weight,
            params: self.params.clone(),
            horizon,
            event_count: self.event_count,
            eval_count: self.eval_count,
        }
    }

    /// Proposal density `q(x_s, y, t − s; θ)` of this trajectory at time `t`.
    pub fn proposal_density(&self, t: f64, y: &State) -> Result<f64> {
        self.params.density(&self.anchor, y, t - self.last_event)
    }

    pub fn proposal_log_density(&self, t: f64, y: &State) -> Result<f64> {
        self.params.log_density(&self.anchor, y, t - self.last_event)
    }
}

/// Output of a CIS run: a weighted Gaussian estimate of the law at the horizon.
#[derive(Debug, Clone)]
pub struct CisOutput {
    pub last_event_time: f64,
    pub anchor: State,
    pub weight: f64,
    pub params: ProposalParams,
    pub horizon: f64,
    pub event_count: usize,
    pub eval_count: usize,
}

impl CisOutput {
    pub fn remaining(&self) -> f64 {
        self.horizon - self.last_event_time
    }

    pub fn terminal_mean(&self) -> State {
        self.params.mean(&self.anchor, self.remaining())
    }

    pub fn terminal_covariance(&self) -> DMatrix<f64> {
        self.params.covariance(self.remaining())
    }

    pub fn sample_terminal<R: Rng + ?Sized>(&self, rng: &mut R) -> State {
        let z = std_normal_vec(rng, self.anchor.len());
        self.params.sample(&self.anchor, self.remaining(), &z)
    }
}

/// Signed single-replicate density estimate `w_T · q(x_s, y, T − s; θ)`.
pub fn density_estimate(output: &CisOutput, y: &State) -> Result<f64> {
    Ok(output.weight * output.params.density(&output.anchor, y, output.remaining())?)
}

/// Runs CIS trajectories for one model, renewal rate and adaptation policy.
pub struct CisSampler<'a, M: DiffusionModel + ?Sized> {
    model: &'a M,
    rate: RenewalRate,
    policy: AdaptationPolicy,
}

impl<'a, M: DiffusionModel + ?Sized> CisSampler<'a, M> {
    pub fn new(model: &'a M, rate: RenewalRate, policy: AdaptationPolicy) -> Self {
        Self { model, rate, policy }
    }

    pub fn model(&self) -> &'a M {
        self.model
    }

    pub fn rate(&self) -> &RenewalRate {
        &self.rate
    }

    /// Starts a trajectory at `x0` at time `start`, with initial weight `weight`,
    /// and draws its first waiting time.
    pub fn start<R: Rng + ?Sized>(&self, x0: &State, start: f64, weight: f64, rng: &mut R) -> Result<CisTrajectory> {
        let params = ProposalParams::from_bundle(&self.model.eval(x0)?)?;
        let gap = self.rate.draw_interarrival(rng);
        Ok(CisTrajectory {
            last_event: start,
            anchor: x0.clone(),
            weight,
            next_event: start + gap,
            event_count: 0,
            eval_count: 1,
            gap,
            base: params.clone(),
            params,
        })
    }

    /// Restarts `traj` at a new point and time, keeping its initial-diffusion
    /// reference for [`AdaptationPolicy::DriftOnly`].
    pub fn restart<R: Rng + ?Sized>(
        &self,
        traj: &mut CisTrajectory,
        x: &State,
        time: f64,
        weight: f64,
        rng: &mut R,
    ) -> Result<()> {
        let bundle = self.model.eval(x)?;
        traj.params = self.adapt(&traj.base, &bundle)?;
        traj.anchor = x.clone();
        traj.last_event = time;
        traj.weight = weight;
        traj.gap = self.rate.draw_interarrival(rng);
        traj.next_event = time + traj.gap;
        traj.eval_count += 1;
        Ok(())
    }

    fn adapt(&self, base: &ProposalParams, bundle: &CoefficientBundle) -> Result<ProposalParams> {
        match self.policy {
            AdaptationPolicy::FullCopycat => ProposalParams::from_bundle(bundle),
            AdaptationPolicy::DriftOnly => Ok(base.with_drift(bundle.drift.clone())),
            AdaptationPolicy::Frozen => Ok(base.clone()),
        }
    }

    /// Processes every event strictly before `until`.
    pub fn advance<R: Rng + ?Sized>(&self, traj: &mut CisTrajectory, until: f64, rng: &mut R) -> Result<()> {
        while traj.next_event < until {
            let u = traj.gap;
            let z = std_normal_vec(rng, traj.anchor.len());
            let y = traj.params.sample(&traj.anchor, u, &z);
            let at_y = self.model.eval(&y)?;
            traj.eval_count += 1;
            traj.weight *= incremental_weight_with(&at_y, &traj.params, &traj.anchor, &y, u, &self.rate)?;
            traj.params = self.adapt(&traj.base, &at_y)?;
            traj.anchor = y;
            traj.last_event = traj.next_event;
            traj.event_count += 1;
            traj.gap = self.rate.draw_interarrival(rng);
            traj.next_event = traj.last_event + traj.gap;
        }
        Ok(())
    }

    pub fn run<R: Rng + ?Sized>(&self, x0: &State, horizon: f64, rng: &mut R) -> Result<CisOutput> {
        if !(horizon > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        let mut traj = self.start(x0, 0.0, 1.0, rng)?;
        self.advance(&mut traj, horizon, rng)?;
        Ok(traj.output(horizon))
    }
}

/// One CIS replicate on `[0, horizon]`.
pub fn run_cis<M: DiffusionModel + ?Sized, R: Rng + ?Sized>(
    model: &M,
    x0: &State,
    horizon: f64,
    rate: RenewalRate,
    policy: AdaptationPolicy,
    rng: &mut R,
) -> Result<CisOutput> {
    CisSampler::new(model, rate, policy).run(x0, horizon, rng)
}

/// A test function `f` whose expectation is being estimated.
#[derive(Clone)]
pub enum Functional {
    /// `a·y + c`.
    Affine {
        coeffs: DVector<f64>,
        offset: f64,
    },
    /// `yᵀ A y + a·y + c`.
    Quadratic {
        matrix: DMatrix<f64>,
        coeffs: DVector<f64>,
        offset: f64,
    },
    General(Arc<dyn Fn(&State) -> f64 + Send + Sync>),
}

impl fmt::Debug for Functional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Affine { coeffs, offset } => f
                .debug_struct("Affine")
                .field("coeffs", &coeffs.as_slice())
                .field("offset", offset)
                .finish(),
            Self::Quadratic { offset, .. } => f
                .debug_struct("Quadratic")
                .field("offset", offset)
                .finish_non_exhaustive(),
            Self::General(_) => f.write_str("General(..)"),
        }
    }
}

impl Functional {
    pub fn constant(dim: usize, c: f64) -> Self {
        Self::Affine {
            coeffs: DVector::zeros(dim),
            offset: c,
        }
    }

    /// `f(y) = yᵢ`.
    pub fn coordinate(dim: usize, i: usize) -> Self {
        let mut coeffs = DVector::zeros(dim);
        coeffs[i] = 1.0;
        Self::Affine { coeffs, offset: 0.0 }
    }

    pub fn general<F: Fn(&State) -> f64 + Send + Sync + 'static>(f: F) -> Self {
        Self::General(Arc::new(f))
    }

    pub fn evaluate(&self, y: &State) -> f64 {
        match self {
            Self::Affine { coeffs, offset } => coeffs.dot(y) + offset,
            Self::Quadratic { matrix, coeffs, offset } => (y.transpose() * matrix * y)[(0, 0)] + coeffs.dot(y) + offset,
            Self::General(f) => f(y),
        }
    }

    /// `E f(Y)` for `Y ~ N(mean, cov)`.
    pub fn gaussian_expectation(&self, mean: &State, cov: &DMatrix<f64>) -> Result<f64> {
        match self {
            Self::Affine { coeffs, offset } => Ok(coeffs.dot(mean) + offset),
            Self::Quadratic { matrix, coeffs, offset } => {
                Ok((matrix * cov).trace() + (mean.transpose() * matrix * mean)[(0, 0)] + coeffs.dot(mean) + offset)
            }
            Self::General(_) => Err(Error::UnsupportedFunctional),
        }
    }
}

/// How `∫ f(y) q(y) dy` is evaluated for each replicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpectationMode {
    /// Closed-form Gaussian integral (affine and quadratic `f`).
    #[default]
    RaoBlackwell,
    /// One draw `x_T ~ q` per replicate.
    Sampled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
    pub n: usize,
}

/// Per-replicate summand `w ∫ f q` (or `w f(x_T)`, `x_T ~ q`).
pub fn expectation_summand<R: Rng + ?Sized>(
    output: &CisOutput,
    f: &Functional,
    mode: ExpectationMode,
    rng: &mut R,
) -> Result<f64> {
    Ok(output.weight
        * match mode {
            ExpectationMode::RaoBlackwell => {
                f.gaussian_expectation(&output.terminal_mean(), &output.terminal_covariance())?
            }
            ExpectationMode::Sampled => f.evaluate(&output.sample_terminal(rng)),
        })
}

/// Unbiased estimate of `E f(X_T)` from independent CIS outputs.
pub fn expectation_estimate<R: Rng + ?Sized>(
    outputs: &[CisOutput],
    f: &Functional,
    mode: ExpectationMode,
    rng: &mut R,
) -> Result<Estimate> {
    let terms = outputs
        .iter()
        .map(|o| expectation_summand(o, f, mode, rng))
        .collect::<Result<Vec<_>>>()?;
    let (value, stderr) = mean_stderr(&terms)?;
    Ok(Estimate {
        value,
        stderr,
        n: terms.len(),
    })
}

/// One guided-CIS replicate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GcisOutput {
    /// Signed estimate of `p(x₀, x_T, T)`.
    pub estimate: f64,
    /// Accumulated `Π ρₖ q/g` before the final kernel.
    pub weight: f64,
    pub last_event_time: f64,
    pub event_count: usize,
    pub eval_count: usize,
}

/// Guided CIS: events draw the new state from a modified Brownian bridge
/// towards `x_t` (scale `γ` at the current anchor) and correct the weight by
/// `q/g`. Returns `q(x_s, x_T, T − s) · Π ρₖ q(xₖ, xₖ₊₁, Δτₖ) / g(xₖ, xₖ₊₁)`.
pub fn run_gcis<M: DiffusionModel + ?Sized, R: Rng + ?Sized>(
    model: &M,
    x0: &State,
    x_t: &State,
    horizon: f64,
    rate: RenewalRate,
    rng: &mut R,
) -> Result<GcisOutput> {
    if !(horizon > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "horizon must be positive, got {horizon}"
        )));
    }
    if x_t.len() != x0.len() {
        return Err(Error::Dimension {
            expected: x0.len(),
            got: x_t.len(),
        });
    }
    let mut params = ProposalParams::from_bundle(&model.eval(x0)?)?;
    let mut anchor = x0.clone();
    let mut last = 0.0;
    let mut left = horizon;
    let mut weight = 1.0;
    let mut events = 0;
    let mut evals = 1;
    loop {
        let u = rate.draw_interarrival(rng);
        let remaining = left - u;
        if remaining <= 0.0 {
            break;
        }
        let bridge = BridgeProposal::from_params(x_t.clone(), horizon, &params);
        let z = std_normal_vec(rng, anchor.len());
        let y = bridge.sample_split(&anchor, u, remaining, &z)?;
        let at_y = model.eval(&y)?;
        evals += 1;
        let rho = incremental_weight_with(&at_y, &params, &anchor, &y, u, &rate)?;
        let log_ratio = params.log_density(&anchor, &y, u)? - bridge.log_density_split(&anchor, u, remaining, &y)?;
        weight *= rho * log_ratio.exp();
        params = ProposalParams::from_bundle(&at_y)?;
        anchor = y;
        last += u;
        left = remaining;
        events += 1;
    }
    Ok(GcisOutput {
        estimate: weight * params.density(&anchor, x_t, left)?,
        weight,
        last_event_time: last,
        event_count: events,
        eval_count: evals,
    })
}
