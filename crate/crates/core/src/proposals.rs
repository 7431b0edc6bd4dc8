//! Gaussian proposal kernels.
//!
//! The copycat kernel freezes the target coefficients at the last event:
//! `q(x, y, u) = N(y; x + u·b̃, u·γ̃)` with `(b̃, γ̃)` taken from the anchor.
//! Its log-gradient and Hessian ratio in `y` are
//!
//! ```text
//! Λ = −γ̃⁻¹ (y − x − u b̃) / u
//! K = ∇²q / q = Λ Λᵀ − γ̃⁻¹ / u
//! ```
//!
//! The modified Brownian bridge pins the path to a terminal value `x_T` at time `T`:
//!
//! ```text
//! g(x_s, x_t; x_T, a) = N(x_t; (x_s (T−t) + x_T (t−s)) / (T−s), a (T−t)(t−s)/(T−s))
//! ```

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gaussian::SpdFactor;
use crate::models::{CoefficientBundle, State};

/// Frozen drift and diffusion of a copycat kernel, with `γ̃⁻¹` and the
/// Cholesky factor of `γ̃` cached for the whole inter-event segment.
#[derive(Debug, Clone)]
pub struct ProposalParams {
    drift: DVector<f64>,
    sigma: DMatrix<f64>,
    gamma: DMatrix<f64>,
    factor: SpdFactor,
}

/// Gradient `Λ` of `log q` and the Hessian ratio `K = ∇²q/q`, both in `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogDensityDerivs {
    pub lambda_vec: DVector<f64>,
    pub k_mat: DMatrix<f64>,
}

impl ProposalParams {
    pub fn new(drift: DVector<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        let gamma = &sigma * sigma.transpose();
        Self::with_gamma(drift, sigma, gamma)
    }

    pub fn from_bundle(bundle: &CoefficientBundle) -> Result<Self> {
        Self::with_gamma(bundle.drift.clone(), bundle.sigma.clone(), bundle.gamma.clone())
    }

    fn with_gamma(drift: DVector<f64>, sigma: DMatrix<f64>, gamma: DMatrix<f64>) -> Result<Self> {
        if sigma.nrows() != drift.len() {
            return Err(Error::Dimension {
                expected: drift.len(),
                got: sigma.nrows(),
            });
        }
        let factor = SpdFactor::new(&gamma)?;
        Ok(Self {
            drift,
            sigma,
            gamma,
            factor,
        })
    }

    /// Same diffusion part, new drift.
    pub fn with_drift(&self, drift: DVector<f64>) -> Self {
        Self { drift, ..self.clone() }
    }

    pub fn dim(&self) -> usize {
        self.drift.len()
    }

    pub fn anchor_drift(&self) -> &DVector<f64> {
        &self.drift
    }

    pub fn anchor_sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn anchor_gamma(&self) -> &DMatrix<f64> {
        &self.gamma
    }

    pub fn anchor_gamma_inv(&self) -> &DMatrix<f64> {
        self.factor.inverse()
    }

    pub(crate) fn factor(&self) -> &SpdFactor {
        &self.factor
    }

    /// Mean `x + u·b̃` of the kernel after time `u`.
    pub fn mean(&self, x: &State, u: f64) -> State {
        x + &self.drift * u
    }

    /// Covariance `u·γ̃`.
    pub fn covariance(&self, u: f64) -> DMatrix<f64> {
        &self.gamma * u
    }

    pub fn log_density(&self, x: &State, y: &State, u: f64) -> Result<f64> {
        if !(u > 0.0) {
            return Err(Error::SingularCovariance);
        }
        Ok(self.factor.log_density_scaled(y, &self.mean(x, u), u))
    }

    pub fn density(&self, x: &State, y: &State, u: f64) -> Result<f64> {
        self.log_density(x, y, u).map(f64::exp)
    }

    /// `y = x + u·b̃ + √u·σ̃·z` for a standard normal vector `z`.
    pub fn sample(&self, x: &State, u: f64, z: &DVector<f64>) -> State {
        self.mean(x, u) + &self.sigma * z * u.sqrt()
    }

    pub fn log_density_derivs(&self, x: &State, y: &State, u: f64) -> Result<LogDensityDerivs> {
        if !(u > 0.0) {
            return Err(Error::SingularCovariance);
        }
        let inv = self.factor.inverse();
        let resid = y - self.mean(x, u);
        let lambda_vec = -(inv * resid) / u;
        let k_mat = &lambda_vec * lambda_vec.transpose() - inv / u;
        Ok(LogDensityDerivs { lambda_vec, k_mat })
    }
}

/// Modified Brownian bridge towards `terminal` at time `horizon`, with scale matrix `a`.
#[derive(Debug, Clone)]
pub struct BridgeProposal {
    terminal: State,
    horizon: f64,
    scale: SpdFactor,
    root: DMatrix<f64>,
}

impl BridgeProposal {
    pub fn new(terminal: State, horizon: f64, scale: &DMatrix<f64>) -> Result<Self> {
        let factor = SpdFactor::new(scale)?;
        Ok(Self::from_factor(terminal, horizon, factor))
    }

    /// Bridge whose scale is the frozen `γ̃` of a copycat kernel.
    pub fn from_params(terminal: State, horizon: f64, params: &ProposalParams) -> Self {
        Self::from_factor(terminal, horizon, params.factor().clone())
    }

    fn from_factor(terminal: State, horizon: f64, scale: SpdFactor) -> Self {
        let root = scale.lower();
        Self {
            terminal,
            horizon,
            scale,
            root,
        }
    }

    pub fn terminal(&self) -> &State {
        &self.terminal
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Mean at time `t` and the scalar multiplying `a` in the covariance.
    pub fn moments(&self, s: f64, x_s: &State, t: f64) -> Result<(State, f64)> {
        let big_t = self.horizon;
        if !(t > s && t < big_t) {
            return Err(Error::DegenerateBridge { s, t, horizon: big_t });
        }
        let span = big_t - s;
        let mean = (x_s * (big_t - t) + &self.terminal * (t - s)) / span;
        Ok((mean, (big_t - t) * (t - s) / span))
    }

    pub fn log_density(&self, s: f64, x_s: &State, t: f64, x_t: &State) -> Result<f64> {
        let (mean, v) = self.moments(s, x_s, t)?;
        Ok(self.scale.log_density_scaled(x_t, &mean, v))
    }

    pub fn density(&self, s: f64, x_s: &State, t: f64, x_t: &State) -> Result<f64> {
        self.log_density(s, x_s, t, x_t).map(f64::exp)
    }

    pub fn sample(&self, s: f64, x_s: &State, t: f64, z: &DVector<f64>) -> Result<State> {
        let (mean, v) = self.moments(s, x_s, t)?;
        Ok(mean + &self.root * z * v.sqrt())
    }

    /// Moments in terms of the time already elapsed since `x_s` and the time
    /// still remaining to the horizon, for steps too small to survive the
    /// subtraction of absolute times.
    pub fn moments_split(&self, x_s: &State, elapsed: f64, remaining: f64) -> Result<(State, f64)> {
        if !(elapsed > 0.0 && remaining > 0.0) {
            return Err(Error::DegenerateBridge {
                s: self.horizon - remaining - elapsed,
                t: self.horizon - remaining,
                horizon: self.horizon,
            });
        }
        let span = elapsed + remaining;
        let mean = (x_s * remaining + &self.terminal * elapsed) / span;
        Ok((mean, remaining * elapsed / span))
    }

    pub fn log_density_split(&self, x_s: &State, elapsed: f64, remaining: f64, x_t: &State) -> Result<f64> {
        let (mean, v) = self.moments_split(x_s, elapsed, remaining)?;
        Ok(self.scale.log_density_scaled(x_t, &mean, v))
    }

    pub fn sample_split(&self, x_s: &State, elapsed: f64, remaining: f64, z: &DVector<f64>) -> Result<State> {
        let (mean, v) = self.moments_split(x_s, elapsed, remaining)?;
        Ok(mean + &self.root * z * v.sqrt())
    }
}
