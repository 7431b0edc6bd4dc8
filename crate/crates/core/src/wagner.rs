//! Wagner's unbiased transition density estimator.
//!
//! The density solves the parametrix equation
//!
//! ```text
//! p(x₀, z, t) = p̃(x₀, z, t) + ∫₀ᵗ ∫ p(x₀, y, s) C(y, z, t − s) dy ds
//! C(y, z, r)  = (L_y − L^z_y) p̃^z(y, z, r)
//! ```
//!
//! where `L` is the backward generator and `p̃^z` the Gaussian kernel with
//! coefficients frozen at the terminal point `z`. Iterating the equation and
//! sampling the resulting series gives, for random times `t = t₀ > t₁ > … > tₙ`
//! and bridge-drawn states `x_{t_k}`,
//!
//! ```text
//! p̃(x₀, x_{tₙ}, tₙ) / p_u(tₙ) · Π C(x_{t_k}, x_{t_{k−1}}, t_{k−1} − t_k)
//!     / [g_bb(x₀, x_{t_k}; x_{t_{k−1}}, γ(x₀)) · q_u(t_{k−1}, t_k) · (1 − p_u(t_{k−1}))]
//! ```
//!
//! With frozen coefficients, `C/p̃ = −(b(y) − b(z))·Λ + ½ (γ(y) − γ(z)):K` in
//! terms of the log-derivatives `Λ`, `K` of the kernel in its second argument.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::models::{CoefficientBundle, DiffusionModel, State};
use crate::proposals::{BridgeProposal, ProposalParams};
use crate::renewal::RenewalRate;
use crate::rng::std_normal_vec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WagnerVariant {
    /// Wagner's own time kernel: `p_u(t) = 1 / Σ δᵐΓ(α)ᵐt^{mα}/Γ(mα+1)`.
    Wgr1,
    /// Time points of the CIS renewal process read backwards: `p_u(t) = exp(−δt^α/α)`.
    Wgr2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WagnerConfig {
    pub variant: WagnerVariant,
    pub rate: RenewalRate,
}

/// Outcome of one time-step draw. `Next` carries the new time point and the
/// drawn decrement `t_prev − t_next`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimeStep {
    Absorbed,
    Next { time: f64, gap: f64 },
}

impl WagnerConfig {
    pub fn new(variant: WagnerVariant, delta: f64, alpha: f64) -> Result<Self> {
        Ok(Self {
            variant,
            rate: RenewalRate::new(delta, alpha)?,
        })
    }

    /// Absorption probability `p_u(t)`.
    pub fn absorption_prob(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 1.0;
        }
        match self.variant {
            WagnerVariant::Wgr2 => self.rate.survival(t),
            WagnerVariant::Wgr1 if self.rate.is_constant() => (-self.rate.delta() * t).exp(),
            WagnerVariant::Wgr1 => 1.0 / wagner_series(self.rate.delta(), self.rate.alpha(), t),
        }
    }

    /// `q_u(t, s)·(1 − p_u(t))`, the density of moving from `t` to `s < t`.
    pub fn step_density(&self, t: f64, s: f64) -> f64 {
        self.step_density_gap(t, t - s)
    }

    /// [`step_density`](Self::step_density) in terms of the decrement `t − s`.
    pub fn step_density_gap(&self, t: f64, gap: f64) -> f64 {
        if !(gap > 0.0 && gap < t) {
            return 0.0;
        }
        match self.variant {
            WagnerVariant::Wgr2 => self.rate.interarrival_density(gap),
            WagnerVariant::Wgr1 => {
                self.rate.delta() * gap.powf(self.rate.alpha() - 1.0) * self.absorption_prob(t)
                    / self.absorption_prob(t - gap)
            }
        }
    }

    /// Draws the next time point below `t_prev`, or absorption.
    ///
    /// WGR1 can only be sampled exactly for `α = 1`, where both variants
    /// reduce to Poisson arrival times read backwards from `t_prev`.
    pub fn sample_time_step<R: Rng + ?Sized>(&self, t_prev: f64, rng: &mut R) -> Result<TimeStep> {
        if self.variant == WagnerVariant::Wgr1 && !self.rate.is_constant() {
            return Err(Error::InvalidParameter(format!(
                "WGR1 time points can only be sampled with alpha = 1, got {}",
                self.rate.alpha()
            )));
        }
        let tau = self.rate.draw_interarrival(rng);
        Ok(if tau >= t_prev {
            TimeStep::Absorbed
        } else {
            TimeStep::Next {
                time: t_prev - tau,
                gap: tau,
            }
        })
    }
}

/// `Σₘ δᵐ Γ(α)ᵐ t^{mα} / Γ(mα + 1)`, summed until the terms are negligible.
pub fn wagner_series(delta: f64, alpha: f64, t: f64) -> f64 {
    let log_base = delta.ln() + ln_gamma(alpha) + alpha * t.ln();
    let mut sum = 0.0;
    let mut prev = f64::NEG_INFINITY;
    for m in 0..100_000u32 {
        let mf = f64::from(m);
        let log_term = mf * log_base - ln_gamma(mf * alpha + 1.0);
        let term = log_term.exp();
        sum += term;
        // terms grow until they peak, then decay monotonically
        if log_term < prev && term <= 1e-16 * sum {
            break;
        }
        prev = log_term;
    }
    sum
}

/// `C(y, z, r)` for the model, given coefficients at both points and the
/// kernel frozen at `z`.
pub fn correction_kernel(
    at_y: &CoefficientBundle,
    frozen_z: &ProposalParams,
    y: &State,
    z: &State,
    r: f64,
) -> Result<f64> {
    let d = frozen_z.log_density_derivs(y, z, r)?;
    let ratio = -(&at_y.drift - frozen_z.anchor_drift()).dot(&d.lambda_vec)
        + 0.5 * (&at_y.gamma - frozen_z.anchor_gamma()).dot(&d.k_mat);
    Ok(ratio * frozen_z.density(y, z, r)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WgrOutput {
    pub estimate: f64,
    /// Product of the `C/(g·q_u)` factors; `1` when absorbed at once.
    pub weight: f64,
    /// Number of sampled time points `n`.
    pub n_points: usize,
    pub eval_count: usize,
}

/// One replicate of the estimator of `p(x₀, x_t, t)`.
pub fn wgr_density_estimate<M: DiffusionModel + ?Sized, R: Rng + ?Sized>(
    model: &M,
    x0: &State,
    x_t: &State,
    t: f64,
    cfg: &WagnerConfig,
    rng: &mut R,
) -> Result<WgrOutput> {
    if !(t > 0.0) {
        return Err(Error::InvalidParameter(format!("horizon must be positive, got {t}")));
    }
    let at_x0 = ProposalParams::from_bundle(&model.eval(x0)?)?;
    wgr_from_anchor(model, x0, &at_x0, x_t, t, cfg, rng)
}

fn wgr_from_anchor<M: DiffusionModel + ?Sized, R: Rng + ?Sized>(
    model: &M,
    x0: &State,
    at_x0: &ProposalParams,
    x_t: &State,
    t: f64,
    cfg: &WagnerConfig,
    rng: &mut R,
) -> Result<WgrOutput> {
    let mut frozen = ProposalParams::from_bundle(&model.eval(x_t)?)?;
    let mut z = x_t.clone();
    let mut t_prev = t;
    let mut weight = 1.0;
    let mut n = 0;
    while let TimeStep::Next { time: t_next, gap } = cfg.sample_time_step(t_prev, rng)? {
        let bridge = BridgeProposal::from_params(z.clone(), t_prev, at_x0);
        let y = bridge.sample_split(x0, t_next, gap, &std_normal_vec(rng, x0.len()))?;
        let at_y = model.eval(&y)?;
        let c = correction_kernel(&at_y, &frozen, &y, &z, gap)?;
        let g = bridge.log_density_split(x0, t_next, gap, &y)?.exp();
        weight *= c / (g * cfg.step_density_gap(t_prev, gap));
        frozen = ProposalParams::from_bundle(&at_y)?;
        z = y;
        t_prev = t_next;
        n += 1;
    }
    Ok(WgrOutput {
        estimate: weight * frozen.density(x0, &z, t_prev)? / cfg.absorption_prob(t_prev),
        weight,
        n_points: n,
        eval_count: n + 2,
    })
}

/// One replicate of an unbiased estimate of `E f(X_t)`: the terminal state is
/// drawn from the copycat Gaussian at `x₀` and weighted by `p̂/h`.
pub fn wgr_expectation<M, R, F>(
    model: &M,
    x0: &State,
    t: f64,
    f: F,
    cfg: &WagnerConfig,
    rng: &mut R,
) -> Result<WgrOutput>
where
    M: DiffusionModel + ?Sized,
    R: Rng + ?Sized,
    F: Fn(&State) -> f64,
{
    if !(t > 0.0) {
        return Err(Error::InvalidParameter(format!("horizon must be positive, got {t}")));
    }
    let at_x0 = ProposalParams::from_bundle(&model.eval(x0)?)?;
    let x_t = at_x0.sample(x0, t, &std_normal_vec(rng, x0.len()));
    let h = at_x0.density(x0, &x_t, t)?;
    let out = wgr_from_anchor(model, x0, &at_x0, &x_t, t, cfg, rng)?;
    Ok(WgrOutput {
        estimate: f(&x_t) * out.estimate / h,
        ..out
    })
}
