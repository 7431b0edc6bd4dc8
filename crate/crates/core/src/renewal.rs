//! Event scheduling by a renewal process with intensity `λ(s) = δ·s^(α−1)`,
//! `s` being the time elapsed since the previous event.
//!
//! The integrated intensity is `Λ(s) = δ·s^α/α`, so waiting times have CDF
//! `1 − exp(−δ s^α / α)` and are drawn exactly by inversion.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::open01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenewalRate {
    delta: f64,
    alpha: f64,
}

impl RenewalRate {
    /// `δ > 0`, `0 < α ≤ 1`. `α = 1` gives a homogeneous Poisson process; the
    /// incremental weight is only guaranteed to stay bounded for `α < 1`.
    pub fn new(delta: f64, alpha: f64) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "renewal delta must be positive, got {delta}"
            )));
        }
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "renewal alpha must lie in (0, 1], got {alpha}"
            )));
        }
        Ok(Self { delta, alpha })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn is_constant(&self) -> bool {
        self.alpha == 1.0
    }

    /// `λ(s)`.
    pub fn rate(&self, s: f64) -> f64 {
        if self.is_constant() {
            self.delta
        } else {
            self.delta * s.powf(self.alpha - 1.0)
        }
    }

    /// `∫₀ˢ λ(v) dv`.
    pub fn cumulative(&self, s: f64) -> f64 {
        self.delta * s.powf(self.alpha) / self.alpha
    }

    /// Inverse transform: `τ = (−α ln u / δ)^(1/α)` for `u ∈ (0, 1)`.
    pub fn sample_interarrival(&self, u: f64) -> f64 {
        debug_assert!(u > 0.0 && u < 1.0, "uniform variate must lie in (0, 1)");
        let base = -self.alpha * u.ln() / self.delta;
        if self.is_constant() {
            base
        } else {
            base.powf(1.0 / self.alpha)
        }
    }

    pub fn draw_interarrival<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.sample_interarrival(open01(rng))
    }

    /// `P(τ ≤ s) = 1 − exp(−δ s^α / α)`.
    pub fn interarrival_cdf(&self, s: f64) -> f64 {
        if s <= 0.0 {
            0.0
        } else {
            -(-self.cumulative(s)).exp_m1()
        }
    }

    /// `P(τ > s)`.
    pub fn survival(&self, s: f64) -> f64 {
        if s <= 0.0 {
            1.0
        } else {
            (-self.cumulative(s)).exp()
        }
    }

    /// Waiting-time density `λ(s)·exp(−Λ(s))`.
    pub fn interarrival_density(&self, s: f64) -> f64 {
        if s <= 0.0 {
            0.0
        } else {
            self.rate(s) * self.survival(s)
        }
    }
}
