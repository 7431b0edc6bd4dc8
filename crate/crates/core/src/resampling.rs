//! Particle systems of CIS trajectories with checkpoint resampling.
//!
//! The horizon is cut at `t_j = jT/M`. At each checkpoint the signed weights
//! are inspected and, when the effective sample size drops below a threshold,
//! the system is resampled:
//!
//! * `R1` draws ancestors multinomially on `|w|` and gives every child the
//!   weight `sign(w_k)·a/N`, `a = Σ|w|`;
//! * `R2` draws fresh states from the absolute mixture `p̄_j` and weights them by
//!   `p̂_j/p̄_j`, where `p̂_j(y) = N⁻¹ Σ wᵢ q(xᵢ, y, t_j − sᵢ)` is the signed mixture.
//!
//! Each particle owns its random stream and carries its pending event time
//! across checkpoints, so with resampling switched off the system reproduces
//! independent plain CIS runs exactly.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cis::{AdaptationPolicy, CisOutput, CisSampler, CisTrajectory, ExpectationMode, Functional};
use crate::error::{Error, Result};
use crate::models::{DiffusionModel, State};
use crate::renewal::RenewalRate;
use crate::rng::{std_normal_vec, stream, StreamRng, SYSTEM_STREAM};

/// Effective sample size `(Σ|wᵢ|)² / Σwᵢ²` of signed weights.
pub fn ess(weights: &[f64]) -> Result<f64> {
    if weights.is_empty() {
        return Err(Error::EmptyInput);
    }
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::NonFiniteWeights);
    }
    let max = weights.iter().fold(0.0f64, |m, w| m.max(w.abs()));
    if max == 0.0 {
        return Err(Error::AllZeroWeights);
    }
    // rescale so that squares cannot overflow
    let (a, b) = weights
        .iter()
        .fold((0.0, 0.0), |(a, b), w| (a + (w / max).abs(), b + (w / max).powi(2)));
    Ok((a * a / b).clamp(1.0, weights.len() as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResamplingScheme {
    #[default]
    None,
    R1,
    R2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResamplingConfig {
    pub n_particles: usize,
    pub n_checkpoints: usize,
    /// Resample when the ESS falls strictly below this value; `0` disables resampling.
    pub ess_threshold: f64,
    pub scheme: ResamplingScheme,
}

impl ResamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_particles == 0 {
            return Err(Error::InvalidParameter("n_particles must be positive".into()));
        }
        if self.n_checkpoints == 0 {
            return Err(Error::InvalidParameter("n_checkpoints must be positive".into()));
        }
        if !(self.ess_threshold >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "ess_threshold must be non-negative, got {}",
                self.ess_threshold
            )));
        }
        Ok(())
    }
}

/// `N` CIS trajectories advanced together over a uniform checkpoint grid.
pub struct ParticleSystem<'a, M: DiffusionModel + ?Sized> {
    sampler: CisSampler<'a, M>,
    particles: Vec<CisTrajectory>,
    rngs: Vec<StreamRng>,
    system_rng: StreamRng,
    horizon: f64,
    config: ResamplingConfig,
    checkpoint: usize,
    resample_count: usize,
    density_evals: u64,
}

impl<'a, M: DiffusionModel + ?Sized> ParticleSystem<'a, M> {
    /// Particle `i` draws from stream `(seed, i)`; resampling decisions use a
    /// separate system stream.
    pub fn new(
        model: &'a M,
        rate: RenewalRate,
        policy: AdaptationPolicy,
        x0: &State,
        horizon: f64,
        config: ResamplingConfig,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        if !(horizon > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        let sampler = CisSampler::new(model, rate, policy);
        let mut rngs: Vec<StreamRng> = (0..config.n_particles as u64).map(|i| stream(seed, i)).collect();
        let particles = rngs
            .iter_mut()
            .map(|rng| sampler.start(x0, 0.0, 1.0, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            sampler,
            particles,
            rngs,
            system_rng: stream(seed, SYSTEM_STREAM),
            horizon,
            config,
            checkpoint: 0,
            resample_count: 0,
            density_evals: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn config(&self) -> &ResamplingConfig {
        &self.config
    }

    pub fn checkpoint(&self) -> usize {
        self.checkpoint
    }

    pub fn checkpoint_time(&self, j: usize) -> f64 {
        if j >= self.config.n_checkpoints {
            self.horizon
        } else {
            self.horizon * j as f64 / self.config.n_checkpoints as f64
        }
    }

    pub fn is_finished(&self) -> bool {
        self.checkpoint >= self.config.n_checkpoints
    }

    pub fn particles(&self) -> &[CisTrajectory] {
        &self.particles
    }

    pub fn weights(&self) -> Vec<f64> {
        self.particles.iter().map(|p| p.weight).collect()
    }

    pub fn ess(&self) -> Result<f64> {
        ess(&self.weights())
    }

    /// Number of checkpoints at which the system was resampled.
    pub fn resample_count(&self) -> usize {
        self.resample_count
    }

    /// Mixture density evaluations spent by `R2` resampling.
    pub fn density_evals(&self) -> u64 {
        self.density_evals
    }

    /// Total model evaluations over all particles.
    pub fn eval_count(&self) -> u64 {
        self.particles.iter().map(|p| p.eval_count as u64).sum()
    }

    pub fn event_count(&self) -> u64 {
        self.particles.iter().map(|p| p.event_count as u64).sum()
    }

    fn needs_resampling(&self) -> Result<bool> {
        let e = self.ess()?;
        Ok(e < self.config.ess_threshold)
    }

    /// One checkpoint of the configured scheme.
    pub fn step(&mut self) -> Result<()> {
        match self.config.scheme {
            ResamplingScheme::None => self.propagate(),
            ResamplingScheme::R1 => self.r1_step(),
            ResamplingScheme::R2 => self.r2_step(),
        }
    }

    pub fn run(&mut self) -> Result<()> {
        while !self.is_finished() {
            self.step()?;
        }
        Ok(())
    }

    /// Multinomial resampling on `|w|` (if triggered), then propagation to the next checkpoint.
    pub fn r1_step(&mut self) -> Result<()> {
        self.resample_r1()?;
        self.propagate()
    }

    /// Mixture resampling from `p̄_j` (if triggered), then propagation to the next checkpoint.
    pub fn r2_step(&mut self) -> Result<()> {
        self.resample_r2()?;
        self.propagate()
    }

    /// Replaces the particles by ancestors drawn `∝ |w|`, each with weight
    /// `sign(w_k)·a/N`, if the ESS is below the threshold. Returns whether it did.
    pub fn resample_r1(&mut self) -> Result<bool> {
        self.ensure_running()?;
        if !self.needs_resampling()? {
            return Ok(false);
        }
        let weights = self.weights();
        let n = weights.len();
        let a: f64 = weights.iter().map(|w| w.abs()).sum();
        let index = WeightedIndex::new(weights.iter().map(|w| w.abs())).map_err(|_| Error::AllZeroWeights)?;
        let ancestors: Vec<usize> = (0..n).map(|_| index.sample(&mut self.system_rng)).collect();
        self.particles = ancestors
            .iter()
            .map(|&k| {
                let mut child = self.particles[k].clone();
                child.weight = weights[k].signum() * a / n as f64;
                child
            })
            .collect();
        self.resample_count += 1;
        Ok(true)
    }

    /// Restarts every particle at a fresh draw `x̄ ~ p̄_j` with weight
    /// `p̂_j(x̄)/p̄_j(x̄)`, if the ESS is below the threshold. Never resamples at
    /// `t₀`, where the mixture is a point mass.
    pub fn resample_r2(&mut self) -> Result<bool> {
        self.ensure_running()?;
        if self.checkpoint == 0 || !self.needs_resampling()? {
            return Ok(false);
        }
        let n = self.len();
        let draws = (0..n)
            .map(|_| self.sample_bar_with_system_rng())
            .collect::<Result<Vec<_>>>()?;
        let phis = draws
            .par_iter()
            .map(|y| self.hat_over_bar(y))
            .collect::<Result<Vec<_>>>()?;
        let t = self.checkpoint_time(self.checkpoint);
        let sampler = &self.sampler;
        self.particles
            .par_iter_mut()
            .zip(self.rngs.par_iter_mut())
            .zip(draws.par_iter().zip(phis.par_iter()))
            .try_for_each(|((p, rng), (y, &phi))| sampler.restart(p, y, t, phi, rng))?;
        self.density_evals += (n * n) as u64;
        self.resample_count += 1;
        Ok(true)
    }

    fn ensure_running(&self) -> Result<()> {
        if self.is_finished() {
            Err(Error::InvalidParameter(
                "particle system already reached the horizon".into(),
            ))
        } else {
            Ok(())
        }
    }

    fn propagate(&mut self) -> Result<()> {
        self.ensure_running()?;
        let until = self.checkpoint_time(self.checkpoint + 1);
        let sampler = &self.sampler;
        self.particles
            .par_iter_mut()
            .zip(self.rngs.par_iter_mut())
            .try_for_each(|(p, rng)| sampler.advance(p, until, rng))?;
        self.checkpoint += 1;
        Ok(())
    }

    fn log_components(&self, y: &State) -> Result<Vec<f64>> {
        let t = self.checkpoint_time(self.checkpoint);
        self.particles.iter().map(|p| p.proposal_log_density(t, y)).collect()
    }

    /// Signed mixture `p̂_j(y) = N⁻¹ Σ wᵢ q(xᵢ, y, t_j − sᵢ; θᵢ)` at the current checkpoint.
    pub fn mixture_density_hat(&self, y: &State) -> Result<f64> {
        let logs = self.log_components(y)?;
        let sum: f64 = self.particles.iter().zip(&logs).map(|(p, l)| p.weight * l.exp()).sum();
        Ok(sum / self.len() as f64)
    }

    /// Absolute mixture `p̄_j(y) = a⁻¹ Σ |wᵢ| q(xᵢ, y, t_j − sᵢ; θᵢ)` at the current checkpoint.
    pub fn mixture_density_bar(&self, y: &State) -> Result<f64> {
        let a: f64 = self.particles.iter().map(|p| p.weight.abs()).sum();
        if a == 0.0 {
            return Err(Error::AllZeroWeights);
        }
        let logs = self.log_components(y)?;
        let sum: f64 = self
            .particles
            .iter()
            .zip(&logs)
            .map(|(p, l)| p.weight.abs() * l.exp())
            .sum();
        Ok(sum / a)
    }

    /// Draws `y ~ p̄_j`: a component with probability `∝ |wᵢ|`, then its Gaussian kernel.
    pub fn sample_bar<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Result<State> {
        let index =
            WeightedIndex::new(self.particles.iter().map(|p| p.weight.abs())).map_err(|_| Error::AllZeroWeights)?;
        let p = &self.particles[index.sample(rng)];
        let u = self.checkpoint_time(self.checkpoint) - p.last_event;
        let z = std_normal_vec(rng, p.anchor.len());
        Ok(p.params.sample(&p.anchor, u, &z))
    }

    fn sample_bar_with_system_rng(&mut self) -> Result<State> {
        let mut rng = self.system_rng.clone();
        let y = self.sample_bar(&mut rng);
        self.system_rng = rng;
        y
    }

    /// `p̂_j(y)/p̄_j(y)`, evaluated with a common shift of the log components.
    fn hat_over_bar(&self, y: &State) -> Result<f64> {
        let logs = self.log_components(y)?;
        let shift = self
            .particles
            .iter()
            .zip(&logs)
            .filter(|(p, _)| p.weight != 0.0)
            .map(|(_, &l)| l)
            .fold(f64::NEG_INFINITY, f64::max);
        if shift == f64::NEG_INFINITY {
            return Err(Error::ZeroBarDensity);
        }
        let (num, den, a) = self
            .particles
            .iter()
            .zip(&logs)
            .fold((0.0, 0.0, 0.0), |(num, den, a), (p, l)| {
                let q = (l - shift).exp();
                (num + p.weight * q, den + p.weight.abs() * q, a + p.weight.abs())
            });
        if den == 0.0 {
            return Err(Error::ZeroBarDensity);
        }
        Ok(a / self.len() as f64 * num / den)
    }

    /// Per-particle outputs at the current checkpoint time.
    pub fn outputs(&self) -> Vec<CisOutput> {
        let t = self.checkpoint_time(self.checkpoint);
        self.particles.iter().map(|p| p.output(t)).collect()
    }

    /// `N⁻¹ Σ wᵢ ∫ f q_i` at the current checkpoint.
    pub fn expectation<R: rand::Rng + ?Sized>(
        &self,
        f: &Functional,
        mode: ExpectationMode,
        rng: &mut R,
    ) -> Result<f64> {
        let outputs = self.outputs();
        let mut sum = 0.0;
        for o in &outputs {
            sum += crate::cis::expectation_summand(o, f, mode, rng)?;
        }
        Ok(sum / outputs.len() as f64)
    }
}
