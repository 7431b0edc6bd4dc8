//! Discretisation baselines: Euler–Maruyama paths, the Durham–Gallant bridge
//! density estimator, and sequential importance sampling against a known
//! transition density.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{DiffusionModel, KnownTransition, State};
use crate::proposals::{BridgeProposal, ProposalParams};
use crate::rng::std_normal_vec;

fn check_steps(steps: usize, horizon: f64) -> Result<()> {
    if steps == 0 {
        return Err(Error::InvalidParameter("number of steps must be at least 1".into()));
    }
    if !(horizon > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "horizon must be positive, got {horizon}"
        )));
    }
    Ok(())
}

/// Terminal state of an `M`-step Euler scheme on `[0, T]`.
pub fn euler_simulate<M: DiffusionModel + ?Sized, R: Rng + ?Sized>(
    model: &M,
    x0: &State,
    horizon: f64,
    steps: usize,
    rng: &mut R,
) -> Result<State> {
    check_steps(steps, horizon)?;
    let h = horizon / steps as f64;
    let mut x = x0.clone();
    for _ in 0..steps {
        let b = model.drift(&x)?;
        let s = model.diffusion(&x)?;
        let z = std_normal_vec(rng, x.len());
        x += b * h + s * z * h.sqrt();
    }
    model.check_domain(&x)?;
    Ok(x)
}

/// Which diffusion matrix scales the imputation bridge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BridgeAnchor {
    /// `γ` at the most recent imputed point.
    #[default]
    Running,
    /// `γ(x₀)` throughout.
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DgOutput {
    pub estimate: f64,
    pub eval_count: usize,
}

/// One replicate of the Durham–Gallant estimator with `M` Euler intervals:
/// `Π q_Euler(x_{tᵢ}, x_{tᵢ₊₁}, h) / Π g(x_{tᵢ₊₁} | x_{tᵢ}, x_T)`.
pub fn dg_replicate<M: DiffusionModel + ?Sized, R: Rng + ?Sized>(
    model: &M,
    x0: &State,
    x_t: &State,
    horizon: f64,
    steps: usize,
    anchor: BridgeAnchor,
    rng: &mut R,
) -> Result<DgOutput> {
    check_steps(steps, horizon)?;
    let h = horizon / steps as f64;
    let first = ProposalParams::from_bundle(&model.eval(x0)?)?;
    let fixed = BridgeProposal::from_params(x_t.clone(), horizon, &first);
    let mut params = first.clone();
    let mut x = x0.clone();
    let mut log_w = 0.0;
    for i in 0..steps - 1 {
        let (s, t) = (i as f64 * h, (i + 1) as f64 * h);
        let running;
        let bridge = match anchor {
            BridgeAnchor::Fixed => &fixed,
            BridgeAnchor::Running => {
                running = BridgeProposal::from_params(x_t.clone(), horizon, &params);
                &running
            }
        };
        let y = bridge.sample(s, &x, t, &std_normal_vec(rng, x.len()))?;
        log_w += params.log_density(&x, &y, h)? - bridge.log_density(s, &x, t, &y)?;
        params = ProposalParams::from_bundle(&model.eval(&y)?)?;
        x = y;
    }
    log_w += params.log_density(&x, x_t, h)?;
    Ok(DgOutput {
        estimate: log_w.exp(),
        eval_count: steps,
    })
}

/// Average of `N` Durham–Gallant replicates.
#[allow(clippy::too_many_arguments)]
pub fn dg_density_estimate<M: DiffusionModel + ?Sized, R: Rng + ?Sized>(
    model: &M,
    x0: &State,
    x_t: &State,
    horizon: f64,
    steps: usize,
    replicates: usize,
    anchor: BridgeAnchor,
    rng: &mut R,
) -> Result<f64> {
    if replicates == 0 {
        return Err(Error::EmptyInput);
    }
    let mut sum = 0.0;
    for _ in 0..replicates {
        sum += dg_replicate(model, x0, x_t, horizon, steps, anchor, rng)?.estimate;
    }
    Ok(sum / replicates as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SisOutput {
    pub state: State,
    pub weight: f64,
    pub eval_count: usize,
}

/// Sequential importance sampling on a uniform `M`-step grid: copycat Gaussian
/// proposals, weights updated by the exact ratio `p/q` at every step.
pub fn sis_known_density<M: DiffusionModel + ?Sized, R: Rng + ?Sized>(
    model: &M,
    target: &KnownTransition,
    x0: &State,
    horizon: f64,
    steps: usize,
    rng: &mut R,
) -> Result<SisOutput> {
    check_steps(steps, horizon)?;
    let h = horizon / steps as f64;
    let mut x = x0.clone();
    let mut log_w = 0.0;
    for _ in 0..steps {
        let params = ProposalParams::from_bundle(&model.eval(&x)?)?;
        let y = params.sample(&x, h, &std_normal_vec(rng, x.len()));
        log_w += target.log_density(&x, &y, h)? - params.log_density(&x, &y, h)?;
        x = y;
    }
    Ok(SisOutput {
        state: x,
        weight: log_w.exp(),
        eval_count: steps,
    })
}
