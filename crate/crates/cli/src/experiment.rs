//! Running a resolved configuration: independent replicates in parallel,
//! one random stream per replicate, and a summary of the results.

use std::time::{Duration, Instant};

use cis_engine::baselines::{dg_replicate, euler_simulate, sis_known_density};
use cis_engine::cis::{density_estimate, expectation_summand, run_cis, run_gcis, Functional};
use cis_engine::resampling::{ParticleSystem, ResamplingConfig, ResamplingScheme};
use cis_engine::rng::stream;
use cis_engine::stats::{mad, mean_stderr, quantile_sorted, rmse};
use cis_engine::wagner::{wgr_density_estimate, wgr_expectation, WagnerConfig, WagnerVariant};
use cis_engine::{BuiltInModel, RenewalRate, State};
use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig, Method, Target};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error("all {0} replicates aborted")]
    AllAborted(usize),
}

/// One CSV row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReplicateRow {
    pub replicate: u64,
    pub estimate: f64,
    pub weight: f64,
    pub n_events: u64,
    pub eval_count: u64,
    pub aborted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeightSummary {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub negative_fraction: f64,
    /// 5%, 25%, 50%, 75% and 95% quantiles of `|w|`.
    pub abs_quantiles: [f64; 5],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub name: String,
    pub method: Method,
    pub model: String,
    pub target: Target,
    pub horizon: f64,
    pub n_replicates: usize,
    pub n_completed: usize,
    pub aborted: usize,
    pub estimate: f64,
    pub stderr: f64,
    pub rmse: Option<f64>,
    pub mad: f64,
    /// Total model evaluations over all replicates.
    pub cost: u64,
    pub mean_points: f64,
    pub mean_events: f64,
    /// Average evaluations per replicate in the calibration run, when a cost target was set.
    pub pilot_points: Option<f64>,
    /// Mixture density evaluations spent on mixture resampling.
    pub density_evals: u64,
    pub weights: WeightSummary,
    #[serde(skip)]
    pub wall_time: Duration,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub config: ExperimentConfig,
    pub rows: Vec<ReplicateRow>,
    pub summary: RunSummary,
}

/// Stream ids at and above this value belong to the cost calibration run.
const PILOT_STREAM_BASE: u64 = 1 << 62;
const PILOT_SIZE: usize = 2000;

struct Replicate {
    estimate: f64,
    weight: f64,
    n_events: u64,
    eval_count: u64,
    density_evals: u64,
}

struct Runner {
    cfg: ExperimentConfig,
    model: BuiltInModel,
    rate: RenewalRate,
    x0: State,
    x_t: State,
    density_factor: f64,
}

impl Runner {
    fn new(cfg: ExperimentConfig) -> Result<Self, ConfigError> {
        let model = cfg.build_model()?;
        let rate = RenewalRate::new(cfg.delta, cfg.alpha).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let x0 = DVector::from_vec(cfg.x0.clone());
        let x_t = if cfg.x_t.is_empty() {
            x0.clone()
        } else {
            DVector::from_vec(cfg.x_t.clone())
        };
        let density_factor = if cfg.original_coordinates {
            model.original_density_factor(&x_t)
        } else {
            1.0
        };
        Ok(Self {
            cfg,
            model,
            rate,
            x0,
            x_t,
            density_factor,
        })
    }

    fn functional(&self) -> Functional {
        Functional::coordinate(self.x0.len(), self.cfg.coordinate)
    }

    fn wagner(&self) -> cis_engine::Result<WagnerConfig> {
        let variant = if self.cfg.method == Method::Wgr1 {
            WagnerVariant::Wgr1
        } else {
            WagnerVariant::Wgr2
        };
        WagnerConfig::new(variant, self.cfg.delta, self.cfg.alpha)
    }

    /// Replicate `id`, drawing only from stream `(seed, id)`.
    fn replicate(&self, id: u64) -> cis_engine::Result<Replicate> {
        let cfg = &self.cfg;
        let mut rng = stream(cfg.seed, id);
        let density = cfg.target == Target::Density;
        let simple = |estimate: f64, weight: f64, n_events: usize, eval_count: usize| Replicate {
            estimate,
            weight,
            n_events: n_events as u64,
            eval_count: eval_count as u64,
            density_evals: 0,
        };
        Ok(match cfg.method {
            Method::Cis => {
                let out = run_cis(&self.model, &self.x0, cfg.t, self.rate, cfg.policy, &mut rng)?;
                let estimate = if density {
                    density_estimate(&out, &self.x_t)? * self.density_factor
                } else {
                    expectation_summand(&out, &self.functional(), cfg.expectation_mode, &mut rng)?
                };
                simple(estimate, out.weight, out.event_count, out.eval_count)
            }
            Method::Gcis => {
                let out = run_gcis(&self.model, &self.x0, &self.x_t, cfg.t, self.rate, &mut rng)?;
                simple(
                    out.estimate * self.density_factor,
                    out.weight,
                    out.event_count,
                    out.eval_count,
                )
            }
            Method::CisR1 | Method::CisR2 => self.particle_replicate(id)?,
            Method::Wgr1 | Method::Wgr2 => {
                let wcfg = self.wagner()?;
                let out = if density {
                    let mut o = wgr_density_estimate(&self.model, &self.x0, &self.x_t, cfg.t, &wcfg, &mut rng)?;
                    o.estimate *= self.density_factor;
                    o
                } else {
                    let c = cfg.coordinate;
                    wgr_expectation(&self.model, &self.x0, cfg.t, |y| y[c], &wcfg, &mut rng)?
                };
                simple(out.estimate, out.weight, out.n_points, out.eval_count)
            }
            Method::Euler => {
                let x = euler_simulate(&self.model, &self.x0, cfg.t, cfg.m_steps, &mut rng)?;
                simple(x[cfg.coordinate], 1.0, cfg.m_steps, cfg.m_steps)
            }
            Method::Dg => {
                let out = dg_replicate(
                    &self.model,
                    &self.x0,
                    &self.x_t,
                    cfg.t,
                    cfg.m_steps,
                    cfg.bridge_anchor,
                    &mut rng,
                )?;
                simple(
                    out.estimate * self.density_factor,
                    out.estimate,
                    cfg.m_steps - 1,
                    out.eval_count,
                )
            }
            Method::Sis => {
                let target = self
                    .model
                    .known_transition()
                    .ok_or_else(|| cis_engine::Error::InvalidParameter("no closed-form transition".into()))?;
                let out = sis_known_density(&self.model, &target, &self.x0, cfg.t, cfg.m_steps, &mut rng)?;
                simple(
                    out.weight * out.state[cfg.coordinate],
                    out.weight,
                    cfg.m_steps,
                    out.eval_count,
                )
            }
        })
    }

    /// A whole particle system counts as one replicate; its particles use the
    /// streams `(seed_id, i)` with `seed_id` derived from `(seed, id)`.
    fn particle_replicate(&self, id: u64) -> cis_engine::Result<Replicate> {
        let cfg = &self.cfg;
        let rcfg = ResamplingConfig {
            n_particles: cfg.n_particles,
            n_checkpoints: cfg.n_checkpoints,
            ess_threshold: cfg.ess_threshold.unwrap_or(0.0),
            scheme: if cfg.method == Method::CisR1 {
                ResamplingScheme::R1
            } else {
                ResamplingScheme::R2
            },
        };
        let mut ps = ParticleSystem::new(
            &self.model,
            self.rate,
            cfg.policy,
            &self.x0,
            cfg.t,
            rcfg,
            particle_seed(cfg.seed, id),
        )?;
        ps.run()?;
        let estimate = if cfg.target == Target::Density {
            ps.mixture_density_hat(&self.x_t)? * self.density_factor
        } else {
            let mut rng = stream(cfg.seed, id);
            ps.expectation(&self.functional(), cfg.expectation_mode, &mut rng)?
        };
        let weights = ps.weights();
        Ok(Replicate {
            estimate,
            weight: weights.iter().sum::<f64>() / weights.len() as f64,
            n_events: ps.event_count(),
            eval_count: ps.eval_count(),
            density_evals: ps.density_evals(),
        })
    }
}

/// Seed of the particle system of replicate `id`; replicate 0 keeps `seed`.
pub fn particle_seed(seed: u64, id: u64) -> u64 {
    seed.wrapping_add(id.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn row(id: u64, r: &cis_engine::Result<Replicate>) -> ReplicateRow {
    match r {
        Ok(r) => ReplicateRow {
            replicate: id,
            estimate: r.estimate,
            weight: r.weight,
            n_events: r.n_events,
            eval_count: r.eval_count,
            aborted: false,
        },
        Err(_) => ReplicateRow {
            replicate: id,
            estimate: 0.0,
            weight: 0.0,
            n_events: 0,
            eval_count: 0,
            aborted: true,
        },
    }
}

/// Runs the experiment on the current rayon pool. The output depends only on
/// the configuration, never on the number of threads.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput, RunError> {
    let start = Instant::now();
    let mut cfg = cfg.resolve()?;
    let runner = Runner::new(cfg.clone())?;

    let mut pilot_points = None;
    if let Some(k) = cfg.cost_target {
        let evals: Vec<u64> = (0..PILOT_SIZE as u64)
            .into_par_iter()
            .filter_map(|i| runner.replicate(PILOT_STREAM_BASE + i).ok().map(|r| r.eval_count))
            .collect();
        if evals.is_empty() {
            return Err(RunError::AllAborted(PILOT_SIZE));
        }
        let avg = evals.iter().sum::<u64>() as f64 / evals.len() as f64;
        cfg.n = ((k as f64 / avg).round() as usize).max(1);
        pilot_points = Some(avg);
    }

    let results: Vec<cis_engine::Result<Replicate>> =
        (0..cfg.n as u64).into_par_iter().map(|i| runner.replicate(i)).collect();
    let rows: Vec<ReplicateRow> = results.iter().enumerate().map(|(i, r)| row(i as u64, r)).collect();
    let density_evals = results
        .iter()
        .filter_map(|r| r.as_ref().ok())
        .map(|r| r.density_evals)
        .sum();
    let summary = summarise(&cfg, &rows, pilot_points, density_evals, start.elapsed())?;
    Ok(RunOutput {
        config: cfg,
        rows,
        summary,
    })
}

fn summarise(
    cfg: &ExperimentConfig,
    rows: &[ReplicateRow],
    pilot_points: Option<f64>,
    density_evals: u64,
    wall_time: Duration,
) -> Result<RunSummary, RunError> {
    let done: Vec<&ReplicateRow> = rows.iter().filter(|r| !r.aborted).collect();
    if done.is_empty() {
        return Err(RunError::AllAborted(rows.len()));
    }
    let estimates: Vec<f64> = done.iter().map(|r| r.estimate).collect();
    let weights: Vec<f64> = done.iter().map(|r| r.weight).collect();
    let (estimate, stderr) = mean_stderr(&estimates).expect("nonempty");
    let n = done.len() as f64;
    let cost: u64 = rows.iter().map(|r| r.eval_count).sum();
    let mut abs: Vec<f64> = weights.iter().map(|w| w.abs()).collect();
    abs.sort_by(f64::total_cmp);
    let q = |p: f64| quantile_sorted(&abs, p).expect("nonempty");
    Ok(RunSummary {
        name: cfg.name.clone(),
        method: cfg.method,
        model: cfg.model.clone(),
        target: cfg.target,
        horizon: cfg.t,
        n_replicates: rows.len(),
        n_completed: done.len(),
        aborted: rows.len() - done.len(),
        estimate,
        stderr,
        rmse: cfg.reference.map(|r| rmse(&estimates, r).expect("nonempty")),
        mad: mad(&estimates).expect("nonempty"),
        cost,
        mean_points: done.iter().map(|r| r.eval_count as f64).sum::<f64>() / n,
        mean_events: done.iter().map(|r| r.n_events as f64).sum::<f64>() / n,
        pilot_points,
        density_evals,
        weights: WeightSummary {
            mean: weights.iter().sum::<f64>() / n,
            min: weights.iter().copied().fold(f64::INFINITY, f64::min),
            max: weights.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            negative_fraction: weights.iter().filter(|w| **w < 0.0).count() as f64 / n,
            abs_quantiles: [q(0.05), q(0.25), q(0.5), q(0.75), q(0.95)],
        },
        wall_time,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(method: Method, target: Target) -> ExperimentConfig {
        ExperimentConfig {
            method,
            target,
            n: 20,
            n_particles: 16,
            n_checkpoints: 4,
            m_steps: 4,
            ..Default::default()
        }
    }

    #[test]
    fn every_method_runs() {
        for m in Method::ALL {
            let (model, target, alpha) = match m {
                Method::Gcis | Method::Dg => ("logcir2d", Target::Density, 0.5),
                Method::Sis => ("ou", Target::Mean, 0.5),
                Method::Wgr1 => ("sv", Target::Mean, 1.0),
                _ => ("sv", Target::Mean, 0.5),
            };
            let cfg = ExperimentConfig {
                model: model.into(),
                alpha,
                ..quick(m, target)
            };
            let out = run_experiment(&cfg).unwrap_or_else(|e| panic!("{}: {e}", m.name()));
            assert_eq!(out.rows.len(), 20);
            assert_eq!(out.summary.cost, out.rows.iter().map(|r| r.eval_count).sum::<u64>());
        }
    }

    #[test]
    fn cost_target_sets_replicate_count() {
        let cfg = ExperimentConfig {
            cost_target: Some(20_000),
            ..quick(Method::Cis, Target::Mean)
        };
        let out = run_experiment(&cfg).unwrap();
        let pilot = out.summary.pilot_points.unwrap();
        assert_eq!(out.config.n, (20_000.0 / pilot).round() as usize);
        let realised = out.summary.cost as f64;
        assert!((realised / 20_000.0 - 1.0).abs() < 0.1, "{realised}");
    }

    #[test]
    fn domain_exits_are_counted() {
        let cfg = ExperimentConfig {
            model: "cir2d".into(),
            params: vec![0.6, 0.1, 2.0, 0.3, 0.1, 2.0, 0.5],
            x0: vec![0.1, 0.1],
            method: Method::Euler,
            t: 2.0,
            ..quick(Method::Euler, Target::Mean)
        };
        let out = run_experiment(&cfg).unwrap();
        assert!(out.summary.aborted > 0);
        assert_eq!(out.rows.iter().filter(|r| r.aborted).count(), out.summary.aborted);
    }

    #[test]
    fn replicate_zero_of_resampled_run_uses_base_seed() {
        assert_eq!(particle_seed(42, 0), 42);
        assert_ne!(particle_seed(42, 1), particle_seed(43, 0));
    }
}
