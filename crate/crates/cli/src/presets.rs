//! Named experiment batches reproducing the numerical studies.

use cis_engine::{AdaptationPolicy, ExpectationMode};

use crate::config::{ConfigError, ExperimentConfig, Method, Target};

pub struct Preset {
    pub name: &'static str,
    pub description: &'static str,
    build: fn() -> Vec<ExperimentConfig>,
}

impl Preset {
    /// The runs of this preset; each has a distinct `name`.
    pub fn configs(&self) -> Vec<ExperimentConfig> {
        (self.build)()
    }
}

pub const PRESETS: [Preset; 5] = [
    Preset {
        name: "sv_mean",
        description: "SV mean vector at T=1 from (1,0): CIS, constant-rate CIS and drift-only adaptation",
        build: sv_mean,
    },
    Preset {
        name: "cir_density",
        description: "log-CIR transition density at (2.5,3) over T=1: CIS, GCIS and DG at budgets 8^i",
        build: cir_density,
    },
    Preset {
        name: "sv_horizon",
        description: "SV E[X2,T] for T=1..6: plain CIS against both resampling schemes",
        build: sv_horizon,
    },
    Preset {
        name: "sv_wagner",
        description: "SV E[X2,T] for T=1..6: CIS, WGR1 and WGR2 at matched cost",
        build: sv_wagner,
    },
    Preset {
        name: "ou_oracle",
        description: "OU mean and density against the closed form",
        build: ou_oracle,
    },
];

pub fn find(name: &str) -> Result<&'static Preset, ConfigError> {
    PRESETS
        .iter()
        .find(|p| p.name == name)
        .ok_or_else(|| ConfigError::UnknownPreset(name.to_string()))
}

fn sv(name: String, method: Method, coordinate: usize) -> ExperimentConfig {
    ExperimentConfig {
        name,
        model: "sv".into(),
        params: vec![1.0, 0.5],
        x0: vec![1.0, 0.0],
        method,
        coordinate,
        ..Default::default()
    }
}

fn sv_mean() -> Vec<ExperimentConfig> {
    let mut out = Vec::new();
    for c in 0..2 {
        let base = || ExperimentConfig {
            t: 1.0,
            n: 1000,
            expectation_mode: ExpectationMode::Sampled,
            ..sv(String::new(), Method::Cis, c)
        };
        out.push(ExperimentConfig {
            name: format!("sv_mean_cis_x{}", c + 1),
            ..base()
        });
        // λ ≡ 2 has the same expected event count on [0, 1] as λ(τ) = τ^{-1/2}
        out.push(ExperimentConfig {
            name: format!("sv_mean_cis_con_x{}", c + 1),
            delta: 2.0,
            alpha: 1.0,
            ..base()
        });
        out.push(ExperimentConfig {
            name: format!("sv_mean_cis_nc_x{}", c + 1),
            policy: AdaptationPolicy::DriftOnly,
            ..base()
        });
    }
    out
}

fn cir_density() -> Vec<ExperimentConfig> {
    let base = |name: String, method: Method| ExperimentConfig {
        name,
        model: "logcir2d".into(),
        params: vec![0.6, 2.5, 0.45, 0.3, 3.0, 0.35, 0.5],
        x0: vec![2.5f64.ln(), 3.0f64.ln()],
        x_t: vec![2.5f64.ln(), 3.0f64.ln()],
        method,
        target: Target::Density,
        t: 1.0,
        original_coordinates: true,
        reference: Some(0.6389),
        ..Default::default()
    };
    let mut out = Vec::new();
    for i in 1..=5u32 {
        let m = 2usize.pow(i);
        let k = (m * m * m) as u64;
        out.push(ExperimentConfig {
            delta: 0.5,
            alpha: 0.5,
            cost_target: Some(k),
            ..base(format!("cir_density_cis_k{i}"), Method::Cis)
        });
        out.push(ExperimentConfig {
            delta: 1.0,
            alpha: 0.5,
            cost_target: Some(k),
            ..base(format!("cir_density_gcis_k{i}"), Method::Gcis)
        });
        out.push(ExperimentConfig {
            m_steps: m,
            n: m * m,
            ..base(format!("cir_density_dg_k{i}"), Method::Dg)
        });
    }
    out
}

fn horizons() -> impl Iterator<Item = u32> {
    1..=6
}

fn sv_horizon() -> Vec<ExperimentConfig> {
    let mut out = Vec::new();
    for t in horizons() {
        let base = |method: Method, tag: &str| ExperimentConfig {
            t: t as f64,
            n: 100,
            n_particles: 1000,
            n_checkpoints: 2 * t as usize,
            reference: Some(0.0),
            ..sv(format!("sv_horizon_{tag}_t{t}"), method, 1)
        };
        // a particle system that never resamples is plain CIS with N trajectories per row
        out.push(ExperimentConfig {
            ess_threshold: Some(0.0),
            ..base(Method::CisR1, "cis")
        });
        out.push(base(Method::CisR1, "r1"));
        out.push(base(Method::CisR2, "r2"));
    }
    out
}

fn sv_wagner() -> Vec<ExperimentConfig> {
    let mut out = Vec::new();
    for t in horizons() {
        let tf = t as f64;
        // expected CIS cost of 1000 trajectories under λ(τ) = τ^{-1/2}
        let k = (1000.0 * (1.0 + 2.0 * tf.sqrt())).round() as u64;
        let base = |method: Method, tag: &str| ExperimentConfig {
            t: tf,
            reference: Some(0.0),
            ..sv(format!("sv_wagner_{tag}_t{t}"), method, 1)
        };
        out.push(ExperimentConfig {
            n: 1000,
            ..base(Method::Cis, "cis")
        });
        out.push(ExperimentConfig {
            delta: 1.0,
            alpha: 1.0,
            cost_target: Some(k),
            ..base(Method::Wgr1, "wgr1")
        });
        out.push(ExperimentConfig {
            delta: 0.5,
            alpha: 0.5,
            cost_target: Some(k),
            ..base(Method::Wgr2, "wgr2")
        });
    }
    out
}

fn ou_oracle() -> Vec<ExperimentConfig> {
    let mean = 1.0 + (-0.5f64).exp();
    let base = |name: &str, method: Method, target: Target| ExperimentConfig {
        name: name.into(),
        model: "ou".into(),
        params: vec![0.5, 1.0, 0.4],
        x0: vec![2.0],
        method,
        target,
        t: 1.0,
        n: 100_000,
        reference: (target == Target::Mean).then_some(mean),
        ..Default::default()
    };
    vec![
        base("ou_oracle_cis_mean", Method::Cis, Target::Mean),
        base("ou_oracle_cis_density", Method::Cis, Target::Density),
        base("ou_oracle_sis_mean", Method::Sis, Target::Mean),
        ExperimentConfig {
            alpha: 0.5,
            delta: 0.5,
            ..base("ou_oracle_wgr2_density", Method::Wgr2, Target::Density)
        },
    ]
}
