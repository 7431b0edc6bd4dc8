//! End-to-end acceptance criteria. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

use std::time::Instant;

use cis_cli::check::{derivative_checks, formula_gap};
use cis_cli::presets;
use cis_cli::{run_experiment, ExperimentConfig, Method, RunOutput, Target};
use cis_engine::models::FiniteDiffModel;
use cis_engine::rng::{open01, std_normal, std_normal_vec};
use cis_engine::stats::{ks_pvalue, ks_statistic, mean_stderr};
use cis_engine::{
    incremental_weight, incremental_weight_1d, run_cis, stream, AdaptationPolicy, BuiltInModel, CirParams,
    DiffusionModel, ParticleSystem, ProposalParams, RenewalRate, ResamplingConfig, ResamplingScheme, State,
};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn run(cfg: &ExperimentConfig) -> Result<RunOutput, String> {
    run_experiment(cfg).map_err(|e| format!("{}: {e}", cfg.name))
}

fn preset_config(preset: &str, name: &str) -> ExperimentConfig {
    presets::find(preset)
        .unwrap()
        .configs()
        .into_iter()
        .find(|c| c.name == name)
        .unwrap_or_else(|| panic!("{preset} has no run {name}"))
}

fn sv() -> BuiltInModel {
    BuiltInModel::sv(1.0, 0.5).unwrap()
}

fn crit1_formula_cross_check() -> Outcome {
    let scalar_sv = FiniteDiffModel::new(
        "scalar-sv",
        1,
        |x: &State| DVector::from_element(1, -0.5 * x[0].tanh()),
        |x: &State| DMatrix::from_element(1, 1, 0.5 * (2.0 + x[0].tanh())),
    );
    let ou = BuiltInModel::ou(0.5, 1.0, 0.4).unwrap();
    let g1 = formula_gap(&ou, 1000, 11).map_err(|e| e.to_string())?;
    let g2 = formula_gap(&scalar_sv, 1000, 12).map_err(|e| e.to_string())?;

    let constant = BuiltInModel::constant(
        DVector::from_vec(vec![0.3, -0.2]),
        DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.5, 0.7]),
    )
    .unwrap();
    let constant_1d = BuiltInModel::constant(DVector::from_element(1, 0.7), DMatrix::from_element(1, 1, 1.3)).unwrap();
    let rate = RenewalRate::new(1.0, 0.5).unwrap();
    let mut rng = stream(13, 0);
    let mut off = 0.0f64;
    for _ in 0..1000 {
        let u = 0.001 + 3.0 * open01(&mut rng);
        let x = std_normal_vec(&mut rng, 2);
        let y = std_normal_vec(&mut rng, 2) * 3.0;
        let p = ProposalParams::from_bundle(&constant.eval(&x).unwrap()).unwrap();
        off = off.max((incremental_weight(&constant, &p, &x, &y, u, &rate).unwrap() - 1.0).abs());
        let x = std_normal_vec(&mut rng, 1);
        let y = std_normal_vec(&mut rng, 1) * 3.0;
        let p = ProposalParams::from_bundle(&constant_1d.eval(&x).unwrap()).unwrap();
        off = off.max((incremental_weight_1d(&constant_1d, &p, &x, &y, u, &rate).unwrap() - 1.0).abs());
    }
    ensure(
        g1 <= 1e-10 && g2 <= 1e-10 && off == 0.0,
        format!(
            "scalar vs matrix gap {:.1e} (ou), {:.1e} (scalar sv); constant max |ρ−1| = {off:e}",
            g1, g2
        ),
    )
}

/// Monte Carlo mean of `ρ(x, Y, u)` over `Y ~ q(x, ·, u)`, with its standard error.
fn rho_mean<M: DiffusionModel + Sync>(
    model: &M,
    x: &State,
    u: f64,
    rate: &RenewalRate,
    draws: usize,
    seed: u64,
) -> Result<(f64, f64), String> {
    const CHUNK: usize = 50_000;
    let params = ProposalParams::from_bundle(&model.eval(x).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let parts: Vec<Result<(f64, f64), String>> = (0..draws.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut rng = stream(seed, c as u64);
            let (mut s, mut s2) = (0.0, 0.0);
            for _ in 0..CHUNK.min(draws - c * CHUNK) {
                let y = params.sample(x, u, &std_normal_vec(&mut rng, x.len()));
                let r = incremental_weight(model, &params, x, &y, u, rate).map_err(|e| e.to_string())?;
                s += r;
                s2 += r * r;
            }
            Ok((s, s2))
        })
        .collect();
    let (mut s, mut s2) = (0.0, 0.0);
    for p in parts {
        let (a, b) = p?;
        s += a;
        s2 += b;
    }
    let n = draws as f64;
    let mean = s / n;
    let var = (s2 / n - mean * mean) * n / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}

fn crit2_mean_one_increment() -> Outcome {
    let rate = RenewalRate::new(1.0, 0.5).unwrap();
    let cir = BuiltInModel::Cir2d(CirParams::reference());
    let mut rng = stream(21, 0);
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    for k in 0..20u64 {
        let xs = DVector::from_vec(vec![1.5 * std_normal(&mut rng), 1.5 * std_normal(&mut rng)]);
        let us = 0.1 + 0.9 * open01(&mut rng);
        let xc = DVector::from_vec(vec![1.5 + 3.5 * open01(&mut rng), 1.5 + 3.5 * open01(&mut rng)]);
        let uc = 0.05 + 0.15 * open01(&mut rng);
        for (name, model, x, u) in [("sv", &sv(), &xs, us), ("cir2d", &cir, &xc, uc)] {
            let (m, se) = rho_mean(model, x, u, &rate, 1_000_000, 1000 + k)?;
            let z = (m - 1.0).abs() / se;
            worst = worst.max(z);
            if z > 4.0 {
                failures.push(format!("{name} anchor {k}: mean {m:.5} se {se:.5}"));
            }
        }
    }
    ensure(
        failures.is_empty(),
        format!(
            "40 anchors × 10⁶ draws, worst |mean−1|/se = {worst:.2} {}",
            failures.join("; ")
        ),
    )
}

fn crit3_unbiased_normalisation() -> Outcome {
    let cfg = ExperimentConfig {
        name: "weights".into(),
        model: "sv".into(),
        x0: vec![1.0, 0.0],
        t: 1.0,
        delta: 1.0,
        alpha: 0.5,
        n: 100_000,
        seed: 31,
        ..Default::default()
    };
    let out = run(&cfg)?;
    let w: Vec<f64> = out.rows.iter().filter(|r| !r.aborted).map(|r| r.weight).collect();
    let (m, se) = mean_stderr(&w).unwrap();
    ensure(
        (m - 1.0).abs() < 4.0 * se && out.summary.aborted == 0,
        format!("mean weight {m:.5} ± {se:.5} over {} replicates", w.len()),
    )
}

fn crit4_ou_oracle() -> Outcome {
    let model = BuiltInModel::ou(0.5, 1.0, 0.4).unwrap();
    let exact_mean = 1.0 + (-0.5f64).exp();
    let x0 = DVector::from_element(1, 2.0);
    let exact_density = model.known_transition().unwrap().density(&x0, &x0, 1.0).unwrap();
    let mut lines = Vec::new();
    let mut ok = true;
    for name in [
        "ou_oracle_cis_mean",
        "ou_oracle_cis_density",
        "ou_oracle_sis_mean",
        "ou_oracle_wgr2_density",
    ] {
        let cfg = ExperimentConfig {
            seed: 41,
            ..preset_config("ou_oracle", name)
        };
        let exact = if cfg.target == Target::Mean {
            exact_mean
        } else {
            exact_density
        };
        let out = run(&cfg)?;
        let s = &out.summary;
        let pass = (s.estimate - exact).abs() < 4.0 * s.stderr && s.n_completed == 100_000;
        ok &= pass;
        lines.push(format!(
            "{}: {:.5} ± {:.5} vs {exact:.5}",
            name.trim_start_matches("ou_oracle_"),
            s.estimate,
            s.stderr
        ));
    }
    ensure(ok, lines.join("; "))
}

fn crit5_table_one() -> Outcome {
    const GCIS_RUNS: u64 = 200;
    const DG_RUNS: u64 = 1000;
    let gcis = preset_config("cir_density", "cir_density_gcis_k5");
    let mut estimates = Vec::new();
    let mut costs = Vec::new();
    let mut points = 0.0;
    for seed in 0..GCIS_RUNS {
        let out = run(&ExperimentConfig { seed, ..gcis.clone() })?;
        estimates.push(out.summary.estimate);
        costs.push(out.summary.cost as f64);
        points = out.summary.pilot_points.unwrap();
    }
    let (g_mean, g_se) = mean_stderr(&estimates).unwrap();
    let g_sd = g_se * (GCIS_RUNS as f64).sqrt();
    let cost_ok = costs.iter().all(|c| (c / 32768.0 - 1.0).abs() <= 0.1);

    let dg = preset_config("cir_density", "cir_density_dg_k4");
    let mut dg_est = Vec::new();
    for seed in 0..DG_RUNS {
        dg_est.push(run(&ExperimentConfig { seed, ..dg.clone() })?.summary.estimate);
    }
    let (d_mean, d_se) = mean_stderr(&dg_est).unwrap();
    let d_sd = d_se * (DG_RUNS as f64).sqrt();
    ensure(
        (g_mean - 0.6389).abs() <= 3.0 * 0.0073 && (d_mean - 0.6235).abs() <= 3.0 * 0.0067 && cost_ok,
        format!(
            "GCIS K5 {g_mean:.4} (run sd {g_sd:.4}, {points:.2} points/trajectory, cost within 10%: {cost_ok}) vs 0.6389±0.0073; \
             DG K4 {d_mean:.4} (run sd {d_sd:.4}) vs 0.6235±0.0067"
        ),
    )
}

fn crit6_renewal_ks() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for (k, (delta, alpha)) in [(1.0, 1.0), (1.0, 0.5), (0.5, 0.5), (2.0, 0.25)]
        .into_iter()
        .enumerate()
    {
        let rate = RenewalRate::new(delta, alpha).unwrap();
        let mut rng = stream(61, k as u64);
        let xs: Vec<f64> = (0..100_000).map(|_| rate.draw_interarrival(&mut rng)).collect();
        let d = ks_statistic(&xs, |s| 1.0 - (-delta * s.powf(alpha) / alpha).exp()).unwrap();
        let p = ks_pvalue(d, xs.len());
        ok &= p > 0.01;
        lines.push(format!("({delta},{alpha}) p={p:.3}"));
    }
    ensure(ok, lines.join(", "))
}

fn crit7_resampling_consistency() -> Outcome {
    let base = ExperimentConfig {
        model: "sv".into(),
        params: vec![1.0, 0.5],
        x0: vec![1.0, 0.0],
        coordinate: 1,
        t: 5.0,
        n_checkpoints: 10,
        ..Default::default()
    };
    let reference = run(&ExperimentConfig {
        name: "reference".into(),
        n: 1_000_000,
        seed: 71,
        ..base.clone()
    })?
    .summary;
    let r1 = run(&ExperimentConfig {
        name: "r1".into(),
        method: Method::CisR1,
        n: 10,
        n_particles: 10_000,
        seed: 72,
        ..base.clone()
    })?
    .summary;
    let r2 = run(&ExperimentConfig {
        name: "r2".into(),
        method: Method::CisR2,
        n: 16,
        n_particles: 2000,
        seed: 73,
        ..base.clone()
    })?
    .summary;
    let agree =
        |s: &cis_cli::RunSummary| (s.estimate - reference.estimate).abs() < 4.0 * s.stderr.hypot(reference.stderr);

    let model = sv();
    let rate = RenewalRate::new(1.0, 0.5).unwrap();
    let x0 = DVector::from_vec(vec![1.0, 0.0]);
    let mut exact = true;
    for scheme in [ResamplingScheme::R1, ResamplingScheme::R2] {
        let cfg = ResamplingConfig {
            n_particles: 200,
            n_checkpoints: 10,
            ess_threshold: 0.0,
            scheme,
        };
        let mut ps = ParticleSystem::new(&model, rate, AdaptationPolicy::FullCopycat, &x0, 5.0, cfg, 74)
            .map_err(|e| e.to_string())?;
        ps.run().map_err(|e| e.to_string())?;
        for (i, o) in ps.outputs().iter().enumerate() {
            let plain = run_cis(
                &model,
                &x0,
                5.0,
                rate,
                AdaptationPolicy::FullCopycat,
                &mut stream(74, i as u64),
            )
            .map_err(|e| e.to_string())?;
            exact &= o.weight.to_bits() == plain.weight.to_bits()
                && o.last_event_time.to_bits() == plain.last_event_time.to_bits()
                && o.anchor == plain.anchor
                && o.event_count == plain.event_count;
        }
        exact &= ps.resample_count() == 0;
    }
    ensure(
        agree(&r1) && agree(&r2) && exact,
        format!(
            "reference {:.4} ± {:.4}; R1 {:.4} ± {:.4}; R2 {:.4} ± {:.4}; threshold 0 bit-exact: {exact}",
            reference.estimate, reference.stderr, r1.estimate, r1.stderr, r2.estimate, r2.stderr
        ),
    )
}

fn crit8_horizon_scaling() -> Outcome {
    let mut table = Vec::new();
    let mut at_six = (0.0, 0.0, 0.0);
    for t in 1..=6u32 {
        let reps = if t == 6 { 200 } else { 100 };
        let mut rmse = [0.0; 3];
        for (k, name) in ["cis", "r1", "r2"].into_iter().enumerate() {
            let cfg = ExperimentConfig {
                n: reps,
                seed: 80 + t as u64,
                ..preset_config("sv_horizon", &format!("sv_horizon_{name}_t{t}"))
            };
            rmse[k] = run(&cfg)?.summary.rmse.unwrap();
        }
        table.push(format!("T={t} {:.3}/{:.3}/{:.3}", rmse[0], rmse[1], rmse[2]));
        if t == 6 {
            at_six = (rmse[0], rmse[1], rmse[2]);
        }
    }
    let (cis, r1, r2) = at_six;

    let mut mad = [0.0; 2];
    for (k, name) in ["wgr1", "wgr2"].into_iter().enumerate() {
        let cfg = preset_config("sv_wagner", &format!("sv_wagner_{name}_t6"));
        let estimates: Vec<f64> = (0..200u64)
            .map(|seed| run(&ExperimentConfig { seed, ..cfg.clone() }).map(|o| o.summary.estimate))
            .collect::<Result<_, _>>()?;
        mad[k] = cis_engine::stats::mad(&estimates).unwrap();
    }
    ensure(
        r2 < r1 && r1 < cis && mad[1] < mad[0],
        format!(
            "RMSE CIS/R1/R2: {}; MAD at T=6 WGR1 {:.3} WGR2 {:.3}",
            table.join(", "),
            mad[0],
            mad[1]
        ),
    )
}

fn crit9_derivatives() -> Outcome {
    let results = derivative_checks(91);
    let ok = results.iter().all(|r| r.passed);
    ensure(ok, results.iter().map(|r| r.to_string()).collect::<Vec<_>>().join("; "))
}

fn csv_bytes(cfg: &ExperimentConfig, threads: usize) -> Result<Vec<u8>, String> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| e.to_string())?;
    let out = pool.install(|| run(cfg))?;
    let mut buf = Vec::new();
    cis_cli::output::write_csv(&out.rows, &mut buf).map_err(|e| e.to_string())?;
    buf.extend(cis_cli::output::sidecar_json(&out).map_err(|e| e.to_string())?.bytes());
    Ok(buf)
}

fn crit10_reproducibility() -> Outcome {
    let configs = [
        ExperimentConfig {
            n: 2000,
            seed: 101,
            ..Default::default()
        },
        ExperimentConfig {
            method: Method::CisR2,
            n: 4,
            n_particles: 64,
            n_checkpoints: 4,
            t: 2.0,
            seed: 102,
            ..Default::default()
        },
        ExperimentConfig {
            cost_target: Some(5000),
            seed: 103,
            ..preset_config("cir_density", "cir_density_gcis_k3")
        },
        ExperimentConfig {
            n: 500,
            seed: 104,
            ..preset_config("cir_density", "cir_density_dg_k2")
        },
        ExperimentConfig {
            n: 500,
            seed: 105,
            ..preset_config("sv_wagner", "sv_wagner_wgr2_t3")
        },
    ];
    let mut names = Vec::new();
    for cfg in &configs {
        if csv_bytes(cfg, 1)? != csv_bytes(cfg, 8)? {
            return Err(format!("{} differs between 1 and 8 threads", cfg.method.name()));
        }
        names.push(cfg.method.name());
    }
    Ok(format!("identical output at 1 and 8 threads for {}", names.join(", ")))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("formula cross-check", crit1_formula_cross_check),
        ("mean-one increment", crit2_mean_one_increment),
        ("unbiased normalisation", crit3_unbiased_normalisation),
        ("OU oracle", crit4_ou_oracle),
        ("log-CIR density table", crit5_table_one),
        ("renewal KS", crit6_renewal_ks),
        ("resampling consistency", crit7_resampling_consistency),
        ("horizon scaling", crit8_horizon_scaling),
        ("derivative oracle", crit9_derivatives),
        ("reproducibility", crit10_reproducibility),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (k, (name, f)) in criteria.iter().enumerate() {
        let id = format!("{}", k + 1);
        if !filter.is_empty() && !filter.iter().any(|a| *a == id || name.contains(a.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("PASS criterion {id} ({name}, {secs:.1}s): {d}"),
            Err(d) => {
                failed += 1;
                println!("FAIL criterion {id} ({name}, {secs:.1}s): {d}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
