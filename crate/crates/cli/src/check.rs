//! Self-checks run by the `check` subcommand.

use cis_engine::models::FiniteDiffModel;
use cis_engine::rng::{open01, std_normal};
use cis_engine::{
    check_derivatives, incremental_weight, incremental_weight_1d, stream, BuiltInModel, CirParams, DiffusionModel,
    ProposalParams, RenewalRate, State, StreamRng,
};
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl std::fmt::Display for CheckResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {}", self.name, self.detail)
    }
}

const DERIV_TOL: f64 = 1e-6;
const DERIV_STEP: f64 = 1e-5;
const FORMULA_TOL: f64 = 1e-10;

fn result(name: &str, passed: bool, detail: String) -> CheckResult {
    CheckResult {
        name: name.to_string(),
        passed,
        detail,
    }
}

fn uniform(rng: &mut StreamRng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * open01(rng)
}

type PointSampler = fn(&mut StreamRng) -> State;

/// Built-in models with a sampler of interior points.
fn model_zoo() -> Vec<(&'static str, BuiltInModel, PointSampler)> {
    vec![
        ("sv", BuiltInModel::sv(1.0, 0.5).unwrap(), |r| {
            DVector::from_vec(vec![1.5 * std_normal(r), 1.5 * std_normal(r)])
        }),
        ("ou", BuiltInModel::ou(0.5, 1.0, 0.4).unwrap(), |r| {
            DVector::from_vec(vec![1.0 + 2.0 * std_normal(r)])
        }),
        ("cir2d", BuiltInModel::Cir2d(CirParams::reference()), |r| {
            DVector::from_vec(vec![uniform(r, 0.5, 6.0), uniform(r, 0.5, 6.0)])
        }),
        ("logcir2d", BuiltInModel::LogCir2d(CirParams::reference()), |r| {
            DVector::from_vec(vec![uniform(r, -1.0, 2.0), uniform(r, -1.0, 2.0)])
        }),
        (
            "constant",
            BuiltInModel::constant(
                DVector::from_vec(vec![0.3, -0.2]),
                DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.5, 0.7]),
            )
            .unwrap(),
            |r| DVector::from_vec(vec![std_normal(r), std_normal(r)]),
        ),
    ]
}

/// Analytic derivative bundles of every built-in model against finite
/// differences at 20 random interior points.
pub fn derivative_checks(seed: u64) -> Vec<CheckResult> {
    model_zoo()
        .into_iter()
        .enumerate()
        .map(|(k, (name, model, point))| {
            let mut rng = stream(seed, k as u64);
            let mut worst = 0.0f64;
            let mut failure = None;
            for _ in 0..20 {
                let x = point(&mut rng);
                match check_derivatives(&model, &x, DERIV_STEP) {
                    Ok(r) => worst = worst.max(r.max_error()),
                    Err(e) => failure = Some(e.to_string()),
                }
            }
            let detail = match &failure {
                Some(e) => e.clone(),
                None => format!("max relative error {worst:.2e} (tolerance {DERIV_TOL:.0e})"),
            };
            result(
                &format!("derivatives/{name}"),
                failure.is_none() && worst <= DERIV_TOL,
                detail,
            )
        })
        .collect()
}

fn scalar_sv() -> FiniteDiffModel {
    FiniteDiffModel::new(
        "scalar-sv",
        1,
        |x: &State| DVector::from_element(1, -0.5 * x[0].tanh()),
        |x: &State| DMatrix::from_element(1, 1, 0.5 * (2.0 + x[0].tanh())),
    )
}

/// Largest relative gap between the scalar and matrix forms of `ρ` over
/// `n` random univariate inputs.
pub fn formula_gap<M: DiffusionModel>(model: &M, n: usize, seed: u64) -> cis_engine::Result<f64> {
    let mut rng = stream(seed, 0);
    let mut worst = 0.0f64;
    for _ in 0..n {
        let x = DVector::from_element(1, 2.0 * std_normal(&mut rng));
        let y = DVector::from_element(1, 2.0 * std_normal(&mut rng));
        let u = uniform(&mut rng, 0.01, 2.0);
        let rate = RenewalRate::new(uniform(&mut rng, 0.2, 2.0), uniform(&mut rng, 0.2, 1.0))?;
        let params = ProposalParams::from_bundle(&model.eval(&x)?)?;
        let a = incremental_weight(model, &params, &x, &y, u, &rate)?;
        let b = incremental_weight_1d(model, &params, &x, &y, u, &rate)?;
        worst = worst.max((a - b).abs() / a.abs().max(1.0));
    }
    Ok(worst)
}

pub fn formula_checks(seed: u64) -> Vec<CheckResult> {
    let mut out = Vec::new();
    let gaps = [
        ("ou", formula_gap(&BuiltInModel::ou(0.5, 1.0, 0.4).unwrap(), 1000, seed)),
        ("scalar-sv", formula_gap(&scalar_sv(), 1000, seed)),
    ];
    for (name, gap) in gaps {
        out.push(match gap {
            Ok(g) => result(
                &format!("weight-forms/{name}"),
                g <= FORMULA_TOL,
                format!("max gap {g:.2e} over 1000 inputs (tolerance {FORMULA_TOL:.0e})"),
            ),
            Err(e) => result(&format!("weight-forms/{name}"), false, e.to_string()),
        });
    }

    let constant = model_zoo().pop().unwrap().1;
    let mut rng = stream(seed, 1);
    let mut off = 0.0f64;
    let rate = RenewalRate::new(1.0, 0.5).unwrap();
    for _ in 0..1000 {
        let x = DVector::from_vec(vec![std_normal(&mut rng), std_normal(&mut rng)]);
        let y = DVector::from_vec(vec![3.0 * std_normal(&mut rng), 3.0 * std_normal(&mut rng)]);
        let u = uniform(&mut rng, 1e-3, 3.0);
        let params = ProposalParams::from_bundle(&constant.eval(&x).unwrap()).unwrap();
        let rho = incremental_weight(&constant, &params, &x, &y, u, &rate).unwrap();
        off = off.max((rho - 1.0).abs());
    }
    out.push(result(
        "weight-forms/constant-is-one",
        off == 0.0,
        format!("max |ρ − 1| = {off:e}"),
    ));
    out
}

/// Inverse-transform sampling of the waiting time against its distribution function.
pub fn renewal_checks() -> Vec<CheckResult> {
    [(1.0, 1.0), (1.0, 0.5), (0.5, 0.5), (2.0, 0.25)]
        .into_iter()
        .map(|(delta, alpha)| {
            let rate = RenewalRate::new(delta, alpha).unwrap();
            let worst = (1..1000)
                .map(|k| {
                    let u = k as f64 / 1000.0;
                    (rate.survival(rate.sample_interarrival(u)) - u).abs()
                })
                .fold(0.0f64, f64::max);
            result(
                &format!("renewal/delta={delta},alpha={alpha}"),
                worst < 1e-12,
                format!("max |S(τ(u)) − u| = {worst:.2e}"),
            )
        })
        .collect()
}

pub fn run_all(seed: u64) -> Vec<CheckResult> {
    let mut out = derivative_checks(seed);
    out.extend(formula_checks(seed));
    out.extend(renewal_checks());
    out
}
