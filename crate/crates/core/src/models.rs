//! Diffusion models `dX = b(X) dt + σ(X) dB` and the coefficient derivatives
//! consumed by the incremental weight.
//!
//! With `γ = σσᵀ` the weight needs, besides `b` and `γ`,
//!
//! ```text
//! [b₍₁₎(x)]ᵢ  = ∂bᵢ/∂xᵢ
//! [γ₍₁₎(x)]ᵢⱼ = ∂γᵢⱼ/∂xⱼ
//! [γ₍₂₎(x)]ᵢⱼ = ∂²γᵢⱼ/∂xᵢ∂xⱼ
//! ```
//!
//! Built-in models supply these analytically. [`FiniteDiffModel`] wraps arbitrary
//! drift and diffusion closures and fills the derivatives in by central differences.
//!
//! # Log-transformed CIR
//!
//! For the bivariate CIR
//!
//! ```text
//! dX₁ = −ρ₁(X₁ − μ₁) dt + σ₁√X₁ dW
//! dX₂ = −ρ₂(X₂ − μ₂) dt + σ₂√X₂ (ρ dW + √(1−ρ²) dB)
//! ```
//!
//! Itô's formula applied to `Yᵢ = ln Xᵢ` gives
//!
//! ```text
//! dYᵢ = (−ρᵢ + (ρᵢμᵢ − σᵢ²/2) e^{−Yᵢ}) dt + σᵢ e^{−Yᵢ/2} dBᵢ'
//! γ₁₁ = σ₁² e^{−y₁},  γ₂₂ = σ₂² e^{−y₂},  γ₁₂ = ρσ₁σ₂ e^{−(y₁+y₂)/2}
//! ```
//!
//! with the same correlation structure as the original process. A density in
//! `y` converts to one in `x = eʸ` by the factor `e^{−(y₁+y₂)}`
//! (see [`BuiltInModel::original_density_factor`]).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type State = DVector<f64>;

/// All coefficient quantities of a model at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientBundle {
    pub drift: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
    pub drift_diag_deriv: DVector<f64>,
    pub gamma_first_deriv: DMatrix<f64>,
    pub gamma_second_deriv: DMatrix<f64>,
}

/// A time-homogeneous diffusion with the derivative bundles of its coefficients.
///
/// Implementations must be pure: all evaluation may happen concurrently.
pub trait DiffusionModel: Send + Sync {
    fn name(&self) -> &str;

    fn dim(&self) -> usize;

    /// Returns `Error::Domain` if the coefficients are undefined at `x`.
    fn check_domain(&self, x: &State) -> Result<()> {
        check_finite(self, x)
    }

    fn drift(&self, x: &State) -> Result<DVector<f64>>;

    fn diffusion(&self, x: &State) -> Result<DMatrix<f64>>;

    fn gamma(&self, x: &State) -> Result<DMatrix<f64>> {
        let s = self.diffusion(x)?;
        Ok(&s * s.transpose())
    }

    fn drift_diag_deriv(&self, x: &State) -> Result<DVector<f64>>;

    fn gamma_first_deriv(&self, x: &State) -> Result<DMatrix<f64>>;

    fn gamma_second_deriv(&self, x: &State) -> Result<DMatrix<f64>>;

    fn eval(&self, x: &State) -> Result<CoefficientBundle> {
        self.check_domain(x)?;
        Ok(CoefficientBundle {
            drift: self.drift(x)?,
            sigma: self.diffusion(x)?,
            gamma: self.gamma(x)?,
            drift_diag_deriv: self.drift_diag_deriv(x)?,
            gamma_first_deriv: self.gamma_first_deriv(x)?,
            gamma_second_deriv: self.gamma_second_deriv(x)?,
        })
    }
}

fn domain_error<M: DiffusionModel + ?Sized>(model: &M, x: &State) -> Error {
    Error::Domain {
        model: model.name().to_string(),
        state: x.iter().copied().collect(),
    }
}

fn check_finite<M: DiffusionModel + ?Sized>(model: &M, x: &State) -> Result<()> {
    if x.len() != model.dim() {
        return Err(Error::Dimension {
            expected: model.dim(),
            got: x.len(),
        });
    }
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(domain_error(model, x))
    }
}

/// Parameterised instances of the built-in target models.
#[derive(Debug, Clone, PartialEq)]
pub enum BuiltInModel {
    /// `dX = b₀ dt + σ₀ dB`.
    ConstantCoeff {
        drift: DVector<f64>,
        sigma: DMatrix<f64>,
    },
    /// `dX = −ρ(X − μ) dt + σ dB`.
    Ou1d {
        rho: f64,
        mu: f64,
        sigma: f64,
    },
    /// Stochastic volatility model: `dX₁ = −σ₁²/2 tanh X₁ dt + σ₁ dB₁`,
    /// `dX₂ = σ₂(2 + tanh X₁) dB₂`.
    Sv {
        sigma1: f64,
        sigma2: f64,
    },
    Cir2d(CirParams),
    /// Coordinatewise log of [`BuiltInModel::Cir2d`].
    LogCir2d(CirParams),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CirParams {
    pub rho1: f64,
    pub mu1: f64,
    pub sigma1: f64,
    pub rho2: f64,
    pub mu2: f64,
    pub sigma2: f64,
    /// Instantaneous correlation of the two coordinates.
    pub corr: f64,
}

impl CirParams {
    pub fn new(rho1: f64, mu1: f64, sigma1: f64, rho2: f64, mu2: f64, sigma2: f64, corr: f64) -> Result<Self> {
        for (name, v) in [
            ("rho1", rho1),
            ("mu1", mu1),
            ("sigma1", sigma1),
            ("rho2", rho2),
            ("mu2", mu2),
            ("sigma2", sigma2),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("CIR {name} must be positive, got {v}")));
            }
        }
        if !(corr.abs() < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "CIR correlation must lie in (-1, 1), got {corr}"
            )));
        }
        Ok(Self {
            rho1,
            mu1,
            sigma1,
            rho2,
            mu2,
            sigma2,
            corr,
        })
    }

    /// The parameter set of the bivariate CIR density study.
    pub fn reference() -> Self {
        Self::new(0.6, 2.5, 0.45, 0.3, 3.0, 0.35, 0.5).expect("valid reference parameters")
    }
}

fn positive(name: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")))
    }
}

impl BuiltInModel {
    pub fn constant(drift: DVector<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        if sigma.nrows() != drift.len() || sigma.ncols() != drift.len() {
            return Err(Error::Dimension {
                expected: drift.len(),
                got: sigma.nrows(),
            });
        }
        let gamma = &sigma * sigma.transpose();
        crate::gaussian::SpdFactor::new(&gamma)?;
        Ok(Self::ConstantCoeff { drift, sigma })
    }

    pub fn ou(rho: f64, mu: f64, sigma: f64) -> Result<Self> {
        if !mu.is_finite() {
            return Err(Error::InvalidParameter("OU mean must be finite".into()));
        }
        Ok(Self::Ou1d {
            rho: positive("OU rho", rho)?,
            mu,
            sigma: positive("OU sigma", sigma)?,
        })
    }

    pub fn sv(sigma1: f64, sigma2: f64) -> Result<Self> {
        Ok(Self::Sv {
            sigma1: positive("SV sigma1", sigma1)?,
            sigma2: positive("SV sigma2", sigma2)?,
        })
    }

    /// Builds a model from its configuration name and flat parameter list.
    ///
    /// `constant` takes `d` followed by `b₀` (d values) and `σ₀` (d² values, row major).
    pub fn from_name(name: &str, params: &[f64]) -> Result<Self> {
        let want = |n: usize| -> Result<()> {
            if params.len() == n {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!(
                    "model {name} takes {n} parameters, got {}",
                    params.len()
                )))
            }
        };
        match name.to_ascii_lowercase().as_str() {
            "constant" | "constant_coeff" => {
                let d = params.first().copied().unwrap_or(0.0);
                if !(d >= 1.0 && d.fract() == 0.0) {
                    return Err(Error::InvalidParameter(
                        "constant model needs its dimension first".into(),
                    ));
                }
                let d = d as usize;
                want(1 + d + d * d)?;
                Self::constant(
                    DVector::from_column_slice(&params[1..1 + d]),
                    DMatrix::from_row_slice(d, d, &params[1 + d..]),
                )
            }
            "ou" | "ou1d" => {
                want(3)?;
                Self::ou(params[0], params[1], params[2])
            }
            "sv" => {
                want(2)?;
                Self::sv(params[0], params[1])
            }
            "cir" | "cir2d" | "logcir" | "logcir2d" | "log_cir2d" => {
                want(7)?;
                let p = CirParams::new(
                    params[0], params[1], params[2], params[3], params[4], params[5], params[6],
                )?;
                if name.to_ascii_lowercase().contains("log") {
                    Ok(Self::LogCir2d(p))
                } else {
                    Ok(Self::Cir2d(p))
                }
            }
            other => Err(Error::InvalidParameter(format!("unknown model `{other}`"))),
        }
    }

    /// Multiplier converting a density in this model's coordinates into one in
    /// the coordinates of the underlying process (`e^{−(y₁+y₂)}` for the
    /// log-transformed CIR, `1` otherwise).
    pub fn original_density_factor(&self, y: &State) -> f64 {
        match self {
            Self::LogCir2d(_) => (-(y[0] + y[1])).exp(),
            _ => 1.0,
        }
    }

    /// Closed-form transition density, where one exists.
    pub fn known_transition(&self) -> Option<KnownTransition> {
        match self {
            Self::ConstantCoeff { drift, sigma } => Some(KnownTransition::Gaussian {
                drift: drift.clone(),
                gamma: sigma * sigma.transpose(),
            }),
            Self::Ou1d { rho, mu, sigma } => Some(KnownTransition::Ou {
                rho: *rho,
                mu: *mu,
                sigma: *sigma,
            }),
            _ => None,
        }
    }
}

impl DiffusionModel for BuiltInModel {
    fn name(&self) -> &str {
        match self {
            Self::ConstantCoeff { .. } => "constant",
            Self::Ou1d { .. } => "ou1d",
            Self::Sv { .. } => "sv",
            Self::Cir2d(_) => "cir2d",
            Self::LogCir2d(_) => "logcir2d",
        }
    }

    fn dim(&self) -> usize {
        match self {
            Self::ConstantCoeff { drift, .. } => drift.len(),
            Self::Ou1d { .. } => 1,
            Self::Sv { .. } | Self::Cir2d(_) | Self::LogCir2d(_) => 2,
        }
    }

    fn check_domain(&self, x: &State) -> Result<()> {
        check_finite(self, x)?;
        match self {
            Self::Cir2d(_) if !(x[0] > 0.0 && x[1] > 0.0) => Err(domain_error(self, x)),
            _ => Ok(()),
        }
    }

    fn drift(&self, x: &State) -> Result<DVector<f64>> {
        self.check_domain(x)?;
        Ok(match self {
            Self::ConstantCoeff { drift, .. } => drift.clone(),
            Self::Ou1d { rho, mu, .. } => DVector::from_element(1, -rho * (x[0] - mu)),
            Self::Sv { sigma1, .. } => DVector::from_vec(vec![-0.5 * sigma1 * sigma1 * x[0].tanh(), 0.0]),
            Self::Cir2d(p) => DVector::from_vec(vec![-p.rho1 * (x[0] - p.mu1), -p.rho2 * (x[1] - p.mu2)]),
            Self::LogCir2d(p) => DVector::from_vec(vec![
                -p.rho1 + (p.rho1 * p.mu1 - 0.5 * p.sigma1 * p.sigma1) * (-x[0]).exp(),
                -p.rho2 + (p.rho2 * p.mu2 - 0.5 * p.sigma2 * p.sigma2) * (-x[1]).exp(),
            ]),
        })
    }

    fn diffusion(&self, x: &State) -> Result<DMatrix<f64>> {
        self.check_domain(x)?;
        Ok(match self {
            Self::ConstantCoeff { sigma, .. } => sigma.clone(),
            Self::Ou1d { sigma, .. } => DMatrix::from_element(1, 1, *sigma),
            Self::Sv { sigma1, sigma2 } => {
                DMatrix::from_row_slice(2, 2, &[*sigma1, 0.0, 0.0, sigma2 * (2.0 + x[0].tanh())])
            }
            Self::Cir2d(p) => {
                let (s1, s2) = (p.sigma1 * x[0].sqrt(), p.sigma2 * x[1].sqrt());
                cir_sigma(s1, s2, p.corr)
            }
            Self::LogCir2d(p) => {
                let (s1, s2) = (p.sigma1 * (-0.5 * x[0]).exp(), p.sigma2 * (-0.5 * x[1]).exp());
                cir_sigma(s1, s2, p.corr)
            }
        })
    }

    fn gamma(&self, x: &State) -> Result<DMatrix<f64>> {
        self.check_domain(x)?;
        Ok(match self {
            Self::ConstantCoeff { sigma, .. } => sigma * sigma.transpose(),
            Self::Ou1d { sigma, .. } => DMatrix::from_element(1, 1, sigma * sigma),
            Self::Sv { sigma1, sigma2 } => {
                let v = sigma2 * (2.0 + x[0].tanh());
                DMatrix::from_row_slice(2, 2, &[sigma1 * sigma1, 0.0, 0.0, v * v])
            }
            Self::Cir2d(p) => {
                let g11 = p.sigma1 * p.sigma1 * x[0];
                let g22 = p.sigma2 * p.sigma2 * x[1];
                let g12 = p.corr * p.sigma1 * p.sigma2 * (x[0] * x[1]).sqrt();
                DMatrix::from_row_slice(2, 2, &[g11, g12, g12, g22])
            }
            Self::LogCir2d(p) => {
                let (e1, e2) = ((-x[0]).exp(), (-x[1]).exp());
                let g12 = p.corr * p.sigma1 * p.sigma2 * (-0.5 * (x[0] + x[1])).exp();
                DMatrix::from_row_slice(2, 2, &[p.sigma1 * p.sigma1 * e1, g12, g12, p.sigma2 * p.sigma2 * e2])
            }
        })
    }

    fn drift_diag_deriv(&self, x: &State) -> Result<DVector<f64>> {
        self.check_domain(x)?;
        Ok(match self {
            Self::ConstantCoeff { drift, .. } => DVector::zeros(drift.len()),
            Self::Ou1d { rho, .. } => DVector::from_element(1, -rho),
            Self::Sv { sigma1, .. } => {
                let sech = 1.0 / x[0].cosh();
                DVector::from_vec(vec![-0.5 * sigma1 * sigma1 * sech * sech, 0.0])
            }
            Self::Cir2d(p) => DVector::from_vec(vec![-p.rho1, -p.rho2]),
            Self::LogCir2d(p) => DVector::from_vec(vec![
                -(p.rho1 * p.mu1 - 0.5 * p.sigma1 * p.sigma1) * (-x[0]).exp(),
                -(p.rho2 * p.mu2 - 0.5 * p.sigma2 * p.sigma2) * (-x[1]).exp(),
            ]),
        })
    }

    fn gamma_first_deriv(&self, x: &State) -> Result<DMatrix<f64>> {
        self.check_domain(x)?;
        let d = self.dim();
        Ok(match self {
            Self::ConstantCoeff { .. } | Self::Ou1d { .. } => DMatrix::zeros(d, d),
            // γ₂₂ depends on x₁ only, so ∂γ₂₂/∂x₂ vanishes.
            Self::Sv { .. } => DMatrix::zeros(2, 2),
            Self::Cir2d(p) => {
                let c = p.corr * p.sigma1 * p.sigma2;
                DMatrix::from_row_slice(
                    2,
                    2,
                    &[
                        p.sigma1 * p.sigma1,
                        0.5 * c * (x[0] / x[1]).sqrt(),
                        0.5 * c * (x[1] / x[0]).sqrt(),
                        p.sigma2 * p.sigma2,
                    ],
                )
            }
            Self::LogCir2d(p) => {
                let off = -0.5 * p.corr * p.sigma1 * p.sigma2 * (-0.5 * (x[0] + x[1])).exp();
                DMatrix::from_row_slice(
                    2,
                    2,
                    &[
                        -p.sigma1 * p.sigma1 * (-x[0]).exp(),
                        off,
                        off,
                        -p.sigma2 * p.sigma2 * (-x[1]).exp(),
                    ],
                )
            }
        })
    }

    fn gamma_second_deriv(&self, x: &State) -> Result<DMatrix<f64>> {
        self.check_domain(x)?;
        let d = self.dim();
        Ok(match self {
            Self::ConstantCoeff { .. } | Self::Ou1d { .. } | Self::Sv { .. } => DMatrix::zeros(d, d),
            Self::Cir2d(p) => {
                let off = 0.25 * p.corr * p.sigma1 * p.sigma2 / (x[0] * x[1]).sqrt();
                DMatrix::from_row_slice(2, 2, &[0.0, off, off, 0.0])
            }
            Self::LogCir2d(p) => {
                let off = 0.25 * p.corr * p.sigma1 * p.sigma2 * (-0.5 * (x[0] + x[1])).exp();
                DMatrix::from_row_slice(
                    2,
                    2,
                    &[
                        p.sigma1 * p.sigma1 * (-x[0]).exp(),
                        off,
                        off,
                        p.sigma2 * p.sigma2 * (-x[1]).exp(),
                    ],
                )
            }
        })
    }
}

fn cir_sigma(s1: f64, s2: f64, corr: f64) -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[s1, 0.0, s2 * corr, s2 * (1.0 - corr * corr).sqrt()])
}

/// Transition densities available in closed form.
#[derive(Debug, Clone, PartialEq)]
pub enum KnownTransition {
    Gaussian { drift: DVector<f64>, gamma: DMatrix<f64> },
    Ou { rho: f64, mu: f64, sigma: f64 },
}

impl KnownTransition {
    pub fn log_density(&self, x: &State, y: &State, t: f64) -> Result<f64> {
        match self {
            Self::Gaussian { drift, gamma } => {
                let f = crate::gaussian::SpdFactor::new(gamma)?;
                Ok(f.log_density_scaled(y, &(x + drift * t), t))
            }
            Self::Ou { rho, mu, sigma } => {
                let (m, v) = ou_moments(*rho, *mu, *sigma, x[0], t);
                let d = y[0] - m;
                Ok(-0.5 * (d * d / v + (2.0 * std::f64::consts::PI * v).ln()))
            }
        }
    }

    pub fn density(&self, x: &State, y: &State, t: f64) -> Result<f64> {
        self.log_density(x, y, t).map(f64::exp)
    }
}

/// Mean and variance of an OU process after time `t` started from `x`.
pub fn ou_moments(rho: f64, mu: f64, sigma: f64, x: f64, t: f64) -> (f64, f64) {
    let e = (-rho * t).exp();
    (mu + (x - mu) * e, sigma * sigma * (1.0 - e * e) / (2.0 * rho))
}

type DriftFn = dyn Fn(&State) -> DVector<f64> + Send + Sync;
type SigmaFn = dyn Fn(&State) -> DMatrix<f64> + Send + Sync;
type DomainFn = dyn Fn(&State) -> bool + Send + Sync;

/// A user model given by drift and diffusion closures; derivative bundles come
/// from central finite differences.
pub struct FiniteDiffModel {
    name: String,
    dim: usize,
    drift: Box<DriftFn>,
    sigma: Box<SigmaFn>,
    domain: Option<Box<DomainFn>>,
    step: f64,
}

impl FiniteDiffModel {
    pub fn new<B, S>(name: impl Into<String>, dim: usize, drift: B, sigma: S) -> Self
    where
        B: Fn(&State) -> DVector<f64> + Send + Sync + 'static,
        S: Fn(&State) -> DMatrix<f64> + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            dim,
            drift: Box::new(drift),
            sigma: Box::new(sigma),
            domain: None,
            step: 1e-5,
        }
    }

    pub fn with_domain<D>(mut self, inside: D) -> Self
    where
        D: Fn(&State) -> bool + Send + Sync + 'static,
    {
        self.domain = Some(Box::new(inside));
        self
    }

    pub fn with_step(mut self, step: f64) -> Self {
        self.step = step;
        self
    }
}

impl std::fmt::Debug for FiniteDiffModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FiniteDiffModel")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("step", &self.step)
            .finish_non_exhaustive()
    }
}

impl DiffusionModel for FiniteDiffModel {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn check_domain(&self, x: &State) -> Result<()> {
        check_finite(self, x)?;
        match &self.domain {
            Some(inside) if !inside(x) => Err(domain_error(self, x)),
            _ => Ok(()),
        }
    }

    fn drift(&self, x: &State) -> Result<DVector<f64>> {
        self.check_domain(x)?;
        Ok((self.drift)(x))
    }

    fn diffusion(&self, x: &State) -> Result<DMatrix<f64>> {
        self.check_domain(x)?;
        Ok((self.sigma)(x))
    }

    fn drift_diag_deriv(&self, x: &State) -> Result<DVector<f64>> {
        fd_drift_diag(&|z| self.drift(z), x, self.step)
    }

    fn gamma_first_deriv(&self, x: &State) -> Result<DMatrix<f64>> {
        fd_gamma_first(&|z| self.gamma(z), x, self.step)
    }

    fn gamma_second_deriv(&self, x: &State) -> Result<DMatrix<f64>> {
        fd_gamma_second(&|z| self.gamma(z), x, second_difference_step(self.step))
    }
}

/// Step used for second differences given a first-difference step `h`.
///
/// A second difference loses `ε/h²` to cancellation, so it runs on the coarser
/// scale `h^{2/3}` (≈ 4.6e-4 for `h = 1e-5`).
pub fn second_difference_step(h: f64) -> f64 {
    h.powf(2.0 / 3.0).max(h)
}

fn shifted(x: &State, i: usize, h: f64) -> State {
    let mut z = x.clone();
    z[i] += h;
    z
}

fn fd_drift_diag(drift: &dyn Fn(&State) -> Result<DVector<f64>>, x: &State, h: f64) -> Result<DVector<f64>> {
    let d = x.len();
    let mut out = DVector::zeros(d);
    for i in 0..d {
        let up = drift(&shifted(x, i, h))?;
        let down = drift(&shifted(x, i, -h))?;
        out[i] = (up[i] - down[i]) / (2.0 * h);
    }
    Ok(out)
}

fn fd_gamma_first(gamma: &dyn Fn(&State) -> Result<DMatrix<f64>>, x: &State, h: f64) -> Result<DMatrix<f64>> {
    let d = x.len();
    let mut out = DMatrix::zeros(d, d);
    for j in 0..d {
        let up = gamma(&shifted(x, j, h))?;
        let down = gamma(&shifted(x, j, -h))?;
        for i in 0..d {
            out[(i, j)] = (up[(i, j)] - down[(i, j)]) / (2.0 * h);
        }
    }
    Ok(out)
}

fn fd_gamma_second(gamma: &dyn Fn(&State) -> Result<DMatrix<f64>>, x: &State, h: f64) -> Result<DMatrix<f64>> {
    let d = x.len();
    let centre = gamma(x)?;
    let mut out = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            out[(i, j)] = if i == j {
                let up = gamma(&shifted(x, i, h))?;
                let down = gamma(&shifted(x, i, -h))?;
                (up[(i, i)] - 2.0 * centre[(i, i)] + down[(i, i)]) / (h * h)
            } else {
                let pp = gamma(&shifted(&shifted(x, i, h), j, h))?;
                let pm = gamma(&shifted(&shifted(x, i, h), j, -h))?;
                let mp = gamma(&shifted(&shifted(x, i, -h), j, h))?;
                let mm = gamma(&shifted(&shifted(x, i, -h), j, -h))?;
                (pp[(i, j)] - pm[(i, j)] - mp[(i, j)] + mm[(i, j)]) / (4.0 * h * h)
            };
        }
    }
    Ok(out)
}

/// Worst discrepancies between a model's analytic derivative bundles and
/// central finite differences of its drift and `γ`, each relative to
/// `max(1, |analytic value|)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivativeReport {
    pub drift_diag: f64,
    pub gamma_first: f64,
    pub gamma_second: f64,
}

impl DerivativeReport {
    pub fn max_error(&self) -> f64 {
        self.drift_diag.max(self.gamma_first).max(self.gamma_second)
    }
}

fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(1.0))
        .fold(0.0, f64::max)
}

/// Compares `b₍₁₎`, `γ₍₁₎` and `γ₍₂₎` against central differences with step `h`
/// (second differences use [`second_difference_step`]).
pub fn check_derivatives<M: DiffusionModel + ?Sized>(model: &M, x: &State, h: f64) -> Result<DerivativeReport> {
    if !(h > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let bundle = model.eval(x)?;
    let drift = |z: &State| model.drift(z);
    let gamma = |z: &State| model.gamma(z);
    let b1 = fd_drift_diag(&drift, x, h)?;
    let g1 = fd_gamma_first(&gamma, x, h)?;
    let g2 = fd_gamma_second(&gamma, x, second_difference_step(h))?;
    Ok(DerivativeReport {
        drift_diag: rel_err(bundle.drift_diag_deriv.as_slice(), b1.as_slice()),
        gamma_first: rel_err(bundle.gamma_first_deriv.as_slice(), g1.as_slice()),
        gamma_second: rel_err(bundle.gamma_second_deriv.as_slice(), g2.as_slice()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> State {
        DVector::from_column_slice(xs)
    }

    fn cir() -> BuiltInModel {
        BuiltInModel::Cir2d(CirParams::reference())
    }

    #[test]
    fn constant_coefficients_have_zero_derivatives() {
        let m = BuiltInModel::constant(v(&[0.0, 0.0]), DMatrix::identity(2, 2)).unwrap();
        let b = m.eval(&v(&[3.0, -1.0])).unwrap();
        assert_eq!(b.drift, v(&[0.0, 0.0]));
        assert_eq!(b.gamma, DMatrix::identity(2, 2));
        assert_eq!(b.drift_diag_deriv.amax(), 0.0);
        assert_eq!(b.gamma_first_deriv.amax(), 0.0);
        assert_eq!(b.gamma_second_deriv.amax(), 0.0);
        assert_eq!(check_derivatives(&m, &v(&[3.0, -1.0]), 1e-5).unwrap().max_error(), 0.0);
    }

    #[test]
    fn sv_gamma_at_zero_is_identity() {
        let m = BuiltInModel::sv(1.0, 0.5).unwrap();
        let g = m.gamma(&v(&[0.0, 17.0])).unwrap();
        assert!((g - DMatrix::<f64>::identity(2, 2)).amax() < 1e-15);
    }

    #[test]
    fn cir_gamma_hand_values() {
        let g = cir().gamma(&v(&[2.5, 3.0])).unwrap();
        assert!((g[(0, 0)] - 0.50625).abs() < 1e-14);
        assert!((g[(1, 1)] - 0.3675).abs() < 1e-14);
        let off = 0.5 * 0.45 * 0.35 * 7.5f64.sqrt();
        assert!((g[(0, 1)] - off).abs() < 1e-14);
        assert_eq!(g[(0, 1)], g[(1, 0)]);
    }

    #[test]
    fn cir_domain_guard() {
        let err = cir().eval(&v(&[-0.1, 3.0])).unwrap_err();
        assert!(matches!(err, Error::Domain { .. }));
        assert!(matches!(cir().drift(&v(&[1.0, 0.0])), Err(Error::Domain { .. })));
        assert!(BuiltInModel::LogCir2d(CirParams::reference())
            .eval(&v(&[-3.0, 0.5]))
            .is_ok());
    }

    #[test]
    fn dimension_is_checked() {
        let m = BuiltInModel::sv(1.0, 0.5).unwrap();
        assert_eq!(
            m.eval(&v(&[1.0])).unwrap_err(),
            Error::Dimension { expected: 2, got: 1 }
        );
    }

    #[test]
    fn ou_drift_derivative_is_exact() {
        let m = BuiltInModel::ou(0.5, 1.0, 0.4).unwrap();
        let b = m.eval(&v(&[2.0])).unwrap();
        assert_eq!(b.drift_diag_deriv[0], -0.5);
        assert!(check_derivatives(&m, &v(&[2.0]), 1e-4).unwrap().max_error() < 1e-9);
    }

    #[test]
    fn sv_derivative_check_at_reference_point() {
        let m = BuiltInModel::sv(1.0, 0.5).unwrap();
        let r = check_derivatives(&m, &v(&[1.0, 0.0]), 1e-5).unwrap();
        assert!(r.max_error() < 1e-6, "{r:?}");
    }

    #[test]
    fn finite_difference_model_matches_analytic_sv() {
        let fd = FiniteDiffModel::new(
            "sv-fd",
            2,
            |x: &State| DVector::from_vec(vec![-0.5 * x[0].tanh(), 0.0]),
            |x: &State| DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.5 * (2.0 + x[0].tanh())]),
        );
        let exact = BuiltInModel::sv(1.0, 0.5).unwrap();
        let x = v(&[0.7, -0.2]);
        let a = exact.eval(&x).unwrap();
        let b = fd.eval(&x).unwrap();
        assert!((a.drift_diag_deriv - b.drift_diag_deriv).amax() < 1e-8);
        assert!((a.gamma_first_deriv - b.gamma_first_deriv).amax() < 1e-8);
        assert!((a.gamma_second_deriv - b.gamma_second_deriv).amax() < 1e-5);
    }

    #[test]
    fn finite_difference_model_domain() {
        let fd = FiniteDiffModel::new(
            "sqrt",
            1,
            |x: &State| DVector::from_element(1, -x[0]),
            |x: &State| DMatrix::from_element(1, 1, x[0].sqrt()),
        )
        .with_domain(|x| x[0] > 0.0);
        assert!(matches!(fd.eval(&v(&[-1.0])), Err(Error::Domain { .. })));
    }

    #[test]
    fn from_name_parses_all_models() {
        assert_eq!(
            BuiltInModel::from_name("sv", &[1.0, 0.5]).unwrap(),
            BuiltInModel::sv(1.0, 0.5).unwrap()
        );
        let p = [0.6, 2.5, 0.45, 0.3, 3.0, 0.35, 0.5];
        assert_eq!(BuiltInModel::from_name("cir2d", &p).unwrap(), cir());
        assert!(matches!(
            BuiltInModel::from_name("logcir2d", &p).unwrap(),
            BuiltInModel::LogCir2d(_)
        ));
        let c = BuiltInModel::from_name("constant", &[1.0, 0.2, 2.0]).unwrap();
        assert_eq!(c.dim(), 1);
        assert!(BuiltInModel::from_name("ou", &[1.0]).is_err());
        assert!(BuiltInModel::from_name("heston", &[]).is_err());
        assert!(BuiltInModel::from_name("cir2d", &[0.6, 2.5, 0.45, 0.3, 3.0, 0.35, 1.0]).is_err());
    }

    #[test]
    fn ou_transition_density_integrates_to_one() {
        let t = BuiltInModel::ou(0.5, 1.0, 0.4).unwrap().known_transition().unwrap();
        let (m, var) = ou_moments(0.5, 1.0, 0.4, 2.0, 1.0);
        let sd = var.sqrt();
        let n = 4000;
        let (lo, hi) = (m - 10.0 * sd, m + 10.0 * sd);
        let h = (hi - lo) / n as f64;
        let total: f64 = (0..=n)
            .map(|k| {
                let w = if k == 0 || k == n { 0.5 } else { 1.0 };
                w * t.density(&v(&[2.0]), &v(&[lo + k as f64 * h]), 1.0).unwrap()
            })
            .sum::<f64>()
            * h;
        assert!((total - 1.0).abs() < 1e-10);
    }
}
