//! Fixtures shared by the benchmarks.

use cis_engine::{BuiltInModel, CirParams, RenewalRate, State};
use nalgebra::DVector;

pub fn sv() -> BuiltInModel {
    BuiltInModel::sv(1.0, 0.5).unwrap()
}

pub fn log_cir() -> BuiltInModel {
    BuiltInModel::LogCir2d(CirParams::reference())
}

pub fn sv_start() -> State {
    DVector::from_vec(vec![1.0, 0.0])
}

pub fn log_cir_point() -> State {
    DVector::from_vec(vec![2.5f64.ln(), 3.0f64.ln()])
}

pub fn rate() -> RenewalRate {
    RenewalRate::new(1.0, 0.5).unwrap()
}
