//! Numerical laboratory for measuring Hessian-Holder exponents of fully
//! nonlinear uniformly elliptic equations with rough coefficients.

pub mod flatness;
pub mod grid;
pub mod harness;
pub mod operators;
pub mod solver;
