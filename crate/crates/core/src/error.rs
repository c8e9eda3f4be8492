// Copyright 2026 the finsler-quant Authors
// SPDX-License-Identifier: Apache-2.0

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input is not convex: second difference {second_difference:e} at node {node}")]
    NonConvexInput { node: usize, second_difference: f64 },

    #[error("difference quotient {slope} at node {node} leaves [0, 1]")]
    SlopeOutOfRange { node: usize, slope: f64 },

    #[error("quadrature underflow: no mass on the grid for coefficient {coefficient}")]
    QuadratureUnderflow { coefficient: usize },

    #[error("hermitian form is singular or not positive definite")]
    SingularForm,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("finsler metric vanishes on a nonzero covector")]
    ZeroEvaluation,

    #[error("no subsolution: {0}")]
    NoSubsolution(String),

    #[error("iteration limit {iterations} reached with residual {residual:e}")]
    MaxIterExceeded { iterations: usize, residual: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("background strength insufficient: margin {margin:e} along direction {direction:?}")]
    InsufficientStrength { direction: Vec<isize>, margin: f64 },

    #[error("boundary slice at base node {node} is not fiberwise psh (margin {margin:e})")]
    BoundaryNotPsh { node: usize, margin: f64 },

    #[error("boundary slice at base node {node} is not fiberwise a norm (margin {margin:e})")]
    BoundaryNotNorm { node: usize, margin: f64 },

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("i/o failure: {0}")]
    IoFailure(#[from] std::io::Error),

    #[error("csv failure: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
