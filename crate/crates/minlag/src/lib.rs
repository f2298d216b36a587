//! Numerical laboratory for minimal-lagrangian and maximal-surface geometry
//! over a fixed genus-2 hyperbolic surface.
//!
//! The pipeline is single-chart: everything lives in the Poincaré disk. A
//! cocompact octagon group pins the surface, an equivariant mesh carries the
//! discrete operators, holomorphic quadratic differentials come from truncated
//! Poincaré series, and two Newton solvers produce the harmonic/maximal
//! scalar systems from which metrics, length spectra and degeneration
//! diagnostics are derived.

pub mod hyperbolic;
pub mod lab;
pub mod mesh;
pub mod qdiff;
pub mod spectrum;
pub mod vortex;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("point not strictly inside the unit disk (|z| = {0})")]
    PointOutsideDisk(f64),
    #[error("element is elliptic or parabolic (|trace| = {0})")]
    EllipticOrParabolic(f64),
    #[error("group ball budget exceeded: {count} elements > cap {cap}")]
    BudgetExceeded { count: usize, cap: usize },
    #[error("mesh quality failure: comparison-triangle angle {angle_deg} deg < {min_deg} deg")]
    MeshQualityFailure { angle_deg: f64, min_deg: f64 },
    #[error("degenerate metric at vertex {vertex} (det = {det})")]
    DegenerateMetric { vertex: usize, det: f64 },
    #[error("truncation insufficient: equivariance residual {residual} > {tolerance} at word length {word_length}")]
    TruncationInsufficient {
        residual: f64,
        tolerance: f64,
        word_length: usize,
    },
    #[error("zero count mismatch: winding numbers sum to {found}, expected {expected}")]
    ZeroCountMismatch { found: i64, expected: i64 },
    #[error("branch tracking failure: |f| = {min_abs} below 1e-12 on segment interior")]
    BranchTrackingFailure { min_abs: f64 },
    #[error("Newton divergence: residual {residual} after {iters} damped steps")]
    NewtonDivergence { residual: f64, iters: usize },
    #[error("curve shortening stalled: gradient {grad_norm} not reduced over {iters} iterations")]
    ShorteningStalled { grad_norm: f64, iters: usize },
    #[error("near-zero denominator in second fundamental form at ({x}, {y})")]
    NearZeroDenominator { x: f64, y: f64 },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("io failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
