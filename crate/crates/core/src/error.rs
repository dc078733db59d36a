use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("unknown kernel id `{id}`; valid ids: {valid}")]
    UnknownKernel { id: String, valid: String },

    #[error("quadrature on [{lo}, {hi}] did not converge (achieved error {achieved:e})")]
    Quadrature { lo: f64, hi: f64, achieved: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("target V = {target} is {side} the attainable bound {bound}")]
    OutOfRange {
        target: f64,
        side: &'static str,
        bound: f64,
    },

    #[error("V(lambda) shape check failed: {0}")]
    Shape(String),

    #[error(
        "variance stabilization by weighting is infeasible: gamma ratio {gamma_ratio:.4} \
         exceeds V ratio {v_ratio:.4}; use the variable-bandwidth rules (b, f) instead"
    )]
    Infeasible { gamma_ratio: f64, v_ratio: f64 },

    #[error("singular local fit at x0 = {x0}: determinant {det:e} (empty or collinear window)")]
    SingularWindow { x0: f64, det: f64 },

    #[error("convex-combination component `{side}` failed: {source}")]
    Component {
        side: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("sampling exceeded {0} rejections")]
    Rejection(usize),
}

pub type Result<T> = std::result::Result<T, Error>;
