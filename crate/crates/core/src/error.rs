use thiserror::Error;

/// Errors raised by the numerical kernels.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Invalid process or experiment parameters.
    #[error("configuration error: {0}")]
    Config(String),

    /// Invalid arguments to an operation (lengths, ranges, mismatched settings).
    #[error("argument error: {0}")]
    Argument(String),

    /// The rotation frame degenerates at a Krein collision (k = 0 or pi).
    #[error("singular rotation frame at k = {k} (sin k = 0); use the band-edge frame")]
    SingularFrame { k: f64 },

    /// A diffusion coefficient or kernel that should be nondegenerate is not.
    #[error("degenerate problem: {0}")]
    Degenerate(String),

    /// A series or bilinear form does not converge for the declared mixing profile.
    #[error("divergent: {0}")]
    Divergent(String),

    /// The wave packet reached the wall of the finite box.
    #[error(
        "box too small: probability {edge_mass:.3e} within the wall layer at t = {time:.3}; try L >= {suggested_size}"
    )]
    BoxTooSmall {
        edge_mass: f64,
        time: f64,
        suggested_size: usize,
    },

    /// A numerical routine failed (no convergence, non-finite values).
    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;
