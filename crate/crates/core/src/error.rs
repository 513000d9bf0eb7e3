use thiserror::Error;

/// Errors surfaced by the solver library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    Model(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("simulation failure at path {path}, step {step}: {detail}")]
    Simulation {
        path: usize,
        step: usize,
        detail: String,
    },

    #[error("underdetermined regression: {samples} samples for {basis} basis functions")]
    Underdetermined { samples: usize, basis: usize },

    #[error("regression failure: {0}")]
    Regression(String),

    #[error("regime not in control grid: {0:?}")]
    RegimeOffGrid(Vec<f64>),

    #[error("implicit step did not converge at step {step} (x = {x:?}, a = {a:?}, last iterates {last:?})")]
    ImplicitDiverged {
        step: usize,
        x: Vec<f64>,
        a: Vec<f64>,
        last: [f64; 2],
    },

    #[error("backward scheme failure at step {step}: {source}")]
    Scheme {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("finite-difference oracle: {0}")]
    Oracle(String),

    #[error("rate fit needs at least 3 positive (modulus, error) pairs, got {0}")]
    RateFit(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
