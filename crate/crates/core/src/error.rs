use std::fmt;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Where in a parareal run a numerical failure happened.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BlowUpSite {
    pub substep: usize,
    pub window: Option<usize>,
    pub iteration: Option<usize>,
}

impl fmt::Display for BlowUpSite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "substep {}", self.substep)?;
        if let Some(window) = self.window {
            write!(f, ", window {window}")?;
        }
        if let Some(iteration) = self.iteration {
            write!(f, ", parareal iteration {iteration}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found} ({what})")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("index range {n_init}..={n_final} invalid for a trajectory with {len} nodes")]
    Range {
        n_init: usize,
        n_final: usize,
        len: usize,
    },
    #[error("outside the potential's domain: {0}")]
    Domain(String),
    #[error("numerical blow-up at {0}")]
    BlowUp(BlowUpSite),
    #[error("minimization from start point {start:?} did not converge in {iterations} iterations")]
    Convergence { start: Vec<f64>, iterations: usize },
    #[error("temperature schedule infeasible: coefficient C_{index} = {value} is not positive")]
    InfeasibleSchedule { index: usize, value: f64 },
    #[error("relative error undefined: reference positions sum to zero on nodes {n_init}..={n_final}")]
    DegenerateNormalization { n_init: usize, n_final: usize },
    #[error("time slab starting at node {n_init} shortened to zero windows")]
    SlabCollapse { n_init: usize },
    #[error("malformed slab records: {0}")]
    SlabValidation(String),
    #[error("gain undefined: total iteration count is zero")]
    UndefinedGain,
    #[error("insufficient data: need at least {needed} completed events, found {found}")]
    InsufficientData { needed: usize, found: usize },
    #[error("{0}")]
    Csv(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Attaches the window index to a blow-up error; other errors pass through.
    pub fn in_window(self, window: usize) -> Self {
        match self {
            Error::BlowUp(site) => Error::BlowUp(BlowUpSite {
                window: Some(window),
                ..site
            }),
            other => other,
        }
    }

    pub fn at_iteration(self, iteration: usize) -> Self {
        match self {
            Error::BlowUp(site) => Error::BlowUp(BlowUpSite {
                iteration: Some(iteration),
                ..site
            }),
            other => other,
        }
    }
}
