use std::fmt;

use thiserror::Error;

/// A single violated invariant found while validating an MDP.
#[derive(Debug, Clone, PartialEq)]
pub enum MdpIssue {
    Shape(String),
    NonStochasticRow { state: usize, action: usize, sum: f64 },
    NegativeProbability { state: usize, action: usize, next: usize, value: f64 },
    NonFinite(String),
    BadDiscount(f64),
    BadInitialDist(String),
    NoAvailableAction(usize),
}

impl fmt::Display for MdpIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MdpIssue::Shape(msg) => write!(f, "shape: {msg}"),
            MdpIssue::NonStochasticRow { state, action, sum } => {
                write!(f, "NonStochasticRow(s={state}, a={action}): row sums to {sum}")
            }
            MdpIssue::NegativeProbability { state, action, next, value } => {
                write!(f, "negative probability P[{state}][{action}][{next}] = {value}")
            }
            MdpIssue::NonFinite(field) => write!(f, "non-finite value in {field}"),
            MdpIssue::BadDiscount(g) => write!(f, "BadDiscount: gamma = {g} is outside [0, 1)"),
            MdpIssue::BadInitialDist(msg) => write!(f, "BadInitialDist: {msg}"),
            MdpIssue::NoAvailableAction(s) => write!(f, "state {s} has no available action"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid MDP: {}", join_issues(.0))]
    InvalidMdp(Vec<MdpIssue>),

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("empty action set at state {0}")]
    EmptyActionSet(usize),

    #[error("value iteration did not converge: residual {residual:e} after {iterations} iterations")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("singular linear system")]
    SingularSystem,

    #[error("degenerate occupancy denominator {value:e} at (s={state}, a={action})")]
    DegenerateDenominator { state: usize, action: usize, value: f64 },

    #[error("QP solver did not reach tolerance: primal {primal:e}, dual {dual:e} after {iterations} iterations")]
    SolverDiverged { iterations: usize, primal: f64, dual: f64 },

    #[error("MDP is not special (transitions depend on the action)")]
    NotSpecial,

    #[error("no admissible action at visited state {0}")]
    NoAdmissibleAction(usize),

    #[error("no admissible policy exists")]
    NoAdmissiblePolicy,

    #[error("{count} policies exceed the enumeration cap {cap}")]
    TooManyPolicies { count: u128, cap: u128 },

    #[error("bad grid spec: {0}")]
    BadSpec(String),

    #[error("subset {index} does not have exactly three distinct elements in range")]
    SubsetArityError { index: usize },

    #[error("reduction would need {states} states, above the cap of {cap}")]
    InstanceTooLarge { states: f64, cap: usize },

    #[error("not an exact cover: {0}")]
    NotAnExactCover(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("I/O error on {path}: {source}")]
    Io { path: String, source: std::io::Error },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

fn join_issues(issues: &[MdpIssue]) -> String {
    issues.iter().map(|i| i.to_string()).collect::<Vec<_>>().join("; ")
}

impl Error {
    /// True for errors caused by bad input rather than by a numerical failure.
    pub fn is_input_error(&self) -> bool {
        !matches!(
            self,
            Error::NoConvergence { .. }
                | Error::SingularSystem
                | Error::DegenerateDenominator { .. }
                | Error::SolverDiverged { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
