use std::fmt;

use thiserror::Error;

/// A single broken invariant found while validating user input.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    ProbabilityOutOfRange { field: String, value: f64 },
    ZeroDirectLink,
    WrongLength { field: &'static str, expected: usize, found: usize },
    AdmitWhenFull(f64),
    SelectOwnWhenEmpty(f64),
    NotNormalized(f64),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::ProbabilityOutOfRange { field, value } => {
                write!(f, "probability out of range: {field} = {value}")
            }
            Violation::ZeroDirectLink => write!(f, "f_pd must be positive"),
            Violation::WrongLength { field, expected, found } => {
                write!(f, "{field} has length {found}, expected {expected}")
            }
            Violation::AdmitWhenFull(v) => write!(f, "a_K must be 0 (got {v})"),
            Violation::SelectOwnWhenEmpty(v) => write!(f, "b_0 must be 1 (got {v})"),
            Violation::NotNormalized(s) => write!(f, "probabilities sum to {s}, expected 1"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub struct ValidationError {
    pub violations: Vec<Violation>,
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let msgs: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        write!(f, "{}", msgs.join("; "))
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(#[from] ValidationError),

    #[error("primary queue unstable: lambda_p = {lambda_p} is not below mu_p = {mu_p}")]
    UnstablePrimary { lambda_p: f64, mu_p: f64 },

    #[error("no self-consistent mu_p above lambda_p = {lambda_p}")]
    NoStableRoot { lambda_p: f64 },

    #[error("mu_p = {mu_p} outside the feasible interval [{lo}, {hi}] (lambda_p = {lambda_p})")]
    MuPOutOfRange { mu_p: f64, lambda_p: f64, lo: f64, hi: f64 },

    #[error("no feasible operating point at lambda_p = {lambda_p}")]
    Infeasible { lambda_p: f64 },

    #[error("inconsistent LP solution at state {state}: {what} = {value} exceeds pi = {pi}")]
    InconsistentSolution { state: usize, what: &'static str, value: f64, pi: f64 },

    #[error("LP solution is not optimal ({0:?})")]
    NotOptimal(crate::lp::LpStatus),

    #[error("malformed LP: {0}")]
    MalformedLp(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
