use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// A single offending input row, reported by schema validation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowIssue {
    /// 1-based data row number (the header is row 0).
    pub row: usize,
    pub message: String,
}

impl std::fmt::Display for RowIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "row {}: {}", self.row, self.message)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter out of domain: {0}")]
    ParameterDomain(String),

    #[error("invalid sampling design: {0}")]
    Design(String),

    #[error("dataset has {missing} unit(s) with missing x")]
    Incomplete { missing: usize },

    #[error("covariate arity mismatch: {0}")]
    Arity(String),

    #[error("division by zero nonresponse rate")]
    DivisionDomain,

    #[error("margin is infeasible: implied probability {0} lies outside [0, 1]")]
    InfeasibleMargin(f64),

    #[error("empty truncation interval ({lower}, {upper})")]
    EmptyInterval { lower: f64, upper: f64 },

    #[error("design matrix is rank deficient")]
    SingularDesign,

    #[error("probit fit diverged (coefficient norm {norm:.1}); data appear separated")]
    Separation { norm: f64 },

    #[error("stratum {stratum} has {draws} sampled unit(s); variance needs at least 2")]
    VarianceUndefined { stratum: u32, draws: usize },

    #[error("cannot combine {0} imputation(s); need at least 2")]
    DegenerateCombination(usize),

    #[error("invalid chain settings: {0}")]
    Settings(String),

    #[error("{} schema violation(s): {}", .0.len(), summarize_rows(.0))]
    Schema(Vec<RowIssue>),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// A sampler failed; `context` identifies the chain and its seed.
    #[error("{context}: {source}")]
    Chain {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn summarize_rows(rows: &[RowIssue]) -> String {
    rows.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}
