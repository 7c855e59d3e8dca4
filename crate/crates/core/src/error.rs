use thiserror::Error;

/// Everything that can go wrong while loading data or estimating.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error in {path}: {message}")]
    Csv { path: String, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing column `{column}` in {path}")]
    MissingColumn { path: String, column: String },

    #[error("non-finite or unparseable value `{value}` in {path}, row {row}, column `{column}`")]
    NonFinite {
        path: String,
        row: usize,
        column: String,
        value: String,
    },

    #[error("negative share {value} for unit `{unit}`, period `{period}`, sector `{sector}`")]
    NegativeShare {
        unit: String,
        period: String,
        sector: String,
        value: f64,
    },

    #[error("shares for unit `{unit}`, period `{period}` sum to {sum}, above 1")]
    ShareSumExceeded {
        unit: String,
        period: String,
        sum: f64,
    },

    #[error("sector code `{code}` has no matching {missing_in}")]
    UnmatchedSector { code: String, missing_in: String },

    #[error("duplicate observation for unit `{unit}`, period `{period}`")]
    DuplicateObservation { unit: String, period: String },

    #[error("unbalanced panel: unit `{unit}` has no row for period `{period}`")]
    Unbalanced { unit: String, period: String },

    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("aggregation to {level} digits impossible: sector code `{code}` is shorter")]
    AggregationLevel { level: usize, code: String },

    #[error("singular design (condition number {condition:.3e}); offending columns: {columns:?}")]
    SingularDesign { condition: f64, columns: Vec<String> },

    #[error("degenerate instrument: weighted first-stage covariance {cov:.3e} is numerically zero")]
    DegenerateInstrument { cov: f64 },

    #[error("singular Gram matrix at period {period}: use a positive ridge penalty")]
    SingularGram { period: usize },

    #[error("rank-deficient projection matrix")]
    RankDeficient,

    #[error("need at least {needed} clusters, found {found}")]
    TooFewClusters { needed: usize, found: usize },

    #[error("every moment has zero estimated variance")]
    AllMomentsDegenerate,

    #[error("need at least {needed} periods, found {found}")]
    TooFewPeriods { needed: usize, found: usize },

    #[error("zero denominator: {0}")]
    ZeroDenominator(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

impl Error {
    /// `true` for failures that come from the numbers rather than the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SingularDesign { .. }
                | Error::DegenerateInstrument { .. }
                | Error::SingularGram { .. }
                | Error::RankDeficient
                | Error::AllMomentsDegenerate
                | Error::ZeroDenominator(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
