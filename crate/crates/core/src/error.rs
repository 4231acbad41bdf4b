use std::fmt;
use std::path::PathBuf;

/// Pipeline stage that produced an error, used to label failures from
/// [`crate::drma_test`] and the bootstrap.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Standardize,
    NullFit,
    DimensionReduction,
    Statistic,
    Bootstrap,
    Simulation,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Standardize => "standardize",
            Stage::NullFit => "null-model fit",
            Stage::DimensionReduction => "dimension reduction",
            Stage::Statistic => "test statistic",
            Stage::Bootstrap => "bootstrap",
            Stage::Simulation => "simulation",
        };
        f.write_str(name)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DrmaError {
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("non-numeric cell {value:?} in column {column:?} (row {row})")]
    NonNumeric { column: String, row: usize, value: String },
    #[error("column {0:?} not found")]
    MissingColumn(String),
    #[error("need at least {needed} complete rows, found {found}")]
    TooFewRows { needed: usize, found: usize },
    #[error("column {column} ({name:?}) has zero variance")]
    ZeroVariance { column: usize, name: String },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("design matrix is rank deficient (condition number {condition:.3e})")]
    RankDeficient { condition: f64 },
    #[error("singular matrix: {0}")]
    Singular(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("eigen-decomposition failed: {0}")]
    Eigen(String),
    #[error("{failed} of {total} replicates failed (limit {limit_pct}%)")]
    TooManyFailures {
        failed: usize,
        total: usize,
        limit_pct: u32,
    },
    #[error("{stage} failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<DrmaError>,
    },
}

impl DrmaError {
    pub fn at(self, stage: Stage) -> Self {
        match self {
            already @ DrmaError::Stage { .. } => already,
            other => DrmaError::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }

    /// True for problems with the input data or arguments, false for
    /// numerical failures inside an estimator.
    pub fn is_data_error(&self) -> bool {
        match self {
            DrmaError::FileNotFound(_)
            | DrmaError::Io(_)
            | DrmaError::Csv(_)
            | DrmaError::NonNumeric { .. }
            | DrmaError::MissingColumn(_)
            | DrmaError::TooFewRows { .. }
            | DrmaError::ZeroVariance { .. }
            | DrmaError::InvalidInput(_) => true,
            DrmaError::RankDeficient { .. }
            | DrmaError::Singular(_)
            | DrmaError::NonFinite(_)
            | DrmaError::Eigen(_)
            | DrmaError::TooManyFailures { .. } => false,
            DrmaError::Stage { source, .. } => source.is_data_error(),
        }
    }
}

pub type Result<T> = std::result::Result<T, DrmaError>;
