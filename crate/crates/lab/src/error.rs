use serde::Serialize;
use spatial_coalescent::Error as CoreError;

pub type LabResult<T> = Result<T, LabError>;

#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Validation(Vec<String>),
    #[error("{0}")]
    Invalid(String),
    #[error("reference law unstable: {0}")]
    TruncationUnstable(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("serialisation error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// Machine-readable error record written on failure.
#[derive(Debug, Serialize)]
pub struct ErrorReport {
    pub error: &'static str,
    pub exit_code: i32,
    pub message: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub violations: Vec<String>,
}

impl LabError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        LabError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Short upper-case tag of the error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            LabError::Core(e) => match e {
                CoreError::ToleranceNotMet { .. } => "TOLERANCE_NOT_MET",
                CoreError::InvalidMeasure(_) | CoreError::ZeroMeasure => "VALIDATION_ERROR",
                CoreError::ZeroTotalRate { .. } => "ZERO_TOTAL_RATE",
                CoreError::ZeroRate { .. } => "ZERO_RATE",
                CoreError::InvalidArgument(_) | CoreError::InvalidGeography(_) | CoreError::InvalidPartition(_) => {
                    "VALIDATION_ERROR"
                }
                CoreError::SizeOverflow { .. } => "SIZE_OVERFLOW",
                CoreError::DimensionTooLow(_) => "DIMENSION_TOO_LOW",
                CoreError::GroundSetMismatch(..) => "GROUND_SET_MISMATCH",
                CoreError::ZeroRateDeadlock { .. } => "ZERO_RATE_DEADLOCK",
                CoreError::BudgetExceeded { .. } => "BUDGET_EXCEEDED",
                CoreError::IncompatibleVariants(_) => "INCOMPATIBLE_VARIANTS",
            },
            LabError::Parse { .. } => "PARSE_ERROR",
            LabError::Validation(_) | LabError::Invalid(_) => "VALIDATION_ERROR",
            LabError::TruncationUnstable(_) => "TRUNCATION_UNSTABLE",
            LabError::Io { .. } => "IO_ERROR",
            LabError::Json(_) | LabError::Csv(_) => "SERIALISATION_ERROR",
        }
    }

    /// Process exit code: 2 validation, 3 budget, 4 anything else.
    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            "PARSE_ERROR" | "VALIDATION_ERROR" | "SIZE_OVERFLOW" | "DIMENSION_TOO_LOW" | "INCOMPATIBLE_VARIANTS" => 2,
            "BUDGET_EXCEEDED" => 3,
            _ => 4,
        }
    }

    pub fn report(&self) -> ErrorReport {
        ErrorReport {
            error: self.kind(),
            exit_code: self.exit_code(),
            message: self.to_string(),
            violations: match self {
                LabError::Validation(v) => v.clone(),
                _ => Vec::new(),
            },
        }
    }
}
