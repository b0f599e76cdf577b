use std::path::PathBuf;

/// Errors raised while loading tables and instance files.
#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error in {path}: {message}")]
    Csv { path: PathBuf, message: String },
    #[error("{path}: missing header row")]
    MissingHeader { path: PathBuf },
    #[error("{path}: header cell {column} is empty")]
    EmptyHeader { path: PathBuf, column: usize },
    #[error("{path}: data row {row} has {found} cells, expected {expected}")]
    RaggedRow {
        path: PathBuf,
        /// 1-based index among data rows.
        row: usize,
        found: usize,
        expected: usize,
    },
    #[error("{path}:{line}: bad instance record: {message}")]
    Instance {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

/// Errors raised when materializing a reduced table.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MaskError {
    #[error("mask must keep at least one column")]
    NoColumns,
    #[error("column id {id} out of bounds for {len} columns")]
    ColumnOutOfBounds { id: usize, len: usize },
    #[error("row id {id} out of bounds for {len} rows")]
    RowOutOfBounds { id: usize, len: usize },
}

/// SQL parse failures. Offsets are byte offsets into the query text.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown function '{name}' at offset {offset}")]
    UnknownFunction { offset: usize, name: String },
}

impl ParseError {
    pub fn offset(&self) -> usize {
        match self {
            ParseError::Syntax { offset, .. } | ParseError::UnknownFunction { offset, .. } => *offset,
        }
    }
}

/// SQL execution failures, distinct from an empty result.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExecError {
    #[error("unknown column '{0}'")]
    UnknownColumn(String),
    #[error("type mismatch: {0}")]
    TypeMismatch(String),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AnnotationError {
    #[error("instance {id} has no gold sql")]
    MissingSql { id: String },
    #[error("instance {id}: {source}")]
    Parse {
        id: String,
        #[source]
        source: ParseError,
    },
    #[error("instance {id}: full-table execution failed: {source}")]
    Exec {
        id: String,
        #[source]
        source: ExecError,
    },
    #[error("instance {id}: full-table answer does not match the gold answer")]
    AnswerMismatch { id: String },
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RewardError {
    #[error("empty action distribution")]
    EmptyDistribution,
    #[error("invalid probability distribution: {0}")]
    InvalidDistribution(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("row{label} needs {tokens} tokens, over the budget of {budget}")]
    RowTooLarge {
        label: usize,
        tokens: usize,
        budget: usize,
    },
    #[error("prompt budget must be at least 16 tokens, got {0}")]
    BudgetTooSmall(usize),
}

#[derive(Debug, thiserror::Error)]
pub enum PolicyError {
    #[error("empty trajectory batch")]
    EmptyBatch,
    #[error("policy stage mismatch: expected {expected}, got {found}")]
    StageMismatch { expected: String, found: String },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("instances reference unknown tables: {0:?}")]
    DanglingTables(Vec<String>),
    #[error("bucket edges must be strictly increasing")]
    BadBuckets,
    #[error("invalid corpus parameters: {0}")]
    BadCorpusParams(String),
}
