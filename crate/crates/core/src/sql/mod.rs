//! Single-table SQL subset: parsing, execution and answer equality.
//!
//! ```text
//! SELECT <column | fn(column) | count(*)> [FROM name]
//!   [WHERE column op literal [AND ...]]
//!   [ORDER BY column [ASC | DESC]] [LIMIT n]
//! ```
//!
//! `fn` is one of count, sum, avg, min, max; `op` is one of
//! `= != <> < <= > >= CONTAINS` (plus the unicode forms `≠ ≤ ≥`).

mod exec;
mod parser;
mod value;

pub use exec::execute;
pub use parser::{parse_sql, AggFunc, CmpOp, Literal, OrderBy, Predicate, Projection, SqlQuery};
pub use value::{answers_equal, Value, NUMERIC_TOLERANCE};

use crate::error::ExecError;
use crate::table::Table;

/// Parses and executes in one step.
pub fn run_sql(sql: &str, table: &Table) -> Result<Value, QueryError> {
    let q = parse_sql(sql)?;
    Ok(execute(&q, table)?)
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum QueryError {
    #[error(transparent)]
    Parse(#[from] crate::error::ParseError),
    #[error(transparent)]
    Exec(#[from] ExecError),
}
