//! Learned context reduction for table question answering.
//!
//! A gold relevance oracle derives the rows and columns a question needs by
//! removing items while the gold SQL keeps its answer. Two item-level
//! policies (columns, then rows of the column-reduced table) are trained on
//! those masks with a supervised objective and then refined with a
//! KL-penalized clipped policy-gradient update under top-p action masking.
//! The evaluation harness scores reductions by recall/precision and by a
//! simulated budget-limited downstream answerer.

pub mod cli;
pub mod config;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod oracle;
pub mod par;
pub mod policy;
pub mod prompt;
pub mod reward;
pub mod sql;
pub mod table;
pub mod train;

pub use corpus::Corpus;
pub use error::*;
pub use par::Exec;
pub use sql::{answers_equal, execute, parse_sql, SqlQuery, Value};
pub use table::{apply_mask, load_table, token_count, Cell, ItemMask, QaInstance, Table, TableFormat};
