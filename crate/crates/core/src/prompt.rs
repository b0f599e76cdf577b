//! Prompt rendering for the column and row reduction stages, generation
//! parsing, budget chunking and prompting-count arithmetic.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::PromptError;
use crate::table::{normalize_name, ItemMask, Table};

const COLUMN_PREAMBLE: &str =
    "Select relevant columns from a table to answer a question. Output '@' if done generating.";
const ROW_PREAMBLE: &str =
    "Select relevant rows from a table to answer a question. Output '@' if done generating.";

/// End-of-generation marker.
pub const STOP_MARK: char = '@';

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Column,
    Row,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::Column => "column",
            Stage::Row => "row",
        })
    }
}

/// Maximum prompt length in whitespace tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBudget {
    max_tokens: usize,
}

impl PromptBudget {
    pub const MIN_TOKENS: usize = 16;

    pub fn new(max_tokens: usize) -> Result<PromptBudget, PromptError> {
        if max_tokens < Self::MIN_TOKENS {
            return Err(PromptError::BudgetTooSmall(max_tokens));
        }
        Ok(PromptBudget { max_tokens })
    }

    pub fn max_tokens(self) -> usize {
        self.max_tokens
    }
}

pub fn render_column_prompt(question: &str, table: &Table) -> String {
    format!(
        "{COLUMN_PREAMBLE} Question: {question}, List of column headers: {}",
        table.headers().join(", ")
    )
}

/// `row{X}: (col=val, col=val)` with a 1-based label.
pub fn render_row(table: &Table, row: usize) -> String {
    let cells: Vec<String> = table
        .headers()
        .iter()
        .zip(&table.rows()[row])
        .map(|(h, c)| format!("{h}={}", c.text()))
        .collect();
    format!("row{}: ({})", row + 1, cells.join(", "))
}

fn row_prompt(question: &str, rendered: &[String]) -> String {
    format!(
        "{ROW_PREAMBLE} Question: {question}, List of rows in a format 'rowX: (column name=value)': {}",
        rendered.join(", ")
    )
}

fn tokens(s: &str) -> usize {
    s.split_whitespace().count()
}

/// Renders the rows of a column-reduced table, packing them greedily in
/// order into as few prompts as fit the budget. Labels keep the row's
/// position in `column_reduced`.
pub fn render_row_prompts(
    question: &str,
    column_reduced: &Table,
    budget: PromptBudget,
) -> Result<Vec<String>, PromptError> {
    let base = tokens(&row_prompt(question, &[]));
    let mut prompts = Vec::new();
    let mut current: Vec<String> = Vec::new();
    let mut used = base;
    for r in 0..column_reduced.n_rows() {
        let row = render_row(column_reduced, r);
        // the ", " joining rows adds no whitespace token of its own
        let cost = tokens(&row);
        if base + cost > budget.max_tokens {
            return Err(PromptError::RowTooLarge {
                label: r + 1,
                tokens: base + cost,
                budget: budget.max_tokens,
            });
        }
        if used + cost > budget.max_tokens {
            prompts.push(row_prompt(question, &current));
            current.clear();
            used = base;
        }
        used += cost;
        current.push(row);
    }
    if !current.is_empty() || prompts.is_empty() {
        prompts.push(row_prompt(question, &current));
    }
    Ok(prompts)
}

/// Items named by a generation, plus how many names matched nothing.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParsedGeneration {
    pub mask: ItemMask,
    pub unknown: usize,
}

/// Lenient parse of a generation: text after the first `@` is ignored, the
/// rest is split on commas. Column names match headers case-insensitively;
/// row labels are `rowX` with X 1-based. Duplicates collapse.
pub fn parse_generation(text: &str, table: &Table, stage: Stage) -> ParsedGeneration {
    let body = text.split(STOP_MARK).next().unwrap_or("");
    let mut found = BTreeSet::new();
    let mut unknown = 0;
    for part in body.split(',') {
        let name = part.trim();
        if name.is_empty() {
            continue;
        }
        let id = match stage {
            Stage::Column => table.column_index(name),
            Stage::Row => parse_row_label(name).filter(|&r| r < table.n_rows()),
        };
        match id {
            Some(id) => {
                found.insert(id);
            }
            None => unknown += 1,
        }
    }
    let mask = match stage {
        Stage::Column => ItemMask { columns: found, rows: BTreeSet::new() },
        Stage::Row => ItemMask { columns: BTreeSet::new(), rows: found },
    };
    ParsedGeneration { mask, unknown }
}

fn parse_row_label(name: &str) -> Option<usize> {
    let lower = normalize_name(name);
    let digits = lower.strip_prefix("row")?.trim();
    let n: usize = digits.parse().ok()?;
    n.checked_sub(1)
}

/// Serializes one side of a mask as a generation string ending in `@`.
pub fn render_generation(mask: &ItemMask, table: &Table, stage: Stage) -> String {
    let names: Vec<String> = match stage {
        Stage::Column => mask.columns.iter().map(|&c| table.headers()[c].clone()).collect(),
        Stage::Row => mask.rows.iter().map(|&r| format!("row{}", r + 1)).collect(),
    };
    if names.is_empty() {
        STOP_MARK.to_string()
    } else {
        format!("{} {STOP_MARK}", names.join(", "))
    }
}

/// Number of prompts needed with `n_cols × n_rows` as the token proxy;
/// a reduced table costs one extra prompt for the column stage.
pub fn prompt_count(n_cols: usize, n_rows: usize, budget: PromptBudget, reduced: bool) -> usize {
    (n_cols * n_rows).div_ceil(budget.max_tokens) + usize::from(reduced)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t1() -> Table {
        Table::from_strings(
            "t1",
            &["year", "city"],
            &[&["2000", "sydney"], &["2004", "athens"], &["2008", "beijing"]],
        )
    }

    #[test]
    fn column_prompt() {
        let t = Table::from_strings("t", &["a", "b"], &[]);
        assert_eq!(
            render_column_prompt("q?", &t),
            "Select relevant columns from a table to answer a question. Output '@' if done generating. Question: q?, List of column headers: a, b"
        );
        assert!(render_column_prompt("", &t).contains("Question: , List"));
    }

    #[test]
    fn twenty_five_headers_in_one_prompt() {
        let headers: Vec<String> = (0..25).map(|i| format!("h{i}")).collect();
        let refs: Vec<&str> = headers.iter().map(|s| s.as_str()).collect();
        let t = Table::from_strings("t", &refs, &[]);
        let p = render_column_prompt("q", &t);
        assert!(p.ends_with(&headers.join(", ")));
    }

    #[test]
    fn rows_in_one_prompt() {
        let t = Table::from_strings("t", &["a", "b"], &[&["1", "x"], &["2", "y"]]);
        let ps = render_row_prompts("q?", &t, PromptBudget::new(512).unwrap()).unwrap();
        assert_eq!(ps.len(), 1);
        assert!(ps[0].ends_with(": row1: (a=1, b=x), row2: (a=2, b=y)"));
    }

    #[test]
    fn budget_splits_after_first_row() {
        let t = Table::from_strings("t", &["a", "b"], &[&["1", "x"], &["2", "y"]]);
        let base = tokens(&row_prompt("q?", &[]));
        // each row renders as "rowN: (a=V, b=W)" = 3 tokens
        let ps = render_row_prompts("q?", &t, PromptBudget::new(base + 3).unwrap()).unwrap();
        assert_eq!(ps.len(), 2);
        assert!(ps[0].ends_with(": row1: (a=1, b=x)"));
        assert!(ps[1].ends_with(": row2: (a=2, b=y)"));
        for p in &ps {
            assert!(tokens(p) <= base + 3);
        }
        let err = render_row_prompts("q?", &t, PromptBudget::new(base + 2).unwrap()).unwrap_err();
        assert_eq!(err, PromptError::RowTooLarge { label: 1, tokens: base + 3, budget: base + 2 });
    }

    #[test]
    fn zero_rows_give_one_prompt() {
        let t = Table::from_strings("t", &["a"], &[]);
        let ps = render_row_prompts("q", &t, PromptBudget::new(64).unwrap()).unwrap();
        assert_eq!(ps.len(), 1);
        assert!(ps[0].ends_with("(column name=value)': "));
    }

    #[test]
    fn parse_examples() {
        let t = t1();
        let p = parse_generation("year, city @", &t, Stage::Column);
        assert_eq!(p.mask.columns, BTreeSet::from([0, 1]));
        assert_eq!(p.unknown, 0);
        assert_eq!(parse_generation("@", &t, Stage::Column), ParsedGeneration::default());
        let p = parse_generation("year, bogus @", &t, Stage::Column);
        assert_eq!(p.mask.columns, BTreeSet::from([0]));
        assert_eq!(p.unknown, 1);
        let p = parse_generation("row2, ROW3, row2, row9 @ row1", &t, Stage::Row);
        assert_eq!(p.mask.rows, BTreeSet::from([1, 2]));
        assert_eq!(p.unknown, 1);
    }

    #[test]
    fn prompt_counts() {
        let l = PromptBudget::new(512).unwrap();
        assert_eq!(prompt_count(25, 100, l, false), 5);
        assert_eq!(prompt_count(3, 100, l, true), 2);
        assert_eq!(prompt_count(16, 32, l, false), 1);
        assert!(PromptBudget::new(15).is_err());
    }
}
