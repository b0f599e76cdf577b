use std::cmp::Ordering;

use super::parser::{AggFunc, CmpOp, Literal, Projection, SqlQuery};
use super::value::{answers_equal, Value};
use crate::error::ExecError;
use crate::table::{Cell, Table};

fn resolve(table: &Table, name: &str) -> Result<usize, ExecError> {
    table
        .column_index(name)
        .ok_or_else(|| ExecError::UnknownColumn(name.to_string()))
}

fn literal_value(lit: &Literal) -> Value {
    match lit {
        Literal::Number(n) => Value::Number(*n),
        Literal::Text(s) => Value::Text(s.clone()),
    }
}

/// Empty cells never satisfy a predicate. Ordering operators need a numeric
/// literal and a numeric cell; anything else is a type mismatch.
fn matches(cell: &Cell, op: CmpOp, lit: &Literal) -> Result<bool, ExecError> {
    if op.is_ordering() {
        let Literal::Number(bound) = lit else {
            return Err(ExecError::TypeMismatch(format!(
                "'{}' needs a numeric literal",
                op.symbol()
            )));
        };
        return match cell {
            Cell::Empty => Ok(false),
            Cell::Text(t) => Err(ExecError::TypeMismatch(format!(
                "'{}' applied to text cell '{t}'",
                op.symbol()
            ))),
            Cell::Number { value, .. } => Ok(match op {
                CmpOp::Lt => *value < *bound,
                CmpOp::Le => *value <= *bound,
                CmpOp::Gt => *value > *bound,
                _ => *value >= *bound,
            }),
        };
    }
    if cell.is_empty() {
        return Ok(false);
    }
    Ok(match op {
        CmpOp::Eq => answers_equal(&cell.to_value(), &literal_value(lit)),
        CmpOp::Ne => !answers_equal(&cell.to_value(), &literal_value(lit)),
        CmpOp::Contains => cell
            .text()
            .to_lowercase()
            .contains(&lit.text().to_lowercase()),
        _ => unreachable!("ordering handled above"),
    })
}

/// Sort order for ORDER BY: numbers before text, text case-folded, empty
/// cells last regardless of direction.
fn compare_cells(a: &Cell, b: &Cell, descending: bool) -> Ordering {
    let rank = |c: &Cell| match c {
        Cell::Number { .. } => 0,
        Cell::Text(_) => 1,
        Cell::Empty => 2,
    };
    match (a, b) {
        (Cell::Empty, Cell::Empty) => Ordering::Equal,
        (Cell::Empty, _) => Ordering::Greater,
        (_, Cell::Empty) => Ordering::Less,
        _ => {
            let ord = match (a, b) {
                (Cell::Number { value: x, .. }, Cell::Number { value: y, .. }) => {
                    x.partial_cmp(y).unwrap_or(Ordering::Equal)
                }
                (Cell::Text(x), Cell::Text(y)) => x.to_lowercase().cmp(&y.to_lowercase()),
                _ => rank(a).cmp(&rank(b)),
            };
            if descending {
                ord.reverse()
            } else {
                ord
            }
        }
    }
}

fn aggregate(func: AggFunc, cells: &[&Cell]) -> Result<Value, ExecError> {
    let present: Vec<&Cell> = cells.iter().copied().filter(|c| !c.is_empty()).collect();
    if func == AggFunc::Count {
        return Ok(Value::Number(present.len() as f64));
    }
    if present.is_empty() {
        return Ok(Value::Empty);
    }
    let numbers: Vec<f64> = present.iter().filter_map(|c| c.as_number()).collect();
    let all_numeric = numbers.len() == present.len();
    match func {
        AggFunc::Sum | AggFunc::Avg => {
            if !all_numeric {
                return Err(ExecError::TypeMismatch(format!(
                    "{} over non-numeric cells",
                    func.name()
                )));
            }
            let sum: f64 = numbers.iter().sum();
            Ok(Value::Number(if func == AggFunc::Sum {
                sum
            } else {
                sum / numbers.len() as f64
            }))
        }
        AggFunc::Min | AggFunc::Max => {
            if all_numeric {
                let pick = numbers.iter().copied().reduce(|a, b| {
                    if (func == AggFunc::Min && b < a) || (func == AggFunc::Max && b > a) {
                        b
                    } else {
                        a
                    }
                });
                return Ok(Value::Number(pick.expect("non-empty")));
            }
            if !numbers.is_empty() {
                return Err(ExecError::TypeMismatch(format!(
                    "{} over mixed number and text cells",
                    func.name()
                )));
            }
            let mut best = present[0];
            for c in &present[1..] {
                let ord = c.text().to_lowercase().cmp(&best.text().to_lowercase());
                if (func == AggFunc::Min && ord == Ordering::Less)
                    || (func == AggFunc::Max && ord == Ordering::Greater)
                {
                    best = c;
                }
            }
            Ok(best.to_value())
        }
        AggFunc::Count => unreachable!(),
    }
}

/// Executes a parsed query: filter by the conjunction of predicates, stable
/// ORDER BY, LIMIT, then project or aggregate.
///
/// A projection over one row collapses to a scalar and over zero rows to
/// [`Value::Empty`]. Projected lists that mix numbers and text render the
/// numbers as text so lists stay homogeneous.
pub fn execute(query: &SqlQuery, table: &Table) -> Result<Value, ExecError> {
    for name in query.columns() {
        resolve(table, name)?;
    }
    let preds: Vec<(usize, CmpOp, &Literal)> = query
        .predicates
        .iter()
        .map(|p| Ok((resolve(table, &p.column)?, p.op, &p.literal)))
        .collect::<Result<_, ExecError>>()?;

    let mut kept: Vec<usize> = Vec::new();
    for (r, row) in table.rows().iter().enumerate() {
        // every predicate is evaluated so type errors do not depend on order
        let mut all = true;
        for &(c, op, lit) in &preds {
            all &= matches(&row[c], op, lit)?;
        }
        if all {
            kept.push(r);
        }
    }

    if let Some(order) = &query.order_by {
        let c = resolve(table, &order.column)?;
        kept.sort_by(|&a, &b| compare_cells(table.cell(a, c), table.cell(b, c), order.descending));
    }
    if let Some(n) = query.limit {
        kept.truncate(n);
    }

    match &query.projection {
        Projection::Column(name) => {
            let c = resolve(table, name)?;
            let mut values: Vec<Value> = kept.iter().map(|&r| table.cell(r, c).to_value()).collect();
            Ok(match values.len() {
                0 => Value::Empty,
                1 => values.pop().expect("one value"),
                _ => {
                    let has_text = values.iter().any(|v| matches!(v, Value::Text(_)));
                    if has_text {
                        for (v, &r) in values.iter_mut().zip(&kept) {
                            if matches!(v, Value::Number(_)) {
                                *v = Value::Text(table.cell(r, c).text().to_string());
                            }
                        }
                    }
                    Value::List(values)
                }
            })
        }
        Projection::Aggregate { func, column } => match column {
            None => Ok(Value::Number(kept.len() as f64)),
            Some(name) => {
                let c = resolve(table, name)?;
                let cells: Vec<&Cell> = kept.iter().map(|&r| table.cell(r, c)).collect();
                aggregate(*func, &cells)
            }
        },
    }
}
