//! Gold relevance masks by answer-preserving removal.
//!
//! Starting from the full table, columns are tried left to right and then
//! rows top to bottom. A removal is kept only if the gold query still
//! returns the full-table answer on the reduced table; a query error counts
//! as a changed answer. The last remaining column is never removed.

use serde::{Deserialize, Serialize};

use crate::error::AnnotationError;
use crate::par::Exec;
use crate::sql::{answers_equal, execute, parse_sql, SqlQuery, Value};
use crate::table::{apply_mask, ItemMask, QaInstance, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleMode {
    /// One column sweep followed by one row sweep.
    SinglePass,
    /// Sweeps repeat until a full pass removes nothing.
    #[default]
    FixedPoint,
}

impl std::str::FromStr for OracleMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "single_pass" => Ok(OracleMode::SinglePass),
            "fixed_point" => Ok(OracleMode::FixedPoint),
            other => Err(format!("unknown oracle mode '{other}'")),
        }
    }
}

impl std::fmt::Display for OracleMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OracleMode::SinglePass => "single_pass",
            OracleMode::FixedPoint => "fixed_point",
        })
    }
}

/// Removal candidate order. Only one order exists today.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RemovalOrder {
    #[default]
    LeftToRightThenTopToBottom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct OracleConfig {
    pub mode: OracleMode,
    pub order: RemovalOrder,
}

impl OracleConfig {
    pub fn new(mode: OracleMode) -> Self {
        OracleConfig {
            mode,
            order: RemovalOrder::LeftToRightThenTopToBottom,
        }
    }
}

fn answer_preserved(query: &SqlQuery, table: &Table, mask: &ItemMask, target: &Value) -> bool {
    match apply_mask(table, mask) {
        Ok(reduced) => execute(query, &reduced).is_ok_and(|v| answers_equal(&v, target)),
        Err(_) => false,
    }
}

fn parsed_gold(instance: &QaInstance) -> Result<SqlQuery, AnnotationError> {
    let sql = instance
        .gold_sql
        .as_deref()
        .ok_or_else(|| AnnotationError::MissingSql {
            id: instance.id.clone(),
        })?;
    parse_sql(sql).map_err(|source| AnnotationError::Parse {
        id: instance.id.clone(),
        source,
    })
}

/// Full-table answer of the gold query, checked against the recorded gold
/// answer when one is present.
fn full_answer(instance: &QaInstance, query: &SqlQuery, table: &Table) -> Result<Value, AnnotationError> {
    let answer = execute(query, table).map_err(|source| AnnotationError::Exec {
        id: instance.id.clone(),
        source,
    })?;
    if let Some(gold) = &instance.gold_answer {
        if !answers_equal(&answer, gold) {
            return Err(AnnotationError::AnswerMismatch {
                id: instance.id.clone(),
            });
        }
    }
    Ok(answer)
}

/// Derives the gold relevant mask for an instance.
pub fn derive_relevance(
    instance: &QaInstance,
    table: &Table,
    cfg: &OracleConfig,
) -> Result<ItemMask, AnnotationError> {
    let query = parsed_gold(instance)?;
    let target = full_answer(instance, &query, table)?;
    let mut mask = table.full_mask();
    loop {
        let mut removed = false;
        let columns: Vec<usize> = mask.columns.iter().copied().collect();
        for c in columns {
            if mask.columns.len() == 1 {
                break;
            }
            mask.columns.remove(&c);
            if answer_preserved(&query, table, &mask, &target) {
                removed = true;
            } else {
                mask.columns.insert(c);
            }
        }
        let rows: Vec<usize> = mask.rows.iter().copied().collect();
        for r in rows {
            mask.rows.remove(&r);
            if answer_preserved(&query, table, &mask, &target) {
                removed = true;
            } else {
                mask.rows.insert(r);
            }
        }
        if cfg.mode == OracleMode::SinglePass || !removed {
            return Ok(mask);
        }
    }
}

/// True iff the gold query succeeds on the masked table and its answer
/// equals the full-table answer. All failures map to false.
pub fn verify_mask(instance: &QaInstance, table: &Table, mask: &ItemMask) -> bool {
    let Ok(query) = parsed_gold(instance) else {
        return false;
    };
    let Ok(target) = execute(&query, table) else {
        return false;
    };
    answer_preserved(&query, table, mask, &target)
}

/// Annotates a corpus. Each result is the instance with its gold answer
/// materialized and its mask filled in, or the reason it was rejected.
pub fn annotate_corpus<'t>(
    instances: &[QaInstance],
    lookup: &(dyn Fn(&str) -> Option<&'t Table> + Sync),
    cfg: &OracleConfig,
    exec: Exec,
) -> Vec<Result<QaInstance, String>> {
    exec.map(instances, |_, inst| {
        let table = lookup(&inst.table_id)
            .ok_or_else(|| format!("instance {}: unknown table {}", inst.id, inst.table_id))?;
        let query = parsed_gold(inst).map_err(|e| e.to_string())?;
        let answer = full_answer(inst, &query, table).map_err(|e| e.to_string())?;
        let mask = derive_relevance(inst, table, cfg).map_err(|e| e.to_string())?;
        let mut out = inst.clone();
        out.gold_answer = Some(answer);
        out.gold_mask = Some(mask);
        Ok(out)
    })
}
