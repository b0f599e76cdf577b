//! Reduction metrics, the budget-limited downstream answerer, token-bucketed
//! reports and corpus statistics.

use std::collections::BTreeSet;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{EvalError, LoadError};
use crate::par::Exec;
use crate::policy::{reduce_instance, Policy};
use crate::prompt::{render_row, PromptBudget};
use crate::sql::{answers_equal, run_sql, Value};
use crate::table::{apply_mask, token_count, Cell, ItemMask, QaInstance, Table};

#[cfg(feature = "remote")]
pub mod remote;
pub mod synth;

pub use synth::{generate_synthetic_corpus, SynthConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SideScores {
    pub recall: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskScores {
    pub columns: SideScores,
    pub rows: SideScores,
}

/// Recall is 1 for an empty gold set; precision is 1 for an empty prediction.
pub fn set_scores<T: Ord>(predicted: &BTreeSet<T>, gold: &BTreeSet<T>) -> SideScores {
    let hit = predicted.intersection(gold).count() as f64;
    SideScores {
        recall: if gold.is_empty() { 1.0 } else { hit / gold.len() as f64 },
        precision: if predicted.is_empty() { 1.0 } else { hit / predicted.len() as f64 },
    }
}

pub fn recall_precision(predicted: &ItemMask, gold: &ItemMask) -> MaskScores {
    MaskScores {
        columns: set_scores(&predicted.columns, &gold.columns),
        rows: set_scores(&predicted.rows, &gold.rows),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReductionResult {
    pub instance_id: String,
    pub predicted: ItemMask,
    pub gold: ItemMask,
    pub original_tokens: usize,
    pub scores: MaskScores,
}

impl ReductionResult {
    pub fn new(instance_id: impl Into<String>, predicted: ItemMask, gold: ItemMask, original_tokens: usize) -> Self {
        let scores = recall_precision(&predicted, &gold);
        ReductionResult {
            instance_id: instance_id.into(),
            predicted,
            gold,
            original_tokens,
            scores,
        }
    }
}

/// Corpus-level recall and precision for each side: the row/column by
/// recall/precision grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricGrid {
    pub n: usize,
    pub columns: SideScores,
    pub rows: SideScores,
}

/// Means over instances; an empty slice gives zeros with `n = 0`.
pub fn summarize_reductions(results: &[ReductionResult]) -> MetricGrid {
    let n = results.len();
    let mean = |f: &dyn Fn(&MaskScores) -> f64| {
        if n == 0 {
            0.0
        } else {
            results.iter().map(|r| f(&r.scores)).sum::<f64>() / n as f64
        }
    };
    MetricGrid {
        n,
        columns: SideScores {
            recall: mean(&|s| s.columns.recall),
            precision: mean(&|s| s.columns.precision),
        },
        rows: SideScores {
            recall: mean(&|s| s.rows.recall),
            precision: mean(&|s| s.rows.precision),
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextCondition {
    Original,
    GoldReduced,
    PredictedReduced,
    ColumnsOnlyReduced,
}

impl ContextCondition {
    pub const ALL: [ContextCondition; 4] = [
        ContextCondition::Original,
        ContextCondition::GoldReduced,
        ContextCondition::PredictedReduced,
        ContextCondition::ColumnsOnlyReduced,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ContextCondition::Original => "original",
            ContextCondition::GoldReduced => "gold_reduced",
            ContextCondition::PredictedReduced => "predicted_reduced",
            ContextCondition::ColumnsOnlyReduced => "columns_only_reduced",
        }
    }
}

impl fmt::Display for ContextCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DownstreamResult {
    pub instance_id: String,
    pub condition: ContextCondition,
    pub answered: bool,
    pub correct: bool,
    pub original_tokens: usize,
}

impl DownstreamResult {
    pub fn under(mut self, condition: ContextCondition, original_tokens: usize) -> DownstreamResult {
        self.condition = condition;
        self.original_tokens = original_tokens;
        self
    }
}

/// Keeps the header and the longest prefix of rows whose token count fits
/// the budget. A header over budget leaves no rows.
pub fn fit_to_budget(table: &Table, max_tokens: usize) -> Table {
    let mut used = table.header_tokens();
    let mut keep = 0;
    while keep < table.n_rows() && used + table.row_tokens(keep) <= max_tokens {
        used += table.row_tokens(keep);
        keep += 1;
    }
    table.truncated(keep)
}

/// Produces an answer for an instance given a context table; `None` means
/// no answer (refusal, error, network failure).
pub trait Answerer: Sync {
    fn answer(&self, instance: &QaInstance, context: &Table) -> Option<Value>;
}

/// Deterministic stand-in for a QA model: truncate the context to the
/// budget, then run the gold SQL on what is left.
#[derive(Debug, Clone, Copy)]
pub struct SimulatedAnswerer {
    pub budget: PromptBudget,
}

impl Answerer for SimulatedAnswerer {
    fn answer(&self, instance: &QaInstance, context: &Table) -> Option<Value> {
        let sql = instance.gold_sql.as_deref()?;
        run_sql(sql, &fit_to_budget(context, self.budget.max_tokens())).ok()
    }
}

pub fn judge(instance: &QaInstance, answer: Option<Value>) -> DownstreamResult {
    let correct = match (&answer, &instance.gold_answer) {
        (Some(a), Some(g)) => answers_equal(a, g),
        _ => false,
    };
    DownstreamResult {
        instance_id: instance.id.clone(),
        condition: ContextCondition::Original,
        answered: answer.is_some(),
        correct,
        original_tokens: 0,
    }
}

/// Simulated downstream outcome on `context`. The result is tagged
/// `original` with the context's own token count; use
/// [`DownstreamResult::under`] to retag it.
pub fn simulate_downstream(instance: &QaInstance, context: &Table, budget: PromptBudget) -> DownstreamResult {
    let answer = SimulatedAnswerer { budget }.answer(instance, context);
    judge(instance, answer).under(ContextCondition::Original, token_count(context))
}

/// Table body as sent to a remote answerer: its rows in the row-prompt format.
pub fn serialize_table(table: &Table) -> String {
    (0..table.n_rows()).map(|r| render_row(table, r)).collect::<Vec<_>>().join(", ")
}

/// Interprets free answer text: comma-separated items become a list.
pub fn parse_answer_text(text: &str) -> Value {
    let items: Vec<Value> = text.split(',').map(|s| Cell::parse(s.trim()).to_value()).collect();
    match items.len() {
        1 => items.into_iter().next().unwrap(),
        _ => Value::List(items),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DownstreamSummaryRow {
    pub condition: ContextCondition,
    pub n: usize,
    pub answered: usize,
    pub correct: usize,
}

impl DownstreamSummaryRow {
    pub fn accuracy(&self) -> f64 {
        ratio(self.correct, self.n)
    }

    pub fn answered_rate(&self) -> f64 {
        ratio(self.answered, self.n)
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Counts per condition, in [`ContextCondition::ALL`] order, skipping
/// conditions with no results.
pub fn summarize_downstream(results: &[DownstreamResult]) -> Vec<DownstreamSummaryRow> {
    ContextCondition::ALL
        .iter()
        .filter_map(|&condition| {
            let rs: Vec<&DownstreamResult> = results.iter().filter(|r| r.condition == condition).collect();
            (!rs.is_empty()).then(|| DownstreamSummaryRow {
                condition,
                n: rs.len(),
                answered: rs.iter().filter(|r| r.answered).count(),
                correct: rs.iter().filter(|r| r.correct).count(),
            })
        })
        .collect()
}

/// Lower bucket bounds; the last bucket is open-ended.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BucketEdges(Vec<usize>);

impl Default for BucketEdges {
    fn default() -> Self {
        BucketEdges(vec![0, 500, 1000, 2000, 4000])
    }
}

impl BucketEdges {
    pub fn new(edges: Vec<usize>) -> Result<BucketEdges, EvalError> {
        if edges.is_empty() || edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(EvalError::BadBuckets);
        }
        Ok(BucketEdges(edges))
    }

    pub fn edges(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the half-open bucket holding `tokens`; `None` below the first edge.
    pub fn bucket_of(&self, tokens: usize) -> Option<usize> {
        self.0.iter().rposition(|&e| tokens >= e)
    }

    pub fn bounds(&self, i: usize) -> (usize, Option<usize>) {
        (self.0[i], self.0.get(i + 1).copied())
    }

    pub fn label(&self, i: usize) -> String {
        match self.bounds(i) {
            (lo, Some(hi)) => format!("[{lo},{hi})"),
            (lo, None) => format!("[{lo},inf)"),
        }
    }
}

impl std::str::FromStr for BucketEdges {
    type Err = EvalError;

    /// Comma-separated lower bounds, e.g. `0,500,1000`.
    fn from_str(s: &str) -> Result<Self, EvalError> {
        let edges = s
            .split(',')
            .map(|p| p.trim().parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| EvalError::BadBuckets)?;
        BucketEdges::new(edges)
    }
}

/// A result that contributes named metric observations to a bucketed report.
pub trait Observed {
    fn original_tokens(&self) -> usize;
    fn observations(&self) -> Vec<(String, f64)>;
}

impl Observed for DownstreamResult {
    fn original_tokens(&self) -> usize {
        self.original_tokens
    }

    fn observations(&self) -> Vec<(String, f64)> {
        vec![
            (self.condition.to_string(), f64::from(u8::from(self.correct))),
            (format!("{}_answered", self.condition), f64::from(u8::from(self.answered))),
        ]
    }
}

impl Observed for ReductionResult {
    fn original_tokens(&self) -> usize {
        self.original_tokens
    }

    fn observations(&self) -> Vec<(String, f64)> {
        let s = &self.scores;
        vec![
            ("column_recall".to_string(), s.columns.recall),
            ("column_precision".to_string(), s.columns.precision),
            ("row_recall".to_string(), s.rows.recall),
            ("row_precision".to_string(), s.rows.precision),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketRow {
    pub bucket: String,
    pub lower: usize,
    pub upper: Option<usize>,
    pub condition: String,
    pub n: usize,
    pub mean: Option<f64>,
}

/// One row per (bucket, condition), buckets in edge order and conditions in
/// order of first appearance. Results below the first edge are left out.
pub fn bucketed_report<R: Observed>(results: &[R], edges: &BucketEdges) -> Vec<BucketRow> {
    let mut conditions: Vec<String> = Vec::new();
    // sums[bucket][condition] = (n, total)
    let mut sums: Vec<Vec<(usize, f64)>> = vec![Vec::new(); edges.len()];
    for r in results {
        let bucket = edges.bucket_of(r.original_tokens());
        for (cond, v) in r.observations() {
            let ci = match conditions.iter().position(|c| *c == cond) {
                Some(i) => i,
                None => {
                    conditions.push(cond);
                    conditions.len() - 1
                }
            };
            if let Some(b) = bucket {
                let row = &mut sums[b];
                if row.len() <= ci {
                    row.resize(ci + 1, (0, 0.0));
                }
                row[ci].0 += 1;
                row[ci].1 += v;
            }
        }
    }
    let mut out = Vec::new();
    for (b, row) in sums.iter().enumerate() {
        let (lower, upper) = edges.bounds(b);
        for (ci, cond) in conditions.iter().enumerate() {
            let (n, total) = row.get(ci).copied().unwrap_or((0, 0.0));
            out.push(BucketRow {
                bucket: edges.label(b),
                lower,
                upper,
                condition: cond.clone(),
                n,
                mean: (n > 0).then(|| total / n as f64),
            });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThresholdCount {
    pub tokens: usize,
    pub instances: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub tables: usize,
    pub instances: usize,
    pub avg_columns: f64,
    pub max_columns: usize,
    pub avg_rows: f64,
    pub max_rows: usize,
    pub avg_cells: f64,
    pub max_cells: usize,
    pub avg_tokens: f64,
    pub max_tokens: usize,
    /// Instances whose table has strictly more tokens than each threshold.
    pub above: Vec<ThresholdCount>,
    pub questions_per_table: f64,
}

pub const DEFAULT_THRESHOLDS: [usize; 2] = [4096, 8192];

/// Shape aggregates are per table; threshold counts are per instance.
pub fn dataset_stats(corpus: &Corpus, thresholds: &[usize]) -> Result<DatasetStats, EvalError> {
    let dangling = corpus.dangling();
    if !dangling.is_empty() {
        return Err(EvalError::DanglingTables(dangling));
    }
    let tables: Vec<&Table> = corpus.tables.values().collect();
    let n = tables.len();
    let avg = |f: &dyn Fn(&Table) -> usize| {
        if n == 0 {
            0.0
        } else {
            tables.iter().map(|t| f(t)).sum::<usize>() as f64 / n as f64
        }
    };
    let max = |f: &dyn Fn(&Table) -> usize| tables.iter().map(|t| f(t)).max().unwrap_or(0);
    let cols = |t: &Table| t.n_columns();
    let rows = |t: &Table| t.n_rows();
    let cells = |t: &Table| t.n_columns() * t.n_rows();
    let tokens = |t: &Table| token_count(t);
    let inst_tokens: Vec<usize> = corpus.instances.iter().map(|i| token_count(corpus.table_of(i))).collect();
    Ok(DatasetStats {
        tables: n,
        instances: corpus.instances.len(),
        avg_columns: avg(&cols),
        max_columns: max(&cols),
        avg_rows: avg(&rows),
        max_rows: max(&rows),
        avg_cells: avg(&cells),
        max_cells: max(&cells),
        avg_tokens: avg(&tokens),
        max_tokens: max(&tokens),
        above: thresholds
            .iter()
            .map(|&t| ThresholdCount {
                tokens: t,
                instances: inst_tokens.iter().filter(|&&x| x > t).count(),
            })
            .collect(),
        questions_per_table: if n == 0 { 0.0 } else { corpus.instances.len() as f64 / n as f64 },
    })
}

/// Greedy two-stage reduction of every instance that has a gold mask.
pub fn evaluate_reductions(
    column: &Policy,
    row: &Policy,
    corpus: &Corpus,
    instances: &[QaInstance],
    exec: Exec,
) -> Vec<ReductionResult> {
    let scored: Vec<&QaInstance> = instances.iter().filter(|i| i.gold_mask.is_some()).collect();
    exec.map(&scored, |_, inst| {
        let table = corpus.table_of(inst);
        let predicted = reduce_instance(column, row, &inst.question, table);
        let gold = inst.gold_mask.clone().expect("filtered on gold mask");
        ReductionResult::new(inst.id.clone(), predicted, gold, token_count(table))
    })
}

/// Context table an instance is answered from under `condition`.
pub fn context_for(table: &Table, condition: ContextCondition, gold: &ItemMask, predicted: &ItemMask) -> Table {
    let mask = match condition {
        ContextCondition::Original => return table.clone(),
        ContextCondition::GoldReduced => gold.clone(),
        ContextCondition::PredictedReduced => predicted.clone(),
        ContextCondition::ColumnsOnlyReduced => ItemMask {
            columns: predicted.columns.clone(),
            rows: (0..table.n_rows()).collect(),
        },
    };
    apply_mask(table, &mask).expect("masks come from this table")
}

/// Answers each reduced instance under every context condition. Results are
/// ordered by instance, then condition.
pub fn evaluate_downstream(
    corpus: &Corpus,
    instances: &[QaInstance],
    reductions: &[ReductionResult],
    answerer: &dyn Answerer,
    exec: Exec,
) -> Vec<DownstreamResult> {
    let by_id: std::collections::HashMap<&str, &QaInstance> = instances.iter().map(|i| (i.id.as_str(), i)).collect();
    let per: Vec<Vec<DownstreamResult>> = exec.map(reductions, |_, r| {
        let inst = by_id[r.instance_id.as_str()];
        let table = corpus.table_of(inst);
        ContextCondition::ALL
            .iter()
            .map(|&c| {
                let ctx = context_for(table, c, &r.gold, &r.predicted);
                judge(inst, answerer.answer(inst, &ctx)).under(c, r.original_tokens)
            })
            .collect()
    });
    per.into_iter().flatten().collect()
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), LoadError> {
    let io = |source| LoadError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    for r in records {
        let line = serde_json::to_string(r).expect("record serializes");
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn write_csv<T: Serialize>(path: &Path, records: &[T]) -> Result<(), LoadError> {
    let err = |e: csv::Error| LoadError::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    for r in records {
        w.serialize(r).map_err(err)?;
    }
    w.flush().map_err(|source| LoadError::Io {
        path: path.to_path_buf(),
        source,
    })
}
