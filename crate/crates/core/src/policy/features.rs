//! Hand-built item features standing in for a language-model encoder.

use std::collections::HashSet;

use crate::prompt::Stage;
use crate::table::{Cell, Table};

/// Per-candidate feature count.
pub const ITEM_FEATURES: usize = 10;
/// Features of the STOP action.
pub const STOP_FEATURES: usize = 2;
/// Length of a policy's weight vector: item weights then STOP weights.
pub const PARAM_DIM: usize = ITEM_FEATURES + STOP_FEATURES;

pub type ItemVec = [f64; ITEM_FEATURES];
pub type StopVec = [f64; STOP_FEATURES];

/// Named slots of [`ItemVec`]. Slots 6..=9 mean different things per stage.
pub mod slot {
    pub const BIAS: usize = 0;
    pub const OVERLAP: usize = 1;
    pub const EXACT: usize = 2;
    pub const NUMERIC_MATCH: usize = 3;
    pub const POSITION: usize = 4;
    pub const SELECTED: usize = 5;
    /// column: a cell value is quoted in the question; row: holds the max of a named column under a max cue
    pub const CUE_A: usize = 6;
    /// column: numeric under a superlative cue; row: holds the min under a min cue
    pub const CUE_B: usize = 7;
    /// column: numeric under a comparison cue; row: passes a "greater than" bound
    pub const CUE_C: usize = 8;
    /// column: numeric column; row: passes a "less than" bound
    pub const CUE_D: usize = 9;
}

const MAX_CUES: &[&str] = &["highest", "largest", "most", "maximum", "biggest", "top", "greatest"];
const MIN_CUES: &[&str] = &["lowest", "smallest", "least", "minimum", "fewest", "bottom"];
const GREATER_CUES: &[&str] = &["greater", "more", "above", "over", "exceeding", "exceeds"];
const LESS_CUES: &[&str] = &["less", "below", "under", "fewer"];

/// Lowercased word tokens; inner dots are kept so decimals survive.
pub fn word_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '.'))
        .map(|t| t.trim_matches('.').to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

#[derive(Debug, Clone)]
struct Question {
    tokens: HashSet<String>,
    /// token sequence padded with spaces for whole-phrase search
    padded: String,
    numbers: Vec<f64>,
    max_cue: bool,
    min_cue: bool,
    greater_cue: bool,
    less_cue: bool,
}

impl Question {
    fn new(text: &str) -> Question {
        let toks = word_tokens(text);
        let has = |cues: &[&str]| toks.iter().any(|t| cues.contains(&t.as_str()));
        Question {
            padded: format!(" {} ", toks.join(" ")),
            numbers: toks.iter().filter_map(|t| t.parse::<f64>().ok()).collect(),
            max_cue: has(MAX_CUES),
            min_cue: has(MIN_CUES),
            greater_cue: has(GREATER_CUES),
            less_cue: has(LESS_CUES),
            tokens: toks.into_iter().collect(),
        }
    }

    fn mentions(&self, phrase: &str) -> bool {
        let toks = word_tokens(phrase);
        !toks.is_empty() && self.padded.contains(&format!(" {} ", toks.join(" ")))
    }

    fn overlap(&self, text_tokens: &[String]) -> f64 {
        if text_tokens.is_empty() {
            return 0.0;
        }
        let hits = text_tokens.iter().filter(|t| self.tokens.contains(*t)).count();
        hits as f64 / text_tokens.len() as f64
    }

    fn names_number(&self, v: f64) -> bool {
        self.numbers.iter().any(|n| (n - v).abs() <= 1e-9)
    }
}

fn is_numeric_column(table: &Table, c: usize) -> bool {
    let present: Vec<&Cell> = table.rows().iter().map(|r| &r[c]).filter(|x| !x.is_empty()).collect();
    !present.is_empty() && present.iter().filter(|x| x.as_number().is_some()).count() * 2 >= present.len()
}

fn position(i: usize, n: usize) -> f64 {
    if n <= 1 {
        0.0
    } else {
        i as f64 / (n - 1) as f64
    }
}

/// Precomputed state-independent features for every candidate of a stage.
#[derive(Debug, Clone)]
pub struct Featurizer {
    stage: Stage,
    statics: Vec<ItemVec>,
}

impl Featurizer {
    pub fn new(question: &str, table: &Table, stage: Stage) -> Featurizer {
        let q = Question::new(question);
        let statics = match stage {
            Stage::Column => column_features(&q, table),
            Stage::Row => row_features(&q, table),
        };
        Featurizer { stage, statics }
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn n_candidates(&self) -> usize {
        self.statics.len()
    }

    /// Features of `candidate` once `n_selected` items have been chosen.
    pub fn item(&self, candidate: usize, n_selected: usize) -> ItemVec {
        let mut f = self.statics[candidate];
        f[slot::SELECTED] = self.selected_fraction(n_selected);
        f
    }

    pub fn stop(&self, n_selected: usize) -> StopVec {
        [1.0, self.selected_fraction(n_selected)]
    }

    fn selected_fraction(&self, n_selected: usize) -> f64 {
        n_selected as f64 / self.statics.len().max(1) as f64
    }
}

fn column_features(q: &Question, table: &Table) -> Vec<ItemVec> {
    let n = table.n_columns();
    (0..n)
        .map(|c| {
            let header = &table.headers()[c];
            let numeric = is_numeric_column(table, c);
            let cells = table.rows().iter().map(|r| &r[c]);
            let value_quoted = cells
                .clone()
                .any(|cell| matches!(cell, Cell::Text(t) if q.mentions(t)));
            let number_named = cells
                .filter_map(|cell| cell.as_number())
                .any(|v| q.names_number(v));
            let mut f = [0.0; ITEM_FEATURES];
            f[slot::BIAS] = 1.0;
            f[slot::OVERLAP] = q.overlap(&word_tokens(header));
            f[slot::EXACT] = f64::from(u8::from(q.mentions(header)));
            f[slot::NUMERIC_MATCH] = f64::from(u8::from(number_named));
            f[slot::POSITION] = position(c, n);
            f[slot::CUE_A] = f64::from(u8::from(value_quoted));
            f[slot::CUE_B] = f64::from(u8::from(numeric && (q.max_cue || q.min_cue)));
            f[slot::CUE_C] = f64::from(u8::from(numeric && (q.greater_cue || q.less_cue)));
            f[slot::CUE_D] = f64::from(u8::from(numeric));
            f
        })
        .collect()
}

fn row_features(q: &Question, table: &Table) -> Vec<ItemVec> {
    let n = table.n_rows();
    // numeric columns whose header the question names
    let named: Vec<usize> = (0..table.n_columns())
        .filter(|&c| is_numeric_column(table, c) && q.mentions(&table.headers()[c]))
        .collect();
    let extreme = |c: usize, max: bool| -> Option<f64> {
        let vals = table.rows().iter().filter_map(|r| r[c].as_number());
        if max {
            vals.reduce(f64::max)
        } else {
            vals.reduce(f64::min)
        }
    };
    let maxima: Vec<(usize, Option<f64>)> = named.iter().map(|&c| (c, extreme(c, true))).collect();
    let minima: Vec<(usize, Option<f64>)> = named.iter().map(|&c| (c, extreme(c, false))).collect();
    let q_max = q.numbers.iter().copied().reduce(f64::max);
    let q_min = q.numbers.iter().copied().reduce(f64::min);

    (0..n)
        .map(|r| {
            let row = &table.rows()[r];
            let row_tokens: Vec<String> = row.iter().flat_map(|c| word_tokens(c.text())).collect();
            let text_quoted = row.iter().any(|c| matches!(c, Cell::Text(t) if q.mentions(t)));
            let number_named = row.iter().filter_map(|c| c.as_number()).any(|v| q.names_number(v));
            let holds = |ext: &[(usize, Option<f64>)]| {
                ext.iter().any(|&(c, e)| e.is_some() && row[c].as_number() == e)
            };
            let beats = |greater: bool| {
                named.iter().any(|&c| match (row[c].as_number(), q_min, q_max) {
                    (Some(v), Some(lo), _) if greater => v > lo,
                    (Some(v), _, Some(hi)) if !greater => v < hi,
                    _ => false,
                })
            };
            let mut f = [0.0; ITEM_FEATURES];
            f[slot::BIAS] = 1.0;
            f[slot::OVERLAP] = q.overlap(&row_tokens);
            f[slot::EXACT] = f64::from(u8::from(text_quoted));
            f[slot::NUMERIC_MATCH] = f64::from(u8::from(number_named));
            f[slot::POSITION] = position(r, n);
            f[slot::CUE_A] = f64::from(u8::from(q.max_cue && holds(&maxima)));
            f[slot::CUE_B] = f64::from(u8::from(q.min_cue && holds(&minima)));
            f[slot::CUE_C] = f64::from(u8::from(q.greater_cue && beats(true)));
            f[slot::CUE_D] = f64::from(u8::from(q.less_cue && beats(false)));
            f
        })
        .collect()
}
