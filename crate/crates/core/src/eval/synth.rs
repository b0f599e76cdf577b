//! Seeded synthetic table-QA corpus.
//!
//! Every table has a unique `name` column, a few categorical text columns
//! and some integer columns. Questions come from four templates (point
//! lookup, superlative, count, comparison); gold answers are produced by
//! running the gold SQL, so every instance is oracle-annotatable.

use std::collections::BTreeSet;
use std::ops::RangeInclusive;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::Corpus;
use crate::error::EvalError;
use crate::sql::run_sql;
use crate::table::{format_number, Cell, QaInstance, Table};

pub const MAX_COLUMNS: usize = 25;

const KEY: &str = "name";
const TEXT_HEADERS: &[&str] = &[
    "country", "team", "venue", "club", "region", "coach", "genre", "label", "surface", "district",
];
/// Header and value range of each numeric column.
const NUMERIC_HEADERS: &[(&str, i64, i64)] = &[
    ("year", 1950, 2020),
    ("score", 0, 100),
    ("points", 0, 500),
    ("goals", 0, 60),
    ("wins", 0, 40),
    ("losses", 0, 40),
    ("attendance", 1000, 90000),
    ("population", 5000, 900000),
    ("height", 150, 230),
    ("weight", 50, 140),
    ("medals", 0, 30),
    ("seats", 10, 650),
    ("votes", 100, 99000),
    ("budget", 10, 9000),
];
const SYLLABLES: &[&str] = &[
    "ka", "lo", "mi", "ren", "tor", "vi", "zan", "bel", "dor", "fu", "gar", "hes", "jo", "kel", "mar", "nor",
    "pel", "qui", "ros", "sul", "tam", "ul", "ves", "wyn", "yor", "zel",
];
/// Words the generated text values must never spell, so a value never
/// reads as part of a question template or a header.
const RESERVED: &[&str] = &[
    "what", "is", "the", "when", "which", "has", "have", "highest", "lowest", "how", "many", "entries",
    "equal", "to", "greater", "less", "than", "name", "count",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_instances: usize,
    pub columns: RangeInclusive<usize>,
    pub rows: RangeInclusive<usize>,
    /// Instances drawn per generated table (the last table may get fewer).
    pub questions_per_table: usize,
}

impl SynthConfig {
    pub fn new(seed: u64, n_instances: usize, columns: RangeInclusive<usize>, rows: RangeInclusive<usize>) -> SynthConfig {
        SynthConfig {
            seed,
            n_instances,
            columns,
            rows,
            questions_per_table: 2,
        }
    }

    fn validate(&self) -> Result<(), EvalError> {
        let bad = |m: &str| Err(EvalError::BadCorpusParams(m.to_string()));
        if self.columns.is_empty() || self.rows.is_empty() {
            return bad("column and row ranges must be nonempty");
        }
        if *self.columns.start() < 2 || *self.columns.end() > MAX_COLUMNS {
            return bad("column range must lie within [2, 25]");
        }
        if *self.rows.start() < 1 {
            return bad("tables need at least one row");
        }
        if self.questions_per_table == 0 {
            return bad("questions_per_table must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Template {
    Lookup,
    Superlative { max: bool },
    Count,
    Comparison { greater: bool },
}

const TEMPLATES: &[Template] = &[
    Template::Lookup,
    Template::Superlative { max: true },
    Template::Superlative { max: false },
    Template::Count,
    Template::Comparison { greater: true },
    Template::Comparison { greater: false },
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Key,
    Text,
    Numeric,
}

pub fn generate_synthetic_corpus(cfg: &SynthConfig) -> Result<Corpus, EvalError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut tables = Vec::new();
    let mut instances = Vec::new();
    while instances.len() < cfg.n_instances {
        let id = format!("t{:04}", tables.len());
        let (table, kinds) = random_table(&mut rng, &id, cfg);
        let want = cfg.questions_per_table.min(cfg.n_instances - instances.len());
        let mut templates = TEMPLATES.to_vec();
        templates.shuffle(&mut rng);
        for tpl in templates.into_iter().take(want) {
            let (question, sql) = instantiate(&mut rng, tpl, &table, &kinds);
            let answer = run_sql(&sql, &table).expect("generated query executes");
            let q = QaInstance::new(format!("q{:05}", instances.len()), question, id.clone())
                .with_sql(sql)
                .with_answer(answer);
            instances.push(q);
        }
        tables.push(table);
    }
    Ok(Corpus::new(tables, instances))
}

fn random_table(rng: &mut ChaCha8Rng, id: &str, cfg: &SynthConfig) -> (Table, Vec<Kind>) {
    let n_cols = rng.random_range(cfg.columns.clone());
    let n_rows = rng.random_range(cfg.rows.clone());

    // at least one text and one numeric column beside the key when room allows
    let n_text_max = TEXT_HEADERS.len().min(n_cols - 1);
    let n_num_max = NUMERIC_HEADERS.len().min(n_cols - 1);
    let lo = (n_cols - 1).saturating_sub(n_num_max).max(usize::from(n_cols >= 3));
    let hi = n_text_max.min(n_cols - 1 - usize::from(n_cols >= 3)).max(lo);
    let n_text = rng.random_range(lo..=hi);
    let n_num = n_cols - 1 - n_text;

    let mut columns: Vec<(String, Kind, Vec<Cell>)> = Vec::new();
    let names = unique_words(rng, n_rows);
    columns.push((KEY.to_string(), Kind::Key, names.into_iter().map(Cell::Text).collect()));
    for h in TEXT_HEADERS.choose_multiple(rng, n_text) {
        let size = rng.random_range(2..=5);
        let vocab = unique_words(rng, size);
        let cells = (0..n_rows).map(|_| Cell::Text(vocab.choose(rng).unwrap().clone())).collect();
        columns.push((h.to_string(), Kind::Text, cells));
    }
    for &(h, lo, hi) in NUMERIC_HEADERS.choose_multiple(rng, n_num) {
        let mut vals: Vec<i64> = (0..n_rows).map(|_| rng.random_range(lo..=hi)).collect();
        make_extremes_unique(&mut vals);
        let cells = vals.into_iter().map(|v| Cell::number(v as f64)).collect();
        columns.push((h.to_string(), Kind::Numeric, cells));
    }
    columns.shuffle(rng);

    let headers = columns.iter().map(|c| c.0.clone()).collect();
    let kinds = columns.iter().map(|c| c.1).collect();
    let rows = (0..n_rows).map(|r| columns.iter().map(|c| c.2[r].clone()).collect()).collect();
    (Table::new(id, headers, rows), kinds)
}

/// Nudges tied extremes apart so superlatives resolve to a single row.
fn make_extremes_unique(vals: &mut [i64]) {
    if vals.len() < 2 {
        return;
    }
    let max = *vals.iter().max().unwrap();
    if vals.iter().filter(|v| **v == max).count() > 1 {
        *vals.iter_mut().find(|v| **v == max).unwrap() += 1;
    }
    let min = *vals.iter().min().unwrap();
    if vals.iter().filter(|v| **v == min).count() > 1 {
        *vals.iter_mut().rev().find(|v| **v == min).unwrap() -= 1;
    }
}

fn unique_words(rng: &mut ChaCha8Rng, n: usize) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let k = rng.random_range(2..=3);
        let w: String = (0..k).map(|_| *SYLLABLES.choose(rng).unwrap()).collect();
        let clash = RESERVED.contains(&w.as_str())
            || TEXT_HEADERS.contains(&w.as_str())
            || NUMERIC_HEADERS.iter().any(|h| h.0 == w);
        if !clash && seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

fn quote(v: &str) -> String {
    format!("'{}'", v.replace('\'', "''"))
}

fn columns_of(kinds: &[Kind], kind: Kind) -> Vec<usize> {
    (0..kinds.len()).filter(|&c| kinds[c] == kind).collect()
}

/// Falls back to a point lookup when the table lacks the columns a
/// template needs.
fn instantiate(rng: &mut ChaCha8Rng, tpl: Template, table: &Table, kinds: &[Kind]) -> (String, String) {
    let key = columns_of(kinds, Kind::Key)[0];
    let texts = columns_of(kinds, Kind::Text);
    let nums = columns_of(kinds, Kind::Numeric);
    let h = |c: usize| table.headers()[c].as_str();
    let n_rows = table.n_rows();
    match tpl {
        Template::Superlative { max } if !nums.is_empty() => {
            let c = *nums.choose(rng).unwrap();
            let vals: Vec<f64> = table.rows().iter().map(|r| r[c].as_number().unwrap()).collect();
            let ext = if max {
                vals.iter().copied().fold(f64::MIN, f64::max)
            } else {
                vals.iter().copied().fold(f64::MAX, f64::min)
            };
            let word = if max { "highest" } else { "lowest" };
            (
                format!("which {} has the {word} {}?", h(key), h(c)),
                format!("SELECT {} WHERE {} = {}", h(key), h(c), format_number(ext)),
            )
        }
        Template::Count if !texts.is_empty() => {
            let c = *texts.choose(rng).unwrap();
            let v = table.rows()[rng.random_range(0..n_rows)][c].text().to_string();
            (
                format!("how many entries have {} equal to {v}?", h(c)),
                format!("SELECT count({}) WHERE {} = {}", h(c), h(c), quote(&v)),
            )
        }
        Template::Comparison { greater } if !nums.is_empty() => {
            let c = *nums.choose(rng).unwrap();
            let mut vals: Vec<i64> = table.rows().iter().map(|r| r[c].as_number().unwrap() as i64).collect();
            vals.sort_unstable();
            vals.dedup();
            if !greater {
                vals.reverse();
            }
            // threshold leaves 1 to 3 distinct values strictly beyond it
            let beyond = rng.random_range(1..=3usize).min(vals.len());
            let bound = if beyond == vals.len() {
                if greater {
                    vals[0] - 1
                } else {
                    vals[0] + 1
                }
            } else {
                vals[vals.len() - 1 - beyond]
            };
            let (word, op) = if greater { ("greater", ">") } else { ("less", "<") };
            (
                format!("which {} have {} {word} than {bound}?", h(key), h(c)),
                format!("SELECT {} WHERE {} {op} {bound}", h(key), h(c)),
            )
        }
        _ => {
            let targets: Vec<usize> = (0..kinds.len()).filter(|&c| c != key).collect();
            let t = *targets.choose(rng).unwrap_or(&key);
            let r = rng.random_range(0..n_rows);
            let v = table.rows()[r][key].text().to_string();
            (
                format!("what is the {} when {} is {v}?", h(t), h(key)),
                format!("SELECT {} WHERE {} = {}", h(t), h(key), quote(&v)),
            )
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{derive_relevance, OracleConfig};

    #[test]
    fn deterministic() {
        let cfg = SynthConfig::new(7, 30, 2..=8, 1..=10);
        let a = generate_synthetic_corpus(&cfg).unwrap();
        let b = generate_synthetic_corpus(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.content_hash(), b.content_hash());
        let c = generate_synthetic_corpus(&SynthConfig::new(8, 30, 2..=8, 1..=10)).unwrap();
        assert_ne!(a.content_hash(), c.content_hash());
    }

    #[test]
    fn instances_are_annotatable() {
        let cfg = SynthConfig::new(3, 120, 2..=10, 1..=15);
        let corpus = generate_synthetic_corpus(&cfg).unwrap();
        assert_eq!(corpus.instances.len(), 120);
        assert!(corpus.dangling().is_empty());
        for inst in &corpus.instances {
            let t = corpus.table_of(inst);
            assert!(t.n_columns() >= 2 && t.n_columns() <= 10, "{}", t.n_columns());
            assert!(t.n_rows() >= 1 && t.n_rows() <= 15);
            assert!(!matches!(inst.gold_answer, Some(crate::Value::Empty)), "{:?}", inst);
            derive_relevance(inst, t, &OracleConfig::default()).unwrap();
        }
    }

    #[test]
    fn superlatives_hit_one_row() {
        let corpus = generate_synthetic_corpus(&SynthConfig::new(11, 200, 3..=8, 2..=20)).unwrap();
        let mut seen = 0;
        for inst in &corpus.instances {
            if !inst.question.contains("highest") && !inst.question.contains("lowest") {
                continue;
            }
            seen += 1;
            let t = corpus.table_of(inst);
            let q = crate::parse_sql(inst.gold_sql.as_deref().unwrap()).unwrap();
            let hits = t
                .rows()
                .iter()
                .filter(|row| {
                    q.predicates.iter().all(|p| {
                        let c = t.column_index(&p.column).unwrap();
                        row[c].as_number() == Some(match &p.literal {
                            crate::sql::Literal::Number(n) => *n,
                            _ => unreachable!(),
                        })
                    })
                })
                .count();
            assert_eq!(hits, 1, "{}", inst.question);
        }
        assert!(seen > 20);
    }

    #[test]
    fn extremes_made_unique() {
        let mut v = vec![5, 5, 1, 1, 3];
        make_extremes_unique(&mut v);
        assert_eq!(v.iter().filter(|x| **x == *v.iter().max().unwrap()).count(), 1);
        assert_eq!(v.iter().filter(|x| **x == *v.iter().min().unwrap()).count(), 1);
        let mut v = vec![2, 2];
        make_extremes_unique(&mut v);
        assert_eq!(v, vec![3, 2]);
    }

    #[test]
    fn rejects_bad_ranges() {
        assert!(generate_synthetic_corpus(&SynthConfig::new(1, 5, 1..=4, 1..=4)).is_err());
        assert!(generate_synthetic_corpus(&SynthConfig::new(1, 5, 2..=26, 1..=4)).is_err());
        #[allow(clippy::reversed_empty_ranges)]
        let empty = 5..=4;
        assert!(generate_synthetic_corpus(&SynthConfig::new(1, 5, 2..=4, empty)).is_err());
    }
}
