//! Shared test support: an independent row-enumeration SQL evaluator over
//! raw strings, random (table, query) generation, and brute-force references
//! for the top-p mask, the reward and recall/precision.

#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::{Rng, RngCore};
use tabreduce::{Table, Value};

pub const COLUMN_NAMES: &[&str] = &["alpha", "beta", "gamma", "delta", "epsilon", "zeta"];
const WORDS: &[&str] = &["red", "Red", "blue", "green", "teal", "Blue green", "o'neil"];

#[derive(Debug, Clone)]
pub struct RawTable {
    pub headers: Vec<String>,
    pub cells: Vec<Vec<String>>,
}

impl RawTable {
    pub fn to_table(&self) -> Table {
        let h: Vec<&str> = self.headers.iter().map(String::as_str).collect();
        let rows: Vec<Vec<&str>> = self.cells.iter().map(|r| r.iter().map(String::as_str).collect()).collect();
        let rs: Vec<&[&str]> = rows.iter().map(Vec::as_slice).collect();
        Table::from_strings("t", &h, &rs)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Lit {
    Num(f64),
    Str(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Op {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    Contains,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Agg {
    Count,
    Sum,
    Avg,
    Min,
    Max,
}

#[derive(Debug, Clone)]
pub enum Proj {
    Col(String),
    Agg(Agg, Option<String>),
}

#[derive(Debug, Clone)]
pub struct RawQuery {
    pub proj: Proj,
    pub preds: Vec<(String, Op, Lit)>,
    pub order: Option<(String, bool)>,
    pub limit: Option<usize>,
}

fn fmt_num(n: f64) -> String {
    if n == n.trunc() {
        format!("{}", n as i64)
    } else {
        format!("{n}")
    }
}

fn lit_sql(l: &Lit) -> String {
    match l {
        Lit::Num(n) => fmt_num(*n),
        Lit::Str(s) => format!("'{}'", s.replace('\'', "''")),
    }
}

impl RawQuery {
    pub fn render(&self) -> String {
        let mut s = String::from("SELECT ");
        match &self.proj {
            Proj::Col(c) => s.push_str(c),
            Proj::Agg(a, c) => {
                let f = ["count", "sum", "avg", "min", "max"][*a as usize];
                s.push_str(&format!("{f}({})", c.as_deref().unwrap_or("*")));
            }
        }
        s.push_str(" FROM t");
        for (i, (c, op, l)) in self.preds.iter().enumerate() {
            s.push_str(if i == 0 { " WHERE " } else { " AND " });
            let o = ["=", "!=", "<", "<=", ">", ">=", "CONTAINS"][*op as usize];
            s.push_str(&format!("{c} {o} {}", lit_sql(l)));
        }
        if let Some((c, desc)) = &self.order {
            s.push_str(&format!(" ORDER BY {c} {}", if *desc { "DESC" } else { "ASC" }));
        }
        if let Some(n) = self.limit {
            s.push_str(&format!(" LIMIT {n}"));
        }
        s
    }
}

/// A raw cell as the evaluator sees it.
#[derive(Debug, Clone, PartialEq)]
enum C {
    E,
    N(f64, String),
    T(String),
}

fn is_decimal(s: &str) -> bool {
    let b = s.strip_prefix('-').unwrap_or(s);
    let (i, f) = b.split_once('.').unwrap_or((b, "0"));
    !i.is_empty() && !f.is_empty() && i.bytes().all(|x| x.is_ascii_digit()) && f.bytes().all(|x| x.is_ascii_digit())
}

fn classify(raw: &str) -> C {
    let t = raw.trim();
    if t.is_empty() {
        C::E
    } else if is_decimal(t) {
        C::N(t.parse().unwrap(), t.to_string())
    } else {
        C::T(t.to_string())
    }
}

fn as_value(c: &C) -> Value {
    match c {
        C::E => Value::Empty,
        C::N(v, _) => Value::Number(*v),
        C::T(s) => Value::Text(s.clone()),
    }
}

fn raw_text(c: &C) -> String {
    match c {
        C::E => String::new(),
        C::N(_, r) => r.clone(),
        C::T(s) => s.clone(),
    }
}

fn equal(c: &C, l: &Lit) -> bool {
    let lit_num = match l {
        Lit::Num(n) => Some(*n),
        Lit::Str(s) if is_decimal(s.trim()) => Some(s.trim().parse().unwrap()),
        _ => None,
    };
    match (c, lit_num) {
        (C::N(v, _), Some(n)) => (v - n).abs() <= 1e-9,
        (C::N(..), None) => false,
        (C::T(_), Some(_)) if matches!(l, Lit::Num(_)) => false,
        (C::T(t), _) => {
            let ls = match l {
                Lit::Str(s) => s.clone(),
                Lit::Num(n) => fmt_num(*n),
            };
            t.trim().to_lowercase() == ls.trim().to_lowercase()
        }
        (C::E, _) => false,
    }
}

/// `Err(())` for any execution error.
fn holds(c: &C, op: Op, l: &Lit) -> Result<bool, ()> {
    match op {
        Op::Lt | Op::Le | Op::Gt | Op::Ge => {
            let Lit::Num(b) = l else { return Err(()) };
            match c {
                C::E => Ok(false),
                C::T(_) => Err(()),
                C::N(v, _) => Ok(match op {
                    Op::Lt => v < b,
                    Op::Le => v <= b,
                    Op::Gt => v > b,
                    _ => v >= b,
                }),
            }
        }
        _ if *c == C::E => Ok(false),
        Op::Eq => Ok(equal(c, l)),
        Op::Ne => Ok(!equal(c, l)),
        Op::Contains => {
            let needle = match l {
                Lit::Str(s) => s.to_lowercase(),
                Lit::Num(n) => fmt_num(*n),
            };
            Ok(raw_text(c).to_lowercase().contains(&needle))
        }
    }
}

/// `a` strictly before `b` in the requested order; empties always last.
fn before(a: &C, b: &C, desc: bool) -> bool {
    let class = |c: &C| match c {
        C::N(..) => 0,
        C::T(_) => 1,
        C::E => 2,
    };
    let (ca, cb) = (class(a), class(b));
    if ca == 2 || cb == 2 {
        return ca < cb;
    }
    let less = |x: &C, y: &C| -> bool {
        match (x, y) {
            (C::N(p, _), C::N(q, _)) => p < q,
            (C::T(p), C::T(q)) => p.to_lowercase() < q.to_lowercase(),
            _ => class(x) < class(y),
        }
    };
    if desc {
        less(b, a)
    } else {
        less(a, b)
    }
}

/// Independent evaluation by enumerating rows.
pub fn brute_force(t: &RawTable, q: &RawQuery) -> Result<Value, ()> {
    let col = |name: &str| t.headers.iter().position(|h| h.to_lowercase() == name.to_lowercase()).ok_or(());
    let mut names: Vec<&str> = q.preds.iter().map(|p| p.0.as_str()).collect();
    if let Proj::Col(c) | Proj::Agg(_, Some(c)) = &q.proj {
        names.push(c);
    }
    if let Some((c, _)) = &q.order {
        names.push(c);
    }
    for n in names {
        col(n)?;
    }
    let grid: Vec<Vec<C>> = t.cells.iter().map(|r| r.iter().map(|s| classify(s)).collect()).collect();

    let mut rows = Vec::new();
    for (r, row) in grid.iter().enumerate() {
        let mut ok = true;
        for (c, op, l) in &q.preds {
            ok &= holds(&row[col(c)?], *op, l)?;
        }
        if ok {
            rows.push(r);
        }
    }
    if let Some((c, desc)) = &q.order {
        let ci = col(c)?;
        // repeated selection of the earliest minimal row
        let mut rest = rows;
        rows = Vec::new();
        while !rest.is_empty() {
            let mut best = 0;
            for i in 1..rest.len() {
                if before(&grid[rest[i]][ci], &grid[rest[best]][ci], *desc) {
                    best = i;
                }
            }
            rows.push(rest.remove(best));
        }
    }
    if let Some(n) = q.limit {
        rows.truncate(n);
    }

    match &q.proj {
        Proj::Col(c) => {
            let ci = col(c)?;
            let cells: Vec<&C> = rows.iter().map(|&r| &grid[r][ci]).collect();
            Ok(match cells.len() {
                0 => Value::Empty,
                1 => as_value(cells[0]),
                _ => {
                    let any_text = cells.iter().any(|c| matches!(c, C::T(_)));
                    Value::List(
                        cells
                            .iter()
                            .map(|c| match c {
                                C::N(_, raw) if any_text => Value::Text(raw.clone()),
                                other => as_value(other),
                            })
                            .collect(),
                    )
                }
            })
        }
        Proj::Agg(Agg::Count, None) => Ok(Value::Number(rows.len() as f64)),
        Proj::Agg(a, Some(c)) => {
            let ci = col(c)?;
            let present: Vec<&C> = rows.iter().map(|&r| &grid[r][ci]).filter(|c| **c != C::E).collect();
            if *a == Agg::Count {
                return Ok(Value::Number(present.len() as f64));
            }
            if present.is_empty() {
                return Ok(Value::Empty);
            }
            let nums: Vec<f64> = present.iter().filter_map(|c| if let C::N(v, _) = c { Some(*v) } else { None }).collect();
            let all_num = nums.len() == present.len();
            match a {
                Agg::Sum | Agg::Avg => {
                    if !all_num {
                        return Err(());
                    }
                    let mut s = 0.0;
                    for v in &nums {
                        s += v;
                    }
                    Ok(Value::Number(if *a == Agg::Sum { s } else { s / nums.len() as f64 }))
                }
                _ if all_num => {
                    let mut best = nums[0];
                    for &v in &nums[1..] {
                        if (*a == Agg::Min && v < best) || (*a == Agg::Max && v > best) {
                            best = v;
                        }
                    }
                    Ok(Value::Number(best))
                }
                _ if !nums.is_empty() => Err(()),
                _ => {
                    let mut best = present[0];
                    for c in &present[1..] {
                        let (x, y) = (raw_text(c).to_lowercase(), raw_text(best).to_lowercase());
                        if (*a == Agg::Min && x < y) || (*a == Agg::Max && x > y) {
                            best = c;
                        }
                    }
                    Ok(as_value(best))
                }
            }
        }
        Proj::Agg(_, None) => Err(()),
    }
}

fn random_cell(rng: &mut impl RngCore, kind: u8) -> String {
    if rng.random_bool(0.15) {
        return String::new();
    }
    let num = |rng: &mut dyn RngCore| {
        let v: i64 = rng.random_range(-5..=20);
        if rng.random_bool(0.2) {
            format!("{v}.5")
        } else {
            v.to_string()
        }
    };
    match kind {
        0 => num(rng),
        1 => WORDS[rng.random_range(0..WORDS.len())].to_string(),
        _ if rng.random_bool(0.5) => num(rng),
        _ => WORDS[rng.random_range(0..WORDS.len())].to_string(),
    }
}

fn random_lit(rng: &mut impl RngCore) -> Lit {
    match rng.random_range(0..10) {
        0..=4 => Lit::Num(rng.random_range(-5..=20) as f64 + if rng.random_bool(0.2) { 0.5 } else { 0.0 }),
        5 => Lit::Str(rng.random_range(0..20).to_string()),
        _ => Lit::Str(WORDS[rng.random_range(0..WORDS.len())].to_string()),
    }
}

pub fn random_table(rng: &mut impl RngCore, max_cols: usize, max_rows: usize) -> RawTable {
    let n_cols = rng.random_range(1..=max_cols);
    let n_rows = rng.random_range(0..=max_rows);
    // column kinds: 0 numeric, 1 text, 2 mixed
    let kinds: Vec<u8> = (0..n_cols).map(|_| rng.random_range(0..3)).collect();
    RawTable {
        headers: COLUMN_NAMES[..n_cols].iter().map(|s| s.to_string()).collect(),
        cells: (0..n_rows).map(|_| kinds.iter().map(|&k| random_cell(rng, k)).collect()).collect(),
    }
}

pub fn random_query(rng: &mut impl RngCore, t: &RawTable) -> RawQuery {
    // occasionally reference a column the table lacks
    let pick = |rng: &mut dyn RngCore| -> String {
        if rng.random_bool(0.03) {
            "missing".to_string()
        } else {
            let c = &t.headers[rng.random_range(0..t.headers.len())];
            if rng.random_bool(0.2) {
                c.to_uppercase()
            } else {
                c.clone()
            }
        }
    };
    let proj = if rng.random_bool(0.5) {
        Proj::Col(pick(rng))
    } else {
        let a = [Agg::Count, Agg::Sum, Agg::Avg, Agg::Min, Agg::Max][rng.random_range(0..5)];
        if a == Agg::Count && rng.random_bool(0.3) {
            Proj::Agg(a, None)
        } else {
            Proj::Agg(a, Some(pick(rng)))
        }
    };
    let ops = [Op::Eq, Op::Ne, Op::Lt, Op::Le, Op::Gt, Op::Ge, Op::Contains];
    let preds = (0..rng.random_range(0..=2))
        .map(|_| (pick(rng), ops[rng.random_range(0..ops.len())], random_lit(rng)))
        .collect();
    let order = rng.random_bool(0.4).then(|| (pick(rng), rng.random_bool(0.5)));
    let limit = rng.random_bool(0.3).then(|| rng.random_range(1..=4));
    RawQuery { proj, preds, order, limit }
}

/// Brute-force top-p: sort ids by (-p, id), take the shortest prefix whose
/// mass reaches `p`, renormalize.
pub fn brute_top_p(probs: &[f64], p: f64) -> Vec<f64> {
    let mut ids: Vec<usize> = (0..probs.len()).collect();
    ids.sort_by(|&a, &b| probs[b].partial_cmp(&probs[a]).unwrap().then(a.cmp(&b)));
    let mut keep = Vec::new();
    let mut mass = 0.0;
    for &i in &ids {
        keep.push(i);
        mass += probs[i];
        if mass >= p - 1e-12 {
            break;
        }
    }
    let total: f64 = keep.iter().map(|&i| probs[i]).sum();
    let mut out = vec![0.0; probs.len()];
    for &i in &keep {
        out[i] = probs[i] / total;
    }
    out
}

/// Reward by counting membership over an explicit universe.
pub fn brute_reward(universe: usize, pred: &BTreeSet<usize>, gold: &BTreeSet<usize>, l: (f64, f64, f64)) -> f64 {
    let (mut hit, mut type_one, mut type_two) = (0u32, 0u32, 0u32);
    for i in 0..universe {
        match (pred.contains(&i), gold.contains(&i)) {
            (true, true) => hit += 1,
            (true, false) => type_one += 1,
            (false, true) => type_two += 1,
            _ => {}
        }
    }
    l.0 * f64::from(hit) + l.1 * f64::from(type_one) + l.2 * f64::from(type_two)
}

/// Recall and precision by membership counting.
pub fn brute_recall_precision(universe: usize, pred: &BTreeSet<usize>, gold: &BTreeSet<usize>) -> (f64, f64) {
    let (mut hit, mut np, mut ng) = (0usize, 0usize, 0usize);
    for i in 0..universe {
        let (p, g) = (pred.contains(&i), gold.contains(&i));
        hit += usize::from(p && g);
        np += usize::from(p);
        ng += usize::from(g);
    }
    let recall = if ng == 0 { 1.0 } else { hit as f64 / ng as f64 };
    let precision = if np == 0 { 1.0 } else { hit as f64 / np as f64 };
    (recall, precision)
}

pub fn subset_from_bits(bits: u32, universe: usize) -> BTreeSet<usize> {
    (0..universe).filter(|i| bits >> i & 1 == 1).collect()
}
