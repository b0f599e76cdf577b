use std::fmt;

use serde::de::{self, Deserializer, SeqAccess, Visitor};
use serde::ser::{SerializeSeq, Serializer};
use serde::{Deserialize, Serialize};

use crate::table::{format_number, parse_number};

/// Absolute tolerance for numeric answer equality.
pub const NUMERIC_TOLERANCE: f64 = 1e-9;

/// A query answer. Serialized to JSON as number, string, null or array.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Number(f64),
    Text(String),
    Empty,
    List(Vec<Value>),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Number(n) => f.write_str(&format_number(*n)),
            Value::Text(s) => f.write_str(s),
            Value::Empty => Ok(()),
            Value::List(items) => {
                for (i, v) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{v}")?;
                }
                Ok(())
            }
        }
    }
}

/// Answer equality: text after trim + case-fold, numbers within
/// [`NUMERIC_TOLERANCE`], number against numeric-looking text numerically,
/// lists element-wise in order. Empty equals only empty.
pub fn answers_equal(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Empty, Value::Empty) => true,
        (Value::Empty, _) | (_, Value::Empty) => false,
        (Value::Number(x), Value::Number(y)) => (x - y).abs() <= NUMERIC_TOLERANCE,
        (Value::Number(x), Value::Text(t)) | (Value::Text(t), Value::Number(x)) => {
            parse_number(t).is_some_and(|y| (x - y).abs() <= NUMERIC_TOLERANCE)
        }
        (Value::Text(s), Value::Text(t)) => s.trim().to_lowercase() == t.trim().to_lowercase(),
        (Value::List(xs), Value::List(ys)) => {
            xs.len() == ys.len() && xs.iter().zip(ys).all(|(x, y)| answers_equal(x, y))
        }
        (Value::List(_), _) | (_, Value::List(_)) => false,
    }
}

impl Serialize for Value {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Value::Number(n) if n.fract() == 0.0 && n.abs() < 9e15 => s.serialize_i64(*n as i64),
            Value::Number(n) => s.serialize_f64(*n),
            Value::Text(t) => s.serialize_str(t),
            Value::Empty => s.serialize_none(),
            Value::List(items) => {
                let mut seq = s.serialize_seq(Some(items.len()))?;
                for v in items {
                    seq.serialize_element(v)?;
                }
                seq.end()
            }
        }
    }
}

impl<'de> Deserialize<'de> for Value {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Value, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = Value;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a number, string, null or array")
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Value, E> {
                Ok(Value::Number(v as f64))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Value, E> {
                Ok(Value::Number(v as f64))
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Value, E> {
                Ok(Value::Number(v))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<Value, E> {
                Ok(Value::Text(v.to_string()))
            }
            fn visit_unit<E: de::Error>(self) -> Result<Value, E> {
                Ok(Value::Empty)
            }
            fn visit_none<E: de::Error>(self) -> Result<Value, E> {
                Ok(Value::Empty)
            }
            fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<Value, A::Error> {
                let mut items = Vec::new();
                while let Some(v) = seq.next_element()? {
                    items.push(v);
                }
                Ok(Value::List(items))
            }
        }
        d.deserialize_any(V)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn text(s: &str) -> Value {
        Value::Text(s.into())
    }

    #[test]
    fn case_fold_and_trim() {
        assert!(answers_equal(&text("Athens"), &text("athens")));
        assert!(answers_equal(&text("  athens "), &text("ATHENS")));
        assert!(!answers_equal(&text("athens"), &text("beijing")));
    }

    #[test]
    fn numeric_tolerance() {
        assert!(answers_equal(&Value::Number(2.0), &Value::Number(2.0 + 1e-10)));
        assert!(!answers_equal(&Value::Number(2.0), &Value::Number(2.0 + 1e-6)));
        assert!(answers_equal(&Value::Number(1000.0), &text("1,000")));
        assert!(answers_equal(&text("2.0"), &Value::Number(2.0)));
        assert!(!answers_equal(&text("two"), &Value::Number(2.0)));
    }

    #[test]
    fn empty_and_lists() {
        assert!(answers_equal(&Value::Empty, &Value::Empty));
        assert!(!answers_equal(&Value::Empty, &text("")));
        assert!(!answers_equal(&Value::Number(0.0), &Value::Empty));
        let a = Value::List(vec![text("A"), Value::Number(1.0)]);
        let b = Value::List(vec![text("a"), text("1")]);
        assert!(answers_equal(&a, &b));
        let c = Value::List(vec![Value::Number(1.0), text("a")]);
        assert!(!answers_equal(&a, &c));
        assert!(!answers_equal(&Value::List(vec![text("a")]), &text("a")));
    }

    #[test]
    fn json_round_trip() {
        let v = Value::List(vec![Value::Number(2004.0), Value::Number(0.5), text("x"), Value::Empty]);
        let s = serde_json::to_string(&v).unwrap();
        assert_eq!(s, r#"[2004,0.5,"x",null]"#);
        assert_eq!(serde_json::from_str::<Value>(&s).unwrap(), v);
    }
}
