mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;
use tabreduce::eval::set_scores;
use tabreduce::prompt::{parse_generation, render_generation, render_row, render_row_prompts, PromptBudget, Stage};
use tabreduce::reward::{set_reward, top_p_mask, MaskConfig, RewardConfig};
use tabreduce::sql::run_sql;
use tabreduce::{answers_equal, apply_mask, token_count, ItemMask, Table, Value};

fn arb_table() -> impl Strategy<Value = Table> {
    (1usize..6, 0usize..8).prop_flat_map(|(c, r)| {
        prop::collection::vec(prop::collection::vec("[a-z0-9]{0,3}( [a-z]{1,2})?", c), r).prop_map(move |rows| {
            let headers: Vec<String> = (0..c).map(|i| format!("h{i}")).collect();
            let h: Vec<&str> = headers.iter().map(String::as_str).collect();
            let rr: Vec<Vec<&str>> = rows.iter().map(|r| r.iter().map(String::as_str).collect()).collect();
            let rs: Vec<&[&str]> = rr.iter().map(Vec::as_slice).collect();
            Table::from_strings("p", &h, &rs)
        })
    })
}

fn arb_mask(t: &Table) -> impl Strategy<Value = ItemMask> {
    let (c, r) = (t.n_columns(), t.n_rows());
    (prop::collection::btree_set(0..c, 1..=c), prop::collection::btree_set(0..r.max(1), 0..=r))
        .prop_map(move |(cols, rows)| ItemMask { columns: cols, rows: rows.into_iter().filter(|&x| x < r).collect() })
}

fn arb_value() -> impl Strategy<Value = Value> {
    let leaf = prop_oneof![
        (-1e6f64..1e6).prop_map(Value::Number),
        "[ A-Za-z0-9]{0,6}".prop_map(Value::Text),
        Just(Value::Empty),
    ];
    leaf.prop_recursive(2, 8, 4, |inner| prop::collection::vec(inner, 0..4).prop_map(Value::List))
}

fn distribution() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, 2..30).prop_filter_map("positive mass", |w| {
        let s: f64 = w.iter().sum();
        (s > 1e-6).then(|| w.iter().map(|x| x / s).collect())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn lifted_mask_composes(
        (t, outer) in arb_table().prop_flat_map(|t| { let m = arb_mask(&t); (Just(t), m) }),
        seed in any::<u64>(),
    ) {
        let reduced = apply_mask(&t, &outer).unwrap();
        // pick an inner mask in reduced coordinates from the seed bits
        let inner = ItemMask {
            columns: (0..reduced.n_columns()).filter(|i| i == &0 || seed >> i & 1 == 1).collect(),
            rows: (0..reduced.n_rows()).filter(|i| seed >> (8 + i) & 1 == 1).collect(),
        };
        let lifted = outer.lift(&inner);
        prop_assert_eq!(apply_mask(&reduced, &inner).unwrap(), apply_mask(&t, &lifted).unwrap());
        prop_assert!(lifted.columns.is_subset(&outer.columns));
        prop_assert!(lifted.rows.is_subset(&outer.rows));
    }

    #[test]
    fn masking_never_adds_tokens(
        (t, m) in arb_table().prop_flat_map(|t| { let m = arb_mask(&t); (Just(t), m) })
    ) {
        prop_assert!(token_count(&apply_mask(&t, &m).unwrap()) <= token_count(&t));
        prop_assert_eq!(apply_mask(&t, &t.full_mask()).unwrap(), t);
    }

    #[test]
    fn extra_predicate_never_grows_count(t in arb_table(), lit in "[a-z0-9]{1,2}") {
        let all = run_sql("SELECT count(*)", &t).unwrap();
        let some = run_sql(&format!("SELECT count(*) WHERE h0 CONTAINS '{lit}'"), &t).unwrap();
        let (Value::Number(a), Value::Number(s)) = (all, some) else { panic!("counts are numbers") };
        prop_assert!(s <= a);
    }

    #[test]
    fn answer_equality_is_reflexive_and_symmetric(a in arb_value(), b in arb_value()) {
        prop_assert!(answers_equal(&a, &a));
        prop_assert_eq!(answers_equal(&a, &b), answers_equal(&b, &a));
    }

    #[test]
    fn reward_matches_counting(pred in 0u32..256, gold in 0u32..256) {
        let (p, g) = (common::subset_from_bits(pred, 8), common::subset_from_bits(gold, 8));
        let cfg = RewardConfig::default();
        let want = common::brute_reward(8, &p, &g, (cfg.lambda_p, cfg.lambda_n1, cfg.lambda_n2));
        prop_assert!((set_reward(&p, &g, &cfg) - want).abs() < 1e-12);
        if p != g {
            prop_assert!(set_reward(&p, &g, &cfg) < set_reward(&g, &g, &cfg));
        }
    }

    #[test]
    fn top_p_matches_sorted_prefix(probs in distribution(), p in prop_oneof![Just(0.5), Just(0.9), Just(1.0), 0.01f64..1.0]) {
        let got = top_p_mask(&probs, &MaskConfig::new(p).unwrap()).unwrap();
        let want = common::brute_top_p(&probs, p);
        for (g, w) in got.iter().zip(&want) {
            prop_assert!((g - w).abs() < 1e-12, "{got:?} vs {want:?}");
        }
    }

    #[test]
    fn generation_round_trips(
        (t, m) in arb_table().prop_flat_map(|t| { let m = arb_mask(&t); (Just(t), m) })
    ) {
        // distinct headers make column names unambiguous
        let cols = parse_generation(&render_generation(&m, &t, Stage::Column), &t, Stage::Column);
        prop_assert_eq!(&cols.mask.columns, &m.columns);
        let rows = parse_generation(&render_generation(&m, &t, Stage::Row), &t, Stage::Row);
        prop_assert_eq!(&rows.mask.rows, &m.rows);
        prop_assert_eq!(cols.unknown + rows.unknown, 0);
    }

    #[test]
    fn chunks_cover_every_row_once(t in arb_table(), budget in 40usize..120) {
        let Ok(prompts) = render_row_prompts("q?", &t, PromptBudget::new(budget).unwrap()) else {
            return Ok(());
        };
        let joined = prompts.join("\n");
        let mut pos = 0;
        for r in 0..t.n_rows() {
            let row = render_row(&t, r);
            let at = joined[pos..].find(&row).map(|i| i + pos);
            prop_assert!(at.is_some(), "row {r} missing or out of order");
            pos = at.unwrap() + row.len();
        }
        for p in &prompts {
            prop_assert!(p.split_whitespace().count() <= budget);
        }
    }

    #[test]
    fn scores_match_counting(pred in 0u32..1024, gold in 0u32..1024) {
        let (p, g): (BTreeSet<usize>, BTreeSet<usize>) = (common::subset_from_bits(pred, 10), common::subset_from_bits(gold, 10));
        let s = set_scores(&p, &g);
        let (r, pr) = common::brute_recall_precision(10, &p, &g);
        prop_assert_eq!((s.recall, s.precision), (r, pr));
    }
}
