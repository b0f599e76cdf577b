mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tabreduce::sql::run_sql;

#[test]
fn engine_matches_row_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut errors = 0;
    for case in 0..5000 {
        let raw = common::random_table(&mut rng, 6, 6);
        let q = common::random_query(&mut rng, &raw);
        let sql = q.render();
        let got = run_sql(&sql, &raw.to_table()).map_err(|_| ());
        let want = common::brute_force(&raw, &q);
        errors += usize::from(want.is_err());
        assert_eq!(got, want, "case {case}: {sql}\n{raw:?}");
    }
    // the generator exercises error paths without being dominated by them
    assert!(errors > 100 && errors < 2500, "{errors} error cases");
}
