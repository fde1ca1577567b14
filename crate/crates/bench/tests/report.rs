use beliefgrasp::sim::{Strategy, TrialRecord};
use beliefgrasp_bench::report::{Stat, TABLES};
use beliefgrasp_bench::run::{parse_jsonl, write_jsonl};
use beliefgrasp_bench::BenchSummary;

fn rec(object: &str, s: Strategy, views: usize, iterations: usize, success: bool, kl: &[f64]) -> TrialRecord {
    TrialRecord {
        object: object.into(),
        strategy: Some(s),
        views,
        coverage: 0.25,
        iterations,
        success,
        first_attempt_success: success && iterations == 1,
        kl_per_contact: kl.to_vec(),
        ..Default::default()
    }
}

fn log() -> Vec<TrialRecord> {
    vec![
        rec("jug", Strategy::Bsp, 1, 1, true, &[]),
        rec("jug", Strategy::Bsp, 1, 2, true, &[0.5]),
        rec("jug", Strategy::Bsp, 1, 4, false, &[0.1, 0.3, 0.2]),
        rec("jug", Strategy::Ir3ne, 1, 3, true, &[1.0, 2.0]),
    ]
}

#[test]
fn stats_match_hand_computation() {
    let s = BenchSummary::from_records(&log()).unwrap();
    let bsp = s.row("jug", "bsp", 1).unwrap();
    // Iterations 1, 2, 4: mean 7/3, variance 14/9.
    assert!((bsp.iterations.mean - 7.0 / 3.0).abs() < 1e-12);
    assert!((bsp.iterations.std - 14f64.sqrt() / 3.0).abs() < 1e-12);
    assert_eq!(bsp.iterations.n, 3);
    // KL pooled over updates: 0.5, 0.1, 0.3, 0.2.
    assert!((bsp.kl.mean - 0.275).abs() < 1e-12);
    assert!((bsp.kl.std - 0.021875f64.sqrt()).abs() < 1e-12);
    assert_eq!(bsp.kl.n, 4);
    assert!((bsp.success.mean - 2.0 / 3.0).abs() < 1e-12);
    assert!((bsp.first_attempt.mean - 1.0 / 3.0).abs() < 1e-12);
    assert!((bsp.coverage_pct - 25.0).abs() < 1e-12);

    let ir = s.row("jug", "ir3ne", 1).unwrap();
    assert_eq!(ir.iterations, Stat { mean: 3.0, std: 0.0, n: 1 });
    assert!(s.row("jug", "prm", 1).is_none());
}

#[test]
fn empty_inputs() {
    assert!(BenchSummary::from_records(&[]).is_err());
    let s = Stat::of(&[]);
    assert_eq!(s.n, 0);
    assert!(s.mean.is_nan());
    let s = BenchSummary::from_records(&[rec("jug", Strategy::Prm, 1, 1, false, &[])]).unwrap();
    assert_eq!(s.rows[0].kl.n, 0);
}

#[test]
fn tables_have_one_row_per_cell() {
    let s = BenchSummary::from_records(&log()).unwrap();
    for t in TABLES {
        let csv = s.table(t).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("object,strategy,coverage_pct,mean,std,n"));
        let rows: Vec<_> = lines.collect();
        assert_eq!(rows.len(), 2);
        assert!(rows[0].starts_with("jug,bsp,25.00,"));
        assert!(rows[0].ends_with(if t == "kl" { ",4" } else { ",3" }));
    }
    assert!(s.table("latency").is_err());
}

#[test]
fn log_round_trip_preserves_summary() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trials.jsonl");
    write_jsonl(&log(), &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 4);
    let back = parse_jsonl(&text).unwrap();
    assert_eq!(back, log());
    assert_eq!(BenchSummary::from_records(&back).unwrap(), BenchSummary::from_records(&log()).unwrap());
    assert!(parse_jsonl("{not json}\n").is_err());
}

proptest::proptest! {
    #[test]
    fn stat_is_shift_equivariant(v in proptest::collection::vec(-10.0f64..10.0, 1..40), c in -5.0f64..5.0) {
        let a = Stat::of(&v);
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        proptest::prop_assert!(a.mean >= lo - 1e-12 && a.mean <= hi + 1e-12);
        proptest::prop_assert!(a.std >= 0.0);
        let b = Stat::of(&v.iter().map(|x| x + c).collect::<Vec<_>>());
        proptest::prop_assert!((b.mean - a.mean - c).abs() < 1e-9);
        proptest::prop_assert!((b.std - a.std).abs() < 1e-9);
        proptest::prop_assert_eq!(b.n, v.len());
    }
}

#[test]
fn one_record_gives_single_rows_with_zero_spread() {
    let s = BenchSummary::from_records(&[rec("jug", Strategy::Bsp, 1, 2, true, &[0.4])]).unwrap();
    assert_eq!(s.rows.len(), 1);
    let r = &s.rows[0];
    for st in [&r.iterations, &r.kl, &r.success, &r.first_attempt] {
        assert_eq!((st.n, st.std), (1, 0.0));
    }
    assert_eq!(r.iterations.mean, 2.0);
    for t in TABLES {
        assert_eq!(s.table(t).unwrap().lines().count(), 2);
    }
}
