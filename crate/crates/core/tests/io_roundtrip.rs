use chrono::{TimeZone, Utc};
use proptest::prelude::*;

use condgen::eventlog::{read_csv, read_xes, write_csv, write_xes, ColumnMap, Event, EventLog, Trace};

fn arb_trace(i: usize) -> impl Strategy<Value = Trace> {
    (
        prop::collection::vec(("[A-Za-z][A-Za-z &<>\"'_-]{0,7}", 0i64..5_000_000), 1..6),
        0i64..1_000_000_000,
        "[a-z]{1,4}",
        -1e6f64..1e6,
    )
        .prop_map(move |(evs, start_ms, cat, num)| {
            let mut t = start_ms;
            let events = evs
                .into_iter()
                .map(|(a, gap_ms)| {
                    t += gap_ms;
                    Event::new(a, Utc.timestamp_millis_opt(1_500_000_000_000 + t).unwrap())
                })
                .collect();
            Trace::new(format!("case {i}"), events)
                .with_cat("channel", cat)
                .with_num("amount", num)
        })
}

fn arb_log() -> impl Strategy<Value = EventLog> {
    (1usize..6)
        .prop_flat_map(|n| (0..n).map(arb_trace).collect::<Vec<_>>())
        .prop_map(|traces| EventLog::new(traces).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn xes_round_trip(log in arb_log()) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("log.xes");
        write_xes(&log, &p).unwrap();
        let back = read_xes(&p, false).unwrap();
        prop_assert_eq!(back.traces(), log.traces());
    }

    #[test]
    fn csv_round_trip(log in arb_log()) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("log.csv");
        write_csv(&log, &p).unwrap();
        let map = ColumnMap {
            categorical: vec!["channel".into()],
            numerical: vec!["amount".into()],
            ..ColumnMap::default()
        };
        let back = read_csv(&p, &map).unwrap();
        prop_assert_eq!(back.traces(), log.traces());
    }
}
