use super::{EventLog, Trace};
use crate::error::{Error, Result};

/// Orders traces by arrival time (ties by id) and cuts the sequence into
/// contiguous train/validation/test parts. Train and validation sizes are
/// `round(n·f)`; the test part takes the remainder. Every part must be
/// non-empty.
pub fn chronological_split(
    log: &EventLog,
    fractions: (f64, f64, f64),
) -> Result<(EventLog, EventLog, EventLog)> {
    let (f_train, f_val, f_test) = fractions;
    if [f_train, f_val, f_test].iter().any(|f| !(f.is_finite() && *f > 0.0)) {
        return Err(Error::Split("fractions must be positive".into()));
    }
    if ((f_train + f_val + f_test) - 1.0).abs() > 1e-9 {
        return Err(Error::Split("fractions must sum to 1".into()));
    }
    let n = log.len();
    if n < 3 {
        return Err(Error::Split(format!("need at least 3 traces, got {n}")));
    }
    let n_train = (n as f64 * f_train).round() as usize;
    let n_val = (n as f64 * f_val).round() as usize;
    if n_train == 0 || n_val == 0 || n_train + n_val >= n {
        return Err(Error::Split(format!(
            "sizes ({n_train}, {n_val}, rest) leave an empty part of {n} traces"
        )));
    }

    let mut sorted: Vec<Trace> = log.traces().to_vec();
    sorted.sort_by(|a, b| a.start().cmp(&b.start()).then_with(|| a.id.cmp(&b.id)));
    let test = sorted.split_off(n_train + n_val);
    let val = sorted.split_off(n_train);
    let wrap = |traces| -> Result<EventLog> {
        let mut l = EventLog::new(traces)?;
        l.meta = log.meta.clone();
        Ok(l)
    };
    Ok((wrap(sorted)?, wrap(val)?, wrap(test)?))
}

#[cfg(test)]
mod tests {
    use super::super::testutil::trace;
    use super::*;

    fn log_of(n: usize) -> EventLog {
        EventLog::new(
            (0..n)
                .map(|i| trace(&format!("t{i:04}"), &[("A", (n - i) as i64 * 10)]))
                .collect(),
        )
        .unwrap()
    }

    fn sizes(n: usize) -> (usize, usize, usize) {
        let (a, b, c) = chronological_split(&log_of(n), (0.7, 0.1, 0.2)).unwrap();
        (a.len(), b.len(), c.len())
    }

    #[test]
    fn split_sizes() {
        assert_eq!(sizes(10), (7, 1, 2));
        // 782·0.7 = 547.4, 782·0.1 = 78.2, remainder 157
        assert_eq!(sizes(782), (547, 78, 157));
    }

    #[test]
    fn parts_are_chronological() {
        let (train, val, test) = chronological_split(&log_of(10), (0.7, 0.1, 0.2)).unwrap();
        let last_train = train.traces().iter().map(Trace::start).max().unwrap();
        assert!(val.traces().iter().all(|t| t.start() >= last_train));
        assert!(test.traces().iter().all(|t| t.start() >= val.traces()[0].start()));
    }

    #[test]
    fn ties_broken_by_id() {
        let log = EventLog::new(vec![
            trace("c", &[("A", 0)]),
            trace("a", &[("A", 0)]),
            trace("b", &[("A", 0)]),
            trace("d", &[("A", 0)]),
        ])
        .unwrap();
        let (train, val, test) = chronological_split(&log, (0.5, 0.25, 0.25)).unwrap();
        let ids: Vec<_> = [train, val, test]
            .iter()
            .flat_map(|l| l.traces().iter().map(|t| t.id.clone()).collect::<Vec<_>>())
            .collect();
        assert_eq!(ids, vec!["a", "b", "c", "d"]);
    }

    #[test]
    fn too_small_or_bad_fractions() {
        assert!(matches!(
            chronological_split(&log_of(2), (0.7, 0.1, 0.2)),
            Err(Error::Split(_))
        ));
        assert!(chronological_split(&log_of(10), (0.7, 0.2, 0.2)).is_err());
        assert!(chronological_split(&log_of(10), (0.9, 0.0, 0.1)).is_err());
    }
}
