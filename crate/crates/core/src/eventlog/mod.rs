//! Event logs: traces of timestamped activities plus static trace attributes.
//!
//! An [`EventLog`] is immutable once built. Constructing one through
//! [`EventLog::new`] sorts every trace's events by timestamp (stable, so
//! simultaneous events keep their recorded order) and derives the activity
//! alphabet from the traces.

mod csv_io;
mod filter;
mod labeler;
mod split;
mod xes;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use csv_io::{read_csv, write_csv, ColumnMap};
pub use filter::TraceFilter;
pub use labeler::{apply_labeler, remove_attribute, LabelerSpec};
pub use split::chronological_split;
pub use xes::{read_xes, write_xes};

pub type Timestamp = DateTime<Utc>;

/// Ordered activity labels of a trace, ignoring time and attributes.
pub type Variant = Vec<String>;

/// Categorical value marking a trace that satisfies a conditional labeling.
pub const TRUE_LABEL: &str = "True";
/// Categorical value marking a trace that does not satisfy a labeling.
pub const FALSE_LABEL: &str = "False";

pub fn bool_label(value: bool) -> &'static str {
    if value {
        TRUE_LABEL
    } else {
        FALSE_LABEL
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub activity: String,
    pub timestamp: Timestamp,
}

impl Event {
    pub fn new(activity: impl Into<String>, timestamp: Timestamp) -> Self {
        Event {
            activity: activity.into(),
            timestamp,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub id: String,
    pub events: Vec<Event>,
    pub attrs_cat: BTreeMap<String, String>,
    pub attrs_num: BTreeMap<String, f64>,
}

impl Trace {
    pub fn new(id: impl Into<String>, events: Vec<Event>) -> Self {
        Trace {
            id: id.into(),
            events,
            attrs_cat: BTreeMap::new(),
            attrs_num: BTreeMap::new(),
        }
    }

    pub fn with_cat(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.attrs_cat.insert(key.into(), value.into());
        self
    }

    pub fn with_num(mut self, key: impl Into<String>, value: f64) -> Self {
        self.attrs_num.insert(key.into(), value);
        self
    }

    /// Timestamp of the first event (the trace arrival time).
    pub fn start(&self) -> Timestamp {
        self.events[0].timestamp
    }

    pub fn end(&self) -> Timestamp {
        self.events[self.events.len() - 1].timestamp
    }

    pub fn cycle_time_secs(&self) -> f64 {
        secs_between(self.start(), self.end())
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn variant(&self) -> Variant {
        variant_of(self)
    }

    pub fn has_attr(&self, name: &str) -> bool {
        self.attrs_cat.contains_key(name) || self.attrs_num.contains_key(name)
    }
}

/// Signed difference `later - earlier` in (fractional) seconds.
pub fn secs_between(earlier: Timestamp, later: Timestamp) -> f64 {
    let d = later - earlier;
    d.num_seconds() as f64 + f64::from(d.subsec_nanos()) * 1e-9
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventLog {
    traces: Vec<Trace>,
    activity_alphabet: BTreeSet<String>,
    /// Free-form provenance (seed, checkpoint, source file).
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

impl EventLog {
    /// Validates and normalizes `traces`: events are stably sorted by time,
    /// every trace must be non-empty with non-empty activity labels and
    /// finite numerical attributes, and trace ids must be unique.
    pub fn new(mut traces: Vec<Trace>) -> Result<Self> {
        let mut ids = BTreeSet::new();
        let mut alphabet = BTreeSet::new();
        for trace in &mut traces {
            if trace.events.is_empty() {
                return Err(Error::Validation(format!("trace `{}` has no events", trace.id)));
            }
            if !ids.insert(trace.id.clone()) {
                return Err(Error::Validation(format!("duplicate trace id `{}`", trace.id)));
            }
            for (k, v) in &trace.attrs_num {
                if !v.is_finite() {
                    return Err(Error::Validation(format!(
                        "trace `{}` numerical attribute `{k}` is not finite",
                        trace.id
                    )));
                }
            }
            trace.events.sort_by_key(|e| e.timestamp);
            for e in &trace.events {
                if e.activity.is_empty() {
                    return Err(Error::Validation(format!(
                        "trace `{}` has an event with an empty activity",
                        trace.id
                    )));
                }
                if !alphabet.contains(&e.activity) {
                    alphabet.insert(e.activity.clone());
                }
            }
        }
        Ok(EventLog {
            traces,
            activity_alphabet: alphabet,
            meta: BTreeMap::new(),
        })
    }

    pub fn empty() -> Self {
        EventLog {
            traces: Vec::new(),
            activity_alphabet: BTreeSet::new(),
            meta: BTreeMap::new(),
        }
    }

    pub fn traces(&self) -> &[Trace] {
        &self.traces
    }

    pub fn into_traces(self) -> Vec<Trace> {
        self.traces
    }

    pub fn activity_alphabet(&self) -> &BTreeSet<String> {
        &self.activity_alphabet
    }

    pub fn len(&self) -> usize {
        self.traces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.meta.insert(key.into(), value.into());
        self
    }

    /// Earliest event timestamp in the log.
    pub fn first_timestamp(&self) -> Option<Timestamp> {
        self.traces.iter().map(Trace::start).min()
    }

    /// Concatenates several logs. Trace ids must remain unique.
    pub fn concat<'a>(logs: impl IntoIterator<Item = &'a EventLog>) -> Result<EventLog> {
        let traces = logs
            .into_iter()
            .flat_map(|l| l.traces.iter().cloned())
            .collect();
        EventLog::new(traces)
    }

    /// Keeps the traces accepted by every filter.
    pub fn filtered(&self, filters: &[TraceFilter]) -> Result<EventLog> {
        let kept = self
            .traces
            .iter()
            .filter(|t| filters.iter().all(|f| f.accepts(t)))
            .cloned()
            .collect();
        let mut log = EventLog::new(kept)?;
        log.meta = self.meta.clone();
        Ok(log)
    }

    pub fn summary(&self, condition_attr: Option<&str>) -> Result<LogSummary> {
        LogSummary::of(self, condition_attr)
    }
}

pub fn variant_of(trace: &Trace) -> Variant {
    trace.events.iter().map(|e| e.activity.clone()).collect()
}

pub fn variant_set(log: &EventLog) -> BTreeSet<Variant> {
    log.traces().iter().map(variant_of).collect()
}

/// Fraction of traces whose `attr_name` attribute is `True`.
pub fn conditional_ratio(log: &EventLog, attr_name: &str) -> Result<f64> {
    if log.is_empty() {
        return Err(Error::Empty("conditional ratio of an empty log".into()));
    }
    let mut positives = 0usize;
    for trace in log.traces() {
        match trace.attrs_cat.get(attr_name) {
            Some(v) if v == TRUE_LABEL => positives += 1,
            Some(_) => {}
            None => {
                return Err(Error::MissingAttribute {
                    trace: trace.id.clone(),
                    attr: attr_name.to_string(),
                })
            }
        }
    }
    Ok(positives as f64 / log.len() as f64)
}

/// Dataset description row: trace, variant and activity counts, mean
/// trace length, mean cycle time and (optionally) the conditional ratio.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogSummary {
    pub traces: usize,
    pub variants: usize,
    pub activities: usize,
    pub avg_length: f64,
    pub avg_cycle_time_days: f64,
    pub conditional_ratio: Option<f64>,
}

impl LogSummary {
    fn of(log: &EventLog, condition_attr: Option<&str>) -> Result<Self> {
        if log.is_empty() {
            return Err(Error::Empty("summary of an empty log".into()));
        }
        let n = log.len() as f64;
        let avg_length = log.traces().iter().map(|t| t.len() as f64).sum::<f64>() / n;
        let avg_cycle = log.traces().iter().map(Trace::cycle_time_secs).sum::<f64>() / n;
        let conditional_ratio = condition_attr
            .map(|a| conditional_ratio(log, a))
            .transpose()?;
        Ok(LogSummary {
            traces: log.len(),
            variants: variant_set(log).len(),
            activities: log.activity_alphabet().len(),
            avg_length,
            avg_cycle_time_days: avg_cycle / 86_400.0,
            conditional_ratio,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogFormat {
    Xes,
    Csv,
}

impl LogFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "xes" => Some(LogFormat::Xes),
            "csv" => Some(LogFormat::Csv),
            _ => None,
        }
    }
}

/// Format-specific reading options.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParseOptions {
    /// Required for CSV input.
    #[serde(default)]
    pub column_map: Option<ColumnMap>,
    /// XES only: append `-<lifecycle:transition>` to each activity label.
    #[serde(default)]
    pub concat_lifecycle: bool,
}

pub fn parse_log(path: &Path, format: LogFormat, options: &ParseOptions) -> Result<EventLog> {
    match format {
        LogFormat::Xes => read_xes(path, options.concat_lifecycle),
        LogFormat::Csv => {
            let map = options.column_map.as_ref().ok_or_else(|| {
                Error::Validation("CSV input requires a column map".to_string())
            })?;
            read_csv(path, map)
        }
    }
}

/// Parses ISO-8601 / RFC 3339 instants. Values without an offset are UTC.
pub fn parse_timestamp(s: &str) -> Option<Timestamp> {
    use chrono::{NaiveDate, NaiveDateTime};
    let s = s.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.with_timezone(&Utc));
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f%:z", "%Y-%m-%d %H:%M:%S%.f%:z", "%Y-%m-%d %H:%M:%S%.f%z"] {
        if let Ok(dt) = DateTime::parse_from_str(s, fmt) {
            return Some(dt.with_timezone(&Utc));
        }
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(dt.and_utc());
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .map(|dt| dt.and_utc())
}

pub fn format_timestamp(ts: &Timestamp) -> String {
    ts.to_rfc3339_opts(chrono::SecondsFormat::AutoSi, true)
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;
    use chrono::TimeZone;

    pub fn ts(secs: i64) -> Timestamp {
        Utc.timestamp_opt(1_600_000_000 + secs, 0).unwrap()
    }

    pub fn trace(id: &str, events: &[(&str, i64)]) -> Trace {
        Trace::new(id, events.iter().map(|(a, t)| Event::new(*a, ts(*t))).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::testutil::*;
    use super::*;

    #[test]
    fn events_are_sorted_and_alphabet_derived() {
        let log = EventLog::new(vec![trace("1", &[("B", 20), ("A", 10)]), trace("2", &[("C", 5)])])
            .unwrap();
        assert_eq!(variant_of(&log.traces()[0]), vec!["A", "B"]);
        let alphabet: Vec<_> = log.activity_alphabet().iter().cloned().collect();
        assert_eq!(alphabet, vec!["A", "B", "C"]);
    }

    #[test]
    fn rejects_empty_trace_and_duplicate_ids() {
        assert!(EventLog::new(vec![Trace::new("x", vec![])]).is_err());
        assert!(EventLog::new(vec![trace("1", &[("A", 0)]), trace("1", &[("B", 0)])]).is_err());
    }

    #[test]
    fn variants_ignore_timestamps() {
        let a = trace("1", &[("A", 0), ("B", 10)]);
        let b = trace("2", &[("A", 100), ("B", 5000)]);
        let log = EventLog::new(vec![a.clone(), b]).unwrap();
        assert_eq!(variant_of(&a), vec!["A".to_string(), "B".to_string()]);
        assert_eq!(variant_set(&log).len(), 1);
    }

    #[test]
    fn conditional_ratio_counts_true_labels() {
        let log = EventLog::new(vec![
            trace("1", &[("A", 0)]).with_cat("c", "True"),
            trace("2", &[("A", 0)]).with_cat("c", "False"),
            trace("3", &[("A", 0)]).with_cat("c", "False"),
            trace("4", &[("A", 0)]).with_cat("c", "False"),
        ])
        .unwrap();
        assert_eq!(conditional_ratio(&log, "c").unwrap(), 0.25);
    }

    #[test]
    fn conditional_ratio_all_false_is_zero() {
        let log = EventLog::new(vec![trace("1", &[("A", 0)]).with_cat("c", "False")]).unwrap();
        assert_eq!(conditional_ratio(&log, "c").unwrap(), 0.0);
    }

    #[test]
    fn conditional_ratio_missing_attribute_names_trace() {
        let log = EventLog::new(vec![
            trace("1", &[("A", 0)]).with_cat("c", "True"),
            trace("t-2", &[("A", 0)]),
        ])
        .unwrap();
        match conditional_ratio(&log, "c") {
            Err(Error::MissingAttribute { trace, .. }) => assert_eq!(trace, "t-2"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn parses_naive_and_offset_timestamps() {
        let a = parse_timestamp("2020-01-01 10:00:00").unwrap();
        let b = parse_timestamp("2020-01-01T11:00:00+01:00").unwrap();
        let c = parse_timestamp("2020-01-01T10:00:00.000Z").unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
        assert!(parse_timestamp("yesterday").is_none());
    }

    #[test]
    fn summary_reports_table_columns() {
        let log = EventLog::new(vec![
            trace("1", &[("A", 0), ("B", 86_400)]).with_cat("c", "True"),
            trace("2", &[("A", 0), ("B", 86_400), ("C", 3 * 86_400)]).with_cat("c", "False"),
        ])
        .unwrap();
        let s = log.summary(Some("c")).unwrap();
        assert_eq!((s.traces, s.variants, s.activities), (2, 2, 3));
        assert!((s.avg_length - 2.5).abs() < 1e-12);
        assert!((s.avg_cycle_time_days - 2.0).abs() < 1e-12);
        assert_eq!(s.conditional_ratio, Some(0.5));
    }
}
