use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{format_timestamp, parse_timestamp, Event, EventLog, Trace};
use crate::error::{Error, Result};

/// Declares which CSV columns hold the case id, activity and timestamp.
///
/// Every other column is a trace attribute. Columns listed in `categorical`
/// or `numerical` are typed as given; the rest are numerical iff every
/// non-empty value parses as a finite decimal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub case_id: String,
    pub activity: String,
    pub timestamp: String,
    #[serde(default)]
    pub categorical: Vec<String>,
    #[serde(default)]
    pub numerical: Vec<String>,
    #[serde(default)]
    pub ignore: Vec<String>,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            case_id: "case:concept:name".into(),
            activity: "concept:name".into(),
            timestamp: "time:timestamp".into(),
            categorical: Vec::new(),
            numerical: Vec::new(),
            ignore: Vec::new(),
        }
    }
}

impl ColumnMap {
    /// Column map matching what [`write_csv`] emits for `log`, with every
    /// attribute typed explicitly.
    pub fn for_log(log: &EventLog) -> Self {
        let (cat, num) = attribute_keys(log);
        ColumnMap {
            categorical: cat.into_iter().collect(),
            numerical: num.into_iter().collect(),
            ..ColumnMap::default()
        }
    }
}

fn attribute_keys(log: &EventLog) -> (BTreeSet<String>, BTreeSet<String>) {
    let mut cat = BTreeSet::new();
    let mut num = BTreeSet::new();
    for t in log.traces() {
        cat.extend(t.attrs_cat.keys().cloned());
        num.extend(t.attrs_num.keys().cloned());
    }
    (cat, num)
}

struct Row {
    line: u64,
    case: String,
    activity: String,
    timestamp: String,
    attrs: Vec<String>,
}

pub fn read_csv(path: &Path, map: &ColumnMap) -> Result<EventLog> {
    let file = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .flexible(false)
        .from_path(path)
        .map_err(|e| Error::parse(&file, e))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::parse(format!("{file}:1"), e))?
        .clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::parse(format!("{file}:1"), format!("missing column `{name}`")))
    };
    let case_col = find(&map.case_id)?;
    let act_col = find(&map.activity)?;
    let ts_col = find(&map.timestamp)?;
    let attr_cols: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter(|(i, h)| {
            ![case_col, act_col, ts_col].contains(i) && !map.ignore.iter().any(|x| x == h)
        })
        .map(|(i, h)| (i, h.to_string()))
        .collect();

    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            Error::parse(format!("{file}:{line}"), e)
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        rows.push(Row {
            line,
            case: record[case_col].to_string(),
            activity: record[act_col].to_string(),
            timestamp: record[ts_col].to_string(),
            attrs: attr_cols.iter().map(|(i, _)| record[*i].to_string()).collect(),
        });
    }

    let numeric: Vec<bool> = attr_cols
        .iter()
        .enumerate()
        .map(|(j, (_, name))| {
            if map.categorical.contains(name) {
                false
            } else if map.numerical.contains(name) {
                true
            } else {
                let mut values = rows.iter().map(|r| r.attrs[j].trim()).filter(|v| !v.is_empty());
                let mut any = false;
                let all_numeric = values.all(|v| {
                    any = true;
                    v.parse::<f64>().map(f64::is_finite).unwrap_or(false)
                });
                any && all_numeric
            }
        })
        .collect();

    let mut order: Vec<String> = Vec::new();
    let mut grouped: HashMap<String, Vec<&Row>> = HashMap::new();
    for row in &rows {
        grouped
            .entry(row.case.clone())
            .or_insert_with(|| {
                order.push(row.case.clone());
                Vec::new()
            })
            .push(row);
    }

    let mut traces = Vec::with_capacity(order.len());
    for case in order {
        let case_rows = &grouped[&case];
        let mut events = Vec::with_capacity(case_rows.len());
        for row in case_rows {
            let ts = parse_timestamp(&row.timestamp).ok_or_else(|| {
                Error::parse(
                    format!("{file}:{}", row.line),
                    format!("invalid timestamp `{}`", row.timestamp),
                )
            })?;
            events.push(Event::new(row.activity.clone(), ts));
        }
        let mut trace = Trace::new(case.clone(), events);
        let first = case_rows[0];
        for (j, (_, name)) in attr_cols.iter().enumerate() {
            if case_rows.iter().any(|r| r.attrs[j] != first.attrs[j]) {
                return Err(Error::VaryingAttribute {
                    trace: case.clone(),
                    attr: name.clone(),
                });
            }
            let value = first.attrs[j].trim();
            if value.is_empty() {
                continue;
            }
            if numeric[j] {
                let v: f64 = value.parse().map_err(|_| {
                    Error::parse(
                        format!("{file}:{}", first.line),
                        format!("column `{name}` value `{value}` is not numerical"),
                    )
                })?;
                trace.attrs_num.insert(name.clone(), v);
            } else {
                trace.attrs_cat.insert(name.clone(), first.attrs[j].clone());
            }
        }
        traces.push(trace);
    }
    EventLog::new(traces)
}

/// Writes one row per event with the default column names, attribute
/// columns sorted by name (categorical first).
pub fn write_csv(log: &EventLog, path: &Path) -> Result<()> {
    let (cat, num) = attribute_keys(log);
    let defaults = ColumnMap::default();
    let mut writer = csv::Writer::from_path(path)?;
    let mut header = vec![defaults.case_id, defaults.activity, defaults.timestamp];
    header.extend(cat.iter().cloned());
    header.extend(num.iter().cloned());
    writer.write_record(&header)?;
    for trace in log.traces() {
        let attrs: Vec<String> = cat
            .iter()
            .map(|k| trace.attrs_cat.get(k).cloned().unwrap_or_default())
            .chain(
                num.iter()
                    .map(|k| trace.attrs_num.get(k).map(|v| v.to_string()).unwrap_or_default()),
            )
            .collect();
        for event in &trace.events {
            let mut record = vec![
                trace.id.clone(),
                event.activity.clone(),
                format_timestamp(&event.timestamp),
            ];
            record.extend(attrs.iter().cloned());
            writer.write_record(&record)?;
        }
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    fn simple_map() -> ColumnMap {
        ColumnMap {
            case_id: "case".into(),
            activity: "act".into(),
            timestamp: "ts".into(),
            ..ColumnMap::default()
        }
    }

    #[test]
    fn header_only_gives_empty_log() {
        let f = write_tmp("case,act,ts,age\n");
        let log = read_csv(f.path(), &simple_map()).unwrap();
        assert_eq!(log.len(), 0);
    }

    #[test]
    fn shuffled_rows_are_time_sorted_per_trace() {
        let f = write_tmp(
            "case,act,ts,age,kind\n\
             2,Y,2020-01-02 10:00:00,40,x\n\
             1,B,2020-01-01 12:00:00,30,a\n\
             2,X,2020-01-02 09:00:00,40,x\n\
             1,A,2020-01-01 11:00:00,30,a\n",
        );
        let log = read_csv(f.path(), &simple_map()).unwrap();
        assert_eq!(log.len(), 2);
        let t2 = &log.traces()[0];
        assert_eq!(t2.id, "2");
        assert_eq!(t2.variant(), vec!["X", "Y"]);
        assert_eq!(log.traces()[1].variant(), vec!["A", "B"]);
        assert_eq!(t2.attrs_num["age"], 40.0);
        assert_eq!(t2.attrs_cat["kind"], "x");
    }

    #[test]
    fn varying_attribute_names_trace() {
        let f = write_tmp(
            "case,act,ts,kind\n\
             c7,A,2020-01-01 10:00:00,x\n\
             c7,B,2020-01-01 11:00:00,y\n",
        );
        match read_csv(f.path(), &simple_map()) {
            Err(Error::VaryingAttribute { trace, attr }) => {
                assert_eq!(trace, "c7");
                assert_eq!(attr, "kind");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_timestamp_reports_line() {
        let f = write_tmp("case,act,ts\n1,A,2020-01-01 10:00:00\n1,B,not-a-date\n");
        let err = read_csv(f.path(), &simple_map()).unwrap_err().to_string();
        assert!(err.contains(":3"), "{err}");
    }

    #[test]
    fn missing_column_is_parse_error() {
        let f = write_tmp("case,activity,ts\n");
        assert!(matches!(read_csv(f.path(), &simple_map()), Err(Error::Parse { .. })));
    }

    #[test]
    fn explicit_categorical_overrides_numeric_look() {
        let f = write_tmp("case,act,ts,code\n1,A,2020-01-01 10:00:00,12\n");
        let mut map = simple_map();
        map.categorical.push("code".into());
        let log = read_csv(f.path(), &map).unwrap();
        assert_eq!(log.traces()[0].attrs_cat["code"], "12");
    }
}
