use serde::{Deserialize, Serialize};

use super::Trace;

/// Dataset-specific trace filters (e.g. dropping incomplete cases).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TraceFilter {
    /// Keep traces containing at least one of `activities`.
    RequireAnyActivity { activities: Vec<String> },
    /// Drop traces whose last activity is one of `activities`.
    DropIfLastActivity { activities: Vec<String> },
    /// Drop traces containing any of `activities`.
    DropIfAnyActivity { activities: Vec<String> },
}

impl TraceFilter {
    pub fn accepts(&self, trace: &Trace) -> bool {
        let has = |set: &[String]| trace.events.iter().any(|e| set.contains(&e.activity));
        match self {
            TraceFilter::RequireAnyActivity { activities } => has(activities),
            TraceFilter::DropIfAnyActivity { activities } => !has(activities),
            TraceFilter::DropIfLastActivity { activities } => trace
                .events
                .last()
                .is_none_or(|e| !activities.contains(&e.activity)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::testutil::trace;
    use super::super::EventLog;
    use super::*;

    #[test]
    fn filters_compose() {
        let log = EventLog::new(vec![
            trace("1", &[("Create Fine", 0), ("Send Fine", 1)]),
            trace("2", &[("Create Fine", 0), ("Payment", 1)]),
            trace("3", &[("ER Registration", 0)]),
        ])
        .unwrap();
        let kept = log
            .filtered(&[
                TraceFilter::DropIfLastActivity {
                    activities: vec!["Send Fine".into()],
                },
                TraceFilter::RequireAnyActivity {
                    activities: vec!["Create Fine".into()],
                },
            ])
            .unwrap();
        assert_eq!(kept.len(), 1);
        assert_eq!(kept.traces()[0].id, "2");
    }
}
