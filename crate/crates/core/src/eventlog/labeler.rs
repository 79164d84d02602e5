use serde::{Deserialize, Serialize};

use super::{bool_label, secs_between, EventLog, Trace};
use crate::error::{Error, Result};

/// Binary trace predicate used to attach a conditional label.
///
/// Activities are matched by exact string comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LabelerSpec {
    /// `activity` occurs at least once.
    ActivityPresence { activity: String },
    /// `activity` occurs at least `min_count` times.
    ActivityMultiplicity { activity: String, min_count: usize },
    /// A `return_activity` event occurs at most `delta_seconds` after the
    /// closest preceding event whose activity is in `release_activities`.
    ReturnWithinDelta {
        release_activities: Vec<String>,
        return_activity: String,
        delta_seconds: f64,
    },
    /// Any of `activities` occurs.
    ActivitySetPresence { activities: Vec<String> },
}

impl LabelerSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Validation(format!("labeler: {m}")));
        match self {
            LabelerSpec::ActivityPresence { activity } if activity.is_empty() => {
                bad("empty activity")
            }
            LabelerSpec::ActivityMultiplicity { min_count: 0, .. } => bad("min_count must be ≥ 1"),
            LabelerSpec::ReturnWithinDelta {
                release_activities,
                delta_seconds,
                ..
            } => {
                if release_activities.is_empty() {
                    bad("no release activities")
                } else if !(delta_seconds.is_finite() && *delta_seconds > 0.0) {
                    bad("delta must be positive")
                } else {
                    Ok(())
                }
            }
            LabelerSpec::ActivitySetPresence { activities } if activities.is_empty() => {
                bad("empty activity set")
            }
            _ => Ok(()),
        }
    }

    pub fn holds(&self, trace: &Trace) -> bool {
        let acts = || trace.events.iter().map(|e| e.activity.as_str());
        match self {
            LabelerSpec::ActivityPresence { activity } => acts().any(|a| a == activity),
            LabelerSpec::ActivityMultiplicity {
                activity,
                min_count,
            } => acts().filter(|a| a == activity).count() >= *min_count,
            LabelerSpec::ActivitySetPresence { activities } => {
                acts().any(|a| activities.iter().any(|x| x == a))
            }
            LabelerSpec::ReturnWithinDelta {
                release_activities,
                return_activity,
                delta_seconds,
            } => {
                let mut last_release = None;
                for e in &trace.events {
                    if release_activities.contains(&e.activity) {
                        last_release = Some(e.timestamp);
                    } else if e.activity == *return_activity {
                        if let Some(rel) = last_release {
                            if secs_between(rel, e.timestamp) <= *delta_seconds {
                                return true;
                            }
                        }
                    }
                }
                false
            }
        }
    }
}

/// Attaches `attr_name ∈ {True, False}` to every trace.
pub fn apply_labeler(log: &EventLog, spec: &LabelerSpec, attr_name: &str) -> Result<EventLog> {
    spec.validate()?;
    if log.traces().iter().any(|t| t.has_attr(attr_name)) {
        return Err(Error::AttributeCollision(attr_name.to_string()));
    }
    let traces = log
        .traces()
        .iter()
        .map(|t| {
            let mut t = t.clone();
            let label = bool_label(spec.holds(&t));
            t.attrs_cat.insert(attr_name.to_string(), label.to_string());
            t
        })
        .collect();
    let mut out = EventLog::new(traces)?;
    out.meta = log.meta.clone();
    Ok(out)
}

/// Drops `attr_name` from every trace (no-op where absent).
pub fn remove_attribute(log: &EventLog, attr_name: &str) -> EventLog {
    let traces = log
        .traces()
        .iter()
        .map(|t| {
            let mut t = t.clone();
            t.attrs_cat.remove(attr_name);
            t.attrs_num.remove(attr_name);
            t
        })
        .collect();
    let mut out = EventLog::new(traces).expect("removing an attribute keeps a log valid");
    out.meta = log.meta.clone();
    out
}
