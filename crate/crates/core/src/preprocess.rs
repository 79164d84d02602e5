//! Model-ready encoding of traces.
//!
//! Statistics are fitted on the training split only. Event timestamps are
//! split into the trace arrival time (treated as one more numerical trace
//! attribute, min-max normalized) and per-event interarrival times divided
//! by their 95th percentile. Interarrivals are not clipped at 1, so long
//! gaps map to values above 1.

use std::collections::{BTreeMap, BTreeSet};

use chrono::Duration;
use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eventlog::{bool_label, secs_between, Event, EventLog, Timestamp, Trace, TRUE_LABEL};

/// Schema version of the persisted [`EncodingSpec`].
pub const ENCODING_VERSION: u32 = 1;

/// Name under which the trace arrival time appears among numerical attributes.
pub const ARRIVAL_ATTR: &str = "__arrival_time__";

/// Category used for traces that lack a categorical attribute.
pub const MISSING_LABEL: &str = "<missing>";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CatAttrVocab {
    pub name: String,
    pub labels: Vec<String>,
}

impl CatAttrVocab {
    pub fn index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NumAttrStats {
    pub name: String,
    pub min: f64,
    pub max: f64,
}

impl NumAttrStats {
    /// Min-max scaling, clamped below at 0 only. A constant attribute maps to 0.
    pub fn normalize(&self, v: f64) -> f64 {
        if self.max > self.min {
            ((v - self.min) / (self.max - self.min)).max(0.0)
        } else {
            0.0
        }
    }

    pub fn denormalize(&self, v: f64) -> f64 {
        if self.max > self.min {
            self.min + v.max(0.0) * (self.max - self.min)
        } else {
            self.min
        }
    }
}

/// Fitted vocabularies and normalization statistics.
///
/// Activity indices `0..n` are the training labels in sorted order; index
/// `n` is the end-of-trace token and `n + 1` the padding index. The
/// conditional attribute is carried separately and never appears among
/// `cat_attrs`. `num_attrs[0]` is always the trace arrival time, stored as
/// seconds since `t1_reference`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodingSpec {
    pub version: u32,
    pub activities: Vec<String>,
    pub condition_attr: String,
    pub cat_attrs: Vec<CatAttrVocab>,
    pub num_attrs: Vec<NumAttrStats>,
    pub interarrival_p95: f64,
    pub t1_reference: Timestamp,
    pub max_len: usize,
}

/// A trace as index sequences and normalized numerics.
///
/// `activity_ids` has one more entry than `interarrivals`: the trailing
/// end-of-trace token has no interarrival time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodedTrace {
    pub activity_ids: Vec<usize>,
    pub interarrivals: Vec<f64>,
    pub cat_attr_ids: Vec<usize>,
    pub num_attrs: Vec<f64>,
    pub condition: f64,
}

impl EncodedTrace {
    /// Number of events (excluding the end-of-trace token).
    pub fn n_events(&self) -> usize {
        self.interarrivals.len()
    }
}

/// Decoder output in index space, before denormalization.
#[derive(Clone, Debug, PartialEq)]
pub struct RawTrace {
    /// May run past the end-of-trace token; decoding stops there.
    pub activity_ids: Vec<usize>,
    pub interarrivals: Vec<f64>,
    pub cat_attr_ids: Vec<usize>,
    pub num_attrs: Vec<f64>,
    pub condition: bool,
}

impl EncodingSpec {
    pub fn n_activities(&self) -> usize {
        self.activities.len()
    }

    pub fn eot(&self) -> usize {
        self.activities.len()
    }

    pub fn pad(&self) -> usize {
        self.activities.len() + 1
    }

    /// Size of the activity output distribution (activities plus EOT).
    pub fn n_activity_classes(&self) -> usize {
        self.activities.len() + 1
    }

    pub fn cat_arities(&self) -> Vec<usize> {
        self.cat_attrs.iter().map(|c| c.labels.len()).collect()
    }

    pub fn activity_index(&self, label: &str) -> Option<usize> {
        self.activities.iter().position(|a| a == label)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let spec: EncodingSpec = serde_json::from_str(s)?;
        if spec.version != ENCODING_VERSION {
            return Err(Error::Compatibility(format!(
                "encoding spec version {} (expected {ENCODING_VERSION})",
                spec.version
            )));
        }
        Ok(spec)
    }
}

/// Nearest-rank percentile `p ∈ (0, 100]` of a non-empty sorted slice.
pub fn nearest_rank(sorted: &[f64], p: u32) -> f64 {
    let n = sorted.len();
    let rank = (p as usize * n).div_ceil(100);
    sorted[rank.clamp(1, n) - 1]
}

fn interarrival_secs(trace: &Trace) -> impl Iterator<Item = f64> + '_ {
    trace
        .events
        .windows(2)
        .map(|w| secs_between(w[0].timestamp, w[1].timestamp))
}

pub fn fit_encoding(train: &EventLog, condition_attr: &str) -> Result<EncodingSpec> {
    if train.is_empty() {
        return Err(Error::Empty("cannot fit an encoding on an empty log".into()));
    }
    let activities: Vec<String> = train.activity_alphabet().iter().cloned().collect();

    let mut gaps: Vec<f64> = train.traces().iter().flat_map(interarrival_secs).collect();
    gaps.sort_by(f64::total_cmp);
    let mut p95 = if gaps.is_empty() { 0.0 } else { nearest_rank(&gaps, 95) };
    if p95 <= 0.0 {
        warn!("95th percentile of interarrival times is zero; using 1 second");
        p95 = 1.0;
    }

    let mut cat_values: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for t in train.traces() {
        for (k, v) in &t.attrs_cat {
            if k != condition_attr {
                cat_values.entry(k).or_default().insert(v);
            }
        }
    }
    let cat_attrs = cat_values
        .into_iter()
        .map(|(name, values)| {
            let mut labels: Vec<String> = values.into_iter().map(str::to_string).collect();
            if train.traces().iter().any(|t| !t.attrs_cat.contains_key(name)) {
                labels.push(MISSING_LABEL.to_string());
            }
            CatAttrVocab {
                name: name.to_string(),
                labels,
            }
        })
        .collect();

    let t1_reference = train.first_timestamp().expect("non-empty log");
    let arrivals = train.traces().iter().map(|t| secs_between(t1_reference, t.start()));
    let mut num_attrs = vec![min_max(ARRIVAL_ATTR, arrivals)];
    let mut num_names: BTreeSet<&str> = BTreeSet::new();
    for t in train.traces() {
        num_names.extend(t.attrs_num.keys().map(String::as_str));
    }
    for name in num_names {
        if name == condition_attr {
            continue;
        }
        if train.traces().iter().any(|t| !t.attrs_num.contains_key(name)) {
            warn!("numerical attribute `{name}` is missing on some training traces; dropped");
            continue;
        }
        num_attrs.push(min_max(name, train.traces().iter().map(|t| t.attrs_num[name])));
    }

    Ok(EncodingSpec {
        version: ENCODING_VERSION,
        activities,
        condition_attr: condition_attr.to_string(),
        cat_attrs,
        num_attrs,
        interarrival_p95: p95,
        t1_reference,
        max_len: train.traces().iter().map(Trace::len).max().unwrap_or(1),
    })
}

fn min_max(name: &str, values: impl Iterator<Item = f64>) -> NumAttrStats {
    let (min, max) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    NumAttrStats {
        name: name.to_string(),
        min,
        max,
    }
}

pub fn encode_trace(trace: &Trace, spec: &EncodingSpec) -> Result<EncodedTrace> {
    let mut activity_ids = Vec::with_capacity(trace.len() + 1);
    for e in &trace.events {
        let idx = spec
            .activity_index(&e.activity)
            .ok_or_else(|| Error::OutOfVocabulary {
                kind: "activity".into(),
                label: e.activity.clone(),
            })?;
        activity_ids.push(idx);
    }
    activity_ids.push(spec.eot());

    let interarrivals = std::iter::once(0.0)
        .chain(interarrival_secs(trace).map(|g| g / spec.interarrival_p95))
        .collect();

    let cat_attr_ids = spec
        .cat_attrs
        .iter()
        .map(|vocab| {
            let label = trace
                .attrs_cat
                .get(&vocab.name)
                .map(String::as_str)
                .unwrap_or(MISSING_LABEL);
            vocab.index(label).ok_or_else(|| Error::OutOfVocabulary {
                kind: format!("attribute `{}`", vocab.name),
                label: label.to_string(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let num_attrs = spec
        .num_attrs
        .iter()
        .map(|stats| {
            let v = if stats.name == ARRIVAL_ATTR {
                secs_between(spec.t1_reference, trace.start())
            } else {
                *trace.attrs_num.get(&stats.name).ok_or_else(|| Error::MissingAttribute {
                    trace: trace.id.clone(),
                    attr: stats.name.clone(),
                })?
            };
            Ok(stats.normalize(v))
        })
        .collect::<Result<Vec<_>>>()?;

    let condition = match trace.attrs_cat.get(&spec.condition_attr) {
        Some(v) => f64::from(u8::from(v == TRUE_LABEL)),
        None => {
            return Err(Error::MissingAttribute {
                trace: trace.id.clone(),
                attr: spec.condition_attr.clone(),
            })
        }
    };

    Ok(EncodedTrace {
        activity_ids,
        interarrivals,
        cat_attr_ids,
        num_attrs,
        condition,
    })
}

pub fn encode_log(log: &EventLog, spec: &EncodingSpec) -> Result<Vec<EncodedTrace>> {
    log.traces().iter().map(|t| encode_trace(t, spec)).collect()
}

/// Turns decoder output into a trace with absolute timestamps.
///
/// The arrival offset and interarrivals are denormalized, negative
/// interarrivals are treated as zero, the first interarrival is ignored and
/// `T̂ᵢ = τ + T̂₁ + Σₖ t̂ₖ` is rounded to milliseconds. Activities stop at
/// the first end-of-trace (or padding) index.
pub fn decode_outputs(raw: &RawTrace, spec: &EncodingSpec, tau: Timestamp, id: &str) -> Trace {
    let n = raw
        .activity_ids
        .iter()
        .position(|&a| a >= spec.n_activities())
        .unwrap_or(raw.activity_ids.len());

    let arrival = spec
        .num_attrs
        .iter()
        .zip(&raw.num_attrs)
        .find(|(s, _)| s.name == ARRIVAL_ATTR)
        .map(|(s, v)| s.denormalize(*v))
        .unwrap_or(0.0);

    let mut offset = arrival;
    let mut events = Vec::with_capacity(n);
    for i in 0..n {
        if i > 0 {
            let t = raw.interarrivals.get(i).copied().unwrap_or(0.0);
            offset += (t * spec.interarrival_p95).max(0.0);
        }
        events.push(Event::new(
            spec.activities[raw.activity_ids[i]].clone(),
            tau + Duration::milliseconds(secs_to_millis(offset)),
        ));
    }

    let mut trace = Trace::new(id, events);
    for (vocab, &idx) in spec.cat_attrs.iter().zip(&raw.cat_attr_ids) {
        if let Some(label) = vocab.labels.get(idx) {
            if label != MISSING_LABEL {
                trace.attrs_cat.insert(vocab.name.clone(), label.clone());
            }
        }
    }
    for (stats, &v) in spec.num_attrs.iter().zip(&raw.num_attrs) {
        if stats.name != ARRIVAL_ATTR {
            trace.attrs_num.insert(stats.name.clone(), stats.denormalize(v));
        }
    }
    trace
        .attrs_cat
        .insert(spec.condition_attr.clone(), bool_label(raw.condition).to_string());
    trace
}

fn secs_to_millis(secs: f64) -> i64 {
    // about ±290 million years; anything beyond is a diverged model
    (secs * 1000.0).round().clamp(-9.0e15, 9.0e15) as i64
}
