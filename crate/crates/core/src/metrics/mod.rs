//! Scoring generated logs against reference logs.
//!
//! Time-based distances are reported in hours. All functions are pure.

mod declare;
mod report;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eventlog::{secs_between, EventLog, LabelerSpec, Variant};

pub use declare::{mine_declare, mine_declare_with, DeclareConstraint, DeclareModel, Template};
pub use report::{
    evaluate_log, long_format, write_long_csv, write_report_csv, ConditionReport, EvalContext,
    read_long_csv, LongRow, MetricReport, METRIC_NAMES, REPORT_VERSION,
};

/// Support threshold used when mining the reference constraint set.
pub const DEFAULT_MIN_SUPPORT: f64 = 0.9;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricOptions {
    /// Floor relative times and cycle times to whole hours before computing
    /// the distance.
    pub bin_hours: bool,
}

/// Wasserstein-1 distance between two equal-weight empirical distributions,
/// by integrating the difference of their quantile functions.
pub fn emd_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("emd of an empty sample".into()));
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(Error::Numeric("emd sample".into()));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    // Quantile breakpoints in units of 1/(n·m) keep the walk exact.
    let (n, m) = (a.len() as u128, b.len() as u128);
    let total = n * m;
    let (mut i, mut j, mut pos) = (0usize, 0usize, 0u128);
    let mut acc = 0.0;
    while pos < total {
        let next_a = (i as u128 + 1) * m;
        let next_b = (j as u128 + 1) * n;
        let next = next_a.min(next_b);
        acc += (next - pos) as f64 * (a[i] - b[j]).abs();
        pos = next;
        if next == next_a {
            i += 1;
        }
        if next == next_b {
            j += 1;
        }
    }
    Ok(acc / total as f64)
}

fn hours(secs: f64, opts: MetricOptions) -> f64 {
    let h = secs / 3600.0;
    if opts.bin_hours {
        h.floor()
    } else {
        h
    }
}

/// Time of every event relative to its trace start, in hours.
pub fn relative_event_times(log: &EventLog, opts: MetricOptions) -> Vec<f64> {
    log.traces()
        .iter()
        .flat_map(|t| {
            let start = t.start();
            t.events
                .iter()
                .map(move |e| hours(secs_between(start, e.timestamp), opts))
        })
        .collect()
}

pub fn cycle_times(log: &EventLog, opts: MetricOptions) -> Vec<f64> {
    log.traces()
        .iter()
        .map(|t| hours(t.cycle_time_secs(), opts))
        .collect()
}

/// Relative event distribution distance.
pub fn red(gen: &EventLog, reference: &EventLog, opts: MetricOptions) -> Result<f64> {
    emd_1d(&relative_event_times(gen, opts), &relative_event_times(reference, opts))
}

/// Cycle time distribution distance.
pub fn ctd(gen: &EventLog, reference: &EventLog, opts: MetricOptions) -> Result<f64> {
    emd_1d(&cycle_times(gen, opts), &cycle_times(reference, opts))
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
enum Token<'a> {
    Start,
    Act(&'a str),
    End,
}

fn two_grams(log: &EventLog) -> HashMap<(Token<'_>, Token<'_>), usize> {
    let mut counts = HashMap::new();
    for t in log.traces() {
        let toks: Vec<Token<'_>> = std::iter::once(Token::Start)
            .chain(t.events.iter().map(|e| Token::Act(&e.activity)))
            .chain(std::iter::once(Token::End))
            .collect();
        for w in toks.windows(2) {
            *counts.entry((w[0].clone(), w[1].clone())).or_insert(0) += 1;
        }
    }
    counts
}

/// Total variation distance between the 2-gram frequency distributions of
/// the two logs, with start and end markers around every trace. Two empty
/// logs are at distance 0; an empty log against a non-empty one is at 1.
pub fn two_gram_distance(gen: &EventLog, reference: &EventLog) -> f64 {
    let p = two_grams(gen);
    let q = two_grams(reference);
    let np = p.values().sum::<usize>() as u128;
    let nq = q.values().sum::<usize>() as u128;
    if np == 0 || nq == 0 {
        return if np == nq { 0.0 } else { 1.0 };
    }
    // Cross-multiplied counts keep the sum exact until the final division.
    let keys: BTreeSet<_> = p.keys().chain(q.keys()).collect();
    let l1: u128 = keys
        .into_iter()
        .map(|k| {
            let a = p.get(k).copied().unwrap_or(0) as u128 * nq;
            let b = q.get(k).copied().unwrap_or(0) as u128 * np;
            a.abs_diff(b)
        })
        .sum();
    let l1 = l1 as f64 / (np * nq) as f64;
    (0.5 * l1).clamp(0.0, 1.0)
}

/// Mean constraint satisfaction over the traces of `log` whose variant is
/// not in `train_variants`. `None` when there is no such trace or the model
/// is empty.
pub fn log_conformance(
    log: &EventLog,
    model: &DeclareModel,
    train_variants: &BTreeSet<Variant>,
) -> Option<f64> {
    if model.is_empty() {
        return None;
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for (variant, count) in declare::variant_counts(log) {
        if train_variants.contains(&variant) {
            continue;
        }
        sum += model.satisfaction(&variant)? * count as f64;
        n += count;
    }
    (n > 0).then(|| sum / n as f64)
}

/// Per-log conformance averaged over the logs where it is defined.
pub fn conformance_score(
    gen_logs: &[EventLog],
    model: &DeclareModel,
    train_variants: &BTreeSet<Variant>,
) -> Option<f64> {
    let scores: Vec<f64> = gen_logs
        .iter()
        .filter_map(|l| log_conformance(l, model, train_variants))
        .collect();
    (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariantCounts {
    pub total: usize,
    pub in_train: usize,
    pub in_test: usize,
}

impl VariantCounts {
    pub fn of(
        log: &EventLog,
        train_variants: &BTreeSet<Variant>,
        test_variants: &BTreeSet<Variant>,
    ) -> Self {
        let vars = crate::eventlog::variant_set(log);
        VariantCounts {
            total: vars.len(),
            in_train: vars.iter().filter(|v| train_variants.contains(*v)).count(),
            in_test: vars.iter().filter(|v| test_variants.contains(*v)).count(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VariantReport {
    pub total: f64,
    pub in_train: f64,
    pub in_test: f64,
    pub per_log: Vec<VariantCounts>,
}

pub fn variant_analysis(gen_logs: &[EventLog], train: &EventLog, test: &EventLog) -> VariantReport {
    let train_v = crate::eventlog::variant_set(train);
    let test_v = crate::eventlog::variant_set(test);
    let per_log: Vec<VariantCounts> = gen_logs
        .iter()
        .map(|l| VariantCounts::of(l, &train_v, &test_v))
        .collect();
    let k = per_log.len().max(1) as f64;
    let mean = |f: fn(&VariantCounts) -> usize| per_log.iter().map(f).sum::<usize>() as f64 / k;
    VariantReport {
        total: mean(|c| c.total),
        in_train: mean(|c| c.in_train),
        in_test: mean(|c| c.in_test),
        per_log,
    }
}

/// Fraction of generated traces that satisfy `spec`, recomputed from the
/// generated control flow and timestamps (any stored label is ignored).
pub fn aposteriori_ratio(gen: &EventLog, spec: &LabelerSpec) -> Result<f64> {
    spec.validate()?;
    if gen.is_empty() {
        return Err(Error::Empty("a-posteriori ratio of an empty log".into()));
    }
    let hits = gen.traces().iter().filter(|t| spec.holds(t)).count();
    Ok(hits as f64 / gen.len() as f64)
}

/// Chronological blocks of the reference log used as the train_log
/// baseline. Traces are ordered by start time; the oldest surplus is dropped
/// so that four contiguous blocks of `block_size` remain. When the log holds
/// fewer than four test-sized blocks, the block size shrinks to a quarter of
/// the log.
pub fn baseline_blocks(train_plus_val: &EventLog, test_size: usize) -> Result<Vec<EventLog>> {
    let n = train_plus_val.len();
    if test_size == 0 {
        return Err(Error::Empty("baseline against an empty test log".into()));
    }
    if n < test_size {
        return Err(Error::Validation(format!(
            "baseline needs at least {test_size} reference traces, got {n}"
        )));
    }
    let block = test_size.min(n / 4);
    if block == 0 {
        return Err(Error::Validation(format!(
            "baseline needs at least 4 reference traces, got {n}"
        )));
    }
    let mut traces: Vec<_> = train_plus_val.traces().iter().collect();
    traces.sort_by(|a, b| a.start().cmp(&b.start()).then_with(|| a.id.cmp(&b.id)));
    let kept = &traces[n - 4 * block..];
    kept.chunks(block)
        .map(|c| EventLog::new(c.iter().map(|t| (*t).clone()).collect()))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineScores {
    pub red: Vec<f64>,
    pub ctd: Vec<f64>,
    pub two_gd: Vec<f64>,
}

pub fn train_log_baseline(
    train_plus_val: &EventLog,
    test: &EventLog,
    opts: MetricOptions,
) -> Result<BaselineScores> {
    let blocks = baseline_blocks(train_plus_val, test.len())?;
    let mut out = BaselineScores {
        red: Vec::with_capacity(4),
        ctd: Vec::with_capacity(4),
        two_gd: Vec::with_capacity(4),
    };
    for b in &blocks {
        out.red.push(red(b, test, opts)?);
        out.ctd.push(ctd(b, test, opts)?);
        out.two_gd.push(two_gram_distance(b, test));
    }
    Ok(out)
}

/// Splits `log` by the value of a categorical trace attribute. Traces
/// without the attribute are skipped.
pub fn split_by_condition(log: &EventLog, attr: &str) -> Result<BTreeMap<String, EventLog>> {
    let mut groups: BTreeMap<String, Vec<_>> = BTreeMap::new();
    for t in log.traces() {
        if let Some(v) = t.attrs_cat.get(attr) {
            groups.entry(v.clone()).or_default().push(t.clone());
        }
    }
    groups
        .into_iter()
        .map(|(k, ts)| Ok((k, EventLog::new(ts)?)))
        .collect()
}
