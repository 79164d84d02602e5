use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    ctd, log_conformance, mine_declare, red, split_by_condition, two_gram_distance,
    aposteriori_ratio, BaselineScores, DeclareModel, MetricOptions, VariantCounts,
    DEFAULT_MIN_SUPPORT,
};
use crate::error::{Error, Result};
use crate::eventlog::{conditional_ratio, variant_set, EventLog, LabelerSpec, Variant};

pub const REPORT_VERSION: u32 = 1;

/// Reference material shared by every generated log of one evaluation.
pub struct EvalContext<'a> {
    pub test: &'a EventLog,
    pub declare: DeclareModel,
    pub train_variants: BTreeSet<Variant>,
    pub test_variants: BTreeSet<Variant>,
    pub condition_attr: Option<&'a str>,
    pub labeler: Option<&'a LabelerSpec>,
    pub opts: MetricOptions,
}

impl<'a> EvalContext<'a> {
    /// Mines the constraint set from `train` at the default support.
    pub fn new(train: &EventLog, test: &'a EventLog) -> Self {
        EvalContext {
            test,
            declare: mine_declare(train, DEFAULT_MIN_SUPPORT),
            train_variants: variant_set(train),
            test_variants: variant_set(test),
            condition_attr: None,
            labeler: None,
            opts: MetricOptions::default(),
        }
    }

    pub fn with_condition(mut self, attr: &'a str, labeler: Option<&'a LabelerSpec>) -> Self {
        self.condition_attr = Some(attr);
        self.labeler = labeler;
        self
    }

    pub fn with_options(mut self, opts: MetricOptions) -> Self {
        self.opts = opts;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub condition: String,
    pub traces: usize,
    pub red: f64,
    pub ctd: f64,
    pub two_gd: f64,
    pub conf: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub version: u32,
    pub name: String,
    pub traces: usize,
    /// Hours.
    pub red: f64,
    /// Hours.
    pub ctd: f64,
    pub two_gd: f64,
    /// `None` when the log has no variant outside the training log.
    pub conf: Option<f64>,
    pub variants: VariantCounts,
    pub cond_ratio: Option<f64>,
    pub per_condition: Vec<ConditionReport>,
}

impl MetricReport {
    pub fn validate(&self) -> Result<()> {
        let frac = |x: f64| x.is_finite() && (0.0..=1.0).contains(&x);
        let ok = self.red.is_finite()
            && self.red >= 0.0
            && self.ctd.is_finite()
            && self.ctd >= 0.0
            && frac(self.two_gd)
            && self.conf.is_none_or(frac)
            && self.cond_ratio.is_none_or(frac)
            && self.per_condition.iter().all(|c| {
                c.red.is_finite() && c.ctd.is_finite() && frac(c.two_gd) && c.conf.is_none_or(frac)
            });
        if ok {
            Ok(())
        } else {
            Err(Error::Numeric(format!("metric report `{}`", self.name)))
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let r: MetricReport = serde_json::from_str(s)?;
        if r.version != REPORT_VERSION {
            return Err(Error::Compatibility(format!(
                "metric report version {} (expected {REPORT_VERSION})",
                r.version
            )));
        }
        Ok(r)
    }
}

/// Scores one generated log. Per-condition sub-reports compare the traces
/// generated under each condition value with the test traces carrying the
/// same label.
pub fn evaluate_log(name: &str, gen: &EventLog, ctx: &EvalContext<'_>) -> Result<MetricReport> {
    let conf = log_conformance(gen, &ctx.declare, &ctx.train_variants);
    let cond_ratio = match (ctx.labeler, ctx.condition_attr) {
        (Some(spec), _) => Some(aposteriori_ratio(gen, spec)?),
        (None, Some(attr)) => Some(conditional_ratio(gen, attr)?),
        (None, None) => None,
    };
    let mut per_condition = Vec::new();
    if let Some(attr) = ctx.condition_attr {
        let gen_parts = split_by_condition(gen, attr)?;
        let test_parts = split_by_condition(ctx.test, attr)?;
        for (cond, g) in &gen_parts {
            let Some(t) = test_parts.get(cond) else {
                continue;
            };
            per_condition.push(ConditionReport {
                condition: cond.clone(),
                traces: g.len(),
                red: red(g, t, ctx.opts)?,
                ctd: ctd(g, t, ctx.opts)?,
                two_gd: two_gram_distance(g, t),
                conf: log_conformance(g, &ctx.declare, &ctx.train_variants),
            });
        }
    }
    let report = MetricReport {
        version: REPORT_VERSION,
        name: name.to_string(),
        traces: gen.len(),
        red: red(gen, ctx.test, ctx.opts)?,
        ctd: ctd(gen, ctx.test, ctx.opts)?,
        two_gd: two_gram_distance(gen, ctx.test),
        conf,
        variants: VariantCounts::of(gen, &ctx.train_variants, &ctx.test_variants),
        cond_ratio,
        per_condition,
    };
    report.validate()?;
    Ok(report)
}

#[derive(Serialize)]
struct FlatRow<'a> {
    name: &'a str,
    condition: &'a str,
    traces: usize,
    red: f64,
    ctd: f64,
    two_gd: f64,
    conf: Option<f64>,
    variants_total: Option<usize>,
    variants_in_train: Option<usize>,
    variants_in_test: Option<usize>,
    cond_ratio: Option<f64>,
}

/// One row per report plus one per condition sub-report (condition `all`
/// for the whole log).
pub fn write_report_csv(reports: &[MetricReport], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in reports {
        w.serialize(FlatRow {
            name: &r.name,
            condition: "all",
            traces: r.traces,
            red: r.red,
            ctd: r.ctd,
            two_gd: r.two_gd,
            conf: r.conf,
            variants_total: Some(r.variants.total),
            variants_in_train: Some(r.variants.in_train),
            variants_in_test: Some(r.variants.in_test),
            cond_ratio: r.cond_ratio,
        })?;
        for c in &r.per_condition {
            w.serialize(FlatRow {
                name: &r.name,
                condition: &c.condition,
                traces: c.traces,
                red: c.red,
                ctd: c.ctd,
                two_gd: c.two_gd,
                conf: c.conf,
                variants_total: None,
                variants_in_train: None,
                variants_in_test: None,
                cond_ratio: None,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Boxplot-ready row: one observation of one metric for one model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LongRow {
    pub model: String,
    pub log: String,
    pub metric: String,
    pub value: f64,
}

pub const METRIC_NAMES: [&str; 4] = ["RED", "CTD", "2GD", "CONF"];

pub fn long_format(model: &str, reports: &[MetricReport]) -> Vec<LongRow> {
    let mut rows = Vec::new();
    for r in reports {
        let values = [Some(r.red), Some(r.ctd), Some(r.two_gd), r.conf];
        for (metric, v) in METRIC_NAMES.iter().zip(values) {
            if let Some(value) = v {
                rows.push(LongRow {
                    model: model.to_string(),
                    log: r.name.clone(),
                    metric: metric.to_string(),
                    value,
                });
            }
        }
    }
    rows
}

impl BaselineScores {
    pub fn long_format(&self, model: &str) -> Vec<LongRow> {
        let mut rows = Vec::new();
        for (metric, vals) in [("RED", &self.red), ("CTD", &self.ctd), ("2GD", &self.two_gd)] {
            for (i, v) in vals.iter().enumerate() {
                rows.push(LongRow {
                    model: model.to_string(),
                    log: format!("block{}", i + 1),
                    metric: metric.to_string(),
                    value: *v,
                });
            }
        }
        rows
    }
}

pub fn write_long_csv(rows: &[LongRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_long_csv(path: &Path) -> Result<Vec<LongRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| Ok(row?)).collect()
}
