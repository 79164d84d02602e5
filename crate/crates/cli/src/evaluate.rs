use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use condgen::eventlog::{conditional_ratio, parse_log, ColumnMap, EventLog, LogFormat, ParseOptions};
use condgen::metrics::{
    baseline_blocks, evaluate_log, log_conformance, mine_declare, train_log_baseline,
    write_long_csv, write_report_csv, BaselineScores, EvalContext, LongRow, MetricReport,
};

use crate::artifacts::{fresh_dir, Manifest, HASH_META};
use crate::tables::{markdown_table, pct};
use crate::{read_xes, Run};

/// Name under which the run's own generated logs are reported.
pub const OWN_MODEL: &str = "cvae";
pub const BASELINE_MODEL: &str = "train_log";

#[derive(Clone, Debug, Default)]
pub struct EvaluateArgs {
    /// Directories of logs produced by other generators, one model each.
    pub extra_logs: Vec<PathBuf>,
    pub force: bool,
    pub allow_mixed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelResults {
    pub model: String,
    pub reports: Vec<MetricReport>,
}

impl ModelResults {
    fn mean(&self, f: impl Fn(&MetricReport) -> Option<f64>) -> Option<f64> {
        let v: Vec<f64> = self.reports.iter().filter_map(f).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn mean_cond_ratio(&self) -> Option<f64> {
        self.mean(|r| r.cond_ratio)
    }

    pub fn mean_conf(&self) -> Option<f64> {
        self.mean(|r| r.conf)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationResults {
    pub version: u32,
    pub dataset: String,
    pub config_hash: String,
    pub train_ratio: f64,
    pub test_ratio: f64,
    pub constraints: usize,
    pub models: Vec<ModelResults>,
    pub baseline: BaselineScores,
    /// Constraint satisfaction of each baseline block over all its traces.
    pub baseline_self_conf: Vec<Option<f64>>,
}

impl EvaluationResults {
    pub const FILE: &'static str = "results.json";

    pub fn load(results_dir: &Path) -> Result<Self> {
        let p = results_dir.join(Self::FILE);
        let text = std::fs::read_to_string(&p)
            .with_context(|| format!("reading {}; run evaluate first", p.display()))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn model(&self, name: &str) -> Option<&ModelResults> {
        self.models.iter().find(|m| m.model == name)
    }

    pub fn mean_self_conf(&self) -> Option<f64> {
        let v: Vec<f64> = self.baseline_self_conf.iter().flatten().copied().collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn long_rows(&self) -> Vec<LongRow> {
        let mut rows = self.baseline.long_format(BASELINE_MODEL);
        for (i, c) in self.baseline_self_conf.iter().enumerate() {
            if let Some(value) = c {
                rows.push(LongRow {
                    model: BASELINE_MODEL.into(),
                    log: format!("block{}", i + 1),
                    metric: "CONF".into(),
                    value: *value,
                });
            }
        }
        for m in &self.models {
            rows.extend(condgen::metrics::long_format(&m.model, &m.reports));
        }
        rows
    }
}

/// Log files of a directory, XES preferred over CSV of the same stem.
fn list_logs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut xes = BTreeSet::new();
    let mut csv = BTreeSet::new();
    for e in std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let p = e?.path();
        match LogFormat::from_path(&p) {
            Some(LogFormat::Xes) => xes.insert(p),
            Some(LogFormat::Csv) if !p.ends_with("what_if.csv") => csv.insert(p),
            _ => false,
        };
    }
    let mut out: Vec<PathBuf> = xes.iter().cloned().collect();
    for p in csv {
        if !xes.contains(&p.with_extension("xes")) {
            out.push(p);
        }
    }
    out.sort();
    if out.is_empty() {
        bail!("no .xes or .csv logs in {}", dir.display());
    }
    Ok(out)
}

fn read_any(path: &Path) -> Result<EventLog> {
    match LogFormat::from_path(path) {
        Some(LogFormat::Csv) => {
            let opts = ParseOptions {
                column_map: Some(ColumnMap::default()),
                ..ParseOptions::default()
            };
            parse_log(path, LogFormat::Csv, &opts).with_context(|| format!("reading {}", path.display()))
        }
        _ => read_xes(path),
    }
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Scores every log with one worker thread per log; order is preserved.
fn score_logs(model: &str, logs: &[(String, EventLog)], ctx: &EvalContext<'_>) -> Result<Vec<MetricReport>> {
    std::thread::scope(|s| {
        let handles: Vec<_> = logs
            .iter()
            .map(|(name, log)| s.spawn(move || evaluate_log(&format!("{model}/{name}"), log, ctx)))
            .collect();
        handles
            .into_iter()
            .map(|h| Ok(h.join().expect("metric worker panicked")?))
            .collect()
    })
}

/// Scores the generated logs (and any extra model directories) against
/// the test split, and computes the train_log baseline.
pub fn evaluate(run: &Run, args: &EvaluateArgs) -> Result<EvaluationResults> {
    let cfg = &run.cfg;
    Manifest::read(&run.layout.prepared())?.check(&run.hash, args.allow_mixed)?;
    Manifest::read(&run.layout.generated())?.check(&run.hash, args.allow_mixed)?;
    let train = read_xes(&run.layout.train_log())?;
    let val = read_xes(&run.layout.val_log())?;
    let test = read_xes(&run.layout.test_log())?;
    let opts = cfg.metrics.options();
    let mut ctx = EvalContext::new(&train, &test)
        .with_condition(&cfg.label_attr, Some(&cfg.labeler))
        .with_options(opts);
    ctx.declare = mine_declare(&train, cfg.metrics.min_support);
    log::info!("{} constraints mined at support {}", ctx.declare.len(), cfg.metrics.min_support);

    let mut sources = vec![(OWN_MODEL.to_string(), run.layout.generated())];
    for d in &args.extra_logs {
        let name = d
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| d.display().to_string());
        sources.push((name, d.clone()));
    }
    let mut models = Vec::new();
    for (model, dir) in &sources {
        let mut logs = Vec::new();
        for p in list_logs(dir)? {
            let log = read_any(&p)?;
            if model == OWN_MODEL {
                let h = log.meta.get(HASH_META).map(String::as_str).unwrap_or("<none>");
                if h != run.hash {
                    if !args.allow_mixed {
                        bail!(
                            "{} was generated under config {h}, current config is {}; pass --allow-mixed",
                            p.display(),
                            run.hash
                        );
                    }
                    log::warn!("{} comes from config {h}", p.display());
                }
            }
            logs.push((stem(&p), log));
        }
        let reports = score_logs(model, &logs, &ctx)?;
        models.push(ModelResults {
            model: model.clone(),
            reports,
        });
    }

    let reference = EventLog::concat([&train, &val])?;
    let baseline = train_log_baseline(&reference, &test, opts)?;
    let none = BTreeSet::new();
    let baseline_self_conf = baseline_blocks(&reference, test.len())?
        .iter()
        .map(|b| log_conformance(b, &ctx.declare, &none))
        .collect();
    let results = EvaluationResults {
        version: 1,
        dataset: cfg.name.clone(),
        config_hash: run.hash.clone(),
        train_ratio: conditional_ratio(&train, &cfg.label_attr)?,
        test_ratio: conditional_ratio(&test, &cfg.label_attr)?,
        constraints: ctx.declare.len(),
        models,
        baseline,
        baseline_self_conf,
    };
    write_results(run, &results, args.force)?;
    Ok(results)
}

fn write_results(run: &Run, r: &EvaluationResults, force: bool) -> Result<()> {
    let dir = run.layout.results();
    fresh_dir(&dir, force)?;
    std::fs::write(dir.join(EvaluationResults::FILE), serde_json::to_string_pretty(r)? + "\n")?;
    let all: Vec<MetricReport> = r.models.iter().flat_map(|m| m.reports.iter().cloned()).collect();
    write_report_csv(&all, &dir.join("reports.csv"))?;
    write_long_csv(&r.long_rows(), &dir.join("long.csv"))?;
    std::fs::write(dir.join("variants.md"), variants_table(r))?;
    std::fs::write(dir.join("ratios.md"), ratios_table(r))?;
    Manifest::write(&dir, "evaluate", &run.hash)?;
    Ok(())
}

/// Mean distinct / in-train / in-test variant counts per model.
pub fn variants_table(r: &EvaluationResults) -> String {
    let rows: Vec<Vec<String>> = r
        .models
        .iter()
        .map(|m| {
            let n = m.reports.len().max(1) as f64;
            let mean = |f: fn(&MetricReport) -> usize| {
                format!("{:.1}", m.reports.iter().map(f).sum::<usize>() as f64 / n)
            };
            vec![
                m.model.clone(),
                r.dataset.clone(),
                mean(|x| x.variants.total),
                mean(|x| x.variants.in_train),
                mean(|x| x.variants.in_test),
            ]
        })
        .collect();
    markdown_table(&["Model", "Dataset", "Variants", "In train", "In test"], &rows)
}

/// Conditional ratio of the splits next to the mean a-posteriori ratio of
/// each model.
pub fn ratios_table(r: &EvaluationResults) -> String {
    let mut headers = vec!["Dataset", "training", "test"];
    headers.extend(r.models.iter().map(|m| m.model.as_str()));
    let mut row = vec![r.dataset.clone(), pct(r.train_ratio), pct(r.test_ratio)];
    row.extend(
        r.models
            .iter()
            .map(|m| m.mean_cond_ratio().map(pct).unwrap_or_else(|| "n/a".into())),
    );
    markdown_table(&headers, &[row])
}
