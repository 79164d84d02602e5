use anyhow::{bail, Context, Result};
use serde::Serialize;

use condgen::eventlog::{
    apply_labeler, chronological_split, parse_log, write_xes, EventLog, LogSummary,
};
use condgen::preprocess::fit_encoding;

use crate::artifacts::{fresh_dir, Manifest, HASH_META};
use crate::tables::{markdown_table, pct};
use crate::Run;

pub struct PrepareOutcome {
    pub summary: LogSummary,
    pub sizes: [usize; 3],
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    dataset: &'a str,
    part: &'a str,
    traces: usize,
    variants: usize,
    activities: usize,
    avg_length: f64,
    avg_cycle_time_days: f64,
    conditional_ratio: Option<f64>,
}

/// Reads, filters and labels the dataset, splits it chronologically and
/// fits the encoding on the training part.
pub fn prepare(run: &Run, force: bool) -> Result<PrepareOutcome> {
    let cfg = &run.cfg;
    let path = cfg.dataset_path();
    let format = cfg.dataset_format().context("dataset format")?;
    let raw = parse_log(&path, format, &cfg.dataset.parse)
        .with_context(|| format!("reading {}", path.display()))?;
    let log = raw.filtered(&cfg.dataset.filters)?;
    log::info!("{} of {} traces kept after filtering", log.len(), raw.len());
    if log.traces().iter().any(|t| t.has_attr(&cfg.label_attr)) {
        bail!(
            "the dataset already has a trace attribute `{}`; choose another label_attr",
            cfg.label_attr
        );
    }
    let labelled = apply_labeler(&log, &cfg.labeler, &cfg.label_attr)?;
    let [f_train, f_val, f_test] = cfg.split;
    let (train, val, test) = chronological_split(&labelled, (f_train, f_val, f_test))?;
    let spec = fit_encoding(&train, &cfg.label_attr)?;

    let dir = run.layout.prepared();
    fresh_dir(&dir, force)?;
    for (log, path) in [
        (&train, run.layout.train_log()),
        (&val, run.layout.val_log()),
        (&test, run.layout.test_log()),
    ] {
        let stamped = log.clone().with_meta(HASH_META, run.hash.clone());
        write_xes(&stamped, &path)?;
    }
    std::fs::write(run.layout.encoding(), spec.to_json()? + "\n")?;

    let parts: [(&str, &EventLog); 4] =
        [("all", &labelled), ("train", &train), ("val", &val), ("test", &test)];
    let mut rows = Vec::new();
    let mut csv = csv::Writer::from_path(dir.join("summary.csv"))?;
    let mut summary = None;
    for (part, l) in parts {
        let s = l.summary(Some(&cfg.label_attr))?;
        csv.serialize(SummaryRow {
            dataset: &cfg.name,
            part,
            traces: s.traces,
            variants: s.variants,
            activities: s.activities,
            avg_length: s.avg_length,
            avg_cycle_time_days: s.avg_cycle_time_days,
            conditional_ratio: s.conditional_ratio,
        })?;
        rows.push(vec![
            cfg.name.clone(),
            part.to_string(),
            s.traces.to_string(),
            s.variants.to_string(),
            s.activities.to_string(),
            format!("{:.1}", s.avg_length),
            format!("{:.1}d", s.avg_cycle_time_days),
            s.conditional_ratio.map(pct).unwrap_or_default(),
        ]);
        if part == "all" {
            summary = Some(s);
        }
    }
    csv.flush()?;
    let md = markdown_table(
        &["Dataset", "Part", "Traces", "Variants", "Activities", "Avg. length", "Avg. cycle time", "Cond. ratio"],
        &rows,
    );
    std::fs::write(dir.join("summary.md"), md)?;
    Manifest::write(&dir, "prepare", &run.hash)?;
    Ok(PrepareOutcome {
        summary: summary.expect("summary of the full log"),
        sizes: [train.len(), val.len(), test.len()],
    })
}
