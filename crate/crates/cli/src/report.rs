use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use serde::Serialize;

use condgen::metrics::METRIC_NAMES;

use crate::artifacts::fresh_dir;
use crate::evaluate::{ratios_table, variants_table, EvaluationResults, BASELINE_MODEL};
use crate::plot::{boxplot_svg, BoxStats};
use crate::tables::markdown_table;

#[derive(Serialize)]
struct SummaryRow<'a> {
    dataset: &'a str,
    model: &'a str,
    metric: &'a str,
    n: usize,
    q1: f64,
    median: f64,
    q3: f64,
    mean: f64,
}

/// Renders one box-plot panel per metric and the Markdown/CSV tables from
/// an evaluation's results directory into `out_dir`.
pub fn report(results_dir: &Path, out_dir: &Path, force: bool) -> Result<Vec<PathBuf>> {
    let results = EvaluationResults::load(results_dir)?;
    let rows = results.long_rows();
    if results.models.iter().all(|m| m.reports.is_empty()) || rows.is_empty() {
        bail!("no results to report in {}", results_dir.display());
    }
    let mut models = vec![BASELINE_MODEL.to_string()];
    models.extend(results.models.iter().map(|m| m.model.clone()));

    fresh_dir(out_dir, force)?;
    let mut written = Vec::new();
    let mut csv = csv::Writer::from_path(out_dir.join("metrics.csv"))?;
    let mut md_rows = Vec::new();
    for metric in METRIC_NAMES {
        let groups: Vec<(String, Vec<f64>)> = models
            .iter()
            .map(|m| {
                let v = rows
                    .iter()
                    .filter(|r| r.model == *m && r.metric == metric)
                    .map(|r| r.value)
                    .collect();
                (m.clone(), v)
            })
            .collect();
        let title = format!("{} ({})", metric, results.dataset);
        let path = out_dir.join(format!("{}_{}.svg", results.dataset, metric));
        std::fs::write(&path, boxplot_svg(&title, &groups))?;
        written.push(path);
        for (model, values) in &groups {
            let Some(b) = BoxStats::of(values) else { continue };
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            csv.serialize(SummaryRow {
                dataset: &results.dataset,
                model,
                metric,
                n: values.len(),
                q1: b.q1,
                median: b.median,
                q3: b.q3,
                mean,
            })?;
            md_rows.push(vec![
                metric.to_string(),
                model.clone(),
                values.len().to_string(),
                format!("{:.3}", b.median),
                format!("{:.3} to {:.3}", b.q1, b.q3),
            ]);
        }
    }
    csv.flush()?;
    let mut md = format!("# {}\n\n", results.dataset);
    md.push_str(&format!(
        "{} DECLARE constraints mined from the training split.\n\n",
        results.constraints
    ));
    md.push_str("## Metrics\n\n");
    md.push_str(&markdown_table(&["Metric", "Model", "Logs", "Median", "IQR"], &md_rows));
    md.push_str("\n## Variants\n\n");
    md.push_str(&variants_table(&results));
    md.push_str("\n## Conditional ratio\n\n");
    md.push_str(&ratios_table(&results));
    let tables = out_dir.join("tables.md");
    std::fs::write(&tables, md)?;
    written.push(tables);
    Ok(written)
}
