use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use condgen::cvae::Checkpoint;
use condgen::eventlog::{conditional_ratio, format_timestamp, write_csv, write_xes, Trace};
use condgen::generate::{generate_log, generate_what_if, GenerationConfig};

use crate::artifacts::{fresh_dir, Manifest, HASH_META};
use crate::config::sha256_file;
use crate::tables::markdown_table;
use crate::train::load_encoding;
use crate::{read_xes, Run};

#[derive(Clone, Debug, Default)]
pub struct GenerateArgs {
    /// Defaults to the best checkpoint of the run.
    pub checkpoint: Option<PathBuf>,
    pub force: bool,
    pub allow_mixed: bool,
}

#[derive(Serialize)]
struct WhatIfRow {
    pair: usize,
    condition: bool,
    events: usize,
    cycle_time_hours: f64,
    start: String,
    activities: String,
}

/// Writes `n_logs` test-sized logs generated with seeds `seed + i`, as XES
/// and CSV, plus the optional what-if table.
pub fn generate(run: &Run, args: &GenerateArgs) -> Result<Vec<PathBuf>> {
    let cfg = &run.cfg;
    Manifest::read(&run.layout.prepared())?.check(&run.hash, args.allow_mixed)?;
    let ck_path = args
        .checkpoint
        .clone()
        .unwrap_or_else(|| run.layout.checkpoint());
    if args.checkpoint.is_none() {
        Manifest::read(&run.layout.model())?.check(&run.hash, args.allow_mixed)?;
    }
    let ck = Checkpoint::load(&ck_path).with_context(|| format!("loading {}", ck_path.display()))?;
    let spec = load_encoding(run)?;
    if ck.encoding != spec {
        bail!(condgen::Error::Compatibility(
            "checkpoint encoding differs from the prepared encoding".into()
        ));
    }
    if let Some(h) = &ck.meta.config_hash {
        if *h != run.hash && !args.allow_mixed {
            bail!(
                "checkpoint was trained under config {h}, current config is {}; pass --allow-mixed",
                run.hash
            );
        }
    }
    let model = ck.model()?;
    let train = read_xes(&run.layout.train_log())?;
    let test = read_xes(&run.layout.test_log())?;
    let g = &cfg.generation;
    let ratio = match g.target_ratio {
        Some(r) => r,
        None => conditional_ratio(&train, &cfg.label_attr)?,
    };
    let tau = match g.tau {
        Some(t) => t,
        None => test.first_timestamp().context("empty test log")?,
    };
    let ck_id = sha256_file(&ck_path)?[..16].to_string();

    let dir = run.layout.generated();
    fresh_dir(&dir, args.force)?;
    let mut written = Vec::new();
    for i in 0..g.n_logs {
        let gcfg = GenerationConfig {
            max_len: g.max_len,
            resample_limit: g.resample_limit,
            ..GenerationConfig::new(test.len(), ratio, tau, cfg.seed.wrapping_add(i as u64))
        };
        let log = generate_log(&model, &gcfg, &spec, Some(&ck_id))?
            .with_meta(HASH_META, run.hash.clone());
        let xes = run.layout.gen_log(i, "xes");
        write_xes(&log, &xes)?;
        write_csv(&log, &run.layout.gen_log(i, "csv"))?;
        log::info!("wrote {} ({} traces)", xes.display(), log.len());
        written.push(xes);
    }
    if g.what_if_pairs > 0 {
        let pairs = generate_what_if(&model, &spec, g.what_if_pairs, cfg.seed, tau, g.max_len)?;
        write_what_if(run, &pairs)?;
    }
    Manifest::write(&dir, "generate", &run.hash)?;
    Ok(written)
}

fn write_what_if(run: &Run, pairs: &[(Option<Trace>, Option<Trace>)]) -> Result<()> {
    let dir = run.layout.generated();
    let mut csv = csv::Writer::from_path(dir.join("what_if.csv"))?;
    let mut md_rows = Vec::new();
    for (i, (f, t)) in pairs.iter().enumerate() {
        for (condition, trace) in [(false, f), (true, t)] {
            let Some(trace) = trace else {
                md_rows.push(vec![i.to_string(), flag(condition), "(empty)".into()]);
                continue;
            };
            let activities: Vec<&str> = trace.events.iter().map(|e| e.activity.as_str()).collect();
            csv.serialize(WhatIfRow {
                pair: i,
                condition,
                events: trace.len(),
                cycle_time_hours: trace.cycle_time_secs() / 3600.0,
                start: format_timestamp(&trace.start()),
                activities: activities.join(" > "),
            })?;
            let shown: Vec<String> = trace
                .events
                .iter()
                .map(|e| format!("({}, {})", e.activity, e.timestamp.format("%d/%m/%y")))
                .collect();
            md_rows.push(vec![i.to_string(), flag(condition), format!("⟨{}⟩", shown.join(", "))]);
        }
    }
    csv.flush()?;
    std::fs::write(
        dir.join("what_if.md"),
        markdown_table(&["Pair", "c", "Trace"], &md_rows),
    )?;
    Ok(())
}

fn flag(c: bool) -> String {
    if c { "T" } else { "F" }.to_string()
}
