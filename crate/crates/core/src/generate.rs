//! Conditional generation of whole event logs.
//!
//! Every trace `i` draws its latent vector (and any resamples) from its own
//! ChaCha stream `(seed, i)`, and decoding treats each row independently,
//! so a log is fully determined by the seed regardless of how traces are
//! batched.

use chrono::Duration;
use log::warn;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cvae::{Cvae, DecoderOutput};
use crate::error::{Error, Result};
use crate::eventlog::{EventLog, Timestamp, Trace};
use crate::preprocess::{decode_outputs, EncodingSpec};

/// Traces decoded together; fixed so results never depend on batching.
const CHUNK: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub n_traces: usize,
    /// Fraction of traces generated with the condition set to true.
    pub target_ratio: f64,
    /// Reference start time τ added to every generated timestamp.
    pub tau: Timestamp,
    /// Cap on events per trace; `None` means 1.5 × the longest training trace.
    pub max_len: Option<usize>,
    pub seed: u64,
    /// Latent draws per trace before giving up on non-empty output.
    pub resample_limit: usize,
    /// Draw each condition independently instead of fixing the count.
    pub bernoulli: bool,
}

impl GenerationConfig {
    pub fn new(n_traces: usize, target_ratio: f64, tau: Timestamp, seed: u64) -> Self {
        GenerationConfig {
            n_traces,
            target_ratio,
            tau,
            max_len: None,
            seed,
            resample_limit: 10,
            bernoulli: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.target_ratio) {
            return Err(Error::Validation(format!(
                "target ratio {} not in [0, 1]",
                self.target_ratio
            )));
        }
        if self.max_len == Some(0) {
            return Err(Error::Validation("max_len must be at least 1".into()));
        }
        if self.resample_limit == 0 {
            return Err(Error::Validation("resample limit must be at least 1".into()));
        }
        Ok(())
    }

    pub fn effective_max_len(&self, spec: &EncodingSpec) -> usize {
        self.max_len.unwrap_or_else(|| default_max_len(spec))
    }
}

/// `ceil(1.5 × longest training trace)`.
pub fn default_max_len(spec: &EncodingSpec) -> usize {
    (spec.max_len * 3).div_ceil(2).max(1)
}

/// Standard normal vector of length `dim`.
pub fn sample_latent<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

/// Independent RNG stream for trace `index` of a run seeded with `seed`.
pub fn trace_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Exactly `round(n·ratio)` true conditions, at seeded positions.
pub fn condition_plan(n: usize, ratio: f64, seed: u64) -> Vec<bool> {
    let n_true = (n as f64 * ratio).round() as usize;
    let mut plan: Vec<bool> = (0..n).map(|i| i < n_true).collect();
    // a stream no trace uses
    let mut rng = trace_rng(seed, u64::MAX);
    rand::seq::SliceRandom::shuffle(plan.as_mut_slice(), &mut rng);
    plan
}

/// Maps one decoder output to a trace of at most `max_len` events, or
/// `None` when it has no events.
pub fn output_to_trace(
    out: &DecoderOutput,
    condition: bool,
    spec: &EncodingSpec,
    tau: Timestamp,
    max_len: usize,
    id: &str,
) -> Option<Trace> {
    let mut raw = out.to_raw(condition);
    raw.activity_ids.truncate(max_len + 1);
    if raw.activity_ids.len() > max_len && raw.activity_ids[max_len] != spec.eot() {
        raw.activity_ids.truncate(max_len);
    }
    let trace = decode_outputs(&raw, spec, tau, id);
    (!trace.is_empty()).then_some(trace)
}

/// Free-running decode of a given latent vector; `None` for an empty trace.
pub fn decode_trace(
    model: &Cvae,
    z: &[f64],
    condition: bool,
    spec: &EncodingSpec,
    tau: Timestamp,
    max_len: usize,
    id: &str,
) -> Result<Option<Trace>> {
    let out = model.decode(z, condition, None, max_len + 1)?;
    Ok(output_to_trace(&out, condition, spec, tau, max_len, id))
}

/// Samples latents from `rng` until the decoder produces a non-empty trace.
#[allow(clippy::too_many_arguments)]
pub fn generate_trace(
    model: &Cvae,
    rng: &mut dyn RngCore,
    condition: bool,
    spec: &EncodingSpec,
    tau: Timestamp,
    max_len: usize,
    resample_limit: usize,
    id: &str,
) -> Result<Trace> {
    for _ in 0..resample_limit {
        let z = sample_latent(rng, model.config.latent_dim);
        if let Some(t) = decode_trace(model, &z, condition, spec, tau, max_len, id)? {
            return Ok(t);
        }
    }
    Err(Error::Generation(format!(
        "trace {id}: no non-empty output after {resample_limit} latent draws"
    )))
}

struct Slot {
    rng: ChaCha8Rng,
    condition: bool,
    z: Vec<f64>,
    trace: Option<Trace>,
}

/// Decodes all slots lacking a trace, drawing a fresh latent for each.
fn fill(model: &Cvae, spec: &EncodingSpec, cfg: &GenerationConfig, slots: &mut [Slot], ids: &[String]) -> Result<()> {
    let max_len = cfg.effective_max_len(spec);
    let pending: Vec<usize> = (0..slots.len()).filter(|&i| slots[i].trace.is_none()).collect();
    for chunk in pending.chunks(CHUNK) {
        for &i in chunk {
            slots[i].z = sample_latent(&mut slots[i].rng, model.config.latent_dim);
        }
        let zs: Vec<Vec<f64>> = chunk.iter().map(|&i| slots[i].z.clone()).collect();
        let conds: Vec<bool> = chunk.iter().map(|&i| slots[i].condition).collect();
        let outs = model.decode_free(&zs, &conds, max_len + 1)?;
        for (&i, out) in chunk.iter().zip(&outs) {
            slots[i].trace = output_to_trace(out, slots[i].condition, spec, cfg.tau, max_len, &ids[i]);
        }
    }
    Ok(())
}

/// Generates `cfg.n_traces` traces and stamps provenance into the log
/// metadata.
pub fn generate_log(
    model: &Cvae,
    cfg: &GenerationConfig,
    spec: &EncodingSpec,
    checkpoint_id: Option<&str>,
) -> Result<EventLog> {
    cfg.validate()?;
    model.config.check_encoding(spec)?;
    let plan = if cfg.bernoulli {
        Vec::new()
    } else {
        condition_plan(cfg.n_traces, cfg.target_ratio, cfg.seed)
    };
    let ids: Vec<String> = (0..cfg.n_traces).map(|i| format!("gen-{i:06}")).collect();
    let mut slots: Vec<Slot> = (0..cfg.n_traces)
        .map(|i| {
            let mut rng = trace_rng(cfg.seed, i as u64);
            let condition = if cfg.bernoulli {
                rng.random_bool(cfg.target_ratio)
            } else {
                plan[i]
            };
            Slot {
                rng,
                condition,
                z: Vec::new(),
                trace: None,
            }
        })
        .collect();
    for attempt in 0..cfg.resample_limit {
        fill(model, spec, cfg, &mut slots, &ids)?;
        let empty = slots.iter().filter(|s| s.trace.is_none()).count();
        if empty == 0 {
            break;
        }
        if attempt + 1 < cfg.resample_limit {
            warn!("{empty} empty traces, resampling (attempt {})", attempt + 2);
        }
    }
    let mut traces = Vec::with_capacity(cfg.n_traces);
    for (slot, id) in slots.into_iter().zip(&ids) {
        let trace = slot.trace.ok_or_else(|| {
            Error::Generation(format!(
                "trace {id}: no non-empty output after {} latent draws",
                cfg.resample_limit
            ))
        })?;
        traces.push(trace);
    }
    let mut log = EventLog::new(traces)?
        .with_meta("condgen:seed", cfg.seed.to_string())
        .with_meta("condgen:target_ratio", cfg.target_ratio.to_string())
        .with_meta("condgen:condition_attr", spec.condition_attr.clone())
        .with_meta("condgen:tau", crate::eventlog::format_timestamp(&cfg.tau));
    if let Some(id) = checkpoint_id {
        log = log.with_meta("condgen:checkpoint", id);
    }
    Ok(log)
}

/// Pairs of traces decoded from the same latent vector with the condition
/// false and true.
pub fn generate_what_if(
    model: &Cvae,
    spec: &EncodingSpec,
    n_pairs: usize,
    seed: u64,
    tau: Timestamp,
    max_len: Option<usize>,
) -> Result<Vec<(Option<Trace>, Option<Trace>)>> {
    let max_len = max_len.unwrap_or_else(|| default_max_len(spec));
    let zs: Vec<Vec<f64>> = (0..n_pairs)
        .map(|i| sample_latent(&mut trace_rng(seed, i as u64), model.config.latent_dim))
        .collect();
    let mut pairs = Vec::with_capacity(n_pairs);
    for (ci, chunk) in zs.chunks(CHUNK / 2).enumerate() {
        let doubled: Vec<Vec<f64>> = chunk.iter().flat_map(|z| [z.clone(), z.clone()]).collect();
        let conds: Vec<bool> = chunk.iter().flat_map(|_| [false, true]).collect();
        let outs = model.decode_free(&doubled, &conds, max_len + 1)?;
        for (k, pair) in outs.chunks(2).enumerate() {
            let i = ci * (CHUNK / 2) + k;
            pairs.push((
                output_to_trace(&pair[0], false, spec, tau, max_len, &format!("whatif-{i:06}-false")),
                output_to_trace(&pair[1], true, spec, tau, max_len, &format!("whatif-{i:06}-true")),
            ));
        }
    }
    Ok(pairs)
}

/// Shifts every event of `trace` by `delta`.
pub fn shift_trace(trace: &Trace, delta: Duration) -> Trace {
    let mut t = trace.clone();
    for e in &mut t.events {
        e.timestamp += delta;
    }
    t
}
