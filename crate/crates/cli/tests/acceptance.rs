//! Acceptance suite. Prints one line per criterion and exits non-zero if any
//! criterion fails.
//!
//! Criteria 1 to 4 need the public event logs. Point `CONDGEN_DATA_DIR` at a
//! directory holding them under the file names used in `configs/*.json`.
//! Without it those criteria report SKIP and run a toy-log proxy instead;
//! the proxy still has to pass.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use chrono::{Duration, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use condgen::cvae::{kl_divergence, loss, Cvae, ForwardMode, LatentPosterior, ModelConfig};
use condgen::eventlog::{
    apply_labeler, write_xes, Event, EventLog, LabelerSpec, Timestamp, Trace,
};
use condgen::generate::{
    decode_trace, generate_log, generate_what_if, sample_latent, shift_trace, trace_rng,
    GenerationConfig,
};
use condgen::metrics::{emd_1d, two_gram_distance, Template};
use condgen::nn::Mat;
use condgen::preprocess::{encode_log, fit_encoding, EncodedTrace, EncodingSpec};
use condgen::synthetic::{toy_log, TOY_LABEL};
use condgen::train::{annealing_beta, train, validate, AnnealingSchedule, EarlyStopping, StopDecision, TrainConfig};
use condgen_cli::{
    evaluate, generate, prepare, EvaluateArgs, EvaluationResults, ExperimentConfig, GenerateArgs,
    Run, TrainArgs,
};

type Check = Result<Outcome, String>;
type Criterion<'a> = (u8, &'static str, Box<dyn FnOnce() -> Check + 'a>);

enum Outcome {
    Pass(String),
    /// The criterion proper could not run; the proxy described passed.
    Skip(String),
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn data_dir() -> Option<PathBuf> {
    std::env::var_os("CONDGEN_DATA_DIR").map(PathBuf::from)
}

/// Loads `configs/<name>.json` with the dataset read from the data dir.
fn real_config(name: &str, data: &Path) -> Option<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&configs_dir().join(format!("{name}.json"))).ok()?;
    let file = cfg.dataset.path.file_name()?.to_owned();
    cfg.dataset.path = data.join(file);
    cfg.dataset.path.exists().then_some(cfg)
}

fn ts(secs: i64) -> Timestamp {
    Utc.timestamp_opt(1_600_000_000 + secs, 0).unwrap()
}

fn seq_trace(id: &str, acts: &[&str], step_secs: i64) -> Trace {
    let events = acts
        .iter()
        .enumerate()
        .map(|(k, a)| Event::new(*a, ts(k as i64 * step_secs)))
        .collect();
    Trace::new(id, events)
}

fn label_of(log: &EventLog) -> Vec<String> {
    log.traces()
        .iter()
        .map(|t| t.attrs_cat["label"].clone())
        .collect()
}

// ---------------------------------------------------------------- criterion 1

const TABLE_RATIOS: [(&str, f64); 4] = [
    ("sepsis", 0.14),
    ("bpic2012_a", 0.17),
    ("bpic2012_b", 0.28),
    ("traffic_fines", 0.04),
];

fn labeler_proxy() -> Result<String, String> {
    let appeal = EventLog::new(vec![
        seq_trace("1", &["Create Fine", "Appeal to Judge", "Payment"], 3600),
        seq_trace("2", &["Create Fine", "Payment"], 3600),
    ])
    .map_err(|e| e.to_string())?;
    let appeal_spec = LabelerSpec::ActivitySetPresence {
        activities: vec!["Appeal to Judge".into(), "Send Appeal to Prefecture".into()],
    };
    let got = label_of(&apply_labeler(&appeal, &appeal_spec, "label").map_err(|e| e.to_string())?);
    ensure(got == ["True", "False"], || format!("appeal labels {got:?}"))?;

    let offers = EventLog::new(vec![
        seq_trace("1", &["A_SUBMITTED", "O_CREATED-COMPLETE", "O_CREATED-COMPLETE"], 60),
        seq_trace("2", &["A_SUBMITTED", "O_CREATED-COMPLETE"], 60),
    ])
    .map_err(|e| e.to_string())?;
    let mult = LabelerSpec::ActivityMultiplicity {
        activity: "O_CREATED-COMPLETE".into(),
        min_count: 2,
    };
    let got = label_of(&apply_labeler(&offers, &mult, "label").map_err(|e| e.to_string())?);
    ensure(got == ["True", "False"], || format!("multiplicity labels {got:?}"))?;

    let day = 86_400;
    let er = EventLog::new(vec![
        Trace::new("late", vec![Event::new("Release A", ts(0)), Event::new("Return ER", ts(30 * day))]),
        Trace::new("early", vec![Event::new("Release A", ts(0)), Event::new("Return ER", ts(27 * day))]),
    ])
    .map_err(|e| e.to_string())?;
    let ret = LabelerSpec::ReturnWithinDelta {
        release_activities: vec!["Release A".into()],
        return_activity: "Return ER".into(),
        delta_seconds: 28.0 * day as f64,
    };
    let got = label_of(&apply_labeler(&er, &ret, "label").map_err(|e| e.to_string())?);
    ensure(got == ["False", "True"], || format!("return labels {got:?}"))?;
    Ok("toy proxy PASS: appeal, multiplicity and 28-day return labelers on hand traces".into())
}

fn criterion_1() -> Check {
    let proxy = labeler_proxy()?;
    let Some(data) = data_dir() else {
        return Ok(Outcome::Skip(format!("CONDGEN_DATA_DIR unset; {proxy}")));
    };
    let started = Instant::now();
    let mut parts = Vec::new();
    for (name, want) in TABLE_RATIOS {
        let Some(cfg) = real_config(name, &data) else {
            return Ok(Outcome::Skip(format!("{name} log missing in {}; {proxy}", data.display())));
        };
        let out = tempfile::tempdir().map_err(|e| e.to_string())?;
        let run = Run::new(cfg, Some(out.path()));
        let prepared = prepare(&run, true).map_err(|e| format!("{name}: {e:#}"))?;
        let ratio = prepared.summary.conditional_ratio.unwrap_or(f64::NAN);
        ensure((ratio - want).abs() <= 0.01, || {
            format!("{name}: ratio {:.2}% vs {:.0}%", 100.0 * ratio, 100.0 * want)
        })?;
        parts.push(format!(
            "{name} {:.1}% ({} traces)",
            100.0 * ratio,
            prepared.summary.traces
        ));
    }
    let secs = started.elapsed().as_secs_f64();
    ensure(secs < 120.0, || format!("took {secs:.0}s"))?;
    Ok(Outcome::Pass(format!("{} in {secs:.0}s", parts.join(", "))))
}

// ------------------------------------------------------------ criteria 2 to 4

/// Runs prepare, train, generate and evaluate under `out`.
fn pipeline(cfg: ExperimentConfig, out: &Path) -> Result<EvaluationResults, String> {
    let run = Run::new(cfg, Some(out));
    let e = |e: anyhow::Error| format!("{e:#}");
    prepare(&run, true).map_err(e)?;
    let targs = TrainArgs {
        force: true,
        ..TrainArgs::default()
    };
    condgen_cli::train(&run, &targs).map_err(e)?;
    let gargs = GenerateArgs {
        force: true,
        ..GenerateArgs::default()
    };
    generate(&run, &gargs).map_err(e)?;
    let eargs = EvaluateArgs {
        force: true,
        ..EvaluateArgs::default()
    };
    evaluate(&run, &eargs).map_err(e)
}

struct RunResults {
    results: EvaluationResults,
    real: bool,
}

fn model_results() -> Result<RunResults, String> {
    if let Some(cfg) = data_dir().and_then(|d| real_config("sepsis", &d)) {
        let out = tempfile::tempdir().map_err(|e| e.to_string())?;
        return Ok(RunResults {
            results: pipeline(cfg, out.path())?,
            real: true,
        });
    }
    let cfg = ExperimentConfig::load(&configs_dir().join("toy.json")).map_err(|e| e.to_string())?;
    let out = tempfile::tempdir().map_err(|e| e.to_string())?;
    Ok(RunResults {
        results: pipeline(cfg, out.path())?,
        real: false,
    })
}

fn pct(x: f64) -> String {
    format!("{:.1}%", 100.0 * x)
}

fn criterion_2(r: &RunResults) -> Check {
    let m = r.results.model("cvae").ok_or("no cvae results")?;
    let mean = m.mean_cond_ratio().ok_or("no a-posteriori ratio")?;
    let train = r.results.train_ratio;
    let detail = format!(
        "mean a-posteriori {} over {} logs vs training {}",
        pct(mean),
        m.reports.len(),
        pct(train)
    );
    ensure((mean - train).abs() <= 0.04, || detail.clone())?;
    if r.real {
        ensure(m.reports.len() == 10, || format!("{} logs", m.reports.len()))?;
        Ok(Outcome::Pass(detail))
    } else {
        Ok(Outcome::Skip(format!("Sepsis log unavailable; toy proxy PASS: {detail}")))
    }
}

fn criterion_3(r: &RunResults) -> Check {
    let m = r.results.model("cvae").ok_or("no cvae results")?;
    let conf = m.mean_conf();
    let self_conf = r.results.mean_self_conf();
    let fmt = |x: Option<f64>| x.map_or("n/a".to_string(), |v| format!("{v:.3}"));
    let detail = format!("CONF {} vs train_log self-conformance {}", fmt(conf), fmt(self_conf));
    if !r.real {
        return Ok(Outcome::Skip(format!("Sepsis log unavailable; toy values reported only: {detail}")));
    }
    let conf = conf.ok_or("no novel variants to score")?;
    let self_conf = self_conf.ok_or("no baseline self-conformance")?;
    ensure(conf >= 0.85 && conf >= 0.9 * self_conf, || detail.clone())?;
    Ok(Outcome::Pass(detail))
}

fn criterion_4(r: &RunResults) -> Check {
    let m = r.results.model("cvae").ok_or("no cvae results")?;
    let n = m.reports.len().max(1) as f64;
    let mean = |f: fn(&condgen::metrics::MetricReport) -> usize| {
        m.reports.iter().map(f).sum::<usize>() as f64 / n
    };
    let (total, in_train, in_test) = (
        mean(|x| x.variants.total),
        mean(|x| x.variants.in_train),
        mean(|x| x.variants.in_test),
    );
    let novel = mean(|x| x.variants.total - x.variants.in_train);
    let detail = format!("variants {total:.1}, novel {novel:.1}, in train {in_train:.1}, in test {in_test:.1}");
    ensure(in_train > 0.0, || detail.clone())?;
    if r.real {
        ensure(novel > 0.0, || detail.clone())?;
        Ok(Outcome::Pass(detail))
    } else {
        Ok(Outcome::Skip(format!("Sepsis log unavailable; toy proxy PASS (in-train > 0): {detail}")))
    }
}

// ---------------------------------------------------------------- criterion 5

/// Min-cost flow transport between uniform point masses: source → a_i with
/// capacity m, a_i → b_j at cost |a_i − b_j|, b_j → sink with capacity n.
fn transport(a: &[f64], b: &[f64]) -> f64 {
    let (n, m) = (a.len(), b.len());
    let (s, t, v) = (0, n + m + 1, n + m + 2);
    // (to, cap, cost), reverse edge at index ^ 1
    let mut edges: Vec<(usize, i64, f64)> = Vec::new();
    let add = |edges: &mut Vec<(usize, i64, f64)>, u: usize, w: usize, cap: i64, cost: f64| {
        edges.push((w, cap, cost));
        edges.push((u, 0, -cost));
    };
    for (i, x) in a.iter().enumerate() {
        add(&mut edges, s, 1 + i, m as i64, 0.0);
        for (j, y) in b.iter().enumerate() {
            add(&mut edges, 1 + i, 1 + n + j, (n * m) as i64, (x - y).abs());
        }
    }
    for j in 0..m {
        add(&mut edges, 1 + n + j, t, n as i64, 0.0);
    }
    let from = |edges: &Vec<(usize, i64, f64)>, e: usize| edges[e ^ 1].0;
    let (mut flow, mut cost) = (0i64, 0.0);
    while flow < (n * m) as i64 {
        let mut dist = vec![f64::INFINITY; v];
        let mut via = vec![usize::MAX; v];
        dist[s] = 0.0;
        for _ in 0..v {
            let mut changed = false;
            for e in 0..edges.len() {
                let (to, cap, c) = edges[e];
                let u = from(&edges, e);
                if cap > 0 && dist[u] + c < dist[to] - 1e-12 {
                    dist[to] = dist[u] + c;
                    via[to] = e;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        let mut push = i64::MAX;
        let mut x = t;
        while x != s {
            push = push.min(edges[via[x]].1);
            x = from(&edges, via[x]);
        }
        let mut x = t;
        while x != s {
            let e = via[x];
            edges[e].1 -= push;
            edges[e ^ 1].1 += push;
            cost += push as f64 * edges[e].2;
            x = from(&edges, e);
        }
        flow += push;
    }
    cost / (n * m) as f64
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// 2-gram TV distance by direct enumeration, as a reduced fraction.
fn two_gram_fraction(x: &[&str], y: &[&str]) -> (u64, u64) {
    let grams = |log: &[&str]| {
        let mut m: BTreeMap<(String, String), u64> = BTreeMap::new();
        for t in log {
            let toks: Vec<String> = std::iter::once("^".to_string())
                .chain(t.chars().map(String::from))
                .chain(std::iter::once("$".to_string()))
                .collect();
            for w in toks.windows(2) {
                *m.entry((w[0].clone(), w[1].clone())).or_default() += 1;
            }
        }
        m
    };
    let (p, q) = (grams(x), grams(y));
    let (np, nq): (u64, u64) = (p.values().sum(), q.values().sum());
    let keys: BTreeSet<_> = p.keys().chain(q.keys()).collect();
    let num: u64 = keys
        .into_iter()
        .map(|k| (p.get(k).copied().unwrap_or(0) * nq).abs_diff(q.get(k).copied().unwrap_or(0) * np))
        .sum();
    let den = 2 * np * nq;
    let g = gcd(num, den).max(1);
    (num / g, den / g)
}

fn letters_log(seqs: &[&str]) -> EventLog {
    let traces = seqs
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let acts: Vec<String> = s.chars().map(String::from).collect();
            let refs: Vec<&str> = acts.iter().map(String::as_str).collect();
            seq_trace(&format!("t{i}"), &refs, 3600)
        })
        .collect();
    EventLog::new(traces).unwrap()
}

const TWO_GRAM_PAIRS: [(&[&str], &[&str]); 20] = [
    (&["AB"], &["AB"]),
    (&["AB"], &["AC"]),
    (&["AB"], &["CD"]),
    (&["A"], &["A"]),
    (&["A"], &["B"]),
    (&["AB", "AB"], &["AB"]),
    (&["AB", "AC"], &["AB"]),
    (&["ABC"], &["ACB"]),
    (&["AAA"], &["A"]),
    (&["ABAB"], &["BABA"]),
    (&["AB", "BA"], &["AA", "BB"]),
    (&["ABC", "A"], &["AB", "C"]),
    (&["ABCD"], &["DCBA"]),
    (&["AB", "AB", "AC"], &["AB", "AC", "AC"]),
    (&["A", "B", "C"], &["ABC"]),
    (&["ABBA"], &["ABA", "BB"]),
    (&["CAB", "CAB"], &["CBA"]),
    (&["AAB", "ABB"], &["AB"]),
    (&["ABCABC"], &["ABC", "ABC"]),
    (&["B", "AB", "CAB"], &["AB", "AB", "A"]),
];

/// Whether `t` holds on `w`, written out as quantified statements over
/// positions rather than as a scan.
fn declare_semantics(t: Template, w: &[char]) -> bool {
    let (a, b) = ('a', 'b');
    let pos = |c: char| -> Vec<usize> { (0..w.len()).filter(|&i| w[i] == c).collect() };
    let (pa, pb) = (pos(a), pos(b));
    let next_a_after = |i: usize| pa.iter().copied().find(|&k| k > i);
    let prev_a_before = |j: usize| pa.iter().copied().rev().find(|&k| k < j);
    match t {
        Template::Existence => !pa.is_empty(),
        Template::RespondedExistence => pa.is_empty() || !pb.is_empty(),
        Template::Response => pa.iter().all(|&i| pb.iter().any(|&j| j > i)),
        Template::AlternateResponse => pa.iter().all(|&i| {
            let limit = next_a_after(i).unwrap_or(w.len());
            pb.iter().any(|&j| j > i && j < limit)
        }),
        Template::ChainResponse => pa.iter().all(|&i| i + 1 < w.len() && w[i + 1] == b),
        Template::Precedence => pb.iter().all(|&j| pa.iter().any(|&i| i < j)),
        Template::AlternatePrecedence => pb.iter().all(|&j| {
            let prev_b = pb.iter().copied().rev().find(|&k| k < j);
            match prev_a_before(j) {
                Some(i) => prev_b.is_none_or(|k| k < i),
                None => false,
            }
        }),
        Template::ChainPrecedence => pb.iter().all(|&j| j > 0 && w[j - 1] == a),
        Template::CoExistence => pa.is_empty() == pb.is_empty(),
        Template::NotCoExistence => pa.is_empty() || pb.is_empty(),
        Template::NotSuccession => pa.iter().all(|&i| pb.iter().all(|&j| j < i)),
    }
}

fn criterion_5() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.random_range(1..=5);
        let m = rng.random_range(1..=5);
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(-50.0..50.0)).collect();
        let b: Vec<f64> = (0..m).map(|_| rng.random_range(-50.0..50.0)).collect();
        let got = emd_1d(&a, &b).map_err(|e| e.to_string())?;
        let want = transport(&a, &b);
        worst = worst.max((got - want).abs());
        ensure((got - want).abs() < 1e-9, || format!("EMD {a:?} vs {b:?}: {got} != {want}"))?;
    }

    for (x, y) in TWO_GRAM_PAIRS {
        let (num, den) = two_gram_fraction(x, y);
        let want = num as f64 / den as f64;
        let got = two_gram_distance(&letters_log(x), &letters_log(y));
        ensure(got == want, || format!("2GD {x:?} vs {y:?}: {got} != {num}/{den}"))?;
    }
    // Spot values worked out by hand.
    ensure(two_gram_fraction(TWO_GRAM_PAIRS[1].0, TWO_GRAM_PAIRS[1].1) == (2, 3), || "AB vs AC".into())?;
    ensure(two_gram_fraction(TWO_GRAM_PAIRS[2].0, TWO_GRAM_PAIRS[2].1) == (1, 1), || "AB vs CD".into())?;

    let mut words: Vec<Vec<char>> = vec![vec![]];
    let mut frontier = words.clone();
    for _ in 0..5 {
        frontier = frontier
            .iter()
            .flat_map(|w| ['a', 'b', 'c'].map(|c| [w.clone(), vec![c]].concat()))
            .collect();
        words.extend(frontier.iter().cloned());
    }
    for t in Template::ALL {
        for w in &words {
            let acts: Vec<String> = w.iter().map(|c| c.to_string()).collect();
            let got = t.holds("a", "b", &acts);
            ensure(got == declare_semantics(t, w), || {
                format!("{t:?} on {:?}: checker says {got}", w.iter().collect::<String>())
            })?;
        }
    }
    Ok(Outcome::Pass(format!(
        "200 EMD instances (max err {worst:.1e}), 20 2GD pairs exact, {} templates x {} traces",
        Template::ALL.len(),
        words.len()
    )))
}

// ---------------------------------------------------------------- criterion 6

fn toy_fixture(n: usize, seed: u64) -> (EncodingSpec, Vec<EncodedTrace>) {
    let log = toy_log(n, seed, ts(0)).unwrap();
    let spec = fit_encoding(&log, TOY_LABEL).unwrap();
    let enc = encode_log(&log, &spec).unwrap();
    (spec, enc)
}

fn scalar_loss(
    out: &condgen::cvae::DecoderOutput,
    t: &EncodedTrace,
    post: &LatentPosterior,
    beta: f64,
) -> f64 {
    let xent = |logits: &[f64], k: usize| {
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|x| (x - max).exp()).sum();
        z.ln() + max - logits[k]
    };
    let n = t.n_events();
    let mut total = 0.0;
    for s in 0..=n {
        total += xent(&out.activity_logits[s], t.activity_ids[s]);
    }
    for s in 0..n {
        total += (out.interarrivals_hat[s] - t.interarrivals[s]).powi(2);
    }
    for (j, &c) in t.cat_attr_ids.iter().enumerate() {
        total += xent(&out.cat_attr_logits[j], c);
    }
    for (j, &v) in t.num_attrs.iter().enumerate() {
        total += (out.num_attrs_hat[j] - v).powi(2);
    }
    let kl: f64 = post
        .mu
        .iter()
        .zip(&post.log_var)
        .map(|(m, lv)| 0.5 * (m * m + lv.exp() - lv - 1.0))
        .sum();
    total + beta * kl
}

fn criterion_6() -> Check {
    // KL against Monte Carlo: E_q[log q(z) − log p(z)].
    let post = LatentPosterior {
        mu: vec![0.7, -0.3, 1.1],
        log_var: vec![-0.5, 0.4, 0.1],
    };
    let sigma = post.sigma();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let n = 1_000_000;
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..n {
        let e = sample_latent(&mut rng, 3);
        let d: f64 = (0..3)
            .map(|j| {
                let z = post.mu[j] + sigma[j] * e[j];
                -0.5 * e[j] * e[j] - sigma[j].ln() + 0.5 * z * z
            })
            .sum();
        sum += d;
        sum_sq += d * d;
    }
    let mc = sum / n as f64;
    let se = ((sum_sq / n as f64 - mc * mc) / n as f64).sqrt();
    let kl = kl_divergence(&post);
    ensure((kl - mc).abs() < 3.0 * se, || format!("KL {kl} vs MC {mc} ± {se}"))?;

    // Total loss against the scalar re-implementation on random tiny models.
    let mut checked = 0;
    for seed in 0..5u64 {
        let (spec, enc) = toy_fixture(6, 100 + seed);
        let cfg = ModelConfig {
            attr_hidden: 3,
            latent_dim: 2,
            ..ModelConfig::for_encoding(&spec).with_hidden(5)
        };
        let m = Cvae::new(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 50);
        for t in &enc {
            let post = LatentPosterior {
                mu: sample_latent(&mut rng, 2),
                log_var: sample_latent(&mut rng, 2).iter().map(|v| 0.5 * v).collect(),
            };
            let beta = rng.random_range(0.0..1.0);
            let out = m.decode(&post.mu, t.condition == 1.0, Some(t), 0).unwrap();
            let got = loss(&out, t, &post, beta).unwrap().total;
            let want = scalar_loss(&out, t, &post, beta);
            ensure((got - want).abs() < 1e-6, || format!("loss {got} vs {want}"))?;
            checked += 1;
        }
    }

    // Central finite differences on an 8-hidden, 2-latent model.
    let (spec, enc) = toy_fixture(4, 7);
    let cfg = ModelConfig {
        attr_hidden: 3,
        latent_dim: 2,
        ..ModelConfig::for_encoding(&spec).with_hidden(8)
    };
    let mut m = Cvae::new(cfg, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
    let refs: Vec<&EncodedTrace> = enc.iter().collect();
    let eval = |m: &Cvae, grads: bool| {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut mode = ForwardMode { rng: Some(&mut rng) };
        m.batch_loss(&refs, 0.7, &mut mode, grads).unwrap()
    };
    let analytic = eval(&m, true).1.unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..m.params.len() {
        let len = m.params.at(i).len();
        let mut numeric = vec![0.0; len];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let orig = m.params.at(i).data[j];
            m.params.at_mut(i).data[j] = orig + h;
            let up = eval(&m, false).0.total;
            m.params.at_mut(i).data[j] = orig - h;
            let down = eval(&m, false).0.total;
            m.params.at_mut(i).data[j] = orig;
            *slot = (up - down) / (2.0 * h);
        }
        let zero = Mat::zeros(1, len);
        let a = &analytic[i].as_ref().unwrap_or(&zero).data;
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff: Vec<f64> = a.iter().zip(&numeric).map(|(x, y)| x - y).collect();
        let scale = norm(a).max(norm(&numeric));
        let rel = if scale < 1e-10 { norm(&diff) } else { norm(&diff) / scale };
        worst = worst.max(rel);
        let name = m.params.names().nth(i).unwrap_or("?").to_string();
        ensure(rel < 1e-4, || format!("gradient of {name}: relative error {rel:.2e}"))?;
    }
    Ok(Outcome::Pass(format!(
        "KL {kl:.4} vs MC {mc:.4} ± {se:.4}; {checked} loss instances; gradients max rel err {worst:.1e} over {} tensors",
        m.params.len()
    )))
}

// ---------------------------------------------------------------- criterion 7

fn criterion_7() -> Check {
    let sched = AnnealingSchedule::new(8, 0.5, 800).map_err(|e| e.to_string())?;
    let period = 100;
    for c in 0..8 {
        let start = c * period;
        ensure(annealing_beta(start, &sched) == 0.0, || format!("β at cycle start {start}"))?;
        for s in start..start + period {
            let b = annealing_beta(s, &sched);
            if s - start >= period / 2 {
                ensure(b == 1.0, || format!("β({s}) = {b} on plateau"))?;
            } else {
                ensure(b < 1.0 && b >= annealing_beta(s.saturating_sub(1).max(start), &sched), || {
                    format!("β({s}) = {b} not ramping")
                })?;
            }
            if s + period < 800 {
                ensure(annealing_beta(s + period, &sched) == b, || format!("β not periodic at {s}"))?;
            }
        }
    }
    ensure((annealing_beta(25, &sched) - 0.5).abs() < 1e-12, || "β(25) != 0.5".into())?;

    // Scripted validation losses with patience 2.
    let script = [5.0, 4.0, 4.5, 3.0, 3.5, 3.2, 3.1, 2.0];
    let mut es = EarlyStopping::new(2);
    let mut stopped_at = None;
    for (i, l) in script.iter().enumerate() {
        if es.update(i + 1, *l) == StopDecision::Stop {
            stopped_at = Some(i + 1);
            break;
        }
    }
    ensure(stopped_at == Some(7) && es.best() == (4, 3.0), || {
        format!("stopped at {stopped_at:?}, best {:?}", es.best())
    })?;

    // A real run hands back the argmin-validation parameters.
    let (spec, enc) = toy_fixture(40, 9);
    let cfg = ModelConfig {
        attr_hidden: 4,
        ..ModelConfig::for_encoding(&spec).with_hidden(12)
    };
    let model = Cvae::new(cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let tcfg = TrainConfig {
        learning_rate: 1e-2,
        batch_size: 16,
        max_epochs: 40,
        patience: 5,
        seed: 3,
        ..TrainConfig::default()
    };
    let (tr, va) = enc.split_at(30);
    let out = train(model, tr, va, &tcfg, |_| {}).map_err(|e| e.to_string())?;
    let (best_epoch, best) = out
        .history
        .iter()
        .map(|r| (r.epoch, r.val_loss))
        .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
    let again = validate(&out.model, va, 16).map_err(|e| e.to_string())?;
    ensure(out.best_epoch == best_epoch && out.best_val_loss == best && again == best, || {
        format!("best epoch {} ({}), history argmin {best_epoch} ({best}), re-validated {again}", out.best_epoch, out.best_val_loss)
    })?;
    Ok(Outcome::Pass(format!(
        "8-cycle schedule checked step by step; patience script stops at epoch 7; run of {} epochs returns epoch {best_epoch}",
        out.history.len()
    )))
}

// ---------------------------------------------------------------- criterion 8

fn criterion_8() -> Check {
    let (spec, enc) = toy_fixture(60, 12);
    let cfg = ModelConfig {
        attr_hidden: 4,
        ..ModelConfig::for_encoding(&spec).with_hidden(16)
    };
    let model = Cvae::new(cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let tcfg = TrainConfig {
        learning_rate: 1e-2,
        batch_size: 30,
        max_epochs: 30,
        patience: 30,
        seed: 4,
        ..TrainConfig::default()
    };
    let model = train(model, &enc, &enc, &tcfg, |_| {}).map_err(|e| e.to_string())?.model;

    let mut gcfg = GenerationConfig::new(10_000, 0.3, ts(0), 17);
    gcfg.resample_limit = 50;
    let big = generate_log(&model, &gcfg, &spec, None).map_err(|e| e.to_string())?;
    ensure(big.len() == 10_000, || format!("{} traces", big.len()))?;
    let bad = big
        .traces()
        .iter()
        .filter(|t| t.events.windows(2).any(|w| w[0].timestamp > w[1].timestamp))
        .count();
    ensure(bad == 0, || format!("{bad} traces with decreasing timestamps"))?;
    let earliest = big.traces().iter().map(|t| t.start()).min().unwrap();
    ensure(earliest >= ts(0), || "a trace starts before τ".into())?;

    let mut small = GenerationConfig::new(200, 0.5, ts(0), 3);
    small.resample_limit = 50;
    let base = generate_log(&model, &small, &spec, None).map_err(|e| e.to_string())?;
    let delta = Duration::days(17) + Duration::seconds(11);
    small.tau = ts(0) + delta;
    let shifted = generate_log(&model, &small, &spec, None).map_err(|e| e.to_string())?;
    for (a, b) in base.traces().iter().zip(shifted.traces()) {
        ensure(shift_trace(a, delta) == *b, || format!("τ shift breaks trace {}", a.id))?;
    }

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    small.tau = ts(0);
    let mut bytes = Vec::new();
    for k in 0..2 {
        let log = generate_log(&model, &small, &spec, Some("ck")).map_err(|e| e.to_string())?;
        let p = dir.path().join(format!("run{k}.xes"));
        write_xes(&log, &p).map_err(|e| e.to_string())?;
        bytes.push(std::fs::read(&p).map_err(|e| e.to_string())?);
    }
    ensure(bytes[0] == bytes[1], || "two runs with one seed differ".into())?;

    let pairs = generate_what_if(&model, &spec, 8, 5, ts(0), Some(8)).map_err(|e| e.to_string())?;
    let mut differing = 0;
    for (i, (f, t)) in pairs.iter().enumerate() {
        let z = sample_latent(&mut trace_rng(5, i as u64), model.config.latent_dim);
        let want_f = decode_trace(&model, &z, false, &spec, ts(0), 8, &format!("whatif-{i:06}-false"))
            .map_err(|e| e.to_string())?;
        let want_t = decode_trace(&model, &z, true, &spec, ts(0), 8, &format!("whatif-{i:06}-true"))
            .map_err(|e| e.to_string())?;
        ensure(*f == want_f && *t == want_t, || format!("pair {i} does not share z"))?;
        if let (Some(f), Some(t)) = (f, t) {
            ensure(f.attrs_cat[TOY_LABEL] == "False" && t.attrs_cat[TOY_LABEL] == "True", || {
                format!("pair {i} condition not flipped")
            })?;
            if f.events != t.events {
                differing += 1;
            }
        }
    }
    Ok(Outcome::Pass(format!(
        "10^4 traces monotone; τ shift exact on 200 traces; XES bytes identical; 8 what-if pairs aligned ({differing} differ between F and T)"
    )))
}

// --------------------------------------------------------------------- main

fn run_check(f: impl FnOnce() -> Check) -> Check {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        Err(format!("panicked: {msg}"))
    })
}

fn main() {
    // `cargo test -- --list` and filters are not supported; run everything.
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let started = Instant::now();
    let results = catch_unwind(model_results).unwrap_or_else(|_| Err("pipeline panicked".into()));
    let checks: Vec<Criterion<'_>> = vec![
        (1, "labeler fidelity", Box::new(criterion_1)),
        (2, "conditional control", Box::new(|| criterion_2(results.as_ref().map_err(Clone::clone)?))),
        (3, "conformance", Box::new(|| criterion_3(results.as_ref().map_err(Clone::clone)?))),
        (4, "variability", Box::new(|| criterion_4(results.as_ref().map_err(Clone::clone)?))),
        (5, "metric-kernel oracles", Box::new(criterion_5)),
        (6, "model math", Box::new(criterion_6)),
        (7, "schedule and training mechanics", Box::new(criterion_7)),
        (8, "generation contracts", Box::new(criterion_8)),
    ];
    let mut failed = 0;
    println!();
    for (n, name, f) in checks {
        let t = Instant::now();
        let line = match run_check(f) {
            Ok(Outcome::Pass(d)) => format!("PASS  {d}"),
            Ok(Outcome::Skip(d)) => format!("SKIP  {d}"),
            Err(e) => {
                failed += 1;
                format!("FAIL  {e}")
            }
        };
        println!("criterion {n} ({name}): {line} [{:.1}s]", t.elapsed().as_secs_f64());
    }
    println!(
        "acceptance: {} failed, {:.0}s total",
        failed,
        started.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
