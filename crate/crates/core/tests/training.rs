use chrono::{Duration, TimeZone, Utc};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use condgen::cvae::{Cvae, ModelConfig};
use condgen::eventlog::{Event, EventLog, Trace};
use condgen::preprocess::{encode_log, fit_encoding};
use condgen::train::{train, validate, TrainConfig};

/// 20 traces over {A, B, C}; the label marks traces that contain C.
fn tiny_log() -> EventLog {
    let base = Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap();
    let shapes: [&[&str]; 4] = [&["A", "B"], &["A", "C"], &["A", "B", "B"], &["A", "C", "B"]];
    let traces = (0..20)
        .map(|i| {
            let shape = shapes[i % 4];
            let start = base + Duration::hours(6 * i as i64);
            let events = shape
                .iter()
                .enumerate()
                .map(|(k, a)| Event::new(*a, start + Duration::hours(2 * k as i64)))
                .collect();
            let label = if shape.contains(&"C") { "True" } else { "False" };
            Trace::new(format!("t{i}"), events).with_cat("label", label)
        })
        .collect();
    EventLog::new(traces).unwrap()
}

#[test]
fn tiny_log_loss_drops_below_a_fifth() {
    let log = tiny_log();
    let spec = fit_encoding(&log, "label").unwrap();
    let enc = encode_log(&log, &spec).unwrap();
    let cfg = ModelConfig {
        attr_hidden: 8,
        ..ModelConfig::for_encoding(&spec).with_hidden(32)
    };
    let model = Cvae::new(cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let initial = validate(&model, &enc, 64).unwrap();
    let tcfg = TrainConfig {
        learning_rate: 3e-3,
        max_epochs: 500,
        patience: 500,
        seed: 1,
        ..TrainConfig::default()
    };
    let out = train(model, &enc, &enc, &tcfg, |_| {}).unwrap();
    let last = out.history.last().unwrap();
    assert!(out.history.len() <= 500);
    assert!(
        last.train_loss < 0.2 * initial,
        "initial {initial}, final train loss {}",
        last.train_loss
    );
    assert!(out.best_val_loss < 0.2 * initial);
}
