use chrono::{TimeZone, Utc};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use condgen::cvae::{Cvae, ModelConfig};
use condgen::eventlog::{apply_labeler, chronological_split, conditional_ratio, LabelerSpec};
use condgen::generate::{generate_log, GenerationConfig};
use condgen::preprocess::{encode_log, fit_encoding};
use condgen::synthetic::{toy_log, TOY_LABEL};
use condgen::train::{train, TrainConfig};

#[test]
fn trained_toy_model_generates_labelled_logs_after_tau() {
    let start = Utc.with_ymd_and_hms(2021, 3, 1, 0, 0, 0).unwrap();
    let log = toy_log(300, 11, start).unwrap();
    let (tr, va, te) = chronological_split(&log, (0.7, 0.1, 0.2)).unwrap();
    let spec = fit_encoding(&tr, TOY_LABEL).unwrap();
    let cfg = ModelConfig {
        attr_hidden: 8,
        ..ModelConfig::for_encoding(&spec).with_hidden(32)
    };
    let model = Cvae::new(cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let tcfg = TrainConfig {
        learning_rate: 3e-3,
        batch_size: 32,
        max_epochs: 40,
        patience: 40,
        seed: 2,
        ..TrainConfig::default()
    };
    let out = train(
        model,
        &encode_log(&tr, &spec).unwrap(),
        &encode_log(&va, &spec).unwrap(),
        &tcfg,
        |_| {},
    )
    .unwrap();

    let ratio = conditional_ratio(&tr, TOY_LABEL).unwrap();
    let tau = te.first_timestamp().unwrap();
    let gen = generate_log(&out.model, &GenerationConfig::new(te.len(), ratio, tau, 5), &spec, None).unwrap();
    assert_eq!(gen.len(), te.len());
    let planned = conditional_ratio(&gen, TOY_LABEL).unwrap();
    assert!((planned - (te.len() as f64 * ratio).round() / te.len() as f64).abs() < 1e-12);
    for t in gen.traces() {
        assert!(t.start() >= tau);
        assert!(t.events.windows(2).all(|w| w[0].timestamp <= w[1].timestamp));
        assert!(gen.activity_alphabet().is_subset(tr.activity_alphabet()));
    }

    // Re-labelling the output measures how well the condition steers it.
    let relabelled = apply_labeler(
        &condgen::eventlog::remove_attribute(&gen, TOY_LABEL),
        &LabelerSpec::ActivityPresence {
            activity: "Appeal".into(),
        },
        TOY_LABEL,
    )
    .unwrap();
    let a_posteriori = conditional_ratio(&relabelled, TOY_LABEL).unwrap();
    assert!(
        (a_posteriori - ratio).abs() < 0.1,
        "a-posteriori {a_posteriori} vs training {ratio}"
    );
}
