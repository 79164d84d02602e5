use std::fs::File;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use condgen::cvae::{Checkpoint, CheckpointMeta, Cvae};
use condgen::preprocess::{encode_log, EncodingSpec};
use condgen::train::{read_history, resume_training, HistoryWriter, Resume};

use crate::artifacts::{fresh_dir, Manifest};
use crate::{read_xes, Run};

#[derive(Clone, Debug, Default)]
pub struct TrainArgs {
    /// Resume from this checkpoint instead of a fresh initialization.
    pub checkpoint: Option<PathBuf>,
    pub force: bool,
    pub allow_mixed: bool,
}

pub(crate) fn load_encoding(run: &Run) -> Result<EncodingSpec> {
    let p = run.layout.encoding();
    let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
    Ok(EncodingSpec::from_json(&text)?)
}

/// Trains a model on the prepared splits and writes the best-validation
/// checkpoint, the last-epoch checkpoint and the epoch history.
pub fn train(run: &Run, args: &TrainArgs) -> Result<Checkpoint> {
    let cfg = &run.cfg;
    Manifest::read(&run.layout.prepared())?.check(&run.hash, args.allow_mixed)?;
    let spec = load_encoding(run)?;
    let train_set = encode_log(&read_xes(&run.layout.train_log())?, &spec)?;
    let val_set = encode_log(&read_xes(&run.layout.val_log())?, &spec)?;
    let tcfg = cfg.train_config();

    let (model, resume, mut kept) = match &args.checkpoint {
        Some(path) => {
            let ck = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
            if ck.encoding != spec {
                bail!(condgen::Error::Compatibility(
                    "checkpoint encoding differs from the prepared encoding".into()
                ));
            }
            let resume = Resume {
                completed_epochs: ck.meta.epoch,
                best_val_loss: ck.meta.best_val_loss,
            };
            std::fs::create_dir_all(run.layout.model())?;
            let mut kept = if run.layout.history().exists() {
                read_history(&run.layout.history())?
            } else {
                Vec::new()
            };
            kept.retain(|r| r.epoch <= resume.completed_epochs);
            log::info!("resuming after epoch {}", resume.completed_epochs);
            (ck.model()?, resume, kept)
        }
        None => {
            fresh_dir(&run.layout.model(), args.force)?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let model = Cvae::new(cfg.model.model_config(&spec), &mut rng)?;
            (model, Resume::default(), Vec::new())
        }
    };

    let mut writer = HistoryWriter::new(File::create(run.layout.history())?);
    for r in &kept {
        writer.write(r)?;
    }
    let mut write_err = None;
    let outcome = resume_training(model, &train_set, &val_set, &tcfg, &resume, |r| {
        log::info!(
            "epoch {:>4}  train {:.4}  val {:.4}  beta {:.2}{}",
            r.epoch,
            r.train_loss,
            r.val_loss,
            r.beta_mean,
            if r.best { "  *" } else { "" }
        );
        if write_err.is_none() {
            write_err = writer.write(r).err();
        }
    })?;
    if let Some(e) = write_err {
        return Err(e.into());
    }
    kept.extend(outcome.history.iter().cloned());

    let meta = |epoch, best| CheckpointMeta {
        epoch,
        seed: cfg.seed,
        best_val_loss: best,
        config_hash: Some(run.hash.clone()),
    };
    // A resumed run that never improved keeps the earlier best checkpoint.
    let keep_previous = args.checkpoint.is_some()
        && outcome.best_epoch == resume.completed_epochs
        && run.layout.checkpoint().exists();
    let best = if keep_previous {
        Checkpoint::load(&run.layout.checkpoint())?
    } else {
        let best = Checkpoint::new(
            &outcome.model,
            &spec,
            meta(outcome.best_epoch, Some(outcome.best_val_loss)),
        );
        best.save(&run.layout.checkpoint())?;
        best
    };
    let last_model = Cvae::from_params(outcome.model.config.clone(), outcome.last_params)?;
    Checkpoint::new(&last_model, &spec, meta(outcome.last_epoch, Some(outcome.best_val_loss)))
        .save(&run.layout.last_checkpoint())?;
    Manifest::write(&run.layout.model(), "train", &run.hash)?;
    log::info!(
        "best epoch {} (val {:.4}) of {} recorded",
        outcome.best_epoch,
        outcome.best_val_loss,
        kept.len()
    );
    Ok(best)
}
