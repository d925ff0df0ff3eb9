use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{HarnessError, ImageTable, OwnedQuestion, QuestionProvider, Result};
use crate::corruption::NoiseLevel;
use crate::dataset::{AnswerVocabulary, QuestionRecord};
use crate::models::{ModelError, VqaModel};
use crate::tensor::{write_checkpoint, Adam, AdamConfig, ParamSet, Tensor, TensorError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Epoch cadence for checkpoints and selection; 0 checkpoints only the
    /// last epoch.
    pub checkpoint_every: usize,
    /// Run a forward pass over the training set after each epoch to
    /// record its loss and accuracy.
    pub track_train_accuracy: bool,
    /// Stop once tracked training accuracy reaches this value.
    pub stop_at_train_accuracy: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            adam: AdamConfig::default(),
            seed: 0,
            checkpoint_every: 1,
            track_train_accuracy: false,
            stop_at_train_accuracy: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(HarnessError::Config("epochs and batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// One labelled training input.
#[derive(Clone, Debug)]
pub struct TrainExample {
    pub question_id: u64,
    pub question: OwnedQuestion,
    pub image: Tensor,
    pub label: usize,
}

/// Training examples for records with an in-vocabulary label, using
/// noise-free inputs. A missing input is an error here, unlike in
/// evaluation.
pub fn prepare_examples(
    records: &[QuestionRecord],
    provider: &dyn QuestionProvider,
    images: &ImageTable,
    answers: &AnswerVocabulary,
    blind: bool,
) -> Result<Vec<TrainExample>> {
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        let Some(label) = answers.label_of(r) else { continue };
        let image = if blind {
            Tensor::scalar(0.0)
        } else {
            images.get(r.image_id)?.clone()
        };
        out.push(TrainExample {
            question_id: r.question_id,
            question: provider.question(r, NoiseLevel::default())?,
            image,
            label,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean of the batch losses seen during the epoch.
    pub mean_loss: f64,
    pub train_loss: Option<f64>,
    pub train_accuracy: Option<f64>,
    pub selection_accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    /// Mean loss over the training set before the first update.
    pub initial_loss: f64,
    pub epochs: Vec<EpochStats>,
    /// Epoch whose parameters the model holds on return.
    pub best_epoch: usize,
    pub best_selection_accuracy: Option<f64>,
    pub checkpoints: Vec<PathBuf>,
}

/// Optional outputs and model selection for [`train`].
#[derive(Default)]
pub struct TrainHooks<'a> {
    /// Where `epoch_NNN.ckpt` and `best.ckpt` go.
    pub out_dir: Option<&'a Path>,
    /// Accuracy used to pick the best checkpoint. Without it the last
    /// epoch wins.
    pub select: Option<&'a dyn Fn(&VqaModel) -> f64>,
}

/// Mini-batch Adam on the mean per-example cross-entropy. Batches are
/// reshuffled every epoch from the seed, so equal seeds give identical
/// runs. On return the model holds the selected checkpoint.
pub fn train(
    model: &mut VqaModel,
    examples: &[TrainExample],
    config: &TrainConfig,
    hooks: &TrainHooks<'_>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if examples.is_empty() {
        return Err(HarnessError::EmptyDataset);
    }
    if let Some(dir) = hooks.out_dir {
        std::fs::create_dir_all(dir).map_err(super::io_err(dir))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(config.adam, model.params());
    let (initial_loss, _) = pass_stats(model, examples)?;
    log::info!("initial loss {initial_loss:.6}");

    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut epochs = Vec::new();
    let mut checkpoints = Vec::new();
    let mut best: Option<(usize, f64, ParamSet)> = None;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let scale = 1.0 / batch.len() as f64;
            model.params_mut().zero_grads();
            let mut batch_loss = 0.0;
            for &i in batch {
                let ex = &examples[i];
                let (loss, grads) = match model.loss_and_grads(ex.question.as_input(), &ex.image, ex.label) {
                    Ok(r) => r,
                    Err(ModelError::Tensor(TensorError::NonFinite { .. })) => {
                        return Err(diverged(model, hooks, epoch, b + 1))
                    }
                    Err(e) => return Err(e.into()),
                };
                if !loss.is_finite() {
                    return Err(diverged(model, hooks, epoch, b + 1));
                }
                grads.accumulate_into(model.params_mut(), scale)?;
                batch_loss += loss * scale;
            }
            match adam.step(model.params_mut()) {
                Ok(()) => {}
                Err(TensorError::NonFinite { .. }) => return Err(diverged(model, hooks, epoch, b + 1)),
                Err(e) => return Err(e.into()),
            }
            loss_sum += batch_loss;
            batches += 1;
        }
        let mut stats = EpochStats {
            epoch,
            mean_loss: loss_sum / batches as f64,
            train_loss: None,
            train_accuracy: None,
            selection_accuracy: None,
        };
        if config.track_train_accuracy {
            let (l, a) = pass_stats(model, examples)?;
            stats.train_loss = Some(l);
            stats.train_accuracy = Some(a);
        }
        let stop = matches!((config.stop_at_train_accuracy, stats.train_accuracy), (Some(t), Some(a)) if a >= t);
        let last = epoch == config.epochs || stop;
        let at_checkpoint = last || (config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0);
        if at_checkpoint {
            let score = hooks.select.map(|f| f(model));
            stats.selection_accuracy = score;
            if let Some(dir) = hooks.out_dir {
                let p = dir.join(format!("epoch_{epoch:03}.ckpt"));
                write_checkpoint(model.params(), &p)?;
                checkpoints.push(p);
            }
            let better = match (&best, score) {
                (None, _) => true,
                (Some((_, prev, _)), Some(s)) => s > *prev,
                (Some(_), None) => true,
            };
            if better {
                best = Some((epoch, score.unwrap_or(f64::NAN), model.params().clone()));
            }
        }
        log::info!(
            "epoch {epoch}: loss {:.6}{}{}",
            stats.mean_loss,
            stats
                .train_accuracy
                .map(|a| format!(", train acc {a:.4}"))
                .unwrap_or_default(),
            stats
                .selection_accuracy
                .map(|a| format!(", selection acc {a:.4}"))
                .unwrap_or_default()
        );
        epochs.push(stats);
        if stop {
            break;
        }
    }

    let (best_epoch, best_score, params) = best.expect("last epoch always checkpoints");
    *model.params_mut() = params;
    if let Some(dir) = hooks.out_dir {
        write_checkpoint(model.params(), &dir.join(super::BEST_CHECKPOINT))?;
    }
    Ok(TrainOutcome {
        initial_loss,
        epochs,
        best_epoch,
        best_selection_accuracy: hooks.select.map(|_| best_score),
        checkpoints,
    })
}

/// Mean loss and accuracy over `examples` without updating anything.
fn pass_stats(model: &VqaModel, examples: &[TrainExample]) -> Result<(f64, f64)> {
    use rayon::prelude::*;
    let per: Vec<(f64, bool)> = examples
        .par_iter()
        .map(|ex| -> Result<(f64, bool)> {
            let p = model.forward(ex.question.as_input(), &ex.image)?;
            let loss = -p.probs.data()[ex.label].max(f64::MIN_POSITIVE).ln();
            Ok((loss, p.answer_index == ex.label))
        })
        .collect::<Result<_>>()?;
    let n = per.len() as f64;
    Ok((
        per.iter().map(|(l, _)| l).sum::<f64>() / n,
        per.iter().filter(|(_, c)| *c).count() as f64 / n,
    ))
}

fn diverged(model: &VqaModel, hooks: &TrainHooks<'_>, epoch: usize, batch: usize) -> HarnessError {
    let dump = hooks.out_dir.and_then(|dir| {
        let p = dir.join("diverged.ckpt");
        write_checkpoint(model.params(), &p)
            .ok()
            .map(|_| p.display().to_string())
    });
    log::error!("non-finite loss at epoch {epoch}, batch {batch}");
    HarnessError::Diverged { epoch, batch, dump }
}
