use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::optim::optimizer_by_name;
use crate::tensor::{Checkpoint, OptimConfig, ParamGroup, Tape, TensorError};

use super::{argmax, evaluate, JointLK, PreparedQuestion};

/// One metrics line: `{"epoch":..,"split":..,"accuracy":..,"loss":..}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub split: String,
    pub accuracy: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub metrics: Vec<EpochMetrics>,
    pub best_epoch: usize,
    pub best_dev_accuracy: f64,
    pub epochs_run: usize,
}

/// Minimizes gold-choice cross-entropy with mini-batch gradient averaging,
/// stopping early when dev accuracy has not improved for `patience`
/// epochs. The model ends holding the parameters of its best dev epoch.
pub fn train(
    model: &mut JointLK,
    train: &[PreparedQuestion],
    dev: &[PreparedQuestion],
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainReport> {
    if train.is_empty() {
        return Err(Error::EmptyDataset("train"));
    }
    if dev.is_empty() {
        return Err(Error::EmptyDataset("dev"));
    }
    let cfg = model.config.clone();
    let mut optimizer = optimizer_by_name(&cfg.optimizer, OptimConfig::default())?;
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0001);
    let mut drop_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0002);
    let lr = |g: ParamGroup| match g {
        ParamGroup::Encoder => cfg.lr_encoder,
        ParamGroup::Graph => cfg.lr_graph,
    };

    let mut metrics = Vec::new();
    let mut best: Option<(usize, f64, Checkpoint)> = None;
    let mut last_good = model.store.to_checkpoint();
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epochs_run = 0;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut order_rng);
        let mut total_loss = 0.0;
        let mut correct = 0;
        for batch in order.chunks(cfg.batch_size) {
            model.store.zero_grad();
            for &i in batch {
                let q = &train[i];
                let mut tape = Tape::new();
                let (loss, scores) = model.question_loss(&model.store, &mut tape, q, Some(&mut drop_rng as &mut dyn rand::RngCore))?;
                let l = tape.scalar(loss);
                if !l.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        loss: l,
                        last_good: Box::new(last_good),
                    });
                }
                total_loss += l;
                correct += usize::from(argmax(tape.value(scores)) == q.gold);
                tape.backward(loss)?.accumulate_into(&mut model.store);
            }
            model.store.scale_grads(1.0 / batch.len() as f64);
            match optimizer.step(&mut model.store, &lr) {
                Err(TensorError::NonFiniteGradient { .. }) => {
                    return Err(Error::Diverged {
                        epoch,
                        loss: f64::NAN,
                        last_good: Box::new(last_good),
                    })
                }
                other => other?,
            }
        }
        model.store.zero_grad();
        epochs_run = epoch;

        let train_m = EpochMetrics {
            epoch,
            split: "train".into(),
            accuracy: correct as f64 / train.len() as f64,
            loss: total_loss / train.len() as f64,
        };
        let report = evaluate(model, dev);
        let dev_m = EpochMetrics {
            epoch,
            split: "dev".into(),
            accuracy: report.accuracy,
            loss: report.mean_loss,
        };
        log::info!(
            "epoch {epoch}: train loss {:.4} acc {:.4} | dev loss {:.4} acc {:.4}",
            train_m.loss,
            train_m.accuracy,
            dev_m.loss,
            dev_m.accuracy
        );
        on_epoch(&train_m);
        on_epoch(&dev_m);
        metrics.push(train_m);
        metrics.push(dev_m);

        last_good = model.store.to_checkpoint();
        if best.as_ref().map_or(true, |b| report.accuracy > b.1) {
            best = Some((epoch, report.accuracy, last_good.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                log::info!("early stop after epoch {epoch}");
                break;
            }
        }
    }

    let (best_epoch, best_dev_accuracy, ck) = best.expect("at least one epoch when epochs > 0");
    model.store.load_checkpoint(&ck)?;
    Ok(TrainReport {
        metrics,
        best_epoch,
        best_dev_accuracy,
        epochs_run,
    })
}
