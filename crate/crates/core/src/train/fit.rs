use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{argmax, Optimizer, OptimizerConfig, ScheduleConfig};
use crate::autograd::Tape;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::layers::Forward;
use crate::models::{Input, Model};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: OptimizerConfig,
    pub schedule: ScheduleConfig,
    /// Off by default so identical runs produce identical reports.
    pub record_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            seed: 0,
            optimizer: OptimizerConfig::adam(),
            schedule: ScheduleConfig::default(),
            record_wall_time: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub train_ppl: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub val_ppl: Option<f64>,
    pub lr: f64,
    pub wall_time: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub best_val_loss: f64,
    pub best_val_acc: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub best_val_ppl: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub records: Vec<EpochRecord>,
}

impl TrainReport {
    pub fn summary(&self) -> Option<Summary> {
        let best = |f: fn(&EpochRecord) -> f64, max: bool| {
            self.records.iter().map(f).reduce(|a, b| if (b > a) == max { b } else { a })
        };
        Some(Summary {
            best_val_loss: best(|r| r.val_loss, false)?,
            best_val_acc: best(|r| r.val_acc, true)?,
            best_val_ppl: self.records.iter().filter_map(|r| r.val_ppl).reduce(f64::min),
        })
    }

    /// One JSON object per epoch followed by the summary object.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        if let Some(s) = self.summary() {
            out.push_str(&serde_json::to_string(&s).expect("summary serializes"));
            out.push('\n');
        }
        out
    }
}

/// Loss, accuracy and perplexity averaged over every predicted position.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
    pub perplexity: f64,
    pub rows: usize,
}

/// Inference-mode evaluation over the whole dataset, in order.
pub fn evaluate(model: &Model, data: &Dataset, batch_size: usize) -> Result<Evaluation> {
    evaluate_with(data, batch_size, |input| model.predict(input))
}

/// Evaluation with any forward pass that maps a batch to probabilities,
/// such as a packed model's.
pub fn evaluate_with(
    data: &Dataset,
    batch_size: usize,
    mut forward: impl FnMut(Input) -> Result<Tensor<f32>>,
) -> Result<Evaluation> {
    if data.is_empty() || batch_size == 0 {
        return Err(Error::Data("nothing to evaluate".into()));
    }
    let (mut loss, mut hits, mut rows) = (0.0, 0usize, 0usize);
    let order: Vec<usize> = (0..data.len()).collect();
    for chunk in order.chunks(batch_size) {
        let batch = data.batch(chunk)?;
        let probs = forward(batch.input())?;
        let k = probs.last_dim();
        let m = super::metrics(&probs.reshape([probs.len() / k, k])?, &batch.labels)?;
        loss += m.loss * batch.labels.len() as f64;
        hits += (m.accuracy * batch.labels.len() as f64).round() as usize;
        rows += batch.labels.len();
    }
    let loss = loss / rows as f64;
    Ok(Evaluation { loss, accuracy: hits as f64 / rows as f64, perplexity: loss.exp(), rows })
}

/// Mean loss and accuracy of one training step, returned after the update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub loss: f64,
    pub accuracy: f64,
}

/// Forward in training mode, backward, and one optimizer update.
pub fn train_step(
    model: &mut Model,
    optimizer: &mut Optimizer,
    batch: &crate::data::Batch,
    lr: f64,
    dropout_seed: u64,
) -> Result<StepOutcome> {
    let mut tape = Tape::<f32>::new();
    let mut f = Forward::train(&mut tape, &model.params, dropout_seed);
    let (loss, probs) = model.loss(&mut f, batch.input(), &batch.labels)?;
    let loss_value = f.tape.value(loss).data()[0] as f64;
    if !loss_value.is_finite() {
        return Err(Error::Numerical(format!("non-finite loss {loss_value}")));
    }
    let p = f.tape.value(probs);
    let k = p.last_dim();
    let hits = p.data().chunks(k).zip(&batch.labels).filter(|(row, &l)| argmax(row) == l).count();
    let mut grads = f.tape.backward(loss)?;
    let grads = f.param_grads(&mut grads);
    optimizer.step(&mut model.params, &grads, lr)?;
    Ok(StepOutcome { loss: loss_value, accuracy: hits as f64 / batch.labels.len() as f64 })
}

/// Trains for `config.epochs` epochs, calling `on_epoch` after each one.
///
/// Each epoch reshuffles the training set with a generator seeded once from
/// `config.seed` and drops the final partial batch. On a non-finite loss,
/// gradient or parameter the masters are restored to the end of the last
/// completed epoch and a numerical error is returned.
pub fn fit(
    model: &mut Model,
    train: &Dataset,
    val: &Dataset,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainReport> {
    let mut report = TrainReport::default();
    if config.epochs == 0 {
        return Ok(report);
    }
    let steps_per_epoch = train.len() / config.batch_size.max(1);
    if config.batch_size == 0 || steps_per_epoch == 0 {
        return Err(Error::Config(format!(
            "batch size {} leaves no full batch in {} training examples",
            config.batch_size,
            train.len()
        )));
    }
    if val.is_empty() {
        return Err(Error::Data("validation set is empty".into()));
    }
    let language = matches!(train, Dataset::Tokens(_));
    let start = Instant::now();
    let mut optimizer = Optimizer::new(config.optimizer, &model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut last_good = model.params.clone();
    let mut step = 0u64;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut acc_sum) = (0.0, 0.0);
        let mut lr = 0.0;
        for chunk in order.chunks_exact(config.batch_size) {
            let batch = train.batch(chunk)?;
            lr = config.schedule.lr_at(step);
            let outcome = train_step(model, &mut optimizer, &batch, lr, config.seed ^ step.wrapping_mul(0x9E37_79B9_7F4A_7C15))
                .and_then(|o| {
                    if model.params.all_finite() {
                        Ok(o)
                    } else {
                        Err(Error::Numerical("non-finite parameter after update".into()))
                    }
                });
            match outcome {
                Ok(o) => {
                    loss_sum += o.loss;
                    acc_sum += o.accuracy;
                }
                Err(Error::Numerical(msg)) => {
                    model.params = last_good;
                    return Err(Error::Numerical(format!("epoch {epoch}, step {step}: {msg}")));
                }
                Err(e) => return Err(e),
            }
            step += 1;
        }
        let eval = evaluate(model, val, config.batch_size)?;
        if !eval.loss.is_finite() {
            model.params = last_good;
            return Err(Error::Numerical(format!("epoch {epoch}: non-finite validation loss")));
        }
        let train_loss = loss_sum / steps_per_epoch as f64;
        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss: eval.loss,
            train_acc: acc_sum / steps_per_epoch as f64,
            val_acc: eval.accuracy,
            train_ppl: language.then(|| train_loss.exp()),
            val_ppl: language.then_some(eval.perplexity),
            lr,
            wall_time: if config.record_wall_time { start.elapsed().as_secs_f64() } else { 0.0 },
        };
        on_epoch(&record);
        report.records.push(record);
        last_good = model.params.clone();
    }
    Ok(report)
}
