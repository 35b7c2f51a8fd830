//! Mini-batch training with early stopping on validation average F1.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::Mode;
use super::model::{forward, instance_loss, EncodedInstance, EncoderKind, ModelSpec};
use super::optim::{Adam, AdamConfig};
use super::params::{Grads, ParamSet};
use super::tape::Tape;
use super::{NnError, Result};
use crate::eval::{metrics_with, Averaging, ConfusionMatrix, MetricsReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch: usize,
    /// Non-improving epochs tolerated before stopping.
    pub patience: usize,
    pub seed: u64,
    pub averaging: Averaging,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            epochs: 4,
            batch: 32,
            patience: 2,
            seed: 42,
            averaging: Averaging::Macro,
        }
    }
}

impl TrainConfig {
    /// Defaults with 12 epochs for the attention network and 4 otherwise.
    pub fn for_encoder(kind: EncoderKind) -> Self {
        TrainConfig {
            epochs: if kind == EncoderKind::HanAttn { 12 } else { 4 },
            ..Default::default()
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(NnError::Config(m));
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("lr must be > 0, got {}", self.lr));
        }
        if self.epochs == 0 || self.batch == 0 {
            return bad("epochs and batch must be at least 1".into());
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must be in [0, 1), got {b}"));
            }
        }
        if !(self.eps > 0.0 && self.weight_decay >= 0.0) {
            return bad("eps must be > 0 and weight_decay >= 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub val_f1: f64,
    pub improved: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the best validation epoch.
    pub params: ParamSet,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_f1: f64,
    pub stopped_early: bool,
}

/// Mean loss over `batch` and the matching mean gradient. Dropout masks are
/// drawn from `rng` in instance order.
pub fn batch_gradients(
    spec: &ModelSpec,
    params: &ParamSet,
    batch: &[&EncodedInstance],
    mode: Mode,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, Grads)> {
    if batch.is_empty() {
        return Err(NnError::EmptyData("batch"));
    }
    let mut grads = Grads::zeros_like(params);
    let mut total = 0.0;
    for inst in batch {
        let mut tape = Tape::new(params);
        let fwd = forward(&mut tape, spec, inst, mode, rng)?;
        let loss = instance_loss(&mut tape, spec, &fwd, inst)?;
        total += tape.scalar(loss);
        tape.backward_into(loss, &mut grads);
    }
    let n = batch.len() as f64;
    grads.scale(1.0 / n);
    grads.canonicalize_zeros();
    Ok((total / n, grads))
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub loss: f64,
    pub predictions: Vec<usize>,
    pub report: MetricsReport,
}

pub fn evaluate(spec: &ModelSpec, params: &ParamSet, data: &[EncodedInstance], averaging: Averaging) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(NnError::EmptyData("evaluation"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut cm = ConfusionMatrix::default();
    let mut predictions = Vec::with_capacity(data.len());
    let mut total = 0.0;
    for inst in data {
        let mut tape = Tape::new(params);
        let fwd = forward(&mut tape, spec, inst, Mode::Eval, &mut rng)?;
        let loss = instance_loss(&mut tape, spec, &fwd, inst)?;
        total += tape.scalar(loss);
        let logits = tape.value(fwd.sent_logits);
        let mut pred = 0;
        for k in 1..logits.ncols() {
            if logits[[0, k]] > logits[[0, pred]] {
                pred = k;
            }
        }
        cm.add(inst.label, pred);
        predictions.push(pred);
    }
    Ok(Evaluation {
        loss: total / data.len() as f64,
        predictions,
        report: metrics_with(&cm, averaging),
    })
}

pub fn train(
    spec: &ModelSpec,
    mut params: ParamSet,
    train: &[EncodedInstance],
    val: &[EncodedInstance],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    spec.validate()?;
    config.validate()?;
    if train.is_empty() {
        return Err(NnError::EmptyData("training"));
    }
    if val.is_empty() {
        return Err(NnError::EmptyData("validation"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(config.adam(), &params);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, ParamSet)> = None;
    let mut waited = 0;
    let mut stopped_early = false;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, chunk) in order.chunks(config.batch).enumerate() {
            let batch: Vec<&EncodedInstance> = chunk.iter().map(|&i| &train[i]).collect();
            let (loss, grads) = batch_gradients(spec, &params, &batch, Mode::Train, &mut rng)?;
            if !loss.is_finite() {
                return Err(NnError::NonFiniteLoss { epoch, batch: b, first_id: batch[0].id.clone(), loss });
            }
            adam.step(&mut params, &grads)?;
            total += loss * batch.len() as f64;
        }
        let eval = evaluate(spec, &params, val, config.averaging)?;
        let f1 = eval.report.average_f1();
        let improved = best.as_ref().is_none_or(|(score, _, _)| f1 > *score);
        let record = EpochRecord {
            epoch,
            train_loss: total / train.len() as f64,
            val_loss: eval.loss,
            val_accuracy: eval.report.accuracy,
            val_f1: f1,
            improved,
        };
        log::info!(
            "epoch {epoch}: train loss {:.4}, val loss {:.4}, val acc {:.4}, val f1 {:.4}",
            record.train_loss,
            record.val_loss,
            record.val_accuracy,
            record.val_f1
        );
        history.push(record);
        if improved {
            best = Some((f1, epoch, params.clone()));
            waited = 0;
        } else {
            waited += 1;
            if waited > config.patience {
                stopped_early = epoch < config.epochs;
                break;
            }
        }
    }
    let (best_f1, best_epoch, params) = best.expect("at least one epoch ran");
    Ok(TrainOutcome { params, history, best_epoch, best_f1, stopped_early })
}

/// One JSON object per epoch.
pub fn history_jsonl(history: &[EpochRecord]) -> String {
    history
        .iter()
        .map(|r| serde_json::to_string(r).expect("records serialize") + "\n")
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::model::{init_params, predict};

    /// Class read off a sentinel token at a random position among filler.
    pub(crate) fn separable(n: usize, seed: u64) -> Vec<EncodedInstance> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let label = i % 3;
                let len = rng.random_range(2..6);
                let mut words: Vec<usize> = (0..len).map(|_| rng.random_range(4..10)).collect();
                let at = rng.random_range(0..len);
                words[at] = 1 + label;
                EncodedInstance {
                    id: format!("s{i}"),
                    char_ids: words.iter().map(|&w| vec![w % 4]).collect(),
                    word_ids: words,
                    label,
                    lang: i % 2,
                }
            })
            .collect()
    }

    #[test]
    fn config_validation() {
        TrainConfig::default().validate().unwrap();
        assert_eq!(TrainConfig::for_encoder(EncoderKind::HanAttn).epochs, 12);
        assert_eq!(TrainConfig::for_encoder(EncoderKind::Bigru).epochs, 4);
        assert!(TrainConfig { lr: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { epochs: 0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn same_seed_same_history() {
        let spec = ModelSpec::tiny(EncoderKind::BilstmConv).with_mtl(0.5);
        let data = separable(12, 1);
        let cfg = TrainConfig { epochs: 3, batch: 4, patience: 5, lr: 0.01, ..Default::default() };
        let run = || {
            let ps = init_params(&spec, 10, 4, 9).unwrap();
            train(&spec, ps, &data, &data, &cfg).unwrap()
        };
        let (a, b) = (run(), run());
        let bits = |h: &[EpochRecord]| h.iter().map(|r| r.train_loss.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.history), bits(&b.history));
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn patience_zero_stops_at_first_flat_epoch() {
        let spec = ModelSpec::tiny(EncoderKind::Bigru);
        let data = separable(6, 2);
        // lr this small cannot move validation F1 between epochs
        let cfg = TrainConfig { epochs: 10, batch: 3, patience: 0, lr: 1e-12, ..Default::default() };
        let ps = init_params(&spec, 10, 1, 3).unwrap();
        let out = train(&spec, ps, &data, &data, &cfg).unwrap();
        assert_eq!(out.history.len(), 2);
        assert!(out.history[0].improved && !out.history[1].improved);
        assert!(out.stopped_early);
        assert_eq!(out.best_epoch, 1);
    }

    #[test]
    fn empty_sets_are_rejected() {
        let spec = ModelSpec::tiny(EncoderKind::Bigru);
        let ps = init_params(&spec, 10, 1, 3).unwrap();
        let data = separable(3, 0);
        assert!(matches!(train(&spec, ps.clone(), &[], &data, &TrainConfig::default()), Err(NnError::EmptyData(_))));
        assert!(matches!(train(&spec, ps, &data, &[], &TrainConfig::default()), Err(NnError::EmptyData(_))));
    }

    #[test]
    fn bigru_fits_separable_set() {
        let spec = ModelSpec::tiny(EncoderKind::Bigru);
        let data = separable(30, 5);
        let cfg = TrainConfig { epochs: 50, batch: 8, patience: 50, lr: 0.02, ..Default::default() };
        let ps = init_params(&spec, 10, 1, 1).unwrap();
        let out = train(&spec, ps, &data, &data, &cfg).unwrap();
        let preds = predict(&spec, &out.params, &data).unwrap().predictions();
        let correct = preds.iter().zip(&data).filter(|(p, d)| **p == d.label).count();
        assert_eq!(correct, 30);
    }

    #[test]
    fn lambda_zero_matches_single_task_bitwise() {
        for kind in EncoderKind::ALL {
            let single = ModelSpec::tiny(kind);
            let multi = single.clone().with_mtl(0.0);
            let data = separable(5, 8);
            let batch: Vec<&EncodedInstance> = data.iter().collect();
            let ps_s = init_params(&single, 10, 1, 4).unwrap();
            let ps_m = init_params(&multi, 10, 1, 4).unwrap();
            let (ls, gs) = batch_gradients(&single, &ps_s, &batch, Mode::Train, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
            let (lm, gm) = batch_gradients(&multi, &ps_m, &batch, Mode::Train, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
            assert_eq!(ls.to_bits(), lm.to_bits(), "{kind}");
            for (id, name) in ps_s.names().iter().enumerate() {
                let a = gs.get(id);
                let b = gm.get(ps_m.id(name).unwrap());
                let same = a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits());
                assert!(same, "{kind}: {name}");
            }
        }
    }
}
