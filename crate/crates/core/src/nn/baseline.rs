//! Reference points for the neural encoders: the majority class and a
//! softmax regression over mean word vectors.

use ndarray::Axis;

use super::model::EncodedInstance;
use super::optim::{Adam, AdamConfig};
use super::params::{Grads, ParamSet};
use super::tape::{Mat, Tape};
use super::{NnError, Result};

/// Most frequent gold class; ties go to the lower index.
pub fn majority_class(data: &[EncodedInstance]) -> Option<usize> {
    let mut counts = [0usize; 3];
    for inst in data {
        counts[inst.label] += 1;
    }
    if data.is_empty() {
        return None;
    }
    let mut best = 0;
    for k in 1..3 {
        if counts[k] > counts[best] {
            best = k;
        }
    }
    Some(best)
}

/// Accuracy on `eval` of always predicting the majority class of `train`.
pub fn majority_accuracy(train: &[EncodedInstance], eval: &[EncodedInstance]) -> Result<f64> {
    let k = majority_class(train).ok_or(NnError::EmptyData("training"))?;
    if eval.is_empty() {
        return Err(NnError::EmptyData("evaluation"));
    }
    Ok(eval.iter().filter(|i| i.label == k).count() as f64 / eval.len() as f64)
}

/// `1 x d` mean of the embedding rows of `ids`.
pub fn mean_vector(embeddings: &Mat, ids: &[usize]) -> Mat {
    let rows = embeddings.select(Axis(0), ids);
    rows.mean_axis(Axis(0))
        .unwrap_or_else(|| ndarray::Array1::zeros(embeddings.ncols()))
        .insert_axis(Axis(0))
}

#[derive(Debug, Clone)]
pub struct MeanEmbeddingLogit {
    pub params: ParamSet,
}

impl MeanEmbeddingLogit {
    /// Full-batch Adam on the mean cross-entropy, starting from zero weights.
    pub fn fit(embeddings: &Mat, data: &[EncodedInstance], epochs: usize, lr: f64) -> Result<Self> {
        if data.is_empty() {
            return Err(NnError::EmptyData("training"));
        }
        let feats: Vec<Mat> = data.iter().map(|i| mean_vector(embeddings, &i.word_ids)).collect();
        let mut params = ParamSet::new();
        params.insert("logit.w", Mat::zeros((embeddings.ncols(), 3)), true);
        params.insert("logit.b", Mat::zeros((1, 3)), true);
        let mut adam = Adam::new(AdamConfig { lr, ..Default::default() }, &params);
        for _ in 0..epochs {
            let mut grads = Grads::zeros_like(&params);
            for (x, inst) in feats.iter().zip(data) {
                let mut tape = Tape::new(&params);
                let loss = Self::loss(&mut tape, x, inst.label);
                tape.backward_into(loss, &mut grads);
            }
            grads.scale(1.0 / data.len() as f64);
            adam.step(&mut params, &grads)?;
        }
        Ok(MeanEmbeddingLogit { params })
    }

    fn logits(tape: &mut Tape, x: &Mat) -> super::tape::Var {
        let w = tape.param("logit.w");
        let b = tape.param("logit.b");
        let x = tape.input(x.clone());
        let y = tape.matmul(x, w);
        tape.add_row(y, b)
    }

    fn loss(tape: &mut Tape, x: &Mat, gold: usize) -> super::tape::Var {
        let logits = Self::logits(tape, x);
        tape.xent(logits, gold)
    }

    pub fn predict(&self, embeddings: &Mat, data: &[EncodedInstance]) -> Vec<usize> {
        data.iter()
            .map(|inst| {
                let mut tape = Tape::new(&self.params);
                let logits = Self::logits(&mut tape, &mean_vector(embeddings, &inst.word_ids));
                let l = tape.value(logits);
                (1..3).fold(0, |best, k| if l[[0, k]] > l[[0, best]] { k } else { best })
            })
            .collect()
    }
}
