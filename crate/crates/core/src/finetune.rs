//! [CLS] classification: head, cross-entropy objective, batch steps and
//! model evaluation.

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rayon::prelude::*;

use crate::autodiff::{softmax, PROB_CLAMP};
use crate::encoder::EncodedSequence;
use crate::error::{Result, StatError};
use crate::metrics::{evaluate_predictions, EvalReport};
use crate::model::StatModel;
use crate::params::Gradients;
use crate::rng::StreamRng;
use crate::tokenizer::TokenSequence;

/// Linear map `D → M` on the final [CLS] embedding followed by softmax.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierHead {
    /// `D × M`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl ClassifierHead {
    pub fn zeros(dim: usize, classes: usize) -> Self {
        ClassifierHead { weight: Array2::zeros((dim, classes)), bias: Array1::zeros(classes) }
    }

    pub fn classes(&self) -> usize {
        self.bias.len()
    }
}

pub fn classify(encoded: &EncodedSequence, head: &ClassifierHead) -> Result<Vec<f64>> {
    if head.classes() < 2 || head.weight.ncols() != head.classes() {
        return Err(StatError::DimensionMismatch(format!(
            "classifier weight {:?} with bias of {}",
            head.weight.dim(),
            head.classes()
        )));
    }
    if encoded.output.ncols() != head.weight.nrows() {
        return Err(StatError::DimensionMismatch(format!(
            "encoding width {} vs classifier input {}",
            encoded.output.ncols(),
            head.weight.nrows()
        )));
    }
    let logits = encoded.cls().dot(&head.weight) + &head.bias;
    Ok(softmax(logits.as_slice().expect("contiguous")))
}

/// `-ln(probs[label])`, probability clamped at 1e-7.
pub fn finetune_loss(probs: &[f64], label: usize) -> Result<f64> {
    if label >= probs.len() {
        return Err(StatError::InvalidLabel { label, classes: probs.len() });
    }
    Ok(-probs[label].max(PROB_CLAMP).ln())
}

#[derive(Clone, Copy, Debug)]
pub struct FinetuneItem<'a> {
    pub tokens: &'a TokenSequence,
    pub label: usize,
    /// Seeds dropout for this sample.
    pub rng_key: u64,
}

/// Batch-mean cross-entropy and gradients, reduced in batch order.
pub fn finetune_step(model: &StatModel, batch: &[FinetuneItem<'_>], dropout: bool) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(StatError::EmptyBatch);
    }
    let results: Vec<Result<(f64, Gradients)>> = batch
        .par_iter()
        .map(|item| {
            let mut rng = StreamRng::seed_from_u64(item.rng_key);
            model.finetune_objective(item.tokens, item.label, dropout.then_some(&mut rng))
        })
        .collect();
    let mut grads = Gradients::zeros_like(&model.params);
    let mut loss = 0.0;
    for r in results {
        let (l, g) = r?;
        loss += l;
        grads.add_assign(&g);
    }
    let n = batch.len() as f64;
    grads.scale(1.0 / n);
    Ok((loss / n, grads))
}

/// Predict every sample and compute the evaluation report.
pub fn evaluate(model: &StatModel, tokens: &[TokenSequence], labels: &[usize]) -> Result<EvalReport> {
    if tokens.is_empty() {
        return Err(StatError::EmptySplit);
    }
    if tokens.len() != labels.len() {
        return Err(StatError::DimensionMismatch("token and label counts differ".into()));
    }
    let probs: Vec<Vec<f64>> = tokens.par_iter().map(|t| model.predict(t)).collect::<Result<_>>()?;
    evaluate_predictions(&probs, labels, model.config.classes)
}
