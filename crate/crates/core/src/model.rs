//! The full tactile transformer: embeddings, encoder and task heads over one
//! parameter store.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autodiff::{softmax, Tape};
use crate::data::TensorShape;
use crate::embedding::{EmbeddingSet, EmbeddingToggles, INIT_STD};
use crate::encoder::{EncodedSequence, Encoder, EncoderConfig, EncoderPass};
use crate::error::{Result, StatError};
use crate::finetune::ClassifierHead;
use crate::params::{Gradients, ParamId, ParameterStore};
use crate::pretrain::{MaskPlan, PairBatch, PretrainLosses};
use crate::rng::{self, tag, StreamRng};
use crate::tokenizer::{TokenSequence, TubeletConfig, TubeletGrid};

/// Everything that fixes the parameter layout of a model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub shape: TensorShape,
    pub tubelet: TubeletConfig,
    pub classes: usize,
    pub encoder: EncoderConfig,
    pub toggles: EmbeddingToggles,
}

/// Parameter handles of the pretraining heads.
#[derive(Clone, Copy, Debug)]
pub struct PretrainHeads {
    /// `D × (L·P²)` reconstruction map.
    pub reconstruct_weight: ParamId,
    pub reconstruct_bias: ParamId,
    /// `1 × 2D` order discriminator, no bias.
    pub order_weight: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub struct ClassifierParams {
    /// `D × M`, applied to the [CLS] row.
    pub weight: ParamId,
    pub bias: ParamId,
}

#[derive(Clone, Debug)]
pub struct StatModel {
    pub config: ModelConfig,
    pub grid: TubeletGrid,
    pub params: ParameterStore,
    pub embedding: EmbeddingSet,
    pub encoder: Encoder,
    pub pretrain_heads: PretrainHeads,
    pub classifier: ClassifierParams,
}

impl StatModel {
    /// Build a model with weights drawn from the encoder seed.
    pub fn new(config: ModelConfig) -> Result<Self> {
        if config.classes < 2 {
            return Err(StatError::InvalidArgument(format!("need at least 2 classes, got {}", config.classes)));
        }
        config.encoder.validate()?;
        let grid = TubeletGrid::new(config.shape, config.tubelet)?;
        let mut rng = rng::stream(config.encoder.seed, &[tag::INIT]);
        let mut params = ParameterStore::new();
        let d = config.encoder.dim;
        let embedding = EmbeddingSet::new(&mut params, &grid, d, config.toggles, &mut rng)?;
        let encoder = Encoder::new(&mut params, config.encoder, &mut rng)?;
        let token_len = config.tubelet.token_len();
        let pretrain_heads = PretrainHeads {
            reconstruct_weight: params.register_normal(
                "head.reconstruct.weight",
                (d, token_len),
                INIT_STD,
                &mut rng,
            )?,
            reconstruct_bias: params.register("head.reconstruct.bias", Array2::zeros((1, token_len)))?,
            order_weight: params.register_normal("head.order.weight", (1, 2 * d), INIT_STD, &mut rng)?,
        };
        let classifier = ClassifierParams {
            weight: params.register_normal("head.classifier.weight", (d, config.classes), INIT_STD, &mut rng)?,
            bias: params.register("head.classifier.bias", Array2::zeros((1, config.classes)))?,
        };
        Ok(StatModel { config, grid, params, embedding, encoder, pretrain_heads, classifier })
    }

    pub fn tokenize(&self, tensor: &crate::data::TactileTensor) -> Result<TokenSequence> {
        TokenSequence::from_tensor(tensor, &self.grid)
    }

    /// Record embedding and encoder on `tape`; `masked_rows` are token rows
    /// whose projection is replaced by the mask embedding.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        tokens: &TokenSequence,
        masked_rows: &[usize],
        dropout: Option<&mut StreamRng>,
    ) -> Result<EncoderPass> {
        let input = self.embedding.tape_input(tape, store, tokens, masked_rows)?;
        self.encoder.forward(tape, store, input, dropout)
    }

    pub fn encode(&self, tokens: &TokenSequence) -> Result<EncodedSequence> {
        let mut tape = Tape::new();
        let input = self.embedding.tape_input(&mut tape, &self.params, tokens, &[])?;
        let input = tape.value(input).clone();
        self.encoder.encode(&self.params, &input)
    }

    pub fn classifier_head(&self) -> ClassifierHead {
        ClassifierHead {
            weight: self.params.get(self.classifier.weight).clone(),
            bias: self.params.get(self.classifier.bias).row(0).to_owned(),
        }
    }

    /// Pretraining loss with parameters taken from `store` (same layout as
    /// `self.params`). Used directly by gradient checks.
    pub fn pretrain_objective_with(
        &self,
        store: &ParameterStore,
        tokens: &TokenSequence,
        plan: &MaskPlan,
        pairs: Option<&PairBatch>,
        beta: f64,
        dropout: Option<&mut StreamRng>,
    ) -> Result<(PretrainLosses, Gradients)> {
        plan.check_grid(&self.grid)?;
        if plan.masked_tubelets.is_empty() {
            return Err(StatError::NothingMasked);
        }
        let rows = tokens.rows_by_sequence();
        let row_of = |seq: usize| rows.get(seq).copied().flatten().ok_or(StatError::MissingIndex(seq));
        let masked_rows = plan.masked_tubelets.iter().map(|&s| row_of(s)).collect::<Result<Vec<_>>>()?;

        let mut tape = Tape::new();
        let pass = self.forward(&mut tape, store, tokens, &masked_rows, dropout)?;
        let encoded = pass.output;

        let shifted: Vec<usize> = masked_rows.iter().map(|r| r + 1).collect();
        let hidden = tape.gather_rows(encoded, &shifted);
        let w = tape.param(store, self.pretrain_heads.reconstruct_weight);
        let b = tape.param(store, self.pretrain_heads.reconstruct_bias);
        let pred = tape.matmul(hidden, w);
        let pred = tape.add_row(pred, b);
        let target = tokens.values.select(ndarray::Axis(0), &masked_rows);
        let mtr = tape.mean_squared_error(pred, target);

        let (total, temporal) = match pairs {
            Some(batch) if !batch.is_empty() => {
                let firsts = batch.pairs.iter().map(|p| row_of(p.first).map(|r| r + 1)).collect::<Result<Vec<_>>>()?;
                let seconds =
                    batch.pairs.iter().map(|p| row_of(p.second).map(|r| r + 1)).collect::<Result<Vec<_>>>()?;
                let targets: Vec<f64> = batch.pairs.iter().map(|p| p.target()).collect();
                let ei = tape.gather_rows(encoded, &firsts);
                let ej = tape.gather_rows(encoded, &seconds);
                let joined = tape.concat_cols(&[ei, ej]);
                let wf = tape.param(store, self.pretrain_heads.order_weight);
                let logits = tape.matmul_nt(joined, wf);
                let temp = tape.binary_cross_entropy(logits, &targets);
                let weighted = tape.scale(temp, beta);
                (tape.add(mtr, weighted), Some(temp))
            }
            Some(_) => return Err(StatError::EmptyBatch),
            None => (mtr, None),
        };
        let grads = tape.backward(total, store)?;
        let losses = PretrainLosses {
            mtr: tape.scalar(mtr),
            temporal: temporal.map_or(0.0, |t| tape.scalar(t)),
            total: tape.scalar(total),
        };
        Ok((losses, grads))
    }

    pub fn pretrain_objective(
        &self,
        tokens: &TokenSequence,
        plan: &MaskPlan,
        pairs: Option<&PairBatch>,
        beta: f64,
        dropout: Option<&mut StreamRng>,
    ) -> Result<(PretrainLosses, Gradients)> {
        self.pretrain_objective_with(&self.params, tokens, plan, pairs, beta, dropout)
    }

    /// Cross-entropy of the [CLS] classifier, parameters from `store`.
    pub fn finetune_objective_with(
        &self,
        store: &ParameterStore,
        tokens: &TokenSequence,
        label: usize,
        dropout: Option<&mut StreamRng>,
    ) -> Result<(f64, Gradients)> {
        if label >= self.config.classes {
            return Err(StatError::InvalidLabel { label, classes: self.config.classes });
        }
        let mut tape = Tape::new();
        let pass = self.forward(&mut tape, store, tokens, &[], dropout)?;
        let cls = tape.gather_rows(pass.output, &[0]);
        let w = tape.param(store, self.classifier.weight);
        let b = tape.param(store, self.classifier.bias);
        let logits = tape.matmul(cls, w);
        let logits = tape.add_row(logits, b);
        let loss = tape.cross_entropy(logits, label);
        let grads = tape.backward(loss, store)?;
        Ok((tape.scalar(loss), grads))
    }

    pub fn finetune_objective(
        &self,
        tokens: &TokenSequence,
        label: usize,
        dropout: Option<&mut StreamRng>,
    ) -> Result<(f64, Gradients)> {
        self.finetune_objective_with(&self.params, tokens, label, dropout)
    }

    /// Class probabilities from the final [CLS] embedding.
    pub fn predict(&self, tokens: &TokenSequence) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let pass = self.forward(&mut tape, &self.params, tokens, &[], None)?;
        let cls = tape.value(pass.output).row(0).to_owned();
        let head = self.classifier_head();
        let logits = cls.dot(&head.weight) + &head.bias;
        Ok(softmax(logits.as_slice().expect("contiguous")))
    }
}
