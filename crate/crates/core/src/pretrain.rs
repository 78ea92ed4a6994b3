//! Self-supervised objectives: spatial-group masked tubelet reconstruction
//! (MTR) and temporal order discrimination over unmasked tubelet pairs.

use std::collections::BTreeSet;

use ndarray::Array2;
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rayon::prelude::*;

use crate::autodiff::{bce, sigmoid};
use crate::encoder::EncodedSequence;
use crate::error::{Result, StatError};
use crate::model::StatModel;
use crate::params::Gradients;
use crate::rng::StreamRng;
use crate::tokenizer::{TokenSequence, TubeletGrid};

/// Spatial groups chosen for masking and the tubelets they induce.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskPlan {
    pub ratio: f64,
    /// Sorted spatial indices.
    pub masked_groups: Vec<usize>,
    /// Sorted sequence indices of every tubelet in a masked group.
    pub masked_tubelets: Vec<usize>,
    pub n_space: usize,
    pub n_temp: usize,
}

impl MaskPlan {
    /// Plan masking exactly `groups` on `grid`.
    pub fn from_groups(grid: &TubeletGrid, ratio: f64, groups: impl IntoIterator<Item = usize>) -> Result<Self> {
        let set: BTreeSet<usize> = groups.into_iter().collect();
        if let Some(&g) = set.iter().find(|&&g| g >= grid.n_space) {
            return Err(StatError::InvalidArgument(format!("spatial group {g} outside grid of {}", grid.n_space)));
        }
        let masked_groups: Vec<usize> = set.into_iter().collect();
        let mut masked_tubelets: Vec<usize> =
            (0..grid.n_temp).flat_map(|t| masked_groups.iter().map(move |&s| grid.sequence_index(s, t))).collect();
        masked_tubelets.sort_unstable();
        Ok(MaskPlan { ratio, masked_groups, masked_tubelets, n_space: grid.n_space, n_temp: grid.n_temp })
    }

    pub fn is_empty(&self) -> bool {
        self.masked_groups.is_empty()
    }

    pub fn masks_group(&self, spatial: usize) -> bool {
        self.masked_groups.binary_search(&spatial).is_ok()
    }

    pub fn masks_sequence(&self, sequence: usize) -> bool {
        self.masks_group(sequence % self.n_space)
    }

    pub fn check_grid(&self, grid: &TubeletGrid) -> Result<()> {
        if self.n_space != grid.n_space || self.n_temp != grid.n_temp {
            return Err(StatError::DimensionMismatch(format!(
                "mask plan for {}x{} groups applied to {}x{} grid",
                self.n_space, self.n_temp, grid.n_space, grid.n_temp
            )));
        }
        Ok(())
    }
}

/// Pick `round(ratio · n_space)` spatial groups uniformly at random and mask
/// every tubelet they cover.
pub fn plan_spatial_mask<R: Rng>(grid: &TubeletGrid, ratio: f64, rng: &mut R) -> Result<MaskPlan> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(StatError::InvalidArgument(format!("mask ratio {ratio} outside [0, 1)")));
    }
    let count = (ratio * grid.n_space as f64).round() as usize;
    let groups = sample_indices(rng, grid.n_space, count).into_vec();
    MaskPlan::from_groups(grid, ratio, groups)
}

/// Replace the projected rows of masked tubelets by `mask_token`.
/// `projected` holds one row per tubelet in sequence order.
pub fn apply_mask(
    projected: &Array2<f64>,
    grid: &TubeletGrid,
    plan: &MaskPlan,
    mask_token: &[f64],
) -> Result<Array2<f64>> {
    plan.check_grid(grid)?;
    if projected.nrows() != grid.n_tube || projected.ncols() != mask_token.len() {
        return Err(StatError::DimensionMismatch(format!(
            "projection {:?} does not match {} tubelets of width {}",
            projected.dim(),
            grid.n_tube,
            mask_token.len()
        )));
    }
    let mut out = projected.clone();
    let token = ndarray::ArrayView1::from(mask_token);
    for &seq in &plan.masked_tubelets {
        out.row_mut(seq).assign(&token);
    }
    Ok(out)
}

/// Mean over masked tubelets of the per-tubelet mean squared error.
/// `reconstructed` row `r` predicts tubelet `plan.masked_tubelets[r]`.
pub fn mtr_loss(original: &TokenSequence, reconstructed: &Array2<f64>, plan: &MaskPlan) -> Result<f64> {
    if plan.masked_tubelets.is_empty() {
        return Err(StatError::NothingMasked);
    }
    if reconstructed.nrows() != plan.masked_tubelets.len() || reconstructed.ncols() != original.values.ncols() {
        return Err(StatError::DimensionMismatch(format!(
            "reconstruction {:?} for {} masked tubelets of width {}",
            reconstructed.dim(),
            plan.masked_tubelets.len(),
            original.values.ncols()
        )));
    }
    let rows = original.rows_by_sequence();
    let mut total = 0.0;
    for (r, &seq) in plan.masked_tubelets.iter().enumerate() {
        let src = rows.get(seq).copied().flatten().ok_or(StatError::MissingIndex(seq))?;
        let diff = &original.values.row(src) - &reconstructed.row(r);
        total += diff.mapv(|d| d * d).mean().unwrap_or(0.0);
    }
    Ok(total / plan.masked_tubelets.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TubeletPair {
    pub first: usize,
    pub second: usize,
    /// True when `first` was collected earlier than `second`.
    pub earlier: bool,
}

impl TubeletPair {
    pub fn new(grid: &TubeletGrid, first: usize, second: usize) -> Self {
        let (_, tf) = grid.split_index(first);
        let (_, ts) = grid.split_index(second);
        TubeletPair { first, second, earlier: tf < ts }
    }

    pub fn target(&self) -> f64 {
        if self.earlier {
            1.0
        } else {
            0.0
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PairBatch {
    pub pairs: Vec<TubeletPair>,
}

impl PairBatch {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Draw up to `n_comp` distinct unordered pairs of unmasked tubelets from
/// different frame windows, each presented in a random order.
pub fn sample_pairs<R: Rng>(grid: &TubeletGrid, plan: &MaskPlan, n_comp: usize, rng: &mut R) -> Result<PairBatch> {
    plan.check_grid(grid)?;
    if n_comp == 0 {
        return Err(StatError::InvalidArgument("n_comp must be positive".into()));
    }
    let unmasked: Vec<usize> = (0..grid.n_tube).filter(|&s| !plan.masks_sequence(s)).collect();
    let per_window = unmasked.len() / grid.n_temp.max(1);
    let feasible = if grid.n_temp < 2 { 0 } else { per_window * per_window * grid.n_temp * (grid.n_temp - 1) / 2 };
    if feasible == 0 {
        return Err(StatError::InfeasiblePairs("all unmasked tubelets share one temporal index".into()));
    }
    let wanted = n_comp.min(feasible);
    let temporal = |s: usize| grid.split_index(s).1;
    let mut chosen: Vec<(usize, usize)> = Vec::with_capacity(wanted);
    if feasible <= 4 * wanted {
        let all: Vec<(usize, usize)> = unmasked
            .iter()
            .enumerate()
            .flat_map(|(a, &i)| unmasked[a + 1..].iter().map(move |&j| (i, j)))
            .filter(|&(i, j)| temporal(i) != temporal(j))
            .collect();
        debug_assert_eq!(all.len(), feasible);
        chosen.extend(sample_indices(rng, all.len(), wanted).into_iter().map(|k| all[k]));
    } else {
        let mut seen = BTreeSet::new();
        while chosen.len() < wanted {
            let i = unmasked[rng.random_range(0..unmasked.len())];
            let j = unmasked[rng.random_range(0..unmasked.len())];
            if temporal(i) == temporal(j) {
                continue;
            }
            if seen.insert((i.min(j), i.max(j))) {
                chosen.push((i.min(j), i.max(j)));
            }
        }
    }
    let pairs = chosen
        .into_iter()
        .map(|(i, j)| if rng.random::<bool>() { TubeletPair::new(grid, i, j) } else { TubeletPair::new(grid, j, i) })
        .collect();
    Ok(PairBatch { pairs })
}

/// Mean binary cross-entropy of `sigmoid(w · [E_i ; E_j])` over the batch.
/// `encodings` row 0 is [CLS]; tubelet `s` sits at row `s + 1`.
pub fn temporal_loss(batch: &PairBatch, encodings: &EncodedSequence, order_weight: &Array2<f64>) -> Result<f64> {
    if batch.is_empty() {
        return Err(StatError::EmptyBatch);
    }
    let d = encodings.output.ncols();
    if order_weight.dim() != (1, 2 * d) {
        return Err(StatError::DimensionMismatch(format!(
            "order head {:?} for encodings of width {d}",
            order_weight.dim()
        )));
    }
    let w = order_weight.row(0);
    let mut probs = Vec::with_capacity(batch.len());
    for p in &batch.pairs {
        let (ri, rj) = (p.first + 1, p.second + 1);
        if rj.max(ri) >= encodings.output.nrows() {
            return Err(StatError::MissingIndex(p.first.max(p.second)));
        }
        let logit = w.slice(ndarray::s![..d]).dot(&encodings.output.row(ri))
            + w.slice(ndarray::s![d..]).dot(&encodings.output.row(rj));
        probs.push(sigmoid(logit));
    }
    let targets: Vec<f64> = batch.pairs.iter().map(TubeletPair::target).collect();
    Ok(bce(&probs, &targets))
}

/// Knobs of one pretraining step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PretrainSettings {
    pub mask_ratio: f64,
    pub beta: f64,
    pub n_comp: usize,
    /// Whether the temporal order task contributes to the loss.
    pub temporal_task: bool,
    pub dropout: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PretrainLosses {
    pub mtr: f64,
    pub temporal: f64,
    pub total: f64,
}

/// One sample of a pretraining batch; `rng_key` seeds its mask plan, pair
/// draw and dropout.
#[derive(Clone, Copy, Debug)]
pub struct PretrainItem<'a> {
    pub tokens: &'a TokenSequence,
    pub rng_key: u64,
}

/// Losses and gradients of one sample under its own mask and pairs.
pub fn pretrain_sample(
    model: &StatModel,
    item: &PretrainItem<'_>,
    settings: &PretrainSettings,
) -> Result<(PretrainLosses, Gradients)> {
    if !(settings.beta.is_finite() && settings.beta >= 0.0) {
        return Err(StatError::InvalidArgument(format!("beta {} must be nonnegative", settings.beta)));
    }
    let mut rng = StreamRng::seed_from_u64(item.rng_key);
    let plan = plan_spatial_mask(&model.grid, settings.mask_ratio, &mut rng)?;
    let pairs =
        if settings.temporal_task { Some(sample_pairs(&model.grid, &plan, settings.n_comp, &mut rng)?) } else { None };
    let dropout = settings.dropout.then_some(&mut rng);
    model.pretrain_objective(item.tokens, &plan, pairs.as_ref(), settings.beta, dropout)
}

/// Batch-mean pretraining loss `L_MTR + β·L_temp` and its gradients.
/// Samples are evaluated in parallel and reduced in batch order.
pub fn pretrain_step(
    model: &StatModel,
    batch: &[PretrainItem<'_>],
    settings: &PretrainSettings,
) -> Result<(PretrainLosses, Gradients)> {
    if batch.is_empty() {
        return Err(StatError::EmptyBatch);
    }
    let results: Vec<Result<(PretrainLosses, Gradients)>> =
        batch.par_iter().map(|item| pretrain_sample(model, item, settings)).collect();
    let mut grads = Gradients::zeros_like(&model.params);
    let mut losses = PretrainLosses::default();
    for r in results {
        let (l, g) = r?;
        grads.add_assign(&g);
        losses.mtr += l.mtr;
        losses.temporal += l.temporal;
        losses.total += l.total;
    }
    let n = batch.len() as f64;
    grads.scale(1.0 / n);
    losses.mtr /= n;
    losses.temporal /= n;
    losses.total /= n;
    Ok((losses, grads))
}
