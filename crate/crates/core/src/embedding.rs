//! Token embeddings: learned tubelet projection plus fixed sinusoidal
//! position, spatial and temporal tables, and a learned [CLS] token.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Result, StatError};
use crate::params::{ParamId, ParameterStore};
use crate::tokenizer::{TokenSequence, Tubelet, TubeletGrid};

pub const INIT_STD: f64 = 0.02;

/// Row `k` (1-based) of the sinusoidal table:
/// `[2d] = sin(k / 10000^(2d/D))`, `[2d+1] = cos(k / 10000^(2d/D))`.
pub fn sinusoidal(k: usize, dim: usize) -> Result<Vec<f64>> {
    if dim == 0 || !dim.is_multiple_of(2) {
        return Err(StatError::InvalidArgument(format!("sinusoidal dimension must be even, got {dim}")));
    }
    if k == 0 {
        return Err(StatError::InvalidArgument("sinusoidal index is 1-based".into()));
    }
    let mut out = vec![0.0; dim];
    for d in 0..dim / 2 {
        let angle = k as f64 / 10000f64.powf((2 * d) as f64 / dim as f64);
        out[2 * d] = angle.sin();
        out[2 * d + 1] = angle.cos();
    }
    Ok(out)
}

/// Fixed sinusoidal rows for 0-based indices `0..rows` (argument `k = index + 1`).
#[derive(Clone, Debug, PartialEq)]
pub struct SinusoidalTable {
    entries: Array2<f64>,
}

impl SinusoidalTable {
    pub fn new(rows: usize, dim: usize) -> Result<Self> {
        let mut entries = Array2::zeros((rows, dim));
        for (i, mut row) in entries.rows_mut().into_iter().enumerate() {
            row.assign(&ndarray::Array1::from(sinusoidal(i + 1, dim)?));
        }
        Ok(SinusoidalTable { entries })
    }

    pub fn rows(&self) -> usize {
        self.entries.nrows()
    }

    pub fn dim(&self) -> usize {
        self.entries.ncols()
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }

    pub fn row(&self, index: usize) -> ndarray::ArrayView1<'_, f64> {
        self.entries.row(index)
    }
}

/// Which optional embedding families are added to each token.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingToggles {
    pub use_spatial: bool,
    pub use_temporal: bool,
}

impl Default for EmbeddingToggles {
    fn default() -> Self {
        EmbeddingToggles { use_spatial: true, use_temporal: true }
    }
}

/// Parameters of the [CLS] token: one learned vector per embedding family.
#[derive(Clone, Copy, Debug)]
pub struct ClsVectors {
    pub tubelet: ParamId,
    pub position: ParamId,
    pub spatial: ParamId,
    pub temporal: ParamId,
}

#[derive(Clone, Debug)]
pub struct EmbeddingSet {
    pub dim: usize,
    pub token_len: usize,
    pub toggles: EmbeddingToggles,
    pub position_table: SinusoidalTable,
    pub spatial_table: SinusoidalTable,
    pub temporal_table: SinusoidalTable,
    pub projection_weight: ParamId,
    pub projection_bias: ParamId,
    pub cls: ClsVectors,
    pub mask_token: ParamId,
}

impl EmbeddingSet {
    pub fn new<R: Rng>(
        store: &mut ParameterStore,
        grid: &TubeletGrid,
        dim: usize,
        toggles: EmbeddingToggles,
        rng: &mut R,
    ) -> Result<Self> {
        let token_len = grid.config.token_len();
        let projection_weight = store.register_normal("embed.tubelet.weight", (token_len, dim), INIT_STD, rng)?;
        let projection_bias = store.register("embed.tubelet.bias", Array2::zeros((1, dim)))?;
        let cls = ClsVectors {
            tubelet: store.register_normal("embed.cls.tubelet", (1, dim), INIT_STD, rng)?,
            position: store.register_normal("embed.cls.position", (1, dim), INIT_STD, rng)?,
            spatial: store.register_normal("embed.cls.spatial", (1, dim), INIT_STD, rng)?,
            temporal: store.register_normal("embed.cls.temporal", (1, dim), INIT_STD, rng)?,
        };
        let mask_token = store.register_normal("embed.mask", (1, dim), INIT_STD, rng)?;
        Ok(EmbeddingSet {
            dim,
            token_len,
            toggles,
            position_table: SinusoidalTable::new(grid.n_tube, dim)?,
            spatial_table: SinusoidalTable::new(grid.n_space, dim)?,
            temporal_table: SinusoidalTable::new(grid.n_temp, dim)?,
            projection_weight,
            projection_bias,
            cls,
            mask_token,
        })
    }

    /// Sum of the fixed tables for every token row.
    pub fn fixed_embeddings(&self, tokens: &TokenSequence) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((tokens.len(), self.dim));
        for (row, mut dst) in out.rows_mut().into_iter().enumerate() {
            let (seq, ks, kt) = (tokens.sequence[row], tokens.spatial[row], tokens.temporal[row]);
            if seq >= self.position_table.rows() || ks >= self.spatial_table.rows() || kt >= self.temporal_table.rows()
            {
                return Err(StatError::DimensionMismatch(format!(
                    "token (seq {seq}, spatial {ks}, temporal {kt}) outside embedding tables"
                )));
            }
            dst += &self.position_table.row(seq);
            if self.toggles.use_spatial {
                dst += &self.spatial_table.row(ks);
            }
            if self.toggles.use_temporal {
                dst += &self.temporal_table.row(kt);
            }
        }
        Ok(out)
    }

    /// Affine projection of one flattened tubelet.
    pub fn project_tubelet(&self, store: &ParameterStore, values: &[f64]) -> Result<Vec<f64>> {
        if values.len() != self.token_len {
            return Err(StatError::DimensionMismatch(format!(
                "tubelet has {} values, projection expects {}",
                values.len(),
                self.token_len
            )));
        }
        let x = ndarray::ArrayView1::from(values);
        let y = x.dot(store.get(self.projection_weight)) + store.get(self.projection_bias).row(0);
        Ok(y.to_vec())
    }

    fn cls_row(&self, tape: &mut Tape, store: &ParameterStore) -> Var {
        let mut row = tape.param(store, self.cls.tubelet);
        let pos = tape.param(store, self.cls.position);
        row = tape.add(row, pos);
        if self.toggles.use_spatial {
            let s = tape.param(store, self.cls.spatial);
            row = tape.add(row, s);
        }
        if self.toggles.use_temporal {
            let t = tape.param(store, self.cls.temporal);
            row = tape.add(row, t);
        }
        row
    }

    /// Record the `(n + 1) × D` encoder input on a tape. Rows listed in
    /// `masked_rows` (0-based token rows) take the learned mask embedding in
    /// place of their tubelet projection.
    pub fn tape_input(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        tokens: &TokenSequence,
        masked_rows: &[usize],
    ) -> Result<Var> {
        if tokens.values.ncols() != self.token_len {
            return Err(StatError::DimensionMismatch(format!(
                "tokens have width {}, projection expects {}",
                tokens.values.ncols(),
                self.token_len
            )));
        }
        let fixed = self.fixed_embeddings(tokens)?;
        let x = tape.constant(tokens.values.clone());
        let w = tape.param(store, self.projection_weight);
        let b = tape.param(store, self.projection_bias);
        let xw = tape.matmul(x, w);
        let mut proj = tape.add_row(xw, b);
        if !masked_rows.is_empty() {
            let m = tape.param(store, self.mask_token);
            proj = tape.scatter_rows(proj, masked_rows, m);
        }
        let fixed = tape.constant(fixed);
        let body = tape.add(proj, fixed);
        let cls = self.cls_row(tape, store);
        Ok(tape.concat_rows(cls, body))
    }

    /// The encoder input for a list of tubelets, row 0 being [CLS].
    pub fn compose_input(&self, store: &ParameterStore, tubelets: &[Tubelet]) -> Result<Array2<f64>> {
        let tokens = TokenSequence::from_tubelets(tubelets)?;
        let mut tape = Tape::new();
        let v = self.tape_input(&mut tape, store, &tokens, &[])?;
        Ok(tape.value(v).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_row_two_dims() {
        let v = sinusoidal(1, 2).unwrap();
        assert!((v[0] - 0.841471).abs() < 1e-6);
        assert!((v[1] - 0.540302).abs() < 1e-6);
    }

    #[test]
    fn odd_dimension_rejected() {
        assert!(sinusoidal(1, 7).is_err());
        assert!(SinusoidalTable::new(4, 3).is_err());
        assert!(sinusoidal(0, 4).is_err());
    }

    #[test]
    fn table_uses_one_based_argument() {
        let t = SinusoidalTable::new(3, 8).unwrap();
        assert_eq!(t.row(0).to_vec(), sinusoidal(1, 8).unwrap());
        assert_eq!(t.row(2).to_vec(), sinusoidal(3, 8).unwrap());
    }
}
