//! Tubelet tokenization.
//!
//! A tensor of shape C×T×H×W is cut into non-overlapping L×P×P blocks. Each
//! block becomes one token, flattened in (frame, row, col) order. Tokens are
//! ordered temporal-major: all patches of the first frame window, then the
//! next window, and so on. Patches are enumerated row-major within a device,
//! device-major across devices.

use ndarray::{Array2, Array4};
use serde::{Deserialize, Serialize};

use crate::data::{TactileTensor, TensorShape};
use crate::error::{Result, StatError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TubeletConfig {
    /// Frames per tubelet (L).
    pub frames: usize,
    /// Patch side in sensors (P).
    pub patch: usize,
}

impl TubeletConfig {
    pub const fn new(frames: usize, patch: usize) -> Self {
        TubeletConfig { frames, patch }
    }

    pub fn token_len(&self) -> usize {
        self.frames * self.patch * self.patch
    }
}

impl Default for TubeletConfig {
    fn default() -> Self {
        TubeletConfig::new(5, 4)
    }
}

/// Token counts induced by a tensor shape and a tubelet config.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TubeletGrid {
    pub shape: TensorShape,
    pub config: TubeletConfig,
    pub n_tube: usize,
    pub n_space: usize,
    pub n_temp: usize,
    pub sample_rate_hz: f64,
}

impl TubeletGrid {
    pub fn new(shape: TensorShape, config: TubeletConfig) -> Result<Self> {
        shape.validate()?;
        if config.frames == 0 || config.patch == 0 {
            return Err(StatError::InvalidArgument("tubelet frames and patch must be positive".into()));
        }
        if !shape.frames.is_multiple_of(config.frames) {
            return Err(StatError::NotDivisible { axis: "T", by: "L" });
        }
        if !shape.rows.is_multiple_of(config.patch) {
            return Err(StatError::NotDivisible { axis: "H", by: "P" });
        }
        if !shape.cols.is_multiple_of(config.patch) {
            return Err(StatError::NotDivisible { axis: "W", by: "P" });
        }
        let n_space = shape.devices * (shape.rows / config.patch) * (shape.cols / config.patch);
        let n_temp = shape.frames / config.frames;
        Ok(TubeletGrid {
            shape,
            config,
            n_tube: n_space * n_temp,
            n_space,
            n_temp,
            sample_rate_hz: crate::data::DEFAULT_SAMPLE_RATE_HZ,
        })
    }

    fn patches_per_row(&self) -> usize {
        self.shape.cols / self.config.patch
    }

    fn patches_per_device(&self) -> usize {
        (self.shape.rows / self.config.patch) * self.patches_per_row()
    }

    pub fn sequence_index(&self, spatial: usize, temporal: usize) -> usize {
        temporal * self.n_space + spatial
    }

    /// (spatial, temporal) of a sequence index.
    pub fn split_index(&self, sequence: usize) -> (usize, usize) {
        (sequence % self.n_space, sequence / self.n_space)
    }

    /// Device and top-left sensor of a spatial index.
    pub fn patch_origin(&self, spatial: usize) -> (usize, usize, usize) {
        let device = spatial / self.patches_per_device();
        let within = spatial % self.patches_per_device();
        let p = self.config.patch;
        (device, (within / self.patches_per_row()) * p, (within % self.patches_per_row()) * p)
    }

    fn check_shape(&self, tensor: &TactileTensor) -> Result<()> {
        if tensor.shape() != self.shape {
            return Err(StatError::ShapeMismatch {
                expected: self.shape.to_string(),
                found: tensor.shape().to_string(),
            });
        }
        Ok(())
    }

    fn read_block(&self, values: &Array4<f64>, sequence: usize, out: &mut [f64]) {
        let (spatial, temporal) = self.split_index(sequence);
        let (device, r0, c0) = self.patch_origin(spatial);
        let (l, p) = (self.config.frames, self.config.patch);
        let mut i = 0;
        for f in temporal * l..(temporal + 1) * l {
            for r in r0..r0 + p {
                for c in c0..c0 + p {
                    out[i] = values[[device, f, r, c]];
                    i += 1;
                }
            }
        }
    }

    fn write_block(&self, values: &mut Array4<f64>, sequence: usize, src: &[f64]) {
        let (spatial, temporal) = self.split_index(sequence);
        let (device, r0, c0) = self.patch_origin(spatial);
        let (l, p) = (self.config.frames, self.config.patch);
        let mut i = 0;
        for f in temporal * l..(temporal + 1) * l {
            for r in r0..r0 + p {
                for c in c0..c0 + p {
                    values[[device, f, r, c]] = src[i];
                    i += 1;
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tubelet {
    pub values: Vec<f64>,
    pub spatial_index: usize,
    pub temporal_index: usize,
    pub sequence_index: usize,
}

pub fn tokenize(tensor: &TactileTensor, config: TubeletConfig) -> Result<(TubeletGrid, Vec<Tubelet>)> {
    let mut grid = TubeletGrid::new(tensor.shape(), config)?;
    grid.sample_rate_hz = tensor.sample_rate_hz();
    let tubelets = (0..grid.n_tube)
        .map(|seq| {
            let mut values = vec![0.0; config.token_len()];
            grid.read_block(tensor.values(), seq, &mut values);
            let (spatial_index, temporal_index) = grid.split_index(seq);
            Tubelet { values, spatial_index, temporal_index, sequence_index: seq }
        })
        .collect();
    Ok((grid, tubelets))
}

/// Reassemble a tensor from tubelets in any order.
pub fn detokenize(grid: &TubeletGrid, tubelets: &[Tubelet]) -> Result<TactileTensor> {
    let mut seen = vec![false; grid.n_tube];
    let mut values = Array4::zeros(grid.shape.dims());
    for t in tubelets {
        if t.sequence_index >= grid.n_tube {
            return Err(StatError::InvalidArgument(format!(
                "sequence index {} outside grid of {}",
                t.sequence_index, grid.n_tube
            )));
        }
        if seen[t.sequence_index] {
            return Err(StatError::DuplicateIndex(t.sequence_index));
        }
        if (t.spatial_index, t.temporal_index) != grid.split_index(t.sequence_index) {
            return Err(StatError::InvalidArgument(format!(
                "tubelet {} carries inconsistent spatial/temporal indices",
                t.sequence_index
            )));
        }
        if t.values.len() != grid.config.token_len() {
            return Err(StatError::DimensionMismatch(format!(
                "tubelet has {} values, expected {}",
                t.values.len(),
                grid.config.token_len()
            )));
        }
        seen[t.sequence_index] = true;
        grid.write_block(&mut values, t.sequence_index, &t.values);
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(StatError::MissingIndex(missing));
    }
    TactileTensor::new(values, grid.sample_rate_hz)
}

/// Tubelets packed as a matrix, one row per token, plus their indices.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenSequence {
    pub values: Array2<f64>,
    pub spatial: Vec<usize>,
    pub temporal: Vec<usize>,
    pub sequence: Vec<usize>,
}

impl TokenSequence {
    pub fn from_tubelets(tubelets: &[Tubelet]) -> Result<Self> {
        let width = tubelets.first().map(|t| t.values.len()).unwrap_or(0);
        let mut values = Array2::zeros((tubelets.len(), width));
        for (row, t) in tubelets.iter().enumerate() {
            if t.values.len() != width {
                return Err(StatError::DimensionMismatch("tubelets of unequal length".into()));
            }
            values.row_mut(row).iter_mut().zip(&t.values).for_each(|(d, s)| *d = *s);
        }
        Ok(TokenSequence {
            values,
            spatial: tubelets.iter().map(|t| t.spatial_index).collect(),
            temporal: tubelets.iter().map(|t| t.temporal_index).collect(),
            sequence: tubelets.iter().map(|t| t.sequence_index).collect(),
        })
    }

    /// Tokenize straight into a matrix in sequence order.
    pub fn from_tensor(tensor: &TactileTensor, grid: &TubeletGrid) -> Result<Self> {
        grid.check_shape(tensor)?;
        let mut values = Array2::zeros((grid.n_tube, grid.config.token_len()));
        for (seq, mut row) in values.rows_mut().into_iter().enumerate() {
            let slice = row.as_slice_mut().expect("standard layout");
            grid.read_block(tensor.values(), seq, slice);
        }
        let (spatial, temporal) = (0..grid.n_tube).map(|s| grid.split_index(s)).unzip();
        Ok(TokenSequence { values, spatial, temporal, sequence: (0..grid.n_tube).collect() })
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row holding each sequence index, if present.
    pub fn rows_by_sequence(&self) -> Vec<Option<usize>> {
        let n = self.sequence.iter().copied().max().map_or(0, |m| m + 1);
        let mut out = vec![None; n];
        for (row, &seq) in self.sequence.iter().enumerate() {
            out[seq] = Some(row);
        }
        out
    }
}
