use ndarray::{Array3, Axis};

use super::tensor::{LabeledSample, TactileTensor};
use crate::error::{Result, StatError};

pub const STD_FLOOR: f64 = 1e-6;

/// Per-sensor-cell mean and standard deviation, pooled over samples and frames.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizationStats {
    pub mean: Array3<f64>,
    pub std: Array3<f64>,
}

impl NormalizationStats {
    /// Population statistics over a (training) split. Std is floored at 1e-6.
    pub fn from_samples(samples: &[LabeledSample]) -> Result<Self> {
        let first = samples.first().ok_or(StatError::EmptySplit)?;
        let shape = first.tensor.shape();
        let cells = (shape.devices, shape.rows, shape.cols);
        let mut sum = Array3::<f64>::zeros(cells);
        let mut count = 0usize;
        for s in samples {
            if s.tensor.shape() != shape {
                return Err(StatError::ShapeMismatch {
                    expected: shape.to_string(),
                    found: s.tensor.shape().to_string(),
                });
            }
            sum += &s.tensor.values().sum_axis(Axis(1));
            count += shape.frames;
        }
        let mean = sum / count as f64;
        let mut sq = Array3::<f64>::zeros(cells);
        for s in samples {
            for frame in s.tensor.values().axis_iter(Axis(1)) {
                sq.zip_mut_with(&(&frame - &mean), |acc, d| *acc += d * d);
            }
        }
        let std = sq.mapv(|v| (v / count as f64).sqrt().max(STD_FLOOR));
        Ok(NormalizationStats { mean, std })
    }

    fn check(&self, tensor: &TactileTensor) -> Result<()> {
        let s = tensor.shape();
        if self.mean.dim() != (s.devices, s.rows, s.cols) {
            return Err(StatError::ShapeMismatch {
                expected: format!("{:?}", self.mean.dim()),
                found: format!("{:?}", (s.devices, s.rows, s.cols)),
            });
        }
        Ok(())
    }
}

/// Z-score every sensor cell with training statistics.
pub fn normalize(tensor: &TactileTensor, stats: &NormalizationStats) -> Result<TactileTensor> {
    stats.check(tensor)?;
    let mut values = tensor.values().clone();
    for mut frame in values.axis_iter_mut(Axis(1)) {
        frame -= &stats.mean;
        frame /= &stats.std;
    }
    TactileTensor::new(values, tensor.sample_rate_hz())
}

pub fn denormalize(tensor: &TactileTensor, stats: &NormalizationStats) -> Result<TactileTensor> {
    stats.check(tensor)?;
    let mut values = tensor.values().clone();
    for mut frame in values.axis_iter_mut(Axis(1)) {
        frame *= &stats.std;
        frame += &stats.mean;
    }
    TactileTensor::new(values, tensor.sample_rate_hz())
}
