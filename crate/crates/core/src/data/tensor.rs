use std::fmt;

use ndarray::Array4;
use serde::{Deserialize, Serialize};

use crate::error::{Result, StatError};

/// Paper-format sensor sampling rate.
pub const DEFAULT_SAMPLE_RATE_HZ: f64 = 15.0;

/// Dimensions of a tactile block: devices × frames × sensor rows × sensor cols.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "[usize; 4]", from = "[usize; 4]")]
pub struct TensorShape {
    pub devices: usize,
    pub frames: usize,
    pub rows: usize,
    pub cols: usize,
}

impl TensorShape {
    pub const fn new(devices: usize, frames: usize, rows: usize, cols: usize) -> Self {
        TensorShape { devices, frames, rows, cols }
    }

    pub fn len(&self) -> usize {
        self.devices * self.frames * self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.devices, self.frames, self.rows, self.cols)
    }

    pub fn validate(&self) -> Result<()> {
        if self.devices == 0 || self.frames == 0 || self.rows == 0 || self.cols == 0 {
            return Err(StatError::InvalidTensor(format!("nonpositive dimension in {self}")));
        }
        Ok(())
    }
}

impl From<[usize; 4]> for TensorShape {
    fn from(d: [usize; 4]) -> Self {
        TensorShape::new(d[0], d[1], d[2], d[3])
    }
}

impl From<TensorShape> for [usize; 4] {
    fn from(s: TensorShape) -> Self {
        [s.devices, s.frames, s.rows, s.cols]
    }
}

impl fmt::Display for TensorShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.devices, self.frames, self.rows, self.cols)
    }
}

/// A block of sensor readings in C, T, H, W order.
#[derive(Clone, Debug, PartialEq)]
pub struct TactileTensor {
    values: Array4<f64>,
    sample_rate_hz: f64,
}

impl TactileTensor {
    pub fn new(values: Array4<f64>, sample_rate_hz: f64) -> Result<Self> {
        let (c, t, h, w) = values.dim();
        TensorShape::new(c, t, h, w).validate()?;
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(StatError::InvalidTensor(format!("sample rate {sample_rate_hz} must be positive")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(StatError::NonFinite("tactile tensor"));
        }
        Ok(TactileTensor { values, sample_rate_hz })
    }

    pub fn zeros(shape: TensorShape) -> Self {
        TactileTensor { values: Array4::zeros(shape.dims()), sample_rate_hz: DEFAULT_SAMPLE_RATE_HZ }
    }

    pub fn shape(&self) -> TensorShape {
        let (c, t, h, w) = self.values.dim();
        TensorShape::new(c, t, h, w)
    }

    pub fn values(&self) -> &Array4<f64> {
        &self.values
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    /// Encode as little-endian f32 in C, T, H, W order.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.values.len() * 4);
        for &v in self.values.iter() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_le_bytes(shape: TensorShape, bytes: &[u8], sample_rate_hz: f64) -> Result<Self> {
        shape.validate()?;
        if bytes.len() != shape.len() * 4 {
            return Err(StatError::ShapeMismatch {
                expected: format!("{shape} ({} bytes)", shape.len() * 4),
                found: format!("{} bytes", bytes.len()),
            });
        }
        let flat: Vec<f64> =
            bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64).collect();
        let values = Array4::from_shape_vec(shape.dims(), flat).map_err(|e| StatError::InvalidTensor(e.to_string()))?;
        TactileTensor::new(values, sample_rate_hz)
    }
}

/// One tactile recording with its action label.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample {
    /// Stable identity used to check split disjointness.
    pub id: String,
    pub tensor: TactileTensor,
    pub label: usize,
}
