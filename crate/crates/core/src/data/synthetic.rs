//! Controllable synthetic tactile tasks.
//!
//! Two families of classes are generated from smooth Gaussian blobs:
//!
//! * **spatial-pair** classes share one moving-blob pattern rendered in
//!   different vertical strips of the sensor grid. Every frame has the same
//!   spatial mean across classes; only *where* the activity happens differs.
//! * **temporal-pair** classes visit the same set of static regions in a
//!   class-specific cyclic order. Time-averaged heatmaps coincide; only
//!   *when* each region is active differs.
//!
//! `mixed` puts both families in one label space.

use std::f64::consts::PI;

use ndarray::Array4;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::manifest::{DatasetSplit, SplitKind};
use super::tensor::{LabeledSample, TactileTensor, TensorShape, DEFAULT_SAMPLE_RATE_HZ};
use crate::error::{Result, StatError};
use crate::rng::{self, tag};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyntheticMode {
    SpatialPair,
    TemporalPair,
    Mixed,
}

/// Parameters of a generated dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticTaskSpec {
    pub mode: SyntheticMode,
    pub classes: usize,
    pub shape: TensorShape,
    pub noise_std: f64,
    pub train_per_class: usize,
    pub validation_per_class: usize,
    pub test_per_class: usize,
    pub seed: u64,
    /// Frames each temporal-pair region stays active before the next one.
    #[serde(default = "default_segment_frames")]
    pub segment_frames: usize,
}

fn default_segment_frames() -> usize {
    5
}

/// Which family a class belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClassFamily {
    Spatial,
    Temporal,
}

impl SyntheticTaskSpec {
    pub fn new(mode: SyntheticMode, classes: usize, shape: TensorShape) -> Self {
        SyntheticTaskSpec {
            mode,
            classes,
            shape,
            noise_std: 0.1,
            train_per_class: 16,
            validation_per_class: 8,
            test_per_class: 8,
            seed: 0,
            segment_frames: default_segment_frames(),
        }
    }

    /// Number of spatial-pair and temporal-pair classes.
    pub fn family_sizes(&self) -> (usize, usize) {
        match self.mode {
            SyntheticMode::SpatialPair => (self.classes, 0),
            SyntheticMode::TemporalPair => (0, self.classes),
            SyntheticMode::Mixed => (self.classes / 2, self.classes - self.classes / 2),
        }
    }

    pub fn family(&self, class: usize) -> ClassFamily {
        if class < self.family_sizes().0 {
            ClassFamily::Spatial
        } else {
            ClassFamily::Temporal
        }
    }

    pub fn class_names(&self) -> Vec<String> {
        let (s, _) = self.family_sizes();
        (0..self.classes)
            .map(|c| match self.family(c) {
                ClassFamily::Spatial => format!("spatial-{c}"),
                ClassFamily::Temporal => format!("temporal-{}", c - s),
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(StatError::InvalidArgument(format!(
                "synthetic task needs at least 2 classes, got {}",
                self.classes
            )));
        }
        self.shape.validate()?;
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(StatError::InvalidArgument("noise_std must be a nonnegative real".into()));
        }
        let (spatial, temporal) = self.family_sizes();
        if self.mode == SyntheticMode::Mixed && (spatial < 2 || temporal < 2) {
            return Err(StatError::InvalidArgument("mixed mode needs at least 4 classes".into()));
        }
        if spatial > 0 && self.shape.cols < spatial {
            return Err(StatError::InvalidArgument(format!(
                "{} sensor columns cannot hold {spatial} spatial strips",
                self.shape.cols
            )));
        }
        if temporal > 0 {
            if self.segment_frames == 0 {
                return Err(StatError::InvalidArgument("segment_frames must be positive".into()));
            }
            if self.shape.rows < temporal {
                return Err(StatError::InvalidArgument(format!(
                    "{} sensor rows cannot hold {temporal} temporal regions",
                    self.shape.rows
                )));
            }
            if !self.shape.frames.is_multiple_of(self.segment_frames * temporal) {
                return Err(StatError::InvalidArgument(format!(
                    "frames ({}) must be a multiple of segment_frames x temporal classes ({})",
                    self.shape.frames,
                    self.segment_frames * temporal
                )));
            }
        }
        Ok(())
    }

    /// Noise-free pattern of one class.
    pub fn template(&self, class: usize) -> Array4<f64> {
        let (spatial, temporal) = self.family_sizes();
        let (c, t, h, w) = self.shape.dims();
        let mut out = Array4::zeros((c, t, h, w));
        match self.family(class) {
            ClassFamily::Spatial => {
                let strip = w / spatial;
                let offset = class * strip;
                let sigma_r = (h as f64 / 5.0).max(0.5);
                let sigma_c = (strip as f64 / 4.0).max(0.5);
                let col0 = (strip as f64 - 1.0) / 2.0;
                for f in 0..t {
                    let phase = 2.0 * PI * f as f64 / t as f64;
                    let row0 = (h as f64 - 1.0) * (0.5 + 0.25 * phase.sin());
                    for d in 0..c {
                        for r in 0..h {
                            for x in 0..strip {
                                out[[d, f, r, offset + x]] = blob(r as f64 - row0, x as f64 - col0, sigma_r, sigma_c);
                            }
                        }
                    }
                }
            }
            ClassFamily::Temporal => {
                let member = class - spatial;
                let band = h / temporal;
                let sigma_r = (band as f64 / 4.0).max(0.5);
                let sigma_c = (w as f64 / 4.0).max(0.5);
                let col0 = (w as f64 - 1.0) / 2.0;
                let row_local = (band as f64 - 1.0) / 2.0;
                for f in 0..t {
                    let segment = f / self.segment_frames;
                    let region = (segment + member) % temporal;
                    let row0 = (region * band) as f64 + row_local;
                    for d in 0..c {
                        for r in region * band..(region + 1) * band {
                            for x in 0..w {
                                out[[d, f, r, x]] = blob(r as f64 - row0, x as f64 - col0, sigma_r, sigma_c);
                            }
                        }
                    }
                }
            }
        }
        out
    }

    fn per_class(&self, kind: SplitKind) -> usize {
        match kind {
            SplitKind::Train => self.train_per_class,
            SplitKind::Validation => self.validation_per_class,
            SplitKind::Test => self.test_per_class,
        }
    }
}

fn blob(dr: f64, dc: f64, sigma_r: f64, sigma_c: f64) -> f64 {
    (-0.5 * ((dr / sigma_r).powi(2) + (dc / sigma_c).powi(2))).exp()
}

/// Generate all three splits. Each sample is seeded by its coordinates, so
/// the output does not depend on thread scheduling.
pub fn generate_synthetic(spec: &SyntheticTaskSpec) -> Result<DatasetSplit> {
    spec.validate()?;
    let templates: Vec<Array4<f64>> = (0..spec.classes).map(|c| spec.template(c)).collect();
    let build = |kind: SplitKind| -> Result<Vec<LabeledSample>> {
        let n = spec.per_class(kind);
        (0..spec.classes * n)
            .into_par_iter()
            .map(|ordinal| {
                let (class, index) = (ordinal / n, ordinal % n);
                let mut rng = rng::stream(spec.seed, &[tag::SYNTH, kind.ordinal(), class as u64, index as u64]);
                let mut values = templates[class].clone();
                if spec.noise_std > 0.0 {
                    values.mapv_inplace(|v| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        v + spec.noise_std * z
                    });
                }
                Ok(LabeledSample {
                    id: format!("synthetic/{kind}/{class}/{index}"),
                    tensor: TactileTensor::new(values, DEFAULT_SAMPLE_RATE_HZ)?,
                    label: class,
                })
            })
            .collect()
    };
    Ok(DatasetSplit {
        train: build(SplitKind::Train)?,
        validation: build(SplitKind::Validation)?,
        test: build(SplitKind::Test)?,
        class_names: spec.class_names(),
    })
}
