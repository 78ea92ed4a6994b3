//! On-disk dataset layout.
//!
//! Each sample is a raw little-endian `f32` array in C, T, H, W order. A
//! manifest is a UTF-8 text file with one `path,label,split` record per line;
//! blank lines and lines starting with `#` are ignored.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::index::sample as sample_indices;
use rand::Rng;

use super::tensor::{LabeledSample, TactileTensor, TensorShape, DEFAULT_SAMPLE_RATE_HZ};
use crate::error::{Result, StatError};
use crate::rng::{self, tag};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SplitKind {
    Train,
    Validation,
    Test,
}

impl SplitKind {
    pub const ALL: [SplitKind; 3] = [SplitKind::Train, SplitKind::Validation, SplitKind::Test];

    pub fn as_str(&self) -> &'static str {
        match self {
            SplitKind::Train => "train",
            SplitKind::Validation => "validation",
            SplitKind::Test => "test",
        }
    }

    pub(crate) fn ordinal(&self) -> u64 {
        match self {
            SplitKind::Train => 0,
            SplitKind::Validation => 1,
            SplitKind::Test => 2,
        }
    }
}

impl fmt::Display for SplitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SplitKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "train" => Ok(SplitKind::Train),
            "validation" | "val" => Ok(SplitKind::Validation),
            "test" => Ok(SplitKind::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRecord {
    pub path: PathBuf,
    pub label: String,
    pub split: SplitKind,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Self> {
        let mut records = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 3 || fields.iter().any(|f| f.is_empty()) {
                return Err(StatError::ManifestSyntax { line: i + 1, reason: "expected `path,label,split`".into() });
            }
            let split = fields[2].parse().map_err(|reason| StatError::ManifestSyntax { line: i + 1, reason })?;
            records.push(ManifestRecord { path: PathBuf::from(fields[0]), label: fields[1].to_string(), split });
        }
        Ok(Manifest { records })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => StatError::MissingFile(path.to_path_buf()),
            _ => StatError::Io(e),
        })?;
        Manifest::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&format!("{},{},{}\n", r.path.display(), r.label, r.split));
        }
        out
    }
}

/// Train, validation and test samples plus class names.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<LabeledSample>,
    pub validation: Vec<LabeledSample>,
    pub test: Vec<LabeledSample>,
    pub class_names: Vec<String>,
}

impl DatasetSplit {
    pub fn get(&self, kind: SplitKind) -> &[LabeledSample] {
        match kind {
            SplitKind::Train => &self.train,
            SplitKind::Validation => &self.validation,
            SplitKind::Test => &self.test,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn shape(&self) -> Option<TensorShape> {
        SplitKind::ALL.iter().flat_map(|k| self.get(*k).first()).map(|s| s.tensor.shape()).next()
    }

    /// Resample each training class to exactly `per_class` samples.
    ///
    /// Classes below the target keep every original and draw the remainder
    /// with replacement; classes above it are subsampled without replacement.
    pub fn balance_train(&mut self, per_class: usize, seed: u64) -> Result<()> {
        let m = self.num_classes();
        let mut by_class: Vec<Vec<LabeledSample>> = vec![Vec::new(); m];
        for s in self.train.drain(..) {
            by_class[s.label].push(s);
        }
        let mut balanced = Vec::with_capacity(per_class * m);
        for (class, members) in by_class.into_iter().enumerate() {
            if members.is_empty() {
                if per_class == 0 {
                    continue;
                }
                return Err(StatError::EmptyClass(self.class_names[class].clone()));
            }
            let mut rng = rng::stream(seed, &[tag::BALANCE, class as u64]);
            if members.len() >= per_class {
                let mut picked = sample_indices(&mut rng, members.len(), per_class).into_vec();
                picked.sort_unstable();
                balanced.extend(picked.into_iter().map(|i| members[i].clone()));
            } else {
                let extra: Vec<usize> =
                    (0..per_class - members.len()).map(|_| rng.random_range(0..members.len())).collect();
                balanced.extend(members.iter().cloned());
                balanced.extend(extra.into_iter().map(|i| members[i].clone()));
            }
        }
        self.train = balanced;
        Ok(())
    }
}

/// How to interpret the files a manifest points at.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadOptions {
    pub shape: TensorShape,
    pub class_names: Vec<String>,
    pub sample_rate_hz: f64,
    /// When set, the training split is balanced to this many samples per class.
    pub train_per_class: Option<usize>,
    pub seed: u64,
}

impl LoadOptions {
    pub fn new(shape: TensorShape, class_names: Vec<String>) -> Self {
        LoadOptions { shape, class_names, sample_rate_hz: DEFAULT_SAMPLE_RATE_HZ, train_per_class: None, seed: 0 }
    }
}

/// Read every sample a manifest lists, relative to `root`.
pub fn load_dataset(root: &Path, manifest: &Manifest, options: &LoadOptions) -> Result<DatasetSplit> {
    if manifest.records.is_empty() {
        return Err(StatError::EmptyManifest);
    }
    let class_index: BTreeMap<&str, usize> =
        options.class_names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let mut split = DatasetSplit {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
        class_names: options.class_names.clone(),
    };
    for record in &manifest.records {
        let label =
            *class_index.get(record.label.as_str()).ok_or_else(|| StatError::UnknownLabel(record.label.clone()))?;
        let path = root.join(&record.path);
        let bytes = fs::read(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => StatError::MissingFile(path.clone()),
            _ => StatError::Io(e),
        })?;
        let tensor =
            TactileTensor::from_le_bytes(options.shape, &bytes, options.sample_rate_hz).map_err(|e| match e {
                StatError::ShapeMismatch { expected, found } => {
                    StatError::ShapeMismatch { expected, found: format!("{found} in {}", record.path.display()) }
                }
                other => other,
            })?;
        let sample = LabeledSample { id: record.path.display().to_string(), tensor, label };
        match record.split {
            SplitKind::Train => split.train.push(sample),
            SplitKind::Validation => split.validation.push(sample),
            SplitKind::Test => split.test.push(sample),
        }
    }
    if let Some(per_class) = options.train_per_class {
        split.balance_train(per_class, options.seed)?;
    }
    Ok(split)
}

/// Write every sample under `root` and return the manifest describing them.
///
/// Duplicated training samples (from balancing) are written once.
pub fn write_dataset(root: &Path, split: &DatasetSplit) -> Result<Manifest> {
    let mut records = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for kind in SplitKind::ALL {
        let dir = root.join(kind.as_str());
        fs::create_dir_all(&dir)?;
        for (i, sample) in split.get(kind).iter().enumerate() {
            if !seen.insert((kind, sample.id.clone())) {
                continue;
            }
            let rel = PathBuf::from(kind.as_str()).join(format!("{i:06}.f32"));
            fs::write(root.join(&rel), sample.tensor.to_le_bytes())?;
            records.push(ManifestRecord { path: rel, label: split.class_names[sample.label].clone(), split: kind });
        }
    }
    let manifest = Manifest { records };
    fs::write(root.join("manifest.csv"), manifest.to_text())?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_skips_comments_and_rejects_bad_lines() {
        let m = Manifest::parse("# header\n\na.f32, walk ,train\nb.f32,sit,val\n").unwrap();
        assert_eq!(m.records.len(), 2);
        assert_eq!(m.records[0].label, "walk");
        assert_eq!(m.records[1].split, SplitKind::Validation);
        assert!(matches!(Manifest::parse("a.f32,walk\n"), Err(StatError::ManifestSyntax { line: 1, .. })));
        assert!(Manifest::parse("a.f32,walk,holdout\n").is_err());
    }

    #[test]
    fn empty_manifest_is_an_error() {
        let opts = LoadOptions::new(TensorShape::new(1, 1, 1, 1), vec!["a".into()]);
        let err = load_dataset(Path::new("."), &Manifest::default(), &opts).unwrap_err();
        assert_eq!(err.to_string(), "empty manifest");
    }
}
