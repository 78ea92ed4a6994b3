//! Experiment orchestration: data preparation, pretraining, fine-tuning,
//! evaluation, the ablation suite, gradient checks and dataset export.
//!
//! Every stage writes into an output directory it owns. Logs are CSV,
//! reports TOML, checkpoints the binary format of [`crate::checkpoint`].

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use sha2::{Digest, Sha256};

use crate::checkpoint::{Checkpoint, OptimizerState, Stage};
use crate::config::{DataSource, ExperimentConfig};
use crate::data::{
    generate_synthetic, load_dataset, normalize, write_dataset, ClassFamily, DatasetSplit, LabeledSample, LoadOptions,
    Manifest, NormalizationStats, SplitKind,
};
use crate::error::{Result, StatError};
use crate::finetune::{evaluate, finetune_step, FinetuneItem};
use crate::gradcheck::{gradient_check, GradCheckOptions, GradCheckReport};
use crate::metrics::EvalReport;
use crate::model::{ModelConfig, StatModel};
use crate::optim::{Adam, AdamConfig};
use crate::pretrain::{plan_spatial_mask, pretrain_step, sample_pairs, PretrainItem, PretrainSettings};
use crate::rng::{self, tag};
use crate::tokenizer::{TokenSequence, TubeletGrid};

pub const PRETRAIN_LOG: &str = "pretrain_log.csv";
pub const FINETUNE_LOG: &str = "finetune_log.csv";
pub const FINETUNE_BEST: &str = "finetune_best.ckpt";
pub const ABLATION_TABLE: &str = "ablation.csv";

pub fn pretrain_checkpoint_name(epoch: u64) -> String {
    format!("pretrain_epoch_{epoch:03}.ckpt")
}

pub fn finetune_checkpoint_name(epoch: u64) -> String {
    format!("finetune_epoch_{epoch:03}.ckpt")
}

/// Tokenized samples of one split.
#[derive(Clone, Debug, Default)]
pub struct PreparedSplit {
    pub tokens: Vec<TokenSequence>,
    pub labels: Vec<usize>,
}

impl PreparedSplit {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// A dataset normalized with training statistics and tokenized once.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub class_names: Vec<String>,
    /// Class families, known for synthetic data only.
    pub families: Option<Vec<ClassFamily>>,
    pub stats: NormalizationStats,
    /// Hex SHA-256 of the raw samples, labels and ids.
    pub fingerprint: String,
    pub train: PreparedSplit,
    pub validation: PreparedSplit,
    pub test: PreparedSplit,
}

impl PreparedData {
    pub fn load(config: &ExperimentConfig) -> Result<Self> {
        let dataset = load_source(config)?;
        let families = match &config.data {
            DataSource::Synthetic(spec) => Some((0..spec.classes).map(|c| spec.family(c)).collect()),
            DataSource::Manifest(_) => None,
        };
        let grid = TubeletGrid::new(config.data.shape(), config.tubelet)?;
        Self::from_dataset(&dataset, &grid, families)
    }

    pub fn from_dataset(
        dataset: &DatasetSplit,
        grid: &TubeletGrid,
        families: Option<Vec<ClassFamily>>,
    ) -> Result<Self> {
        let stats = NormalizationStats::from_samples(&dataset.train)?;
        let prepare = |samples: &[LabeledSample]| -> Result<PreparedSplit> {
            let mut split = PreparedSplit::default();
            for s in samples {
                split.tokens.push(TokenSequence::from_tensor(&normalize(&s.tensor, &stats)?, grid)?);
                split.labels.push(s.label);
            }
            Ok(split)
        };
        Ok(PreparedData {
            class_names: dataset.class_names.clone(),
            families,
            fingerprint: dataset_fingerprint(dataset),
            train: prepare(&dataset.train)?,
            validation: prepare(&dataset.validation)?,
            test: prepare(&dataset.test)?,
            stats,
        })
    }

    pub fn split(&self, kind: SplitKind) -> &PreparedSplit {
        match kind {
            SplitKind::Train => &self.train,
            SplitKind::Validation => &self.validation,
            SplitKind::Test => &self.test,
        }
    }

    pub fn family_classes(&self, family: ClassFamily) -> Vec<usize> {
        self.families.as_ref().map(|f| (0..f.len()).filter(|&c| f[c] == family).collect()).unwrap_or_default()
    }
}

/// Generate or load the dataset a config names.
pub fn load_source(config: &ExperimentConfig) -> Result<DatasetSplit> {
    match &config.data {
        DataSource::Synthetic(spec) => generate_synthetic(spec),
        DataSource::Manifest(m) => {
            let manifest = Manifest::read(&m.manifest)?;
            let root = m
                .root
                .clone()
                .or_else(|| m.manifest.parent().map(Path::to_path_buf))
                .unwrap_or_else(|| PathBuf::from("."));
            let options = LoadOptions {
                sample_rate_hz: m.sample_rate_hz,
                train_per_class: m.train_per_class,
                seed: config.seed,
                ..LoadOptions::new(m.shape, m.class_names.clone())
            };
            load_dataset(&root, &manifest, &options)
        }
    }
}

pub fn dataset_fingerprint(dataset: &DatasetSplit) -> String {
    let mut hasher = Sha256::new();
    for name in &dataset.class_names {
        hasher.update(name.as_bytes());
        hasher.update([0u8]);
    }
    for kind in [SplitKind::Train, SplitKind::Validation, SplitKind::Test] {
        let samples = dataset.get(kind);
        hasher.update(kind.as_str().as_bytes());
        hasher.update((samples.len() as u64).to_le_bytes());
        for s in samples {
            hasher.update(s.id.as_bytes());
            hasher.update([0u8]);
            hasher.update((s.label as u64).to_le_bytes());
            for v in s.tensor.values().iter() {
                hasher.update(v.to_le_bytes());
            }
        }
    }
    hex::encode(hasher.finalize())
}

/// Model and data of one run.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub data: Arc<PreparedData>,
}

/// Per-epoch fine-tuning record, mirroring one log row.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: u64,
    pub train_loss: f64,
    pub val_acc1: f64,
    pub val_acc3: f64,
    pub val_macro_f1: f64,
}

#[derive(Clone, Debug)]
pub struct FinetuneOutcome {
    /// Checkpoint of the epoch with the highest validation acc1 (earliest on ties).
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub history: Vec<EpochRecord>,
}

impl FinetuneOutcome {
    pub fn best_epoch(&self) -> u64 {
        self.best.epoch
    }
}

fn io_context(path: &Path, e: std::io::Error) -> StatError {
    match e.kind() {
        std::io::ErrorKind::NotFound => StatError::MissingFile(path.to_path_buf()),
        _ => StatError::Io(e),
    }
}

/// Rows of a CSV log whose first column (epoch) is at most `epoch`.
fn log_rows_through(path: &Path, epoch: u64) -> Result<Vec<String>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(path).map_err(|e| io_context(path, e))?;
    Ok(text
        .lines()
        .skip(1)
        .filter(|line| line.split(',').next().and_then(|e| e.parse::<u64>().ok()).is_some_and(|e| e <= epoch))
        .map(str::to_string)
        .collect())
}

fn write_log(path: &Path, header: &str, rows: &[String]) -> Result<()> {
    let mut text = String::with_capacity(64 * (rows.len() + 1));
    text.push_str(header);
    text.push('\n');
    for r in rows {
        text.push_str(r);
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

/// Stratified, seeded subset of `n` indices: classes take turns in order,
/// each contributing its next sample from a shuffled list.
pub fn stratified_subset(labels: &[usize], classes: usize, n: usize, seed: u64) -> Vec<usize> {
    let mut rng = rng::stream(seed, &[tag::SUBSET]);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    for list in &mut by_class {
        list.shuffle(&mut rng);
    }
    let mut picked = Vec::with_capacity(n.min(labels.len()));
    let mut round = 0;
    while picked.len() < n.min(labels.len()) {
        for list in &by_class {
            if picked.len() == n {
                break;
            }
            if let Some(&i) = list.get(round) {
                picked.push(i);
            }
        }
        round += 1;
    }
    picked.sort_unstable();
    picked
}

fn shuffled(len: usize, seed: u64, stage: u64, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut rng::stream(seed, &[tag::SHUFFLE, stage, epoch]));
    order
}

/// Parameters whose names and shapes define the architecture shared by
/// pretraining and fine-tuning (everything but the classifier head).
fn is_backbone(name: &str) -> bool {
    !name.starts_with("head.classifier.")
}

/// Copy every backbone parameter of `init` into `model`, failing on any
/// missing name or shape difference.
pub fn load_backbone(model: &mut StatModel, init: &Checkpoint) -> Result<()> {
    let ids: Vec<_> = model.params.ids().collect();
    for id in ids {
        let name = model.params.name(id).to_string();
        if !is_backbone(&name) {
            continue;
        }
        let src =
            init.params.id(&name).map_err(|_| StatError::ArchitectureMismatch(format!("checkpoint lacks {name}")))?;
        let value = init.params.get(src);
        if value.dim() != model.params.get(id).dim() {
            return Err(StatError::ArchitectureMismatch(format!(
                "{name}: checkpoint {:?}, model {:?}",
                value.dim(),
                model.params.get(id).dim()
            )));
        }
        model.params.get_mut(id).assign(value);
    }
    for (_, name, _) in init.params.iter() {
        if is_backbone(name) && model.params.id(name).is_err() {
            return Err(StatError::ArchitectureMismatch(format!("model lacks {name}")));
        }
    }
    Ok(())
}

/// Equal up to the initialization seed and dropout rate, which do not
/// affect evaluation.
fn same_architecture(a: &ModelConfig, b: &ModelConfig) -> bool {
    let strip = |c: &ModelConfig| {
        let mut c = c.clone();
        c.encoder.seed = 0;
        c.encoder.dropout = 0.0;
        c
    };
    strip(a) == strip(b)
}

/// Restore a model and optimizer exactly as a checkpoint left them.
fn restore(model: &mut StatModel, adam: &mut Adam, ckpt: &Checkpoint) -> Result<()> {
    if ckpt.params.len() != model.params.len() {
        return Err(StatError::ArchitectureMismatch("parameter count differs".into()));
    }
    for (id, name, value) in ckpt.params.iter() {
        if model.params.name(id) != name || model.params.get(id).dim() != value.dim() {
            return Err(StatError::ArchitectureMismatch(format!("parameter {name} differs")));
        }
    }
    model.params.copy_from(&ckpt.params)?;
    ckpt.optimizer.restore_into(adam)
}

fn expect_stage(ckpt: &Checkpoint, stage: Stage) -> Result<()> {
    if ckpt.stage != stage {
        return Err(StatError::InvalidArgument(format!("expected a {stage:?} checkpoint, got {:?}", ckpt.stage)));
    }
    Ok(())
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let data = Arc::new(PreparedData::load(&config)?);
        Ok(Experiment { config, data })
    }

    /// Share already prepared data; the config must describe the same source.
    pub fn with_data(config: ExperimentConfig, data: Arc<PreparedData>) -> Result<Self> {
        config.validate()?;
        Ok(Experiment { config, data })
    }

    pub fn build_model(&self) -> Result<StatModel> {
        StatModel::new(self.config.model_config())
    }

    fn checkpoint(
        &self,
        stage: Stage,
        epoch: u64,
        model: &StatModel,
        adam: &Adam,
        metrics: &[(&str, f64)],
    ) -> Checkpoint {
        Checkpoint {
            stage,
            epoch,
            seed: self.config.seed,
            config_toml: self.config.to_toml(),
            metrics: metrics.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            params: model.params.clone(),
            optimizer: OptimizerState::from_adam(adam),
        }
    }

    /// Self-supervised pretraining on the training split. Writes
    /// `pretrain_log.csv` (one row per step) and one checkpoint per epoch;
    /// returns the final checkpoint.
    pub fn pretrain(&self, out: &Path, resume: Option<&Checkpoint>) -> Result<Checkpoint> {
        self.pretrain_until(out, resume, self.config.pretrain.epochs as u64)
    }

    /// Like [`Experiment::pretrain`] but stops after `stop` completed epochs,
    /// as an interrupted run would.
    pub fn pretrain_until(&self, out: &Path, resume: Option<&Checkpoint>, stop: u64) -> Result<Checkpoint> {
        let p = &self.config.pretrain;
        if !p.enabled {
            return Err(StatError::PretrainingDisabled);
        }
        if self.data.train.is_empty() {
            return Err(StatError::EmptySplit);
        }
        fs::create_dir_all(out)?;
        let seed = self.config.seed;
        let mut model = self.build_model()?;
        let mut adam = Adam::new(AdamConfig::new(p.lr, p.weight_decay), &model.params);
        let mut start = 0;
        let mut step = 0u64;
        let log_path = out.join(PRETRAIN_LOG);
        let mut rows = Vec::new();
        if let Some(ckpt) = resume {
            expect_stage(ckpt, Stage::Pretrain)?;
            restore(&mut model, &mut adam, ckpt)?;
            start = ckpt.epoch;
            step = ckpt.metrics.get("step").copied().unwrap_or(0.0) as u64;
            rows = log_rows_through(&log_path, start)?;
        }
        let settings = PretrainSettings {
            mask_ratio: p.mask_ratio,
            beta: p.beta,
            n_comp: p.n_comp,
            temporal_task: p.temporal_task,
            dropout: self.config.model.dropout > 0.0,
        };
        let train = &self.data.train;
        let mut last = None;
        for epoch in start..stop.min(p.epochs as u64) {
            let order = shuffled(train.len(), seed, 0, epoch);
            for chunk in order.chunks(p.batch_size) {
                let batch: Vec<PretrainItem<'_>> = chunk
                    .iter()
                    .map(|&i| PretrainItem {
                        tokens: &train.tokens[i],
                        rng_key: rng::derive_key(seed, &[tag::PRETRAIN, epoch, i as u64]),
                    })
                    .collect();
                let (losses, grads) = pretrain_step(&model, &batch, &settings)?;
                if !losses.total.is_finite() {
                    return Err(StatError::NonFinite("pretraining loss"));
                }
                adam.update(&mut model.params, &grads);
                step += 1;
                rows.push(format!("{},{},{},{},{}", epoch + 1, step, losses.mtr, losses.temporal, losses.total));
            }
            write_log(&log_path, "epoch,step,mtr,temporal,total", &rows)?;
            let ckpt = self.checkpoint(Stage::Pretrain, epoch + 1, &model, &adam, &[("step", step as f64)]);
            ckpt.save(&out.join(pretrain_checkpoint_name(epoch + 1)))?;
            last = Some(ckpt);
        }
        Ok(match last {
            Some(c) => c,
            None => self.checkpoint(Stage::Pretrain, start, &model, &adam, &[("step", step as f64)]),
        })
    }

    /// Indices of the training samples used for supervised training.
    pub fn labeled_indices(&self) -> Vec<usize> {
        let labels = &self.data.train.labels;
        match self.config.finetune.labeled_samples {
            Some(n) if n < labels.len() => stratified_subset(labels, self.data.class_names.len(), n, self.config.seed),
            _ => (0..labels.len()).collect(),
        }
    }

    /// Supervised training of the whole model with the [CLS] classifier,
    /// starting from `init` (a pretraining checkpoint) or from scratch.
    /// Logs validation metrics per epoch to `finetune_log.csv` and keeps the
    /// best-validation-acc1 weights in `finetune_best.ckpt`.
    pub fn finetune(
        &self,
        out: &Path,
        init: Option<&Checkpoint>,
        resume: Option<&Checkpoint>,
    ) -> Result<FinetuneOutcome> {
        self.finetune_until(out, init, resume, self.config.finetune.epochs as u64)
    }

    pub fn finetune_until(
        &self,
        out: &Path,
        init: Option<&Checkpoint>,
        resume: Option<&Checkpoint>,
        stop: u64,
    ) -> Result<FinetuneOutcome> {
        let f = &self.config.finetune;
        let labeled = self.labeled_indices();
        if labeled.is_empty() {
            return Err(StatError::EmptySplit);
        }
        fs::create_dir_all(out)?;
        let seed = self.config.seed;
        let mut model = self.build_model()?;
        if let Some(init) = init {
            load_backbone(&mut model, init)?;
        }
        let mut adam = Adam::new(AdamConfig::new(f.lr, f.weight_decay), &model.params);
        let log_path = out.join(FINETUNE_LOG);
        let best_path = out.join(FINETUNE_BEST);
        let mut start = 0;
        let mut history = Vec::new();
        let mut best: Option<Checkpoint> = None;
        if let Some(ckpt) = resume {
            expect_stage(ckpt, Stage::Finetune)?;
            restore(&mut model, &mut adam, ckpt)?;
            start = ckpt.epoch;
            history = log_rows_through(&log_path, start)?.iter().filter_map(|r| parse_epoch_record(r)).collect();
            if best_path.exists() {
                let b = Checkpoint::load(&best_path)?;
                if b.epoch <= start {
                    best = Some(b);
                }
            }
        }
        let validation = if self.data.validation.is_empty() { &self.data.train } else { &self.data.validation };
        let train = &self.data.train;
        let dropout = self.config.model.dropout > 0.0;
        let mut last = None;
        for epoch in start..stop.min(f.epochs as u64) {
            let order = shuffled(labeled.len(), seed, 1, epoch);
            let mut loss_sum = 0.0;
            for chunk in order.chunks(f.batch_size) {
                let batch: Vec<FinetuneItem<'_>> = chunk
                    .iter()
                    .map(|&k| {
                        let i = labeled[k];
                        FinetuneItem {
                            tokens: &train.tokens[i],
                            label: train.labels[i],
                            rng_key: rng::derive_key(seed, &[tag::FINETUNE, epoch, i as u64]),
                        }
                    })
                    .collect();
                let (loss, grads) = finetune_step(&model, &batch, dropout)?;
                if !loss.is_finite() {
                    return Err(StatError::NonFinite("fine-tuning loss"));
                }
                adam.update(&mut model.params, &grads);
                loss_sum += loss * chunk.len() as f64;
            }
            let report = evaluate(&model, &validation.tokens, &validation.labels)?;
            let record = EpochRecord {
                epoch: epoch + 1,
                train_loss: loss_sum / labeled.len() as f64,
                val_acc1: report.acc1,
                val_acc3: report.acc3,
                val_macro_f1: report.macro_f1,
            };
            history.push(record);
            let improved = best.as_ref().is_none_or(|b| record.val_acc1 > b.metrics["val_acc1"]);
            let metrics =
                [("train_loss", record.train_loss), ("val_acc1", report.acc1), ("val_macro_f1", report.macro_f1)];
            let ckpt = self.checkpoint(Stage::Finetune, epoch + 1, &model, &adam, &metrics);
            if improved {
                ckpt.save(&best_path)?;
                best = Some(ckpt.clone());
            }
            ckpt.save(&out.join(finetune_checkpoint_name(epoch + 1)))?;
            let rows: Vec<String> = history.iter().map(format_epoch_record).collect();
            write_log(&log_path, "epoch,train_loss,val_acc1,val_acc3,val_macro_f1", &rows)?;
            last = Some(ckpt);
        }
        let last = match last {
            Some(c) => c,
            None => self.checkpoint(Stage::Finetune, start, &model, &adam, &[]),
        };
        Ok(FinetuneOutcome { best: best.unwrap_or_else(|| last.clone()), last, history })
    }

    /// Evaluate a checkpoint's weights on one split of this experiment's data.
    pub fn evaluate(&self, ckpt: &Checkpoint, split: SplitKind) -> Result<EvalReport> {
        let model = model_from_checkpoint(ckpt)?;
        if !same_architecture(&model.config, &self.config.model_config()) {
            return Err(StatError::ArchitectureMismatch("checkpoint and experiment configs differ".into()));
        }
        let data = self.data.split(split);
        evaluate(&model, &data.tokens, &data.labels)
    }

    /// Evaluate and write `eval_<split>.toml` and `confusion_<split>.csv`.
    pub fn write_evaluation(&self, ckpt: &Checkpoint, split: SplitKind, out: &Path) -> Result<EvalReport> {
        let report = self.evaluate(ckpt, split)?;
        fs::create_dir_all(out)?;
        fs::write(out.join(format!("eval_{}.toml", split.as_str())), report.to_toml())?;
        fs::write(out.join(format!("confusion_{}.csv", split.as_str())), report.confusion_csv())?;
        Ok(report)
    }
}

fn format_epoch_record(r: &EpochRecord) -> String {
    format!("{},{},{},{},{}", r.epoch, r.train_loss, r.val_acc1, r.val_acc3, r.val_macro_f1)
}

fn parse_epoch_record(row: &str) -> Option<EpochRecord> {
    let f: Vec<&str> = row.split(',').collect();
    if f.len() != 5 {
        return None;
    }
    Some(EpochRecord {
        epoch: f[0].parse().ok()?,
        train_loss: f[1].parse().ok()?,
        val_acc1: f[2].parse().ok()?,
        val_acc3: f[3].parse().ok()?,
        val_macro_f1: f[4].parse().ok()?,
    })
}

/// Rebuild the model a checkpoint was taken from.
pub fn model_from_checkpoint(ckpt: &Checkpoint) -> Result<StatModel> {
    let config = ckpt.config()?;
    let mut model = StatModel::new(config.model_config())?;
    let mut adam = Adam::new(AdamConfig::new(1e-3, 0.0), &model.params);
    restore(&mut model, &mut adam, ckpt)?;
    Ok(model)
}

pub fn run_pretrain(config: &ExperimentConfig, out: &Path, resume: Option<&Checkpoint>) -> Result<Checkpoint> {
    if !config.pretrain.enabled {
        return Err(StatError::PretrainingDisabled);
    }
    Experiment::new(config.clone())?.pretrain(out, resume)
}

pub fn run_finetune(
    config: &ExperimentConfig,
    out: &Path,
    init: Option<&Checkpoint>,
    resume: Option<&Checkpoint>,
) -> Result<FinetuneOutcome> {
    Experiment::new(config.clone())?.finetune(out, init, resume)
}

/// Evaluate a checkpoint on a split of the data its own config names.
pub fn run_eval(ckpt: &Checkpoint, split: SplitKind, out: &Path) -> Result<EvalReport> {
    let config = ckpt.config()?;
    Experiment::new(config)?.write_evaluation(ckpt, split, out)
}

/// One row of the ablation table.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub strategy: u8,
    pub use_temporal: bool,
    pub use_spatial: bool,
    pub temporal_task: bool,
    pub test: EvalReport,
    /// Test acc1 restricted to spatial-pair classes.
    pub spatial_family_acc1: f64,
    /// Test acc1 restricted to temporal-pair classes.
    pub temporal_family_acc1: f64,
    pub fingerprint: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, strategy: u8) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.strategy == strategy)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "strategy,temporal_embeddings,spatial_embeddings,temporal_task,acc1,acc3,macro_f1,spatial_family_acc1,temporal_family_acc1,fingerprint\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{}",
                r.strategy,
                r.use_temporal,
                r.use_spatial,
                r.temporal_task,
                r.test.acc1,
                r.test.acc3,
                r.test.macro_f1,
                r.spatial_family_acc1,
                r.temporal_family_acc1,
                r.fingerprint
            );
        }
        s
    }
}

/// The five module combinations: (id, temporal embeddings, spatial
/// embeddings, temporal pretraining task). Masked reconstruction, position
/// and tubelet embeddings are always on.
pub const ABLATION_STRATEGIES: [(u8, bool, bool, bool); 5] = [
    (1, true, false, false),
    (2, false, true, false),
    (3, true, true, false),
    (4, false, false, true),
    (5, true, true, true),
];

pub fn strategy_config(base: &ExperimentConfig, strategy: u8) -> Result<ExperimentConfig> {
    let &(_, te, se, tpt) = ABLATION_STRATEGIES
        .iter()
        .find(|s| s.0 == strategy)
        .ok_or_else(|| StatError::InvalidArgument(format!("unknown ablation strategy {strategy}")))?;
    let mut config = base.clone();
    config.model.use_temporal = te;
    config.model.use_spatial = se;
    config.pretrain.enabled = true;
    config.pretrain.temporal_task = tpt;
    Ok(config)
}

/// Pretrain, fine-tune and test every strategy on the same data and seed.
/// Each strategy works in `out/strategy_<id>`; the table goes to
/// `out/ablation.csv`.
pub fn run_ablation_suite(base: &ExperimentConfig, out: &Path) -> Result<AblationTable> {
    if !matches!(base.data, DataSource::Synthetic(_)) {
        return Err(StatError::config("data.source", "the ablation suite needs a synthetic data source"));
    }
    base.validate()?;
    let data = Arc::new(PreparedData::load(base)?);
    run_ablation_with_data(base, data, out)
}

pub fn run_ablation_with_data(base: &ExperimentConfig, data: Arc<PreparedData>, out: &Path) -> Result<AblationTable> {
    let spatial = data.family_classes(ClassFamily::Spatial);
    let temporal = data.family_classes(ClassFamily::Temporal);
    let mut rows = Vec::with_capacity(ABLATION_STRATEGIES.len());
    for &(id, te, se, tpt) in &ABLATION_STRATEGIES {
        let exp = Experiment::with_data(strategy_config(base, id)?, Arc::clone(&data))?;
        let dir = out.join(format!("strategy_{id}"));
        let pretrained = exp.pretrain(&dir, None)?;
        let outcome = exp.finetune(&dir, Some(&pretrained), None)?;
        let test = exp.write_evaluation(&outcome.best, SplitKind::Test, &dir)?;
        rows.push(AblationRow {
            strategy: id,
            use_temporal: te,
            use_spatial: se,
            temporal_task: tpt,
            spatial_family_acc1: test.accuracy_over(&spatial),
            temporal_family_acc1: test.accuracy_over(&temporal),
            test,
            fingerprint: data.fingerprint.clone(),
        });
    }
    let table = AblationTable { rows };
    fs::create_dir_all(out)?;
    fs::write(out.join(ABLATION_TABLE), table.to_csv())?;
    Ok(table)
}

/// Finite-difference check of both training objectives on the first
/// training sample, with dropout off and a fixed mask plan and pair batch.
#[derive(Clone, Debug)]
pub struct GradCheckSuite {
    pub pretrain: GradCheckReport,
    pub finetune: GradCheckReport,
}

impl GradCheckSuite {
    pub fn passed(&self) -> bool {
        self.pretrain.passed() && self.finetune.passed()
    }
}

pub fn gradient_suite(
    model: &StatModel,
    tokens: &TokenSequence,
    label: usize,
    settings: &PretrainSettings,
    options: GradCheckOptions,
    seed: u64,
) -> Result<GradCheckSuite> {
    let mut rng = rng::stream(seed, &[tag::SAMPLE]);
    let plan = plan_spatial_mask(&model.grid, settings.mask_ratio, &mut rng)?;
    let pairs =
        if settings.temporal_task { Some(sample_pairs(&model.grid, &plan, settings.n_comp, &mut rng)?) } else { None };
    let pretrain = gradient_check(
        &model.params,
        |store| {
            let (l, g) = model.pretrain_objective_with(store, tokens, &plan, pairs.as_ref(), settings.beta, None)?;
            Ok((l.total, g))
        },
        options,
    )?;
    let finetune =
        gradient_check(&model.params, |store| model.finetune_objective_with(store, tokens, label, None), options)?;
    Ok(GradCheckSuite { pretrain, finetune })
}

/// Gradient check for a config's model; writes `gradcheck_pretrain.csv` and
/// `gradcheck_finetune.csv`.
pub fn run_gradcheck(config: &ExperimentConfig, out: &Path, options: GradCheckOptions) -> Result<GradCheckSuite> {
    let exp = Experiment::new(config.clone())?;
    let model = exp.build_model()?;
    let train = &exp.data.train;
    let tokens = train.tokens.first().ok_or(StatError::EmptySplit)?;
    let p = &config.pretrain;
    let settings = PretrainSettings {
        mask_ratio: p.mask_ratio,
        beta: p.beta,
        n_comp: p.n_comp,
        temporal_task: p.temporal_task,
        dropout: false,
    };
    let suite = gradient_suite(&model, tokens, train.labels[0], &settings, options, config.seed)?;
    fs::create_dir_all(out)?;
    fs::write(out.join("gradcheck_pretrain.csv"), suite.pretrain.to_string())?;
    fs::write(out.join("gradcheck_finetune.csv"), suite.finetune.to_string())?;
    Ok(suite)
}

/// Write the config's synthetic dataset to `out` with a `manifest.csv`.
pub fn run_synth(config: &ExperimentConfig, out: &Path) -> Result<Manifest> {
    let DataSource::Synthetic(spec) = &config.data else {
        return Err(StatError::config("data.source", "synth needs a synthetic data source"));
    };
    spec.validate().map_err(|e| StatError::config("data", e.to_string()))?;
    let split = generate_synthetic(spec)?;
    write_dataset(out, &split)
}
