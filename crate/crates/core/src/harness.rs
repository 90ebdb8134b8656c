//! Experiment orchestration: configuration, data generation, the training
//! loop, evaluation, verification runs and the paired transition ablation.

use std::fs::{self, File};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::atm::{argmax, predict_label, EmbeddingQueue, PrototypeBank, PseudoLabelStore};
use crate::candidate::CandidateSet;
use crate::data::{self, GaussianMixtureSpec};
use crate::error::{Error, Result};
use crate::labelgen::{audit_generation, generate_adversary_aware, generate_standard, CleanDataset, GenerationMode, GenerationReport, PllDataset};
use crate::losses::{combined_loss, ContrastiveInputs, LossBreakdown, Temperature};
use crate::nn::{augment, Architecture, AugmentationSpec, KeyEncoder, NetworkParams, OptimizerState, TensorReader, View};
use crate::rng;
use crate::transition::{matrix_to_text, AdversaryAwareMatrix, FlipProfile, RivalMatrix};
use crate::verify::{self, ConsistencyReport, VerifyLevel};

pub const TRAIN_CLEAN: &str = "train_clean.csv";
pub const TRAIN_PLL: &str = "train_pll.csv";
pub const TEST_CLEAN: &str = "test_clean.csv";
pub const GENERATION_REPORT: &str = "generation_report.txt";
pub const METRICS: &str = "metrics.csv";
pub const TIMING: &str = "timing.csv";
pub const CHECKPOINT: &str = "checkpoint.txt";

/// Partial-rate grids by benchmark. The hardest CIFAR-100 rate circulates
/// as both 0.01 and 0.03, so both are kept.
pub const RATE_PRESETS: &[(&str, &[f64])] = &[
    ("cifar10", &[0.1, 0.3, 0.5]),
    ("cifar100", &[0.03, 0.05, 0.1]),
    ("cifar100-alt", &[0.01, 0.05, 0.1]),
    ("cub200", &[0.03, 0.05, 0.1]),
];

pub fn rate_preset(name: &str) -> Option<&'static [f64]> {
    RATE_PRESETS.iter().find(|(n, _)| *n == name).map(|(_, r)| *r)
}

/// Every knob of an experiment. Missing keys in a config file take the
/// defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub classes: usize,
    /// Mixture dimension (ignored when `train_csv` is set).
    pub dim: usize,
    pub separation: f64,
    pub train_size: usize,
    pub test_size: usize,
    /// External clean training data; replaces the synthetic mixture.
    pub train_csv: Option<PathBuf>,
    pub test_csv: Option<PathBuf>,

    pub mode: GenerationMode,
    pub q: f64,
    pub perturbation: f64,
    pub rival_support: usize,
    pub rival_weight: f64,
    pub rival_path: Option<PathBuf>,
    /// Train with `M = T̄ + I`; `false` uses `M = I` even on adversary-aware data.
    pub use_transition: bool,

    pub encoder_widths: Vec<usize>,
    pub projection_hidden: usize,
    pub embedding_dim: usize,
    pub noise_std: f64,
    pub mask_prob: f64,

    pub alpha: f64,
    pub beta: f64,
    pub phi: f64,
    pub lambda: f64,
    pub tau: f64,
    pub ema: f64,
    /// Defaults to `min(8192, n / 2)`.
    pub queue_capacity: Option<usize>,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Defaults to a tenth of `epochs`.
    pub warmup_epochs: Option<usize>,

    pub seed: u64,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            classes: 10,
            dim: 16,
            separation: 3.0,
            train_size: 5000,
            test_size: 1000,
            train_csv: None,
            test_csv: None,
            mode: GenerationMode::AdversaryAware,
            q: 0.3,
            perturbation: FlipProfile::DEFAULT_PERTURBATION,
            rival_support: 5,
            rival_weight: 0.2,
            rival_path: None,
            use_transition: true,
            encoder_widths: vec![64, 64],
            projection_hidden: 64,
            embedding_dim: 128,
            noise_std: 0.1,
            mask_prob: 0.1,
            alpha: 0.1,
            beta: 0.01,
            phi: 0.99,
            lambda: 0.5,
            tau: 0.07,
            ema: 0.999,
            queue_capacity: None,
            batch_size: 256,
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 1e-3,
            epochs: 300,
            warmup_epochs: None,
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
        }
    }
}

fn in_range(name: &'static str, v: f64, lo: f64, hi: f64) -> Result<()> {
    if !(lo..=hi).contains(&v) {
        return Err(Error::arg(name, format!("{v} is outside [{lo}, {hi}]")));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 3 && self.mode == GenerationMode::AdversaryAware {
            return Err(Error::arg("classes", "adversary-aware data needs at least 3 classes"));
        }
        if self.classes < 2 {
            return Err(Error::arg("classes", "need at least 2 classes"));
        }
        for (name, v) in [("dim", self.dim), ("train_size", self.train_size), ("test_size", self.test_size), ("batch_size", self.batch_size), ("epochs", self.epochs)] {
            if v == 0 {
                return Err(Error::arg(name, "must be positive"));
            }
        }
        FlipProfile::new(self.q, self.perturbation)?;
        in_range("alpha", self.alpha, f64::MIN_POSITIVE, 1.0 - f64::EPSILON)?;
        in_range("beta", self.beta, 0.0, f64::MAX)?;
        in_range("phi", self.phi, 0.0, 1.0)?;
        in_range("lambda", self.lambda, 0.0, f64::MAX)?;
        Temperature::new(self.tau)?;
        in_range("ema", self.ema, 0.0, 1.0)?;
        in_range("lr", self.lr, f64::MIN_POSITIVE, f64::MAX)?;
        in_range("momentum", self.momentum, 0.0, 1.0 - f64::EPSILON)?;
        in_range("weight_decay", self.weight_decay, 0.0, f64::MAX)?;
        if let Some(w) = self.warmup_epochs {
            if w > self.epochs {
                return Err(Error::arg("warmup_epochs", format!("{w} exceeds {} epochs", self.epochs)));
            }
        }
        if self.queue_capacity == Some(0) {
            return Err(Error::arg("queue_capacity", "must be positive"));
        }
        AugmentationSpec {
            noise_std: self.noise_std,
            mask_prob: self.mask_prob,
        }
        .validate()?;
        self.architecture(self.dim).validate()?;
        Ok(())
    }

    pub fn to_text(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn architecture(&self, input_dim: usize) -> Architecture {
        Architecture {
            input_dim,
            encoder_widths: self.encoder_widths.clone(),
            projection_hidden: self.projection_hidden,
            embedding_dim: self.embedding_dim,
            classes: self.classes,
        }
    }

    pub fn warmup(&self) -> usize {
        self.warmup_epochs.unwrap_or(self.epochs / 10)
    }

    pub fn queue_size(&self, n: usize) -> usize {
        self.queue_capacity.unwrap_or_else(|| (n / 2).clamp(1, 8192))
    }

    pub fn flip_profile(&self) -> Result<FlipProfile> {
        FlipProfile::new(self.q, self.perturbation)
    }

    pub fn rival(&self) -> Result<RivalMatrix> {
        let rival = match &self.rival_path {
            Some(path) => RivalMatrix::load(path)?,
            None => RivalMatrix::build(self.classes, self.rival_support, self.rival_weight)?,
        };
        if rival.classes() != self.classes {
            return Err(Error::DimensionMismatch {
                expected: format!("{0}x{0} rival matrix", self.classes),
                actual: format!("{0}x{0}", rival.classes()),
            });
        }
        Ok(rival)
    }

    /// The correction matrix used by the classification loss.
    pub fn correction(&self) -> Result<AdversaryAwareMatrix> {
        if self.use_transition && self.mode == GenerationMode::AdversaryAware {
            Ok(self.rival()?.adversary_aware())
        } else {
            Ok(AdversaryAwareMatrix::identity(self.classes))
        }
    }

    pub fn mixture(&self) -> Result<GaussianMixtureSpec> {
        GaussianMixtureSpec::benchmark(self.classes, self.dim, self.separation, self.seed)
    }
}

/// Training and held-out data of one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentData {
    pub train: PllDataset,
    pub test: CleanDataset,
}

/// Builds the clean data (mixture draws or CSV files) and corrupts the
/// training split according to the configured mode.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<ExperimentData> {
    cfg.validate()?;
    let (clean, test) = match (&cfg.train_csv, &cfg.test_csv) {
        (Some(train), Some(test)) => (data::load_csv(train, cfg.classes)?, data::load_csv(test, cfg.classes)?),
        (None, None) => {
            let spec = cfg.mixture()?;
            (spec.sample(cfg.train_size, 0)?, spec.sample(cfg.test_size, 1)?)
        }
        _ => return Err(Error::Config("train_csv and test_csv must be given together".into())),
    };
    let profile = cfg.flip_profile()?;
    let train = match cfg.mode {
        GenerationMode::Standard => generate_standard(&clean, &profile, cfg.seed)?,
        GenerationMode::AdversaryAware => generate_adversary_aware(&clean, &cfg.rival()?, &profile, cfg.seed)?,
    };
    Ok(ExperimentData { train, test })
}

fn report_text(report: &GenerationReport, mode: GenerationMode, n: usize) -> String {
    let mut out = format!(
        "mode={}\ninstances={n}\nmean_cardinality={:?}\nfull_sets={}\nambiguity_ok={}\nclass_counts={}\ninclusion\n{}",
        match mode {
            GenerationMode::Standard => "standard",
            GenerationMode::AdversaryAware => "adversary_aware",
        },
        report.mean_cardinality,
        report.full_sets,
        report.ambiguity_ok,
        report.class_counts.iter().map(ToString::to_string).collect::<Vec<_>>().join(","),
        matrix_to_text(report.inclusion.view()),
    );
    if let Some(rf) = &report.rival_frequency {
        out.push_str("rival_frequency\n");
        out.push_str(&matrix_to_text(rf.view()));
    }
    out
}

/// Writes the clean and corrupted training CSVs, the clean test CSV and the
/// generation audit into the output directory.
pub fn cmd_generate(cfg: &ExperimentConfig) -> Result<GenerationReport> {
    let data = prepare_data(cfg)?;
    let report = audit_generation(&data.train)?;
    fs::create_dir_all(&cfg.output_dir)?;
    data::save_csv(data.train.clean(), &cfg.output_dir.join(TRAIN_CLEAN))?;
    data.train.save_csv(&cfg.output_dir.join(TRAIN_PLL))?;
    data::save_csv(&data.test, &cfg.output_dir.join(TEST_CLEAN))?;
    fs::write(cfg.output_dir.join(GENERATION_REPORT), report_text(&report, data.train.mode(), data.train.len()))?;
    if !report.ambiguity_ok {
        return Err(Error::Ambiguity {
            max_rate: report.inclusion.iter().copied().fold(0.0, f64::max),
        });
    }
    Ok(report)
}

/// Reads what [`cmd_generate`] wrote.
pub fn load_generated(cfg: &ExperimentConfig) -> Result<ExperimentData> {
    let pll = cfg.output_dir.join(TRAIN_PLL);
    if !pll.exists() {
        return Err(Error::Config(format!("{} not found; run `generate` first", pll.display())));
    }
    Ok(ExperimentData {
        train: PllDataset::load_csv(&pll, cfg.classes)?,
        test: data::load_csv(&cfg.output_dir.join(TEST_CLEAN), cfg.classes)?,
    })
}

/// One line of the metrics CSV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub cls_loss: f64,
    pub con_loss: f64,
    pub combined: f64,
    pub skipped_queries: usize,
    pub test_acc: f64,
    pub prototype_acc: f64,
    /// Reported in the timing file only, so metrics stay reproducible.
    pub seconds: f64,
}

impl MetricsRow {
    pub const HEADER: &'static str = "epoch,cls_loss,con_loss,combined,skipped_queries,test_acc,prototype_acc";

    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{:?},{:?},{:?},{},{:?},{:?}",
            self.epoch, self.cls_loss, self.con_loss, self.combined, self.skipped_queries, self.test_acc, self.prototype_acc
        )
    }
}

/// Appends metrics and timing rows, flushing after each epoch.
pub struct MetricsWriter {
    metrics: File,
    timing: File,
}

impl MetricsWriter {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let mut metrics = File::create(dir.join(METRICS))?;
        writeln!(metrics, "{}", MetricsRow::HEADER)?;
        let mut timing = File::create(dir.join(TIMING))?;
        writeln!(timing, "epoch,seconds")?;
        metrics.flush()?;
        timing.flush()?;
        Ok(MetricsWriter { metrics, timing })
    }

    pub fn append(&mut self, row: &MetricsRow) -> Result<()> {
        writeln!(self.metrics, "{}", row.to_csv_line())?;
        writeln!(self.timing, "{},{:.6}", row.epoch, row.seconds)?;
        self.metrics.flush()?;
        self.timing.flush()?;
        Ok(())
    }
}

/// Network, prototypes and pseudo labels after some epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub epoch: usize,
    pub params: NetworkParams,
    pub bank: PrototypeBank,
    pub pseudo_labels: PseudoLabelStore,
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let mut out = format!("checkpoint epoch={} phi={:?}\n", self.epoch, self.pseudo_labels.momentum);
        out.push_str(&self.params.to_text());
        crate::nn::write_tensor(&mut out, "prototypes", self.bank.prototypes());
        crate::nn::write_tensor(&mut out, "pseudo_labels", self.pseudo_labels.targets());
        out
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let mut reader = TensorReader::new(text, path);
        let (line, header) = reader.next_line().ok_or_else(|| Error::parse(path, 1, "empty checkpoint"))?;
        let mut epoch = None;
        let mut phi = None;
        for field in header.split_whitespace().skip(1) {
            match field.split_once('=') {
                Some(("epoch", v)) => epoch = v.parse::<usize>().ok(),
                Some(("phi", v)) => phi = v.parse::<f64>().ok(),
                _ => {}
            }
        }
        let (Some(epoch), Some(phi)) = (epoch, phi) else {
            return Err(Error::parse(path, line, "expected `checkpoint epoch=<n> phi=<x>`"));
        };
        let params = NetworkParams::read(&mut reader, path)?;
        let arch = params.architecture().clone();
        let prototypes = reader.tensor("prototypes", arch.classes, arch.embedding_dim)?;
        let rows = reader.peek_rows("pseudo_labels")?;
        let targets = reader.tensor("pseudo_labels", rows, arch.classes)?;
        Ok(Checkpoint {
            epoch,
            params,
            bank: PrototypeBank::from_prototypes(prototypes)?,
            pseudo_labels: PseudoLabelStore::from_targets(targets, phi)?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?, path)
    }
}

/// Fraction of rows whose argmax matches `labels`.
pub fn top1_accuracy(params: &NetworkParams, ds: &CleanDataset) -> Result<f64> {
    let cache = params.forward_batch(ds.features())?;
    let hits = cache
        .probs
        .outer_iter()
        .zip(ds.labels())
        .filter(|(p, &y)| argmax(p.view()) == y)
        .count();
    Ok(hits as f64 / ds.len() as f64)
}

/// Restricted prototype argmax of clean-input embeddings against the hidden
/// true labels.
pub fn prototype_accuracy(params: &NetworkParams, bank: &PrototypeBank, ds: &PllDataset) -> Result<f64> {
    let cache = params.forward_batch(ds.clean().features())?;
    Ok(bank.accuracy(cache.unit.view(), ds.candidates(), ds.clean().labels()))
}

/// Result of a completed run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingOutcome {
    pub rows: Vec<MetricsRow>,
    pub checkpoint: Checkpoint,
}

impl TrainingOutcome {
    pub fn final_accuracy(&self) -> f64 {
        self.rows.last().map_or(f64::NAN, |r| r.test_acc)
    }
}

/// State of the training loop.
pub struct Trainer {
    cfg: ExperimentConfig,
    data: ExperimentData,
    params: NetworkParams,
    key: KeyEncoder,
    optimizer: OptimizerState,
    bank: PrototypeBank,
    pseudo_labels: PseudoLabelStore,
    queue: EmbeddingQueue,
    correction: AdversaryAwareMatrix,
    augmentation: AugmentationSpec,
    tau: Temperature,
    step: u64,
    last_finite: Option<usize>,
}

impl Trainer {
    pub fn new(cfg: &ExperimentConfig, data: ExperimentData) -> Result<Self> {
        cfg.validate()?;
        if data.train.classes() != cfg.classes || data.test.classes() != cfg.classes {
            return Err(Error::DimensionMismatch {
                expected: format!("{} classes", cfg.classes),
                actual: format!("{} and {}", data.train.classes(), data.test.classes()),
            });
        }
        let arch = cfg.architecture(data.train.clean().dim());
        let params = NetworkParams::init(&arch, cfg.seed)?;
        let optimizer = OptimizerState::new(&params, cfg.lr, cfg.momentum, cfg.weight_decay, cfg.epochs);
        Ok(Trainer {
            key: KeyEncoder::from_query(&params),
            bank: PrototypeBank::random(cfg.classes, cfg.embedding_dim, cfg.seed)?,
            pseudo_labels: PseudoLabelStore::candidate_uniform(data.train.candidates(), cfg.classes, cfg.phi)?,
            queue: EmbeddingQueue::new(cfg.queue_size(data.train.len())),
            correction: cfg.correction()?,
            augmentation: AugmentationSpec {
                noise_std: cfg.noise_std,
                mask_prob: cfg.mask_prob,
            },
            tau: Temperature::new(cfg.tau)?,
            cfg: cfg.clone(),
            data,
            params,
            optimizer,
            step: 0,
            last_finite: None,
        })
    }

    pub fn params(&self) -> &NetworkParams {
        &self.params
    }

    pub fn bank(&self) -> &PrototypeBank {
        &self.bank
    }

    pub fn queue(&self) -> &EmbeddingQueue {
        &self.queue
    }

    pub fn pseudo_labels(&self) -> &PseudoLabelStore {
        &self.pseudo_labels
    }

    fn views(&self, batch: &[usize]) -> (Array2<f64>, Array2<f64>) {
        let d = self.data.train.clean().dim();
        let mut q = Array2::zeros((batch.len(), d));
        let mut k = Array2::zeros((batch.len(), d));
        for (row, &i) in batch.iter().enumerate() {
            let x = self.data.train.clean().feature(i);
            q.row_mut(row).assign(&augment(x, &self.augmentation, self.cfg.seed, View::Query, self.step, i as u64));
            k.row_mut(row).assign(&augment(x, &self.augmentation, self.cfg.seed, View::Key, self.step, i as u64));
        }
        (q, k)
    }

    fn train_batch(&mut self, batch: &[usize], epoch: usize) -> Result<LossBreakdown> {
        let warm = epoch < self.cfg.warmup();
        let (xq, xk) = self.views(batch);
        let cache = self.params.forward_batch(xq.view())?;
        let keys = self.key.params.forward_batch(xk.view())?.unit;
        let finite = |a: &Array2<f64>| a.iter().all(|v| v.is_finite());
        if !finite(&cache.logits) || !finite(&cache.unit) || !finite(&keys) {
            return Err(Error::Diverged {
                epoch,
                last_finite: self.last_finite,
            });
        }
        let sets: Vec<CandidateSet> = batch.iter().map(|&i| self.data.train.candidates()[i]).collect();

        let mut predictions = Vec::with_capacity(batch.len());
        for (row, set) in sets.iter().enumerate() {
            predictions.push(predict_label(cache.probs.row(row), *set)?);
        }
        for (row, &label) in predictions.iter().enumerate() {
            self.bank.update(cache.unit.row(row), label, self.cfg.alpha, self.cfg.beta)?;
        }
        for (row, (&i, set)) in batch.iter().zip(&sets).enumerate() {
            self.pseudo_labels.update(i, cache.unit.row(row), &self.bank, *set)?;
        }
        let targets = self.pseudo_labels.targets().select(Axis(0), batch);

        let queue_labels = self.queue.labels();
        let queue = self.queue.embeddings(self.cfg.embedding_dim);
        let inputs = ContrastiveInputs {
            queries: cache.unit.view(),
            keys: keys.view(),
            queue: queue.view(),
            predictions: &predictions,
            queue_labels: &queue_labels,
        };
        let lambda = if warm { 0.0 } else { self.cfg.lambda };
        let (breakdown, grads) = combined_loss(
            cache.logits.view(),
            targets.view(),
            &self.correction,
            (!warm).then_some(&inputs),
            lambda,
            self.tau,
        )?;
        if !breakdown.combined.is_finite() {
            return Err(Error::Diverged {
                epoch,
                last_finite: self.last_finite,
            });
        }
        let d_unit = grads
            .d_unit
            .unwrap_or_else(|| Array2::zeros((batch.len(), self.cfg.embedding_dim)));
        let g = self.params.backward(&cache, grads.d_logits.view(), d_unit.view())?;
        self.optimizer.step(&mut self.params, &g, epoch)?;
        self.key.ema_update(&self.params, self.cfg.ema)?;
        if !warm {
            self.queue.push(keys.view(), &predictions)?;
        }
        self.step += 1;
        Ok(breakdown)
    }

    /// One pass over the training data in the epoch's shuffled order.
    pub fn run_epoch(&mut self, epoch: usize) -> Result<MetricsRow> {
        let start = Instant::now();
        let n = self.data.train.len();
        let order = rng::epoch_order(n, self.cfg.seed, epoch as u64);
        let mut cls = 0.0;
        let mut con = 0.0;
        let mut skipped = 0;
        for batch in order.chunks(self.cfg.batch_size) {
            let b = self.train_batch(batch, epoch)?;
            let w = batch.len() as f64 / n as f64;
            cls += w * b.classification;
            con += w * b.contrastive;
            skipped += b.skipped_queries;
        }
        if !self.params.is_finite() || !cls.is_finite() || !con.is_finite() {
            return Err(Error::Diverged {
                epoch,
                last_finite: self.last_finite,
            });
        }
        self.last_finite = Some(epoch);
        let lambda = if epoch < self.cfg.warmup() { 0.0 } else { self.cfg.lambda };
        Ok(MetricsRow {
            epoch,
            cls_loss: cls,
            con_loss: con,
            combined: lambda * con + cls,
            skipped_queries: skipped,
            test_acc: top1_accuracy(&self.params, &self.data.test)?,
            prototype_acc: prototype_accuracy(&self.params, &self.bank, &self.data.train)?,
            seconds: start.elapsed().as_secs_f64(),
        })
    }

    pub fn checkpoint(&self, epoch: usize) -> Checkpoint {
        Checkpoint {
            epoch,
            params: self.params.clone(),
            bank: self.bank.clone(),
            pseudo_labels: self.pseudo_labels.clone(),
        }
    }

    /// Runs every epoch, streaming rows to `sink` when given.
    pub fn train(mut self, mut sink: Option<&mut MetricsWriter>) -> Result<TrainingOutcome> {
        let mut rows = Vec::with_capacity(self.cfg.epochs);
        for epoch in 0..self.cfg.epochs {
            let row = self.run_epoch(epoch)?;
            if let Some(w) = sink.as_deref_mut() {
                w.append(&row)?;
            }
            rows.push(row);
        }
        let checkpoint = self.checkpoint(self.cfg.epochs.saturating_sub(1));
        Ok(TrainingOutcome { rows, checkpoint })
    }
}

/// Trains on the generated files, writing metrics, timing, the resolved
/// config and the final checkpoint into the output directory.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<TrainingOutcome> {
    let data = load_generated(cfg)?;
    let mut writer = MetricsWriter::create(&cfg.output_dir)?;
    fs::write(cfg.output_dir.join("config.toml"), cfg.to_text()?)?;
    let outcome = Trainer::new(cfg, data)?.train(Some(&mut writer))?;
    outcome.checkpoint.save(&cfg.output_dir.join(CHECKPOINT))?;
    Ok(outcome)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub instances: usize,
    pub top1: f64,
    /// Needs candidate sets, so only for partial-label files.
    pub prototype_acc: Option<f64>,
}

/// Scores a checkpoint on a clean or partial-label CSV.
pub fn cmd_eval(checkpoint: &Path, dataset: &Path) -> Result<EvalReport> {
    let ck = Checkpoint::load(checkpoint)?;
    let arch = ck.params.architecture().clone();
    let header = fs::read_to_string(dataset)?.lines().next().unwrap_or_default().to_string();
    let (clean, pll) = if header.split(',').any(|h| h == "candidate_mask") {
        let pll = PllDataset::load_csv(dataset, arch.classes)?;
        (pll.clean().clone(), Some(pll))
    } else {
        (data::load_csv(dataset, arch.classes)?, None)
    };
    if clean.dim() != arch.input_dim {
        return Err(Error::Architecture(format!(
            "{} has {} features, checkpoint expects {}",
            dataset.display(),
            clean.dim(),
            arch.input_dim
        )));
    }
    Ok(EvalReport {
        instances: clean.len(),
        top1: top1_accuracy(&ck.params, &clean)?,
        prototype_acc: pll.map(|p| prototype_accuracy(&ck.params, &ck.bank, &p)).transpose()?,
    })
}

/// Runs the verification suites, writing `verify.csv` and
/// `recovery_sweep.csv` into `out`.
pub fn cmd_verify(level: VerifyLevel, seed: u64, out: &Path) -> Result<Vec<ConsistencyReport>> {
    let (reports, sweep) = verify::run_suites(level, seed)?;
    fs::create_dir_all(out)?;
    verify::write_reports_csv(&reports, &out.join("verify.csv"))?;
    verify::write_sweep_csv(&sweep, &out.join("recovery_sweep.csv"))?;
    Ok(reports)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AblationRow {
    pub seed: u64,
    pub with_transition: f64,
    pub without_transition: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    fn median(mut v: Vec<f64>) -> f64 {
        v.sort_by(f64::total_cmp);
        let k = v.len();
        match k {
            0 => f64::NAN,
            _ if k % 2 == 1 => v[k / 2],
            _ => 0.5 * (v[k / 2 - 1] + v[k / 2]),
        }
    }

    pub fn median_with(&self) -> f64 {
        Self::median(self.rows.iter().map(|r| r.with_transition).collect())
    }

    pub fn median_without(&self) -> f64 {
        Self::median(self.rows.iter().map(|r| r.without_transition).collect())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["seed", "with_transition", "without_transition"])?;
        for r in &self.rows {
            w.write_record([r.seed.to_string(), format!("{:?}", r.with_transition), format!("{:?}", r.without_transition)])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Paired runs per seed: both arms share the generated data and the
/// initialization, and differ only in the correction matrix.
pub fn cmd_ablate(cfg: &ExperimentConfig, seeds: &[u64]) -> Result<AblationReport> {
    if cfg.mode != GenerationMode::AdversaryAware {
        return Err(Error::Config("the ablation needs adversary-aware data".into()));
    }
    let mut rows = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut run = cfg.clone();
        run.seed = seed;
        let data = prepare_data(&run)?;
        run.use_transition = true;
        let with = Trainer::new(&run, data.clone())?.train(None)?.final_accuracy();
        run.use_transition = false;
        let without = Trainer::new(&run, data)?.train(None)?.final_accuracy();
        rows.push(AblationRow {
            seed,
            with_transition: with,
            without_transition: without,
        });
    }
    let report = AblationReport { rows };
    fs::create_dir_all(&cfg.output_dir)?;
    report.write_csv(&cfg.output_dir.join("ablation.csv"))?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(dir: &Path) -> ExperimentConfig {
        ExperimentConfig {
            classes: 4,
            dim: 4,
            train_size: 120,
            test_size: 60,
            q: 0.2,
            rival_support: 2,
            rival_weight: 0.5,
            encoder_widths: vec![16],
            projection_hidden: 8,
            embedding_dim: 8,
            batch_size: 32,
            lr: 0.05,
            epochs: 4,
            warmup_epochs: Some(1),
            output_dir: dir.to_path_buf(),
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn config_roundtrips_and_validates() {
        let cfg = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::from_text(&cfg.to_text().unwrap()).unwrap(), cfg);
        let partial = ExperimentConfig::from_text("classes = 5\nrival_support = 4\nrival_weight = 0.25\n").unwrap();
        assert_eq!(partial.classes, 5);
        assert_eq!(partial.alpha, 0.1);
        assert!(ExperimentConfig::from_text("alpha = 1.5").is_err());
        assert!(ExperimentConfig::from_text("bogus = 1").is_err());
        assert!(ExperimentConfig::from_text("tau = 0.0").is_err());
    }

    #[test]
    fn both_hard_cifar100_rates_are_available() {
        assert_eq!(rate_preset("cifar100").unwrap()[0], 0.03);
        assert_eq!(rate_preset("cifar100-alt").unwrap()[0], 0.01);
        assert!(rate_preset("imagenet").is_none());
    }

    #[test]
    fn derived_defaults() {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.warmup(), 30);
        assert_eq!(cfg.queue_size(5000), 2500);
        assert_eq!(cfg.queue_size(100_000), 8192);
    }

    #[test]
    fn warmup_rows_have_no_contrastive_term_and_queue_stays_empty() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(dir.path());
        let data = prepare_data(&cfg).unwrap();
        let mut trainer = Trainer::new(&cfg, data).unwrap();
        let row = trainer.run_epoch(0).unwrap();
        assert_eq!(row.con_loss, 0.0);
        assert_eq!(row.combined, row.cls_loss);
        assert!(trainer.queue().is_empty());
        let row = trainer.run_epoch(1).unwrap();
        assert!(row.con_loss > 0.0);
        assert!(!trainer.queue().is_empty());
        assert!((row.combined - (0.5 * row.con_loss + row.cls_loss)).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(dir.path());
        let outcome = Trainer::new(&cfg, prepare_data(&cfg).unwrap()).unwrap().train(None).unwrap();
        let path = dir.path().join("ck.txt");
        outcome.checkpoint.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), outcome.checkpoint);
        let text = fs::read_to_string(&path).unwrap().replace("prototypes,4,8", "prototypes,4,7");
        fs::write(&path, text).unwrap();
        assert!(Checkpoint::load(&path).is_err());
    }

    #[test]
    fn ablation_requires_adversary_data() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny(dir.path());
        cfg.mode = GenerationMode::Standard;
        assert!(cmd_ablate(&cfg, &[0]).is_err());
    }
}
