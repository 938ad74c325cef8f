//! Training runs and the repeated cross-validation protocol.
//!
//! Run `r` of an experiment trains on every fold except `r mod folds` and
//! tests on that fold. Its seed depends only on the master seed, the dataset
//! and `r`, so every loss variant sees the same initial weights and the same
//! mini-batch order for a given run.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{decode_labels, Dataset, FoldPlan, Standardizer};
use crate::error::{Error, Result};
use crate::loss::{self, CeForm, LossNorms, LossVariant, MixWeights, ScheduleState};
use crate::nn::{ArchSpec, Network};
use crate::optim::AdamState;

pub const DEFAULT_EPOCHS: usize = 100;
pub const DEFAULT_RUNS: usize = 30;
pub const DEFAULT_FOLDS: usize = 10;
pub const DEFAULT_WARMUP: usize = 20;
pub const DEFAULT_PATIENCE: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: String,
    pub arch: ArchSpec,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub runs: usize,
    pub folds: usize,
    pub variants: Vec<LossVariant>,
    pub master_seed: u64,
    pub warmup_epochs: usize,
    pub patience: usize,
    /// Worker threads for independent runs. Results do not depend on it.
    pub jobs: usize,
}

impl ExperimentConfig {
    pub fn new(dataset: impl Into<String>, arch: ArchSpec, learning_rate: f64, batch_size: usize) -> Self {
        ExperimentConfig {
            dataset: dataset.into(),
            arch,
            learning_rate,
            batch_size,
            epochs: DEFAULT_EPOCHS,
            runs: DEFAULT_RUNS,
            folds: DEFAULT_FOLDS,
            variants: LossVariant::ALL.to_vec(),
            master_seed: 0,
            warmup_epochs: DEFAULT_WARMUP,
            patience: DEFAULT_PATIENCE,
            jobs: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        if self.runs == 0 {
            return Err(Error::Config("runs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.folds < 2 {
            return Err(Error::Config("at least two folds are needed".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        for v in &self.variants {
            self.check_variant(*v)?;
        }
        Ok(())
    }

    fn check_variant(&self, variant: LossVariant) -> Result<()> {
        if variant.is_reactive() && self.epochs < self.warmup_epochs + self.patience {
            return Err(Error::Config(format!(
                "{variant} needs at least warmup + patience = {} epochs, got {}",
                self.warmup_epochs + self.patience,
                self.epochs
            )));
        }
        Ok(())
    }
}

/// Watches epoch-end accuracy and signals when it stops improving.
///
/// Epochs before `warmup_epochs` are ignored. The first observed epoch sets
/// the baseline; afterwards every epoch that does not strictly beat the best
/// accuracy so far counts towards `patience`.
#[derive(Clone, Debug, PartialEq)]
pub struct StagnationDetector {
    pub warmup_epochs: usize,
    pub patience: usize,
    pub best_accuracy: Option<f64>,
    pub epochs_without_improvement: usize,
}

impl StagnationDetector {
    pub fn new(warmup_epochs: usize, patience: usize) -> Self {
        StagnationDetector {
            warmup_epochs,
            patience,
            best_accuracy: None,
            epochs_without_improvement: 0,
        }
    }

    /// Feeds the accuracy at the end of `epoch` (0-based). Returns `true` once stagnation is detected.
    pub fn observe(&mut self, epoch: usize, accuracy: f64) -> bool {
        if epoch < self.warmup_epochs {
            return false;
        }
        match self.best_accuracy {
            Some(best) if accuracy <= best => self.epochs_without_improvement += 1,
            _ => {
                self.best_accuracy = Some(accuracy);
                self.epochs_without_improvement = 0;
            }
        }
        self.epochs_without_improvement >= self.patience
    }
}

/// Epoch at which a reactive schedule fires for a given accuracy trace, if any.
pub fn switch_epoch_for_trace(accuracies: &[f64], warmup_epochs: usize, patience: usize) -> Option<usize> {
    let mut detector = StagnationDetector::new(warmup_epochs, patience);
    accuracies
        .iter()
        .enumerate()
        .find_map(|(e, &a)| detector.observe(e, a).then_some(e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "lowercase")]
pub enum RunStatus {
    Completed,
    Failed { epoch: usize, message: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub dataset: String,
    pub variant: LossVariant,
    pub run: usize,
    pub fold: usize,
    pub seed: u64,
    pub norms: LossNorms,
    pub train_loss: Vec<f64>,
    pub train_accuracy: Vec<f64>,
    pub test_accuracy: Vec<f64>,
    /// Squared-error proportion used in each epoch (the cross-entropy share is its complement).
    pub se_weight: Vec<f64>,
    pub switch_epoch: Option<usize>,
    pub switch_snapshot: Option<Vec<f64>>,
    pub final_snapshot: Vec<f64>,
    pub final_test_accuracy: f64,
    pub final_schedule: ScheduleState,
    pub status: RunStatus,
}

impl RunRecord {
    pub fn is_completed(&self) -> bool {
        self.status == RunStatus::Completed
    }
}

/// Training and test matrices of one fold, standardised with training statistics.
#[derive(Clone, Debug)]
pub struct FoldData {
    pub fold: usize,
    pub train_x: Array2<f64>,
    pub train_y: Array2<f64>,
    pub test_x: Array2<f64>,
    pub test_y: Array2<f64>,
}

impl FoldData {
    pub fn new(dataset: &Dataset, plan: &FoldPlan, fold: usize) -> Result<Self> {
        if fold >= plan.fold_count {
            return Err(Error::Config(format!("fold {fold} outside plan of {} folds", plan.fold_count)));
        }
        if plan.assignments.len() != dataset.len() {
            return Err(Error::shape(
                format!("fold plan for {} rows", dataset.len()),
                plan.assignments.len(),
            ));
        }
        let (train_raw, train_y) = dataset.select(&plan.train_indices(fold));
        let (test_raw, test_y) = dataset.select(&plan.test_indices(fold));
        let scaler = Standardizer::fit(train_raw.view())?;
        Ok(FoldData {
            fold,
            train_x: scaler.apply(train_raw.view())?,
            train_y,
            test_x: scaler.apply(test_raw.view())?,
            test_y,
        })
    }
}

/// Fraction of rows whose decoded prediction matches the label.
pub fn classify_accuracy(net: &Network, features: &Array2<f64>, labels: &Array2<f64>) -> Result<f64> {
    if features.nrows() == 0 {
        return Err(Error::Empty("accuracy over zero patterns".into()));
    }
    let outputs = net.predict(features.view())?;
    accuracy_of(&outputs, labels)
}

fn accuracy_of(outputs: &Array2<f64>, labels: &Array2<f64>) -> Result<f64> {
    if outputs.dim() != labels.dim() {
        return Err(Error::shape(format!("labels {:?}", labels.dim()), format!("{:?}", outputs.dim())));
    }
    let predicted = decode_labels(outputs.view());
    let actual = decode_labels(labels.view());
    let correct = predicted.iter().zip(&actual).filter(|(p, a)| p == a).count();
    Ok(correct as f64 / actual.len() as f64)
}

/// Layer-major, row-major copy of every weight and bias.
pub fn snapshot_weights(net: &Network) -> Vec<f64> {
    net.to_flat()
}

#[derive(Clone, Debug)]
pub struct EpochLog {
    pub epoch: usize,
    pub weights: MixWeights,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub switched: bool,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn name_hash(name: &str) -> u64 {
    // FNV-1a
    name.bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

/// Seed of the fold plan for a dataset.
pub fn fold_seed(master_seed: u64, dataset: &str) -> u64 {
    splitmix64(splitmix64(master_seed ^ name_hash(dataset)) ^ 0xF01D)
}

/// Seed of run `run`; shared by all loss variants.
pub fn run_seed(master_seed: u64, dataset: &str, run: usize) -> u64 {
    splitmix64(splitmix64(master_seed ^ name_hash(dataset)).wrapping_add(run as u64 + 1))
}

/// Random streams of one run: network initialisation and per-epoch shuffling.
pub struct RunRngs {
    pub init: ChaCha8Rng,
    pub shuffle: ChaCha8Rng,
}

impl RunRngs {
    pub fn new(seed: u64) -> Self {
        let init = ChaCha8Rng::seed_from_u64(seed);
        let mut shuffle = ChaCha8Rng::seed_from_u64(seed);
        shuffle.set_stream(1);
        RunRngs { init, shuffle }
    }
}

/// Reshuffles `order` and splits it into batches; the last one may be short.
pub fn epoch_batches(order: &mut [usize], batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    order.shuffle(rng);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// Trains one network on one fold.
pub fn train_one(
    config: &ExperimentConfig,
    variant: LossVariant,
    data: &FoldData,
    run: usize,
    seed: u64,
) -> Result<RunRecord> {
    train_one_with(config, variant, data, run, seed, |_| {})
}

/// [`train_one`] with a callback after every epoch.
pub fn train_one_with(
    config: &ExperimentConfig,
    variant: LossVariant,
    data: &FoldData,
    run: usize,
    seed: u64,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<RunRecord> {
    config.arch.validate()?;
    config.check_variant(variant)?;
    if config.batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    if data.train_x.nrows() == 0 || data.test_x.nrows() == 0 {
        return Err(Error::Empty(format!("fold {} has an empty side", data.fold)));
    }
    if data.train_y.ncols() != config.arch.output_dim() {
        return Err(Error::shape(
            format!("{} label columns for {}", config.arch.output_dim(), config.arch),
            data.train_y.ncols(),
        ));
    }

    let mut rngs = RunRngs::new(seed);
    let mut net = Network::build(&config.arch, &mut rngs.init)?;
    let form = CeForm::for_activation(net.output_activation())?;
    let norms = loss::estimate_norms(&net, data.train_x.view(), data.train_y.view())?;
    let mut adam = AdamState::new(&net, config.learning_rate)?;
    let mut schedule = ScheduleState::new(variant);
    let mut detector = StagnationDetector::new(config.warmup_epochs, config.patience);

    let mut record = RunRecord {
        dataset: config.dataset.clone(),
        variant,
        run,
        fold: data.fold,
        seed,
        norms,
        train_loss: Vec::with_capacity(config.epochs),
        train_accuracy: Vec::with_capacity(config.epochs),
        test_accuracy: Vec::with_capacity(config.epochs),
        se_weight: Vec::with_capacity(config.epochs),
        switch_epoch: None,
        switch_snapshot: None,
        final_snapshot: Vec::new(),
        final_test_accuracy: classify_accuracy(&net, &data.test_x, &data.test_y)?,
        final_schedule: schedule.clone(),
        status: RunStatus::Completed,
    };

    let mut order: Vec<usize> = (0..data.train_x.nrows()).collect();
    for epoch in 0..config.epochs {
        let weights = schedule.advance_to(epoch);
        let step = (|| -> Result<()> {
            for batch in epoch_batches(&mut order, config.batch_size, &mut rngs.shuffle) {
                let x = data.train_x.select(ndarray::Axis(0), &batch);
                let t = data.train_y.select(ndarray::Axis(0), &batch);
                let trace = net.forward(x.view())?;
                let err = loss::grad_output(t.view(), &trace, weights, &norms)?;
                let grads = net.backward(&trace, err.view())?;
                adam.step(&mut net, &grads)?;
            }
            Ok(())
        })();
        if let Err(e) = step {
            return fail(record, net, schedule, epoch, e);
        }

        let train_out = net.predict(data.train_x.view())?;
        let train_loss = loss::eval_hybrid(data.train_y.view(), train_out.view(), form, weights, &norms)?;
        if !train_loss.is_finite() {
            return fail(record, net, schedule, epoch, Error::Divergence(format!("training loss {train_loss}")));
        }
        let train_acc = accuracy_of(&train_out, &data.train_y)?;
        let test_acc = classify_accuracy(&net, &data.test_x, &data.test_y)?;
        record.train_loss.push(train_loss);
        record.train_accuracy.push(train_acc);
        record.test_accuracy.push(test_acc);
        record.se_weight.push(weights.se);

        if variant.is_reactive() && !schedule.switched && detector.observe(epoch, train_acc) {
            schedule.trigger_switch(epoch);
            record.switch_epoch = Some(epoch);
            record.switch_snapshot = Some(snapshot_weights(&net));
        }
        on_epoch(&EpochLog {
            epoch,
            weights,
            train_loss,
            train_accuracy: train_acc,
            test_accuracy: test_acc,
            switched: schedule.switched,
        });
    }
    schedule.advance_to(config.epochs);
    if let Some(&last) = record.test_accuracy.last() {
        record.final_test_accuracy = last;
    }
    record.final_snapshot = snapshot_weights(&net);
    record.final_schedule = schedule;
    Ok(record)
}

fn fail(mut record: RunRecord, net: Network, schedule: ScheduleState, epoch: usize, e: Error) -> Result<RunRecord> {
    match e {
        Error::Divergence(msg) => {
            record.status = RunStatus::Failed { epoch, message: msg };
            record.final_snapshot = snapshot_weights(&net);
            record.final_schedule = schedule;
            Ok(record)
        }
        other => Err(other),
    }
}

/// A run that could not produce a record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub dataset: String,
    pub variant: LossVariant,
    pub run: usize,
    pub message: String,
}

#[derive(Clone, Debug, Default)]
pub struct ExperimentOutcome {
    /// Ordered by variant (config order), then run.
    pub records: Vec<RunRecord>,
    pub failures: Vec<RunFailure>,
}

/// Runs every configured variant `runs` times, rotating through the folds.
pub fn run_experiment(config: &ExperimentConfig, dataset: &Dataset) -> Result<ExperimentOutcome> {
    config.validate()?;
    if dataset.feature_dim() != config.arch.input_dim {
        return Err(Error::shape(
            format!("{} input features for {}", config.arch.input_dim, config.arch),
            dataset.feature_dim(),
        ));
    }
    let plan = crate::data::make_folds(dataset.len(), config.folds, fold_seed(config.master_seed, &config.dataset))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;

    let n_var = config.variants.len();
    let mut slots: Vec<Option<std::result::Result<RunRecord, String>>> = vec![None; n_var * config.runs];
    // one fold's matrices in memory at a time
    for fold in 0..config.folds.min(config.runs) {
        let data = FoldData::new(dataset, &plan, fold)?;
        let jobs: Vec<(usize, usize)> = (fold..config.runs)
            .step_by(config.folds)
            .flat_map(|r| (0..n_var).map(move |v| (v, r)))
            .collect();
        let results: Vec<_> = pool.install(|| {
            jobs.par_iter()
                .map(|&(v, r)| {
                    let seed = run_seed(config.master_seed, &config.dataset, r);
                    let res = train_one(config, config.variants[v], &data, r, seed).map_err(|e| e.to_string());
                    (v, r, res)
                })
                .collect()
        });
        for (v, r, res) in results {
            slots[v * config.runs + r] = Some(res);
        }
    }

    let mut outcome = ExperimentOutcome::default();
    for (i, slot) in slots.into_iter().enumerate() {
        let (v, r) = (i / config.runs, i % config.runs);
        match slot.expect("every run scheduled") {
            Ok(rec) => {
                if let RunStatus::Failed { epoch, message } = &rec.status {
                    outcome.failures.push(RunFailure {
                        dataset: config.dataset.clone(),
                        variant: rec.variant,
                        run: r,
                        message: format!("diverged at epoch {epoch}: {message}"),
                    });
                }
                outcome.records.push(rec);
            }
            Err(message) => outcome.failures.push(RunFailure {
                dataset: config.dataset.clone(),
                variant: config.variants[v],
                run: r,
                message,
            }),
        }
    }
    Ok(outcome)
}
