//! Experiment sweeps and their CSV output.
//!
//! Every experiment expands into independent jobs (one per variant, sweep
//! value, seed and fold), runs them on a bounded worker pool and reports one
//! detail row per job plus one aggregate row per (variant, sweep value).
//!
//! CSV columns: `experiment,variant,sweep_value,fold,seed,accuracy,fn_rate,loss,params,seconds`.
//! Aggregate rows carry `fold = mean` and an empty seed; their standard
//! deviations go to the companion summary file.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{write_atomic, Dataset};
use crate::error::{Error, Result};
use crate::fed::{run_rounds, FedConfig};
use crate::gradcheck::gradcheck_micro;
use crate::model::{count_parameters, evaluate_with_loss, train, Model, ModelSpec, TrainConfig, Variant};
use crate::synth::{kfold_splits, stratified_holdout, stratified_subset, SynthConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    /// Class weight λ, k-fold cross-validation.
    LambdaSweep,
    /// Training-set size against a fixed class-balanced test set.
    DatasetSizeSweep,
    /// Number of federated clients sharing the training pool.
    ClientCountSweep,
    /// Samples per client at a fixed client count.
    SamplesPerClientSweep,
    /// Sweep value is λ; one holdout split.
    SingleTrain,
    /// Sweep value is the client count; one holdout split.
    FedRun,
    /// Sweep value is the finite-difference step. `accuracy` is 1 when the
    /// check passes, `loss` holds the maximum relative error.
    Gradcheck,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::LambdaSweep => "lambda-sweep",
            ExperimentKind::DatasetSizeSweep => "dataset-size-sweep",
            ExperimentKind::ClientCountSweep => "client-count-sweep",
            ExperimentKind::SamplesPerClientSweep => "samples-per-client-sweep",
            ExperimentKind::SingleTrain => "single-train",
            ExperimentKind::FedRun => "fed-run",
            ExperimentKind::Gradcheck => "gradcheck",
        }
    }

    pub fn default_sweep(self) -> Vec<f64> {
        match self {
            ExperimentKind::LambdaSweep => vec![1.0, 2.0, 4.0, 6.0, 8.0, 10.0],
            ExperimentKind::DatasetSizeSweep => vec![1500.0, 2000.0, 3000.0, 4000.0],
            ExperimentKind::ClientCountSweep => vec![4.0, 8.0, 16.0, 32.0],
            ExperimentKind::SamplesPerClientSweep => vec![1000.0, 500.0, 250.0, 100.0, 50.0],
            ExperimentKind::SingleTrain => vec![2.0],
            ExperimentKind::FedRun => vec![4.0],
            ExperimentKind::Gradcheck => vec![1e-5],
        }
    }
}

impl std::str::FromStr for ExperimentKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::Invalid(format!("unknown experiment kind {s:?}")))
    }
}

/// Gradient check pass threshold on the maximum relative error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub variants: Vec<Variant>,
    pub sweep: Vec<f64>,
    pub seeds: Vec<u64>,
    pub folds: usize,
    /// Class-balanced holdout size for non-CV experiments.
    pub test_size: usize,
    pub train: TrainConfig,
    pub fed: FedConfig,
    pub synth: SynthConfig,
    /// Concurrent jobs; `QFED_WORKERS` overrides, deterministic mode forces 1.
    pub workers: Option<usize>,
    pub deterministic: bool,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        let kind = ExperimentKind::LambdaSweep;
        Self {
            kind,
            variants: vec![Variant::Hybrid],
            sweep: kind.default_sweep(),
            seeds: vec![0],
            folds: 5,
            test_size: 400,
            train: TrainConfig::default(),
            fed: FedConfig::default(),
            synth: SynthConfig::default(),
            workers: None,
            deterministic: false,
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.sweep.is_empty() {
            return Err(Error::Invalid("sweep values must not be empty".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Invalid("seeds must not be empty".into()));
        }
        if self.variants.is_empty() {
            return Err(Error::Invalid("at least one model variant is required".into()));
        }
        if self.kind == ExperimentKind::LambdaSweep && self.folds < 2 {
            return Err(Error::Invalid("cross-validation needs at least 2 folds".into()));
        }
        Ok(())
    }

    pub fn model_spec(&self, variant: Variant, data: &Dataset) -> Result<ModelSpec> {
        let shape = data
            .input_shape()
            .ok_or_else(|| Error::EmptyDataset("experiment data".into()))?;
        ModelSpec::for_input(variant, shape)
    }

    pub fn worker_count(&self) -> usize {
        if self.deterministic {
            return 1;
        }
        std::env::var("QFED_WORKERS")
            .ok()
            .and_then(|v| v.parse().ok())
            .or(self.workers)
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
            .max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    pub variant: Variant,
    pub sweep_value: f64,
    pub fold: usize,
    pub seed: u64,
    pub accuracy: f64,
    pub fn_rate: f64,
    pub loss: f64,
    pub params: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub experiment: String,
    pub variant: Variant,
    pub sweep_value: f64,
    pub n: usize,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub fn_rate_mean: f64,
    pub fn_rate_std: f64,
    pub loss_mean: f64,
    pub loss_std: f64,
    pub params: usize,
    pub seconds_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
    pub aggregates: Vec<AggregateRow>,
}

#[derive(Debug, Clone)]
struct Job {
    variant: Variant,
    sweep_value: f64,
    fold: usize,
    seed: u64,
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn aggregate(experiment: &str, rows: &[ResultRow]) -> Vec<AggregateRow> {
    let mut keys: Vec<(Variant, f64)> = Vec::new();
    for r in rows {
        if !keys.iter().any(|(v, s)| *v == r.variant && s.to_bits() == r.sweep_value.to_bits()) {
            keys.push((r.variant, r.sweep_value));
        }
    }
    keys.into_iter()
        .map(|(variant, sweep_value)| {
            let group: Vec<&ResultRow> = rows
                .iter()
                .filter(|r| r.variant == variant && r.sweep_value.to_bits() == sweep_value.to_bits())
                .collect();
            let col = |f: fn(&ResultRow) -> f64| mean_std(&group.iter().map(|r| f(r)).collect::<Vec<_>>());
            let (accuracy_mean, accuracy_std) = col(|r| r.accuracy);
            let (fn_rate_mean, fn_rate_std) = col(|r| r.fn_rate);
            let (loss_mean, loss_std) = col(|r| r.loss);
            AggregateRow {
                experiment: experiment.to_string(),
                variant,
                sweep_value,
                n: group.len(),
                accuracy_mean,
                accuracy_std,
                fn_rate_mean,
                fn_rate_std,
                loss_mean,
                loss_std,
                params: group[0].params,
                seconds_mean: col(|r| r.seconds).0,
            }
        })
        .collect()
}

fn as_count(v: f64, what: &str) -> Result<usize> {
    if v >= 1.0 && v.fract() == 0.0 {
        Ok(v as usize)
    } else {
        Err(Error::Invalid(format!("{what} sweep value {v} is not a positive integer")))
    }
}

/// Runs every job of `spec` on `data` and aggregates the results.
pub fn run_experiment(spec: &ExperimentSpec, data: &Dataset) -> Result<ResultTable> {
    spec.validate()?;
    if spec.kind != ExperimentKind::Gradcheck && data.is_empty() {
        return Err(Error::EmptyDataset("experiment".into()));
    }
    let folds = if spec.kind == ExperimentKind::LambdaSweep { spec.folds } else { 1 };
    let mut jobs = Vec::new();
    for &variant in &spec.variants {
        for &sweep_value in &spec.sweep {
            for &seed in &spec.seeds {
                for fold in 0..folds {
                    jobs.push(Job {
                        variant,
                        sweep_value,
                        fold,
                        seed,
                    });
                }
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.worker_count())
        .build()
        .map_err(|e| Error::Invalid(format!("worker pool: {e}")))?;
    let rows: Vec<ResultRow> = pool.install(|| {
        jobs.par_iter()
            .map(|job| run_job(spec, data, job))
            .collect::<Result<_>>()
    })?;
    let aggregates = aggregate(spec.kind.name(), &rows);
    Ok(ResultTable { rows, aggregates })
}

fn run_job(spec: &ExperimentSpec, data: &Dataset, job: &Job) -> Result<ResultRow> {
    let start = Instant::now();
    let mut train_cfg = spec.train.clone();
    let (metrics, loss, params) = match spec.kind {
        ExperimentKind::LambdaSweep | ExperimentKind::SingleTrain => {
            train_cfg.lambda = job.sweep_value;
            let (train_idx, test_idx) = if spec.kind == ExperimentKind::LambdaSweep {
                let f = kfold_splits(&data.labels, spec.folds, job.seed)?.swap_remove(job.fold);
                (f.train, f.test)
            } else {
                let f = stratified_holdout(&data.labels, spec.test_size, job.seed)?;
                (f.train, f.test)
            };
            centralized(spec, data, job, &train_cfg, &train_idx, &test_idx)?
        }
        ExperimentKind::DatasetSizeSweep => {
            let f = stratified_holdout(&data.labels, spec.test_size, job.seed)?;
            let n = as_count(job.sweep_value, "training set size")?;
            let train_idx = stratified_subset(&data.labels, &f.train, n, job.seed ^ 0xD5)?;
            centralized(spec, data, job, &train_cfg, &train_idx, &f.test)?
        }
        ExperimentKind::ClientCountSweep | ExperimentKind::SamplesPerClientSweep | ExperimentKind::FedRun => {
            let f = stratified_holdout(&data.labels, spec.test_size, job.seed)?;
            let mut fed = spec.fed.clone();
            fed.seed = job.seed;
            match spec.kind {
                ExperimentKind::SamplesPerClientSweep => {
                    fed.samples_per_client = Some(as_count(job.sweep_value, "samples per client")?)
                }
                _ => fed.n_clients = as_count(job.sweep_value, "client count")?,
            }
            let model_spec = spec.model_spec(job.variant, data)?;
            let history = run_rounds(&fed, &train_cfg, &model_spec, &data.subset(&f.train), &data.subset(&f.test))?;
            let last = history.rounds.last().expect("n_rounds >= 1").global;
            let params = count_parameters(&Model::new(model_spec, job.seed)?);
            (last.metrics, last.mean_loss, params)
        }
        ExperimentKind::Gradcheck => {
            let report = gradcheck_micro(job.variant, job.seed, job.sweep_value)?;
            let passed = report.max_rel_error < GRADCHECK_TOLERANCE;
            let m = crate::model::Metrics {
                accuracy: if passed { 1.0 } else { 0.0 },
                ..Default::default()
            };
            (m, report.max_rel_error, report.n_params)
        }
    };
    Ok(ResultRow {
        experiment: spec.kind.name().to_string(),
        variant: job.variant,
        sweep_value: job.sweep_value,
        fold: job.fold,
        seed: job.seed,
        accuracy: metrics.accuracy,
        fn_rate: metrics.fn_rate,
        loss,
        params,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn centralized(
    spec: &ExperimentSpec,
    data: &Dataset,
    job: &Job,
    train_cfg: &TrainConfig,
    train_idx: &[usize],
    test_idx: &[usize],
) -> Result<(crate::model::Metrics, f64, usize)> {
    let mut model = Model::new(spec.model_spec(job.variant, data)?, job.seed)?;
    let train_data = data.subset(train_idx);
    let test_data = data.subset(test_idx);
    train(&mut model, &train_data, None, train_cfg, job.seed)?;
    let e = evaluate_with_loss(&model, &test_data, &train_cfg.loss_config()?)?;
    Ok((e.metrics, e.mean_loss, count_parameters(&model)))
}

pub const CSV_HEADER: [&str; 10] = [
    "experiment", "variant", "sweep_value", "fold", "seed", "accuracy", "fn_rate", "loss", "params", "seconds",
];

/// Detail rows followed by `fold = mean` aggregate rows.
pub fn results_csv(table: &ResultTable) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for r in &table.rows {
        w.write_record([
            r.experiment.clone(),
            r.variant.to_string(),
            r.sweep_value.to_string(),
            r.fold.to_string(),
            r.seed.to_string(),
            r.accuracy.to_string(),
            r.fn_rate.to_string(),
            r.loss.to_string(),
            r.params.to_string(),
            format!("{:.3}", r.seconds),
        ])?;
    }
    for a in &table.aggregates {
        w.write_record([
            a.experiment.clone(),
            a.variant.to_string(),
            a.sweep_value.to_string(),
            "mean".into(),
            String::new(),
            a.accuracy_mean.to_string(),
            a.fn_rate_mean.to_string(),
            a.loss_mean.to_string(),
            a.params.to_string(),
            format!("{:.3}", a.seconds_mean),
        ])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn summary_csv(table: &ResultTable) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for a in &table.aggregates {
        w.serialize(a)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Paths of the three output files derived from the results path.
pub fn output_paths(results: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let stem = results
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "results".into());
    let dir = results.parent().unwrap_or(Path::new(""));
    (
        results.to_path_buf(),
        dir.join(format!("{stem}.summary.csv")),
        dir.join(format!("{stem}.manifest.json")),
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub experiment: ExperimentSpec,
    pub data_source: String,
    pub n_samples: usize,
    pub version: String,
    pub rows: usize,
}

/// Writes results, summary and manifest, each atomically.
pub fn write_outputs(results: &Path, table: &ResultTable, manifest: &Manifest) -> Result<()> {
    let (csv_path, summary_path, manifest_path) = output_paths(results);
    write_atomic(&csv_path, &results_csv(table)?)?;
    write_atomic(&summary_path, &summary_csv(table)?)?;
    write_atomic(&manifest_path, &serde_json::to_vec_pretty(manifest)?)
}
