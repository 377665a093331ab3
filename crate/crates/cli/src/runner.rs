//! Executes the (method x train size x seed) grid: trains, evaluates on
//! the shared held-out test split, and writes one JSON record plus a
//! reliability CSV per run. Runs are independent; failures are recorded
//! and the rest continue.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use oko_core::calibration::{evaluate_predictions, temperature_scale};
use oko_core::datasets::{load_idx, make_blobs, LabeledDataset};
use oko_core::model::{train, TrainConfig, TrainMethod};
use oko_core::numcore::{softmax, RngStream};
use oko_core::{CalibrationReport, Mlp};

use crate::config::{DatasetSource, ExperimentConfig};
use crate::CliError;

/// Stream ids reserved for config-level randomness (dataset generation
/// and the shared test split); per-run streams live in the trainer.
mod streams {
    pub const DATAGEN: u64 = 1001;
    pub const SPLIT: u64 = 1002;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Failed,
}

/// One completed (or failed) run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub method: TrainMethod,
    pub train_size: usize,
    pub seed: u64,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<CalibrationReport>,
    /// Evaluation temperature, when the method scales logits.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    /// Training wall-clock; the only field excluded from reproducibility.
    pub wall_clock_secs: f64,
}

impl RunRecord {
    pub fn file_stem(method: TrainMethod, train_size: usize, seed: u64) -> String {
        let name = serde_json::to_value(method)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_else(|| format!("{method:?}"));
        format!("run-{name}-{train_size}-{seed}")
    }
}

#[derive(Debug)]
pub struct RunSummary {
    pub completed: usize,
    pub failed: usize,
    pub output_dir: PathBuf,
}

/// The shared data for one experiment: the training pool and the test
/// split every method is evaluated on.
pub struct PreparedData {
    pub train_pool: LabeledDataset<f64>,
    pub test: LabeledDataset<f64>,
}

/// Builds the dataset and test split from the config hash, so they are
/// identical for every method, size, and seed.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<PreparedData, CliError> {
    let hash_seed = cfg.hash_seed();
    match &cfg.dataset {
        DatasetSource::Blobs {
            classes,
            per_class,
            dim,
            separation,
        } => {
            let mut gen_rng = RngStream::new(hash_seed, streams::DATAGEN);
            let full = make_blobs::<f64>(*classes, *per_class, *dim, *separation, &mut gen_rng)?;
            let mut split_rng = RngStream::new(hash_seed, streams::SPLIT);
            let (train_pool, test) = full.split(cfg.test_fraction, &mut split_rng)?;
            Ok(PreparedData { train_pool, test })
        }
        DatasetSource::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
        } => {
            let train_pool = load_idx::<f64>(train_images, train_labels)?;
            match (test_images, test_labels) {
                (Some(ti), Some(tl)) => {
                    let test = load_idx::<f64>(ti, tl)?;
                    Ok(PreparedData { train_pool, test })
                }
                _ => {
                    let mut split_rng = RngStream::new(hash_seed, streams::SPLIT);
                    let (train_pool, test) = train_pool.split(cfg.test_fraction, &mut split_rng)?;
                    Ok(PreparedData { train_pool, test })
                }
            }
        }
    }
}

/// Per-run training configuration.
fn train_config(cfg: &ExperimentConfig, method: TrainMethod, size: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        method,
        loss: cfg.loss_overrides.get(&method).cloned(),
        k: cfg.k,
        aux_odd_head: method == TrainMethod::Oko && cfg.aux_odd_head,
        aux_weight: cfg.aux_weight,
        hidden: cfg.hidden.clone(),
        epochs: cfg.optimizer.epochs,
        batch_size: cfg.optimizer.batch_size,
        learning_rate: cfg.optimizer.learning_rate,
        momentum: cfg.optimizer.momentum,
        seed,
        distribution: Some(cfg.distribution),
        train_size: Some(size),
    }
}

/// Trains one run and evaluates it on the shared test split.
pub fn execute_run(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    method: TrainMethod,
    size: usize,
    seed: u64,
) -> Result<(Mlp, CalibrationReport), CliError> {
    let tc = train_config(cfg, method, size, seed);
    let (model, _log) = train(&data.train_pool, &tc)?;
    let temperature =
        (method == TrainMethod::BatchBalancedTs).then_some(cfg.temperature);
    let mut probs = Vec::with_capacity(data.test.len());
    for i in 0..data.test.len() {
        let logits = model.forward_single(data.test.row(i))?;
        let p = match temperature {
            Some(tau) => temperature_scale(&logits, tau)?,
            None => softmax(&logits),
        };
        probs.push(p);
    }
    let report = evaluate_predictions(&probs, data.test.labels(), cfg.ece_bins)?;
    Ok((model, report))
}

/// Runs the whole grid with up to `workers` threads. Every artifact
/// under the output directory is a pure function of (config, seed)
/// except the wall-clock field.
pub fn run_experiments(cfg: &ExperimentConfig, workers: usize) -> Result<RunSummary, CliError> {
    cfg.validate()?;
    let out_dir = cfg.output_dir.clone();
    std::fs::create_dir_all(&out_dir)?;
    let hash = cfg.content_hash();

    let mut jobs = Vec::new();
    for &method in &cfg.methods {
        for &size in &cfg.train_sizes {
            for &seed in &cfg.seeds {
                jobs.push((method, size, seed));
            }
        }
    }

    // Dataset problems fail every run but still produce records, so a
    // partial grid of artifacts never looks complete.
    let data = match prepare_data(cfg) {
        Ok(d) => d,
        Err(e) => {
            let message = e.to_string();
            for &(method, size, seed) in &jobs {
                let record = RunRecord {
                    config_hash: hash.clone(),
                    method,
                    train_size: size,
                    seed,
                    status: RunStatus::Failed,
                    error: Some(message.clone()),
                    report: None,
                    temperature: None,
                    wall_clock_secs: 0.0,
                };
                write_record(&out_dir, &record)?;
            }
            return Ok(RunSummary {
                completed: 0,
                failed: jobs.len(),
                output_dir: out_dir,
            });
        }
    };

    let next_job = AtomicUsize::new(0);
    let failures = Mutex::new(Vec::<String>::new());
    let completed = AtomicUsize::new(0);
    let worker_count = workers.max(1).min(jobs.len().max(1));

    std::thread::scope(|scope| {
        for _ in 0..worker_count {
            scope.spawn(|| loop {
                let idx = next_job.fetch_add(1, Ordering::SeqCst);
                if idx >= jobs.len() {
                    break;
                }
                let (method, size, seed) = jobs[idx];
                let started = Instant::now();
                let record = match execute_run(cfg, &data, method, size, seed) {
                    Ok((_model, report)) => {
                        completed.fetch_add(1, Ordering::SeqCst);
                        RunRecord {
                            config_hash: hash.clone(),
                            method,
                            train_size: size,
                            seed,
                            status: RunStatus::Ok,
                            error: None,
                            temperature: (method == TrainMethod::BatchBalancedTs)
                                .then_some(cfg.temperature),
                            report: Some(report),
                            wall_clock_secs: started.elapsed().as_secs_f64(),
                        }
                    }
                    Err(e) => RunRecord {
                        config_hash: hash.clone(),
                        method,
                        train_size: size,
                        seed,
                        status: RunStatus::Failed,
                        error: Some(e.to_string()),
                        report: None,
                        temperature: None,
                        wall_clock_secs: started.elapsed().as_secs_f64(),
                    },
                };
                if let Err(e) = write_record(&out_dir, &record) {
                    failures.lock().unwrap().push(e.to_string());
                }
            });
        }
    });

    let io_failures = failures.into_inner().unwrap();
    if let Some(first) = io_failures.first() {
        return Err(CliError::Io(first.clone()));
    }
    let done = completed.load(Ordering::SeqCst);
    Ok(RunSummary {
        failed: jobs.len() - done,
        completed: done,
        output_dir: out_dir,
    })
}

fn write_record(dir: &Path, record: &RunRecord) -> Result<(), CliError> {
    let stem = RunRecord::file_stem(record.method, record.train_size, record.seed);
    let json = serde_json::to_string_pretty(record)?;
    std::fs::write(dir.join(format!("{stem}.json")), json)?;
    if let Some(report) = &record.report {
        let csv = report.reliability.to_csv();
        let csv_name = stem.replacen("run-", "reliability-", 1);
        std::fs::write(dir.join(format!("{csv_name}.csv")), csv)?;
    }
    Ok(())
}
