//! The `train`, `eval` and `diagnose` commands.

use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::{Config, DataSource};
use crate::data::{preprocess, read_interactions_csv, split, Dataset, Event, Split};
use crate::error::{CheckpointError, Error, Result};
use crate::estimators::{estimate_logging_policy, LoggingPolicyEstimate};
use crate::eval::{evaluate_split, MetricValue, MetricsReport, RewardImputer};
use crate::objectives::ObjectiveKind;
use crate::policy::{load_checkpoint_expecting, save_checkpoint, ContextPolicy, PolicyModel, CHECKPOINT_VERSION};
use crate::synth::{fit_weighted_mf, generate_sessions, rating_cells, SyntheticWorld};
use crate::train::{training_examples, EpochStats, Trainer};

pub const TRAIN_LOG_VERSION: u32 = 1;
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const LOGGING_FILE: &str = "logging.bin";
pub const TRAIN_LOG_FILE: &str = "train_log.json";
pub const SWEEP_FILE: &str = "sweep.csv";

/// Loads, preprocesses and splits the configured data. For synthetic worlds
/// the world is returned too.
pub fn load_dataset(config: &Config) -> Result<(Dataset, Option<SyntheticWorld>)> {
    let (ds, world) = match &config.source {
        DataSource::Csv(path) => {
            let file = File::open(path).map_err(|e| Error::invalid(format!("cannot open {}: {e}", path.display())))?;
            let raw = read_interactions_csv(BufReader::new(file))?;
            (preprocess(&raw, &config.preprocess, &config.rewards)?, None)
        }
        DataSource::World { path, sessions, horizon, seed } => {
            let text =
                fs::read_to_string(path).map_err(|e| Error::invalid(format!("cannot open {}: {e}", path.display())))?;
            let world = SyntheticWorld::from_json(&text)?;
            (generate_sessions(&world, *sessions, *horizon, *seed)?, Some(world))
        }
    };
    Ok((split(ds, config.fractions, config.split_seed)?, world))
}

fn stamp(model: &mut PolicyModel, config: &Config, epoch: usize) {
    let o = &config.train.objective;
    model.set_metadata("objective", f64::from(o.kind.code()));
    model.set_metadata("beta", o.beta);
    model.set_metadata("lambda_td", o.lambda_td);
    model.set_metadata("gamma", o.gamma);
    model.set_metadata("clip", o.clip);
    model.set_metadata("epoch", epoch as f64);
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    #[serde(flatten)]
    pub stats: EpochStats,
    pub selection_metric: String,
    pub selection_value: f64,
    pub validation: MetricsReport,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainLog {
    pub schema_version: u32,
    pub checkpoint_version: u16,
    pub objective: String,
    pub seed: u64,
    pub train_examples: usize,
    pub best_epoch: Option<usize>,
    pub aborted: Option<String>,
    pub epochs: Vec<EpochRecord>,
}

/// Paths written by [`run_train`].
#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub logging: PathBuf,
    pub log_path: PathBuf,
    pub log: TrainLog,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Trains the configured objective, keeping the checkpoint with the best
/// validation selection score.
pub fn run_train(config: &Config) -> Result<TrainOutcome> {
    let (dataset, _) = load_dataset(config)?;
    if dataset.sequences_in(Split::Validation).next().is_none() {
        return Err(Error::invalid("validation split is empty"));
    }
    let tc = &config.train;
    let examples = training_examples(&dataset, Split::Train, tc.loss_window, tc.objective.gamma)?;
    if examples.is_empty() {
        return Err(Error::invalid("training split has no examples"));
    }
    fs::create_dir_all(&config.output_dir)?;
    let checkpoint = config.output_dir.join(CHECKPOINT_FILE);
    let logging_path = config.output_dir.join(LOGGING_FILE);
    let log_path = config.output_dir.join(TRAIN_LOG_FILE);

    let mut logging_cfg = tc.clone();
    logging_cfg.epochs = config.logging_epochs;
    logging_cfg.seed = tc.seed.wrapping_add(0x4C4F_4747);
    let logging = estimate_logging_policy(&dataset, &logging_cfg)?;
    save_checkpoint(logging.model(), &logging_path)?;

    let mut model = PolicyModel::new(tc.model_config(dataset.catalog_size), tc.seed)?;
    stamp(&mut model, config, 0);
    let mut log = TrainLog {
        schema_version: TRAIN_LOG_VERSION,
        checkpoint_version: CHECKPOINT_VERSION,
        objective: tc.objective.kind.name().to_string(),
        seed: tc.seed,
        train_examples: examples.len(),
        best_epoch: None,
        aborted: None,
        epochs: Vec::new(),
    };
    save_checkpoint(&model, &checkpoint)?;
    if tc.epochs == 0 {
        write_json(&log_path, &log)?;
        return Ok(TrainOutcome { checkpoint, logging: logging_path, log_path, log });
    }

    let logging_ref: &dyn ContextPolicy = &logging;
    let mut trainer = Trainer::new(model, tc.clone(), examples, Some(logging_ref))?;
    let options = config.eval_options();
    let by_score = dataset.has_event(Event::Click) || dataset.has_event(Event::Purchase);
    let selection_metric = if by_score { "selection_score" } else { "ar@1" };
    let mut best = f64::NEG_INFINITY;
    for epoch in 1..=tc.epochs {
        let stats = match trainer.run_epoch() {
            Ok(s) => s,
            Err(e) => {
                log.aborted = Some(e.to_string());
                write_json(&log_path, &log)?;
                return Err(e);
            }
        };
        let report = evaluate_split(trainer.model(), &dataset, Split::Validation, &options, Some(logging_ref), None)?;
        let value = report.value(selection_metric).unwrap_or(f64::NEG_INFINITY);
        if value > best || log.best_epoch.is_none() {
            best = value;
            log.best_epoch = Some(epoch);
            let mut snapshot = trainer.model().clone();
            stamp(&mut snapshot, config, epoch);
            save_checkpoint(&snapshot, &checkpoint)?;
        }
        log.epochs.push(EpochRecord {
            stats,
            selection_metric: selection_metric.to_string(),
            selection_value: value,
            validation: report,
        });
    }
    write_json(&log_path, &log)?;
    Ok(TrainOutcome { checkpoint, logging: logging_path, log_path, log })
}

/// Loads the logging-policy estimate stored next to a checkpoint, if any.
fn load_logging_near(checkpoint: &Path, config: &Config, catalog: usize) -> Result<Option<LoggingPolicyEstimate>> {
    let candidates = [checkpoint.parent().map(|p| p.join(LOGGING_FILE)), Some(config.output_dir.join(LOGGING_FILE))];
    for path in candidates.into_iter().flatten() {
        if path.exists() {
            let model = load_checkpoint_expecting(&path, &config.train.model_config(catalog))?;
            return Ok(Some(LoggingPolicyEstimate::new(model)));
        }
    }
    Ok(None)
}

/// Evaluates a checkpoint on one split and writes `metrics_<split>.json`
/// into the output directory.
pub fn run_eval(config: &Config, checkpoint: &Path, split_name: Split) -> Result<(MetricsReport, PathBuf)> {
    let (dataset, world) = load_dataset(config)?;
    if dataset.sequences_in(split_name).next().is_none() {
        return Err(Error::invalid(format!("{} split is empty", split_name.name())));
    }
    let model = load_checkpoint_expecting(checkpoint, &config.train.model_config(dataset.catalog_size))?;
    let logging = load_logging_near(checkpoint, config, dataset.catalog_size)?;
    let imputer = if config.impute {
        Some(fit_weighted_mf(&rating_cells(&dataset), dataset.sequences.len(), dataset.catalog_size, &config.mf)?)
    } else {
        None
    };
    let mut report = evaluate_split(
        &model,
        &dataset,
        split_name,
        &config.eval_options(),
        logging.as_ref().map(|l| l as &dyn ContextPolicy),
        imputer.as_ref().map(|m| m as &dyn RewardImputer),
    )?;
    if let Some(w) = world {
        let exact = |v: f64| MetricValue { value: v, count: 1, stderr: 0.0 };
        report.metrics.insert("world_value".into(), exact(w.value_of(&model)?));
        if let Some(l) = &logging {
            report.metrics.insert("world_value_logging".into(), exact(w.value_of(l)?));
        }
    }
    if let Some(kind) = model.metadata().get("objective").and_then(|c| ObjectiveKind::from_code(*c as u8)) {
        report.metadata.insert("objective".into(), kind.name().into());
    }
    fs::create_dir_all(&config.output_dir)?;
    let out = config.output_dir.join(format!("metrics_{}.json", split_name.name()));
    let mut text = report.to_json();
    text.push('\n');
    fs::write(&out, text)?;
    Ok((report, out))
}

/// Hyperparameter swept by a set of checkpoints.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepParam {
    Beta,
    LambdaTd,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Beta => "beta",
            SweepParam::LambdaTd => "lambda_td",
        }
    }
}

/// Validation metrics of each checkpoint in a sweep, written as CSV rows
/// `(value, ndcg_click@20, ndcg_purchase@20, ndcg@20, js)` sorted by the
/// swept value.
pub fn run_diagnose(config: &Config, checkpoints: &[PathBuf]) -> Result<(String, PathBuf)> {
    if checkpoints.len() < 2 {
        return Err(Error::invalid("diagnose needs at least two checkpoints"));
    }
    let (dataset, _) = load_dataset(config)?;
    let expected = config.train.model_config(dataset.catalog_size);
    let models = checkpoints.iter().map(|p| load_checkpoint_expecting(p, &expected)).collect::<Result<Vec<_>>>()?;
    let meta = |m: &PolicyModel, k: &str| m.metadata().get(k).copied();
    for key in ["objective", "gamma", "clip"] {
        let first = meta(&models[0], key);
        if models.iter().any(|m| meta(m, key) != first) {
            return Err(CheckpointError::ShapeMismatch(format!("checkpoints disagree on {key}")).into());
        }
    }
    let distinct = |key: &str| {
        let mut v: Vec<u64> = models.iter().filter_map(|m| meta(m, key)).map(f64::to_bits).collect();
        v.sort_unstable();
        v.dedup();
        v.len()
    };
    let param = match (distinct("beta") > 1, distinct("lambda_td") > 1) {
        (true, false) => SweepParam::Beta,
        (false, true) => SweepParam::LambdaTd,
        (true, true) => return Err(Error::invalid("checkpoints differ in both beta and lambda_td")),
        (false, false) => return Err(Error::invalid("checkpoints must differ in beta or lambda_td")),
    };
    let logging = load_logging_near(&checkpoints[0], config, dataset.catalog_size)?;
    let options = config.eval_options();
    let mut rows = Vec::new();
    for m in &models {
        let report = evaluate_split(
            m,
            &dataset,
            Split::Validation,
            &options,
            logging.as_ref().map(|l| l as &dyn ContextPolicy),
            None,
        )?;
        let value = meta(m, param.name()).ok_or_else(|| Error::invalid("checkpoint lacks hyperparameter metadata"))?;
        let get = |k: &str| report.value(k).map(|v| v.to_string()).unwrap_or_default();
        rows.push((value, [get("ndcg_click@20"), get("ndcg_purchase@20"), get("ndcg@20"), get("js")]));
    }
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([param.name(), "ndcg_click@20", "ndcg_purchase@20", "ndcg@20", "js"])?;
    for (v, cols) in &rows {
        let mut rec = vec![v.to_string()];
        rec.extend(cols.iter().cloned());
        w.write_record(&rec)?;
    }
    let text =
        String::from_utf8(w.into_inner().map_err(|e| Error::invalid(e.to_string()))?).expect("csv output is utf-8");
    fs::create_dir_all(&config.output_dir)?;
    let out = config.output_dir.join(SWEEP_FILE);
    fs::write(&out, &text)?;
    Ok((text, out))
}
