//! Flat `key = value` experiment configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key is
//! optional except the data source; unknown or repeated keys are rejected.
//! Relative paths resolve against the directory holding the config file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{LengthCount, PreprocessRules, RewardMap, SplitFractions};
use crate::encoder::AdamConfig;
use crate::error::{Error, Result};
use crate::eval::EvalOptions;
use crate::objectives::{ObjectiveConfig, ObjectiveKind};
use crate::synth::MfConfig;
use crate::train::TrainConfig;

/// Where the interaction data comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    /// Interaction CSV, preprocessed with the configured rules.
    Csv(PathBuf),
    /// Synthetic world JSON; sessions are generated on load.
    World { path: PathBuf, sessions: usize, horizon: usize, seed: u64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub source: DataSource,
    pub preprocess: PreprocessRules,
    pub fractions: SplitFractions,
    pub split_seed: u64,
    pub rewards: RewardMap,
    pub train: TrainConfig,
    /// Epochs used to fit the logging-policy estimate.
    pub logging_epochs: usize,
    pub eval_ks: Vec<usize>,
    pub divergence_cap: usize,
    /// Fit a weighted MF imputer and report iAR@1.
    pub impute: bool,
    pub mf: MfConfig,
    pub output_dir: PathBuf,
}

struct Entries {
    map: BTreeMap<String, (usize, String)>,
}

impl Entries {
    fn take<T: FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        match self.map.remove(key) {
            None => Ok(default),
            Some((line, raw)) => {
                raw.parse().map_err(|_| Error::Config(format!("line {line}: cannot parse {key} = {raw:?}")))
            }
        }
    }

    fn take_opt(&mut self, key: &str) -> Option<(usize, String)> {
        self.map.remove(key)
    }
}

fn check(cond: bool, msg: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Config(msg.to_string()))
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Config::parse(&text, &base)
    }

    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) =
                line.split_once('=').ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            let key = k.trim().to_string();
            if map.insert(key.clone(), (i + 1, v.trim().to_string())).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key {key}", i + 1)));
            }
        }
        let mut e = Entries { map };
        let resolve = |p: &str| {
            let p = PathBuf::from(p);
            if p.is_absolute() {
                p
            } else {
                base_dir.join(p)
            }
        };

        let data_path = e.take_opt("data_path");
        let world_path = e.take_opt("world_path");
        let world_sessions = e.take("world_sessions", 20_000usize)?;
        let world_horizon = e.take("world_horizon", 2usize)?;
        let world_seed = e.take("world_seed", 0u64)?;
        let source = match (data_path, world_path) {
            (Some((_, p)), None) => DataSource::Csv(resolve(&p)),
            (None, Some((_, p))) => {
                check(world_sessions > 0, "world_sessions must be positive")?;
                check(world_horizon >= 2, "world_horizon must be at least 2")?;
                DataSource::World {
                    path: resolve(&p),
                    sessions: world_sessions,
                    horizon: world_horizon,
                    seed: world_seed,
                }
            }
            _ => return Err(Error::Config("set exactly one of data_path and world_path".into())),
        };

        let length_counts = match e.take("length_counts", "clicks".to_string())?.as_str() {
            "clicks" => LengthCount::Clicks,
            "all" => LengthCount::All,
            other => return Err(Error::Config(format!("length_counts must be clicks or all, not {other:?}"))),
        };
        let preprocess = PreprocessRules {
            min_interactions: e.take("min_interactions", 3usize)?,
            min_item_support: e.take("min_item_support", 1usize)?,
            max_length: e.take("max_length", 20usize)?,
            length_counts,
        };
        check(
            preprocess.min_interactions > 0 && preprocess.min_item_support > 0 && preprocess.max_length > 0,
            "preprocessing thresholds must be positive",
        )?;

        let fractions = SplitFractions {
            train: e.take("train_fraction", 0.8)?,
            validation: e.take("validation_fraction", 0.1)?,
            test: e.take("test_fraction", 0.1)?,
        };
        let split_seed = e.take("split_seed", 0u64)?;
        let rewards = RewardMap { click: e.take("reward_click", 0.2)?, purchase: e.take("reward_purchase", 1.0)? };
        check(rewards.click >= 0.0 && rewards.purchase >= 0.0, "rewards must be non-negative")?;

        let kind: ObjectiveKind = e.take("objective", ObjectiveKind::Lpi)?;
        let objective = ObjectiveConfig {
            kind,
            beta: e.take("beta", 1.0)?,
            lambda_td: e.take("lambda_td", 0.1)?,
            gamma: e.take("gamma", 0.0)?,
            clip: e.take("clip", 30.0)?,
            weight_cap: e.take("weight_cap", 1e4)?,
        };
        objective.validate().map_err(|err| Error::Config(err.to_string()))?;

        let adam = AdamConfig {
            learning_rate: e.take("learning_rate", 1e-3)?,
            beta1: e.take("adam_beta1", 0.9)?,
            beta2: e.take("adam_beta2", 0.999)?,
            epsilon: e.take("adam_epsilon", 1e-8)?,
        };
        check(adam.learning_rate > 0.0, "learning_rate must be positive")?;
        check((0.0..1.0).contains(&adam.beta1) && (0.0..1.0).contains(&adam.beta2), "Adam betas must lie in [0, 1)")?;
        check(adam.epsilon > 0.0, "adam_epsilon must be positive")?;

        let epochs = e.take("epochs", 10usize)?;
        let train = TrainConfig {
            embedding_dim: e.take("embedding_dim", 64usize)?,
            recency: e.take("recency", 0.8)?,
            tie_weights: e.take("tie_weights", true)?,
            objective,
            adam,
            batch_size: e.take("batch_size", 256usize)?,
            epochs,
            loss_window: e.take("loss_window", 50usize)?,
            target_refresh: e.take("target_refresh", 500usize)?,
            seed: e.take("seed", 0u64)?,
        };
        check(train.embedding_dim > 0, "embedding_dim must be positive")?;
        check((0.0..=1.0).contains(&train.recency), "recency must lie in [0, 1]")?;
        train.validate().map_err(|err| Error::Config(err.to_string()))?;
        let logging_epochs = e.take("logging_epochs", epochs.max(1))?;

        let eval_ks = match e.take_opt("eval_ks") {
            None => vec![5, 10, 20],
            Some((line, raw)) => raw
                .split(',')
                .map(|s| s.trim().parse::<usize>().ok().filter(|k| *k > 0))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| Error::Config(format!("line {line}: eval_ks must be positive integers")))?,
        };
        let divergence_cap = e.take("divergence_cap", 50_000usize)?;
        check(divergence_cap > 0, "divergence_cap must be positive")?;

        let impute = e.take("impute", false)?;
        let mf = MfConfig {
            factors: e.take("mf_factors", 8usize)?,
            lambda: e.take("mf_lambda", 0.1)?,
            missing_target: e.take("mf_missing_target", 0.25)?,
            missing_weight: e.take("mf_missing_weight", 0.05)?,
            epochs: e.take("mf_epochs", 10usize)?,
            seed: train.seed,
        };
        check(mf.factors > 0, "mf_factors must be positive")?;
        check(mf.missing_weight > 0.0 && mf.missing_weight <= 1.0, "mf_missing_weight must lie in (0, 1]")?;
        check(mf.lambda >= 0.0, "mf_lambda must be non-negative")?;

        let output_dir = resolve(&e.take("output_dir", "runs".to_string())?);

        if let Some((key, (line, _))) = e.map.iter().next() {
            return Err(Error::Config(format!("line {line}: unknown key {key}")));
        }
        Ok(Config {
            source,
            preprocess,
            fractions,
            split_seed,
            rewards,
            train,
            logging_epochs,
            eval_ks,
            divergence_cap,
            impute,
            mf,
            output_dir,
        })
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            ks: self.eval_ks.clone(),
            divergence_cap: self.divergence_cap,
            seed: self.train.seed,
            reward_purchase: self.rewards.purchase,
            reward_click: self.rewards.click,
            max_length: self.preprocess.max_length,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let c = Config::parse(
            "data_path = d.csv\nbeta = 0.5\n# comment\n\nobjective = sqn\neval_ks = 1, 3\n",
            Path::new("/x"),
        )
        .unwrap();
        assert_eq!(c.source, DataSource::Csv(PathBuf::from("/x/d.csv")));
        assert_eq!(c.train.objective.beta, 0.5);
        assert_eq!(c.train.objective.kind, ObjectiveKind::Sqn);
        assert_eq!(c.eval_ks, vec![1, 3]);
        assert_eq!(c.train.target_refresh, 500);
        assert_eq!(c.rewards, RewardMap::default());
        assert_eq!(c.output_dir, PathBuf::from("/x/runs"));
    }

    #[test]
    fn rejects_bad_input() {
        let base = Path::new(".");
        assert!(Config::parse("data_path = a\nbogus = 1\n", base).is_err());
        assert!(Config::parse("data_path = a\nbeta = 1\nbeta = 2\n", base).is_err());
        assert!(Config::parse("data_path = a\nbeta = -1\n", base).is_err());
        assert!(Config::parse("data_path = a\ngamma = 1\n", base).is_err());
        assert!(Config::parse("data_path = a\nobjective = nope\n", base).is_err());
        assert!(Config::parse("beta = 1\n", base).is_err());
        assert!(Config::parse("data_path = a\nworld_path = b\n", base).is_err());
        assert!(Config::parse("data_path = a\nlearning_rate = 0\n", base).is_err());
        assert!(Config::parse("data_path = a\njust a line\n", base).is_err());
        let err = Config::parse("data_path = a\nbatch_size = many\n", base).unwrap_err();
        assert!(err.is_validation());
    }
}
