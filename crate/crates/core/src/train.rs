//! Minibatch training loop with Adam and a hard-refreshed target network.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Split, TrainingExample};
use crate::encoder::{adam_step, AdamConfig};
use crate::error::{Error, Result};
use crate::objectives::{assign_reward_to_go, composite_loss, ObjectiveConfig};
use crate::policy::{ContextPolicy, ModelConfig, PolicyModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub embedding_dim: usize,
    pub recency: f64,
    pub tie_weights: bool,
    pub objective: ObjectiveConfig,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    /// Number of trailing positions per sequence that contribute to the loss.
    pub loss_window: usize,
    /// Hard target-network copy every this many updates.
    pub target_refresh: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            embedding_dim: 64,
            recency: 0.8,
            tie_weights: true,
            objective: ObjectiveConfig::default(),
            adam: AdamConfig::default(),
            batch_size: 256,
            epochs: 10,
            loss_window: 50,
            target_refresh: 500,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn model_config(&self, catalog_size: usize) -> ModelConfig {
        let mut cfg = ModelConfig::new(catalog_size, self.embedding_dim, self.recency);
        cfg.tie_weights = self.tie_weights;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        self.objective.validate()?;
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        if self.loss_window == 0 {
            return Err(Error::invalid("loss_window must be positive"));
        }
        if self.target_refresh == 0 {
            return Err(Error::invalid("target_refresh must be positive"));
        }
        if !(self.adam.learning_rate > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        Ok(())
    }
}

/// Per-epoch averages over minibatches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub policy_loss: f64,
    pub td_loss: f64,
    pub updates: u64,
}

/// In-window training examples of a split, with reward-to-go filled in from
/// the full sequences.
pub fn training_examples(
    dataset: &Dataset,
    split: Split,
    loss_window: usize,
    gamma: f64,
) -> Result<Vec<TrainingExample>> {
    let mut all = dataset.examples(split, usize::MAX)?;
    assign_reward_to_go(&mut all, gamma);
    let mut windowed = dataset.examples(split, loss_window)?;
    for (w, a) in windowed.iter_mut().zip(&all) {
        w.return_to_go = a.return_to_go;
    }
    windowed.retain(|e| e.in_loss_window);
    Ok(windowed)
}

pub struct Trainer<'a> {
    model: PolicyModel,
    target: PolicyModel,
    logging: Option<&'a dyn ContextPolicy>,
    config: TrainConfig,
    examples: Vec<TrainingExample>,
    order: Vec<usize>,
    rng: ChaCha8Rng,
    updates: u64,
    epoch: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(
        model: PolicyModel,
        config: TrainConfig,
        examples: Vec<TrainingExample>,
        logging: Option<&'a dyn ContextPolicy>,
    ) -> Result<Self> {
        config.validate()?;
        if examples.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if config.objective.kind.needs_logging_policy() && logging.is_none() {
            return Err(Error::invalid(format!("objective {} needs a logging-policy estimate", config.objective.kind)));
        }
        let rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5348_5546);
        let order = (0..examples.len()).collect();
        Ok(Trainer { target: model.clone(), model, logging, config, examples, order, rng, updates: 0, epoch: 0 })
    }

    pub fn model(&self) -> &PolicyModel {
        &self.model
    }

    pub fn into_model(self) -> PolicyModel {
        self.model
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// One pass over the shuffled examples. On error the model keeps the
    /// parameters from the last successful update.
    pub fn run_epoch(&mut self) -> Result<EpochStats> {
        self.order.shuffle(&mut self.rng);
        let mut sums = (0.0, 0.0, 0.0);
        let mut batches = 0usize;
        let mut batch = Vec::with_capacity(self.config.batch_size);
        for chunk in self.order.chunks(self.config.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| self.examples[i].clone()));
            let lb = composite_loss(&self.model, &self.target, self.logging, &batch, &self.config.objective)?;
            adam_step(self.model.store_mut(), &lb.gradients, &self.config.adam)?;
            if !self.model.store().all_finite() {
                return Err(Error::TrainingDiverged("parameters became non-finite".into()));
            }
            self.updates += 1;
            if self.updates.is_multiple_of(self.config.target_refresh as u64) {
                self.target = self.model.clone();
            }
            sums.0 += lb.loss;
            sums.1 += lb.policy_loss;
            sums.2 += lb.td_loss;
            batches += 1;
        }
        self.epoch += 1;
        let n = batches as f64;
        Ok(EpochStats {
            epoch: self.epoch,
            loss: sums.0 / n,
            policy_loss: sums.1 / n,
            td_loss: sums.2 / n,
            updates: self.updates,
        })
    }
}

/// Trains a fresh model on the training split for `config.epochs` epochs.
pub fn train_policy(
    dataset: &Dataset,
    config: &TrainConfig,
    logging: Option<&dyn ContextPolicy>,
) -> Result<(PolicyModel, Vec<EpochStats>)> {
    let examples = training_examples(dataset, Split::Train, config.loss_window, config.objective.gamma)?;
    let model = PolicyModel::new(config.model_config(dataset.catalog_size), config.seed)?;
    let mut trainer = Trainer::new(model, config.clone(), examples, logging)?;
    let stats = (0..config.epochs).map(|_| trainer.run_epoch()).collect::<Result<Vec<_>>>()?;
    Ok((trainer.into_model(), stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Event, Interaction, ItemId, SessionSequence};
    use crate::estimators::estimate_logging_policy;
    use crate::objectives::ObjectiveKind;

    fn dataset(seqs: Vec<Vec<usize>>, catalog: usize) -> Dataset {
        let sequences: Vec<SessionSequence> = seqs
            .into_iter()
            .enumerate()
            .map(|(i, items)| SessionSequence {
                id: format!("s{i}"),
                interactions: items
                    .into_iter()
                    .enumerate()
                    .map(|(t, it)| Interaction {
                        item: ItemId::new(it),
                        event: Event::Click,
                        reward: 0.2,
                        timestamp: t as i64,
                    })
                    .collect(),
            })
            .collect();
        let n = sequences.len();
        Dataset {
            sequences,
            catalog_size: catalog,
            item_ids: (0..catalog).map(|i| i.to_string()).collect(),
            splits: vec![Split::Train; n],
        }
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            embedding_dim: 8,
            objective: ObjectiveConfig::with_kind(ObjectiveKind::Ce),
            adam: AdamConfig { learning_rate: 0.05, ..Default::default() },
            batch_size: 8,
            epochs: 60,
            ..Default::default()
        }
    }

    #[test]
    fn fixed_successor_is_learned() {
        let ds = dataset((0..20).map(|_| vec![0, 1]).collect(), 5);
        let est = estimate_logging_policy(&ds, &small_config()).unwrap();
        let p = est.probs(&[ItemId(0)]).unwrap();
        assert!(p[1] > 0.99, "{p:?}");
    }

    #[test]
    fn two_successors_split_evenly() {
        let ds = dataset((0..40).map(|i| vec![0, 1 + i % 2]).collect(), 4);
        let est = estimate_logging_policy(&ds, &small_config()).unwrap();
        let p = est.probs(&[ItemId(0)]).unwrap();
        assert!((p[1] - 0.5).abs() < 0.05 && (p[2] - 0.5).abs() < 0.05, "{p:?}");
    }

    #[test]
    fn training_is_deterministic() {
        let ds = dataset((0..30).map(|i| vec![i % 4, (i * 7) % 5, (i * 3) % 5]).collect(), 5);
        let mut cfg = small_config();
        cfg.epochs = 3;
        let (a, sa) = train_policy(&ds, &cfg, None).unwrap();
        let (b, sb) = train_policy(&ds, &cfg, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(sa, sb);
    }

    #[test]
    fn empty_train_split_is_an_error() {
        let mut ds = dataset(vec![vec![0, 1]], 3);
        ds.splits = vec![Split::Test];
        assert!(estimate_logging_policy(&ds, &small_config()).is_err());
    }

    #[test]
    fn logging_policy_required_for_lpi() {
        let ds = dataset(vec![vec![0, 1, 2]], 3);
        let mut cfg = small_config();
        cfg.objective.kind = ObjectiveKind::Lpi;
        assert!(train_policy(&ds, &cfg, None).is_err());
    }
}
