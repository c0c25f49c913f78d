//! Training objectives: weighted cross-entropies (plain, reward-weighted,
//! exponentiated-advantage, importance-corrected, return-weighted,
//! Q-weighted), the double Q-learning TD loss, and their composite.
//!
//! Every per-example weight and every TD target is computed from a detached
//! forward pass and then held constant while differentiating.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{ItemId, TrainingExample};
use crate::encoder::Gradients;
use crate::error::{Error, Result};
use crate::estimators::TabularInstance;
use crate::policy::{argmax, ContextPolicy, Forward, PolicyModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ObjectiveKind {
    /// Unweighted cross-entropy.
    Ce,
    /// Reward-weighted cross-entropy.
    RewardCe,
    /// Cross-entropy weighted by `exp(A / beta)` with `A` from the Q head.
    Lpi,
    /// Cross-entropy weighted by the clipped ratio `pi / mu` times reward.
    IpsCe,
    /// Cross-entropy weighted by reward-to-go.
    Pg,
    /// Cross-entropy weighted by the clipped ratio times reward-to-go.
    IpsPg,
    /// Unweighted cross-entropy plus TD loss.
    Sqn,
    /// Q-weighted cross-entropy plus TD loss.
    Sac,
}

impl ObjectiveKind {
    pub const ALL: [ObjectiveKind; 8] = [
        ObjectiveKind::Ce,
        ObjectiveKind::RewardCe,
        ObjectiveKind::Lpi,
        ObjectiveKind::IpsCe,
        ObjectiveKind::Pg,
        ObjectiveKind::IpsPg,
        ObjectiveKind::Sqn,
        ObjectiveKind::Sac,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ObjectiveKind::Ce => "ce",
            ObjectiveKind::RewardCe => "reward_ce",
            ObjectiveKind::Lpi => "lpi",
            ObjectiveKind::IpsCe => "ips_ce",
            ObjectiveKind::Pg => "pg",
            ObjectiveKind::IpsPg => "ips_pg",
            ObjectiveKind::Sqn => "sqn",
            ObjectiveKind::Sac => "sac",
        }
    }

    pub fn code(self) -> u8 {
        ObjectiveKind::ALL.iter().position(|&k| k == self).unwrap() as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        ObjectiveKind::ALL.get(code as usize).copied()
    }

    /// Whether the policy term needs the logging-policy estimate.
    pub fn needs_logging_policy(self) -> bool {
        matches!(self, ObjectiveKind::Lpi | ObjectiveKind::IpsCe | ObjectiveKind::IpsPg)
    }

    /// Whether the TD term participates (reward-weighted and IPS-corrected
    /// cross-entropies, and plain CE, train the policy head only).
    pub fn uses_td(self) -> bool {
        !matches!(self, ObjectiveKind::Ce | ObjectiveKind::RewardCe | ObjectiveKind::IpsCe)
    }
}

impl fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ObjectiveKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ObjectiveKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::invalid(format!("unknown objective kind {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    pub kind: ObjectiveKind,
    /// KL multiplier.
    pub beta: f64,
    /// Weight of the TD loss.
    pub lambda_td: f64,
    pub gamma: f64,
    /// Importance-ratio clipping threshold.
    pub clip: f64,
    /// Upper bound on `exp(A / beta)`.
    pub weight_cap: f64,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig { kind: ObjectiveKind::Lpi, beta: 1.0, lambda_td: 0.1, gamma: 0.0, clip: 30.0, weight_cap: 1e4 }
    }
}

impl ObjectiveConfig {
    pub fn with_kind(kind: ObjectiveKind) -> Self {
        ObjectiveConfig { kind, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) {
            return Err(Error::invalid("beta must be positive"));
        }
        if !(self.lambda_td >= 0.0) || !self.lambda_td.is_finite() {
            return Err(Error::invalid("lambda_td must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::invalid("gamma must lie in [0, 1)"));
        }
        if !(self.clip > 0.0) {
            return Err(Error::invalid("clip must be positive"));
        }
        if !(self.weight_cap > 0.0) {
            return Err(Error::invalid("weight cap must be positive"));
        }
        Ok(())
    }

    /// TD multiplier actually applied for this kind.
    pub fn effective_lambda(&self) -> f64 {
        if self.kind.uses_td() {
            self.lambda_td
        } else {
            0.0
        }
    }
}

/// Loss value and gradients for one batch.
#[derive(Clone, Debug)]
pub struct LossBatch {
    pub loss: f64,
    pub policy_loss: f64,
    pub td_loss: f64,
    /// Per-example policy weights (constants under differentiation).
    pub weights: Vec<f64>,
    pub gradients: Gradients,
    pub count: usize,
}

/// Weights and TD targets frozen at the current parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct FrozenTerms {
    pub weights: Vec<f64>,
    pub td_targets: Option<Vec<f64>>,
    pub lambda: f64,
}

fn forwards(model: &PolicyModel, batch: &[TrainingExample]) -> Result<Vec<Forward>> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    batch.iter().map(|e| model.forward(&e.context)).collect()
}

fn accumulate(
    model: &PolicyModel,
    batch: &[TrainingExample],
    fwds: &[Forward],
    frozen: &FrozenTerms,
) -> Result<LossBatch> {
    let n = batch.len() as f64;
    if frozen.weights.len() != batch.len() {
        return Err(Error::invalid("weight count does not match batch"));
    }
    let mut grads = model.store().zero_gradients();
    let mut policy_loss = 0.0;
    let mut td_loss = 0.0;
    let mut dlogits = vec![0.0; model.catalog_size()];
    for (i, (ex, fwd)) in batch.iter().zip(fwds).enumerate() {
        let a = ex.action.index();
        let w = frozen.weights[i];
        let dist = fwd.distribution();
        policy_loss -= w * dist.log_probs[a] / n;
        let has_policy = w != 0.0;
        if has_policy {
            for (g, lp) in dlogits.iter_mut().zip(&dist.log_probs) {
                *g = w * lp.exp() / n;
            }
            dlogits[a] -= w / n;
        }
        let mut dq = Vec::new();
        if let Some(targets) = &frozen.td_targets {
            let diff = fwd.q[a] - targets[i];
            td_loss += diff * diff / n;
            if frozen.lambda != 0.0 {
                dq.push((a, frozen.lambda * 2.0 * diff / n));
            }
        }
        if has_policy || !dq.is_empty() {
            model.backward(fwd, has_policy.then_some(dlogits.as_slice()), &dq, &mut grads)?;
        }
    }
    let loss = policy_loss + frozen.lambda * td_loss;
    if !loss.is_finite() {
        return Err(Error::TrainingDiverged(format!("non-finite loss {loss}")));
    }
    Ok(LossBatch { loss, policy_loss, td_loss, weights: frozen.weights.clone(), gradients: grads, count: batch.len() })
}

/// `-(1/n) sum w_i log pi(a_i | x_i)` with fixed weights.
pub fn weighted_ce(model: &PolicyModel, batch: &[TrainingExample], weights: &[f64]) -> Result<LossBatch> {
    let fwds = forwards(model, batch)?;
    accumulate(model, batch, &fwds, &FrozenTerms { weights: weights.to_vec(), td_targets: None, lambda: 0.0 })
}

pub fn ce_loss(model: &PolicyModel, batch: &[TrainingExample]) -> Result<LossBatch> {
    weighted_ce(model, batch, &vec![1.0; batch.len()])
}

pub fn reward_weighted_ce(model: &PolicyModel, batch: &[TrainingExample]) -> Result<LossBatch> {
    weighted_ce(model, batch, &reward_weights(batch)?)
}

fn reward_weights(batch: &[TrainingExample]) -> Result<Vec<f64>> {
    batch
        .iter()
        .map(
            |e| {
                if e.reward >= 0.0 {
                    Ok(e.reward)
                } else {
                    Err(Error::invalid(format!("negative reward {}", e.reward)))
                }
            },
        )
        .collect()
}

fn centered(q: &[f64], mu: &[f64], action: usize) -> f64 {
    q[action] - q.iter().zip(mu).map(|(qv, p)| qv * p).sum::<f64>()
}

/// `Q(x, a) - sum_a' mu(a'|x) Q(x, a')`, with the Q head read as a constant.
pub fn advantage_from_q(
    model: &PolicyModel,
    logging: &dyn ContextPolicy,
    context: &[ItemId],
    action: ItemId,
) -> Result<f64> {
    let q = model.q_values(context)?.q;
    let mu = logging.probs(context)?;
    Ok(centered(&q, &mu, action.index()))
}

/// `exp(advantage / beta)` clamped to `[0, cap]`.
pub fn lpi_weight(advantage: f64, beta: f64, cap: f64) -> f64 {
    let w = (advantage / beta).exp();
    if w.is_nan() {
        cap
    } else {
        w.clamp(0.0, cap)
    }
}

pub fn lpi_loss(
    model: &PolicyModel,
    logging: &dyn ContextPolicy,
    batch: &[TrainingExample],
    beta: f64,
    weight_cap: f64,
) -> Result<LossBatch> {
    let cfg = ObjectiveConfig { kind: ObjectiveKind::Lpi, beta, lambda_td: 0.0, weight_cap, ..Default::default() };
    let fwds = forwards(model, batch)?;
    let weights = policy_weights(&cfg, batch, &fwds, Some(logging))?;
    accumulate(model, batch, &fwds, &FrozenTerms { weights, td_targets: None, lambda: 0.0 })
}

pub fn ips_ce_loss(
    model: &PolicyModel,
    logging: &dyn ContextPolicy,
    batch: &[TrainingExample],
    clip: f64,
) -> Result<LossBatch> {
    let cfg = ObjectiveConfig { kind: ObjectiveKind::IpsCe, clip, lambda_td: 0.0, ..Default::default() };
    let fwds = forwards(model, batch)?;
    let weights = policy_weights(&cfg, batch, &fwds, Some(logging))?;
    accumulate(model, batch, &fwds, &FrozenTerms { weights, td_targets: None, lambda: 0.0 })
}

fn clipped_ratio(fwd: &Forward, ex: &TrainingExample, logging: &dyn ContextPolicy, clip: f64) -> Result<f64> {
    let a = ex.action.index();
    let mu = logging.probs(&ex.context)?[a];
    if !(mu > 0.0) {
        return Err(Error::SupportViolation { context: format!("{:?}", ex.context), action: a });
    }
    let pi = fwd.distribution().log_probs[a].exp();
    Ok((pi / mu).min(clip))
}

fn policy_weights(
    cfg: &ObjectiveConfig,
    batch: &[TrainingExample],
    fwds: &[Forward],
    logging: Option<&dyn ContextPolicy>,
) -> Result<Vec<f64>> {
    let need_logging =
        || logging.ok_or_else(|| Error::invalid(format!("objective {} needs a logging-policy estimate", cfg.kind)));
    match cfg.kind {
        ObjectiveKind::Ce | ObjectiveKind::Sqn => Ok(vec![1.0; batch.len()]),
        ObjectiveKind::RewardCe => reward_weights(batch),
        ObjectiveKind::Pg => Ok(batch.iter().map(|e| e.return_to_go).collect()),
        ObjectiveKind::Sac => Ok(batch.iter().zip(fwds).map(|(e, f)| f.q[e.action.index()]).collect()),
        ObjectiveKind::Lpi => {
            let logging = need_logging()?;
            batch
                .iter()
                .zip(fwds)
                .map(|(e, f)| {
                    let mu = logging.probs(&e.context)?;
                    Ok(lpi_weight(centered(&f.q, &mu, e.action.index()), cfg.beta, cfg.weight_cap))
                })
                .collect()
        }
        ObjectiveKind::IpsCe => {
            let logging = need_logging()?;
            let rewards = reward_weights(batch)?;
            batch
                .iter()
                .zip(fwds)
                .zip(rewards)
                .map(|((e, f), r)| Ok(clipped_ratio(f, e, logging, cfg.clip)? * r))
                .collect()
        }
        ObjectiveKind::IpsPg => {
            let logging = need_logging()?;
            batch.iter().zip(fwds).map(|(e, f)| Ok(clipped_ratio(f, e, logging, cfg.clip)? * e.return_to_go)).collect()
        }
    }
}

/// Discounted reward-to-go `G_t = r_t + gamma * G_{t+1}` for examples listed
/// in sequence order. Resets at terminal examples and sequence boundaries.
pub fn reward_to_go(examples: &[TrainingExample], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; examples.len()];
    let mut acc = 0.0;
    for i in (0..examples.len()).rev() {
        let e = &examples[i];
        let boundary = e.terminal || examples.get(i + 1).is_none_or(|next| next.sequence != e.sequence);
        acc = if boundary { e.reward } else { e.reward + gamma * acc };
        out[i] = acc;
    }
    out
}

pub fn assign_reward_to_go(examples: &mut [TrainingExample], gamma: f64) {
    let g = reward_to_go(examples, gamma);
    for (e, v) in examples.iter_mut().zip(g) {
        e.return_to_go = v;
    }
}

/// Double Q-learning target: the online values pick the next action, the
/// target values score it.
pub fn double_q_target(reward: f64, terminal: bool, gamma: f64, online_next: &[f64], target_next: &[f64]) -> f64 {
    if terminal || gamma == 0.0 {
        reward
    } else {
        reward + gamma * target_next[argmax(online_next)]
    }
}

pub fn td_targets(
    model: &PolicyModel,
    target: &PolicyModel,
    batch: &[TrainingExample],
    gamma: f64,
) -> Result<Vec<f64>> {
    batch
        .iter()
        .map(|e| {
            if e.terminal || gamma == 0.0 {
                return Ok(e.reward);
            }
            let online = model.q_values(&e.next_context)?.q;
            let tgt = target.q_values(&e.next_context)?.q;
            Ok(double_q_target(e.reward, false, gamma, &online, &tgt))
        })
        .collect()
}

/// `(1/m) sum (Q(x_t, a_t) - y_t)^2` with double Q-learning targets.
pub fn td_q_loss(
    model: &PolicyModel,
    target: &PolicyModel,
    batch: &[TrainingExample],
    gamma: f64,
) -> Result<LossBatch> {
    let fwds = forwards(model, batch)?;
    let targets = td_targets(model, target, batch, gamma)?;
    let frozen = FrozenTerms { weights: vec![0.0; batch.len()], td_targets: Some(targets), lambda: 1.0 };
    accumulate(model, batch, &fwds, &frozen)
}

/// Evaluates every weight and TD target for `cfg` at the current parameters.
pub fn freeze_terms(
    model: &PolicyModel,
    target: &PolicyModel,
    logging: Option<&dyn ContextPolicy>,
    batch: &[TrainingExample],
    cfg: &ObjectiveConfig,
) -> Result<FrozenTerms> {
    let fwds = forwards(model, batch)?;
    freeze_from(model, target, logging, batch, &fwds, cfg)
}

fn freeze_from(
    model: &PolicyModel,
    target: &PolicyModel,
    logging: Option<&dyn ContextPolicy>,
    batch: &[TrainingExample],
    fwds: &[Forward],
    cfg: &ObjectiveConfig,
) -> Result<FrozenTerms> {
    cfg.validate()?;
    let weights = policy_weights(cfg, batch, fwds, logging)?;
    let lambda = cfg.effective_lambda();
    let td_targets = if lambda > 0.0 { Some(td_targets(model, target, batch, cfg.gamma)?) } else { None };
    Ok(FrozenTerms { weights, td_targets, lambda })
}

/// Loss and gradients with weights and targets held fixed.
pub fn loss_with_frozen(model: &PolicyModel, batch: &[TrainingExample], frozen: &FrozenTerms) -> Result<LossBatch> {
    let fwds = forwards(model, batch)?;
    accumulate(model, batch, &fwds, frozen)
}

/// Policy term for `cfg.kind` plus `lambda * td_q_loss` where the kind uses
/// the TD head.
pub fn composite_loss(
    model: &PolicyModel,
    target: &PolicyModel,
    logging: Option<&dyn ContextPolicy>,
    batch: &[TrainingExample],
    cfg: &ObjectiveConfig,
) -> Result<LossBatch> {
    let fwds = forwards(model, batch)?;
    let frozen = freeze_from(model, target, logging, batch, &fwds, cfg)?;
    accumulate(model, batch, &fwds, &frozen)
}

/// Tabular action-value function, row-major `[state][action]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularQ {
    pub n_states: usize,
    pub n_actions: usize,
    pub q: Vec<f64>,
}

impl TabularQ {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        TabularQ { n_states, n_actions, q: vec![0.0; n_states * n_actions] }
    }

    pub fn row(&self, state: usize) -> &[f64] {
        &self.q[state * self.n_actions..(state + 1) * self.n_actions]
    }

    pub fn get(&self, state: usize, action: usize) -> f64 {
        self.q[state * self.n_actions + action]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TabularTransition {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    /// `None` marks a terminal transition.
    pub next_state: Option<usize>,
    /// Sampling weight of the transition in the batch.
    pub weight: f64,
}

/// One gradient step of the weighted TD loss on a tabular Q function.
/// Returns the loss before the step.
pub fn tabular_td_step(
    online: &mut TabularQ,
    target: &TabularQ,
    batch: &[TabularTransition],
    gamma: f64,
    learning_rate: f64,
) -> f64 {
    let total: f64 = batch.iter().map(|t| t.weight).sum();
    let mut grad = vec![0.0; online.q.len()];
    let mut loss = 0.0;
    for t in batch {
        let y = match t.next_state {
            None => t.reward,
            Some(s) => double_q_target(t.reward, false, gamma, online.row(s), target.row(s)),
        };
        let diff = online.get(t.state, t.action) - y;
        loss += t.weight * diff * diff / total;
        grad[t.state * online.n_actions + t.action] += 2.0 * t.weight * diff / total;
    }
    online.q.iter_mut().zip(&grad).for_each(|(q, g)| *q -= learning_rate * g);
    loss
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TdSchedule {
    pub learning_rate: f64,
    /// Hard target refresh every this many steps.
    pub target_refresh: usize,
    pub steps: usize,
}

impl Default for TdSchedule {
    fn default() -> Self {
        TdSchedule { learning_rate: 1.0, target_refresh: 25, steps: 20_000 }
    }
}

/// Double Q-learning on the full expected-transition batch of a tabular MDP:
/// every `(x, a, x')` with `P(x' | x, a) > 0`, weighted by that probability.
pub fn fit_tabular_double_q(instance: &TabularInstance, schedule: &TdSchedule) -> Result<TabularQ> {
    let transitions =
        instance.transitions.as_ref().ok_or_else(|| Error::invalid("instance has no transition model"))?;
    let gamma = instance.gamma.unwrap_or(0.0);
    let (nx, na) = (instance.n_contexts(), instance.n_actions());
    let mut batch = Vec::new();
    for x in 0..nx {
        for a in 0..na {
            for (x2, &p) in transitions[x][a].iter().enumerate() {
                if p > 0.0 {
                    batch.push(TabularTransition {
                        state: x,
                        action: a,
                        reward: instance.rewards[x][a],
                        next_state: Some(x2),
                        weight: p,
                    });
                }
            }
        }
    }
    let mut online = TabularQ::zeros(nx, na);
    let mut target = online.clone();
    for step in 0..schedule.steps {
        if step % schedule.target_refresh.max(1) == 0 {
            target = online.clone();
        }
        tabular_td_step(&mut online, &target, &batch, gamma, schedule.learning_rate);
    }
    if online.q.iter().any(|q| !q.is_finite()) {
        return Err(Error::TrainingDiverged("tabular Q values became non-finite".into()));
    }
    Ok(online)
}
