//! Weighted matrix-factorization reward imputation and synthetic worlds
//! with exact ground truth.

use nalgebra::{DMatrix, DVector};
use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Event, Interaction, ItemId, SessionSequence, Split};
use crate::error::{Error, Result};
use crate::estimators::{tabular_value, Estimate, TabularInstance, TabularPolicy};
use crate::eval::RewardImputer;
use crate::policy::ContextPolicy;

/// One observed (user, item, reward) cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RatingCell {
    pub user: usize,
    pub item: ItemId,
    pub reward: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MfConfig {
    pub factors: usize,
    pub lambda: f64,
    /// Target for unobserved cells, on the reward scale.
    pub missing_target: f64,
    /// Weight of unobserved cells.
    pub missing_weight: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for MfConfig {
    fn default() -> Self {
        MfConfig { factors: 8, lambda: 0.1, missing_target: 0.25, missing_weight: 0.05, epochs: 10, seed: 0 }
    }
}

/// Low-rank reward model `r_hat(u, i) = b + U_u . V_i`, with `b` fixed to the
/// missing-cell target.
#[derive(Clone, Debug, PartialEq)]
pub struct ImputationModel {
    pub user_factors: Vec<Vec<f64>>,
    pub item_factors: Vec<Vec<f64>>,
    pub global_bias: f64,
    pub config: MfConfig,
    /// Training objective after initialization and after each epoch.
    pub objective_history: Vec<f64>,
}

impl ImputationModel {
    pub fn n_users(&self) -> usize {
        self.user_factors.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_factors.len()
    }

    /// Unclamped prediction.
    pub fn predict(&self, user: usize, item: ItemId) -> Result<f64> {
        let u = self.user_factors.get(user).ok_or_else(|| Error::invalid(format!("user {user} out of range")))?;
        let v = self
            .item_factors
            .get(item.index())
            .ok_or_else(|| Error::invalid(format!("item {} out of range", item.index())))?;
        Ok(self.global_bias + u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>())
    }
}

/// Prediction clamped to the reward range `[0, 1]`.
pub fn impute_reward(model: &ImputationModel, user: usize, item: ItemId) -> Result<f64> {
    Ok(model.predict(user, item)?.clamp(0.0, 1.0))
}

impl RewardImputer for ImputationModel {
    fn impute(&self, user: usize, item: ItemId) -> Result<f64> {
        impute_reward(self, user, item)
    }
}

/// Observed cells of every sequence in `dataset`: user = sequence index.
/// Repeated (user, item) pairs keep the latest reward.
pub fn rating_cells(dataset: &Dataset) -> Vec<RatingCell> {
    let mut out = Vec::new();
    for (u, seq) in dataset.sequences.iter().enumerate() {
        let mut latest: std::collections::BTreeMap<usize, f64> = std::collections::BTreeMap::new();
        for it in &seq.interactions {
            latest.insert(it.item.index(), it.reward);
        }
        out.extend(latest.into_iter().map(|(i, r)| RatingCell { user: u, item: ItemId::new(i), reward: r }));
    }
    out
}

struct Cells {
    by_user: Vec<Vec<(usize, f64)>>,
    by_item: Vec<Vec<(usize, f64)>>,
}

fn objective(cells: &Cells, u: &[DVector<f64>], v: &[DVector<f64>], cfg: &MfConfig) -> f64 {
    // Missing cells: w * sum over all cells of (u.v)^2 minus the observed ones.
    let f = cfg.factors;
    let mut gu = DMatrix::<f64>::zeros(f, f);
    u.iter().for_each(|x| gu += x * x.transpose());
    let mut gv = DMatrix::<f64>::zeros(f, f);
    v.iter().for_each(|x| gv += x * x.transpose());
    let mut total = cfg.missing_weight * gu.component_mul(&gv).sum();
    for (ui, row) in cells.by_user.iter().enumerate() {
        for &(i, t) in row {
            let p = u[ui].dot(&v[i]);
            total += (t - p).powi(2) - cfg.missing_weight * p * p;
        }
    }
    let reg: f64 = u.iter().chain(v).map(|x| x.norm_squared()).sum();
    total + cfg.lambda * reg
}

fn solve_side(rows: &[Vec<(usize, f64)>], fixed: &[DVector<f64>], cfg: &MfConfig) -> Result<Vec<DVector<f64>>> {
    let f = cfg.factors;
    let mut gram = DMatrix::<f64>::zeros(f, f);
    fixed.iter().for_each(|x| gram += x * x.transpose());
    let base = gram * cfg.missing_weight + DMatrix::<f64>::identity(f, f) * cfg.lambda;
    rows.iter()
        .map(|obs| {
            let mut a = base.clone();
            let mut b = DVector::<f64>::zeros(f);
            for &(j, t) in obs {
                let y = &fixed[j];
                a += y * y.transpose() * (1.0 - cfg.missing_weight);
                b += y * t;
            }
            a.clone()
                .cholesky()
                .map(|c| c.solve(&b))
                .or_else(|| a.lu().solve(&b))
                .ok_or_else(|| Error::TrainingDiverged("singular ALS system".into()))
        })
        .collect()
}

/// Weighted ALS over the full user-item matrix. Observed cells have weight 1
/// and target `r`; unobserved cells have weight `w_m` and target `r_m`.
pub fn fit_weighted_mf(
    cells: &[RatingCell],
    n_users: usize,
    n_items: usize,
    cfg: &MfConfig,
) -> Result<ImputationModel> {
    if cells.is_empty() {
        return Err(Error::invalid("no ratings to factorize"));
    }
    if cfg.factors == 0 {
        return Err(Error::invalid("factor count must be positive"));
    }
    if !(cfg.missing_weight > 0.0 && cfg.missing_weight <= 1.0) {
        return Err(Error::invalid("missing-cell weight must lie in (0, 1]"));
    }
    if !(cfg.lambda >= 0.0) {
        return Err(Error::invalid("regularization must be non-negative"));
    }
    let mut by_user = vec![Vec::new(); n_users];
    let mut by_item = vec![Vec::new(); n_items];
    for c in cells {
        if c.user >= n_users || c.item.index() >= n_items {
            return Err(Error::invalid(format!("cell ({}, {}) out of range", c.user, c.item.index())));
        }
        let t = c.reward - cfg.missing_target;
        by_user[c.user].push((c.item.index(), t));
        by_item[c.item.index()].push((c.user, t));
    }
    let data = Cells { by_user, by_item };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut init = |n: usize| -> Vec<DVector<f64>> {
        (0..n).map(|_| DVector::from_fn(cfg.factors, |_, _| rng.random_range(-0.1..0.1))).collect()
    };
    let mut u = init(n_users);
    let mut v = init(n_items);
    let mut history = vec![objective(&data, &u, &v, cfg)];
    for _ in 0..cfg.epochs {
        u = solve_side(&data.by_user, &v, cfg)?;
        v = solve_side(&data.by_item, &u, cfg)?;
        let obj = objective(&data, &u, &v, cfg);
        if !obj.is_finite() {
            return Err(Error::TrainingDiverged("matrix factorization produced non-finite factors".into()));
        }
        history.push(obj);
    }
    let to_vecs = |x: Vec<DVector<f64>>| x.into_iter().map(|d| d.iter().copied().collect()).collect();
    Ok(ImputationModel {
        user_factors: to_vecs(u),
        item_factors: to_vecs(v),
        global_bias: cfg.missing_target,
        config: *cfg,
        objective_history: history,
    })
}

/// Shape parameters of a random world.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub n_contexts: usize,
    pub catalog_size: usize,
    pub gamma: f64,
    /// How strongly the logging policy follows the reward.
    pub logging_skill: f64,
    /// Spread of the logging policy's reward-independent preferences.
    pub logging_noise: f64,
    /// Exponent applied to uniform draws; larger values make high rewards rarer.
    pub reward_sharpness: f64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        WorldSpec {
            n_contexts: 32,
            catalog_size: 50,
            gamma: 0.0,
            logging_skill: 2.0,
            logging_noise: 2.0,
            reward_sharpness: 2.0,
        }
    }
}

/// Tabular world whose states are item buckets: item `i` belongs to state
/// `i mod n_contexts`, and choosing item `a` moves the session to the state
/// of `a`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticWorld {
    pub instance: TabularInstance,
    pub catalog_size: usize,
    pub seed: u64,
}

fn normalize(v: Vec<f64>) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

impl SyntheticWorld {
    pub fn random(spec: &WorldSpec, seed: u64) -> Result<Self> {
        let (nx, c) = (spec.n_contexts, spec.catalog_size);
        if nx == 0 || c < nx {
            return Err(Error::invalid("a world needs 1 <= n_contexts <= catalog_size"));
        }
        if !(0.0..1.0).contains(&spec.gamma) {
            return Err(Error::invalid("gamma must lie in [0, 1)"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let context_dist = normalize((0..nx).map(|_| rng.random_range(0.5..1.5)).collect());
        let rewards: Vec<Vec<f64>> = (0..nx)
            .map(|_| (0..c).map(|_| rng.random_range(0.0f64..1.0).powf(spec.reward_sharpness)).collect())
            .collect();
        let logging_policy = rewards
            .iter()
            .map(|r| {
                let logits: Vec<f64> = r
                    .iter()
                    .map(|rv| spec.logging_skill * rv + spec.logging_noise * rng.random_range(-1.0..1.0))
                    .collect();
                let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                normalize(logits.into_iter().map(|l| (l - m).exp()).collect())
            })
            .collect();
        let mut world = SyntheticWorld {
            instance: TabularInstance { context_dist, logging_policy, rewards, transitions: None, gamma: None },
            catalog_size: c,
            seed,
        };
        if spec.gamma > 0.0 {
            world.instance.transitions = Some(
                (0..nx)
                    .map(|_| (0..c).map(|a| (0..nx).map(|y| if y == a % nx { 1.0 } else { 0.0 }).collect()).collect())
                    .collect(),
            );
            world.instance.gamma = Some(spec.gamma);
        }
        world.instance.validate()?;
        Ok(world)
    }

    pub fn n_contexts(&self) -> usize {
        self.instance.n_contexts()
    }

    pub fn state_of(&self, item: ItemId) -> usize {
        item.index() % self.n_contexts()
    }

    /// Items whose state is `x`.
    pub fn bucket(&self, x: usize) -> Vec<ItemId> {
        (x..self.catalog_size).step_by(self.n_contexts()).map(ItemId::new).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("world serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let w: SyntheticWorld = serde_json::from_str(text)?;
        w.instance.validate()?;
        if w.catalog_size < w.n_contexts() || w.instance.n_actions() != w.catalog_size {
            return Err(Error::invalid("world catalog does not match its instance"));
        }
        Ok(w)
    }

    /// Tabular view of a sequence policy: the policy row of state `x` is the
    /// average of `pi(. | [i])` over the items `i` of bucket `x`.
    pub fn project_policy(&self, policy: &dyn ContextPolicy) -> Result<TabularPolicy> {
        if policy.catalog_size() != self.catalog_size {
            return Err(Error::invalid("policy catalog differs from the world catalog"));
        }
        (0..self.n_contexts())
            .map(|x| {
                let items = self.bucket(x);
                let mut row = vec![0.0; self.catalog_size];
                for it in &items {
                    for (r, p) in row.iter_mut().zip(policy.probs(&[*it])?) {
                        *r += p / items.len() as f64;
                    }
                }
                Ok(normalize(row))
            })
            .collect()
    }

    /// Exact value of a sequence policy under the world.
    pub fn value_of(&self, policy: &dyn ContextPolicy) -> Result<f64> {
        tabular_value(&self.instance, &self.project_policy(policy)?)
    }
}

/// Sequence policy that reads a tabular policy at the state of the last
/// context item.
pub struct WorldPolicy<'a> {
    pub world: &'a SyntheticWorld,
    pub table: TabularPolicy,
}

impl ContextPolicy for WorldPolicy<'_> {
    fn catalog_size(&self) -> usize {
        self.world.catalog_size
    }

    fn log_probs(&self, context: &[ItemId]) -> Result<Vec<f64>> {
        let last = context.last().ok_or_else(|| Error::invalid("empty context has no world state"))?;
        Ok(self.table[self.world.state_of(*last)].iter().map(|p| p.ln()).collect())
    }
}

/// Samples sessions of `horizon` interactions. The first interaction is a
/// seed item drawn uniformly from the bucket of `x_0 ~ d`; every later one
/// is `a ~ mu(. | x)` with a Bernoulli reward of mean `r(x, a)` recorded as
/// a 5-star (reward 1) or 1-star (reward 0) rating.
pub fn generate_sessions(world: &SyntheticWorld, n_sessions: usize, horizon: usize, seed: u64) -> Result<Dataset> {
    if n_sessions == 0 {
        return Err(Error::invalid("n_sessions must be positive"));
    }
    if horizon < 2 {
        return Err(Error::invalid("horizon must be at least 2"));
    }
    let inst = &world.instance;
    let start = WeightedIndex::new(&inst.context_dist).map_err(|e| Error::invalid(e.to_string()))?;
    let rows = inst
        .logging_policy
        .iter()
        .map(|r| WeightedIndex::new(r).map_err(|e| Error::invalid(e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    let buckets: Vec<Vec<ItemId>> = (0..world.n_contexts()).map(|x| world.bucket(x)).collect();
    let mut sequences = Vec::with_capacity(n_sessions);
    for s in 0..n_sessions {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(s as u64);
        let mut x = start.sample(&mut rng);
        let first = buckets[x][rng.random_range(0..buckets[x].len())];
        let mut interactions = Vec::with_capacity(horizon);
        interactions.push(Interaction { item: first, event: Event::Rating(1), reward: 0.0, timestamp: 0 });
        for t in 1..horizon {
            let a = rows[x].sample(&mut rng);
            let hit = rng.random_bool(inst.rewards[x][a].clamp(0.0, 1.0));
            let (event, reward) = if hit { (Event::Rating(5), 1.0) } else { (Event::Rating(1), 0.0) };
            interactions.push(Interaction { item: ItemId::new(a), event, reward, timestamp: t as i64 });
            x = a % world.n_contexts();
        }
        sequences.push(SessionSequence { id: format!("s{s}"), interactions });
    }
    Ok(Dataset {
        splits: vec![Split::Train; n_sessions],
        sequences,
        catalog_size: world.catalog_size,
        item_ids: (0..world.catalog_size).map(|i| i.to_string()).collect(),
    })
}

/// Monte-Carlo value of a tabular policy using expected rewards, truncating
/// discounted rollouts once `gamma^t` falls below `1e-12`.
pub fn monte_carlo_value(
    world: &SyntheticWorld,
    policy: &[Vec<f64>],
    n_rollouts: usize,
    seed: u64,
) -> Result<Estimate> {
    if n_rollouts < 2 {
        return Err(Error::invalid("need at least two rollouts"));
    }
    let inst = &world.instance;
    let gamma = if inst.is_mdp() { inst.gamma.unwrap_or(0.0) } else { 0.0 };
    let start = WeightedIndex::new(&inst.context_dist).map_err(|e| Error::invalid(e.to_string()))?;
    let rows = policy
        .iter()
        .map(|r| WeightedIndex::new(r).map_err(|e| Error::invalid(e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let returns: Vec<f64> = (0..n_rollouts)
        .map(|_| {
            let mut x = start.sample(&mut rng);
            let (mut g, mut disc) = (0.0, 1.0);
            loop {
                let a = rows[x].sample(&mut rng);
                g += disc * inst.rewards[x][a];
                disc *= gamma;
                if disc < 1e-12 {
                    break g;
                }
                x = a % world.n_contexts();
            }
        })
        .collect();
    let n = n_rollouts as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(Estimate { value: mean, standard_error: (var / n).sqrt() })
}
