//! Off-policy value estimators and exact tabular oracles.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, ItemId, Split};
use crate::error::{Error, Result};
use crate::objectives::{ObjectiveConfig, ObjectiveKind};
use crate::policy::{ContextPolicy, PolicyModel};
use crate::train::{train_policy, TrainConfig};

/// Row-stochastic policy matrix `[context][action]`.
pub type TabularPolicy = Vec<Vec<f64>>;

const INSTANCE_TOL: f64 = 1e-12;
const POLICY_TOL: f64 = 1e-9;

/// Bandit (or, with transitions, MDP) instance with fully known dynamics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularInstance {
    pub context_dist: Vec<f64>,
    pub logging_policy: TabularPolicy,
    pub rewards: Vec<Vec<f64>>,
    /// `P(x' | x, a)` indexed `[x][a][x']`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transitions: Option<Vec<Vec<Vec<f64>>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
}

fn check_distribution(row: &[f64], tol: f64, what: &str) -> Result<()> {
    if row.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
        return Err(Error::invalid(format!("{what} has a negative or non-finite entry")));
    }
    let s: f64 = row.iter().sum();
    if (s - 1.0).abs() > tol {
        return Err(Error::invalid(format!("{what} sums to {s}, not 1")));
    }
    Ok(())
}

impl TabularInstance {
    pub fn n_contexts(&self) -> usize {
        self.context_dist.len()
    }

    pub fn n_actions(&self) -> usize {
        self.rewards.first().map_or(0, Vec::len)
    }

    pub fn is_mdp(&self) -> bool {
        self.transitions.is_some() && self.gamma.is_some_and(|g| g > 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let (nx, na) = (self.n_contexts(), self.n_actions());
        if nx == 0 || na == 0 {
            return Err(Error::invalid("instance needs at least one context and one action"));
        }
        check_distribution(&self.context_dist, INSTANCE_TOL, "context distribution")?;
        if self.logging_policy.len() != nx || self.rewards.len() != nx {
            return Err(Error::invalid("logging policy and rewards need one row per context"));
        }
        for x in 0..nx {
            if self.logging_policy[x].len() != na || self.rewards[x].len() != na {
                return Err(Error::invalid(format!("row {x} has the wrong number of actions")));
            }
            check_distribution(&self.logging_policy[x], INSTANCE_TOL, &format!("logging policy row {x}"))?;
            if self.rewards[x].iter().any(|r| !(*r >= 0.0) || !r.is_finite()) {
                return Err(Error::invalid(format!("reward row {x} has a negative or non-finite entry")));
            }
        }
        if let Some(g) = self.gamma {
            if !(0.0..1.0).contains(&g) {
                return Err(Error::invalid("gamma must lie in [0, 1)"));
            }
        }
        if let Some(p) = &self.transitions {
            if p.len() != nx {
                return Err(Error::invalid("transitions need one block per context"));
            }
            for (x, block) in p.iter().enumerate() {
                if block.len() != na {
                    return Err(Error::invalid(format!("transition block {x} has the wrong number of actions")));
                }
                for (a, row) in block.iter().enumerate() {
                    if row.len() != nx {
                        return Err(Error::invalid(format!("transition row ({x}, {a}) has the wrong length")));
                    }
                    check_distribution(row, INSTANCE_TOL, &format!("transition row ({x}, {a})"))?;
                }
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let inst: TabularInstance = serde_json::from_str(text)?;
        inst.validate()?;
        Ok(inst)
    }

    pub fn load(path: &Path) -> Result<Self> {
        TabularInstance::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("instance serializes")
    }

    fn check_policy(&self, policy: &[Vec<f64>]) -> Result<()> {
        if policy.len() != self.n_contexts() {
            return Err(Error::invalid("policy needs one row per context"));
        }
        for (x, row) in policy.iter().enumerate() {
            if row.len() != self.n_actions() {
                return Err(Error::invalid(format!("policy row {x} has the wrong number of actions")));
            }
            check_distribution(row, POLICY_TOL, &format!("policy row {x}"))?;
        }
        Ok(())
    }
}

/// One-step expected reward `sum_x d(x) sum_a pi(a|x) r(x, a)`, ignoring
/// any transition model.
pub fn bandit_value(instance: &TabularInstance, policy: &[Vec<f64>]) -> Result<f64> {
    instance.check_policy(policy)?;
    Ok(instance
        .context_dist
        .iter()
        .zip(policy)
        .zip(&instance.rewards)
        .map(|((d, pi), r)| d * pi.iter().zip(r).map(|(p, rv)| p * rv).sum::<f64>())
        .sum())
}

/// Expected reward `J(pi)`. For MDP instances this is the discounted value
/// of the start distribution, `d^T (I - gamma P_pi)^{-1} r_pi`.
pub fn tabular_value(instance: &TabularInstance, policy: &[Vec<f64>]) -> Result<f64> {
    if !instance.is_mdp() {
        return bandit_value(instance, policy);
    }
    instance.check_policy(policy)?;
    let v = state_values(instance, policy)?;
    Ok(instance.context_dist.iter().zip(v.iter()).map(|(d, v)| d * v).sum())
}

/// Discounted state values `V_pi` of an MDP instance.
pub fn state_values(instance: &TabularInstance, policy: &[Vec<f64>]) -> Result<Vec<f64>> {
    let p = instance.transitions.as_ref().ok_or_else(|| Error::invalid("instance has no transition model"))?;
    let gamma = instance.gamma.unwrap_or(0.0);
    let n = instance.n_contexts();
    let mut m = DMatrix::<f64>::identity(n, n);
    let mut r_pi = DVector::<f64>::zeros(n);
    for x in 0..n {
        for (a, &pa) in policy[x].iter().enumerate() {
            r_pi[x] += pa * instance.rewards[x][a];
            for x2 in 0..n {
                m[(x, x2)] -= gamma * pa * p[x][a][x2];
            }
        }
    }
    let v = m.lu().solve(&r_pi).ok_or_else(|| Error::invalid("Bellman system is singular"))?;
    Ok(v.iter().copied().collect())
}

/// Logged bandit triplet on a tabular instance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LoggedTriplet {
    pub context: usize,
    pub action: usize,
    pub reward: f64,
}

/// Estimate with its sample standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub standard_error: f64,
}

fn mean_and_se(values: &[f64]) -> Estimate {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 { values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    Estimate { value: mean, standard_error: (var / n).sqrt() }
}

/// `(1/n) sum min(pi/mu, clip) r_i`. Pass `f64::INFINITY` to disable
/// clipping.
pub fn ips_value_estimate(
    triplets: &[LoggedTriplet],
    target: &[Vec<f64>],
    logging: &[Vec<f64>],
    clip: f64,
) -> Result<Estimate> {
    if triplets.is_empty() {
        return Err(Error::invalid("no logged triplets"));
    }
    let terms = triplets
        .iter()
        .map(|t| {
            let mu = logging[t.context][t.action];
            if !(mu > 0.0) {
                return Err(Error::SupportViolation { context: t.context.to_string(), action: t.action });
            }
            Ok((target[t.context][t.action] / mu).min(clip) * t.reward)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(mean_and_se(&terms))
}

/// Direct-method value: average over logged contexts of
/// `sum_a pi(a|x) r_hat(x, a)`.
pub fn direct_method_value(triplets: &[LoggedTriplet], target: &[Vec<f64>], reward_model: &[Vec<f64>]) -> Result<f64> {
    if triplets.is_empty() {
        return Err(Error::invalid("no logged triplets"));
    }
    let total: f64 = triplets
        .iter()
        .map(|t| target[t.context].iter().zip(&reward_model[t.context]).map(|(p, r)| p * r).sum::<f64>())
        .sum();
    Ok(total / triplets.len() as f64)
}

/// Maximizer of `E_mu[r log pi]`: `pi(a|x) ∝ mu(a|x) r(x, a)`.
pub fn tabular_optimal_lmu(instance: &TabularInstance) -> Result<TabularPolicy> {
    instance
        .logging_policy
        .iter()
        .zip(&instance.rewards)
        .enumerate()
        .map(|(x, (mu, r))| {
            let w: Vec<f64> = mu.iter().zip(r).map(|(m, rv)| m * rv).collect();
            let z: f64 = w.iter().sum();
            if !(z > 0.0) {
                return Err(Error::DegenerateContext(x));
            }
            Ok(w.into_iter().map(|v| v / z).collect())
        })
        .collect()
}

/// Per-context baseline subtracted from rewards before exponentiation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Baseline {
    Zero,
    MaxReward,
    LoggingMean,
}

impl Baseline {
    fn value(self, mu: &[f64], r: &[f64]) -> f64 {
        match self {
            Baseline::Zero => 0.0,
            Baseline::MaxReward => r.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            Baseline::LoggingMean => mu.iter().zip(r).map(|(m, rv)| m * rv).sum(),
        }
    }
}

/// Maximizer of `J(pi) - beta E_d[KL(pi || mu)]`:
/// `pi(a|x) ∝ mu(a|x) exp((r(x, a) - g(x)) / beta)`.
pub fn tabular_optimal_lpi(instance: &TabularInstance, beta: f64, baseline: Baseline) -> Result<TabularPolicy> {
    if !(beta > 0.0) {
        return Err(Error::invalid("beta must be positive"));
    }
    Ok(instance
        .logging_policy
        .iter()
        .zip(&instance.rewards)
        .map(|(mu, r)| {
            let g = baseline.value(mu, r);
            // Shift by the largest exponent so the normalization never overflows.
            let shift = r
                .iter()
                .zip(mu)
                .filter(|(_, m)| **m > 0.0)
                .map(|(rv, _)| (rv - g) / beta)
                .fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = mu
                .iter()
                .zip(r)
                .map(|(m, rv)| if *m > 0.0 { m * ((rv - g) / beta - shift).exp() } else { 0.0 })
                .collect();
            let z: f64 = w.iter().sum();
            w.into_iter().map(|v| v / z).collect()
        })
        .collect())
}

/// `sum_x d(x) sum_a mu(a|x) r(x, a) log pi(a|x)`, with `0 log 0 = 0`.
pub fn lmu_surrogate(instance: &TabularInstance, policy: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for x in 0..instance.n_contexts() {
        for a in 0..instance.n_actions() {
            let w = instance.logging_policy[x][a] * instance.rewards[x][a];
            if w > 0.0 {
                total += instance.context_dist[x] * w * policy[x][a].ln();
            }
        }
    }
    total
}

/// `KL(p || q)` for rows known to share support; `+inf` otherwise.
fn kl_row(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(pv, qv)| {
            if *pv > 0.0 {
                if *qv > 0.0 {
                    pv * (pv.ln() - qv.ln())
                } else {
                    f64::INFINITY
                }
            } else {
                0.0
            }
        })
        .sum()
}

/// `E_d[KL(pi(.|x) || mu(.|x))]`.
pub fn expected_kl(instance: &TabularInstance, policy: &[Vec<f64>]) -> f64 {
    instance.context_dist.iter().zip(policy).zip(&instance.logging_policy).map(|((d, p), m)| d * kl_row(p, m)).sum()
}

/// One-step `J(pi) - beta E_d[KL(pi || mu)]`.
pub fn kl_penalized_value(instance: &TabularInstance, policy: &[Vec<f64>], beta: f64) -> Result<f64> {
    Ok(bandit_value(instance, policy)? - beta * expected_kl(instance, policy))
}

/// Maximizes `sum_a f_a(p_a)` over the probability simplex for separable,
/// strictly concave `f_a`, given each derivative `f_a'` (decreasing on
/// `(0, 1]`). Solves the KKT conditions `f_a'(p_a) = nu` for active
/// coordinates by nested bisection on `nu` and on each `p_a`.
pub fn maximize_separable_on_simplex(derivs: &[&dyn Fn(f64) -> f64]) -> Vec<f64> {
    const ITERS: usize = 200;
    let n = derivs.len();
    let tiny = f64::MIN_POSITIVE;
    let coord = |k: usize, nu: f64| -> f64 {
        let g = derivs[k];
        if g(tiny) <= nu {
            return 0.0;
        }
        if g(1.0) >= nu {
            return 1.0;
        }
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..ITERS {
            let mid = 0.5 * (lo + hi);
            if mid == lo || mid == hi {
                break;
            }
            if g(mid) > nu {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    let total = |nu: f64| (0..n).map(|k| coord(k, nu)).sum::<f64>();
    let mut lo = (0..n).map(|k| derivs[k](1.0)).fold(f64::INFINITY, f64::min) - 1.0;
    let mut hi = (0..n).map(|k| derivs[k](1.0 / n as f64)).fold(f64::NEG_INFINITY, f64::max) + 1.0;
    for _ in 0..ITERS {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if total(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let p: Vec<f64> = (0..n).map(|k| coord(k, 0.5 * (lo + hi))).collect();
    let s: f64 = p.iter().sum();
    p.into_iter().map(|v| v / s).collect()
}

/// Numerical maximizer of the `E_mu[r log pi]` surrogate, context by context.
pub fn simplex_oracle_lmu(instance: &TabularInstance) -> TabularPolicy {
    (0..instance.n_contexts())
        .map(|x| {
            let w: Vec<f64> =
                (0..instance.n_actions()).map(|a| instance.logging_policy[x][a] * instance.rewards[x][a]).collect();
            let fs: Vec<Box<dyn Fn(f64) -> f64>> =
                w.iter().map(|&wa| Box::new(move |p: f64| wa / p) as Box<dyn Fn(f64) -> f64>).collect();
            let refs: Vec<&dyn Fn(f64) -> f64> = fs.iter().map(|f| f.as_ref()).collect();
            maximize_separable_on_simplex(&refs)
        })
        .collect()
}

/// Numerical maximizer of `J(pi) - beta E_d[KL(pi || mu)]`, context by context.
pub fn simplex_oracle_lpi(instance: &TabularInstance, beta: f64) -> TabularPolicy {
    (0..instance.n_contexts())
        .map(|x| {
            let fs: Vec<Box<dyn Fn(f64) -> f64>> = (0..instance.n_actions())
                .map(|a| {
                    let (r, mu) = (instance.rewards[x][a], instance.logging_policy[x][a]);
                    if mu > 0.0 {
                        Box::new(move |p: f64| r - beta * ((p / mu).ln() + 1.0)) as Box<dyn Fn(f64) -> f64>
                    } else {
                        Box::new(|_p: f64| f64::NEG_INFINITY) as Box<dyn Fn(f64) -> f64>
                    }
                })
                .collect();
            let refs: Vec<&dyn Fn(f64) -> f64> = fs.iter().map(|f| f.as_ref()).collect();
            maximize_separable_on_simplex(&refs)
        })
        .collect()
}

/// Optimal action values by iterating the Bellman optimality operator until
/// the max-abs residual drops below `1e-10`.
pub fn value_iteration(instance: &TabularInstance) -> Result<Vec<Vec<f64>>> {
    let p = instance.transitions.as_ref().ok_or_else(|| Error::invalid("value iteration needs transitions"))?;
    let gamma = instance.gamma.ok_or_else(|| Error::invalid("value iteration needs gamma"))?;
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::invalid("gamma must lie in [0, 1)"));
    }
    let (nx, na) = (instance.n_contexts(), instance.n_actions());
    let mut q = vec![vec![0.0; na]; nx];
    loop {
        let v: Vec<f64> = q.iter().map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect();
        let mut residual: f64 = 0.0;
        let next: Vec<Vec<f64>> = (0..nx)
            .map(|x| {
                (0..na)
                    .map(|a| {
                        let nq = instance.rewards[x][a]
                            + gamma * p[x][a].iter().zip(&v).map(|(pr, vv)| pr * vv).sum::<f64>();
                        residual = residual.max((nq - q[x][a]).abs());
                        nq
                    })
                    .collect()
            })
            .collect();
        q = next;
        if residual < 1e-10 {
            return Ok(q);
        }
    }
}

/// Values reported by [`policy_improvement_check`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImprovementReport {
    pub j_optimal: f64,
    pub j_logging: f64,
    /// `E_d[KL(pi* || mu)]`.
    pub kl: f64,
    pub beta: f64,
}

impl ImprovementReport {
    /// `J(pi*) >= J(mu)` and `J(pi*) - J(mu) >= beta KL - tol`.
    pub fn holds(&self, tol: f64) -> bool {
        self.j_optimal >= self.j_logging - tol && self.j_optimal - self.j_logging >= self.beta * self.kl - tol
    }
}

/// Evaluates the KL-regularized optimum against the logging policy on the
/// one-step objective.
pub fn policy_improvement_check(instance: &TabularInstance, beta: f64) -> Result<ImprovementReport> {
    let pi = tabular_optimal_lpi(instance, beta, Baseline::LoggingMean)?;
    Ok(ImprovementReport {
        j_optimal: bandit_value(instance, &pi)?,
        j_logging: bandit_value(instance, &instance.logging_policy)?,
        kl: expected_kl(instance, &pi),
        beta,
    })
}

/// A frozen maximum-likelihood fit of the logging policy.
#[derive(Clone, Debug, PartialEq)]
pub struct LoggingPolicyEstimate {
    model: PolicyModel,
}

impl LoggingPolicyEstimate {
    pub fn new(model: PolicyModel) -> Self {
        LoggingPolicyEstimate { model }
    }

    pub fn model(&self) -> &PolicyModel {
        &self.model
    }

    pub fn into_model(self) -> PolicyModel {
        self.model
    }
}

impl ContextPolicy for LoggingPolicyEstimate {
    fn catalog_size(&self) -> usize {
        self.model.catalog_size()
    }

    fn log_probs(&self, context: &[ItemId]) -> Result<Vec<f64>> {
        self.model.log_probs(context)
    }
}

/// Fits `mu_hat` by unweighted cross-entropy on the training split.
/// Rewards and the TD head are ignored.
pub fn estimate_logging_policy(dataset: &Dataset, config: &TrainConfig) -> Result<LoggingPolicyEstimate> {
    if dataset.sequences_in(Split::Train).next().is_none() {
        return Err(Error::EmptyDataset);
    }
    let mut cfg = config.clone();
    cfg.objective = ObjectiveConfig { kind: ObjectiveKind::Ce, lambda_td: 0.0, ..config.objective };
    let (model, _) = train_policy(dataset, &cfg, None)?;
    Ok(LoggingPolicyEstimate { model })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn simplex<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    }

    fn random_instance(seed: u64, nx: usize, na: usize) -> TabularInstance {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        TabularInstance {
            context_dist: simplex(&mut rng, nx),
            logging_policy: (0..nx).map(|_| simplex(&mut rng, na)).collect(),
            rewards: (0..nx).map(|_| (0..na).map(|_| rng.random_range(0.0..1.0)).collect()).collect(),
            transitions: None,
            gamma: None,
        }
    }

    fn double_sum(inst: &TabularInstance, pi: &[Vec<f64>]) -> f64 {
        let mut j = 0.0;
        for x in 0..inst.n_contexts() {
            for a in 0..inst.n_actions() {
                j += inst.context_dist[x] * pi[x][a] * inst.rewards[x][a];
            }
        }
        j
    }

    #[test]
    fn value_examples() {
        let mut inst = random_instance(1, 4, 3);
        let pi = random_instance(2, 4, 3).logging_policy;
        assert!((tabular_value(&inst, &pi).unwrap() - double_sum(&inst, &pi)).abs() < 1e-12);

        let greedy: TabularPolicy = inst
            .rewards
            .iter()
            .map(|r| {
                let a = crate::policy::argmax(r);
                (0..3).map(|k| if k == a { 1.0 } else { 0.0 }).collect()
            })
            .collect();
        let best: f64 =
            inst.context_dist.iter().zip(&inst.rewards).map(|(d, r)| d * r.iter().copied().fold(0.0, f64::max)).sum();
        assert!((tabular_value(&inst, &greedy).unwrap() - best).abs() < 1e-12);

        inst.rewards.iter_mut().for_each(|r| r.iter_mut().for_each(|v| *v = 1.0));
        assert!((tabular_value(&inst, &pi).unwrap() - 1.0).abs() < 1e-12);

        let bad = vec![vec![0.5, 0.2, 0.2]; 4];
        assert!(tabular_value(&inst, &bad).is_err());
    }

    #[test]
    fn json_round_trip() {
        let inst = random_instance(3, 3, 2);
        assert_eq!(TabularInstance::from_json(&inst.to_json()).unwrap(), inst);
        assert!(TabularInstance::from_json(
            r#"{"context_dist":[0.5,0.4],"logging_policy":[[1.0],[1.0]],"rewards":[[1.0],[1.0]]}"#
        )
        .is_err());
    }

    #[test]
    fn ips_examples() {
        let inst = random_instance(4, 3, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let triplets: Vec<LoggedTriplet> = (0..500)
            .map(|_| LoggedTriplet {
                context: rng.random_range(0..3),
                action: rng.random_range(0..4),
                reward: rng.random_range(0.0..1.0),
            })
            .collect();
        let mean = triplets.iter().map(|t| t.reward).sum::<f64>() / 500.0;
        let mu = &inst.logging_policy;
        let same = ips_value_estimate(&triplets, mu, mu, f64::INFINITY).unwrap();
        assert!((same.value - mean).abs() < 1e-12);
        let other = random_instance(5, 3, 4).logging_policy;
        assert!(ips_value_estimate(&triplets, &other, mu, 1.0).unwrap().value <= mean + 1e-12);

        let mut zero = mu.clone();
        zero[triplets[0].context][triplets[0].action] = 0.0;
        assert!(matches!(ips_value_estimate(&triplets, &other, &zero, 30.0), Err(Error::SupportViolation { .. })));
    }

    #[test]
    fn direct_method_examples() {
        let inst = random_instance(6, 3, 4);
        let triplets = vec![
            LoggedTriplet { context: 0, action: 1, reward: 0.0 },
            LoggedTriplet { context: 2, action: 3, reward: 1.0 },
        ];
        let c = vec![vec![0.3; 4]; 3];
        assert!((direct_method_value(&triplets, &inst.logging_policy, &c).unwrap() - 0.3).abs() < 1e-15);
        let one_hot = vec![vec![0.0, 0.0, 1.0, 0.0]; 3];
        let want = (inst.rewards[0][2] + inst.rewards[2][2]) / 2.0;
        assert!((direct_method_value(&triplets, &one_hot, &inst.rewards).unwrap() - want).abs() < 1e-15);
    }

    #[test]
    fn lmu_examples() {
        let mut inst = random_instance(7, 3, 4);
        let flat = {
            let mut i = inst.clone();
            i.rewards.iter_mut().for_each(|r| r.iter_mut().for_each(|v| *v = 0.4));
            i
        };
        let pi = tabular_optimal_lmu(&flat).unwrap();
        for (p, m) in pi.iter().zip(&flat.logging_policy) {
            for (a, b) in p.iter().zip(m) {
                assert!((a - b).abs() < 1e-15);
            }
        }
        inst.logging_policy = vec![vec![0.25; 4]; 3];
        let pi = tabular_optimal_lmu(&inst).unwrap();
        for (p, r) in pi.iter().zip(&inst.rewards) {
            let s: f64 = r.iter().sum();
            for (a, b) in p.iter().zip(r) {
                assert!((a - b / s).abs() < 1e-15);
            }
        }
        inst.rewards[1] = vec![0.0; 4];
        assert!(matches!(tabular_optimal_lmu(&inst), Err(Error::DegenerateContext(1))));
    }

    #[test]
    fn lpi_closed_form_properties() {
        let inst = random_instance(8, 4, 5);
        let big = tabular_optimal_lpi(&inst, 1e12, Baseline::Zero).unwrap();
        for (p, m) in big.iter().zip(&inst.logging_policy) {
            let tv: f64 = p.iter().zip(m).map(|(a, b)| (a - b).abs()).sum::<f64>() / 2.0;
            assert!(tv < 1e-9);
        }
        let a = tabular_optimal_lpi(&inst, 0.3, Baseline::Zero).unwrap();
        let b = tabular_optimal_lpi(&inst, 0.3, Baseline::MaxReward).unwrap();
        let c = tabular_optimal_lpi(&inst, 0.3, Baseline::LoggingMean).unwrap();
        for x in 0..4 {
            for k in 0..5 {
                assert!((a[x][k] - b[x][k]).abs() < 1e-12);
                assert!((a[x][k] - c[x][k]).abs() < 1e-12);
            }
        }
        assert!(tabular_optimal_lpi(&inst, 0.0, Baseline::Zero).is_err());
    }

    #[test]
    fn oracle_agrees_with_closed_forms() {
        let inst = random_instance(9, 5, 6);
        let pi = tabular_optimal_lpi(&inst, 0.5, Baseline::Zero).unwrap();
        let oracle = simplex_oracle_lpi(&inst, 0.5);
        let gap = kl_penalized_value(&inst, &pi, 0.5).unwrap() - kl_penalized_value(&inst, &oracle, 0.5).unwrap();
        assert!(gap.abs() < 1e-6, "gap {gap}");

        let pi = tabular_optimal_lmu(&inst).unwrap();
        let oracle = simplex_oracle_lmu(&inst);
        assert!((lmu_surrogate(&inst, &pi) - lmu_surrogate(&inst, &oracle)).abs() < 1e-6);
    }

    #[test]
    fn closed_form_beats_random_policies() {
        let inst = random_instance(10, 3, 4);
        let best = kl_penalized_value(&inst, &tabular_optimal_lpi(&inst, 0.7, Baseline::Zero).unwrap(), 0.7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10_000 {
            let pi: TabularPolicy = (0..3).map(|_| simplex(&mut rng, 4)).collect();
            assert!(kl_penalized_value(&inst, &pi, 0.7).unwrap() <= best + 1e-12);
        }
    }

    #[test]
    fn improvement_examples() {
        let inst = random_instance(12, 4, 4);
        let mut prev = f64::INFINITY;
        for beta in [0.1, 1.0, 10.0] {
            let rep = policy_improvement_check(&inst, beta).unwrap();
            assert!(rep.holds(1e-12), "{rep:?}");
            assert!(rep.kl <= prev + 1e-15);
            prev = rep.kl;
        }
        let mut det = inst.clone();
        det.logging_policy = det
            .rewards
            .iter()
            .map(|r| {
                let a = crate::policy::argmax(r);
                (0..4).map(|k| if k == a { 1.0 } else { 0.0 }).collect()
            })
            .collect();
        let rep = policy_improvement_check(&det, 1e-3).unwrap();
        assert!((rep.j_optimal - rep.j_logging).abs() < 1e-12 && rep.kl.abs() < 1e-12);
    }

    fn mdp(seed: u64, nx: usize, na: usize, gamma: f64) -> TabularInstance {
        let mut inst = random_instance(seed, nx, na);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
        inst.transitions = Some((0..nx).map(|_| (0..na).map(|_| simplex(&mut rng, nx)).collect()).collect());
        inst.gamma = Some(gamma);
        inst
    }

    #[test]
    fn value_iteration_examples() {
        let mut z = mdp(13, 3, 2, 0.9);
        z.rewards = vec![vec![0.0; 2]; 3];
        assert!(value_iteration(&z).unwrap().iter().flatten().all(|q| q.abs() < 1e-12));

        let single = TabularInstance {
            context_dist: vec![1.0],
            logging_policy: vec![vec![0.5, 0.5]],
            rewards: vec![vec![0.3, 0.3]],
            transitions: Some(vec![vec![vec![1.0], vec![1.0]]]),
            gamma: Some(0.5),
        };
        for q in &value_iteration(&single).unwrap()[0] {
            assert!((q - 0.6).abs() < 1e-9);
        }

        let m = mdp(14, 4, 3, 0.8);
        let q = value_iteration(&m).unwrap();
        let p = m.transitions.as_ref().unwrap();
        for x in 0..4 {
            for a in 0..3 {
                let backup = m.rewards[x][a]
                    + 0.8 * (0..4).map(|y| p[x][a][y] * q[y].iter().copied().fold(f64::MIN, f64::max)).sum::<f64>();
                assert!((backup - q[x][a]).abs() < 1e-9);
            }
        }
        let mut bad = m.clone();
        bad.gamma = Some(1.0);
        assert!(value_iteration(&bad).is_err());
    }

    #[test]
    fn mdp_value_matches_rollout_recursion() {
        let m = mdp(15, 3, 2, 0.7);
        let pi = m.logging_policy.clone();
        let p = m.transitions.as_ref().unwrap();
        // Iterated policy evaluation as an independent oracle.
        let mut v = vec![0.0; 3];
        for _ in 0..2000 {
            v = (0..3)
                .map(|x| {
                    (0..2)
                        .map(|a| pi[x][a] * (m.rewards[x][a] + 0.7 * (0..3).map(|y| p[x][a][y] * v[y]).sum::<f64>()))
                        .sum()
                })
                .collect();
        }
        let j: f64 = m.context_dist.iter().zip(&v).map(|(d, v)| d * v).sum();
        assert!((tabular_value(&m, &pi).unwrap() - j).abs() < 1e-12);
    }
}
