//! Ranking metrics, greedy-reward metrics, divergence diagnostics and
//! metric reports.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Event, ItemId, Split, TrainingExample};
use crate::error::{Error, Result};
use crate::policy::{argmax, ContextPolicy, PolicyModel};

/// 1 if the held-out item is in the top `k`, else 0.
pub fn hr_at_k(rank: usize, k: usize) -> f64 {
    if rank >= 1 && rank <= k {
        1.0
    } else {
        0.0
    }
}

/// `1 / log2(rank + 1)` inside the top `k`, else 0.
pub fn ndcg_at_k(rank: usize, k: usize) -> f64 {
    if rank >= 1 && rank <= k {
        1.0 / ((rank + 1) as f64).log2()
    } else {
        0.0
    }
}

/// 1-based rank of `target` among `scores`: one plus the number of items
/// scoring strictly higher, plus tied items with a smaller index.
pub fn rank_in_scores(scores: &[f64], target: usize) -> usize {
    let t = scores[target];
    1 + scores.iter().enumerate().filter(|&(j, &s)| s > t || (s == t && j < target)).count()
}

pub fn rank_of(model: &PolicyModel, context: &[ItemId], target: ItemId) -> Result<usize> {
    if target.index() >= model.catalog_size() {
        return Err(Error::invalid(format!("target item {} outside catalog", target.index())));
    }
    Ok(rank_in_scores(&model.logits(context)?, target.index()))
}

fn greedy(policy: &dyn ContextPolicy, context: &[ItemId]) -> Result<usize> {
    Ok(argmax(&policy.log_probs(context)?))
}

/// Average observed reward of examples where the greedy action matches the
/// logged one: `(1/n) sum r_i 1[a_i = argmax pi(.|x_i)]`.
pub fn ar_at_1(policy: &dyn ContextPolicy, heldout: &[TrainingExample]) -> Result<f64> {
    Ok(mean(&ar_terms(policy, heldout)?))
}

fn ar_terms(policy: &dyn ContextPolicy, heldout: &[TrainingExample]) -> Result<Vec<f64>> {
    if heldout.is_empty() {
        return Err(Error::invalid("AR@1 needs at least one held-out example"));
    }
    heldout.iter().map(|e| Ok(if greedy(policy, &e.context)? == e.action.index() { e.reward } else { 0.0 })).collect()
}

/// Reward model for (user, item) pairs. Users are dataset sequence indices.
pub trait RewardImputer {
    fn impute(&self, user: usize, item: ItemId) -> Result<f64>;
}

/// Average imputed reward of the greedy action: `(1/n) sum r_hat(x_i, argmax pi)`.
pub fn iar_at_1(policy: &dyn ContextPolicy, heldout: &[TrainingExample], imputer: &dyn RewardImputer) -> Result<f64> {
    Ok(mean(&iar_terms(policy, heldout, imputer)?))
}

fn iar_terms(policy: &dyn ContextPolicy, heldout: &[TrainingExample], imputer: &dyn RewardImputer) -> Result<Vec<f64>> {
    if heldout.is_empty() {
        return Err(Error::invalid("iAR@1 needs at least one held-out example"));
    }
    heldout.iter().map(|e| imputer.impute(e.sequence, ItemId::new(greedy(policy, &e.context)?))).collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// `sum p (log p - log q)` with `0 log 0 = 0`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::invalid("distributions differ in length"));
    }
    let mut total = 0.0;
    for (a, (&pv, &qv)) in p.iter().zip(q).enumerate() {
        if pv > 0.0 {
            if !(qv > 0.0) {
                return Err(Error::SupportViolation { context: "kl".into(), action: a });
            }
            total += pv * (pv.ln() - qv.ln());
        }
    }
    Ok(total.max(0.0))
}

/// Jensen-Shannon divergence in nats, bounded by `ln 2`.
pub fn js_divergence(p: &[f64], q: &[f64]) -> f64 {
    let half = |x: f64, y: f64| if x > 0.0 { x * (x.ln() - (0.5 * (x + y)).ln()) } else { 0.0 };
    let total: f64 = p.iter().zip(q).map(|(&a, &b)| 0.5 * half(a, b) + 0.5 * half(b, a)).sum();
    total.clamp(0.0, std::f64::consts::LN_2)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DivergenceKind {
    Kl,
    Js,
}

/// Sample mean with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub value: f64,
    pub count: usize,
    pub stderr: f64,
}

impl MetricValue {
    /// `None` for an empty sample.
    pub fn from_samples(samples: &[f64]) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        let n = samples.len() as f64;
        let m = mean(samples);
        let var =
            if samples.len() > 1 { samples.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
        Some(MetricValue { value: m, count: samples.len(), stderr: (var / n).sqrt() })
    }
}

/// Average per-context divergence between two policies over the full
/// catalog. At most `cap` contexts are used, drawn with `seed` when there
/// are more.
pub fn mean_divergence(
    pi: &dyn ContextPolicy,
    mu: &dyn ContextPolicy,
    contexts: &[Vec<ItemId>],
    kind: DivergenceKind,
    cap: usize,
    seed: u64,
) -> Result<MetricValue> {
    if contexts.is_empty() {
        return Err(Error::invalid("no contexts for divergence"));
    }
    let chosen: Vec<usize> = if contexts.len() > cap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = rand::seq::index::sample(&mut rng, contexts.len(), cap).into_vec();
        idx.sort_unstable();
        idx
    } else {
        (0..contexts.len()).collect()
    };
    let values = chosen
        .iter()
        .map(|&i| {
            let p = pi.probs(&contexts[i])?;
            let q = mu.probs(&contexts[i])?;
            match kind {
                DivergenceKind::Js => Ok(js_divergence(&p, &q)),
                DivergenceKind::Kl => kl_divergence(&p, &q).map_err(|e| match e {
                    Error::SupportViolation { action, .. } => {
                        Error::SupportViolation { context: format!("#{i} {:?}", contexts[i]), action }
                    }
                    other => other,
                }),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricValue::from_samples(&values).expect("non-empty"))
}

/// `r_p * nDCG_purchase@20 + r_c * nDCG_click@20`.
pub fn model_selection_score(ndcg_purchase: f64, ndcg_click: f64, r_p: f64, r_c: f64) -> f64 {
    r_p * ndcg_purchase + r_c * ndcg_click
}

/// Inclusive bucket of action counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Bucket {
    pub lo: usize,
    pub hi: usize,
}

impl Bucket {
    pub fn label(&self) -> String {
        format!("{}-{}", self.lo, self.hi)
    }
}

/// Buckets of width 5 over `[1, max_length]`; the last one absorbs any
/// remainder.
pub fn default_buckets(max_length: usize) -> Vec<Bucket> {
    let mut out = Vec::new();
    let mut lo = 1;
    while lo <= max_length {
        let hi = if lo + 9 > max_length { max_length } else { lo + 4 };
        out.push(Bucket { lo, hi });
        lo = hi + 1;
    }
    out
}

/// Bucket summary. Empty buckets carry `count = 0` and no value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketValue {
    pub value: Option<f64>,
    pub count: usize,
    pub stderr: Option<f64>,
}

/// Groups per-sequence metric values by action count.
pub fn breakdown_report(per_sequence: &[(usize, f64)], buckets: &[Bucket]) -> Result<BTreeMap<String, BucketValue>> {
    let mut expect = 1;
    for b in buckets {
        if b.lo != expect || b.hi < b.lo {
            return Err(Error::invalid("buckets must partition [1, max_length] in order"));
        }
        expect = b.hi + 1;
    }
    let mut groups: Vec<Vec<f64>> = vec![Vec::new(); buckets.len()];
    for &(count, value) in per_sequence {
        let k = buckets
            .iter()
            .position(|b| b.lo <= count && count <= b.hi)
            .ok_or_else(|| Error::invalid(format!("action count {count} outside all buckets")))?;
        groups[k].push(value);
    }
    Ok(buckets
        .iter()
        .zip(groups)
        .map(|(b, g)| {
            let v = match MetricValue::from_samples(&g) {
                Some(m) => BucketValue { value: Some(m.value), count: m.count, stderr: Some(m.stderr) },
                None => BucketValue { value: None, count: 0, stderr: None },
            };
            (b.label(), v)
        })
        .collect())
}

/// Named metrics plus an optional breakdown and free-form metadata.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(flatten)]
    pub metrics: BTreeMap<String, MetricValue>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub breakdown: BTreeMap<String, BucketValue>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, String>,
}

impl MetricsReport {
    pub fn value(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).map(|m| m.value)
    }

    pub fn insert_samples(&mut self, name: impl Into<String>, samples: &[f64]) {
        if let Some(m) = MetricValue::from_samples(samples) {
            self.metrics.insert(name.into(), m);
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Evaluation settings for [`evaluate_split`].
#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    pub ks: Vec<usize>,
    pub divergence_cap: usize,
    pub seed: u64,
    pub reward_purchase: f64,
    pub reward_click: f64,
    pub max_length: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            ks: vec![5, 10, 20],
            divergence_cap: 50_000,
            seed: 0,
            reward_purchase: 1.0,
            reward_click: 0.2,
            max_length: 20,
        }
    }
}

/// Full metric suite of `model` on every next-item position of `split`.
pub fn evaluate_split(
    model: &PolicyModel,
    dataset: &Dataset,
    split: Split,
    options: &EvalOptions,
    logging: Option<&dyn ContextPolicy>,
    imputer: Option<&dyn RewardImputer>,
) -> Result<MetricsReport> {
    let examples = dataset.examples(split, usize::MAX)?;
    if examples.is_empty() {
        return Err(Error::invalid(format!("{} split has no evaluable positions", split.name())));
    }
    let mut report = MetricsReport::default();
    report.metadata.insert("split".into(), split.name().into());
    let mut ks = options.ks.clone();
    if !ks.contains(&20) {
        ks.push(20);
    }
    ks.sort_unstable();
    ks.dedup();

    let mut ranks = Vec::with_capacity(examples.len());
    let mut greedy_hits = Vec::with_capacity(examples.len());
    for e in &examples {
        let logits = model.logits(&e.context)?;
        ranks.push(rank_in_scores(&logits, e.action.index()));
        greedy_hits.push(if argmax(&logits) == e.action.index() { e.reward } else { 0.0 });
    }

    let groups: [(&str, Option<Event>); 3] =
        [("", None), ("_click", Some(Event::Click)), ("_purchase", Some(Event::Purchase))];
    for (suffix, event) in groups {
        let sel: Vec<usize> = ranks
            .iter()
            .zip(&examples)
            .filter(|(_, e)| event.is_none_or(|ev| e.event == ev))
            .map(|(r, _)| *r)
            .collect();
        for &k in &ks {
            let hr: Vec<f64> = sel.iter().map(|&r| hr_at_k(r, k)).collect();
            let nd: Vec<f64> = sel.iter().map(|&r| ndcg_at_k(r, k)).collect();
            report.insert_samples(format!("hr{suffix}@{k}"), &hr);
            report.insert_samples(format!("ndcg{suffix}@{k}"), &nd);
        }
    }
    report.insert_samples("ar@1", &greedy_hits);

    if dataset.has_event(Event::Click) || dataset.has_event(Event::Purchase) {
        let p = report.value("ndcg_purchase@20").unwrap_or(0.0);
        let c = report.value("ndcg_click@20").unwrap_or(0.0);
        let score = model_selection_score(p, c, options.reward_purchase, options.reward_click);
        report
            .metrics
            .insert("selection_score".into(), MetricValue { value: score, count: examples.len(), stderr: 0.0 });
    }

    if let Some(imp) = imputer {
        report.insert_samples("iar@1", &iar_terms(model, &examples, imp)?);
    }

    match logging {
        Some(mu) => {
            let contexts: Vec<Vec<ItemId>> = examples.iter().map(|e| e.context.clone()).collect();
            let js = mean_divergence(model, mu, &contexts, DivergenceKind::Js, options.divergence_cap, options.seed)?;
            report.metrics.insert("js".into(), js);
            match mean_divergence(model, mu, &contexts, DivergenceKind::Kl, options.divergence_cap, options.seed) {
                Ok(kl) => {
                    report.metrics.insert("kl".into(), kl);
                }
                Err(Error::SupportViolation { context, action }) => {
                    report.metadata.insert(
                        "warning_kl".into(),
                        format!("KL omitted: zero logging probability at {context}, action {action}"),
                    );
                }
                Err(e) => return Err(e),
            }
            report.metadata.insert("divergence_contexts".into(), split.name().into());
        }
        None => {
            report
                .metadata
                .insert("warning_divergence".into(), "divergence metrics omitted: no logging-policy estimate".into());
        }
    }

    // Per-sequence nDCG@20, bucketed by sequence length.
    let mut per_seq: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for (e, r) in examples.iter().zip(&ranks) {
        per_seq.entry(e.sequence).or_default().push(ndcg_at_k(*r, 20));
    }
    let max_len = dataset.sequences.iter().map(|s| s.len()).max().unwrap_or(1).max(options.max_length);
    let rows: Vec<(usize, f64)> = per_seq.iter().map(|(&s, v)| (dataset.sequences[s].len(), mean(v))).collect();
    report.breakdown = breakdown_report(&rows, &default_buckets(max_len))?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{HIDDEN_WEIGHT, ITEM_EMBEDDINGS};
    use crate::policy::{ModelConfig, UniformPolicy};
    use rand::Rng;

    #[test]
    fn hr_and_ndcg_examples() {
        assert_eq!(hr_at_k(1, 5), 1.0);
        assert_eq!(hr_at_k(6, 5), 0.0);
        assert_eq!(hr_at_k(20, 20), 1.0);
        assert_eq!(ndcg_at_k(1, 20), 1.0);
        assert_eq!(ndcg_at_k(3, 20), 0.5);
        assert_eq!(ndcg_at_k(21, 20), 0.0);
        for r in 1..30 {
            assert!(ndcg_at_k(r + 1, 20) <= ndcg_at_k(r, 20));
            assert_eq!(hr_at_k(r, 20) == 1.0, ndcg_at_k(r, 20) > 0.0);
        }
    }

    #[test]
    fn rank_examples() {
        assert_eq!(rank_in_scores(&[0.1, 3.0, 0.2], 1), 1);
        assert_eq!(rank_in_scores(&[1.0; 4], 0), 1);
        assert_eq!(rank_in_scores(&[1.0; 4], 3), 4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let s: Vec<f64> = (0..15).map(|_| (rng.random_range(0..6) as f64) * 0.5).collect();
            let t = rng.random_range(0..15);
            let mut order: Vec<usize> = (0..15).collect();
            order.sort_by(|&a, &b| s[b].partial_cmp(&s[a]).unwrap().then(a.cmp(&b)));
            assert_eq!(rank_in_scores(&s, t), 1 + order.iter().position(|&i| i == t).unwrap());
        }
    }

    fn example(ctx: usize, action: usize, reward: f64) -> TrainingExample {
        TrainingExample {
            context: vec![ItemId::new(ctx)],
            action: ItemId::new(action),
            reward,
            event: Event::Click,
            next_context: vec![ItemId::new(ctx), ItemId::new(action)],
            terminal: true,
            in_loss_window: true,
            return_to_go: reward,
            sequence: ctx,
        }
    }

    /// Greedy action is `context + 1 (mod 4)`.
    fn shift_model() -> PolicyModel {
        let mut m = PolicyModel::zeros(ModelConfig { tie_weights: false, ..ModelConfig::new(4, 4, 1.0) }).unwrap();
        for i in 0..4 {
            m.store_mut().value_mut(ITEM_EMBEDDINGS)[i * 4 + i] = 3.0;
            m.store_mut().value_mut(HIDDEN_WEIGHT)[i * 4 + i] = 1.0;
        }
        let w = m.policy_weight_slot();
        for a in 0..4 {
            m.store_mut().value_mut(w)[a * 4 + (a + 3) % 4] = 5.0;
        }
        m
    }

    #[test]
    fn ar_examples() {
        let m = shift_model();
        let all_hit: Vec<_> = (0..4).map(|c| example(c, (c + 1) % 4, 1.0)).collect();
        assert_eq!(ar_at_1(&m, &all_hit).unwrap(), 1.0);
        let none: Vec<_> = (0..4).map(|c| example(c, c, 1.0)).collect();
        assert_eq!(ar_at_1(&m, &none).unwrap(), 0.0);
        let mixed = vec![example(0, 1, 0.5), example(1, 2, 1.0), example(2, 0, 1.0), example(3, 0, 0.0)];
        assert!((ar_at_1(&m, &mixed).unwrap() - 1.5 / 4.0).abs() < 1e-15);
        assert!(ar_at_1(&m, &[]).is_err());
    }

    struct Const(f64);
    impl RewardImputer for Const {
        fn impute(&self, _user: usize, _item: ItemId) -> Result<f64> {
            Ok(self.0)
        }
    }

    struct Observed(Vec<usize>);
    impl RewardImputer for Observed {
        fn impute(&self, user: usize, item: ItemId) -> Result<f64> {
            Ok(if self.0[user] == item.index() { 1.0 } else { 0.0 })
        }
    }

    struct Table(Vec<Vec<f64>>);
    impl RewardImputer for Table {
        fn impute(&self, user: usize, item: ItemId) -> Result<f64> {
            self.0.get(user).and_then(|r| r.get(item.index())).copied().ok_or_else(|| Error::invalid("missing"))
        }
    }

    #[test]
    fn iar_examples() {
        let m = shift_model();
        let ex = vec![example(0, 1, 1.0), example(1, 3, 1.0), example(2, 3, 1.0), example(3, 0, 1.0)];
        assert!((iar_at_1(&m, &ex, &Const(0.3)).unwrap() - 0.3).abs() < 1e-15);
        let obs = Observed(ex.iter().map(|e| e.action.index()).collect());
        assert_eq!(iar_at_1(&m, &ex, &obs).unwrap(), ar_at_1(&m, &ex).unwrap());

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let table: Vec<Vec<f64>> = (0..4).map(|_| (0..4).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
        let want = (0..4).map(|c| table[c][(c + 1) % 4]).sum::<f64>() / 4.0;
        assert!((iar_at_1(&m, &ex, &Table(table)).unwrap() - want).abs() < 1e-15);
        assert!(iar_at_1(&m, &ex, &Table(vec![])).is_err());
    }

    #[test]
    fn divergence_examples() {
        assert_eq!(kl_divergence(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert!((kl_divergence(&[1.0, 0.0], &[0.5, 0.5]).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(kl_divergence(&[0.5, 0.5], &[1.0, 0.0]).is_err());
        assert_eq!(js_divergence(&[0.2, 0.8], &[0.2, 0.8]), 0.0);
        assert!((js_divergence(&[1.0, 0.0], &[0.0, 1.0]) - std::f64::consts::LN_2).abs() < 1e-15);
        let (p, q): ([f64; 3], [f64; 3]) = ([0.1, 0.6, 0.3], [0.5, 0.25, 0.25]);
        let oracle: f64 = (0..3).map(|i| p[i] * (p[i] / q[i]).ln()).sum();
        assert!((kl_divergence(&p, &q).unwrap() - oracle).abs() < 1e-12);
        assert!((js_divergence(&p, &q) - js_divergence(&q, &p)).abs() < 1e-12);
    }

    #[test]
    fn mean_divergence_examples() {
        let m = shift_model();
        let ctx: Vec<Vec<ItemId>> = (0..4).map(|i| vec![ItemId::new(i)]).collect();
        let same = mean_divergence(&m, &m, &ctx, DivergenceKind::Js, 100, 0).unwrap();
        assert_eq!(same.value, 0.0);

        let mut onehot = PolicyModel::zeros(ModelConfig::new(2, 2, 1.0)).unwrap();
        let pb = onehot.policy_bias_slot();
        onehot.store_mut().value_mut(pb)[0] = 800.0;
        let c2 = vec![vec![ItemId(0)], vec![ItemId(1)]];
        let js = mean_divergence(&onehot, &UniformPolicy(2), &c2, DivergenceKind::Js, 10, 0).unwrap();
        let want = 0.5 * (1.0f64 / 0.75).ln() + 0.5 * (0.5 * (0.5f64 / 0.75).ln() + 0.5 * (0.5f64 / 0.25).ln());
        assert!((js.value - want).abs() < 1e-12);

        let a = mean_divergence(&m, &UniformPolicy(4), &ctx, DivergenceKind::Kl, 2, 7).unwrap();
        let b = mean_divergence(&m, &UniformPolicy(4), &ctx, DivergenceKind::Kl, 2, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.count, 2);
    }

    #[test]
    fn selection_score_examples() {
        assert!((model_selection_score(0.5, 0.4, 1.0, 0.2) - 0.58).abs() < 1e-15);
        assert_eq!(model_selection_score(0.0, 0.0, 1.0, 0.2), 0.0);
        assert_eq!(model_selection_score(0.37, 0.9, 1.0, 0.0), 0.37);
    }

    #[test]
    fn breakdown_examples() {
        let b = default_buckets(20);
        assert_eq!(b.iter().map(Bucket::label).collect::<Vec<_>>(), vec!["1-5", "6-10", "11-15", "16-20"]);
        let rows = vec![(3, 0.2), (4, 0.4)];
        let r = breakdown_report(&rows, &b).unwrap();
        assert!((r["1-5"].value.unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(r["6-10"].count, 0);
        assert_eq!(r["6-10"].value, None);

        let r = breakdown_report(&[(2, 0.7), (12, 0.1)], &b).unwrap();
        assert_eq!(r["1-5"].value, Some(0.7));
        assert_eq!(r["11-15"].value, Some(0.1));

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<(usize, f64)> =
            (0..200).map(|_| (rng.random_range(1..=20), rng.random_range(0.0..1.0))).collect();
        let r = breakdown_report(&rows, &b).unwrap();
        let global = rows.iter().map(|r| r.1).sum::<f64>() / 200.0;
        let reassembled: f64 = r.values().filter_map(|v| v.value.map(|m| m * v.count as f64)).sum::<f64>() / 200.0;
        assert!((global - reassembled).abs() < 1e-12);
        assert!(breakdown_report(&rows, &[Bucket { lo: 2, hi: 20 }]).is_err());
    }

    #[test]
    fn report_json_shape() {
        let mut r = MetricsReport::default();
        r.insert_samples("hr@5", &[1.0, 0.0]);
        r.metadata.insert("split".into(), "validation".into());
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(v["hr@5"]["value"], 0.5);
        assert_eq!(v["hr@5"]["count"], 2);
        assert_eq!(v["metadata"]["split"], "validation");
    }
}
