use lpirec::data::{
    preprocess, split, Event, LengthCount, PreprocessRules, RawInteraction, RawSequence, RewardMap, SplitFractions,
};
use lpirec::estimators::{tabular_optimal_lpi, Baseline, TabularInstance};
use lpirec::eval::{js_divergence, kl_divergence};
use lpirec::objectives::{double_q_target, lpi_weight, reward_to_go};
use lpirec::policy::{ContextPolicy, ModelConfig, PolicyModel};
use lpirec::{ItemId, Split, TrainingExample};
use proptest::prelude::*;

fn raw_sequences() -> impl Strategy<Value = Vec<RawSequence>> {
    let interaction = (0u8..12, prop::bool::weighted(0.2));
    prop::collection::vec(prop::collection::vec(interaction, 0..30), 1..40).prop_map(|seqs| {
        seqs.into_iter()
            .enumerate()
            .map(|(s, items)| RawSequence {
                id: format!("s{s}"),
                interactions: items
                    .into_iter()
                    .enumerate()
                    .map(|(t, (item, buy))| RawInteraction {
                        item: format!("i{item}"),
                        event: if buy { Event::Purchase } else { Event::Click },
                        timestamp: t as i64,
                    })
                    .collect(),
            })
            .collect()
    })
}

fn rules() -> impl Strategy<Value = PreprocessRules> {
    (1usize..5, 1usize..4, 1usize..25, prop::bool::ANY).prop_map(|(min, support, max, all)| PreprocessRules {
        min_interactions: min,
        min_item_support: support,
        max_length: max,
        length_counts: if all { LengthCount::All } else { LengthCount::Clicks },
    })
}

fn probs(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, n).prop_map(|v| {
        let s: f64 = v.iter().sum();
        if s == 0.0 {
            vec![1.0 / v.len() as f64; v.len()]
        } else {
            v.into_iter().map(|x| x / s).collect()
        }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn preprocessing_is_idempotent(raw in raw_sequences(), rules in rules()) {
        let map = RewardMap::default();
        if let Ok(once) = preprocess(&raw, &rules, &map) {
            let twice = preprocess(&once.to_raw(), &rules, &map).unwrap();
            prop_assert_eq!(&once.sequences, &twice.sequences);
            prop_assert_eq!(once.catalog_size, twice.catalog_size);
            for s in &once.sequences {
                prop_assert!(s.len() <= rules.max_length);
            }
        }
    }

    #[test]
    fn splits_partition_sequences(raw in raw_sequences(), seed in any::<u64>()) {
        if let Ok(ds) = preprocess(&raw, &PreprocessRules { min_interactions: 2, ..Default::default() }, &RewardMap::default()) {
            let n = ds.sequences.len();
            let ds = split(ds, SplitFractions::default(), seed).unwrap();
            let (a, b, c) = ds.split_counts();
            prop_assert_eq!(a + b + c, n);
        }
    }

    #[test]
    fn example_counts_follow_lengths(raw in raw_sequences(), window in 1usize..6) {
        if let Ok(ds) = preprocess(&raw, &PreprocessRules { min_interactions: 2, ..Default::default() }, &RewardMap::default()) {
            let ex = ds.examples(Split::Train, window).unwrap();
            let expected: usize = ds.sequences.iter().map(|s| s.len() - 1).sum();
            prop_assert_eq!(ex.len(), expected);
            let in_window: usize = ds.sequences.iter().map(|s| (s.len() - 1).min(window)).sum();
            prop_assert_eq!(ex.iter().filter(|e| e.in_loss_window).count(), in_window);
            prop_assert_eq!(ex.iter().filter(|e| e.terminal).count(), ds.sequences.len());
        }
    }

    #[test]
    fn js_is_bounded_and_symmetric(p in probs(8), q in probs(8)) {
        let a = js_divergence(&p, &q);
        prop_assert!((0.0..=std::f64::consts::LN_2).contains(&a));
        prop_assert!((a - js_divergence(&q, &p)).abs() < 1e-12);
        prop_assert!(js_divergence(&p, &p).abs() < 1e-12);
    }

    #[test]
    fn kl_is_non_negative(p in probs(6), q in probs(6)) {
        if q.iter().all(|&x| x > 0.0) {
            prop_assert!(kl_divergence(&p, &q).unwrap() >= -1e-12);
        }
    }

    #[test]
    fn lpi_weights_are_capped_and_monotone(a in -50.0f64..50.0, b in -50.0f64..50.0, beta in 0.01f64..10.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let wl = lpi_weight(lo, beta, 1e4);
        let wh = lpi_weight(hi, beta, 1e4);
        prop_assert!((0.0..=1e4).contains(&wl) && wl <= wh);
    }

    #[test]
    fn closed_form_lpi_is_a_distribution(
        mu in probs(5),
        r in prop::collection::vec(0.0f64..1.0, 5),
        beta in 0.01f64..100.0,
    ) {
        let inst = TabularInstance {
            context_dist: vec![1.0],
            logging_policy: vec![mu.clone()],
            rewards: vec![r],
            transitions: None,
            gamma: None,
        };
        let pi = tabular_optimal_lpi(&inst, beta, Baseline::LoggingMean).unwrap();
        prop_assert!((pi[0].iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for (p, m) in pi[0].iter().zip(&mu) {
            prop_assert!(*p >= 0.0);
            if *m == 0.0 {
                prop_assert_eq!(*p, 0.0);
            }
        }
    }

    #[test]
    fn policy_outputs_are_distributions(seed in any::<u64>(), context in prop::collection::vec(0usize..9, 0..6)) {
        let model = PolicyModel::new(ModelConfig::new(9, 4, 0.8), seed).unwrap();
        let ctx: Vec<ItemId> = context.into_iter().map(ItemId::new).collect();
        let p = model.probs(&ctx).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(p.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn checkpoints_round_trip(seed in any::<u64>()) {
        let model = PolicyModel::new(ModelConfig::new(7, 3, 0.5), seed).unwrap();
        let back = PolicyModel::from_bytes(&model.to_bytes()).unwrap();
        prop_assert_eq!(back.to_bytes(), model.to_bytes());
    }

    #[test]
    fn reward_to_go_satisfies_recursion(rewards in prop::collection::vec(0.0f64..1.0, 1..12), gamma in 0.0f64..0.99) {
        let n = rewards.len();
        let examples: Vec<TrainingExample> = rewards
            .iter()
            .enumerate()
            .map(|(t, &r)| TrainingExample {
                context: vec![],
                action: ItemId(0),
                reward: r,
                event: Event::Click,
                next_context: vec![ItemId(0)],
                terminal: t + 1 == n,
                in_loss_window: true,
                return_to_go: 0.0,
                sequence: 0,
            })
            .collect();
        let g = reward_to_go(&examples, gamma);
        prop_assert!((g[n - 1] - rewards[n - 1]).abs() < 1e-12);
        for t in 0..n - 1 {
            prop_assert!((g[t] - (rewards[t] + gamma * g[t + 1])).abs() < 1e-12);
        }
    }

    #[test]
    fn double_q_target_uses_online_argmax(
        online in prop::collection::vec(-5.0f64..5.0, 4),
        target in prop::collection::vec(-5.0f64..5.0, 4),
        r in 0.0f64..1.0,
        gamma in 0.0f64..0.99,
    ) {
        let best = (0..4).fold(0, |b, i| if online[i] > online[b] { i } else { b });
        prop_assert!((double_q_target(r, false, gamma, &online, &target) - (r + gamma * target[best])).abs() < 1e-12);
        prop_assert_eq!(double_q_target(r, true, gamma, &online, &target), r);
    }
}

/// Gradient descent on the population weighted cross-entropy with weights
/// `exp((r - E_mu r) / beta)` over a free softmax policy recovers the
/// closed-form solution.
#[test]
fn lpi_descent_recovers_closed_form() {
    let mu = [vec![0.5, 0.3, 0.2], vec![0.1, 0.6, 0.3]];
    let r = [vec![1.0, 0.2, 0.5], vec![0.0, 0.3, 0.9]];
    let beta = 0.5;
    let inst = TabularInstance {
        context_dist: vec![0.4, 0.6],
        logging_policy: mu.to_vec(),
        rewards: r.to_vec(),
        transitions: None,
        gamma: None,
    };
    let closed = tabular_optimal_lpi(&inst, beta, Baseline::LoggingMean).unwrap();
    for x in 0..2 {
        let baseline: f64 = mu[x].iter().zip(&r[x]).map(|(m, v)| m * v).sum();
        let w: Vec<f64> = (0..3).map(|a| mu[x][a] * lpi_weight(r[x][a] - baseline, beta, 1e4)).collect();
        let total: f64 = w.iter().sum();
        let mut theta = [0.0f64; 3];
        for _ in 0..20_000 {
            let m = theta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = theta.iter().map(|t| (t - m).exp()).sum();
            let p: Vec<f64> = theta.iter().map(|t| (t - m).exp() / z).collect();
            for a in 0..3 {
                theta[a] -= 0.5 * (total * p[a] - w[a]);
            }
        }
        let m = theta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = theta.iter().map(|t| (t - m).exp()).sum();
        let tv: f64 = (0..3).map(|a| ((theta[a] - m).exp() / z - closed[x][a]).abs()).sum::<f64>() / 2.0;
        assert!(tv <= 1e-3, "context {x}: tv {tv}");
    }
}
