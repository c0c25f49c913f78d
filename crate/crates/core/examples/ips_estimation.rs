//! Off-policy value estimation from logged bandit feedback: IPS with and
//! without clipping against the direct method and the exact value.
//!
//! cargo run --release --example ips_estimation

use lpirec::estimators::{direct_method_value, ips_value_estimate, tabular_value, LoggedTriplet, TabularInstance};
use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> lpirec::Result<()> {
    let inst = TabularInstance {
        context_dist: vec![0.7, 0.3],
        logging_policy: vec![vec![0.8, 0.15, 0.05], vec![0.1, 0.1, 0.8]],
        rewards: vec![vec![0.2, 0.4, 0.9], vec![0.6, 0.1, 0.3]],
        transitions: None,
        gamma: None,
    };
    let target = vec![vec![0.1, 0.2, 0.7], vec![0.6, 0.2, 0.2]];
    println!("exact J(pi) = {:.4}", tabular_value(&inst, &target)?);

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let contexts = WeightedIndex::new(&inst.context_dist).expect("valid distribution");
    let actions: Vec<_> = inst.logging_policy.iter().map(|r| WeightedIndex::new(r).expect("valid row")).collect();
    let triplets: Vec<LoggedTriplet> = (0..50_000)
        .map(|_| {
            let x = contexts.sample(&mut rng);
            let a = actions[x].sample(&mut rng);
            let reward = f64::from(u8::from(rng.random_bool(inst.rewards[x][a])));
            LoggedTriplet { context: x, action: a, reward }
        })
        .collect();

    for clip in [f64::INFINITY, 10.0, 3.0] {
        let est = ips_value_estimate(&triplets, &target, &inst.logging_policy, clip)?;
        println!("IPS (clip {clip:>3}) = {:.4} +- {:.4}", est.value, est.standard_error);
    }
    // A reward model biased toward the logging policy's favourites.
    let biased = vec![vec![0.3, 0.4, 0.6], vec![0.5, 0.2, 0.4]];
    println!("direct method   = {:.4}", direct_method_value(&triplets, &target, &biased)?);
    Ok(())
}
