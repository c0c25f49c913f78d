//! Trains CE and LPI policies on sessions from a synthetic world and scores
//! both with the world's exact value function.
//!
//! cargo run --release --example synthetic_lpi -- [seed] [beta]

use lpirec::data::{split, SplitFractions};
use lpirec::encoder::AdamConfig;
use lpirec::estimators::estimate_logging_policy;
use lpirec::objectives::{ObjectiveConfig, ObjectiveKind};
use lpirec::synth::{generate_sessions, SyntheticWorld, WorldSpec};
use lpirec::train::{train_policy, TrainConfig};

fn main() -> lpirec::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let seed: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let beta: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.1);

    let world = SyntheticWorld::random(&WorldSpec::default(), seed)?;
    let sessions = generate_sessions(&world, 20_000, 2, seed)?;
    let data = split(sessions, SplitFractions::default(), seed)?;

    let base = TrainConfig {
        embedding_dim: 32,
        tie_weights: false,
        adam: AdamConfig { learning_rate: 0.01, ..Default::default() },
        batch_size: 256,
        epochs: 15,
        seed,
        ..Default::default()
    };
    let logging = estimate_logging_policy(&data, &TrainConfig { seed: seed + 100, ..base.clone() })?;

    let ce_cfg = TrainConfig { objective: ObjectiveConfig::with_kind(ObjectiveKind::Ce), ..base.clone() };
    let (ce, _) = train_policy(&data, &ce_cfg, None)?;

    let lpi_cfg = TrainConfig {
        objective: ObjectiveConfig { kind: ObjectiveKind::Lpi, beta, lambda_td: 1.0, ..Default::default() },
        ..base
    };
    let (lpi, _) = train_policy(&data, &lpi_cfg, Some(&logging))?;

    let mu = world.instance.logging_policy.clone();
    println!("J(mu)      = {:.4}", lpirec::estimators::tabular_value(&world.instance, &mu)?);
    println!("J(mu_hat)  = {:.4}", world.value_of(&logging)?);
    println!("J(ce)      = {:.4}", world.value_of(&ce)?);
    println!("J(lpi)     = {:.4}  (beta = {beta})", world.value_of(&lpi)?);
    Ok(())
}
