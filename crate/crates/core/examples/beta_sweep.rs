//! Sweeps the KL temperature on a synthetic world: small beta moves far from
//! the logging policy, large beta stays close to it.
//!
//! cargo run --release --example beta_sweep

use lpirec::data::{split, SplitFractions};
use lpirec::encoder::AdamConfig;
use lpirec::estimators::estimate_logging_policy;
use lpirec::eval::{mean_divergence, DivergenceKind};
use lpirec::objectives::{ObjectiveConfig, ObjectiveKind};
use lpirec::synth::{generate_sessions, SyntheticWorld, WorldSpec};
use lpirec::train::{train_policy, TrainConfig};
use lpirec::{ItemId, Split};

fn main() -> lpirec::Result<()> {
    let world = SyntheticWorld::random(&WorldSpec { n_contexts: 16, catalog_size: 30, ..Default::default() }, 1)?;
    let data = split(generate_sessions(&world, 5_000, 2, 1)?, SplitFractions::default(), 1)?;
    let base = TrainConfig {
        embedding_dim: 32,
        tie_weights: false,
        adam: AdamConfig { learning_rate: 0.01, ..Default::default() },
        epochs: 10,
        seed: 1,
        ..Default::default()
    };
    let logging = estimate_logging_policy(&data, &TrainConfig { seed: 101, ..base.clone() })?;
    let contexts: Vec<Vec<ItemId>> =
        data.examples(Split::Validation, usize::MAX)?.into_iter().map(|e| e.context).collect();

    println!("J(mu_hat) = {:.4}", world.value_of(&logging)?);
    for beta in [0.01, 0.1, 1.0, 10.0, 100.0] {
        let cfg = TrainConfig {
            objective: ObjectiveConfig { kind: ObjectiveKind::Lpi, beta, lambda_td: 1.0, ..Default::default() },
            ..base.clone()
        };
        let (model, _) = train_policy(&data, &cfg, Some(&logging))?;
        let js = mean_divergence(&model, &logging, &contexts, DivergenceKind::Js, 50_000, 0)?;
        println!("beta {beta:>6}: J = {:.4}, JS(pi || mu_hat) = {:.4}", world.value_of(&model)?, js.value);
    }
    Ok(())
}
