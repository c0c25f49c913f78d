//! Weighted matrix factorization as a reward imputer for the iAR@1 metric,
//! on a synthetic dataset with Bernoulli rating feedback.
//!
//! cargo run --release --example mf_imputation

use lpirec::data::{split, SplitFractions};
use lpirec::encoder::AdamConfig;
use lpirec::eval::{ar_at_1, iar_at_1};
use lpirec::objectives::{ObjectiveConfig, ObjectiveKind};
use lpirec::synth::{fit_weighted_mf, generate_sessions, rating_cells, MfConfig, SyntheticWorld, WorldSpec};
use lpirec::train::{train_policy, TrainConfig};
use lpirec::Split;

fn main() -> lpirec::Result<()> {
    let world = SyntheticWorld::random(&WorldSpec { n_contexts: 8, catalog_size: 24, ..Default::default() }, 3)?;
    let data = split(generate_sessions(&world, 3_000, 4, 3)?, SplitFractions::default(), 3)?;

    let cells = rating_cells(&data);
    let mf = fit_weighted_mf(&cells, data.sequences.len(), data.catalog_size, &MfConfig::default())?;
    for (epoch, obj) in mf.objective_history.iter().enumerate() {
        println!("mf epoch {epoch:>2}: objective {obj:.3}");
    }

    let cfg = TrainConfig {
        embedding_dim: 16,
        adam: AdamConfig { learning_rate: 0.01, ..Default::default() },
        epochs: 5,
        objective: ObjectiveConfig::with_kind(ObjectiveKind::RewardCe),
        ..Default::default()
    };
    let (model, _) = train_policy(&data, &cfg, None)?;
    let test = data.examples(Split::Test, usize::MAX)?;
    println!("AR@1  = {:.4}", ar_at_1(&model, &test)?);
    println!("iAR@1 = {:.4}", iar_at_1(&model, &test, &mf)?);
    Ok(())
}
