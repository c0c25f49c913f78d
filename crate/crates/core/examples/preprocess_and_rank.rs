//! Reads an interaction CSV, applies the preprocessing rules, trains a
//! next-item model and prints the ranking metrics with the length breakdown.
//!
//! cargo run --release --example preprocess_and_rank -- [interactions.csv]

use std::fs::File;

use lpirec::data::{
    preprocess, read_interactions_csv, split, PreprocessRules, RawInteraction, RawSequence, RewardMap, SplitFractions,
};
use lpirec::encoder::AdamConfig;
use lpirec::eval::{evaluate_split, EvalOptions};
use lpirec::objectives::{ObjectiveConfig, ObjectiveKind};
use lpirec::train::{train_policy, TrainConfig};
use lpirec::{Event, Split};

/// Sessions that mostly step forward through a 40-item catalog and end in a
/// purchase one time in four.
fn demo_sequences() -> Vec<RawSequence> {
    (0..800u64)
        .map(|s| {
            let len = 3 + (s * 7 % 15) as usize;
            let interactions = (0..len)
                .map(|t| {
                    let jump = if (s + t as u64).is_multiple_of(5) { 7 } else { 1 };
                    let item = (s * 11 + t as u64 * jump) % 40;
                    let event = if t + 1 == len && s % 4 == 0 { Event::Purchase } else { Event::Click };
                    RawInteraction { item: format!("item{item}"), event, timestamp: t as i64 }
                })
                .collect();
            RawSequence { id: format!("s{s}"), interactions }
        })
        .collect()
}

fn main() -> lpirec::Result<()> {
    let raw = match std::env::args().nth(1) {
        Some(path) => read_interactions_csv(File::open(path)?)?,
        None => demo_sequences(),
    };
    let rules = PreprocessRules { min_item_support: 3, ..Default::default() };
    let data = split(preprocess(&raw, &rules, &RewardMap::default())?, SplitFractions::default(), 0)?;
    let (train, val, test) = data.split_counts();
    println!("{} items, sequences train/validation/test = {train}/{val}/{test}", data.catalog_size);

    let cfg = TrainConfig {
        embedding_dim: 16,
        adam: AdamConfig { learning_rate: 0.01, ..Default::default() },
        epochs: 5,
        objective: ObjectiveConfig::with_kind(ObjectiveKind::Ce),
        ..Default::default()
    };
    let (model, _) = train_policy(&data, &cfg, None)?;
    let report = evaluate_split(&model, &data, Split::Test, &EvalOptions::default(), None, None)?;
    println!("{}", report.to_json());
    Ok(())
}
