//! Writes a random synthetic world as JSON, for use as `world_path` in a
//! CLI config.
//!
//! cargo run --example write_world -- world.json [seed]

use lpirec::synth::{SyntheticWorld, WorldSpec};

fn main() -> lpirec::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = args.next().unwrap_or_else(|| "world.json".into());
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let world = SyntheticWorld::random(&WorldSpec::default(), seed)?;
    std::fs::write(&path, world.to_json())?;
    println!("wrote {path} ({} contexts, {} items)", world.n_contexts(), world.catalog_size);
    Ok(())
}
