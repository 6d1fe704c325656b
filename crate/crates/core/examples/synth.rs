//! Writes a typed synthetic dataset: `cargo run --example synth -- OUT_DIR [ENTITIES] [SEED]`.

use tcqa::synthetic::{generate, SyntheticConfig};

fn main() -> tcqa::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = args.next().unwrap_or_else(|| "data".into());
    let entities = args.next().map_or(50, |v| v.parse().expect("entity count"));
    let seed = args.next().map_or(7, |v| v.parse().expect("seed"));
    let config = SyntheticConfig {
        entities,
        seed,
        ..Default::default()
    };
    let kg = generate(&config)?;
    kg.write_dir(&dir)?;
    println!("wrote {dir}");
    Ok(())
}
