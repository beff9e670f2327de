//! Writes a synthetic C-MAPSS-style subset: `cargo run --example synth -- DIR [ENGINES] [SEED]`.

use dast::cmapss::Subset;
use dast::synthetic::{generate, write_subset, SyntheticSpec};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = args.next().unwrap_or_else(|| "synthetic".into());
    let engines = args.next().map(|s| s.parse()).transpose()?.unwrap_or(20);
    let seed = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);
    let spec = SyntheticSpec {
        train_engines: engines,
        test_engines: engines.div_ceil(2),
        min_len: 128,
        max_len: 300,
        seed,
        ..SyntheticSpec::default()
    };
    write_subset(dir.as_ref(), Subset::Fd001, &generate(&spec)?)?;
    println!("wrote {engines} training engines to {dir}");
    Ok(())
}
