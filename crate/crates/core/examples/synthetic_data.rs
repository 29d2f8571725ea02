//! Generates a source-style and a target-style synthetic dataset, prints
//! per-class statistics and writes a few PNG samples.
//!
//! `cargo run --release --example synthetic_data -- [out_dir]`

use std::path::PathBuf;

use fsf::data::{make_synthetic_dataset, DomainStyle, SyntheticSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("fsf_synthetic"));

    std::fs::create_dir_all(&out)?;

    let source = SyntheticSpec::new(4, 6, 36, 1);
    let mut target = SyntheticSpec::new(4, 6, 36, 2);
    target.class_offset = 4;
    target.domain = DomainStyle::target();

    for (name, spec) in [("source", &source), ("target", &target)] {
        let data = make_synthetic_dataset(spec)?;
        println!(
            "{name} domain: {} classes x {} images",
            data.len(),
            spec.examples_per_class
        );
        for (class, images) in &data {
            let mean: Vec<String> = images[0].channel_means().iter().map(|m| format!("{m:.2}")).collect();
            println!(
                "  {class}: first image {}x{}, channel means [{}]",
                images[0].height(),
                images[0].width(),
                mean.join(", ")
            );
            let path = out.join(format!("{name}_{class}.png"));
            images[0].save_png(&path)?;
        }
    }
    println!("samples written to {}", out.display());
    Ok(())
}
