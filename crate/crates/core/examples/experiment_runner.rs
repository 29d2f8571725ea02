//! Drives the config-based runner used by the `fsf` binary: pretrain, tune,
//! benchmark and compare on a tiny synthetic experiment, writing all
//! artifacts under a temporary directory.

use fsf::runner::{self, ExperimentConfig, Preset};

fn main() -> fsf::Result<()> {
    let dir = std::env::temp_dir().join("fsf_runner_example");
    let mut cfg = ExperimentConfig::from_toml(
        r#"
        name = "tiny"
        [dataset.synthetic]
        base_classes = 6
        validation_classes = 5
        novel_classes = 5
        base_examples = 10
        eval_examples = 6
        [pretrain]
        epochs = 6
        batch_size = 32
        [finetune]
        max_epochs = 5
        tuning_trials = 2
        [eval]
        k_shot = 1
        q_query = 5
        trials = 4
        "#,
        Some(Preset::CrossToy),
    )?;
    cfg.output_dir = dir.clone();
    cfg.validate()?;
    println!("resolved configuration:\n{}", cfg.to_toml()?);

    let pre = runner::cmd_pretrain(&cfg)?;
    println!("pretrain: final accuracy {:.3}", pre.final_accuracy.unwrap_or(f64::NAN));
    let tuned = runner::cmd_tune(&cfg, None)?;
    println!("tune: lr {} epochs {}", tuned.lr, tuned.epochs);
    let report = runner::cmd_benchmark(&cfg, None, None)?;
    println!("benchmark: mean {:.3}", report.mean_accuracy.unwrap_or(f64::NAN));
    let cmp = runner::cmd_compare(&cfg, None, None)?;
    print!("{}", cmp.to_markdown());
    println!("artifacts in {}", cfg.experiment_dir().display());
    Ok(())
}
