//! Trains a small fusion model end to end on generated data and prints the
//! evaluation trace, then proves the best checkpoint reloads to the exact
//! recorded score.
//!
//!     cargo run --example train_fusion

use attend_fusion::data::{generate, split, SyntheticSpec};
use attend_fusion::model::{build, load_weights, Arch, ModelConfig};
use attend_fusion::rng::derive_seed;
use attend_fusion::train::{evaluate, train, TrainConfig};

fn main() -> attend_fusion::Result<()> {
    let dataset = generate(&SyntheticSpec::default())?;
    let seed = 7;
    let (train_set, val_set) = split(&dataset, 0.8, derive_seed(seed, 1))?;

    let model_config = ModelConfig {
        arch: Arch::AttendFusion,
        visual_dim: dataset.visual_dim,
        audio_dim: dataset.audio_dim,
        vocab_size: dataset.vocab_size,
        seq_len: dataset.seq_len,
        branch_hidden: vec![16],
        fusion_hidden: vec![16],
    };
    let config = TrainConfig {
        epochs: 40,
        lr: 3e-3,
        seed,
        eval_every: 5,
        early_stop_patience: 4,
        ..TrainConfig::default()
    };

    let mut model = build(&model_config, derive_seed(seed, 2))?;
    println!(
        "training {} on {} train / {} val videos\n",
        model_config.arch.name(),
        train_set.len(),
        val_set.len()
    );

    let ckpt = std::env::temp_dir().join("example_train_fusion");
    let history = train(&mut model, &train_set, &val_set, &config, &ckpt)?;

    println!("epoch  train_loss  val_loss  GAP@20   micro-F1");
    for point in &history.entries {
        let train_loss = point
            .train_loss
            .map_or("    -    ".to_string(), |l| format!("{l:9.6}"));
        println!(
            "{:>5}  {train_loss}  {:8.6}  {:.6} {:.6}",
            point.epoch,
            point.report.mean_loss.unwrap_or(f64::NAN),
            point.report.gap,
            point.report.micro_f1
        );
    }
    println!(
        "\nbest epoch {} with validation GAP {:.6}",
        history.best_epoch, history.best_gap
    );

    let mut best = load_weights(&model_config, &ckpt.join("best.afw1"))?;
    let report = evaluate(&mut best, &val_set, config.gap_k, config.f1_threshold)?;
    println!(
        "reloaded best.afw1 re-evaluates to GAP {:.6} (bitwise match: {})",
        report.gap,
        report.gap.to_bits() == history.best_gap.to_bits()
    );
    Ok(())
}
