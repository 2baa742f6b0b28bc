//! Scores a prediction file against a labels file, the same path `eval
//! --from-file` takes. Starts with a three-class case small enough to rank
//! by hand, then a larger randomized one.
//!
//!     cargo run --example metrics_from_files

use attend_fusion::metrics::{
    evaluate_files, write_labels, write_predictions, LabelLine, LabelSet, PredictionLine,
};
use attend_fusion::rng::Rng;

fn main() -> attend_fusion::Result<()> {
    let dir = std::env::temp_dir();
    let preds_path = dir.join("example_preds.txt");
    let labels_path = dir.join("example_labels.txt");

    // One video, positives {0, 1}, scores 0.9 / 0.3 / 0.5. Ranked by score
    // the hits land at precision 1/1 and 2/3, so GAP = (1 + 2/3)/2 = 5/6.
    let preds = vec![PredictionLine {
        video_id: 7,
        scored: vec![(0, 0.9), (1, 0.3), (2, 0.5)],
    }];
    let labels = vec![LabelLine {
        video_id: 7,
        labels: LabelSet::new(vec![0, 1]),
    }];
    write_predictions(std::fs::File::create(&preds_path)?, &preds)?;
    write_labels(std::fs::File::create(&labels_path)?, &labels)?;

    let report = evaluate_files(&preds_path, &labels_path, 20, 0.5)?;
    println!(
        "hand case: GAP {:.6} (5/6 = {:.6})\n",
        report.gap,
        5.0 / 6.0
    );

    // 40 videos, 12 classes, noisy scores correlated with the labels.
    let mut rng = Rng::from_seed(9);
    let mut preds = Vec::new();
    let mut labels = Vec::new();
    for id in 0..40u64 {
        let positive: Vec<u32> = (0..12).filter(|_| rng.unit() < 0.25).collect();
        let set = LabelSet::new(positive);
        let scored = (0..12u32)
            .map(|c| {
                let base = if set.contains(c) { 0.7 } else { 0.3 };
                (c, (base + 0.25 * rng.normal()).clamp(0.0, 1.0))
            })
            .collect();
        preds.push(PredictionLine {
            video_id: id,
            scored,
        });
        labels.push(LabelLine {
            video_id: id,
            labels: set,
        });
    }
    write_predictions(std::fs::File::create(&preds_path)?, &preds)?;
    write_labels(std::fs::File::create(&labels_path)?, &labels)?;

    let report = evaluate_files(&preds_path, &labels_path, 20, 0.5)?;
    println!("randomized case over {} videos:", preds.len());
    println!("{}", report.to_table());
    Ok(())
}
