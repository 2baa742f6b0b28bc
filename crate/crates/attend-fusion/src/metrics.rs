//! Multi-label objective and ranking metrics.
//!
//! The loss is the per-class binary cross-entropy summed over classes and
//! averaged over examples, with its exact gradient. Evaluation mirrors the
//! usual large-vocabulary video protocol: GAP@k over the pooled score-sorted
//! top-k predictions of every video, and micro-averaged F1 at a fixed
//! threshold.
//!
//! GAP is a pure rank function with deterministic tie-breaking
//! (video index, then class index), so reports are machine-independent and
//! invariant under monotone score transforms.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Predictions clipped into `[EPS, 1-EPS]` before logs; guards `log(0)`.
pub const BCE_CLIP_EPS: f64 = 1e-7;

/// Default truncation depth for GAP.
pub const DEFAULT_GAP_K: usize = 20;

/// Default decision threshold for micro-F1.
pub const DEFAULT_F1_THRESHOLD: f64 = 0.5;

/// Sorted, duplicate-free set of positive class indices for one video.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LabelSet(Vec<u32>);

impl LabelSet {
    /// Builds a label set; input is sorted and deduplicated.
    pub fn new(mut labels: Vec<u32>) -> Self {
        labels.sort_unstable();
        labels.dedup();
        LabelSet(labels)
    }

    pub fn indices(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, class: u32) -> bool {
        self.0.binary_search(&class).is_ok()
    }

    /// Errors with the offending label if any index is `>= vocab`.
    pub fn validate(&self, vocab: usize) -> Result<()> {
        for &label in &self.0 {
            if label as usize >= vocab {
                return Err(Error::LabelOutOfRange { label, vocab });
            }
        }
        Ok(())
    }
}

/// The evaluation summary for one dataset pass.
///
/// `mean_loss` is absent for file-based evaluations, where only top-k scores
/// exist and the loss over the full vocabulary is undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub gap: f64,
    pub micro_f1: f64,
    pub mean_loss: Option<f64>,
    pub num_videos: usize,
    pub gap_k: usize,
    pub f1_threshold: f64,
}

impl MetricsReport {
    /// Fixed-order, parse-stable JSON encoding.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Two-column aligned table.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<14} {}", format!("GAP@{}", self.gap_k), self.gap);
        let _ = writeln!(
            out,
            "{:<14} {}",
            format!("micro-F1@{}", self.f1_threshold),
            self.micro_f1
        );
        if let Some(loss) = self.mean_loss {
            let _ = writeln!(out, "{:<14} {}", "mean-loss", loss);
        }
        let _ = writeln!(out, "{:<14} {}", "videos", self.num_videos);
        out
    }
}

/// Binary cross-entropy over `[B x C]` probabilities: per-class terms are
/// summed within an example and averaged over the batch. Returns the loss
/// and its gradient with respect to the (clipped) predictions.
pub fn bce_loss(pred: &Tensor, labels: &[LabelSet]) -> Result<(f64, Tensor)> {
    if pred.rank() != 2 {
        return Err(Error::RankError {
            expected: 2,
            got: pred.rank(),
        });
    }
    let (batch, classes) = (pred.shape()[0], pred.shape()[1]);
    if batch != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "bce_loss got {batch} prediction rows but {} label sets",
            labels.len()
        )));
    }
    for set in labels {
        set.validate(classes)?;
    }

    let mut grad = Tensor::zeros(&[batch, classes]);
    let inv_batch = 1.0 / batch as f64;
    let mut total = 0.0;
    for i in 0..batch {
        for c in 0..classes {
            let y = if labels[i].contains(c as u32) {
                1.0
            } else {
                0.0
            };
            let p = pred.at2(i, c).clamp(BCE_CLIP_EPS, 1.0 - BCE_CLIP_EPS);
            total -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
            grad.set2(i, c, inv_batch * (p - y) / (p * (1.0 - p)));
        }
    }
    Ok((total * inv_batch, grad))
}

/// Per-class loss sum for a single example row; used by evaluation so that
/// dataset-level means accumulate in video-index order regardless of how the
/// pass was batched or sharded.
pub(crate) fn bce_example_sum(row: &[f64], labels: &LabelSet) -> f64 {
    let mut total = 0.0;
    for (c, &raw) in row.iter().enumerate() {
        let y = if labels.contains(c as u32) { 1.0 } else { 0.0 };
        let p = raw.clamp(BCE_CLIP_EPS, 1.0 - BCE_CLIP_EPS);
        total -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
    }
    total
}

/// Scored classes for one video: `(class index, score)` pairs.
pub type ScoredClasses = Vec<(u32, f64)>;

/// Global average precision at depth `k`.
///
/// Each video is truncated to its `k` highest-scoring classes; the surviving
/// `(score, is_positive)` pairs are pooled across videos and sorted by
/// descending score, ties broken by ascending (video index, class index).
/// GAP is the average of precision-at-hit over that pooled list, normalized
/// by the total number of positives in the whole set (untruncated).
pub fn gap_at_k(preds: &[ScoredClasses], labels: &[LabelSet], k: usize) -> Result<f64> {
    assert!(k >= 1, "gap_at_k requires k >= 1");
    if preds.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "gap_at_k got {} prediction lists but {} label sets",
            preds.len(),
            labels.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::EmptyEvaluationSet);
    }
    let total_positives: usize = labels.iter().map(LabelSet::len).sum();
    if total_positives == 0 {
        return Err(Error::NoPositives);
    }

    // Pool per-video top-k.
    let mut pooled: Vec<(f64, usize, u32, bool)> = Vec::new();
    for (video, scored) in preds.iter().enumerate() {
        let mut ranked = scored.clone();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked.truncate(k);
        for (class, score) in ranked {
            if !score.is_finite() {
                return Err(Error::NonFiniteInput("gap_at_k scores"));
            }
            pooled.push((score, video, class, labels[video].contains(class)));
        }
    }

    pooled.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut hits = 0usize;
    let mut precision_sum = 0.0;
    for (rank0, &(_, _, _, positive)) in pooled.iter().enumerate() {
        if positive {
            hits += 1;
            precision_sum += hits as f64 / (rank0 + 1) as f64;
        }
    }
    Ok(precision_sum / total_positives as f64)
}

/// Micro-averaged F1 over all (video, class) decisions `score >= threshold`.
/// Returns 0 by convention when there are no decisions and no positives.
pub fn micro_f1(preds: &Tensor, labels: &[LabelSet], threshold: f64) -> Result<f64> {
    if preds.rank() != 2 {
        return Err(Error::RankError {
            expected: 2,
            got: preds.rank(),
        });
    }
    let (batch, classes) = (preds.shape()[0], preds.shape()[1]);
    if batch != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "micro_f1 got {batch} prediction rows but {} label sets",
            labels.len()
        )));
    }
    let mut counts = F1Counts::default();
    for i in 0..batch {
        for c in 0..classes {
            counts.update(preds.at2(i, c) >= threshold, labels[i].contains(c as u32));
        }
    }
    Ok(counts.f1())
}

/// Pooled decision counts; shared by the dense and sparse F1 paths.
#[derive(Debug, Clone, Copy, Default)]
pub struct F1Counts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl F1Counts {
    pub fn update(&mut self, decided_positive: bool, is_positive: bool) {
        match (decided_positive, is_positive) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => {}
        }
    }

    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            0.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }
}

/// Micro-F1 from sparse per-video scored lists: classes absent from a list
/// count as negative decisions.
pub fn micro_f1_sparse(
    preds: &[ScoredClasses],
    labels: &[LabelSet],
    threshold: f64,
) -> Result<f64> {
    if preds.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "micro_f1_sparse got {} prediction lists but {} label sets",
            preds.len(),
            labels.len()
        )));
    }
    let mut counts = F1Counts::default();
    for (video, scored) in preds.iter().enumerate() {
        let mut decided_positives: Vec<u32> = scored
            .iter()
            .filter(|&&(_, s)| s >= threshold)
            .map(|&(c, _)| c)
            .collect();
        decided_positives.sort_unstable();
        decided_positives.dedup();
        for &class in &decided_positives {
            counts.update(true, labels[video].contains(class));
        }
        for &class in labels[video].indices() {
            if decided_positives.binary_search(&class).is_err() {
                counts.update(false, true);
            }
        }
    }
    Ok(counts.f1())
}

/// One parsed line of the prediction file: id plus scored classes.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionLine {
    pub video_id: u64,
    pub scored: ScoredClasses,
}

/// Writes prediction lines: `<video id> <class>:<score> ...` per video.
/// Scores use the shortest round-trip decimal encoding, so a written file
/// reproduces the exact f64 values on read.
pub fn write_predictions<W: Write>(mut out: W, lines: &[PredictionLine]) -> Result<()> {
    for line in lines {
        let mut text = line.video_id.to_string();
        for &(class, score) in &line.scored {
            let _ = write!(text, " {class}:{score}");
        }
        writeln!(out, "{text}")?;
    }
    Ok(())
}

/// Parses a prediction file written by [`write_predictions`].
pub fn read_predictions<R: Read>(input: R) -> Result<Vec<PredictionLine>> {
    let reader = BufReader::new(input);
    let mut lines = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let video_id: u64 = fields
            .next()
            .unwrap()
            .parse()
            .map_err(|_| bad_line("predictions", lineno, "video id"))?;
        let mut scored = Vec::new();
        for field in fields {
            let (class, score) = field
                .split_once(':')
                .ok_or_else(|| bad_line("predictions", lineno, "class:score pair"))?;
            let class: u32 = class
                .parse()
                .map_err(|_| bad_line("predictions", lineno, "class index"))?;
            let score: f64 = score
                .parse()
                .map_err(|_| bad_line("predictions", lineno, "score"))?;
            scored.push((class, score));
        }
        lines.push(PredictionLine { video_id, scored });
    }
    Ok(lines)
}

/// One parsed line of the labels file: id plus positive class indices.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelLine {
    pub video_id: u64,
    pub labels: LabelSet,
}

/// Writes label lines: `<video id> <class> <class> ...` per video.
pub fn write_labels<W: Write>(mut out: W, lines: &[LabelLine]) -> Result<()> {
    for line in lines {
        let mut text = line.video_id.to_string();
        for &class in line.labels.indices() {
            let _ = write!(text, " {class}");
        }
        writeln!(out, "{text}")?;
    }
    Ok(())
}

/// Parses a labels file written by [`write_labels`].
pub fn read_labels<R: Read>(input: R) -> Result<Vec<LabelLine>> {
    let reader = BufReader::new(input);
    let mut lines = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let video_id: u64 = fields
            .next()
            .unwrap()
            .parse()
            .map_err(|_| bad_line("labels", lineno, "video id"))?;
        let mut labels = Vec::new();
        for field in fields {
            labels.push(
                field
                    .parse()
                    .map_err(|_| bad_line("labels", lineno, "class index"))?,
            );
        }
        lines.push(LabelLine {
            video_id,
            labels: LabelSet::new(labels),
        });
    }
    Ok(lines)
}

fn bad_line(kind: &str, lineno: usize, what: &str) -> Error {
    Error::CorruptFile(format!("{kind} file line {}: malformed {what}", lineno + 1))
}

/// Evaluates a prediction file against a labels file. Lines are matched by
/// video id; every prediction id must appear in the labels file.
pub fn evaluate_files(
    pred_path: &Path,
    labels_path: &Path,
    gap_k: usize,
    f1_threshold: f64,
) -> Result<MetricsReport> {
    let preds = read_predictions(std::fs::File::open(pred_path)?)?;
    let labels = read_labels(std::fs::File::open(labels_path)?)?;
    let by_id: std::collections::HashMap<u64, &LabelSet> =
        labels.iter().map(|l| (l.video_id, &l.labels)).collect();
    let mut scored: Vec<ScoredClasses> = Vec::with_capacity(preds.len());
    let mut label_sets: Vec<LabelSet> = Vec::with_capacity(preds.len());
    for line in &preds {
        let set = by_id.get(&line.video_id).ok_or_else(|| {
            Error::CorruptFile(format!(
                "video id {} missing from labels file",
                line.video_id
            ))
        })?;
        scored.push(line.scored.clone());
        label_sets.push((*set).clone());
    }
    let gap = gap_at_k(&scored, &label_sets, gap_k)?;
    let f1 = micro_f1_sparse(&scored, &label_sets, f1_threshold)?;
    Ok(MetricsReport {
        gap,
        micro_f1: f1,
        mean_loss: None,
        num_videos: scored.len(),
        gap_k,
        f1_threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn label_set_sorts_and_dedupes() {
        let set = LabelSet::new(vec![5, 1, 3, 1, 5]);
        assert_eq!(set.indices(), &[1, 3, 5]);
        assert!(set.contains(3));
        assert!(!set.contains(2));
        assert!(set.validate(6).is_ok());
        assert!(matches!(
            set.validate(5),
            Err(Error::LabelOutOfRange { label: 5, vocab: 5 })
        ));
    }

    #[test]
    fn bce_closed_form_ln2() {
        let pred = Tensor::from_rows(&[vec![0.5]]).unwrap();
        let (loss, _) = bce_loss(&pred, &[LabelSet::new(vec![0])]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn bce_near_zero_for_clipped_perfect_predictions() {
        let classes = 5;
        let mut row = vec![BCE_CLIP_EPS; classes];
        row[1] = 1.0 - BCE_CLIP_EPS;
        row[3] = 1.0 - BCE_CLIP_EPS;
        let pred = Tensor::from_rows(&[row]).unwrap();
        let (loss, _) = bce_loss(&pred, &[LabelSet::new(vec![1, 3])]).unwrap();
        assert!(loss >= 0.0);
        assert!(loss <= classes as f64 * 1e-6, "loss {loss}");
    }

    #[test]
    fn bce_gradient_matches_finite_differences() {
        let mut rng = Rng::from_seed(17);
        for _ in 0..10 {
            let (batch, classes) = (2, 3);
            let data: Vec<f64> = (0..batch * classes)
                .map(|_| rng.uniform(0.05, 0.95))
                .collect();
            let pred = Tensor::new(vec![batch, classes], data).unwrap();
            let labels = vec![LabelSet::new(vec![0, 2]), LabelSet::new(vec![1])];
            let (_, grad) = bce_loss(&pred, &labels).unwrap();
            let h = 1e-6;
            for e in 0..batch * classes {
                let mut plus = pred.clone();
                plus.data_mut()[e] += h;
                let mut minus = pred.clone();
                minus.data_mut()[e] -= h;
                let (lp, _) = bce_loss(&plus, &labels).unwrap();
                let (lm, _) = bce_loss(&minus, &labels).unwrap();
                let numeric = (lp - lm) / (2.0 * h);
                let g = grad.data()[e];
                let rel = (g - numeric).abs() / g.abs().max(numeric.abs()).max(1e-3);
                assert!(rel < 1e-6, "entry {e}: analytic {g} vs numeric {numeric}");
            }
        }
    }

    #[test]
    fn bce_rejects_mismatched_batches_and_bad_labels() {
        let pred = Tensor::from_rows(&[vec![0.5, 0.5]]).unwrap();
        assert!(matches!(bce_loss(&pred, &[]), Err(Error::ShapeMismatch(_))));
        assert!(matches!(
            bce_loss(&pred, &[LabelSet::new(vec![7])]),
            Err(Error::LabelOutOfRange { .. })
        ));
    }

    #[test]
    fn gap_hand_oracle_case() {
        // positives {A=0, B=2}; scores A=0.9, C=0.5, B=0.3
        let preds = vec![vec![(0, 0.9), (1, 0.5), (2, 0.3)]];
        let labels = vec![LabelSet::new(vec![0, 2])];
        let gap = gap_at_k(&preds, &labels, 20).unwrap();
        assert!((gap - 5.0 / 6.0).abs() < 1e-12, "gap {gap}");
    }

    #[test]
    fn gap_perfect_ranking_is_exactly_one() {
        let preds = vec![
            vec![(0, 0.9), (1, 0.8), (2, 0.1)],
            vec![(2, 0.95), (0, 0.05), (1, 0.02)],
        ];
        let labels = vec![LabelSet::new(vec![0, 1]), LabelSet::new(vec![2])];
        let gap = gap_at_k(&preds, &labels, 20).unwrap();
        assert_eq!(gap, 1.0);
    }

    #[test]
    fn gap_truncates_per_video_before_pooling() {
        // k=1 keeps only the top class of each video; the positive at rank 2
        // is dropped from the pool but still counted in the denominator.
        let preds = vec![vec![(0, 0.9), (1, 0.8)]];
        let labels = vec![LabelSet::new(vec![0, 1])];
        let gap = gap_at_k(&preds, &labels, 1).unwrap();
        assert!((gap - 0.5).abs() < 1e-12);
    }

    #[test]
    fn gap_error_paths() {
        assert!(matches!(
            gap_at_k(&[], &[], 20),
            Err(Error::EmptyEvaluationSet)
        ));
        let preds = vec![vec![(0, 0.9)]];
        let labels = vec![LabelSet::new(vec![])];
        assert!(matches!(
            gap_at_k(&preds, &labels, 20),
            Err(Error::NoPositives)
        ));
    }

    /// Brute-force average precision straight from the definition: the rank
    /// of each retained (video, class) pair is found by counting, in O(n^2),
    /// how many pairs strictly precede it under (score desc, video asc,
    /// class asc); precision at a positive's rank counts positives at or
    /// before that rank the same way. No sorting is shared with `gap_at_k`.
    pub(super) fn brute_force_gap(preds: &[ScoredClasses], labels: &[LabelSet], k: usize) -> f64 {
        // Per-video truncation, itself done by counting rather than sorting:
        // a pair survives if fewer than k classes in the same video precede it.
        let mut pool: Vec<(f64, usize, u32, bool)> = Vec::new();
        for (video, scored) in preds.iter().enumerate() {
            for &(class, score) in scored {
                let earlier = scored
                    .iter()
                    .filter(|&&(c2, s2)| s2 > score || (s2 == score && c2 < class))
                    .count();
                if earlier < k {
                    pool.push((score, video, class, labels[video].contains(class)));
                }
            }
        }
        let precedes = |a: &(f64, usize, u32, bool), b: &(f64, usize, u32, bool)| {
            a.0 > b.0 || (a.0 == b.0 && (a.1 < b.1 || (a.1 == b.1 && a.2 < b.2)))
        };
        let mut precision_sum = 0.0;
        for item in &pool {
            if !item.3 {
                continue;
            }
            let rank = 1 + pool.iter().filter(|other| precedes(other, item)).count();
            // `item` is itself positive, so positives at-or-before its rank
            // are those strictly preceding it, plus one.
            let positives_before = pool
                .iter()
                .filter(|other| other.3 && precedes(other, item))
                .count();
            precision_sum += (positives_before + 1) as f64 / rank as f64;
        }
        let total_positives: usize = labels.iter().map(LabelSet::len).sum();
        precision_sum / total_positives as f64
    }

    /// Random GAP instance with duplicate scores forced in, so tie-breaking
    /// is actually exercised.
    pub(super) fn random_gap_instance(
        rng: &mut Rng,
        max_videos: usize,
        classes: usize,
    ) -> (Vec<ScoredClasses>, Vec<LabelSet>) {
        let videos = 1 + rng.below(max_videos as u64) as usize;
        let mut preds = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..videos {
            // Quantized scores create cross-video and within-video ties.
            let scored: ScoredClasses = (0..classes as u32)
                .map(|c| (c, rng.below(8) as f64 / 8.0))
                .collect();
            preds.push(scored);
            let count = 1 + rng.below(3) as usize;
            labels.push(LabelSet::new(
                rng.sample_distinct(classes, count)
                    .iter()
                    .map(|&c| c as u32)
                    .collect(),
            ));
        }
        (preds, labels)
    }

    #[test]
    fn gap_matches_brute_force_on_random_instances() {
        let mut rng = Rng::from_seed(51);
        for case in 0..50 {
            let (preds, labels) = random_gap_instance(&mut rng, 6, 9);
            let k = 1 + rng.below(9) as usize;
            let fast = gap_at_k(&preds, &labels, k).unwrap();
            let brute = brute_force_gap(&preds, &labels, k);
            assert!(
                (fast - brute).abs() < 1e-12,
                "case {case}: fast {fast} vs brute {brute}"
            );
        }
    }

    #[test]
    fn gap_is_invariant_under_monotone_transform_bitwise() {
        let mut rng = Rng::from_seed(23);
        for _ in 0..50 {
            let videos = 1 + rng.below(5) as usize;
            let classes = 10;
            let mut preds = Vec::new();
            let mut labels = Vec::new();
            for _ in 0..videos {
                let scored: ScoredClasses = (0..classes as u32).map(|c| (c, rng.unit())).collect();
                preds.push(scored);
                let count = 1 + rng.below(3) as usize;
                labels.push(LabelSet::new(
                    rng.sample_distinct(classes, count)
                        .iter()
                        .map(|&c| c as u32)
                        .collect(),
                ));
            }
            let transformed: Vec<ScoredClasses> = preds
                .iter()
                .map(|v| v.iter().map(|&(c, s)| (c, 2.0 * s + 1.0)).collect())
                .collect();
            let a = gap_at_k(&preds, &labels, 4).unwrap();
            let b = gap_at_k(&transformed, &labels, 4).unwrap();
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn micro_f1_cases() {
        let perfect = Tensor::from_rows(&[vec![0.9, 0.1], vec![0.2, 0.8]]).unwrap();
        let labels = vec![LabelSet::new(vec![0]), LabelSet::new(vec![1])];
        assert_eq!(micro_f1(&perfect, &labels, 0.5).unwrap(), 1.0);

        let all_low = Tensor::from_rows(&[vec![0.1, 0.1]]).unwrap();
        assert_eq!(
            micro_f1(&all_low, &[LabelSet::new(vec![0])], 0.5).unwrap(),
            0.0
        );

        // TP=1 (class 0), FP=1 (class 1), FN=1 (class 2) -> F1 = 0.5
        let mixed = Tensor::from_rows(&[vec![0.9, 0.9, 0.1]]).unwrap();
        assert_eq!(
            micro_f1(&mixed, &[LabelSet::new(vec![0, 2])], 0.5).unwrap(),
            0.5
        );

        // no positives, no decisions -> 0 by convention
        let empty = Tensor::from_rows(&[vec![0.1, 0.1]]).unwrap();
        assert_eq!(
            micro_f1(&empty, &[LabelSet::new(vec![])], 0.5).unwrap(),
            0.0
        );
    }

    #[test]
    fn sparse_f1_matches_dense_on_full_lists() {
        let dense = Tensor::from_rows(&[vec![0.9, 0.2, 0.7], vec![0.1, 0.6, 0.4]]).unwrap();
        let labels = vec![LabelSet::new(vec![0]), LabelSet::new(vec![1, 2])];
        let sparse: Vec<ScoredClasses> = (0..2)
            .map(|i| (0..3).map(|c| (c as u32, dense.at2(i, c))).collect())
            .collect();
        assert_eq!(
            micro_f1(&dense, &labels, 0.5).unwrap(),
            micro_f1_sparse(&sparse, &labels, 0.5).unwrap()
        );
    }

    #[test]
    fn prediction_and_label_files_round_trip_exactly() {
        let lines = vec![
            PredictionLine {
                video_id: 7,
                scored: vec![(3, 0.123456789012345), (1, 1.0 / 3.0)],
            },
            PredictionLine {
                video_id: 8,
                scored: vec![(0, 1e-12)],
            },
        ];
        let mut buf = Vec::new();
        write_predictions(&mut buf, &lines).unwrap();
        let parsed = read_predictions(buf.as_slice()).unwrap();
        assert_eq!(parsed, lines);

        let labels = vec![
            LabelLine {
                video_id: 7,
                labels: LabelSet::new(vec![3, 1]),
            },
            LabelLine {
                video_id: 8,
                labels: LabelSet::new(vec![]),
            },
        ];
        let mut buf = Vec::new();
        write_labels(&mut buf, &labels).unwrap();
        let parsed = read_labels(buf.as_slice()).unwrap();
        assert_eq!(parsed, labels);
    }

    #[test]
    fn malformed_files_are_rejected() {
        assert!(matches!(
            read_predictions("7 3:0.5 garbage".as_bytes()),
            Err(Error::CorruptFile(_))
        ));
        assert!(matches!(
            read_predictions("notanid 3:0.5".as_bytes()),
            Err(Error::CorruptFile(_))
        ));
        assert!(matches!(
            read_labels("7 notaclass".as_bytes()),
            Err(Error::CorruptFile(_))
        ));
    }
}
