//! Synthetic multimodal datasets with planted per-modality structure, the
//! AVF1 on-disk format, and deterministic batching.
//!
//! Classes are partitioned by *affinity*: some are detectable only from the
//! visual stream, some only from audio, some (more weakly) from both, and
//! the remainder from neither. Each planted class gets a unit-norm prototype
//! in its modality's feature space, and a video's frames are the sum of its
//! labels' prototypes plus Gaussian noise. That construction makes claims
//! like "the audio branch alone cannot learn visual-only classes"
//! falsifiable on a desk-sized corpus.
//!
//! Everything downstream of a seed is bitwise-reproducible: all randomness
//! flows through the in-repo generator, and features pass through 32-bit
//! rounding before use so in-memory data matches what a written file reads
//! back.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binfmt::{read_checked, Cursor, Payload};
use crate::error::{Error, Result};
use crate::metrics::LabelSet;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Dataset-file magic bytes.
pub const DATASET_MAGIC: &[u8; 4] = b"AVF1";

/// Current dataset-file version.
pub const DATASET_VERSION: u16 = 1;

/// Cap on `labels_per_video_mean`: far above any sensible value, and low
/// enough that the exp(-mean) term in Poisson sampling cannot underflow.
const MAX_LABEL_MEAN: f64 = 100.0;

/// Prototype redraw policy: resample until the new prototype's |cosine|
/// against every accepted one stays below the threshold.
const PROTOTYPE_MAX_COS: f64 = 0.5;
const PROTOTYPE_MAX_ATTEMPTS: usize = 100;

/// Recipe for a synthetic dataset. The default is the desk-scale corpus
/// used throughout the tests and examples: 250 videos over 24 classes
/// (9 visual-only, 9 audio-only, 3 both, 3 pure noise), 4 frames of
/// 16-/8-dim features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub num_videos: usize,
    pub vocab_size: usize,
    pub visual_dim: usize,
    pub audio_dim: usize,
    pub seq_len: usize,
    pub labels_per_video_mean: f64,
    pub frac_visual_only: f64,
    pub frac_audio_only: f64,
    pub frac_both: f64,
    pub signal_strength: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_videos: 250,
            vocab_size: 24,
            visual_dim: 16,
            audio_dim: 8,
            seq_len: 4,
            labels_per_video_mean: 3.0,
            frac_visual_only: 0.375,
            frac_audio_only: 0.375,
            frac_both: 0.125,
            signal_strength: 1.0,
            noise_sigma: 0.5,
            seed: 7,
        }
    }
}

/// Which modality (if any) carries a class's planted prototype.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassAffinity {
    VisualOnly,
    AudioOnly,
    Both,
    Noise,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("num_videos", self.num_videos),
            ("vocab_size", self.vocab_size),
            ("visual_dim", self.visual_dim),
            ("audio_dim", self.audio_dim),
            ("seq_len", self.seq_len),
        ] {
            if value == 0 {
                return Err(Error::InvalidSpec(format!("{name} must be >= 1, got 0")));
            }
        }
        for (name, value) in [
            ("frac_visual_only", self.frac_visual_only),
            ("frac_audio_only", self.frac_audio_only),
            ("frac_both", self.frac_both),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::InvalidSpec(format!(
                    "{name} must be within [0, 1], got {value}"
                )));
            }
        }
        let total = self.frac_visual_only + self.frac_audio_only + self.frac_both;
        if total > 1.0 {
            return Err(Error::InvalidSpec(format!(
                "affinity fractions must sum to <= 1, got {total}"
            )));
        }
        if !self.labels_per_video_mean.is_finite()
            || self.labels_per_video_mean <= 0.0
            || self.labels_per_video_mean > MAX_LABEL_MEAN
        {
            return Err(Error::InvalidSpec(format!(
                "labels_per_video_mean must be in (0, {MAX_LABEL_MEAN}], got {}",
                self.labels_per_video_mean
            )));
        }
        if !self.signal_strength.is_finite() {
            return Err(Error::InvalidSpec("signal_strength must be finite".into()));
        }
        if !self.noise_sigma.is_finite() || self.noise_sigma < 0.0 {
            return Err(Error::InvalidSpec(format!(
                "noise_sigma must be finite and >= 0, got {}",
                self.noise_sigma
            )));
        }
        let (nv, na, nb) = self.affinity_counts();
        if nv + na + nb > self.vocab_size {
            return Err(Error::InvalidSpec(format!(
                "rounded affinity counts {nv}+{na}+{nb} exceed vocab_size {}; \
                 lower the fractions slightly",
                self.vocab_size
            )));
        }
        Ok(())
    }

    /// Rounded per-affinity class counts (visual-only, audio-only, both);
    /// whatever remains of the vocabulary is noise classes.
    pub fn affinity_counts(&self) -> (usize, usize, usize) {
        let n = self.vocab_size as f64;
        (
            (self.frac_visual_only * n).round() as usize,
            (self.frac_audio_only * n).round() as usize,
            (self.frac_both * n).round() as usize,
        )
    }

    /// Affinity of a class index: classes are assigned by contiguous index
    /// ranges in the order visual-only, audio-only, both, noise.
    pub fn affinity_of(&self, class: usize) -> ClassAffinity {
        let (nv, na, nb) = self.affinity_counts();
        if class < nv {
            ClassAffinity::VisualOnly
        } else if class < nv + na {
            ClassAffinity::AudioOnly
        } else if class < nv + na + nb {
            ClassAffinity::Both
        } else {
            ClassAffinity::Noise
        }
    }
}

/// One video: id, positive labels, and its two `[T x dim]` feature streams.
/// Feature values are exactly representable in 32 bits.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoRecord {
    pub id: u64,
    pub labels: LabelSet,
    pub visual: Tensor,
    pub audio: Tensor,
}

/// An in-memory dataset plus the geometry shared by all its records.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub vocab_size: usize,
    pub visual_dim: usize,
    pub audio_dim: usize,
    pub seq_len: usize,
    records: Vec<VideoRecord>,
}

impl Dataset {
    pub fn records(&self) -> &[VideoRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn label_sets(&self) -> Vec<LabelSet> {
        self.records.iter().map(|r| r.labels.clone()).collect()
    }

    /// New dataset holding clones of the records at `indices`, in order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            vocab_size: self.vocab_size,
            visual_dim: self.visual_dim,
            audio_dim: self.audio_dim,
            seq_len: self.seq_len,
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
        }
    }

    /// Deterministic shuffled mini-batches; the final batch may be short.
    pub fn batches(&self, batch_size: usize, shuffle_seed: u64) -> Batches<'_> {
        assert!(batch_size >= 1, "batch_size must be >= 1");
        let mut order: Vec<usize> = (0..self.records.len()).collect();
        Rng::from_seed(shuffle_seed).shuffle(&mut order);
        Batches {
            dataset: self,
            order,
            pos: 0,
            batch_size,
        }
    }

    /// Index-ordered batches (no shuffling) — the evaluation pass.
    pub fn ordered_batches(&self, batch_size: usize) -> Batches<'_> {
        assert!(batch_size >= 1, "batch_size must be >= 1");
        Batches {
            dataset: self,
            order: (0..self.records.len()).collect(),
            pos: 0,
            batch_size,
        }
    }

    /// One stacked batch of the records at `indices`, in the given order.
    pub fn batch_at(&self, indices: &[usize]) -> Batch {
        let visual: Vec<Tensor> = indices
            .iter()
            .map(|&i| self.records[i].visual.clone())
            .collect();
        let audio: Vec<Tensor> = indices
            .iter()
            .map(|&i| self.records[i].audio.clone())
            .collect();
        let labels = indices
            .iter()
            .map(|&i| self.records[i].labels.clone())
            .collect();
        Batch {
            visual: Tensor::stack0(&visual).expect("records share shapes"),
            audio: Tensor::stack0(&audio).expect("records share shapes"),
            labels,
            indices: indices.to_vec(),
        }
    }
}

/// One mini-batch: stacked `[B x T x dim]` features, per-video labels, and
/// the dataset indices the rows came from.
#[derive(Debug, Clone)]
pub struct Batch {
    pub visual: Tensor,
    pub audio: Tensor,
    pub labels: Vec<LabelSet>,
    pub indices: Vec<usize>,
}

/// Iterator over the batches of one deterministic epoch order.
#[derive(Debug)]
pub struct Batches<'a> {
    dataset: &'a Dataset,
    order: Vec<usize>,
    pos: usize,
    batch_size: usize,
}

impl Iterator for Batches<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let indices = &self.order[self.pos..end];
        self.pos = end;
        Some(self.dataset.batch_at(indices))
    }
}

/// Splits into (train, validation) by a seeded permutation of the record
/// indices: the first round(n * fraction) permuted indices become the train
/// set. Membership is random; within each half the original record order is
/// kept.
pub fn split(dataset: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidFraction(train_fraction));
    }
    let n = dataset.len();
    let mut order: Vec<usize> = (0..n).collect();
    Rng::from_seed(seed).shuffle(&mut order);
    let train_len = ((n as f64) * train_fraction).round() as usize;
    let mut train_idx = order[..train_len].to_vec();
    let mut val_idx = order[train_len..].to_vec();
    train_idx.sort_unstable();
    val_idx.sort_unstable();
    Ok((dataset.subset(&train_idx), dataset.subset(&val_idx)))
}

/// Per-class unit-norm prototypes for one modality. Classes without a
/// prototype in this modality hold None.
fn draw_prototypes(
    spec: &SyntheticSpec,
    rng: &mut Rng,
    dim: usize,
    planted: impl Fn(ClassAffinity) -> bool,
) -> Result<Vec<Option<Vec<f64>>>> {
    let mut protos: Vec<Option<Vec<f64>>> = Vec::with_capacity(spec.vocab_size);
    for class in 0..spec.vocab_size {
        if !planted(spec.affinity_of(class)) {
            protos.push(None);
            continue;
        }
        let mut accepted = None;
        for _ in 0..PROTOTYPE_MAX_ATTEMPTS {
            let mut v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-12 {
                continue;
            }
            v.iter_mut().for_each(|x| *x /= norm);
            let separated = protos
                .iter()
                .flatten()
                .all(|p| cosine(p, &v).abs() < PROTOTYPE_MAX_COS);
            if separated {
                accepted = Some(v);
                break;
            }
        }
        match accepted {
            Some(v) => protos.push(Some(v)),
            None => {
                return Err(Error::InvalidSpec(format!(
                    "could not draw a class-{class} prototype with pairwise \
                     |cosine| < {PROTOTYPE_MAX_COS} in {PROTOTYPE_MAX_ATTEMPTS} \
                     attempts; dim {dim} is too small for this many classes"
                )))
            }
        }
    }
    Ok(protos)
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    // Prototypes are unit-norm, so the dot product is the cosine.
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Builds the dataset described by `spec`, entirely in memory.
///
/// Randomness uses three independent streams of `spec.seed` — prototypes
/// (stream 0), label sets (stream 1), frame noise (stream 2) — so e.g.
/// changing the noise level never changes which labels a video gets.
pub fn generate(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut proto_rng = Rng::stream(spec.seed, 0);
    let mut label_rng = Rng::stream(spec.seed, 1);
    let mut noise_rng = Rng::stream(spec.seed, 2);

    // Visual prototypes for all classes first, then audio prototypes, so
    // the draw order is independent of interleaving decisions.
    let visual_protos = draw_prototypes(spec, &mut proto_rng, spec.visual_dim, |a| {
        matches!(a, ClassAffinity::VisualOnly | ClassAffinity::Both)
    })?;
    let audio_protos = draw_prototypes(spec, &mut proto_rng, spec.audio_dim, |a| {
        matches!(a, ClassAffinity::AudioOnly | ClassAffinity::Both)
    })?;

    let mut records = Vec::with_capacity(spec.num_videos);
    for id in 0..spec.num_videos as u64 {
        let count = label_rng
            .poisson(spec.labels_per_video_mean)
            .clamp(1, spec.vocab_size as u64) as usize;
        let labels = LabelSet::new(
            label_rng
                .sample_distinct(spec.vocab_size, count)
                .into_iter()
                .map(|c| c as u32)
                .collect(),
        );

        // Per-frame mean = sum of the video's planted prototypes; classes
        // planted in both modalities contribute at half strength to each.
        let mut visual_mean = vec![0.0f64; spec.visual_dim];
        let mut audio_mean = vec![0.0f64; spec.audio_dim];
        for &class in labels.indices() {
            let strength = match spec.affinity_of(class as usize) {
                ClassAffinity::Both => spec.signal_strength * 0.5,
                _ => spec.signal_strength,
            };
            if let Some(p) = &visual_protos[class as usize] {
                for (m, x) in visual_mean.iter_mut().zip(p) {
                    *m += strength * x;
                }
            }
            if let Some(p) = &audio_protos[class as usize] {
                for (m, x) in audio_mean.iter_mut().zip(p) {
                    *m += strength * x;
                }
            }
        }

        // Noise draw order: per frame, all visual coordinates then all
        // audio coordinates. Values round through f32 because that is what
        // the file stores.
        let mut visual = Tensor::zeros(&[spec.seq_len, spec.visual_dim]);
        let mut audio = Tensor::zeros(&[spec.seq_len, spec.audio_dim]);
        for t in 0..spec.seq_len {
            for (j, &m) in visual_mean.iter().enumerate() {
                let v = m + spec.noise_sigma * noise_rng.normal();
                visual.set2(t, j, v as f32 as f64);
            }
            for (j, &m) in audio_mean.iter().enumerate() {
                let v = m + spec.noise_sigma * noise_rng.normal();
                audio.set2(t, j, v as f32 as f64);
            }
        }
        records.push(VideoRecord {
            id,
            labels,
            visual,
            audio,
        });
    }
    Ok(Dataset {
        vocab_size: spec.vocab_size,
        visual_dim: spec.visual_dim,
        audio_dim: spec.audio_dim,
        seq_len: spec.seq_len,
        records,
    })
}

/// Writes a dataset in the AVF1 layout and returns the file's checksum:
/// magic, version, `u64` video count, `u32` vocab/visual dim/audio dim/T,
/// then per record `u64` id + `u32` label count + `u32` labels +
/// `f32` visual row-major + `f32` audio row-major; CRC-32 trailer.
pub fn write_avf1(dataset: &Dataset, path: &Path) -> Result<u32> {
    let mut payload = Payload::new();
    payload.put_bytes(DATASET_MAGIC);
    payload.put_u16(DATASET_VERSION);
    payload.put_u64(dataset.len() as u64);
    payload.put_u32(dataset.vocab_size as u32);
    payload.put_u32(dataset.visual_dim as u32);
    payload.put_u32(dataset.audio_dim as u32);
    payload.put_u32(dataset.seq_len as u32);
    for record in &dataset.records {
        payload.put_u64(record.id);
        payload.put_u32(record.labels.len() as u32);
        for &label in record.labels.indices() {
            payload.put_u32(label);
        }
        for &v in record.visual.data() {
            payload.put_f32(v as f32);
        }
        for &v in record.audio.data() {
            payload.put_f32(v as f32);
        }
    }
    let checksum = payload.checksum();
    payload.write_with_trailer(std::fs::File::create(path)?)?;
    Ok(checksum)
}

/// Generates and writes in one step; returns the dataset and file checksum.
pub fn generate_to_file(spec: &SyntheticSpec, path: &Path) -> Result<(Dataset, u32)> {
    let dataset = generate(spec)?;
    let checksum = write_avf1(&dataset, path)?;
    Ok((dataset, checksum))
}

/// Loads an AVF1 file, verifying the checksum, magic, version, geometry,
/// label ranges, and feature finiteness.
pub fn load(path: &Path) -> Result<Dataset> {
    let bytes = read_checked(path)?;
    let mut cur = Cursor::checked(&bytes, "dataset")?;
    if cur.get_bytes(4)? != DATASET_MAGIC {
        return Err(Error::CorruptFile(format!(
            "{} is not a dataset file (bad magic)",
            path.display()
        )));
    }
    let version = cur.get_u16()?;
    if version != DATASET_VERSION {
        return Err(Error::VersionMismatch {
            expected: DATASET_VERSION,
            got: version,
        });
    }
    let num_videos = cur.get_u64()? as usize;
    let vocab_size = cur.get_u32()? as usize;
    let visual_dim = cur.get_u32()? as usize;
    let audio_dim = cur.get_u32()? as usize;
    let seq_len = cur.get_u32()? as usize;
    for (name, value) in [
        ("vocab", vocab_size),
        ("visual dim", visual_dim),
        ("audio dim", audio_dim),
        ("seq len", seq_len),
    ] {
        if value == 0 {
            return Err(Error::CorruptFile(format!(
                "dataset header has zero {name}"
            )));
        }
    }

    let mut records = Vec::with_capacity(num_videos);
    for _ in 0..num_videos {
        let id = cur.get_u64()?;
        let label_count = cur.get_u32()? as usize;
        if label_count > vocab_size {
            return Err(Error::CorruptFile(format!(
                "video {id} claims {label_count} labels with vocab {vocab_size}"
            )));
        }
        let mut labels = Vec::with_capacity(label_count);
        for _ in 0..label_count {
            let label = cur.get_u32()?;
            if label as usize >= vocab_size {
                return Err(Error::LabelOutOfRange {
                    label,
                    vocab: vocab_size,
                });
            }
            labels.push(label);
        }
        let mut read_stream = |rows: usize, cols: usize| -> Result<Tensor> {
            let mut t = Tensor::zeros(&[rows, cols]);
            for v in t.data_mut() {
                let x = cur.get_f32()?;
                if !x.is_finite() {
                    return Err(Error::CorruptFile(format!(
                        "video {id} has a non-finite feature value"
                    )));
                }
                *v = x as f64;
            }
            Ok(t)
        };
        let visual = read_stream(seq_len, visual_dim)?;
        let audio = read_stream(seq_len, audio_dim)?;
        records.push(VideoRecord {
            id,
            labels: LabelSet::new(labels),
            visual,
            audio,
        });
    }
    cur.finish()?;
    Ok(Dataset {
        vocab_size,
        visual_dim,
        audio_dim,
        seq_len,
        records,
    })
}
