//! Generates a synthetic audio-visual dataset, writes it to disk, reloads
//! it, and prints what the generator planted: per-affinity class counts,
//! the label histogram, and the file checksum.
//!
//!     cargo run --example generate_dataset

use attend_fusion::data::{generate_to_file, load, ClassAffinity, SyntheticSpec};

fn main() -> attend_fusion::Result<()> {
    let spec = SyntheticSpec {
        num_videos: 120,
        seed: 3,
        ..SyntheticSpec::default()
    };
    let path = std::env::temp_dir().join("example_dataset.avf1");
    let (dataset, crc) = generate_to_file(&spec, &path)?;
    println!(
        "wrote {} ({} videos, vocab {}, visual {}, audio {}, {} frames each, crc32 {crc:08x})",
        path.display(),
        dataset.len(),
        dataset.vocab_size,
        dataset.visual_dim,
        dataset.audio_dim,
        dataset.seq_len,
    );

    let (nv, na, nb) = spec.affinity_counts();
    println!(
        "class affinities: {nv} visual-only, {na} audio-only, {nb} both, {} pure noise",
        spec.vocab_size - nv - na - nb
    );

    let mut per_class = vec![0usize; spec.vocab_size];
    for record in dataset.records() {
        for &class in record.labels.indices() {
            per_class[class as usize] += 1;
        }
    }
    println!("\nvideos carrying each class:");
    for (class, count) in per_class.iter().enumerate() {
        let tag = match spec.affinity_of(class) {
            ClassAffinity::VisualOnly => "visual",
            ClassAffinity::AudioOnly => "audio",
            ClassAffinity::Both => "both",
            ClassAffinity::Noise => "noise",
        };
        println!(
            "  class {class:>2} ({tag:<6}) {count:>3}  {}",
            "#".repeat(*count / 2)
        );
    }

    let reloaded = load(&path)?;
    println!(
        "\nreload matches the in-memory dataset: {}",
        reloaded == dataset
    );
    Ok(())
}
