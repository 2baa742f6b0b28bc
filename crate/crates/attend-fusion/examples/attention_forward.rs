//! Runs a single self-attention block forward and prints the attention
//! matrix, then permutes the input rows to show the output permutes with
//! them, bit for bit.
//!
//!     cargo run --example attention_forward

use attend_fusion::nn::{Layer, SelfAttentionBlock};
use attend_fusion::rng::Rng;
use attend_fusion::Tensor;

fn main() -> attend_fusion::Result<()> {
    let mut rng = Rng::from_seed(42);
    let (t, d) = (5, 4);
    let mut block = SelfAttentionBlock::new(d, &mut rng);

    let x = Tensor::new(
        vec![t, d],
        (0..t * d).map(|_| rng.uniform(-1.0, 1.0)).collect(),
    )?;
    let out = block.forward(&x)?;
    let attention = block
        .last_attention()
        .expect("forward caches attention")
        .clone();

    println!("input: {t} positions x {d} features");
    println!("attention rows (each a convex combination over positions):");
    for i in 0..t {
        let row: Vec<String> = (0..t)
            .map(|j| format!("{:.4}", attention.at2(i, j)))
            .collect();
        let sum: f64 = (0..t).map(|j| attention.at2(i, j)).sum();
        println!("  [{}]  sum {sum:.12}", row.join(" "));
    }

    // Feed the same rows in a different order.
    let perm = [3usize, 0, 4, 2, 1];
    let rows: Vec<Vec<f64>> = perm
        .iter()
        .map(|&p| (0..d).map(|j| x.at2(p, j)).collect())
        .collect();
    let out_perm = block.forward(&Tensor::from_rows(&rows)?)?;

    let equivariant = perm
        .iter()
        .enumerate()
        .all(|(i, &p)| (0..d).all(|j| out_perm.at2(i, j).to_bits() == out.at2(p, j).to_bits()));
    println!("\npermuted input rows by {perm:?}");
    println!("output rows permuted identically (bitwise): {equivariant}");
    Ok(())
}
