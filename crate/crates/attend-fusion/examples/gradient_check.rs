//! Verifies hand-derived backward passes against central finite differences:
//! one layer in isolation, then a full model end to end under the training
//! loss.
//!
//!     cargo run --example gradient_check

use attend_fusion::model::{gradcheck_model, Arch};
use attend_fusion::nn::{gradcheck, SelfAttentionBlock, GRADCHECK_STEP};
use attend_fusion::rng::Rng;

fn main() -> attend_fusion::Result<()> {
    println!("central differences, step {GRADCHECK_STEP:e}\n");

    let mut rng = Rng::from_seed(1);
    let mut attention = SelfAttentionBlock::new(4, &mut rng);
    let report = gradcheck(&mut attention, &[3, 4], 1e-5, 1)?;
    println!("self-attention block, input [3 x 4]:");
    for entry in &report.entries {
        println!(
            "  {:<8} max relative error {:.3e}",
            entry.name, entry.max_rel_err
        );
    }
    println!("  => {}", if report.pass() { "PASS" } else { "FAIL" });

    for arch in [Arch::AttendFusion, Arch::FcLateFusion] {
        let report = gradcheck_model(arch, 1e-5, 1)?;
        let worst = report.max_rel_err();
        println!(
            "\n{} end to end ({} parameter tensors): worst {:.3e} => {}",
            arch.name(),
            report.entries.len(),
            worst,
            if report.pass() { "PASS" } else { "FAIL" }
        );
    }
    Ok(())
}
