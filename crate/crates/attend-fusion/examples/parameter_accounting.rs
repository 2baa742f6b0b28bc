//! Prints the exact per-tensor parameter ledger of the two reference-scale
//! configurations and their size ratio. Counting walks the declared shapes,
//! so no weights are ever allocated.
//!
//!     cargo run --example parameter_accounting

use attend_fusion::model::{param_count, param_shapes, Arch, ModelConfig};

fn reference(arch: Arch) -> ModelConfig {
    // 1024-d visual and 128-d audio features, 4716 classes, 8 frames.
    let (branch, fusion) = match arch {
        Arch::FcLateFusion => (vec![8192], vec![15872]),
        _ => (vec![1024], vec![9728]),
    };
    ModelConfig {
        arch,
        branch_hidden: branch,
        fusion_hidden: fusion,
        ..ModelConfig::default()
    }
}

fn main() -> attend_fusion::Result<()> {
    let mut totals = Vec::new();
    for arch in [Arch::FcLateFusion, Arch::AttendFusion] {
        let config = reference(arch);
        println!("{}:", arch.name());
        for (name, shape) in param_shapes(&config)? {
            let count: usize = shape.iter().product();
            let dims: Vec<String> = shape.iter().map(usize::to_string).collect();
            println!("  {name:<24} [{}] = {count}", dims.join(" x "));
        }
        let total = param_count(&config)?;
        println!("  total {total} (~{:.0}M)\n", total as f64 / 1e6);
        totals.push(total as f64);
    }
    println!(
        "baseline / fusion parameter ratio: {:.2}",
        totals[0] / totals[1]
    );
    Ok(())
}
