//! Finite-difference check of the full model loss in both precisions.
//!
//!     cargo run --release --example gradcheck

use sql2text::model::{gradient_check_fixture, ModelConfig};

fn main() -> sql2text::Result<()> {
    let config = ModelConfig::default();
    for seed in 0..3 {
        let r32 = gradient_check_fixture::<f32>(&config, 200, seed)?;
        let r64 = gradient_check_fixture::<f64>(&config, 200, seed)?;
        println!(
            "seed {seed}: f32 max rel err {:.2e} ({} coords), f64 max rel err {:.2e} ({} coords)",
            r32.max_rel_error, r32.checked, r64.max_rel_error, r64.checked
        );
        if let Some(w) = &r64.worst {
            println!("  f64 worst: {} [{}] analytic {:.6e} numeric {:.6e}", w.param, w.index, w.analytic, w.numeric);
        }
    }
    Ok(())
}
