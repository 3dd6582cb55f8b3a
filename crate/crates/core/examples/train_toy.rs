//! Trains a small neural policy on single-operation micro-math with and
//! without the diversity term and compares entropy and diversity.
//!
//! `cargo run --release --example train_toy -- [steps]`

use divpo::harness::{train, RunConfig};

fn main() -> divpo::Result<()> {
    let steps = std::env::args().nth(1).map(|s| s.parse().expect("steps")).unwrap_or(100);
    let out = std::env::temp_dir().join("divpo-train-toy");
    for lambda in [0.0, 0.01] {
        let mut cfg = RunConfig::default();
        cfg.schedule.steps = steps;
        cfg.objective.lambda = lambda;
        cfg.io.out_dir = out.clone();
        let run = train(&cfg, false)?;
        let s = &run.summary;
        println!("λ = {lambda}: {}", run.run_dir.display());
        println!(
            "  entropy {:.4} -> {:.4}   probe Pass@1 {:.3} -> {:.3}",
            s.initial_entropy, s.final_entropy, s.initial_probe_pass1, s.final_probe_pass1
        );
        for key in ["div_equ", "div_ngram", "div_selfbleu"] {
            println!("  {key:<13} {} -> {}", s.base[key], s.final_[key]);
        }
    }
    Ok(())
}
