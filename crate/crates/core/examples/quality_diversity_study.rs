//! Runs a short training with frequent checkpoints, then fits Potential@k
//! against Div-Equ across them.

use divpo::harness::{run_study, train, RunConfig};

fn main() -> divpo::Result<()> {
    let mut cfg = RunConfig::default();
    cfg.schedule.steps = 60;
    cfg.eval.checkpoint_every = 20;
    cfg.io.out_dir = std::env::temp_dir().join("divpo-study");
    let run = train(&cfg, false)?;
    let report = run_study(&run.run_dir, None)?;
    print!("{}", report.to_csv());
    match (report.regression, report.notice) {
        (Some(r), _) => println!("Potential@k = {:.4} Div-Equ + {:.4}  (r² {:.3}, n {})", r.slope, r.intercept, r.r2, r.n),
        (None, Some(n)) => println!("{n}"),
        _ => {}
    }
    Ok(())
}
