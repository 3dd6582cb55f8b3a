//! Group-normalized advantages, including the degenerate all-equal case
//! that leaves GRPO without a learning signal.

use divpo::rollout::compute_advantages;

fn main() -> divpo::Result<()> {
    for rewards in [vec![1.2, 1.2, 0.0, 0.0], vec![1.2, 0.2, 0.2, 0.0, 0.0, 0.0], vec![1.2; 6], vec![0.0; 6]] {
        let (adv, degenerate) = compute_advantages(&rewards)?;
        let shown: Vec<String> = adv.iter().map(|a| format!("{a:+.3}")).collect();
        println!("{rewards:?}\n  -> [{}]{}", shown.join(", "), if degenerate { "  degenerate" } else { "" });
    }
    Ok(())
}
