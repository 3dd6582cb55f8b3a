//! The diversity gradient at a sampled token scales with -(1 + ln p):
//! rare tokens (p < 1/e) are pushed up, likely ones pushed down.

use divpo::objective::{direction_coefficient, gradient_direction_report};
use divpo::policy::{Policy, TabularPolicy};

fn main() -> divpo::Result<()> {
    for p in [0.05, 0.2, (-1f64).exp(), 0.5, 0.9] {
        println!("p = {p:.4}  coefficient {:+.4}", direction_coefficient(p));
    }
    let policy: Policy = TabularPolicy::from_logits(4, 0, vec![2.5, 1.0, 0.0, -1.0])?.into();
    println!();
    for d in gradient_direction_report(&policy, &[], &[0, 1, 2, 3])? {
        let verb = match d.sign {
            1 => "raised",
            -1 => "lowered",
            _ => "unchanged",
        };
        println!("token {}  p {:.3}  coefficient {:+.3}  {verb}", d.token, d.prob, d.coefficient);
    }
    Ok(())
}
