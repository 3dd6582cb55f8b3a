//! Exact check that the importance-weighted diversity surrogate equals the
//! expected mean token entropy, and where a length-dependent normalizer
//! breaks the equality.

use divpo::objective::{verify_identity, LengthNormalizer};
use divpo::policy::{Policy, TabularPolicy};

fn main() -> divpo::Result<()> {
    let old: Policy = TabularPolicy::random(4, 1, 2.0, 1).into();
    let theta: Policy = TabularPolicy::random(4, 1, 2.0, 2).into();
    let eos = 3;
    let cases = [
        ("fixed length, 1/T", usize::MAX, LengthNormalizer::PerSequence),
        ("with EOS, 1/max_len", eos, LengthNormalizer::MaxLen),
        ("with EOS, 1/T", eos, LengthNormalizer::PerSequence),
    ];
    for (label, eos, norm) in cases {
        let r = verify_identity(&theta, &old, &[], eos, 4, norm)?;
        println!(
            "{label:<22} entropy {:.12}  surrogate {:.12}  gap {:.2e}  ({} sequences)",
            r.lhs, r.rhs, r.gap, r.sequences
        );
    }
    Ok(())
}
