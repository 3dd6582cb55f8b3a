//! Samples from a random tabular policy and compares empirical sequence
//! frequencies with the exact probabilities from enumeration.

use std::collections::HashMap;

use divpo::policy::{enumerate_all_sequences, sample_completion, Policy, TabularPolicy, Vocabulary};

fn main() -> divpo::Result<()> {
    let vocab = Vocabulary::simple(&["a", "b"]);
    let policy: Policy = TabularPolicy::random(vocab.len(), 1, 1.5, 7).into();
    let eos = vocab.eos();
    let exact = enumerate_all_sequences(&policy, &[], eos, 3)?;

    let n = 50_000;
    let mut counts: HashMap<Vec<usize>, usize> = HashMap::new();
    for seed in 0..n {
        let c = sample_completion(&policy, &[], eos, 1.0, 3, seed)?;
        *counts.entry(c.tokens).or_default() += 1;
    }
    println!("{:<14} {:>9} {:>9}", "sequence", "exact", "sampled");
    for (seq, p) in &exact {
        let f = counts.get(seq).copied().unwrap_or(0) as f64 / n as f64;
        println!("{:<14} {:>9.4} {:>9.4}", vocab.render(seq), p, f);
    }
    let total: f64 = exact.iter().map(|(_, p)| p).sum();
    println!("{} sequences, total probability {total:.12}", exact.len());
    Ok(())
}
