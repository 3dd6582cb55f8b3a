//! Accuracy and diversity metrics over hand-made response sets.

use divpo::metrics::{div_equ_from_equations, div_ngram, div_selfbleu, potential_from_indicators};
use divpo::policy::Vocabulary;
use divpo::tasks::extract_equations;

fn main() -> divpo::Result<()> {
    let vocab = Vocabulary::micro_math();
    let encode = |xs: &[&str]| -> Vec<Vec<usize>> { xs.iter().map(|s| vocab.encode(s).unwrap()).collect() };
    let same = encode(&["3+4=7;[7]", "3+4=7;[7]", "3+4=7;[7]"]);
    let varied = encode(&["3+4=7;[7]", "4+3=7;[7]", "3+4=7;7*1=7;[7]"]);

    for (label, set) in [("identical", &same), ("varied", &varied)] {
        let eqs: Vec<String> = set.iter().flat_map(|r| extract_equations(r)).collect();
        println!(
            "{label:<9}  Div-Equ {:6.2}  n-gram {:6.2}  Self-BLEU diversity {:6.2}",
            div_equ_from_equations(&[eqs]).value.unwrap_or(f64::NAN),
            div_ngram(set)?.unwrap_or(f64::NAN),
            div_selfbleu(&[set.clone()])?
        );
    }
    // greedy fails problems 2 and 3; sampling recovers problem 2
    let potential = potential_from_indicators(&[1, 0, 0], &[1, 1, 0]);
    println!("Potential@k {potential:?}");
    Ok(())
}
