//! Generates micro-math problems, shows their worked solutions and scores
//! a few hand-written responses.

use divpo::policy::Vocabulary;
use divpo::tasks::{extract_equations, generate_problems, reference_solutions, score_response, Problem};

fn main() -> divpo::Result<()> {
    let vocab = Vocabulary::micro_math();
    for p in generate_problems(3, 2, 42)? {
        println!("{} = {}", p.text(), p.ground_truth);
        for s in reference_solutions(&p) {
            println!("    {}", vocab.render(&s));
        }
    }

    let p = Problem::parse(0, "7*6-5")?;
    println!("\nresponses to {}:", vocab.render(&p.prompt));
    for text in ["7*6=42;42-5=37;[37]<eos>", "[37]<eos>", "[36]<eos>", "the answer is 37", "[37"] {
        let tokens = vocab.encode(text).unwrap_or_default();
        let r = score_response(&p, &tokens);
        println!(
            "  {text:<26} accuracy {} format {} total {:.1}  equations {:?}",
            r.accuracy,
            r.format,
            r.total,
            extract_equations(&tokens)
        );
    }
    Ok(())
}
