use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::policy::Vocabulary;

fn toks(text: &str) -> Vec<TokenId> {
    Vocabulary::micro_math().encode(text).unwrap()
}

/// Recursive-descent reading of `text`, independent of `evaluate`.
fn interpret(text: &str) -> i64 {
    fn term(s: &[u8], i: &mut usize) -> i64 {
        let mut v = (s[*i] - b'0') as i64;
        *i += 1;
        while *i < s.len() && s[*i] == b'*' {
            v *= (s[*i + 1] - b'0') as i64;
            *i += 2;
        }
        v
    }
    let s = text.as_bytes();
    let mut i = 0;
    let mut v = term(s, &mut i);
    while i < s.len() {
        let op = s[i];
        i += 1;
        let t = term(s, &mut i);
        v = if op == b'+' { v + t } else { v - t };
    }
    v
}

#[test]
fn precedence_is_standard() {
    assert_eq!(Problem::parse(0, "3+5*2").unwrap().ground_truth, 13);
    assert_eq!(Problem::parse(0, "2*3-4*5").unwrap().ground_truth, -14);
    assert_eq!(Problem::parse(0, "9-8-7").unwrap().ground_truth, -6);
}

#[test]
fn malformed_expressions_are_rejected() {
    for bad in ["3", "3+", "+3", "3+4+5+6+7", "34+1", "3=4"] {
        assert!(Problem::parse(0, bad).is_err(), "{bad}");
    }
}

#[test]
fn generation_is_deterministic() {
    assert_eq!(generate_problems(10, 2, 5).unwrap(), generate_problems(10, 2, 5).unwrap());
    assert_ne!(generate_problems(10, 2, 5).unwrap(), generate_problems(10, 2, 6).unwrap());
}

#[test]
fn generation_respects_difficulty_and_uniqueness() {
    for d in 1..=3 {
        let ps = generate_problems(250, d, 1).unwrap();
        let distinct: HashSet<_> = ps.iter().map(|p| p.expression.clone()).collect();
        assert_eq!(distinct.len(), 250);
        for (i, p) in ps.iter().enumerate() {
            assert_eq!(p.difficulty(), d);
            assert_eq!(p.id, i as u64);
            assert!(p.ground_truth.abs() < 10_000);
            assert_eq!(p.prompt.first(), Some(&math::BOS));
            assert_eq!(p.prompt.last(), Some(&math::SEPARATOR));
        }
    }
    // more than the 300 difficulty-1 problems: every one appears
    let ps = generate_problems(400, 1, 3).unwrap();
    let distinct: HashSet<_> = ps.iter().map(|p| p.expression.clone()).collect();
    assert_eq!(distinct.len(), 300);
    assert!(generate_problems(0, 1, 0).is_err());
    assert!(generate_problems(1, 4, 0).is_err());
}

#[test]
fn enumeration_covers_space() {
    for d in 1..=3 {
        let all = enumerate_problems(d).unwrap();
        assert_eq!(all.len() as u64, problem_space(d));
        assert!(all.iter().all(|p| p.ground_truth.abs() < 10_000));
    }
}

#[test]
fn evaluator_agrees_with_interpreter() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10_000 {
        let d = rng.gen_range(1..=3);
        let mut text = rng.gen_range(0..10).to_string();
        for _ in 0..d {
            text.push(['+', '-', '*'][rng.gen_range(0..3)]);
            text.push_str(&rng.gen_range(0..10).to_string());
        }
        assert_eq!(Problem::parse(0, &text).unwrap().ground_truth, interpret(&text), "{text}");
    }
}

#[test]
fn scoring_examples() {
    let p = Problem::parse(0, "3+5*2").unwrap();
    let r = score_response(&p, &toks("5*2=10;3+10=13;[13]<eos>"));
    assert_eq!((r.accuracy, r.format), (1, 1));
    assert!((r.total - 1.2).abs() < 1e-15);

    let r = score_response(&p, &toks("5*2=10;3+10=13<eos>"));
    assert_eq!((r.accuracy, r.format, r.total), (0, 0, 0.0));

    let r = score_response(&p, &toks("[13][12]<eos>"));
    assert_eq!((r.accuracy, r.format), (0, 0));

    let r = score_response(&p, &toks("[12]<eos>"));
    assert_eq!((r.accuracy, r.format), (0, 1));
    assert!((r.total - 0.2).abs() < 1e-15);
}

#[test]
fn format_edge_cases() {
    let p = Problem::parse(0, "3-9").unwrap();
    assert!(score_response(&p, &toks("[-6]<eos>")).is_accurate());
    assert_eq!(score_response(&p, &toks("[-6]")).format, 0, "no EOS");
    assert_eq!(score_response(&p, &toks("[]<eos>")).format, 0);
    assert_eq!(score_response(&p, &toks("[-]<eos>")).format, 0);
    assert_eq!(score_response(&p, &toks("[6-]<eos>")).format, 0);
    assert_eq!(score_response(&p, &toks("]-6[<eos>")).format, 0);
    assert_eq!(score_response(&p, &toks("[-6<eos>]")).format, 0);
    assert!(score_response(&p, &toks("[-6]<eos>[1]")).is_accurate(), "tokens after EOS are ignored");
    let huge = toks(&format!("[{}]<eos>", "9".repeat(30)));
    assert_eq!(boxed_answer(&huge), Some(None));
    assert_eq!(score_response(&p, &huge).format, 1);
}

#[test]
fn equation_examples() {
    assert_eq!(extract_equations(&toks("3+5=8;8*2=16")), ["3+5=8", "8*2=16"]);
    assert!(extract_equations(&toks("3+5;[8]<eos>")).is_empty());
    assert_eq!(extract_equations(&toks("1+1=2;1+1=2")), ["1+1=2", "1+1=2"]);
    assert_eq!(extract_equations(&toks("3-9=-6;-6*2=-12")), ["3-9=-6", "-6*2=-12"]);
    assert_eq!(extract_equations(&toks("+3*4=12")), ["3*4=12"]);
    assert_eq!(extract_equations(&toks("3+5=8*2=16")), ["3+5=8", "8*2=16"]);
    assert!(extract_equations(&toks("=5;3+=4;4=;[=]")).is_empty());
}

#[test]
fn reference_solutions_are_correct() {
    for d in 1..=3 {
        for p in generate_problems(100, d, 2).unwrap() {
            let sols = reference_solutions(&p);
            assert!(!sols.is_empty());
            for s in &sols {
                assert!(score_response(&p, s).is_accurate(), "{}", Vocabulary::micro_math().render(s));
                assert!(!extract_equations(s).is_empty());
            }
        }
    }
    let p = Problem::parse(0, "3+5").unwrap();
    let sols: Vec<String> = reference_solutions(&p).iter().map(|s| Vocabulary::micro_math().render(s)).collect();
    assert_eq!(sols, ["3+5=8;[8]<eos>", "5+3=8;[8]<eos>"]);
    assert_eq!(reference_solutions(&Problem::parse(0, "7-9").unwrap()).len(), 1);
}

#[test]
fn jsonl_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.jsonl");
    let ps = generate_problems(20, 3, 4).unwrap();
    write_problems_jsonl(&ps, &path).unwrap();
    assert_eq!(read_problems_jsonl(&path).unwrap(), ps);
    std::fs::write(&path, "{\"id\":0,\"expression\":\"1+1\",\"ground_truth\":3}\n").unwrap();
    assert!(matches!(read_problems_jsonl(&path), Err(Error::Load(_))));
}

fn junk() -> impl Strategy<Value = Vec<TokenId>> {
    prop::collection::vec(prop::sample::select(vec![math::STEP, math::BOX_OPEN, math::BOX_CLOSE, math::SEPARATOR, math::EOS]), 1..4)
}

proptest! {
    #[test]
    fn accuracy_never_exceeds_format(resp in prop::collection::vec(0usize..20, 0..20), seed in 0u64..100) {
        let p = &generate_problems(1, 1 + (seed % 3) as usize, seed).unwrap()[0];
        let r = score_response(p, &resp);
        prop_assert!(r.accuracy <= r.format);
    }

    #[test]
    fn extraction_ignores_surrounding_tokens(
        seed in 0u64..1000,
        pieces in prop::collection::vec(junk(), 1..5),
    ) {
        let ps = generate_problems(pieces.len(), 2, seed).unwrap();
        let mut resp = Vec::new();
        let mut want = Vec::new();
        for (p, j) in ps.iter().zip(&pieces) {
            resp.extend(j);
            let mut eq = p.expression.clone();
            eq.push(math::EQUALS);
            eq.extend(number_tokens(p.ground_truth));
            want.push(eq.iter().map(|&t| math::symbol(t)).collect::<String>());
            resp.extend(eq);
        }
        resp.extend(&pieces[0]);
        prop_assert_eq!(extract_equations(&resp), want.clone());
        prop_assert_eq!(extract_equations(&resp), extract_equations(&resp));
    }
}
