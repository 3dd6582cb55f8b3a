use proptest::prelude::*;

use super::*;
use crate::policy::{enumerate_all_sequences, TabularPolicy};
use crate::tasks::generate_problems;

fn resp(accuracy: u8) -> Response {
    Response { tokens: vec![math::EOS], accuracy }
}

fn sample(greedy: u8, samples: &[u8]) -> EvalSample {
    EvalSample { problem_id: 0, greedy: resp(greedy), samples: samples.iter().map(|&a| resp(a)).collect() }
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

#[test]
fn pass_at_1_examples() {
    assert_eq!(pass_at_1(&[sample(1, &[0]), sample(1, &[0])]).unwrap(), 1.0);
    let s: Vec<_> = [1, 0, 0, 1].iter().map(|&g| sample(g, &[0])).collect();
    assert_eq!(pass_at_1(&s).unwrap(), 0.5);
    assert_eq!(pass_at_1(&[sample(0, &[1])]).unwrap(), 0.0);
    assert!(pass_at_1(&[]).is_err());
}

#[test]
fn pass_at_k_examples() {
    assert_eq!(pass_at_k(&[sample(0, &[0, 0, 1, 0])]).unwrap().0, vec![1]);
    assert_eq!(pass_at_k(&[sample(0, &[0, 0, 0, 0])]).unwrap().0, vec![0]);
    let (ind, mean) = pass_at_k(&[sample(0, &[1]), sample(0, &[1]), sample(0, &[0])]).unwrap();
    assert_eq!(ind, vec![1, 1, 0]);
    assert!((mean - 2.0 / 3.0).abs() < 1e-15);
    assert!(pass_at_k(&[sample(0, &[1]), sample(0, &[1, 0])]).is_err());
    assert!(pass_at_k(&[sample(0, &[])]).is_err());
}

#[test]
fn potential_examples() {
    assert_eq!(potential_from_indicators(&[1, 0, 0], &[1, 1, 0]), Some(0.5));
    assert_eq!(potential_from_indicators(&[1, 1], &[1, 1]), None);
    assert_eq!(potential_from_indicators(&[0, 0, 0], &[1, 1, 1]), Some(1.0));
    let s = [sample(1, &[1, 0]), sample(0, &[0, 1]), sample(0, &[0, 0])];
    assert_eq!(potential_at_k(&s).unwrap(), Some(0.5));
}

#[test]
fn div_equ_examples() {
    let e = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    assert_eq!(div_equ_from_equations(&[e(&["1+1=2", "2+2=4"])]).value, Some(100.0));
    assert_eq!(div_equ_from_equations(&[e(&["1+1=2", "1+1=2"])]).value, Some(50.0));
    let two = div_equ_from_equations(&[e(&["1+1=2", "2+2=4"]), e(&["1+1=2", "1+1=2"]), vec![]]);
    assert_eq!(two.value, Some(75.0));
    assert_eq!(two.excluded, 1);
    assert_eq!(div_equ_from_equations(&[vec![], vec![]]).value, None);

    // pooled across a problem's responses
    let enc = |s: &str| crate::policy::Vocabulary::micro_math().encode(s).unwrap();
    let es = EvalSample {
        problem_id: 0,
        greedy: resp(0),
        samples: vec![
            Response { tokens: enc("3+5=8;[8]<eos>"), accuracy: 1 },
            Response { tokens: enc("5+3=8;[8]<eos>"), accuracy: 1 },
            Response { tokens: enc("3+5=8;[8]<eos>"), accuracy: 1 },
            Response { tokens: enc("[8]<eos>3+3=6"), accuracy: 1 },
        ],
    };
    let d = div_equ(&[es]).unwrap();
    assert!((d.value.unwrap() - 200.0 / 3.0).abs() < 1e-12);
}

#[test]
fn ngram_examples() {
    assert!((div_ngram(&[words("a b c d")]).unwrap().unwrap() - 100.0).abs() < 1e-12);
    let repeated = 100.0 * (1.0 / 4.0 + 1.0 / 3.0 + 1.0 / 2.0 + 1.0) / 4.0;
    let got = div_ngram(&[words("a a a a")]).unwrap().unwrap();
    assert!((got - repeated).abs() < 1e-12);
    assert!((got - 52.08).abs() < 0.01);
    let both = div_ngram(&[words("a b c d"), words("a a a a")]).unwrap().unwrap();
    assert!((both - 76.04).abs() < 0.01);
    // short responses use only the orders they have
    assert!((div_ngram(&[words("a a")]).unwrap().unwrap() - 100.0 * (0.5 + 1.0) / 2.0).abs() < 1e-12);
    assert_eq!(div_ngram::<String>(&[vec![]]).unwrap(), None);
    assert!(div_ngram::<String>(&[]).is_err());
}

#[test]
fn self_bleu_examples() {
    let same = vec![words("a b c d e"); 3];
    assert!((self_bleu(&same).unwrap() - 100.0).abs() < 1e-9);
    assert!(div_selfbleu(&[same]).unwrap().abs() < 1e-9);

    let disjoint = vec![words("a b c d e f g h"), words("i j k l m n o p")];
    assert!(div_selfbleu(&[disjoint]).unwrap() > 95.0);

    // hand computation: "a b c d" against "a b c d e f g h" and back
    let short = words("a b c d");
    let long = words("a b c d e f g h");
    let short_vs_long = (1.0f64 - 8.0 / 4.0).exp();
    let long_vs_short = (0.5f64 * (4.0 / 8.0) * (3.0 / 7.0) * (2.0 / 6.0)).powf(0.25);
    assert!((sentence_bleu(&short, &[&long]) - short_vs_long).abs() < 1e-12);
    assert!((sentence_bleu(&long, &[&short]) - long_vs_short).abs() < 1e-12);
    let sb = self_bleu(&[short, long]).unwrap();
    assert!((sb - 50.0 * (short_vs_long + long_vs_short)).abs() < 1e-9);

    assert!(self_bleu(&[words("a")]).is_err());
    assert!(div_selfbleu(&[vec![words("a")]]).is_err());
}

#[test]
fn entropy_examples() {
    let prompts = vec![vec![math::BOS, 1, math::PLUS, 2, math::SEPARATOR]];
    let uniform: Policy = TabularPolicy::zeros(20, 1).into();
    let h = mean_token_entropy(&uniform, &prompts, 50, 8, 1).unwrap();
    assert!((h - 20f64.ln()).abs() < 1e-12);

    let mut t = TabularPolicy::zeros(20, 1);
    for x in t.params_mut().iter_mut() {
        *x = -50.0;
    }
    for row in 0..t.rows() {
        t.params_mut()[row * 20 + math::EOS] = 50.0;
    }
    let h = mean_token_entropy(&t.into(), &prompts, 50, 8, 1).unwrap();
    assert!(h < 1e-6);
    assert!(mean_token_entropy(&uniform, &prompts, 0, 8, 1).is_err());
}

/// The token-pooled Monte-Carlo mean agrees with the enumerated ratio
/// `E[Σ_t H_t] / E[T]`; the bound uses the delta-method variance.
#[test]
fn entropy_matches_enumeration() {
    let p: Policy = TabularPolicy::random(20, 1, 3.0, 4).into();
    let prompt = vec![math::BOS];
    let max_len = 3;
    let (mut es, mut et) = (0.0, 0.0);
    for (seq, q) in enumerate_all_sequences(&p, &prompt, math::EOS, max_len).unwrap() {
        es += q * completion_entropy(&p, &prompt, &seq).unwrap().0;
        et += q * seq.len() as f64;
    }
    let exact = es / et;
    let n = 4000;
    let mut pairs = Vec::with_capacity(n);
    for j in 0..n {
        let c = sample_completion(&p, &prompt, math::EOS, 1.0, max_len, derive_seed(9, j as u64)).unwrap();
        let (s, t) = completion_entropy(&p, &prompt, &c.tokens).unwrap();
        pairs.push((s, t as f64));
    }
    let got = mean_token_entropy(&p, &[prompt], n, max_len, 9).unwrap();
    let mean_t = pairs.iter().map(|x| x.1).sum::<f64>() / n as f64;
    let resid_var = pairs.iter().map(|(s, t)| (s - got * t).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sigma = (resid_var / n as f64).sqrt() / mean_t;
    assert!((got - exact).abs() < 3.0 * sigma, "{got} vs {exact} (sigma {sigma})");
}

#[test]
fn regression_examples() {
    let r = linear_regression(&[(50.0, 50.0), (60.0, 60.0)]).unwrap();
    assert!((r.slope - 1.0).abs() < 1e-12 && (r.r2 - 1.0).abs() < 1e-12);
    assert!(linear_regression(&[(1.0, 2.0)]).is_none());
    assert!(linear_regression(&[(1.0, 2.0), (1.0, 3.0)]).is_none());
    let r = linear_regression(&[(0.0, 0.0), (1.0, 1.0), (2.0, 0.0)]).unwrap();
    assert!(r.slope.abs() < 1e-12 && r.r2.abs() < 1e-12);
}

#[test]
fn study_rows_and_threshold() {
    let row = |pass1, x, y| StudyRow { label: "x".into(), pass1, div_equ: Some(x), potential_k: Some(y) };
    let rep = StudyReport::from_rows(vec![row(0.5, 50.0, 0.5), row(0.3, 10.0, 0.9), row(0.9, 60.0, 0.6)], 0.4);
    let reg = rep.regression.unwrap();
    assert_eq!(reg.n, 2);
    assert!((reg.slope - 0.01).abs() < 1e-12);
    let rep = StudyReport::from_rows(vec![row(0.5, 50.0, 0.5), row(0.3, 10.0, 0.9), row(0.1, 60.0, 0.6)], 0.4);
    assert!(rep.regression.is_none() && rep.notice.is_some());
    assert_eq!(rep.to_csv().lines().count(), 4);
}

#[test]
fn study_over_policies() {
    let problems = generate_problems(6, 1, 0).unwrap();
    let a: Policy = TabularPolicy::random(20, 2, 1.0, 1).into();
    let b: Policy = TabularPolicy::random(20, 2, 1.0, 2).into();
    let policies = vec![("a".to_string(), a.clone()), ("b".to_string(), b), ("a2".to_string(), a)];
    let rep = diversity_potential_study(&policies, &problems, 4, 0.9, 10, 3, PASS1_THRESHOLD).unwrap();
    assert_eq!(rep.rows.len(), 3);
    let strip = |r: &StudyRow| (r.pass1, r.div_equ, r.potential_k);
    assert_eq!(strip(&rep.rows[0]), strip(&rep.rows[2]));
    assert!(diversity_potential_study(&policies[..2], &problems, 4, 0.9, 10, 3, 0.4).is_err());
}

#[test]
fn report_and_dumps() {
    let problems = generate_problems(5, 1, 0).unwrap();
    let p: Policy = TabularPolicy::random(20, 1, 2.0, 5).into();
    let samples = evaluate_policy(&p, &problems, 3, 0.9, 10, 7, false).unwrap();
    assert_eq!(samples, evaluate_policy(&p, &problems, 3, 0.9, 10, 7, true).unwrap());
    let rep = MetricsReport::from_eval(&samples, Some(1.0)).unwrap();
    assert_eq!((rep.problems, rep.k), (5, 3));
    for x in [rep.pass1, Some(rep.passk), rep.potential_k].into_iter().flatten() {
        assert!((0.0..=1.0).contains(&x));
    }
    for x in [rep.div_equ, rep.div_ngram, rep.div_selfbleu].into_iter().flatten() {
        assert!((0.0..=100.0).contains(&x));
    }
    assert_eq!(MetricsReport::csv_header().split(',').count(), rep.csv_row().split(',').count());
    let json = serde_json::to_string(&rep).unwrap();
    assert_eq!(serde_json::from_str::<MetricsReport>(&json).unwrap(), rep);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("eval.jsonl");
    write_eval_dump(&samples, &path).unwrap();
    assert_eq!(read_eval_dump(&path).unwrap(), samples);
    let from_dump = report_from_dump(&path).unwrap();
    assert_eq!(from_dump, MetricsReport { mean_entropy: None, ..rep });

    let one = evaluate_policy(&p, &problems, 1, 0.9, 10, 7, false).unwrap();
    let rep1 = MetricsReport::from_eval(&one, None).unwrap();
    assert_eq!(rep1.div_selfbleu, None);
    let acc: f64 = one.iter().map(|s| f64::from(s.samples[0].accuracy)).sum::<f64>() / 5.0;
    assert_eq!(rep1.passk, acc);
}

#[test]
fn rollout_dump_report() {
    use crate::policy::{PolicySnapshot, SnapshotRole};
    use crate::rollout::{collect_groups, write_rollouts};
    let problems = generate_problems(4, 1, 1).unwrap();
    let refs: Vec<&Problem> = problems.iter().collect();
    let snap = PolicySnapshot::new(&TabularPolicy::random(20, 1, 1.0, 2).into(), SnapshotRole::Old);
    let batches = collect_groups(&snap, &refs, &[1, 2, 3, 4], 3, 1.0, 8, false).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rollouts.jsonl");
    let mut f = std::fs::File::create(&path).unwrap();
    write_rollouts(&mut f, 0, &batches).unwrap();
    drop(f);
    let rep = report_from_dump(&path).unwrap();
    assert_eq!((rep.problems, rep.k, rep.pass1), (4, 3, None));
}

fn binary_table() -> impl Strategy<Value = Vec<(u8, u8)>> {
    prop::collection::vec((0u8..2, 0u8..2).prop_map(|(p1, pk)| (p1, pk.max(p1))), 1..30)
}

proptest! {
    #[test]
    fn potential_identity(table in binary_table()) {
        let lhs: u32 = table.iter().map(|&(p1, pk)| u32::from(pk) * u32::from(1 - p1)).sum();
        let rhs: u32 = table.iter().map(|&(p1, pk)| u32::from(pk - p1)).sum();
        prop_assert_eq!(lhs, rhs);
        let (p1, pk): (Vec<u8>, Vec<u8>) = table.iter().copied().unzip();
        if let Some(v) = potential_from_indicators(&p1, &pk) {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        if p1.iter().all(|&x| x == 0) {
            let mean = pk.iter().map(|&x| f64::from(x)).sum::<f64>() / pk.len() as f64;
            prop_assert_eq!(potential_from_indicators(&p1, &pk), Some(mean));
        }
    }

    #[test]
    fn diversity_is_permutation_invariant(
        responses in prop::collection::vec(prop::collection::vec(0u8..5, 0..9), 2..6),
        rot in 0usize..6,
    ) {
        let mut shuffled = responses.clone();
        shuffled.rotate_left(rot % responses.len());
        shuffled.swap(0, responses.len() - 1);
        let a = self_bleu(&responses).unwrap();
        let b = self_bleu(&shuffled).unwrap();
        prop_assert!((a - b).abs() < 1e-9);
        prop_assert!((0.0..=100.0 + 1e-9).contains(&a));
        let na = div_ngram(&responses).unwrap();
        let nb = div_ngram(&shuffled).unwrap();
        let same = match (na, nb) {
            (Some(x), Some(y)) => (x - y).abs() < 1e-9,
            (None, None) => true,
            _ => false,
        };
        prop_assert!(same);
    }

    #[test]
    fn distinct_tokens_give_full_ngram_diversity(n in 4usize..20) {
        let r: Vec<usize> = (0..n).collect();
        prop_assert!((div_ngram(&[r]).unwrap().unwrap() - 100.0).abs() < 1e-12);
    }
}
