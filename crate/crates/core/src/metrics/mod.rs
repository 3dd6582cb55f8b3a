//! Accuracy and diversity metrics over sampled responses.
//!
//! Accuracy: Pass@1 (greedy), Pass@k (any of k samples) and Potential@k
//! (Pass@k restricted to the problems greedy decoding fails). Diversity:
//! Div-Equ over extracted equations, distinct n-grams within a response,
//! and 100 minus Self-BLEU across a problem's responses. All diversity
//! metrics see responses with EOS and anything after it removed.

mod study;
mod text;

#[cfg(test)]
mod tests;

use std::collections::HashSet;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use study::{diversity_potential_study, linear_regression, Regression, StudyReport, StudyRow, PASS1_THRESHOLD};
pub use text::{distinct_ngram_ratio, div_ngram, div_selfbleu, self_bleu, sentence_bleu};

use crate::policy::{math, sample_completion, Policy, TokenId};
use crate::rollout::{derive_seed, RolloutRecord};
use crate::tasks::{extract_equations, score_response, Problem};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Response {
    pub tokens: Vec<TokenId>,
    pub accuracy: u8,
}

impl Response {
    pub fn scored(problem: &Problem, tokens: Vec<TokenId>) -> Self {
        let accuracy = score_response(problem, &tokens).accuracy;
        Self { tokens, accuracy }
    }

    /// Tokens before the first EOS.
    pub fn content(&self) -> &[TokenId] {
        let end = self.tokens.iter().position(|&t| t == math::EOS).unwrap_or(self.tokens.len());
        &self.tokens[..end]
    }
}

/// Greedy and sampled responses to one problem; one line of an eval dump.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalSample {
    pub problem_id: u64,
    pub greedy: Response,
    pub samples: Vec<Response>,
}

fn non_empty<T>(xs: &[T], what: &str) -> Result<()> {
    if xs.is_empty() {
        Err(Error::contract(format!("{what} needs at least one problem")))
    } else {
        Ok(())
    }
}

/// Share of problems whose greedy response is accurate.
pub fn pass_at_1(samples: &[EvalSample]) -> Result<f64> {
    non_empty(samples, "pass_at_1")?;
    Ok(samples.iter().map(|s| f64::from(s.greedy.accuracy)).sum::<f64>() / samples.len() as f64)
}

/// Per-problem "any sample accurate" indicators and their mean.
pub fn pass_at_k(samples: &[EvalSample]) -> Result<(Vec<u8>, f64)> {
    let groups: Vec<&[Response]> = samples.iter().map(|s| s.samples.as_slice()).collect();
    pass_at_k_groups(&groups)
}

fn pass_at_k_groups(groups: &[&[Response]]) -> Result<(Vec<u8>, f64)> {
    non_empty(groups, "pass_at_k")?;
    let k = groups[0].len();
    if k == 0 || groups.iter().any(|g| g.len() != k) {
        return Err(Error::contract("every problem needs the same number k >= 1 of samples"));
    }
    let ind: Vec<u8> = groups.iter().map(|g| u8::from(g.iter().any(|r| r.accuracy == 1))).collect();
    let mean = ind.iter().map(|&x| f64::from(x)).sum::<f64>() / ind.len() as f64;
    Ok((ind, mean))
}

/// `Σ passk (1 - pass1) / Σ (1 - pass1)`; `None` when every problem
/// passes greedily.
pub fn potential_from_indicators(pass1: &[u8], passk: &[u8]) -> Option<f64> {
    let den: u32 = pass1.iter().map(|&p| u32::from(1 - p.min(1))).sum();
    let num: u32 = pass1.iter().zip(passk).map(|(&p, &k)| u32::from(k.min(1)) * u32::from(1 - p.min(1))).sum();
    (den > 0).then(|| f64::from(num) / f64::from(den))
}

pub fn potential_at_k(samples: &[EvalSample]) -> Result<Option<f64>> {
    let (passk, _) = pass_at_k(samples)?;
    let pass1: Vec<u8> = samples.iter().map(|s| s.greedy.accuracy).collect();
    Ok(potential_from_indicators(&pass1, &passk))
}

/// Div-Equ and the number of equation-free problems left out of it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DivEqu {
    pub value: Option<f64>,
    pub excluded: usize,
}

/// Mean over problems of unique / total equations, times 100. Each entry
/// holds the equations pooled from one problem's responses; problems with
/// none are excluded.
pub fn div_equ_from_equations(per_problem: &[Vec<String>]) -> DivEqu {
    let ratios: Vec<f64> = per_problem
        .iter()
        .filter(|eqs| !eqs.is_empty())
        .map(|eqs| eqs.iter().collect::<HashSet<_>>().len() as f64 / eqs.len() as f64)
        .collect();
    DivEqu {
        value: (!ratios.is_empty()).then(|| 100.0 * ratios.iter().sum::<f64>() / ratios.len() as f64),
        excluded: per_problem.len() - ratios.len(),
    }
}

pub fn div_equ(samples: &[EvalSample]) -> Result<DivEqu> {
    non_empty(samples, "div_equ")?;
    let pooled: Vec<Vec<String>> = samples
        .iter()
        .map(|s| s.samples.iter().flat_map(|r| extract_equations(r.content())).collect())
        .collect();
    Ok(div_equ_from_equations(&pooled))
}

/// Mean next-token entropy (nats, temperature 1) over the tokens of
/// `budget` completions sampled at temperature 1, cycling through
/// `prompts`.
pub fn mean_token_entropy(
    policy: &Policy,
    prompts: &[Vec<TokenId>],
    budget: usize,
    max_len: usize,
    seed: u64,
) -> Result<f64> {
    if budget == 0 || prompts.is_empty() {
        return Err(Error::contract("entropy needs a positive budget and at least one prompt"));
    }
    let (mut sum, mut count) = (0.0, 0usize);
    for j in 0..budget {
        let prompt = &prompts[j % prompts.len()];
        let c = sample_completion(policy, prompt, math::EOS, 1.0, max_len, derive_seed(seed, j as u64))?;
        let (s, n) = completion_entropy(policy, prompt, &c.tokens)?;
        sum += s;
        count += n;
    }
    Ok(sum / count as f64)
}

/// Summed next-token entropy over the positions of `tokens`.
pub fn completion_entropy(policy: &Policy, prompt: &[TokenId], tokens: &[TokenId]) -> Result<(f64, usize)> {
    let mut full = prompt.to_vec();
    full.extend_from_slice(tokens);
    let contexts: Vec<&[TokenId]> = (0..tokens.len()).map(|t| &full[..prompt.len() + t]).collect();
    let z = policy.logits_rows(&contexts)?;
    let v = policy.vocab_size();
    let sum = z.data().chunks(v).map(crate::policy::entropy_of_logits).sum();
    Ok((sum, tokens.len()))
}

/// Greedy response plus `k` samples per problem. Sample `j` of a problem
/// uses a seed derived from `(seed, problem id, j)`, so results do not
/// depend on problem order or on `parallel`.
pub fn evaluate_policy(
    policy: &Policy,
    problems: &[Problem],
    k: usize,
    temperature: f64,
    max_len: usize,
    seed: u64,
    parallel: bool,
) -> Result<Vec<EvalSample>> {
    if k == 0 {
        return Err(Error::contract("k must be at least 1"));
    }
    let one = |p: &Problem| -> Result<EvalSample> {
        let greedy = Response::scored(p, policy.greedy_completion(&p.prompt, math::EOS, max_len)?);
        let base = derive_seed(seed, p.id);
        let samples = (0..k)
            .map(|j| {
                let c = sample_completion(policy, &p.prompt, math::EOS, temperature, max_len, derive_seed(base, j as u64))?;
                Ok(Response::scored(p, c.tokens))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(EvalSample { problem_id: p.id, greedy, samples })
    };
    if parallel {
        problems.par_iter().map(one).collect()
    } else {
        problems.iter().map(one).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub problems: usize,
    pub k: usize,
    /// Absent when the input has no greedy responses.
    pub pass1: Option<f64>,
    pub passk: f64,
    pub potential_k: Option<f64>,
    pub div_equ: Option<f64>,
    pub div_equ_excluded: usize,
    pub div_ngram: Option<f64>,
    /// Absent when `k < 2`.
    pub div_selfbleu: Option<f64>,
    pub mean_entropy: Option<f64>,
}

const CSV_COLUMNS: [&str; 10] = [
    "problems",
    "k",
    "pass1",
    "passk",
    "potential_k",
    "div_equ",
    "div_equ_excluded",
    "div_ngram",
    "div_selfbleu",
    "mean_entropy",
];

impl MetricsReport {
    pub fn from_eval(samples: &[EvalSample], mean_entropy: Option<f64>) -> Result<Self> {
        let groups: Vec<&[Response]> = samples.iter().map(|s| s.samples.as_slice()).collect();
        let greedy: Vec<u8> = samples.iter().map(|s| s.greedy.accuracy).collect();
        Self::build(&groups, Some(&greedy), mean_entropy)
    }

    /// Report over sample groups alone, as found in a rollout dump.
    pub fn from_groups(groups: &[Vec<Response>]) -> Result<Self> {
        let refs: Vec<&[Response]> = groups.iter().map(Vec::as_slice).collect();
        Self::build(&refs, None, None)
    }

    fn build(groups: &[&[Response]], greedy: Option<&[u8]>, mean_entropy: Option<f64>) -> Result<Self> {
        let (passk_ind, passk) = pass_at_k_groups(groups)?;
        let k = groups[0].len();
        let pass1 = greedy.map(|g| g.iter().map(|&x| f64::from(x)).sum::<f64>() / g.len() as f64);
        let potential_k = greedy.and_then(|g| potential_from_indicators(g, &passk_ind));
        let contents: Vec<Vec<Vec<TokenId>>> =
            groups.iter().map(|g| g.iter().map(|r| r.content().to_vec()).collect()).collect();
        let pooled: Vec<Vec<String>> =
            contents.iter().map(|g| g.iter().flat_map(|r| extract_equations(r)).collect()).collect();
        let de = div_equ_from_equations(&pooled);
        let flat: Vec<Vec<TokenId>> = contents.iter().flatten().cloned().collect();
        Ok(Self {
            problems: groups.len(),
            k,
            pass1,
            passk,
            potential_k,
            div_equ: de.value,
            div_equ_excluded: de.excluded,
            div_ngram: div_ngram(&flat)?,
            div_selfbleu: if k >= 2 { Some(div_selfbleu(&contents)?) } else { None },
            mean_entropy,
        })
    }

    pub fn csv_header() -> String {
        CSV_COLUMNS.join(",")
    }

    /// One CSV row; undefined values are empty cells.
    pub fn csv_row(&self) -> String {
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        [
            self.problems.to_string(),
            self.k.to_string(),
            opt(self.pass1),
            self.passk.to_string(),
            opt(self.potential_k),
            opt(self.div_equ),
            self.div_equ_excluded.to_string(),
            opt(self.div_ngram),
            opt(self.div_selfbleu),
            opt(self.mean_entropy),
        ]
        .join(",")
    }
}

pub fn write_eval_dump(samples: &[EvalSample], path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    for s in samples {
        serde_json::to_writer(&mut out, s)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_eval_dump(path: &Path) -> Result<Vec<EvalSample>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Report for a JSONL dump: an eval dump (lines with a `greedy` field) or
/// a rollout dump, whose consecutive lines with the same step and problem
/// form one group.
pub fn report_from_dump(path: &Path) -> Result<MetricsReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    let first: serde_json::Value = serde_json::from_str(
        lines.first().ok_or_else(|| Error::contract(format!("{} is empty", path.display())))?,
    )?;
    if first.get("greedy").is_some() {
        let samples = lines.iter().map(|l| serde_json::from_str(l)).collect::<Result<Vec<EvalSample>, _>>()?;
        return MetricsReport::from_eval(&samples, None);
    }
    let records = lines.iter().map(|l| serde_json::from_str(l)).collect::<Result<Vec<RolloutRecord>, _>>()?;
    let mut groups: Vec<((u64, u64), Vec<Response>)> = Vec::new();
    for r in records {
        let resp = Response { tokens: r.tokens, accuracy: r.accuracy };
        match groups.last_mut() {
            Some((key, g)) if *key == (r.step, r.problem_id) => g.push(resp),
            _ => groups.push(((r.step, r.problem_id), vec![resp])),
        }
    }
    let groups: Vec<Vec<Response>> = groups.into_iter().map(|(_, g)| g).collect();
    MetricsReport::from_groups(&groups)
}
