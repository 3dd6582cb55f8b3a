//! Micro-math: single-digit arithmetic questions answered in a boxed span.
//!
//! A problem such as `3+5*2` is shown to the policy as the prompt
//! `<bos> 3 + 5 * 2 ?`. A response is scored by rule: the format reward
//! requires exactly one well-formed `[ ... ]` box before EOS and the
//! accuracy reward additionally requires the boxed integer to be the
//! ground truth under standard operator precedence.

mod equations;
mod reward;
mod solutions;

#[cfg(test)]
mod tests;

use std::collections::HashSet;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use equations::extract_equations;
pub use reward::{boxed_answer, score_response, RewardRecord, FORMAT_WEIGHT};
pub use solutions::{number_tokens, reference_solutions};

use crate::policy::{math, TokenId};
use crate::{Error, Result};

/// Number of operators in the easiest and hardest problems.
pub const DIFFICULTIES: std::ops::RangeInclusive<usize> = 1..=3;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Problem {
    pub id: u64,
    /// Alternating single-digit operands and operators.
    pub expression: Vec<TokenId>,
    pub ground_truth: i64,
    /// `BOS`, the expression, then `SEPARATOR`.
    pub prompt: Vec<TokenId>,
}

impl Problem {
    pub fn new(id: u64, expression: Vec<TokenId>) -> Result<Self> {
        let ground_truth = evaluate(&expression)?;
        let mut prompt = Vec::with_capacity(expression.len() + 2);
        prompt.push(math::BOS);
        prompt.extend_from_slice(&expression);
        prompt.push(math::SEPARATOR);
        Ok(Self { id, expression, ground_truth, prompt })
    }

    /// Parses text such as `"3+5*2"`.
    pub fn parse(id: u64, text: &str) -> Result<Self> {
        let tokens = text
            .chars()
            .filter(|c| !c.is_whitespace())
            .map(|c| match c {
                '0'..='9' => Ok(math::digit(c as u32 - '0' as u32)),
                '+' => Ok(math::PLUS),
                '-' => Ok(math::MINUS),
                '*' => Ok(math::TIMES),
                other => Err(Error::contract(format!("unexpected character {other:?} in expression"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(id, tokens)
    }

    /// Number of operators.
    pub fn difficulty(&self) -> usize {
        self.expression.len() / 2
    }

    pub fn text(&self) -> String {
        self.expression.iter().map(|&t| math::symbol(t)).collect()
    }

    pub fn operands(&self) -> Vec<i64> {
        self.expression.iter().step_by(2).map(|&t| t as i64).collect()
    }

    pub fn operators(&self) -> Vec<TokenId> {
        self.expression.iter().skip(1).step_by(2).copied().collect()
    }
}

/// Evaluates an operand/operator token string with `*` binding tighter
/// than `+` and `-`.
pub fn evaluate(expression: &[TokenId]) -> Result<i64> {
    let ops = expression.len() / 2;
    if expression.len() % 2 == 0 || !DIFFICULTIES.contains(&ops) {
        return Err(Error::contract(format!(
            "expression must have 2 to 4 operands, got {} tokens",
            expression.len()
        )));
    }
    let operand = |t: TokenId| {
        math::as_digit(t)
            .map(i64::from)
            .ok_or_else(|| Error::contract(format!("expected a digit, got token {t}")))
    };
    let mut total = 0;
    let mut sign = 1;
    let mut term = operand(expression[0])?;
    for pair in expression[1..].chunks(2) {
        let x = operand(pair[1])?;
        match pair[0] {
            math::TIMES => term *= x,
            math::PLUS | math::MINUS => {
                total += sign * term;
                sign = if pair[0] == math::PLUS { 1 } else { -1 };
                term = x;
            }
            t => return Err(Error::contract(format!("expected an operator, got token {t}"))),
        }
    }
    Ok(total + sign * term)
}

fn check_difficulty(difficulty: usize) -> Result<()> {
    if DIFFICULTIES.contains(&difficulty) {
        Ok(())
    } else {
        Err(Error::contract(format!("difficulty must be 1, 2 or 3, got {difficulty}")))
    }
}

/// Number of distinct expressions with `difficulty` operators.
pub fn problem_space(difficulty: usize) -> u64 {
    10u64.pow(difficulty as u32 + 1) * 3u64.pow(difficulty as u32)
}

/// Draws `count` problems, without repeats until the space is exhausted.
/// Ids are positions in the returned list.
pub fn generate_problems(count: usize, difficulty: usize, seed: u64) -> Result<Vec<Problem>> {
    if count == 0 {
        return Err(Error::contract("count must be at least 1"));
    }
    check_difficulty(difficulty)?;
    let space = problem_space(difficulty);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        if seen.len() as u64 == space {
            seen.clear();
        }
        let mut expr = vec![math::digit(rng.gen_range(0..10))];
        for _ in 0..difficulty {
            expr.push([math::PLUS, math::MINUS, math::TIMES][rng.gen_range(0..3)]);
            expr.push(math::digit(rng.gen_range(0..10)));
        }
        if seen.insert(expr.clone()) {
            out.push(Problem::new(out.len() as u64, expr)?);
        }
    }
    Ok(out)
}

/// Every problem of a difficulty in lexicographic token order.
pub fn enumerate_problems(difficulty: usize) -> Result<Vec<Problem>> {
    check_difficulty(difficulty)?;
    let mut exprs: Vec<Vec<TokenId>> = (0..10).map(|d| vec![math::digit(d)]).collect();
    for _ in 0..difficulty {
        exprs = exprs
            .into_iter()
            .flat_map(|e| {
                [math::PLUS, math::MINUS, math::TIMES].into_iter().flat_map(move |op| {
                    let e = e.clone();
                    (0..10).map(move |d| {
                        let mut next = e.clone();
                        next.push(op);
                        next.push(math::digit(d));
                        next
                    })
                })
            })
            .collect();
    }
    exprs.sort();
    exprs.into_iter().enumerate().map(|(i, e)| Problem::new(i as u64, e)).collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct ProblemRecord {
    id: u64,
    expression: String,
    ground_truth: i64,
}

pub fn write_problems_jsonl(problems: &[Problem], path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    for p in problems {
        let rec = ProblemRecord { id: p.id, expression: p.text(), ground_truth: p.ground_truth };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Reads a problem set; a stored ground truth that disagrees with the
/// expression is a load error.
pub fn read_problems_jsonl(path: &Path) -> Result<Vec<Problem>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ProblemRecord = serde_json::from_str(&line)?;
        let p = Problem::parse(rec.id, &rec.expression)?;
        if p.ground_truth != rec.ground_truth {
            return Err(Error::Load(format!(
                "problem {} states ground truth {} but {} evaluates to {}",
                rec.id, rec.ground_truth, rec.expression, p.ground_truth
            )));
        }
        out.push(p);
    }
    Ok(out)
}
