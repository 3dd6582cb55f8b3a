use super::Problem;
use crate::policy::{math, TokenId};

/// Tokens of a signed integer, minus first.
pub fn number_tokens(n: i64) -> Vec<TokenId> {
    let mut out: Vec<TokenId> = n.unsigned_abs().to_string().bytes().map(|b| math::digit((b - b'0') as u32)).collect();
    if n < 0 {
        out.insert(0, math::MINUS);
    }
    out
}

/// Binary steps that reduce the expression: products left to right, then
/// sums and differences left to right.
fn reduction_steps(problem: &Problem) -> Vec<(i64, TokenId, i64, i64)> {
    let mut nums = problem.operands();
    let mut ops = problem.operators();
    let mut steps = Vec::new();
    while !ops.is_empty() {
        let i = ops.iter().position(|&o| o == math::TIMES).unwrap_or(0);
        let (a, b) = (nums[i], nums[i + 1]);
        let c = match ops[i] {
            math::TIMES => a * b,
            math::PLUS => a + b,
            _ => a - b,
        };
        steps.push((a, ops[i], b, c));
        nums.splice(i..i + 2, [c]);
        ops.remove(i);
    }
    steps
}

/// Worked solutions in the response format the rewards expect.
///
/// Each solution lists its reduction steps as `a op b = c ;`, then boxes
/// the answer and ends with EOS. Variants swap the operands of `+` and `*`
/// steps on non-negative values; problems with more than one operator also
/// get a one-line `expression = answer` variant. The list is sorted and
/// free of repeats.
pub fn reference_solutions(problem: &Problem) -> Vec<Vec<TokenId>> {
    let steps = reduction_steps(problem);
    let commutable: Vec<usize> = steps
        .iter()
        .enumerate()
        .filter(|(_, &(a, op, b, _))| op != math::MINUS && a >= 0 && b >= 0 && a != b)
        .map(|(i, _)| i)
        .collect();
    let answer = {
        let mut t = vec![math::BOX_OPEN];
        t.extend(number_tokens(problem.ground_truth));
        t.extend([math::BOX_CLOSE, math::EOS]);
        t
    };
    let mut out = Vec::new();
    for mask in 0u32..1 << commutable.len() {
        let mut trace = Vec::new();
        for (i, &(a, op, b, c)) in steps.iter().enumerate() {
            let swap = commutable.iter().position(|&j| j == i).is_some_and(|k| mask >> k & 1 == 1);
            let (x, y) = if swap { (b, a) } else { (a, b) };
            trace.extend(number_tokens(x));
            trace.push(op);
            trace.extend(number_tokens(y));
            trace.push(math::EQUALS);
            trace.extend(number_tokens(c));
            trace.push(math::STEP);
        }
        trace.extend_from_slice(&answer);
        out.push(trace);
    }
    if steps.len() > 1 {
        let mut trace = problem.expression.clone();
        trace.push(math::EQUALS);
        trace.extend(number_tokens(problem.ground_truth));
        trace.push(math::STEP);
        trace.extend_from_slice(&answer);
        out.push(trace);
    }
    out.sort();
    out.dedup();
    out
}
