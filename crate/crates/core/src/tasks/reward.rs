use serde::{Deserialize, Serialize};

use super::Problem;
use crate::policy::{math, TokenId};

/// Weight of the format reward in the scalar total.
pub const FORMAT_WEIGHT: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardRecord {
    pub accuracy: u8,
    pub format: u8,
    pub total: f64,
}

impl RewardRecord {
    pub fn new(accurate: bool, formatted: bool) -> Self {
        debug_assert!(formatted || !accurate);
        let (a, f) = (u8::from(accurate), u8::from(formatted));
        Self { accuracy: a, format: f, total: f64::from(a) + FORMAT_WEIGHT * f64::from(f) }
    }

    pub fn is_accurate(&self) -> bool {
        self.accuracy == 1
    }
}

/// The boxed integer of a well-formatted response.
///
/// Returns `None` when the format rule fails: the response must reach EOS
/// and hold exactly one `[`, exactly one `]` after it, and between them an
/// optional minus followed by at least one digit. `Some(None)` means the
/// box is well formed but its value does not fit in an `i64`.
pub fn boxed_answer(response: &[TokenId]) -> Option<Option<i64>> {
    let end = response.iter().position(|&t| t == math::EOS)?;
    let body = &response[..end];
    let mut opens = body.iter().enumerate().filter(|(_, &t)| t == math::BOX_OPEN);
    let mut closes = body.iter().enumerate().filter(|(_, &t)| t == math::BOX_CLOSE);
    let (open, close) = (opens.next()?.0, closes.next()?.0);
    if opens.next().is_some() || closes.next().is_some() || close < open {
        return None;
    }
    let inner = &body[open + 1..close];
    let (negative, digits) = match inner.first() {
        Some(&math::MINUS) => (true, &inner[1..]),
        _ => (false, inner),
    };
    if digits.is_empty() || digits.iter().any(|&t| math::as_digit(t).is_none()) {
        return None;
    }
    let value = digits
        .iter()
        .try_fold(0i64, |acc, &t| acc.checked_mul(10)?.checked_add(t as i64))
        .map(|v| if negative { -v } else { v });
    Some(value)
}

pub fn score_response(problem: &Problem, response: &[TokenId]) -> RewardRecord {
    match boxed_answer(response) {
        None => RewardRecord::new(false, false),
        Some(v) => RewardRecord::new(v == Some(problem.ground_truth), true),
    }
}
