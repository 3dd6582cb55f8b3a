use crate::policy::{math, TokenId};

/// Equations `lhs=rhs` in a response, in order and with repeats.
///
/// The left side is the longest span ending just before `=` that reads as
/// signed integers joined by `+`, `-` or `*`; the right side is the signed
/// integer right after it. Spans are rendered by concatenating symbols.
pub fn extract_equations(tokens: &[TokenId]) -> Vec<String> {
    let mut out = Vec::new();
    for (e, _) in tokens.iter().enumerate().filter(|(_, &t)| t == math::EQUALS) {
        let Some(rhs_len) = signed_integer_len(&tokens[e + 1..]) else { continue };
        let run_start = tokens[..e]
            .iter()
            .rposition(|&t| math::as_digit(t).is_none() && !math::is_operator(t))
            .map_or(0, |i| i + 1);
        if let Some(start) = (run_start..e).find(|&s| is_operand_expr(&tokens[s..e])) {
            out.push(tokens[start..e + 1 + rhs_len].iter().map(|&t| math::symbol(t)).collect());
        }
    }
    out
}

/// Length of the leading `-?digit+` of `tokens`.
fn signed_integer_len(tokens: &[TokenId]) -> Option<usize> {
    let sign = usize::from(tokens.first() == Some(&math::MINUS));
    let digits = tokens[sign..].iter().take_while(|&&t| math::as_digit(t).is_some()).count();
    (digits > 0).then_some(sign + digits)
}

/// Whether the whole of `tokens` matches `-?D+([+-*]-?D+)*`.
fn is_operand_expr(tokens: &[TokenId]) -> bool {
    let mut i = 0;
    loop {
        match signed_integer_len(&tokens[i..]) {
            Some(n) => i += n,
            None => return false,
        }
        if i == tokens.len() {
            return true;
        }
        if !math::is_operator(tokens[i]) {
            return false;
        }
        i += 1;
    }
}
