use serde::{Deserialize, Serialize};

use super::{div_equ, pass_at_1, potential_at_k, evaluate_policy};
use crate::policy::Policy;
use crate::tasks::Problem;
use crate::{Error, Result};

/// Default Pass@1 cut for the regression subset.
pub const PASS1_THRESHOLD: f64 = 0.4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub label: String,
    pub pass1: f64,
    pub div_equ: Option<f64>,
    pub potential_k: Option<f64>,
}

/// Ordinary least squares fit `y = slope x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Regression {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub n: usize,
}

/// Least squares over `points`; `None` with fewer than two points or no
/// spread in `x`. A perfect fit to constant `y` has `r2 = 1`.
pub fn linear_regression(points: &[(f64, f64)]) -> Option<Regression> {
    let n = points.len();
    if n < 2 {
        return None;
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n as f64;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n as f64;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = points.iter().map(|p| (p.1 - slope * p.0 - intercept).powi(2)).sum();
    let r2 = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    Some(Regression { slope, intercept, r2, n })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub rows: Vec<StudyRow>,
    pub threshold: f64,
    /// Potential@k against Div-Equ over rows with Pass@1 above threshold.
    pub regression: Option<Regression>,
    pub notice: Option<String>,
}

impl StudyReport {
    pub fn from_rows(rows: Vec<StudyRow>, threshold: f64) -> Self {
        let points: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.pass1 > threshold)
            .filter_map(|r| Some((r.div_equ?, r.potential_k?)))
            .collect();
        let regression = linear_regression(&points);
        let notice = regression.is_none().then(|| {
            format!(
                "regression omitted: {} row(s) above Pass@1 {threshold} with defined Div-Equ and Potential@k and distinct Div-Equ needed, at least 2",
                points.len()
            )
        });
        Self { rows, threshold, regression, notice }
    }

    pub fn to_csv(&self) -> String {
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        let mut out = String::from("label,pass1,div_equ,potential_k\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{}\n", r.label, r.pass1, opt(r.div_equ), opt(r.potential_k)));
        }
        out
    }
}

/// Evaluates each labelled policy on `problems` and fits Potential@k
/// against Div-Equ over the rows whose Pass@1 exceeds `threshold`.
#[allow(clippy::too_many_arguments)]
pub fn diversity_potential_study(
    policies: &[(String, Policy)],
    problems: &[Problem],
    k: usize,
    temperature: f64,
    max_len: usize,
    seed: u64,
    threshold: f64,
) -> Result<StudyReport> {
    if policies.len() < 3 {
        return Err(Error::contract(format!("the study needs at least 3 policies, got {}", policies.len())));
    }
    let rows = policies
        .iter()
        .map(|(label, policy)| {
            let samples = evaluate_policy(policy, problems, k, temperature, max_len, seed, true)?;
            Ok(StudyRow {
                label: label.clone(),
                pass1: pass_at_1(&samples)?,
                div_equ: div_equ(&samples)?.value,
                potential_k: potential_at_k(&samples)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StudyReport::from_rows(rows, threshold))
}
