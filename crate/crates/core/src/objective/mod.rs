//! The training objective, built on a tape so its gradient is exact.
//!
//! For one group of `G` trajectories sampled from `π_old`:
//!
//! ```text
//! surrogate = (1/G) Σ_i mean_t min(ρ_t A_i, clip(ρ_t, 1-ε, 1+ε) A_i)
//! kl        = (1/G) Σ_i mean_t k3(π_ref / π_θ)
//! diversity = (1/G) Σ_{i gated} -mean_t (π_θ / π_old) log π_θ
//! J         = surrogate - β kl + λ diversity
//! ```
//!
//! with `ρ_t = π_θ(o_t) / π_old(o_t)` evaluated on the realized tokens and
//! `π_old` held constant. `J` is maximized.

mod identity;
mod terms;


use serde::{Deserialize, Serialize};

pub use identity::{
    direction_coefficient, gradient_direction_report, verify_identity, IdentityReport, LengthNormalizer,
    TokenDirection,
};
pub use terms::{diversity_surrogate, k3, kl_k3, kl_k3_values};

use crate::autodiff::{Tape, Var};
use crate::policy::{BoundPolicy, PolicySnapshot};
use crate::rollout::GroupBatch;
use crate::{Error, Result};
use terms::{scalar_sum, TrajectoryScore};

/// Which trajectories receive the diversity term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gating {
    /// Only trajectories whose accuracy reward is 1.
    #[default]
    PositiveOnly,
    AllSamples,
    Off,
}

/// How the importance ratio of a trajectory is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatioMode {
    /// Clip each token's ratio and average over the trajectory.
    #[default]
    PerTokenMean,
    /// One ratio of whole-sequence probabilities; limited to
    /// [`SEQUENCE_RATIO_MAX_LEN`] tokens.
    Sequence,
}

pub const SEQUENCE_RATIO_MAX_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveConfig {
    pub clip_eps: f64,
    pub beta: f64,
    pub lambda: f64,
    pub gating: Gating,
    #[serde(default)]
    pub ratio: RatioMode,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self { clip_eps: 0.2, beta: 1e-4, lambda: 0.01, gating: Gating::PositiveOnly, ratio: RatioMode::PerTokenMean }
    }
}

impl ObjectiveConfig {
    /// The plain GRPO objective: no diversity term.
    pub fn baseline() -> Self {
        Self { lambda: 0.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(Error::Config(format!("clip_eps must be in (0, 1), got {}", self.clip_eps)));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("beta must be a finite value >= 0, got {}", self.beta)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be a finite value >= 0, got {}", self.lambda)));
        }
        Ok(())
    }
}

/// Values of one group's terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupDiagnostics {
    pub problem_id: u64,
    pub surrogate: f64,
    pub kl: f64,
    pub diversity: f64,
    pub total: f64,
    /// Share of tokens (or sequences) where the clipped branch is the min.
    pub clip_fraction: f64,
    pub mean_ratio: f64,
    pub degenerate: bool,
}

/// Term values of an objective. `total = surrogate - β kl + λ diversity`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub surrogate: f64,
    pub kl: f64,
    pub diversity: f64,
    pub total: f64,
    pub clip_fraction: f64,
    pub mean_ratio: f64,
    /// Mean next-token entropy of `π_θ` over the scored tokens.
    pub mean_entropy: f64,
    /// Share of trajectories with accuracy 1.
    pub positive_fraction: f64,
    pub groups: Vec<GroupDiagnostics>,
}

/// A differentiable objective and its term values.
#[derive(Debug, Clone)]
pub struct Objective {
    pub total: Var,
    pub breakdown: LossBreakdown,
}

/// Tape nodes of one group's terms, all built from one scoring pass.
struct GroupNodes {
    grpo: Var,
    diversity: Var,
    diag: GroupDiagnostics,
    entropy_sum: f64,
    tokens: usize,
    positives: usize,
}

fn gate(gating: Gating, accurate: bool) -> bool {
    match gating {
        Gating::PositiveOnly => accurate,
        Gating::AllSamples => true,
        Gating::Off => false,
    }
}

fn build_group(
    tape: &mut Tape,
    theta: &BoundPolicy,
    reference: &PolicySnapshot,
    group: &GroupBatch,
    cfg: &ObjectiveConfig,
) -> Result<GroupNodes> {
    cfg.validate()?;
    let advantages = group
        .advantages
        .as_ref()
        .ok_or_else(|| Error::contract(format!("group {} has no advantages", group.problem_id)))?;
    let g = group.size();
    if g == 0 {
        return Err(Error::contract("empty group"));
    }
    let inv_g = 1.0 / g as f64;
    let (mut clipped, mut kls, mut divs) = (Vec::new(), Vec::new(), Vec::new());
    let (mut clip_hits, mut clip_units, mut ratio_sum) = (0usize, 0usize, 0.0);
    let (mut entropy_sum, mut tokens, mut positives) = (0.0, 0usize, 0usize);
    for (i, traj) in group.trajectories.iter().enumerate() {
        let s = TrajectoryScore::new(tape, theta, &group.prompt, traj)?;
        let (c, stats) = s.clipped(tape, advantages[i], cfg, i)?;
        clipped.push(c);
        clip_hits += stats.clipped;
        clip_units += stats.units;
        ratio_sum += stats.ratio_sum;
        let ref_lp = reference.policy().sequence_log_probs(&group.prompt, &traj.tokens)?;
        let k = s.k3(tape, &ref_lp, i)?;
        kls.push(tape.mean(k)?);
        if gate(cfg.gating, traj.reward.is_accurate()) {
            divs.push(s.diversity(tape)?);
        }
        entropy_sum += s.entropies.iter().sum::<f64>();
        tokens += traj.len();
        positives += usize::from(traj.reward.is_accurate());
    }
    let surrogate = scalar_sum(tape, &clipped)?;
    let surrogate = tape.mul_const(surrogate, inv_g);
    let kl = scalar_sum(tape, &kls)?;
    let kl = tape.mul_const(kl, inv_g);
    let penalty = tape.mul_const(kl, cfg.beta);
    let grpo = tape.sub(surrogate, penalty)?;
    let diversity = scalar_sum(tape, &divs)?;
    let diversity = tape.mul_const(diversity, inv_g);
    let diag = GroupDiagnostics {
        problem_id: group.problem_id,
        surrogate: tape.item(surrogate),
        kl: tape.item(kl),
        diversity: tape.item(diversity),
        total: f64::NAN,
        clip_fraction: clip_hits as f64 / clip_units as f64,
        mean_ratio: ratio_sum / clip_units as f64,
        degenerate: group.degenerate,
    };
    Ok(GroupNodes { grpo, diversity, diag, entropy_sum, tokens, positives })
}

/// Clipped surrogate minus `β` times the mean k3 penalty, for one group.
pub fn grpo_surrogate(
    tape: &mut Tape,
    theta: &BoundPolicy,
    reference: &PolicySnapshot,
    group: &GroupBatch,
    cfg: &ObjectiveConfig,
) -> Result<(Var, GroupDiagnostics)> {
    let mut n = build_group(tape, theta, reference, group, cfg)?;
    n.diag.total = tape.item(n.grpo);
    Ok((n.grpo, n.diag))
}

/// Diversity surrogate summed over the gated trajectories, divided by `G`.
pub fn gated_diversity(tape: &mut Tape, theta: &BoundPolicy, group: &GroupBatch, cfg: &ObjectiveConfig) -> Result<Var> {
    let mut divs = Vec::new();
    for traj in &group.trajectories {
        if gate(cfg.gating, traj.reward.is_accurate()) {
            let s = TrajectoryScore::new(tape, theta, &group.prompt, traj)?;
            divs.push(s.diversity(tape)?);
        }
    }
    let sum = scalar_sum(tape, &divs)?;
    Ok(tape.mul_const(sum, 1.0 / group.size() as f64))
}

fn finish(tape: &mut Tape, n: &mut GroupNodes, lambda: f64) -> Result<Var> {
    // The diversity nodes exist either way for logging; they join J only
    // when λ is nonzero so a λ = 0 run is the plain GRPO computation.
    let total = if lambda != 0.0 {
        let d = tape.mul_const(n.diversity, lambda);
        tape.add(n.grpo, d)?
    } else {
        n.grpo
    };
    n.diag.total = tape.item(total);
    Ok(total)
}

/// `J = grpo_surrogate + λ gated_diversity` for one group.
pub fn combined_objective(
    tape: &mut Tape,
    theta: &BoundPolicy,
    reference: &PolicySnapshot,
    group: &GroupBatch,
    cfg: &ObjectiveConfig,
) -> Result<Objective> {
    batch_objective(tape, theta, reference, std::slice::from_ref(group), cfg)
}

/// Mean of the per-group objectives over a batch of groups.
pub fn batch_objective(
    tape: &mut Tape,
    theta: &BoundPolicy,
    reference: &PolicySnapshot,
    groups: &[GroupBatch],
    cfg: &ObjectiveConfig,
) -> Result<Objective> {
    if groups.is_empty() {
        return Err(Error::contract("no groups to score"));
    }
    let mut totals = Vec::with_capacity(groups.len());
    let mut diags = Vec::with_capacity(groups.len());
    let (mut entropy_sum, mut tokens, mut positives, mut trajectories) = (0.0, 0usize, 0usize, 0usize);
    for group in groups {
        let mut n = build_group(tape, theta, reference, group, cfg)?;
        let total = finish(tape, &mut n, cfg.lambda)?;
        if !n.diag.total.is_finite() {
            return Err(Error::numeric(format!(
                "objective of group {} is not finite: {:?}",
                group.problem_id, n.diag
            )));
        }
        totals.push(total);
        entropy_sum += n.entropy_sum;
        tokens += n.tokens;
        positives += n.positives;
        trajectories += group.size();
        diags.push(n.diag);
    }
    let total = if totals.len() == 1 {
        totals[0]
    } else {
        let sum = scalar_sum(tape, &totals)?;
        tape.mul_const(sum, 1.0 / groups.len() as f64)
    };
    let mean = |f: fn(&GroupDiagnostics) -> f64| diags.iter().map(f).sum::<f64>() / diags.len() as f64;
    let breakdown = LossBreakdown {
        surrogate: mean(|d| d.surrogate),
        kl: mean(|d| d.kl),
        diversity: mean(|d| d.diversity),
        total: tape.item(total),
        clip_fraction: mean(|d| d.clip_fraction),
        mean_ratio: mean(|d| d.mean_ratio),
        mean_entropy: entropy_sum / tokens as f64,
        positive_fraction: positives as f64 / trajectories as f64,
        groups: diags,
    };
    Ok(Objective { total, breakdown })
}
