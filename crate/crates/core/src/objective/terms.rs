use crate::autodiff::{Array, Tape, Var};
use crate::policy::{BoundPolicy, Policy, PolicySnapshot, TokenId};
use crate::rollout::Trajectory;
use crate::{Error, Result};

use super::{ObjectiveConfig, RatioMode, SEQUENCE_RATIO_MAX_LEN};

/// `u - ln u - 1`, written to stay non-negative near `u = 1`.
pub fn k3(u: f64) -> f64 {
    let x = u - 1.0;
    x - x.ln_1p()
}

/// Per-token k3 values with `u = π_ref(o_t) / π_θ(o_t)`.
pub fn kl_k3_values(policy: &Policy, reference: &Policy, prompt: &[TokenId], tokens: &[TokenId]) -> Result<Vec<f64>> {
    if policy.vocab_size() != reference.vocab_size() {
        return Err(Error::contract("policy and reference use different vocabularies"));
    }
    let lp = policy.sequence_log_probs(prompt, tokens)?;
    let lr = reference.sequence_log_probs(prompt, tokens)?;
    lp.iter()
        .zip(&lr)
        .enumerate()
        .map(|(t, (p, r))| {
            let u = (r - p).exp();
            if u.is_finite() {
                Ok(k3(u))
            } else {
                Err(Error::numeric(format!("k3 ratio at token {t} is {u}")))
            }
        })
        .collect()
}

/// Differentiable per-token k3 values, a vector of length `T`.
pub fn kl_k3(
    tape: &mut Tape,
    theta: &BoundPolicy,
    reference: &PolicySnapshot,
    prompt: &[TokenId],
    traj: &Trajectory,
) -> Result<Var> {
    if theta.policy().vocab_size() != reference.policy().vocab_size() {
        return Err(Error::contract("policy and reference use different vocabularies"));
    }
    let s = TrajectoryScore::new(tape, theta, prompt, traj)?;
    let ref_lp = reference.policy().sequence_log_probs(prompt, &traj.tokens)?;
    s.k3(tape, &ref_lp, 0)
}

/// `-mean_t (π_θ(o_t) / π_old(o_t)) log π_θ(o_t)` for one trajectory.
pub fn diversity_surrogate(tape: &mut Tape, theta: &BoundPolicy, prompt: &[TokenId], traj: &Trajectory) -> Result<Var> {
    let s = TrajectoryScore::new(tape, theta, prompt, traj)?;
    s.diversity(tape)
}

/// Sum of scalar nodes; an empty list is a zero leaf.
pub(super) fn scalar_sum(tape: &mut Tape, xs: &[Var]) -> Result<Var> {
    let Some((&first, rest)) = xs.split_first() else {
        return Ok(tape.scalar(0.0));
    };
    let mut acc = first;
    for &x in rest {
        acc = tape.add(acc, x)?;
    }
    Ok(acc)
}

pub(super) struct ClipStats {
    /// Tokens (or whole sequences) where the clipped branch is the min.
    pub clipped: usize,
    pub units: usize,
    pub ratio_sum: f64,
}

/// Log-probabilities of one trajectory under `π_θ`, recorded once and
/// shared by every term.
pub(super) struct TrajectoryScore<'t> {
    pub logp: Var,
    pub old: &'t [f64],
    pub entropies: Vec<f64>,
}

impl<'t> TrajectoryScore<'t> {
    pub fn new(tape: &mut Tape, theta: &BoundPolicy, prompt: &[TokenId], traj: &'t Trajectory) -> Result<Self> {
        if traj.old_log_probs.len() != traj.len() {
            return Err(Error::contract("old log-probs do not match the trajectory length"));
        }
        let z = theta.step_logits(tape, prompt, &traj.tokens)?;
        let lsm = tape.log_softmax(z)?;
        let v = theta.policy().vocab_size();
        let entropies = tape
            .value(lsm)
            .data()
            .chunks(v)
            .map(|row| -row.iter().map(|&l| if l.is_finite() { l.exp() * l } else { 0.0 }).sum::<f64>())
            .collect();
        let logp = tape.pick(lsm, &traj.tokens)?;
        Ok(Self { logp, old: &traj.old_log_probs, entropies })
    }

    fn ratio(&self, tape: &mut Tape, index: usize) -> Result<Var> {
        let old = tape.leaf(Array::vector(self.old.to_vec()));
        let diff = tape.sub(self.logp, old)?;
        let ratio = tape.exp(diff);
        if let Some(t) = tape.value(ratio).data().iter().position(|r| !r.is_finite()) {
            return Err(Error::numeric(format!(
                "importance ratio of trajectory {index} at token {t} is {}",
                tape.value(ratio).data()[t]
            )));
        }
        Ok(ratio)
    }

    /// `mean_t min(ρ_t A, clip(ρ_t) A)`, or the sequence-ratio form.
    pub fn clipped(
        &self,
        tape: &mut Tape,
        advantage: f64,
        cfg: &ObjectiveConfig,
        index: usize,
    ) -> Result<(Var, ClipStats)> {
        let (lo, hi) = (1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
        let ratio = match cfg.ratio {
            RatioMode::PerTokenMean => self.ratio(tape, index)?,
            RatioMode::Sequence => {
                let n = self.old.len();
                if n > SEQUENCE_RATIO_MAX_LEN {
                    return Err(Error::contract(format!(
                        "sequence ratio needs at most {SEQUENCE_RATIO_MAX_LEN} tokens, trajectory {index} has {n}"
                    )));
                }
                let lp = tape.sum(self.logp);
                let old = tape.scalar(self.old.iter().sum());
                let diff = tape.sub(lp, old)?;
                let ratio = tape.exp(diff);
                if !tape.item(ratio).is_finite() {
                    return Err(Error::numeric(format!(
                        "sequence ratio of trajectory {index} is {}",
                        tape.item(ratio)
                    )));
                }
                ratio
            }
        };
        let unclipped = tape.mul_const(ratio, advantage);
        let bounded = tape.clamp(ratio, lo, hi);
        let clipped = tape.mul_const(bounded, advantage);
        let m = tape.minimum(unclipped, clipped)?;
        let stats = ClipStats {
            clipped: tape
                .value(clipped)
                .data()
                .iter()
                .zip(tape.value(unclipped).data())
                .filter(|(c, u)| c < u)
                .count(),
            units: tape.value(ratio).len(),
            ratio_sum: tape.value(ratio).data().iter().sum(),
        };
        Ok((tape.mean(m)?, stats))
    }

    /// Per-token `u - ln u - 1` with `ln u = log π_ref - log π_θ`.
    pub fn k3(&self, tape: &mut Tape, ref_lp: &[f64], index: usize) -> Result<Var> {
        let r = tape.leaf(Array::vector(ref_lp.to_vec()));
        let log_u = tape.sub(r, self.logp)?;
        let u = tape.exp(log_u);
        if let Some(t) = tape.value(u).data().iter().position(|x| !x.is_finite()) {
            return Err(Error::numeric(format!(
                "k3 ratio of trajectory {index} at token {t} is {}",
                tape.value(u).data()[t]
            )));
        }
        let shifted = tape.add_const(u, -1.0);
        Ok(tape.sub(shifted, log_u)?)
    }

    pub fn diversity(&self, tape: &mut Tape) -> Result<Var> {
        let ratio = self.ratio(tape, 0)?;
        let weighted = tape.mul(ratio, self.logp)?;
        let neg = tape.neg(weighted);
        Ok(tape.mean(neg)?)
    }
}
