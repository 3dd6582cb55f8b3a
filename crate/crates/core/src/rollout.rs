//! Group sampling from a frozen policy and group-relative advantages.

use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::policy::{math, sample_completion, PolicySnapshot, TokenId};
use crate::tasks::{score_response, Problem, RewardRecord};
use crate::{Error, Result};

/// Standard deviation below which a group counts as degenerate.
pub const DEGENERATE_STD: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub problem_id: u64,
    pub tokens: Vec<TokenId>,
    /// Temperature-1 log-probabilities under the sampling policy.
    pub old_log_probs: Vec<f64>,
    pub reward: RewardRecord,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// The completions sampled for one prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupBatch {
    pub problem_id: u64,
    pub prompt: Vec<TokenId>,
    pub trajectories: Vec<Trajectory>,
    /// `None` until [`GroupBatch::assign_advantages`] or
    /// [`GroupBatch::set_advantages`] runs.
    pub advantages: Option<Vec<f64>>,
    pub degenerate: bool,
}

impl GroupBatch {
    pub fn new(problem_id: u64, prompt: Vec<TokenId>, trajectories: Vec<Trajectory>) -> Result<Self> {
        for t in &trajectories {
            if t.is_empty() || t.old_log_probs.len() != t.len() {
                return Err(Error::contract(format!(
                    "trajectory has {} tokens and {} old log-probs",
                    t.len(),
                    t.old_log_probs.len()
                )));
            }
            if let Some(l) = t.old_log_probs.iter().find(|l| !(l.is_finite() && **l <= 0.0)) {
                return Err(Error::numeric(format!("old log-prob {l} is not a finite non-positive value")));
            }
        }
        Ok(Self { problem_id, prompt, trajectories, advantages: None, degenerate: false })
    }

    pub fn size(&self) -> usize {
        self.trajectories.len()
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.trajectories.iter().map(|t| t.reward.total).collect()
    }

    /// Standardizes the group's total rewards.
    pub fn assign_advantages(&mut self) -> Result<()> {
        let (a, d) = compute_advantages(&self.rewards())?;
        self.advantages = Some(a);
        self.degenerate = d;
        Ok(())
    }

    /// Installs advantages chosen by the caller.
    pub fn set_advantages(&mut self, advantages: Vec<f64>, degenerate: bool) -> Result<()> {
        if advantages.len() != self.size() {
            return Err(Error::contract(format!(
                "{} advantages for a group of {}",
                advantages.len(),
                self.size()
            )));
        }
        self.advantages = Some(advantages);
        self.degenerate = degenerate;
        Ok(())
    }

    pub fn positive_fraction(&self) -> f64 {
        let n = self.trajectories.iter().filter(|t| t.reward.is_accurate()).count();
        n as f64 / self.size() as f64
    }

    pub fn records(&self, step: u64) -> Vec<RolloutRecord> {
        self.trajectories
            .iter()
            .enumerate()
            .map(|(i, t)| RolloutRecord {
                step,
                problem_id: self.problem_id,
                tokens: t.tokens.clone(),
                old_logprobs: t.old_log_probs.clone(),
                accuracy: t.reward.accuracy,
                format: t.reward.format,
                total_reward: t.reward.total,
                advantage: self.advantages.as_ref().map(|a| a[i]),
            })
            .collect()
    }
}

/// Seed of trajectory `index` under a run seed (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Samples `g` completions of `problem` from the snapshot and scores them.
/// Trajectory `i` uses `derive_seed(seed, i)`. Advantages are left unset.
pub fn collect_group(
    snapshot: &PolicySnapshot,
    problem: &Problem,
    g: usize,
    temperature: f64,
    max_len: usize,
    seed: u64,
) -> Result<GroupBatch> {
    if g < 2 {
        return Err(Error::contract(format!("group size must be at least 2, got {g}")));
    }
    let trajectories = (0..g)
        .map(|i| {
            let c = sample_completion(
                snapshot.policy(),
                &problem.prompt,
                math::EOS,
                temperature,
                max_len,
                derive_seed(seed, i as u64),
            )?;
            let reward = score_response(problem, &c.tokens);
            Ok(Trajectory { problem_id: problem.id, tokens: c.tokens, old_log_probs: c.log_probs, reward })
        })
        .collect::<Result<Vec<_>>>()?;
    GroupBatch::new(problem.id, problem.prompt.clone(), trajectories)
}

/// Collects one group per problem, with group `j` seeded by `seeds[j]`.
/// The result is in input order whether or not `parallel` is set.
pub fn collect_groups(
    snapshot: &PolicySnapshot,
    problems: &[&Problem],
    seeds: &[u64],
    g: usize,
    temperature: f64,
    max_len: usize,
    parallel: bool,
) -> Result<Vec<GroupBatch>> {
    let one = |(p, &s): (&&Problem, &u64)| -> Result<GroupBatch> {
        let mut b = collect_group(snapshot, p, g, temperature, max_len, s)?;
        b.assign_advantages()?;
        Ok(b)
    };
    if parallel {
        problems.par_iter().zip(seeds).map(one).collect()
    } else {
        problems.iter().zip(seeds).map(one).collect()
    }
}

/// Group-normalized advantages `(r - mean) / std` with population std.
/// A group whose std is below [`DEGENERATE_STD`] gets all zeros and is
/// flagged degenerate.
pub fn compute_advantages(rewards: &[f64]) -> Result<(Vec<f64>, bool)> {
    if rewards.len() < 2 {
        return Err(Error::contract(format!("need at least 2 rewards, got {}", rewards.len())));
    }
    if let Some(r) = rewards.iter().find(|r| !r.is_finite()) {
        return Err(Error::numeric(format!("reward {r} is not finite")));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let std = (rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
    if std < DEGENERATE_STD {
        return Ok((vec![0.0; rewards.len()], true));
    }
    Ok((rewards.iter().map(|r| (r - mean) / std).collect(), false))
}

/// One line of the rollout dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutRecord {
    pub step: u64,
    pub problem_id: u64,
    pub tokens: Vec<TokenId>,
    pub old_logprobs: Vec<f64>,
    pub accuracy: u8,
    pub format: u8,
    pub total_reward: f64,
    pub advantage: Option<f64>,
}

pub fn write_rollouts(out: &mut impl Write, step: u64, batches: &[GroupBatch]) -> Result<()> {
    for b in batches {
        for r in b.records(step) {
            serde_json::to_writer(&mut *out, &r)?;
            out.write_all(b"\n").map_err(|e| Error::io("rollout dump", e))?;
        }
    }
    Ok(())
}

pub fn read_rollouts(input: impl BufRead) -> Result<Vec<RolloutRecord>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line.map_err(|e| Error::io("rollout dump", e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Rebuilds the groups of `step` from dumped records, in dump order.
/// `prompt_of` supplies each problem's prompt.
pub fn batches_from_records(
    records: &[RolloutRecord],
    step: u64,
    prompt_of: impl Fn(u64) -> Option<Vec<TokenId>>,
) -> Result<Vec<GroupBatch>> {
    let mut groups: Vec<(u64, Vec<&RolloutRecord>)> = Vec::new();
    for r in records.iter().filter(|r| r.step == step) {
        match groups.last_mut() {
            Some((id, rs)) if *id == r.problem_id => rs.push(r),
            _ => groups.push((r.problem_id, vec![r])),
        }
    }
    groups
        .into_iter()
        .map(|(id, rs)| {
            let prompt = prompt_of(id).ok_or_else(|| Error::Load(format!("unknown problem {id}")))?;
            let trajectories = rs
                .iter()
                .map(|r| Trajectory {
                    problem_id: id,
                    tokens: r.tokens.clone(),
                    old_log_probs: r.old_logprobs.clone(),
                    reward: RewardRecord::new(r.accuracy == 1, r.format == 1),
                })
                .collect();
            let mut b = GroupBatch::new(id, prompt, trajectories)?;
            let adv: Option<Vec<f64>> = rs.iter().map(|r| r.advantage).collect();
            if let Some(a) = adv {
                let degenerate = a.iter().all(|&x| x == 0.0);
                b.set_advantages(a, degenerate)?;
            }
            Ok(b)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::policy::{enumerate_all_sequences, Policy, SnapshotRole, TabularPolicy};
    use crate::tasks::Problem;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < tol)
    }

    #[test]
    fn advantage_examples() {
        let (a, d) = compute_advantages(&[1.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(a, vec![1.0, 1.0, -1.0, -1.0]);
        assert!(!d);

        let (a, d) = compute_advantages(&[1.0; 4]).unwrap();
        assert_eq!(a, vec![0.0; 4]);
        assert!(d);

        let (a, _) = compute_advantages(&[1.2, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        // mean 0.2; population std sqrt((1.0^2 + 5 * 0.2^2) / 6)
        let pop = ((1.0f64 + 5.0 * 0.04) / 6.0).sqrt();
        assert!((pop - 0.4472135955).abs() < 1e-9);
        assert!((a[0] - 1.0 / pop).abs() < 1e-12);
        assert!((a[0] - 5f64.sqrt()).abs() < 1e-12);
        for x in &a[1..] {
            assert!((x + 0.2 / pop).abs() < 1e-12);
        }

        assert!(compute_advantages(&[1.0]).is_err());
        assert!(matches!(compute_advantages(&[1.0, f64::NAN]), Err(Error::Numeric(_))));
    }

    fn uniform_math() -> PolicySnapshot {
        PolicySnapshot::new(&TabularPolicy::zeros(math::SIZE, 1).into(), SnapshotRole::Old)
    }

    #[test]
    fn deterministic_policy_gives_identical_group() {
        let mut t = TabularPolicy::zeros(math::SIZE, 1);
        for ctx in [math::SEPARATOR, 3, math::BOX_OPEN, math::BOX_CLOSE] {
            let next = match ctx {
                math::SEPARATOR => math::BOX_OPEN,
                math::BOX_OPEN => 3,
                3 => math::BOX_CLOSE,
                _ => math::EOS,
            };
            t.row_mut(&[ctx])[next] = 100.0;
        }
        let snap = PolicySnapshot::new(&t.into(), SnapshotRole::Old);
        let p = Problem::parse(0, "1+2").unwrap();
        let b = collect_group(&snap, &p, 6, 0.9, 8, 1).unwrap();
        assert!(b.trajectories.iter().all(|x| x.tokens == b.trajectories[0].tokens));
        assert!(b.trajectories[0].reward.is_accurate());
        let mut b = b;
        b.assign_advantages().unwrap();
        assert!(b.degenerate);
    }

    #[test]
    fn collection_is_reproducible_and_parallel_safe() {
        let snap = uniform_math();
        let ps = crate::tasks::generate_problems(8, 1, 0).unwrap();
        let refs: Vec<&Problem> = ps.iter().collect();
        let seeds: Vec<u64> = (0..8).map(|i| derive_seed(42, i)).collect();
        let a = collect_groups(&snap, &refs, &seeds, 4, 0.9, 12, false).unwrap();
        let b = collect_groups(&snap, &refs, &seeds, 4, 0.9, 12, true).unwrap();
        assert_eq!(a, b);
        for batch in &a {
            assert_eq!(batch.size(), 4);
            for t in &batch.trajectories {
                assert!(t.old_log_probs.iter().all(|l| l.is_finite() && *l <= 0.0));
                assert!(close(&t.old_log_probs, &vec![(1.0f64 / 20.0).ln(); t.len()], 1e-12));
            }
        }
        assert!(collect_group(&snap, &ps[0], 1, 1.0, 4, 0).is_err());
    }

    /// A policy that can only say `[`, `1`, `2` or EOS, so accuracy
    /// on `1+1` has an enumerable probability.
    #[test]
    fn accuracy_rate_matches_enumeration() {
        let allowed = [math::BOX_OPEN, math::BOX_CLOSE, 2, math::EOS];
        let mut t = TabularPolicy::zeros(math::SIZE, 1);
        for row in 0..t.rows() {
            let r = &mut t.params_mut()[row * math::SIZE..(row + 1) * math::SIZE];
            for (tok, x) in r.iter_mut().enumerate() {
                *x = if allowed.contains(&tok) { 0.0 } else { -1e3 };
            }
        }
        let policy: Policy = t.into();
        let p = Problem::parse(0, "1+1").unwrap();
        let max_len = 4;
        let exact: f64 = enumerate_all_sequences(&policy, &p.prompt, math::EOS, max_len)
            .unwrap()
            .iter()
            .filter(|(s, _)| score_response(&p, s).is_accurate())
            .map(|(_, q)| q)
            .sum();
        assert!((exact - 0.25f64.powi(4)).abs() < 1e-12);
        let snap = PolicySnapshot::new(&policy, SnapshotRole::Old);
        let groups = 4000;
        let g = 6;
        let mut hits = 0;
        for s in 0..groups {
            let b = collect_group(&snap, &p, g, 1.0, max_len, s).unwrap();
            hits += b.trajectories.iter().filter(|t| t.reward.is_accurate()).count();
        }
        let n = (groups * g as u64) as f64;
        let sigma = (n * exact * (1.0 - exact)).sqrt();
        assert!((hits as f64 - n * exact).abs() < 3.0 * sigma, "{hits} vs {}", n * exact);
    }

    #[test]
    fn dump_round_trip() {
        let snap = uniform_math();
        let ps = crate::tasks::generate_problems(3, 2, 9).unwrap();
        let refs: Vec<&Problem> = ps.iter().collect();
        let batches = collect_groups(&snap, &refs, &[1, 2, 3], 3, 1.0, 10, false).unwrap();
        let mut buf = Vec::new();
        write_rollouts(&mut buf, 7, &batches).unwrap();
        let records = read_rollouts(buf.as_slice()).unwrap();
        assert_eq!(records.len(), 9);
        let back = batches_from_records(&records, 7, |id| ps.iter().find(|p| p.id == id).map(|p| p.prompt.clone())).unwrap();
        assert_eq!(back.len(), 3);
        for (x, y) in back.iter().zip(&batches) {
            assert_eq!(x.trajectories, y.trajectories);
            assert_eq!(x.advantages, y.advantages);
        }
    }

    proptest! {
        #[test]
        fn standardized(rewards in prop::collection::vec(-5.0f64..5.0, 2..12)) {
            let (a, d) = compute_advantages(&rewards).unwrap();
            if !d {
                let n = a.len() as f64;
                let mean = a.iter().sum::<f64>() / n;
                let std = (a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
                prop_assert!(mean.abs() < 1e-9);
                prop_assert!((std - 1.0).abs() < 1e-6);
            } else {
                prop_assert!(a.iter().all(|&x| x == 0.0));
            }
        }

        #[test]
        fn affine_invariance(rewards in prop::collection::vec(-5.0f64..5.0, 2..12), c in 0.1f64..10.0, shift in -10.0f64..10.0) {
            let (a, d) = compute_advantages(&rewards).unwrap();
            let moved: Vec<f64> = rewards.iter().map(|r| c * r + shift).collect();
            let (b, e) = compute_advantages(&moved).unwrap();
            if !d && !e {
                prop_assert!(close(&a, &b, 1e-9));
            }
        }
    }
}
