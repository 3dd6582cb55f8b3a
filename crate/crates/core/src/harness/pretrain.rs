use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::optim::AdamW;
use crate::autodiff::Tape;
use crate::policy::{BoundPolicy, Policy, TokenId};
use crate::rollout::derive_seed;
use crate::tasks::{generate_problems, problem_space, reference_solutions};
use crate::{Error, Result};

/// Worked (prompt, solution) pairs for the warm start.
pub fn warm_start_corpus(cfg: &RunConfig) -> Result<Vec<(Vec<TokenId>, Vec<TokenId>)>> {
    let d = cfg.task.difficulty;
    let n = (cfg.pretrain.problems as u64).min(problem_space(d)) as usize;
    let problems = generate_problems(n, d, derive_seed(cfg.seed, 0xC0_4B05))?;
    let mut corpus = Vec::new();
    for p in &problems {
        for s in reference_solutions(p) {
            corpus.push((p.prompt.clone(), s));
        }
    }
    Ok(corpus)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainLog {
    pub step: usize,
    /// Mean per-token negative log-likelihood of the batch.
    pub nll: f64,
}

/// Supervised maximum likelihood on the worked solutions. Deterministic
/// for a given config.
pub fn pretrain(policy: &mut Policy, cfg: &RunConfig) -> Result<Vec<PretrainLog>> {
    let pc = &cfg.pretrain;
    if pc.steps == 0 {
        return Ok(Vec::new());
    }
    let corpus = warm_start_corpus(cfg)?;
    let mut opt_cfg = cfg.optimizer.clone();
    opt_cfg.weight_decay = 0.0;
    let mut opt = AdamW::new(&opt_cfg, policy.num_params(), false);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0x9E_7A1));
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut cursor = order.len();
    let mut logs = Vec::with_capacity(pc.steps);
    for step in 0..pc.steps {
        let mut batch = Vec::with_capacity(pc.batch);
        while batch.len() < pc.batch {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }
        let (nll, grad) = {
            let mut tape = Tape::new();
            let bound = BoundPolicy::new(policy, &mut tape);
            let mut terms = Vec::with_capacity(batch.len());
            let mut tokens = 0usize;
            for &i in &batch {
                let (prompt, target) = &corpus[i];
                let lp = bound.token_log_probs(&mut tape, prompt, target)?;
                terms.push(tape.sum(lp));
                tokens += target.len();
            }
            let mut total = terms[0];
            for &t in &terms[1..] {
                total = tape.add(total, t)?;
            }
            let loss = tape.mul_const(total, -1.0 / tokens as f64);
            let nll = tape.item(loss);
            if !nll.is_finite() {
                return Err(Error::numeric(format!("warm-start loss is {nll} at step {step}")));
            }
            tape.backward(loss)?;
            (nll, bound.gradient(&tape))
        };
        opt.step(policy.params_mut(), &grad, pc.lr)?;
        logs.push(PretrainLog { step, nll });
    }
    Ok(logs)
}
