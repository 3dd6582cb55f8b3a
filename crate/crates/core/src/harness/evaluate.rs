use std::path::{Path, PathBuf};

use super::config::RunConfig;
use crate::metrics::{evaluate_policy, mean_token_entropy, write_eval_dump, EvalSample, MetricsReport};
use crate::policy::{load_checkpoint, Vocabulary};
use crate::rollout::derive_seed;
use crate::tasks::{read_problems_jsonl, Problem};
use crate::Result;

pub struct EvalOutcome {
    pub report: MetricsReport,
    pub samples: Vec<EvalSample>,
    pub dump: PathBuf,
}

/// Nearest `config.toml` in the checkpoint's directory or its ancestors.
pub fn find_run_config(ckpt: &Path) -> Option<PathBuf> {
    ckpt.ancestors().skip(1).map(|d| d.join("config.toml")).find(|p| p.is_file())
}

/// Evaluates a checkpoint: greedy pass plus `k` samples per problem.
///
/// Problems default to the run's `probe.jsonl` next to the config, or to
/// the probe split of the default config for a stray checkpoint. The dump
/// goes to `dump` or beside the checkpoint.
pub fn evaluate_checkpoint(
    ckpt: &Path,
    k: usize,
    temperature: f64,
    seed: u64,
    problems: Option<&Path>,
    dump: Option<&Path>,
    parallel: bool,
) -> Result<EvalOutcome> {
    let policy = load_checkpoint(ckpt, &Vocabulary::micro_math())?;
    let config_path = find_run_config(ckpt);
    let cfg = match &config_path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let problems: Vec<Problem> = match (problems, &config_path) {
        (Some(p), _) => read_problems_jsonl(p)?,
        (None, Some(c)) if c.with_file_name("probe.jsonl").is_file() => {
            read_problems_jsonl(&c.with_file_name("probe.jsonl"))?
        }
        _ => cfg.problem_split()?.probe,
    };
    let max_len = cfg.task.max_len;
    let samples = evaluate_policy(&policy, &problems, k, temperature, max_len, seed, parallel)?;
    let prompts: Vec<_> = problems.iter().map(|p| p.prompt.clone()).collect();
    let entropy = mean_token_entropy(&policy, &prompts, cfg.eval.entropy_budget, max_len, derive_seed(seed, 3))?;
    let report = MetricsReport::from_eval(&samples, Some(entropy))?;
    let dump = match dump {
        Some(d) => d.to_path_buf(),
        None => {
            let stem = ckpt.file_stem().and_then(|s| s.to_str()).unwrap_or("checkpoint");
            ckpt.with_file_name(format!("{stem}.eval-k{k}-t{temperature}-s{seed}.jsonl"))
        }
    };
    write_eval_dump(&samples, &dump)?;
    Ok(EvalOutcome { report, samples, dump })
}
