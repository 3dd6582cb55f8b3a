use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::optim::{learning_rate, AdamW};
use super::pretrain::pretrain;
use crate::autodiff::Tape;
use crate::metrics::{evaluate_policy, mean_token_entropy, pass_at_1, write_eval_dump, MetricsReport};
use crate::objective::{batch_objective, LossBreakdown};
use crate::policy::{math, save_checkpoint, BoundPolicy, Policy, PolicySnapshot, SnapshotRole, TokenId, Vocabulary};
use crate::rollout::{collect_groups, derive_seed, write_rollouts, GroupBatch};
use crate::tasks::{write_problems_jsonl, Problem};
use crate::{Error, Result};

/// Seed streams, kept apart so that e.g. changing the probe schedule never
/// shifts the rollouts.
mod stream {
    pub const PROMPTS: u64 = 1;
    pub const GROUPS: u64 = 2;
    pub const ENTROPY: u64 = 3;
    pub const EVAL: u64 = 4;
}

/// One row of `steplog.csv`. Values describe the policy before the step's
/// update; `probe_pass1` is present on probe steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub total: f64,
    pub surrogate: f64,
    pub kl: f64,
    pub diversity: f64,
    pub clip_fraction: f64,
    pub mean_ratio: f64,
    pub mean_entropy: f64,
    pub positive_fraction: f64,
    pub degenerate_fraction: f64,
    pub probe_pass1: Option<f64>,
    pub lr: f64,
}

const STEPLOG_HEADER: &str = "step,total,surrogate,kl,diversity,clip_fraction,mean_ratio,mean_entropy,positive_fraction,degenerate_fraction,probe_pass1,lr";

impl StepLog {
    fn new(step: usize, b: &LossBreakdown, groups: &[GroupBatch], probe_pass1: Option<f64>, lr: f64) -> Self {
        let degenerate = groups.iter().filter(|g| g.degenerate).count();
        Self {
            step,
            total: b.total,
            surrogate: b.surrogate,
            kl: b.kl,
            diversity: b.diversity,
            clip_fraction: b.clip_fraction,
            mean_ratio: b.mean_ratio,
            mean_entropy: b.mean_entropy,
            positive_fraction: b.positive_fraction,
            degenerate_fraction: degenerate as f64 / groups.len() as f64,
            probe_pass1,
            lr,
        }
    }

    pub fn csv_header() -> &'static str {
        STEPLOG_HEADER
    }

    /// Shortest round-trip formatting, so rows are bit-exact.
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.step,
            self.total,
            self.surrogate,
            self.kl,
            self.diversity,
            self.clip_fraction,
            self.mean_ratio,
            self.mean_entropy,
            self.positive_fraction,
            self.degenerate_fraction,
            self.probe_pass1.map(|p| p.to_string()).unwrap_or_default(),
            self.lr
        )
    }

    pub fn parse_csv_row(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 12 {
            return Err(Error::Load(format!("steplog row has {} fields, expected 12", f.len())));
        }
        let num = |i: usize| -> Result<f64> {
            f[i].parse().map_err(|_| Error::Load(format!("bad steplog value {:?}", f[i])))
        };
        Ok(Self {
            step: f[0].parse().map_err(|_| Error::Load(format!("bad step {:?}", f[0])))?,
            total: num(1)?,
            surrogate: num(2)?,
            kl: num(3)?,
            diversity: num(4)?,
            clip_fraction: num(5)?,
            mean_ratio: num(6)?,
            mean_entropy: num(7)?,
            positive_fraction: num(8)?,
            degenerate_fraction: num(9)?,
            probe_pass1: if f[10].is_empty() { None } else { Some(num(10)?) },
            lr: num(11)?,
        })
    }
}

pub fn read_steplog(path: &Path) -> Result<Vec<StepLog>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines().skip(1).filter(|l| !l.trim().is_empty()).map(StepLog::parse_csv_row).collect()
}

/// End-of-run numbers written to `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub steps: usize,
    /// Mean token entropy on train prompts before RL and after the last
    /// step: the quantity whose collapse RL is known for.
    pub initial_entropy: f64,
    pub final_entropy: f64,
    /// The same on the held-out probe prompts.
    pub initial_probe_entropy: f64,
    pub final_probe_entropy: f64,
    pub initial_probe_pass1: f64,
    pub final_probe_pass1: f64,
    /// Probe-set evaluation of the warm-started policy and of the final one,
    /// restricted to the configured metric set.
    pub base: serde_json::Map<String, serde_json::Value>,
    #[serde(rename = "final")]
    pub final_: serde_json::Map<String, serde_json::Value>,
}

pub struct TrainOutcome {
    pub run_dir: PathBuf,
    pub base: Policy,
    pub policy: Policy,
    pub log: Vec<StepLog>,
    pub summary: RunSummary,
}

/// Keeps only the metric names listed in the config.
pub fn select_metrics(report: &MetricsReport, names: &[String]) -> Result<serde_json::Map<String, serde_json::Value>> {
    let serde_json::Value::Object(all) = serde_json::to_value(report)? else {
        unreachable!("metrics report serializes to an object")
    };
    let mut out = serde_json::Map::new();
    for key in ["problems", "k"] {
        out.insert(key.into(), all[key].clone());
    }
    for n in names {
        if let Some(v) = all.get(n) {
            out.insert(n.clone(), v.clone());
        }
        if n == "div_equ" {
            out.insert("div_equ_excluded".into(), all["div_equ_excluded"].clone());
        }
    }
    Ok(out)
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn greedy_pass1(policy: &Policy, probe: &[Problem], max_len: usize) -> Result<f64> {
    let mut hits = 0usize;
    for p in probe {
        let tokens = policy.greedy_completion(&p.prompt, math::EOS, max_len)?;
        hits += usize::from(crate::tasks::score_response(p, &tokens).is_accurate());
    }
    Ok(hits as f64 / probe.len() as f64)
}

/// Runs warm start then RL and writes everything under the run directory.
/// With `deterministic` set every stage runs on one thread.
pub fn train(cfg: &RunConfig, deterministic: bool) -> Result<TrainOutcome> {
    cfg.validate()?;
    let vocab = Vocabulary::micro_math();
    let run_dir = cfg.run_dir();
    let ckpt_dir = run_dir.join("checkpoints");
    create_dir(&ckpt_dir)?;
    write_file(&run_dir.join("config.toml"), cfg.to_toml())?;
    let split = cfg.problem_split()?;
    write_problems_jsonl(&split.train, &run_dir.join("train.jsonl"))?;
    write_problems_jsonl(&split.probe, &run_dir.join("probe.jsonl"))?;

    let mut policy = cfg.initial_policy()?;
    let warm = pretrain(&mut policy, cfg)?;
    let mut csv = String::from("step,nll\n");
    for l in &warm {
        csv.push_str(&format!("{},{}\n", l.step, l.nll));
    }
    write_file(&run_dir.join("pretrain.csv"), csv)?;
    save_checkpoint(&policy, &vocab, &ckpt_dir.join("base.json"))?;
    let base = policy.clone();
    let reference = PolicySnapshot::new(&base, SnapshotRole::Ref);

    let t = &cfg.task;
    let s = &cfg.schedule;
    let e = &cfg.eval;
    let train_prompts: Vec<Vec<TokenId>> = split.train.iter().map(|p| p.prompt.clone()).collect();
    let probe_prompts: Vec<Vec<TokenId>> = split.probe.iter().map(|p| p.prompt.clone()).collect();
    let entropy_seed = derive_seed(cfg.seed, stream::ENTROPY);
    let entropy = |p: &Policy, prompts: &[Vec<TokenId>]| {
        mean_token_entropy(p, prompts, e.entropy_budget, t.max_len, entropy_seed)
    };
    let initial_entropy = entropy(&base, &train_prompts)?;
    let initial_probe_entropy = entropy(&base, &probe_prompts)?;
    let initial_probe_pass1 = greedy_pass1(&base, &split.probe, t.max_len)?;

    let mut opt = AdamW::new(&cfg.optimizer, policy.num_params(), true);
    let mut steplog = BufWriter::new(fs::File::create(run_dir.join("steplog.csv")).map_err(|e| Error::io(&run_dir, e))?);
    let mut timing = String::from("step,wall_ms\n");
    writeln!(steplog, "{STEPLOG_HEADER}").map_err(|e| Error::io(&run_dir, e))?;
    let rollout_path = run_dir.join("rollouts.jsonl");
    let mut rollouts = if cfg.io.dump_rollouts {
        Some(BufWriter::new(fs::File::create(&rollout_path).map_err(|e| Error::io(&rollout_path, e))?))
    } else {
        None
    };
    let mut log = Vec::with_capacity(s.steps);
    for step in 0..s.steps {
        let started = Instant::now();
        let old = PolicySnapshot::new(&policy, SnapshotRole::Old);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(derive_seed(cfg.seed, stream::PROMPTS), step as u64));
        let picks = sample(&mut rng, split.train.len(), s.prompts_per_step).into_vec();
        let problems: Vec<&Problem> = picks.iter().map(|&i| &split.train[i]).collect();
        let group_seed = derive_seed(derive_seed(cfg.seed, stream::GROUPS), step as u64);
        let seeds: Vec<u64> = (0..problems.len()).map(|j| derive_seed(group_seed, j as u64)).collect();
        let groups = collect_groups(&old, &problems, &seeds, s.group_size, s.temperature, t.max_len, !deterministic)?;
        if let Some(out) = rollouts.as_mut() {
            write_rollouts(out, step as u64, &groups)?;
        }
        let probe_pass1 =
            if step % e.probe_every == 0 { Some(greedy_pass1(&policy, &split.probe, t.max_len)?) } else { None };

        let (breakdown, grad) = {
            let mut tape = Tape::new();
            let theta = BoundPolicy::new(&policy, &mut tape);
            let obj = match batch_objective(&mut tape, &theta, &reference, &groups, &cfg.objective) {
                Ok(o) => o,
                Err(err @ Error::Numeric(_)) => {
                    let record = serde_json::json!({
                        "step": step,
                        "error": err.to_string(),
                        "groups": groups.iter().map(|g| g.records(step as u64)).collect::<Vec<_>>(),
                    });
                    write_file(&run_dir.join("failure.json"), serde_json::to_string_pretty(&record)?)?;
                    return Err(err);
                }
                Err(err) => return Err(err),
            };
            tape.backward(obj.total)?;
            (obj.breakdown, theta.gradient(&tape))
        };
        let lr = learning_rate(cfg.optimizer.schedule, cfg.optimizer.lr, step, s.steps);
        opt.step(policy.params_mut(), &grad, lr)?;

        let row = StepLog::new(step, &breakdown, &groups, probe_pass1, lr);
        writeln!(steplog, "{}", row.csv_row()).map_err(|e| Error::io(&run_dir, e))?;
        timing.push_str(&format!("{step},{}\n", started.elapsed().as_secs_f64() * 1e3));
        log.push(row);
        let done = step + 1;
        if e.checkpoint_every > 0 && done % e.checkpoint_every == 0 {
            save_checkpoint(&policy, &vocab, &ckpt_dir.join(format!("step-{done}.json")))?;
        }
    }
    steplog.flush().map_err(|e| Error::io(&run_dir, e))?;
    if let Some(mut out) = rollouts {
        out.flush().map_err(|e| Error::io(&rollout_path, e))?;
    }
    write_file(&run_dir.join("timing.csv"), timing)?;
    save_checkpoint(&policy, &vocab, &ckpt_dir.join("final.json"))?;

    let final_entropy = entropy(&policy, &train_prompts)?;
    let final_probe_entropy = entropy(&policy, &probe_prompts)?;
    let final_probe_pass1 = greedy_pass1(&policy, &split.probe, t.max_len)?;
    let eval_seed = derive_seed(cfg.seed, stream::EVAL);
    let mut reports = Vec::new();
    for (name, p, entropy) in [("base", &base, initial_probe_entropy), ("final", &policy, final_probe_entropy)] {
        let samples = evaluate_policy(p, &split.probe, e.k, e.temperature, t.max_len, eval_seed, !deterministic)?;
        if cfg.io.dump_eval {
            let dir = run_dir.join("eval");
            create_dir(&dir)?;
            write_eval_dump(&samples, &dir.join(format!("{name}.jsonl")))?;
        }
        debug_assert_eq!(pass_at_1(&samples)?, greedy_pass1(p, &split.probe, t.max_len)?);
        reports.push(select_metrics(&MetricsReport::from_eval(&samples, Some(entropy))?, &e.metrics)?);
    }
    let final_ = reports.pop().expect("two reports");
    let base_report = reports.pop().expect("two reports");
    let summary = RunSummary {
        steps: s.steps,
        initial_entropy,
        final_entropy,
        initial_probe_entropy,
        final_probe_entropy,
        initial_probe_pass1,
        final_probe_pass1,
        base: base_report,
        final_,
    };
    write_file(&run_dir.join("metrics.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(TrainOutcome { run_dir, base, policy, log, summary })
}
