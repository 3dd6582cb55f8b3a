use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::objective::ObjectiveConfig;
use crate::policy::{math, NeuralDims, NeuralPolicy, Policy, TabularPolicy};
use crate::tasks::{generate_problems, problem_space, Problem, DIFFICULTIES};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub difficulty: usize,
    /// Problems the RL loop draws prompts from.
    pub train_problems: usize,
    /// Held-out problems for greedy probes and evaluation.
    pub probe_problems: usize,
    pub max_len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Tabular,
    Neural,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub backend: BackendKind,
    /// Context length of the tabular backend.
    pub order: usize,
    pub embed_dim: usize,
    pub window: usize,
    pub hidden: usize,
    pub init_scale: f64,
}

/// Supervised warm start on worked solutions before RL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    /// Largest problem set to draw worked solutions from; the whole space
    /// when it is smaller.
    pub problems: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adamw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub schedule: LrSchedule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub prompts_per_step: usize,
    pub group_size: usize,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub k: usize,
    pub temperature: f64,
    /// Greedy probe interval in steps.
    pub probe_every: usize,
    /// Checkpoint interval in steps; 0 keeps only the final checkpoint.
    pub checkpoint_every: usize,
    /// Completions sampled for each mean-entropy measurement.
    pub entropy_budget: usize,
    /// Metrics reported at the end of a run, from pass1, passk,
    /// potential_k, div_equ, div_ngram, div_selfbleu, mean_entropy.
    pub metrics: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IoConfig {
    pub out_dir: PathBuf,
    pub dump_rollouts: bool,
    pub dump_eval: bool,
}

/// Complete description of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub task: TaskConfig,
    pub policy: PolicyConfig,
    pub pretrain: PretrainConfig,
    pub objective: ObjectiveConfig,
    pub optimizer: OptimizerConfig,
    pub schedule: ScheduleConfig,
    pub eval: EvalConfig,
    pub io: IoConfig,
}

pub const METRIC_NAMES: [&str; 7] =
    ["pass1", "passk", "potential_k", "div_equ", "div_ngram", "div_selfbleu", "mean_entropy"];

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            task: TaskConfig { difficulty: 1, train_problems: 236, probe_problems: 64, max_len: 16 },
            policy: PolicyConfig {
                backend: BackendKind::Neural,
                order: 3,
                embed_dim: 16,
                window: 8,
                hidden: 64,
                init_scale: 0.08,
            },
            pretrain: PretrainConfig { steps: 1000, batch: 32, lr: 3e-3, problems: 2000 },
            objective: ObjectiveConfig::default(),
            optimizer: OptimizerConfig {
                kind: OptimizerKind::Adamw,
                lr: 3e-3,
                weight_decay: 0.01,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
                schedule: LrSchedule::Constant,
            },
            schedule: ScheduleConfig { steps: 300, prompts_per_step: 32, group_size: 6, temperature: 0.9 },
            eval: EvalConfig {
                k: 8,
                temperature: 0.9,
                probe_every: 10,
                checkpoint_every: 100,
                entropy_budget: 256,
                metrics: METRIC_NAMES.iter().map(|s| s.to_string()).collect(),
            },
            io: IoConfig { out_dir: PathBuf::from("runs"), dump_rollouts: true, dump_eval: true },
        }
    }
}

impl RunConfig {
    /// Named starting points: `toy` (the default) and `reference`, the
    /// large-model hyperparameters (lr 3e-6 with cosine decay, β 1e-4,
    /// λ 0.01, temperature 0.9, G 6).
    pub fn preset(name: &str) -> Result<Self> {
        let mut c = Self::default();
        match name {
            "toy" => {}
            "reference" => {
                c.optimizer.lr = 3e-6;
                c.optimizer.schedule = LrSchedule::Cosine;
                c.objective.beta = 1e-4;
                c.objective.lambda = 0.01;
                c.schedule.temperature = 0.9;
                c.schedule.group_size = 6;
            }
            other => return Err(Error::Config(format!("unknown preset {other:?}"))),
        }
        Ok(c)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config always renders as TOML")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let t = &self.task;
        if !DIFFICULTIES.contains(&t.difficulty) {
            return bad(format!("task.difficulty must be 1, 2 or 3, got {}", t.difficulty));
        }
        if t.train_problems == 0 || t.probe_problems == 0 {
            return bad("task.train_problems and task.probe_problems must be positive".into());
        }
        let space = problem_space(t.difficulty);
        if (t.train_problems + t.probe_problems) as u64 > space {
            return bad(format!(
                "train and probe problems ({}) exceed the {space} distinct difficulty-{} problems",
                t.train_problems + t.probe_problems,
                t.difficulty
            ));
        }
        if t.max_len == 0 {
            return bad("task.max_len must be positive".into());
        }
        let p = &self.policy;
        if p.backend == BackendKind::Neural && (p.embed_dim == 0 || p.window == 0 || p.hidden == 0) {
            return bad("policy dimensions must be positive".into());
        }
        if p.backend == BackendKind::Tabular && p.order > 4 {
            return bad(format!("policy.order {} makes the table too large (max 4)", p.order));
        }
        if !(p.init_scale >= 0.0 && p.init_scale.is_finite()) {
            return bad("policy.init_scale must be finite and non-negative".into());
        }
        if self.pretrain.steps > 0 && (self.pretrain.batch == 0 || !(self.pretrain.lr > 0.0)) {
            return bad("pretrain.batch and pretrain.lr must be positive".into());
        }
        self.objective.validate()?;
        let o = &self.optimizer;
        if !(o.lr >= 0.0 && o.weight_decay >= 0.0 && o.eps > 0.0) {
            return bad("optimizer lr, weight_decay and eps must be non-negative (eps positive)".into());
        }
        if !((0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2)) {
            return bad("optimizer betas must lie in [0, 1)".into());
        }
        let s = &self.schedule;
        if s.group_size < 2 {
            return bad(format!("schedule.group_size must be at least 2, got {}", s.group_size));
        }
        if s.prompts_per_step == 0 || s.prompts_per_step > t.train_problems {
            return bad("schedule.prompts_per_step must be between 1 and task.train_problems".into());
        }
        if !(s.temperature > 0.0) || !(self.eval.temperature > 0.0) {
            return bad("temperatures must be positive".into());
        }
        let e = &self.eval;
        if e.k == 0 || e.probe_every == 0 || e.entropy_budget == 0 {
            return bad("eval.k, eval.probe_every and eval.entropy_budget must be positive".into());
        }
        if let Some(m) = e.metrics.iter().find(|m| !METRIC_NAMES.contains(&m.as_str())) {
            return bad(format!("unknown metric {m:?}"));
        }
        Ok(())
    }

    /// First 12 hex digits of the SHA-256 of the config rendered with
    /// seed 0 and an empty output directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.seed = 0;
        c.io.out_dir = PathBuf::new();
        let digest = Sha256::digest(c.to_toml().as_bytes());
        hex::encode(digest)[..12].to_string()
    }

    pub fn run_dir(&self) -> PathBuf {
        self.io.out_dir.join(format!("run-{}-s{}", self.hash(), self.seed))
    }

    pub fn initial_policy(&self) -> Result<Policy> {
        let p = &self.policy;
        Ok(match p.backend {
            BackendKind::Tabular => TabularPolicy::random(math::SIZE, p.order, p.init_scale, self.seed).into(),
            BackendKind::Neural => {
                let dims = NeuralDims { embed_dim: p.embed_dim, window: p.window, hidden: p.hidden };
                NeuralPolicy::new(math::SIZE, math::BOS, dims, p.init_scale, self.seed)?.into()
            }
        })
    }

    /// Disjoint held-out probe set and RL training set. The split depends
    /// only on the task section, not on the run seed.
    pub fn problem_split(&self) -> Result<ProblemSplit> {
        let t = &self.task;
        let all = generate_problems(t.train_problems + t.probe_problems, t.difficulty, SPLIT_SEED)?;
        let (probe, train) = all.split_at(t.probe_problems);
        Ok(ProblemSplit { train: train.to_vec(), probe: probe.to_vec() })
    }
}

const SPLIT_SEED: u64 = 0x5eed;

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSplit {
    pub train: Vec<Problem>,
    pub probe: Vec<Problem>,
}
