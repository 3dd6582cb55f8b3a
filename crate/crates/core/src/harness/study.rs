use std::fs;
use std::path::{Path, PathBuf};

use super::config::RunConfig;
use crate::metrics::{diversity_potential_study, StudyReport, PASS1_THRESHOLD};
use crate::policy::{load_checkpoint, Vocabulary};
use crate::rollout::derive_seed;
use crate::tasks::read_problems_jsonl;
use crate::{Error, Result};

/// Checkpoints of a run in training order: base, step-N by N, final.
pub fn study_checkpoints(run_dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let dir = run_dir.join("checkpoints");
    let mut steps = Vec::new();
    if dir.is_dir() {
        for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let path = entry.map_err(|e| Error::io(&dir, e))?.path();
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            if path.extension().is_some_and(|x| x == "json") {
                if let Some(n) = stem.strip_prefix("step-").and_then(|n| n.parse::<usize>().ok()) {
                    steps.push((n, stem, path));
                }
            }
        }
    }
    steps.sort();
    let mut out = Vec::new();
    let base = dir.join("base.json");
    if base.is_file() {
        out.push(("base".to_string(), base));
    }
    out.extend(steps.into_iter().map(|(_, label, path)| (label, path)));
    let last = dir.join("final.json");
    if last.is_file() {
        out.push(("final".to_string(), last));
    }
    Ok(out)
}

/// Evaluates the given checkpoints on the run's probe set and fits
/// Potential@k against Div-Equ. Writes `study.csv` and `study.json` into
/// the run directory. `checkpoints` defaults to [`study_checkpoints`].
pub fn run_study(run_dir: &Path, checkpoints: Option<Vec<(String, PathBuf)>>) -> Result<StudyReport> {
    let checkpoints = match checkpoints {
        Some(c) => c,
        None => study_checkpoints(run_dir)?,
    };
    if checkpoints.len() < 3 {
        return Err(Error::contract(format!(
            "the study needs at least 3 checkpoints, found {} under {}",
            checkpoints.len(),
            run_dir.display()
        )));
    }
    let cfg = RunConfig::load(&run_dir.join("config.toml"))?;
    let problems = read_problems_jsonl(&run_dir.join("probe.jsonl"))?;
    let vocab = Vocabulary::micro_math();
    let policies = checkpoints
        .iter()
        .map(|(label, path)| Ok((label.clone(), load_checkpoint(path, &vocab)?)))
        .collect::<Result<Vec<_>>>()?;
    let e = &cfg.eval;
    let report = diversity_potential_study(
        &policies,
        &problems,
        e.k,
        e.temperature,
        cfg.task.max_len,
        derive_seed(cfg.seed, 5),
        PASS1_THRESHOLD,
    )?;
    let write = |name: &str, text: String| {
        let p = run_dir.join(name);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))
    };
    write("study.csv", report.to_csv())?;
    write("study.json", serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}
