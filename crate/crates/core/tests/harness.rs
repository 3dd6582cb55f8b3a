use std::fs;
use std::path::Path;

use divpo::autodiff::Tape;
use divpo::harness::{evaluate_checkpoint, read_steplog, run_study, study_checkpoints, train, RunConfig};
use divpo::metrics::report_from_dump;
use divpo::objective::{batch_objective, Gating};
use divpo::policy::{load_checkpoint, BoundPolicy, PolicySnapshot, SnapshotRole, Vocabulary};
use divpo::rollout::{batches_from_records, read_rollouts};
use divpo::tasks::read_problems_jsonl;
use divpo::Error;

fn tiny(out: &Path) -> RunConfig {
    let mut c = RunConfig::default();
    c.task.train_problems = 40;
    c.task.probe_problems = 8;
    c.task.max_len = 12;
    c.policy.embed_dim = 8;
    c.policy.window = 6;
    c.policy.hidden = 16;
    c.pretrain.steps = 40;
    c.pretrain.batch = 8;
    c.schedule.steps = 6;
    c.schedule.prompts_per_step = 3;
    c.schedule.group_size = 4;
    c.eval.k = 3;
    c.eval.probe_every = 2;
    c.eval.checkpoint_every = 1;
    c.eval.entropy_budget = 16;
    c.optimizer.lr = 1e-2;
    c.io.out_dir = out.to_path_buf();
    c
}

fn read(p: &Path) -> Vec<u8> {
    fs::read(p).unwrap()
}

#[test]
fn deterministic_runs_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = train(&tiny(a.path()), true).unwrap();
    let rb = train(&tiny(b.path()), true).unwrap();
    for f in ["steplog.csv", "checkpoints/final.json", "rollouts.jsonl", "metrics.json"] {
        assert_eq!(read(&ra.run_dir.join(f)), read(&rb.run_dir.join(f)), "{f}");
    }
    assert_eq!(ra.log, read_steplog(&ra.run_dir.join("steplog.csv")).unwrap());
}

#[test]
fn threaded_collection_matches_serial() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = train(&tiny(a.path()), true).unwrap();
    let rb = train(&tiny(b.path()), false).unwrap();
    assert_eq!(read(&ra.run_dir.join("steplog.csv")), read(&rb.run_dir.join("steplog.csv")));
}

#[test]
fn logged_objective_recomputes_from_dumps() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let run = train(&cfg, true).unwrap();
    let vocab = Vocabulary::micro_math();
    let ckpts = run.run_dir.join("checkpoints");
    let base = load_checkpoint(&ckpts.join("base.json"), &vocab).unwrap();
    let reference = PolicySnapshot::new(&base, SnapshotRole::Ref);
    let train_set = read_problems_jsonl(&run.run_dir.join("train.jsonl")).unwrap();
    let text = fs::read(run.run_dir.join("rollouts.jsonl")).unwrap();
    let records = read_rollouts(text.as_slice()).unwrap();
    let log = read_steplog(&run.run_dir.join("steplog.csv")).unwrap();
    assert_eq!(log.len(), cfg.schedule.steps);
    for (i, row) in log.iter().enumerate() {
        assert_eq!(row.step, i);
        assert!(row.mean_entropy >= 0.0 && row.mean_entropy <= (20f64).ln());
        let name = if i == 0 { "base.json".to_string() } else { format!("step-{i}.json") };
        let theta = load_checkpoint(&ckpts.join(name), &vocab).unwrap();
        let groups = batches_from_records(&records, i as u64, |id| {
            train_set.iter().find(|p| p.id == id).map(|p| p.prompt.clone())
        })
        .unwrap();
        let mut tape = Tape::new();
        let bound = BoundPolicy::new(&theta, &mut tape);
        let obj = batch_objective(&mut tape, &bound, &reference, &groups, &cfg.objective).unwrap();
        assert!((obj.breakdown.total - row.total).abs() < 1e-9, "step {i}: {} vs {}", obj.breakdown.total, row.total);
    }
}

#[test]
fn diversity_weight_changes_only_objective_at_step_zero() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mut c0 = tiny(a.path());
    c0.objective.lambda = 0.0;
    let mut c1 = tiny(b.path());
    c1.objective.lambda = 0.05;
    c1.objective.gating = Gating::AllSamples;
    let r0 = train(&c0, true).unwrap();
    let r1 = train(&c1, true).unwrap();
    let (x, y) = (&r0.log[0], &r1.log[0]);
    assert_ne!(x.total, y.total);
    let mut y = y.clone();
    y.total = x.total;
    y.diversity = x.diversity;
    assert_eq!(x, &y);
    assert_eq!(r0.base, r1.base);
}

#[test]
fn zero_lambda_ignores_gating() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mut c0 = tiny(a.path());
    c0.objective.lambda = 0.0;
    let mut c1 = c0.clone();
    c1.objective.gating = Gating::Off;
    c1.io.out_dir = b.path().to_path_buf();
    let r0 = train(&c0, true).unwrap();
    let r1 = train(&c1, true).unwrap();
    assert_eq!(r0.policy, r1.policy);
    assert_eq!(read(&r0.run_dir.join("checkpoints/final.json")), read(&r1.run_dir.join("checkpoints/final.json")));
}

#[test]
fn zero_steps_keeps_the_warm_start() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = tiny(dir.path());
    c.schedule.steps = 0;
    let run = train(&c, true).unwrap();
    assert_eq!(run.policy, run.base);
    let ckpts = run.run_dir.join("checkpoints");
    assert_eq!(read(&ckpts.join("base.json")), read(&ckpts.join("final.json")));
    assert!(run.log.is_empty());
    assert_eq!(run.summary.initial_entropy, run.summary.final_entropy);
}

#[test]
fn evaluation_is_reproducible_and_k1_matches_samples() {
    let dir = tempfile::tempdir().unwrap();
    let run = train(&tiny(dir.path()), true).unwrap();
    let ckpt = run.run_dir.join("checkpoints/final.json");
    let a = evaluate_checkpoint(&ckpt, 4, 0.9, 3, None, None, true).unwrap();
    let b = evaluate_checkpoint(&ckpt, 4, 0.9, 3, None, None, false).unwrap();
    assert_eq!(a.report, b.report);
    assert_eq!(read(&a.dump), read(&b.dump));
    assert_eq!(a.samples.len(), 8);

    let one = evaluate_checkpoint(&ckpt, 1, 0.9, 3, None, Some(&dir.path().join("k1.jsonl")), true).unwrap();
    let sampled = one.samples.iter().map(|s| f64::from(s.samples[0].accuracy)).sum::<f64>() / 8.0;
    assert_eq!(one.report.passk, sampled);
    assert_eq!(report_from_dump(&one.dump).unwrap().passk, sampled);
}

#[test]
fn evaluation_rejects_foreign_vocabulary() {
    let dir = tempfile::tempdir().unwrap();
    let run = train(&tiny(dir.path()), true).unwrap();
    let path = run.run_dir.join("checkpoints/final.json");
    let text = fs::read_to_string(&path).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["vocab_hash"] = "00".into();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, v.to_string()).unwrap();
    assert!(matches!(evaluate_checkpoint(&bad, 2, 1.0, 0, None, None, true), Err(Error::Load(_))));
}

#[test]
fn study_over_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = tiny(dir.path());
    c.eval.checkpoint_every = 3;
    let run = train(&c, true).unwrap();
    let found = study_checkpoints(&run.run_dir).unwrap();
    let labels: Vec<&str> = found.iter().map(|(l, _)| l.as_str()).collect();
    assert_eq!(labels, ["base", "step-3", "step-6", "final"]);

    let three = vec![found[0].clone(), found[1].clone(), found[3].clone()];
    assert_eq!(run_study(&run.run_dir, Some(three)).unwrap().rows.len(), 3);
    assert!(run.run_dir.join("study.csv").is_file() && run.run_dir.join("study.json").is_file());

    let dup = vec![found[3].clone(), found[3].clone(), found[0].clone()];
    let r = run_study(&run.run_dir, Some(dup)).unwrap();
    let strip = |i: usize| (r.rows[i].pass1, r.rows[i].div_equ, r.rows[i].potential_k);
    assert_eq!(strip(0), strip(1));

    let two = vec![found[0].clone(), found[3].clone()];
    assert!(matches!(run_study(&run.run_dir, Some(two)), Err(Error::Contract(_))));
}

#[test]
fn rollout_dump_feeds_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let run = train(&tiny(dir.path()), true).unwrap();
    let r = report_from_dump(&run.run_dir.join("rollouts.jsonl")).unwrap();
    assert_eq!((r.problems, r.k), (6 * 3, 4));
    assert_eq!(r.pass1, None);
}
