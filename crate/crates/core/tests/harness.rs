use std::fs;

use ctm_core::harness::metrics::log_to_jsonl;
use ctm_core::harness::tasks::{parse_tasks, to_jsonl, TaskError};
use ctm_core::harness::*;
use ctm_core::{Config, Model, WeightSource};

const TASKS50: &str = include_str!("fixtures/tasks50.jsonl");

fn quick_config() -> Config {
    let mut cfg = Config::default();
    cfg.ctm.max_slabs = 4;
    cfg
}

#[test]
fn missing_goal_on_line_three() {
    let good = TASKS50.lines().next().unwrap();
    let mut record: serde_json::Value = serde_json::from_str(good).unwrap();
    record.as_object_mut().unwrap().remove("goal");
    let bad = record.to_string();
    let text = format!("{good}\n{good}\n{bad}\n");
    match parse_tasks(&text) {
        Err(TaskError::SchemaViolation { line, field }) => assert_eq!((line, field.as_str()), (3, "goal")),
        other => panic!("unexpected {other:?}"),
    }
    assert!(matches!(parse_tasks("{\"id\":"), Err(TaskError::Parse { line: 1, .. })));
}

#[test]
fn load_tasks_preserves_order() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.jsonl");
    fs::write(&path, TASKS50).unwrap();
    let tasks = load_tasks(&path).unwrap();
    assert_eq!(tasks.len(), 50);
    assert!(tasks.iter().enumerate().all(|(i, t)| t.id == format!("synth-7-{i}")));
    assert!(load_tasks(&dir.path().join("missing.jsonl")).is_err());
}

#[test]
fn generator_is_deterministic_and_self_valid() {
    let a = to_jsonl(&gen_tasks(123, 1000));
    assert_eq!(a, to_jsonl(&gen_tasks(123, 1000)));
    let parsed = parse_tasks(&a).unwrap();
    assert_eq!(parsed.len(), 1000);
    assert_eq!(to_jsonl(&parsed), a);
    for t in &parsed {
        for s in &t.steps {
            for v in s.args.values() {
                if let ctm_core::router::ArgValue::Ref(name) = v {
                    assert!(t.context.contains(name));
                }
            }
        }
    }
    // The bundled fixture is exactly what the generator produces.
    assert_eq!(to_jsonl(&gen_tasks(7, 50)), TASKS50);
}

#[test]
fn metrics_replay_from_disk() {
    let tasks = &parse_tasks(TASKS50).unwrap()[..6];
    let model = Model::build(&quick_config(), 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (logs, report) = run_to_dir(tasks, &model, &EpisodeOptions::new(Policy::Ctm, 1), dir.path()).unwrap();
    let replayed = read_logs(&dir.path().join("logs")).unwrap();
    assert_eq!(replayed, logs);
    assert_eq!(compute_metrics(&replayed).unwrap(), report);
    let on_disk: MetricsReport = serde_json::from_str(&fs::read_to_string(dir.path().join("metrics.json")).unwrap()).unwrap();
    assert_eq!(on_disk, report);
    for log in &logs {
        assert!(log.steps_used <= log.budget_steps);
        assert_eq!(log.steps.len() as u32, log.steps_used);
        assert!(log.steps.iter().all(|s| s.ticks <= model.config.ctm.tick_budget()));
    }
}

#[test]
fn zero_weight_model_only_idles() {
    let cfg = Config { weights: WeightSource::Zero, ..quick_config() };
    let model = Model::build(&cfg, 0).unwrap();
    let tasks = &parse_tasks(TASKS50).unwrap()[..3];
    let logs = run_tasks(tasks, &model, &EpisodeOptions::new(Policy::Ctm, 0)).unwrap();
    for log in &logs {
        assert_eq!(log.outcome, Outcome::BudgetExhausted);
        assert!(log.steps.iter().all(|s| s.action == "noop" && s.fallback));
    }
    let m = compute_metrics(&logs).unwrap();
    assert_eq!((m.tsr, m.esr, m.ael), (0.0, 1.0, 20.0));
}

#[test]
fn logs_are_byte_stable() {
    let model = Model::build(&Config::default(), 8).unwrap();
    let task = &parse_tasks(TASKS50).unwrap()[4];
    let opts = EpisodeOptions::new(Policy::Ctm, 8);
    let a = log_to_jsonl(&run_episode(task, &model, &opts).unwrap());
    let b = log_to_jsonl(&run_episode(task, &model, &opts).unwrap());
    assert_eq!(a, b);
    let other = log_to_jsonl(&run_episode(task, &model, &EpisodeOptions::new(Policy::Ctm, 9)).unwrap());
    assert_ne!(a, other);
}

#[test]
fn invalid_config_is_rejected_before_running() {
    let mut model = Model::build(&quick_config(), 1).unwrap();
    model.config.router.gamma = 2.0;
    let task = &parse_tasks(TASKS50).unwrap()[0];
    assert!(run_episode(task, &model, &EpisodeOptions::new(Policy::Ctm, 1)).is_err());
}

#[test]
fn shipped_config_is_the_default() {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.json");
    let loaded = Config::load(&path).unwrap();
    assert_eq!(serde_json::to_value(&loaded).unwrap(), serde_json::to_value(Config::default()).unwrap());
}
