use std::fs;
use std::path::{Path, PathBuf};

use wellness_eval::llm::{ReplayTransport, TranscriptStore};
use wellness_eval::modeling::PredictionRecord;
use wellness_eval::orchestrate::{
    export_predictions, import_predictions, load_dataset, run_experiment, run_llm_experiment, ExperimentConfig,
    ModelKind, OrchestrateError, FAILURE_FILE,
};
use wellness_eval::schema::{LabelVector, TaskKind};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn config(out: &Path, extra: &str) -> ExperimentConfig {
    let base = format!(
        "seeds = [200, 345]\nepochs = 3\nlearning_rate = 0.01\noutput_dir = {:?}\n{extra}\n",
        out.display().to_string()
    );
    // Small model sections go last so `extra` can still add top-level keys.
    let toml = format!("{base}[model]\nvocab_size = 512\ndims = 16\nhidden = 16\nmax_length = 32\n");
    ExperimentConfig::from_toml_str(&toml, &[]).unwrap()
}

#[test]
fn export_then_import_reproduces_metric_rows() {
    let dir = tempfile::tempdir().unwrap();
    let internal = config(dir.path(), "loss = \"gl\"\n[dataset]\nsamples = 100");
    let first = run_experiment(&internal).unwrap();

    let mut imported = internal.clone();
    imported.model.kind = ModelKind::Imported;
    imported.model.predictions = Some(first.run_dir.clone());
    let second = run_experiment(&imported).unwrap();

    assert_eq!(first.report.rows.len(), 8);
    assert_eq!(first.report.rows.len(), second.report.rows.len());
    for (a, b) in first.report.rows.iter().zip(&second.report.rows) {
        assert_eq!((a.seed, a.reservation, a.kept, a.abstained), (b.seed, b.reservation, b.kept, b.abstained));
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(b.model, "imported");
    }
}

#[test]
fn import_of_well_formed_dump() {
    let dir = tempfile::tempdir().unwrap();
    let records: Vec<PredictionRecord> = (0..10)
        .map(|i| PredictionRecord {
            sample_id: format!("p{i}"),
            task: TaskKind::MultiLabel,
            probs: vec![0.1 * i as f64, 0.5, 0.9],
            reservation: None,
            truncated: i == 3,
        })
        .collect();
    export_predictions(dir.path(), &records, None).unwrap();
    let back = import_predictions(dir.path(), 3, TaskKind::MultiLabel).unwrap();
    assert_eq!(back.records, records);
    let err = import_predictions(dir.path(), 4, TaskKind::MultiLabel).unwrap_err();
    let OrchestrateError::Import { problems } = err else { panic!("expected import error") };
    assert_eq!(problems.len(), 10);
    assert!(problems[0].starts_with("p0:"));
}

#[test]
fn multiwd_file_is_merged_to_the_configured_schema() {
    let dir = tempfile::tempdir().unwrap();
    let path = fixture("multiwd_small.csv");
    let cfg = config(
        dir.path(),
        &format!("[dataset]\nkind = \"multiwd\"\npath = {:?}\nlabel_count = 4", path.display().to_string()),
    );
    let posts = load_dataset(&cfg).unwrap();
    assert_eq!(posts.len(), 40);
    assert!(posts.iter().all(|p| matches!(&p.gold, LabelVector::MultiLabel { values } if values.len() == 4)));
    let summary = run_experiment(&cfg).unwrap();
    // Sigmoid cross-entropy has no reservation score: one level per seed.
    assert_eq!(summary.report.rows.len(), 2);
    assert!(summary.report.rows.iter().all(|r| r.label_count == 4 && r.ao_score.is_none()));
}

#[test]
fn unknown_dataset_is_rejected_before_any_output() {
    let dir = tempfile::tempdir().unwrap();
    let toml = format!("output_dir = {:?}\n[dataset]\nkind = \"reddit\"", dir.path().join("out").display().to_string());
    let err = ExperimentConfig::from_toml_str(&toml, &[]).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(!dir.path().join("out").exists());
}

#[test]
fn stage_failure_leaves_a_failure_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("broken.csv");
    fs::write(&bad, "text,label,explanation\nhello there,7,hello\n").unwrap();
    let cfg = config(
        dir.path(),
        &format!("[dataset]\nkind = \"wellxplain\"\npath = {:?}", bad.display().to_string()),
    );
    let err = run_experiment(&cfg).unwrap_err();
    assert_eq!(err.exit_code(), 1);
    let run_dir = dir.path().join("runs").join(&cfg.config_hash()[..16]);
    let failure: serde_json::Value = serde_json::from_str(&fs::read_to_string(run_dir.join(FAILURE_FILE)).unwrap()).unwrap();
    assert_eq!(failure["stage"], "load");
}

#[test]
fn llm_replay_run_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        dir.path(),
        &format!("[dataset]\nkind = \"wellxplain\"\npath = {:?}", fixture("llm_gold.csv").display().to_string()),
    );
    let store = TranscriptStore::new(fixture("llm_transcript.jsonl"));
    let mut reports = Vec::new();
    for _ in 0..2 {
        let mut transport = ReplayTransport::from_store(&store).unwrap();
        let summary = run_llm_experiment(&cfg, &mut transport).unwrap();
        assert_eq!(summary.report.rows.len(), 2);
        assert!(summary.report.rows.iter().all(|r| r.reservation == 1.0 && r.avg_rank.is_none()));
        reports.push(fs::read(summary.run_dir.join("report.md")).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn llm_replay_miss_is_a_provider_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "");
    let mut transport = ReplayTransport::default();
    let err = run_llm_experiment(&cfg, &mut transport).unwrap_err();
    assert_eq!(err.exit_code(), 3, "{err}");
}
