use std::collections::HashMap;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use super::config::{DatasetKind, ExperimentConfig, ModelKind};
use super::import::{export_predictions, import_predictions};
use super::report::{render_report, EvaluationReport, ReportFormat, ReportRow};
use super::OrchestrateError;
use crate::abstention::selective_evaluate;
use crate::attention::{fidelity_report, AttentionRecord, FidelityResult};
use crate::ingest::{load_multiwd, load_wellxplain, split, synthetic_keyword_posts, AnnotatedPost, Span};
use crate::llm::{evaluate_llm, run_llm, ChatTransport};
use crate::modeling::{
    predict, reference_encoder, train, ClassifierHead, EncoderAdapter, HeadConfig, PredictionRecord,
    ReferenceEncoderConfig, TrainConfig,
};
use crate::schema::{merge_labels, schema_for, LabelVector, TaskKind};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FAILURE_FILE: &str = "failure.json";

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub run_dir: PathBuf,
    pub config_hash: String,
    pub report: EvaluationReport,
    /// Every file written, relative to `run_dir`, sorted.
    pub files: Vec<String>,
}

fn stage<T, E: Display>(name: &str, r: Result<T, E>) -> Result<T, OrchestrateError> {
    r.map_err(|e| OrchestrateError::Stage { stage: name.into(), message: e.to_string(), provider: false })
}

/// Tracks every file written under the run directory.
struct OutDir {
    root: PathBuf,
    files: Vec<String>,
}

impl OutDir {
    fn text(&mut self, rel: &str, content: &str) -> Result<(), OrchestrateError> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| OrchestrateError::io(parent, e))?;
        }
        fs::write(&path, content).map_err(|e| OrchestrateError::io(&path, e))?;
        self.files.push(rel.to_string());
        Ok(())
    }

    fn json(&mut self, rel: &str, value: &impl Serialize) -> Result<(), OrchestrateError> {
        let mut s = serde_json::to_string_pretty(value).map_err(|e| OrchestrateError::io(&self.root.join(rel), e))?;
        s.push('\n');
        self.text(rel, &s)
    }

    fn jsonl<T: Serialize>(&mut self, rel: &str, items: &[T]) -> Result<(), OrchestrateError> {
        let mut s = String::new();
        for it in items {
            s.push_str(&serde_json::to_string(it).map_err(|e| OrchestrateError::io(&self.root.join(rel), e))?);
            s.push('\n');
        }
        self.text(rel, &s)
    }
}

/// Loads the configured corpus with gold labels expressed over the
/// configured schema. Multi-class data is used as is.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Vec<AnnotatedPost>, OrchestrateError> {
    let d = &cfg.dataset;
    let posts = match d.kind {
        DatasetKind::Multiwd => stage("load", load_multiwd(d.path.as_ref().expect("validated")))?,
        DatasetKind::Wellxplain => stage("load", load_wellxplain(d.path.as_ref().expect("validated")))?,
        DatasetKind::Synthetic => synthetic_keyword_posts(d.samples, d.task_kind(), d.generator_seed),
    };
    if d.task_kind() == TaskKind::MultiClass {
        return Ok(posts);
    }
    let schema = stage("merge", schema_for(d.resolved_label_count()))?;
    posts
        .into_iter()
        .map(|mut p| {
            p.gold = stage("merge", merge_labels(&p.gold, &schema))?;
            Ok(p)
        })
        .collect()
}

fn select(by_id: &HashMap<&str, &AnnotatedPost>, ids: &[String]) -> Vec<AnnotatedPost> {
    ids.iter().map(|id| by_id[id.as_str()].clone()).collect()
}

fn gold_maps(posts: &[AnnotatedPost], ids: &[&str]) -> Result<(HashMap<String, LabelVector>, HashMap<String, Vec<Span>>), String> {
    let by_id: HashMap<&str, &AnnotatedPost> = posts.iter().map(|p| (p.id.as_str(), p)).collect();
    let mut labels = HashMap::new();
    let mut spans = HashMap::new();
    for id in ids {
        let p = by_id.get(id).ok_or_else(|| format!("prediction for unknown sample {id}"))?;
        labels.insert(id.to_string(), p.gold.clone());
        spans.insert(id.to_string(), p.spans.clone());
    }
    Ok((labels, spans))
}

/// Prepares `runs/<prefix><hash>` fresh: a previous run of the same
/// config is replaced so no stale files survive.
fn fresh_run_dir(cfg: &ExperimentConfig, prefix: &str) -> Result<(String, PathBuf), OrchestrateError> {
    let hash = cfg.config_hash();
    let dir = cfg.output_dir.join("runs").join(format!("{prefix}{}", &hash[..16]));
    if dir.exists() {
        fs::remove_dir_all(&dir).map_err(|e| OrchestrateError::io(&dir, e))?;
    }
    fs::create_dir_all(&dir).map_err(|e| OrchestrateError::io(&dir, e))?;
    Ok((hash, dir))
}

fn record_failure(dir: &Path, hash: &str, err: &OrchestrateError) {
    let stage = match err {
        OrchestrateError::Stage { stage, .. } => stage.as_str(),
        OrchestrateError::Import { .. } => "import",
        OrchestrateError::Report(_) => "report",
        _ => "io",
    };
    let body = json!({ "config_hash": hash, "stage": stage, "error": err.to_string() });
    let _ = fs::write(dir.join(FAILURE_FILE), format!("{body:#}\n"));
}

fn finish(mut out: OutDir, cfg: &ExperimentConfig, hash: &str, kind: &str, rows: Vec<ReportRow>) -> Result<RunSummary, OrchestrateError> {
    let report = EvaluationReport::from_rows(cfg.averaging, rows);
    out.json("report.json", &report)?;
    out.text("report.md", &render_report(&report, ReportFormat::Markdown)?)?;
    out.text("report.csv", &render_report(&report, ReportFormat::Csv)?)?;
    out.text("config.toml", &cfg.to_toml()?)?;
    out.files.sort();
    let manifest = json!({
        "name": cfg.name,
        "kind": kind,
        "config_hash": hash,
        "seeds": cfg.seeds,
        "version": env!("CARGO_PKG_VERSION"),
        "files": out.files,
    });
    out.json(MANIFEST_FILE, &manifest)?;
    let mut files = out.files;
    files.sort();
    Ok(RunSummary { run_dir: out.root, config_hash: hash.to_string(), report, files })
}

/// Trains (or imports) and evaluates once per seed, then writes the
/// report. On a stage failure `failure.json` names the stage.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunSummary, OrchestrateError> {
    cfg.validate()?;
    let (hash, dir) = fresh_run_dir(cfg, "")?;
    let mut out = OutDir { root: dir.clone(), files: vec![] };
    let result = model_run(cfg, &hash, &mut out).and_then(|rows| finish(out, cfg, &hash, "model", rows));
    if let Err(e) = &result {
        record_failure(&dir, &hash, e);
    }
    result
}

struct SeedOutput {
    records: Vec<PredictionRecord>,
    attention: Option<Vec<AttentionRecord>>,
}

fn train_reference(cfg: &ExperimentConfig, seed: u64, train_posts: &[AnnotatedPost], test_posts: &[AnnotatedPost], out: &mut OutDir) -> Result<SeedOutput, OrchestrateError> {
    let m = &cfg.model;
    let labels = cfg.dataset.resolved_label_count();
    let mut encoder = stage(
        "train",
        reference_encoder(ReferenceEncoderConfig {
            vocab_size: m.vocab_size,
            dims: m.dims,
            heads: m.heads,
            layers: 1,
            max_length: m.max_length,
            seed,
        }),
    )?;
    let mut head = stage(
        "train",
        ClassifierHead::new(HeadConfig {
            input_dims: encoder.dims(),
            hidden: m.hidden,
            labels,
            task: cfg.dataset.task_kind(),
            loss: cfg.loss,
            seed: seed.wrapping_add(1),
            payoff: m.payoff,
        }),
    )?;
    let tcfg = TrainConfig {
        loss: cfg.loss,
        epochs: cfg.epochs,
        learning_rate: cfg.learning_rate,
        batch_size: m.batch_size,
        seed,
        fine_tune_encoder: m.fine_tune,
    };
    let log = stage("train", train(&mut encoder, &mut head, train_posts, &tcfg))?;
    out.json(
        &format!("{seed}/checkpoint.json"),
        &json!({ "encoder_identity": encoder.identity(), "train": tcfg, "log": log, "encoder": encoder, "head": head }),
    )?;
    let preds = stage("predict", predict(&encoder, &head, test_posts))?;
    let (records, attention) = preds.into_iter().map(|p| (p.record, p.attention)).unzip();
    Ok(SeedOutput { records, attention: Some(attention) })
}

fn model_run(cfg: &ExperimentConfig, hash: &str, out: &mut OutDir) -> Result<Vec<ReportRow>, OrchestrateError> {
    let posts = load_dataset(cfg)?;
    let by_id: HashMap<&str, &AnnotatedPost> = posts.iter().map(|p| (p.id.as_str(), p)).collect();
    let labels = cfg.dataset.resolved_label_count();
    let model = cfg.model.label();
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        let sp = stage("split", split(&posts, cfg.train_fraction, seed))?;
        out.json(&format!("{seed}/split.json"), &sp)?;
        let seed_out = match cfg.model.kind {
            ModelKind::Reference => {
                train_reference(cfg, seed, &select(&by_id, &sp.train), &select(&by_id, &sp.test), out)?
            }
            ModelKind::Imported => {
                let base = cfg.model.predictions.as_ref().expect("validated");
                let per_seed = base.join(seed.to_string());
                let src = if per_seed.is_dir() { per_seed } else { base.clone() };
                let imported = import_predictions(&src, labels, cfg.dataset.task_kind()).map_err(|e| match e {
                    OrchestrateError::Io { .. } => {
                        OrchestrateError::Stage { stage: "import".into(), message: e.to_string(), provider: false }
                    }
                    other => other,
                })?;
                SeedOutput { records: imported.records, attention: imported.attention }
            }
        };
        let written = export_predictions(&out.root.join(seed.to_string()), &seed_out.records, seed_out.attention.as_deref())?;
        out.files.extend(written.into_iter().map(|f| format!("{seed}/{f}")));

        let ids: Vec<&str> = seed_out.records.iter().map(|r| r.sample_id.as_str()).collect();
        let (gold, spans) = stage("evaluate", gold_maps(&posts, &ids))?;
        let res_rows = stage("evaluate", selective_evaluate(&seed_out.records, &gold, &cfg.reservation, cfg.averaging))?;
        out.json(&format!("{seed}/reservations.json"), &res_rows)?;
        let fidelity: Option<FidelityResult> = match &seed_out.attention {
            Some(att) => Some(stage("fidelity", fidelity_report(att, &spans, &cfg.attention))?),
            None => None,
        };
        if let Some(f) = &fidelity {
            out.json(&format!("{seed}/fidelity.json"), f)?;
        }
        let seed_rows: Vec<ReportRow> = res_rows
            .iter()
            .map(|r| ReportRow {
                config_hash: hash.to_string(),
                model: model.clone(),
                loss: cfg.loss.label().to_string(),
                label_count: labels,
                seed,
                reservation: r.reservation,
                kept: r.kept_ids.len(),
                abstained: r.abstained_ids.len(),
                metrics: r.metrics,
                ao_score: fidelity.as_ref().and_then(|f| f.ao_score),
                avg_rank: fidelity.as_ref().map(|f| f.avg_rank),
            })
            .collect();
        out.json(&format!("{seed}/metrics.json"), &seed_rows)?;
        let mut seed_files: Vec<&String> = out.files.iter().filter(|f| f.starts_with(&format!("{seed}/"))).collect();
        seed_files.sort();
        let seed_manifest = json!({ "seed": seed, "model": model, "config_hash": hash, "files": seed_files });
        out.json(&format!("{seed}/{MANIFEST_FILE}"), &seed_manifest)?;
        rows.extend(seed_rows);
    }
    Ok(rows)
}

/// Prompts the configured LLM on each seed's test split and scores the
/// replies. Rows are reported at reservation 1.0 with no rank.
pub fn run_llm_experiment(cfg: &ExperimentConfig, transport: &mut dyn ChatTransport) -> Result<RunSummary, OrchestrateError> {
    cfg.validate()?;
    if cfg.dataset.task_kind() != TaskKind::MultiClass {
        return Err(OrchestrateError::Config("LLM runs need a multi-class dataset".into()));
    }
    let (hash, dir) = fresh_run_dir(cfg, "llm-")?;
    let mut out = OutDir { root: dir.clone(), files: vec![] };
    let result = llm_run(cfg, &hash, transport, &mut out).and_then(|rows| finish(out, cfg, &hash, "llm", rows));
    if let Err(e) = &result {
        record_failure(&dir, &hash, e);
    }
    result
}

fn llm_run(cfg: &ExperimentConfig, hash: &str, transport: &mut dyn ChatTransport, out: &mut OutDir) -> Result<Vec<ReportRow>, OrchestrateError> {
    let posts = load_dataset(cfg)?;
    let by_id: HashMap<&str, &AnnotatedPost> = posts.iter().map(|p| (p.id.as_str(), p)).collect();
    let run_cfg = &cfg.llm.run;
    let model = format!("llm:{}", run_cfg.provider.model);
    let variant = if run_cfg.shots_per_class == 0 { "zero-shot".to_string() } else { format!("few-shot-{}", run_cfg.shots_per_class) };
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        let sp = stage("split", split(&posts, cfg.train_fraction, seed))?;
        out.json(&format!("{seed}/split.json"), &sp)?;
        let test = select(&by_id, &sp.test);
        let outcomes = run_llm(&test, &select(&by_id, &sp.train), run_cfg, transport).map_err(|e| OrchestrateError::Stage {
            stage: "llm".into(),
            provider: e.is_provider(),
            message: e.to_string(),
        })?;
        out.jsonl(&format!("{seed}/llm_outcomes.jsonl"), &outcomes)?;
        let ev = stage("evaluate", evaluate_llm(&outcomes, &test, cfg.llm.failure_mode, cfg.averaging))?;
        out.json(&format!("{seed}/llm_evaluation.json"), &ev)?;
        let kept = ev.metrics.support;
        rows.push(ReportRow {
            config_hash: hash.to_string(),
            model: model.clone(),
            loss: variant.clone(),
            label_count: 4,
            seed,
            reservation: 1.0,
            kept,
            abstained: outcomes.len() - kept,
            metrics: Some(ev.metrics),
            ao_score: ev.ao_score,
            avg_rank: None,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(dir: &Path) -> ExperimentConfig {
        ExperimentConfig::from_toml_str(
            &format!(
                "loss = \"gl\"\nseeds = [1, 2]\nepochs = 2\nlearning_rate = 0.01\noutput_dir = {:?}\n[dataset]\nsamples = 60\n[model]\nvocab_size = 256\ndims = 8\nhidden = 8\nmax_length = 24",
                dir.display().to_string()
            ),
            &[],
        )
        .unwrap()
    }

    #[test]
    fn run_writes_listed_files_only() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(dir.path());
        let summary = run_experiment(&cfg).unwrap();
        assert_eq!(summary.report.rows.len(), 2 * 4);
        let manifest: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(summary.run_dir.join(MANIFEST_FILE)).unwrap()).unwrap();
        let mut listed: Vec<String> = manifest["files"].as_array().unwrap().iter().map(|v| v.as_str().unwrap().to_string()).collect();
        listed.push(MANIFEST_FILE.into());
        listed.sort();
        let mut on_disk = Vec::new();
        let mut stack = vec![summary.run_dir.clone()];
        while let Some(d) = stack.pop() {
            for e in fs::read_dir(d).unwrap() {
                let p = e.unwrap().path();
                if p.is_dir() {
                    stack.push(p);
                } else {
                    on_disk.push(p.strip_prefix(&summary.run_dir).unwrap().to_string_lossy().replace('\\', "/"));
                }
            }
        }
        on_disk.sort();
        assert_eq!(listed, on_disk);
        assert!(!summary.run_dir.join(FAILURE_FILE).exists());
    }

    #[test]
    fn failing_stage_is_recorded() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small(dir.path());
        cfg.model.kind = ModelKind::Imported;
        cfg.model.predictions = Some(dir.path().join("missing"));
        let err = run_experiment(&cfg).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        let run_dir = dir.path().join("runs").join(&cfg.config_hash()[..16]);
        let failure: serde_json::Value = serde_json::from_str(&fs::read_to_string(run_dir.join(FAILURE_FILE)).unwrap()).unwrap();
        assert_eq!(failure["stage"], "import");
    }
}
