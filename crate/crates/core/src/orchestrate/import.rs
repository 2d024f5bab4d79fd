//! Externally produced predictions: a `predictions.jsonl` file of
//! [`PredictionRecord`]s plus an optional `attention/` dump directory, the
//! same layout each run writes per seed.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use super::OrchestrateError;
use crate::attention::{read_attention_dump, write_attention_dump, AttentionRecord, ATTENTION_INDEX_FILE};
use crate::modeling::PredictionRecord;
use crate::schema::TaskKind;

pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
const ATTENTION_DIR: &str = "attention";

#[derive(Debug, Clone)]
pub struct ImportedPredictions {
    pub records: Vec<PredictionRecord>,
    /// Present when the directory holds an attention dump.
    pub attention: Option<Vec<AttentionRecord>>,
}

/// Writes `predictions.jsonl` and, if given, the attention dump. Returns
/// the written paths relative to `dir`.
pub fn export_predictions(
    dir: &Path,
    records: &[PredictionRecord],
    attention: Option<&[AttentionRecord]>,
) -> Result<Vec<String>, OrchestrateError> {
    fs::create_dir_all(dir).map_err(|e| OrchestrateError::io(dir, e))?;
    let path = dir.join(PREDICTIONS_FILE);
    let mut out = fs::File::create(&path).map_err(|e| OrchestrateError::io(&path, e))?;
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| OrchestrateError::io(&path, e))?;
        writeln!(out, "{line}").map_err(|e| OrchestrateError::io(&path, e))?;
    }
    let mut files = vec![PREDICTIONS_FILE.to_string()];
    if let Some(att) = attention {
        let adir = dir.join(ATTENTION_DIR);
        let written = write_attention_dump(&adir, att).map_err(|e| OrchestrateError::io(&adir, e))?;
        files.extend(written.into_iter().map(|f| format!("{ATTENTION_DIR}/{f}")));
    }
    Ok(files)
}

fn check_record(r: &PredictionRecord, labels: usize, task: TaskKind) -> Vec<String> {
    let mut issues = Vec::new();
    if r.task != task {
        issues.push(format!("task {:?}, expected {:?}", r.task, task));
    }
    if r.probs.len() != labels {
        issues.push(format!("{} probabilities, expected {labels}", r.probs.len()));
    }
    if r.probs.iter().any(|p| !p.is_finite() || !(0.0..=1.0).contains(p)) {
        issues.push("probability outside [0, 1] or not finite".into());
    }
    if let Some(g) = r.reservation {
        if !g.is_finite() || !(0.0..=1.0).contains(&g) {
            issues.push(format!("reservation {g} outside [0, 1]"));
        }
    }
    issues
}

/// Reads and validates an exported prediction directory. Every problem
/// found is reported, each tagged with its sample id or line number.
pub fn import_predictions(dir: &Path, labels: usize, task: TaskKind) -> Result<ImportedPredictions, OrchestrateError> {
    let path = dir.join(PREDICTIONS_FILE);
    let file = fs::File::open(&path).map_err(|e| OrchestrateError::io(&path, e))?;
    let mut records = Vec::new();
    let mut problems = Vec::new();
    let mut seen = HashSet::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| OrchestrateError::io(&path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let r: PredictionRecord = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                problems.push(format!("line {}: {e}", n + 1));
                continue;
            }
        };
        for issue in check_record(&r, labels, task) {
            problems.push(format!("{}: {issue}", r.sample_id));
        }
        if !seen.insert(r.sample_id.clone()) {
            problems.push(format!("{}: duplicate sample id", r.sample_id));
        }
        records.push(r);
    }
    if records.is_empty() && problems.is_empty() {
        problems.push(format!("{} holds no predictions", path.display()));
    }
    let adir = dir.join(ATTENTION_DIR);
    let attention = if adir.join(ATTENTION_INDEX_FILE).exists() {
        match read_attention_dump(&adir) {
            Ok(att) => {
                let ids: HashSet<&str> = att.iter().map(|a| a.sample_id.as_str()).collect();
                for r in &records {
                    if !ids.contains(r.sample_id.as_str()) {
                        problems.push(format!("{}: no attention record", r.sample_id));
                    }
                }
                Some(att)
            }
            Err(e) => {
                problems.push(format!("attention dump: {e}"));
                None
            }
        }
    } else {
        None
    };
    if !problems.is_empty() {
        return Err(OrchestrateError::Import { problems });
    }
    Ok(ImportedPredictions { records, attention })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, probs: Vec<f64>) -> PredictionRecord {
        PredictionRecord { sample_id: id.into(), task: TaskKind::MultiClass, probs, reservation: Some(0.1), truncated: false }
    }

    #[test]
    fn round_trip_without_attention() {
        let dir = tempfile::tempdir().unwrap();
        let recs = vec![rec("a", vec![0.1, 0.2, 0.3, 0.4]), rec("b", vec![0.7, 0.1, 0.1, 0.1])];
        assert_eq!(export_predictions(dir.path(), &recs, None).unwrap(), [PREDICTIONS_FILE]);
        let back = import_predictions(dir.path(), 4, TaskKind::MultiClass).unwrap();
        assert_eq!(back.records, recs);
        assert!(back.attention.is_none());
    }

    #[test]
    fn every_bad_record_is_listed() {
        let dir = tempfile::tempdir().unwrap();
        let recs = vec![rec("ok", vec![0.25; 4]), rec("neg", vec![-0.1, 0.5, 0.3, 0.3]), rec("short", vec![0.5, 0.5])];
        export_predictions(dir.path(), &recs, None).unwrap();
        let mut f = fs::OpenOptions::new().append(true).open(dir.path().join(PREDICTIONS_FILE)).unwrap();
        writeln!(f, "{{\"sample_id\": \"nan\", \"task\": \"multi_class\", \"probs\": [NaN]}}").unwrap();
        let Err(OrchestrateError::Import { problems }) = import_predictions(dir.path(), 4, TaskKind::MultiClass) else {
            panic!("expected import error");
        };
        let text = problems.join("\n");
        assert!(text.contains("neg:"), "{text}");
        assert!(text.contains("short:"), "{text}");
        assert!(text.contains("line 4"), "{text}");
        assert!(!text.contains("ok:"), "{text}");
    }
}
