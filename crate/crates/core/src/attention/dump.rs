//! On-disk attention dumps.
//!
//! A dump directory holds one binary matrix file per sample plus an index
//! (`attention.jsonl`). Each binary file is a header of two little-endian
//! `u32` (rows, cols) followed by `rows * cols` little-endian `f32` values
//! in row-major order. Each index line carries `sample_id`, `file`,
//! `tokens` (text, start, end, special; char offsets) and `provenance`.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{AttentionError, AttentionRecord, AttentionToken};

pub const ATTENTION_INDEX_FILE: &str = "attention.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumpIndexEntry {
    pub sample_id: String,
    pub file: String,
    pub tokens: Vec<AttentionToken>,
    #[serde(default)]
    pub provenance: String,
}

fn io_err(path: &Path, e: std::io::Error) -> AttentionError {
    AttentionError::Dump(format!("{}: {e}", path.display()))
}

pub fn encode_matrix(m: &DMatrix<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * m.len());
    out.extend_from_slice(&(m.nrows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.ncols() as u32).to_le_bytes());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.extend_from_slice(&(m[(r, c)] as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_matrix(bytes: &[u8]) -> Result<DMatrix<f64>, AttentionError> {
    if bytes.len() < 8 {
        return Err(AttentionError::Dump("matrix file shorter than its header".into()));
    }
    let word = |i: usize| u32::from_le_bytes([bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]]);
    let (rows, cols) = (word(0) as usize, word(4) as usize);
    let expected = 8 + 4 * rows * cols;
    if bytes.len() != expected {
        return Err(AttentionError::Dump(format!(
            "{rows}x{cols} matrix needs {expected} bytes, file has {}",
            bytes.len()
        )));
    }
    let values: Vec<f64> = bytes[8..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok(DMatrix::from_row_slice(rows, cols, &values))
}

/// Writes every record's main matrix. Files are named by position so any
/// sample id is safe to store.
pub fn write_attention_dump(dir: &Path, records: &[AttentionRecord]) -> Result<Vec<String>, AttentionError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let index_path = dir.join(ATTENTION_INDEX_FILE);
    let mut index = fs::File::create(&index_path).map_err(|e| io_err(&index_path, e))?;
    let mut files = vec![ATTENTION_INDEX_FILE.to_string()];
    for (i, rec) in records.iter().enumerate() {
        let file = format!("{i:05}.attn");
        let path = dir.join(&file);
        fs::write(&path, encode_matrix(&rec.matrix)).map_err(|e| io_err(&path, e))?;
        let entry = DumpIndexEntry {
            sample_id: rec.sample_id.clone(),
            file: file.clone(),
            tokens: rec.tokens.clone(),
            provenance: rec.provenance.clone(),
        };
        let line = serde_json::to_string(&entry).map_err(|e| AttentionError::Dump(e.to_string()))?;
        writeln!(index, "{line}").map_err(|e| io_err(&index_path, e))?;
        files.push(file);
    }
    Ok(files)
}

/// Reads and validates a dump directory. Rows are renormalized after the
/// f32 round trip so they sum to one in f64.
pub fn read_attention_dump(dir: &Path) -> Result<Vec<AttentionRecord>, AttentionError> {
    let index_path = dir.join(ATTENTION_INDEX_FILE);
    let index = fs::File::open(&index_path).map_err(|e| io_err(&index_path, e))?;
    let mut records = Vec::new();
    for (n, line) in BufReader::new(index).lines().enumerate() {
        let line = line.map_err(|e| io_err(&index_path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: DumpIndexEntry = serde_json::from_str(&line)
            .map_err(|e| AttentionError::Dump(format!("index line {}: {e}", n + 1)))?;
        if entry.file.contains(['/', '\\']) || entry.file.starts_with('.') {
            return Err(AttentionError::Dump(format!("index line {}: file name {:?} not allowed", n + 1, entry.file)));
        }
        let path = dir.join(&entry.file);
        let mut matrix = decode_matrix(&fs::read(&path).map_err(|e| io_err(&path, e))?)
            .map_err(|e| AttentionError::Dump(format!("sample {}: {e}", entry.sample_id)))?;
        for mut row in matrix.row_iter_mut() {
            let s = row.sum();
            if s > 0.0 {
                row /= s;
            }
        }
        let rec = AttentionRecord {
            sample_id: entry.sample_id,
            tokens: entry.tokens,
            matrix,
            heads: vec![],
            provenance: entry.provenance,
        };
        rec.validate()?;
        records.push(rec);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::test_support::random_record;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let recs: Vec<_> = (0..3).map(|i| random_record(&mut rng, &format!("id/{i}"), 4 + i)).collect();
        write_attention_dump(dir.path(), &recs).unwrap();
        let back = read_attention_dump(dir.path()).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in recs.iter().zip(&back) {
            assert_eq!(a.sample_id, b.sample_id);
            assert_eq!(a.tokens, b.tokens);
            assert!((&a.matrix - &b.matrix).abs().max() < 1e-6);
        }
    }

    #[test]
    fn header_layout_and_truncation() {
        let m = DMatrix::from_row_slice(1, 2, &[0.25, 0.75]);
        let bytes = encode_matrix(&m);
        assert_eq!(&bytes[..8], &[1, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(&bytes[8..12], &0.25f32.to_le_bytes());
        assert!(decode_matrix(&bytes[..10]).is_err());
    }
}
