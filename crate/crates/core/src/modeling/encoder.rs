//! Desk-scale reference encoder: a hashing tokenizer followed by one
//! multi-head self-attention layer with a residual connection and mean
//! pooling.

use std::any::Any;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::param::Param;
use super::{Encoded, EncoderAdapter, ModelError};
use crate::attention::{AttentionRecord, AttentionToken};

const CLS_ID: usize = 0;
const SEP_ID: usize = 1;
const RESERVED_IDS: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceEncoderConfig {
    pub vocab_size: usize,
    pub dims: usize,
    pub heads: usize,
    pub layers: usize,
    /// Maximum token count including the two special tokens.
    pub max_length: usize,
    pub seed: u64,
}

impl Default for ReferenceEncoderConfig {
    fn default() -> Self {
        ReferenceEncoderConfig { vocab_size: 4096, dims: 32, heads: 2, layers: 1, max_length: 64, seed: 0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReferenceEncoder {
    config: ReferenceEncoderConfig,
    embeddings: Param,
    wq: Param,
    wk: Param,
    wv: Param,
}

/// Builds a reference encoder; `dims` must be divisible by `heads`.
pub fn reference_encoder(config: ReferenceEncoderConfig) -> Result<ReferenceEncoder, ModelError> {
    ReferenceEncoder::new(config)
}

struct Tape {
    ids: Vec<usize>,
    x: DMatrix<f64>,
    q: DMatrix<f64>,
    k: DMatrix<f64>,
    v: DMatrix<f64>,
    attn: Vec<DMatrix<f64>>,
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Splits text into alphanumeric runs and single punctuation characters,
/// with char offsets.
pub(crate) fn word_pieces(text: &str) -> Vec<(String, usize, usize)> {
    let mut out = Vec::new();
    let mut current: Option<(String, usize)> = None;
    for (pos, ch) in text.chars().enumerate() {
        if ch.is_alphanumeric() || ch == '\'' {
            match current.as_mut() {
                Some((s, _)) => s.push(ch),
                None => current = Some((ch.to_string(), pos)),
            }
            continue;
        }
        if let Some((s, start)) = current.take() {
            let end = start + s.chars().count();
            out.push((s, start, end));
        }
        if !ch.is_whitespace() {
            out.push((ch.to_string(), pos, pos + 1));
        }
    }
    if let Some((s, start)) = current {
        let end = start + s.chars().count();
        out.push((s, start, end));
    }
    out
}

fn row_softmax(m: &mut DMatrix<f64>) {
    for mut row in m.row_iter_mut() {
        let max = row.max();
        row.apply(|x| *x = (*x - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

impl ReferenceEncoder {
    pub fn new(config: ReferenceEncoderConfig) -> Result<Self, ModelError> {
        if config.heads == 0 || config.dims == 0 || !config.dims.is_multiple_of(config.heads) {
            return Err(ModelError::Config(format!(
                "dims {} not divisible by heads {}",
                config.dims, config.heads
            )));
        }
        if config.layers != 1 {
            return Err(ModelError::Config("the reference encoder has exactly one layer".into()));
        }
        if config.vocab_size <= RESERVED_IDS {
            return Err(ModelError::Config(format!("vocab_size must exceed {RESERVED_IDS}")));
        }
        if config.max_length < 3 {
            return Err(ModelError::Config("max_length must leave room for one content token".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.dims;
        let xavier = (6.0 / (2 * d) as f64).sqrt();
        Ok(ReferenceEncoder {
            embeddings: Param::uniform(config.vocab_size, d, 1.0, &mut rng),
            wq: Param::uniform(d, d, xavier, &mut rng),
            wk: Param::uniform(d, d, xavier, &mut rng),
            wv: Param::uniform(d, d, xavier, &mut rng),
            config,
        })
    }

    pub fn config(&self) -> &ReferenceEncoderConfig {
        &self.config
    }

    fn token_id(&self, piece: &str) -> usize {
        RESERVED_IDS + (fnv1a(&piece.to_lowercase()) % (self.config.vocab_size - RESERVED_IDS) as u64) as usize
    }

    /// Tokens with offsets, token ids and the truncation flag.
    fn tokenize(&self, text: &str) -> (Vec<AttentionToken>, Vec<usize>, bool) {
        let pieces = word_pieces(text);
        let room = self.config.max_length - 2;
        let truncated = pieces.len() > room;
        let len = text.chars().count();
        let mut tokens = vec![AttentionToken { text: "[CLS]".into(), start: 0, end: 0, special: true }];
        let mut ids = vec![CLS_ID];
        for (piece, start, end) in pieces.into_iter().take(room) {
            ids.push(self.token_id(&piece));
            tokens.push(AttentionToken { text: piece, start, end, special: false });
        }
        tokens.push(AttentionToken { text: "[SEP]".into(), start: len, end: len, special: true });
        ids.push(SEP_ID);
        (tokens, ids, truncated)
    }

    fn forward(&self, ids: &[usize]) -> (DVector<f64>, Tape) {
        let n = ids.len();
        let d = self.config.dims;
        let heads = self.config.heads;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let emb = &self.embeddings.value;
        let x = DMatrix::from_fn(n, d, |t, j| emb[(ids[t], j)]);
        let q = &x * &self.wq.value;
        let k = &x * &self.wk.value;
        let v = &x * &self.wv.value;
        let mut out = x.clone();
        let mut attn = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = q.columns(h * dh, dh);
            let kh = k.columns(h * dh, dh);
            let mut a = qh * kh.transpose() * scale;
            row_softmax(&mut a);
            let oh = &a * v.columns(h * dh, dh);
            let mut target = out.columns_mut(h * dh, dh);
            target += oh;
            attn.push(a);
        }
        let pooled = out.row_mean().transpose();
        (pooled, Tape { ids: ids.to_vec(), x, q, k, v, attn })
    }

    fn backward_tape(&mut self, tape: &Tape, grad: &DVector<f64>) {
        let n = tape.ids.len();
        let d = self.config.dims;
        let heads = self.config.heads;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        // d(pooled)/d(out_t) = 1/n for every token row
        let d_out = DMatrix::from_fn(n, d, |_, j| grad[j] / n as f64);
        let mut dx = d_out.clone();
        let mut dq = DMatrix::zeros(n, d);
        let mut dk = DMatrix::zeros(n, d);
        let mut dv = DMatrix::zeros(n, d);
        for (h, a) in tape.attn.iter().enumerate() {
            let d_oh = d_out.columns(h * dh, dh);
            let vh = tape.v.columns(h * dh, dh);
            let da = d_oh.clone() * vh.transpose();
            dv.columns_mut(h * dh, dh).copy_from(&(a.transpose() * &d_oh));
            let mut ds = a.component_mul(&da);
            for (r, mut row) in ds.row_iter_mut().enumerate() {
                let dot: f64 = da.row(r).dot(&a.row(r));
                for (c, val) in row.iter_mut().enumerate() {
                    *val = (*val - a[(r, c)] * dot) * scale;
                }
            }
            dq.columns_mut(h * dh, dh).copy_from(&(&ds * tape.k.columns(h * dh, dh)));
            dk.columns_mut(h * dh, dh).copy_from(&(ds.transpose() * tape.q.columns(h * dh, dh)));
        }
        let xt = tape.x.transpose();
        *self.wq.grad_mut() += &xt * &dq;
        *self.wk.grad_mut() += &xt * &dk;
        *self.wv.grad_mut() += &xt * &dv;
        dx += &dq * self.wq.value.transpose();
        dx += &dk * self.wk.value.transpose();
        dx += &dv * self.wv.value.transpose();
        let demb = self.embeddings.grad_mut();
        for (t, &id) in tape.ids.iter().enumerate() {
            let mut row = demb.row_mut(id);
            row += dx.row(t);
        }
    }

    fn params_mut(&mut self) -> [&mut Param; 4] {
        [&mut self.embeddings, &mut self.wq, &mut self.wk, &mut self.wv]
    }
}

impl EncoderAdapter for ReferenceEncoder {
    fn identity(&self) -> String {
        let c = &self.config;
        format!("reference-v{}-d{}-h{}-l{}-seed{}", c.vocab_size, c.dims, c.heads, c.layers, c.seed)
    }

    fn max_length(&self) -> usize {
        self.config.max_length
    }

    fn dims(&self) -> usize {
        self.config.dims
    }

    fn encode(&self, sample_id: &str, text: &str) -> Result<Encoded, ModelError> {
        let (tokens, ids, truncated) = self.tokenize(text);
        let (representation, tape) = self.forward(&ids);
        let heads = tape.attn.len() as f64;
        let matrix = tape.attn.iter().fold(DMatrix::zeros(ids.len(), ids.len()), |acc, a| acc + a) / heads;
        Ok(Encoded {
            representation,
            attention: AttentionRecord {
                sample_id: sample_id.to_string(),
                tokens,
                matrix,
                heads: tape.attn,
                provenance: "layer0/head-mean".into(),
            },
            truncated,
        })
    }

    fn is_trainable(&self) -> bool {
        true
    }

    fn forward_train(&self, text: &str) -> Result<(DVector<f64>, Option<Box<dyn Any>>), ModelError> {
        let (_, ids, _) = self.tokenize(text);
        let (repr, tape) = self.forward(&ids);
        Ok((repr, Some(Box::new(tape))))
    }

    fn backward(&mut self, tape: &dyn Any, grad: &DVector<f64>) {
        if let Some(tape) = tape.downcast_ref::<Tape>() {
            self.backward_tape(tape, grad);
        }
    }

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn step(&mut self, learning_rate: f64, t: u64) {
        for p in self.params_mut() {
            p.adam_step(learning_rate, t);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ReferenceEncoder {
        reference_encoder(ReferenceEncoderConfig {
            vocab_size: 64,
            dims: 6,
            heads: 2,
            layers: 1,
            max_length: 16,
            seed: 7,
        })
        .unwrap()
    }

    #[test]
    fn shape_contract() {
        let enc = small();
        let out = enc.encode("s", "a b c").unwrap();
        let n = out.attention.tokens.len();
        assert_eq!(n, 5);
        assert_eq!(out.attention.tokens.iter().filter(|t| !t.special).count(), 3);
        assert_eq!(out.attention.matrix.shape(), (n, n));
        for row in out.attention.matrix.row_iter() {
            assert!((row.sum() - 1.0).abs() < 1e-5);
        }
        assert_eq!(out.representation.len(), 6);
        out.attention.validate().unwrap();
    }

    #[test]
    fn deterministic() {
        let enc = small();
        let a = enc.encode("s", "Hello, world! hello").unwrap();
        let b = enc.encode("s", "Hello, world! hello").unwrap();
        assert_eq!(a.representation, b.representation);
        assert_eq!(a.attention.matrix, b.attention.matrix);
        let again = small().encode("s", "Hello, world! hello").unwrap();
        assert_eq!(a.representation, again.representation);
    }

    #[test]
    fn offsets_and_truncation() {
        let pieces = word_pieces("I'm sad. Très");
        assert_eq!(
            pieces,
            vec![("I'm".into(), 0, 3), ("sad".into(), 4, 7), (".".into(), 7, 8), ("Très".into(), 9, 13)]
        );
        let enc = small();
        let long = vec!["w"; 40].join(" ");
        let out = enc.encode("s", &long).unwrap();
        assert!(out.truncated);
        assert_eq!(out.attention.tokens.len(), 16);
        assert!(!enc.encode("s", "short").unwrap().truncated);
    }

    #[test]
    fn config_errors() {
        let bad = ReferenceEncoderConfig { dims: 7, heads: 2, ..Default::default() };
        assert!(matches!(reference_encoder(bad), Err(ModelError::Config(_))));
    }

    #[test]
    fn encoder_backward_matches_finite_differences() {
        let mut enc = small();
        let (_, ids, _) = enc.tokenize("one two three two");
        // scalar objective: w . pooled
        let w = DVector::from_fn(6, |i, _| (i as f64 + 1.0) * 0.3 - 0.8);
        let objective = |e: &ReferenceEncoder| e.forward(&ids).0.dot(&w);
        let (_, tape) = enc.forward(&ids);
        enc.zero_grad();
        enc.backward_tape(&tape, &w);
        let h = 1e-6;
        let check = |enc: &mut ReferenceEncoder, which: usize, idx: usize| {
            let analytic = enc.params_mut()[which].grad.as_ref().unwrap()[idx];
            enc.params_mut()[which].value[idx] += h;
            let up = objective(enc);
            enc.params_mut()[which].value[idx] -= 2.0 * h;
            let down = objective(enc);
            enc.params_mut()[which].value[idx] += h;
            let numeric = (up - down) / (2.0 * h);
            assert!(
                (analytic - numeric).abs() <= 1e-6 * (1.0 + numeric.abs()),
                "param {which} idx {idx}: {analytic} vs {numeric}"
            );
        };
        for which in 1..4 {
            for idx in [0, 5, 13, 22, 35] {
                check(&mut enc, which, idx);
            }
        }
        // embedding rows actually used by the text
        let used = ids[2];
        for j in 0..6 {
            check(&mut enc, 0, used + j * 64);
        }
    }
}
