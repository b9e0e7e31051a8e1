//! Frozen word vectors with a deterministic out-of-vocabulary fallback.
//!
//! Vectors load from the common whitespace text format: a `count dim`
//! header, then `token v1 ... v_dim` per line. Tokens missing from the table
//! are resolved by the table's [`OovPolicy`]; the default averages hashed
//! character n-gram vectors, so misspellings land near the correct word.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::str::FromStr;
use std::sync::OnceLock;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::taxonomy::{LabelId, Taxonomy};
use crate::util::{fnv1a, seeded, splitmix64};

pub const NGRAM_BUCKETS: usize = 10_007;
pub const MIN_NGRAM: usize = 3;
pub const MAX_NGRAM: usize = 5;

const BUCKET_SEED: u64 = 0x5eed_b0c4_e7ab_1e00;
const TOKEN_SEED: u64 = 0x70ce_5eed_0000_0001;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OovPolicy {
    /// Mean of hashed character 3-5-gram vectors.
    #[default]
    SubwordHash,
    /// A fixed pseudo-random unit vector per token.
    RandomFixed,
    Zero,
}

impl FromStr for OovPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "subword_hash" => Ok(OovPolicy::SubwordHash),
            "random_fixed" => Ok(OovPolicy::RandomFixed),
            "zero" => Ok(OovPolicy::Zero),
            other => Err(Error::invalid(format!("unknown OOV policy `{other}`"))),
        }
    }
}

#[derive(Debug)]
pub struct EmbeddingTable {
    dim: usize,
    vocab: HashMap<String, usize>,
    /// Row-major `vocab.len() x dim`.
    matrix: Vec<f64>,
    oov: OovPolicy,
    buckets: OnceLock<Vec<f64>>,
}

impl Clone for EmbeddingTable {
    fn clone(&self) -> Self {
        EmbeddingTable {
            dim: self.dim,
            vocab: self.vocab.clone(),
            matrix: self.matrix.clone(),
            oov: self.oov,
            buckets: OnceLock::new(),
        }
    }
}

impl EmbeddingTable {
    /// A table with no stored rows; every lookup goes through `oov`.
    pub fn empty(dim: usize, oov: OovPolicy) -> Result<EmbeddingTable> {
        EmbeddingTable::from_rows(dim, Vec::<(String, Vec<f64>)>::new(), oov)
    }

    pub fn from_rows<I>(dim: usize, rows: I, oov: OovPolicy) -> Result<EmbeddingTable>
    where
        I: IntoIterator<Item = (String, Vec<f64>)>,
    {
        if dim == 0 {
            return Err(Error::invalid("embedding dimension must be positive"));
        }
        let mut table = EmbeddingTable {
            dim,
            vocab: HashMap::new(),
            matrix: Vec::new(),
            oov,
            buckets: OnceLock::new(),
        };
        for (token, row) in rows {
            if row.len() != dim {
                return Err(Error::Shape(format!("row for `{token}` has {} components, expected {dim}", row.len())));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("embedding row `{token}`")));
            }
            if table.vocab.contains_key(&token) {
                log::warn!("duplicate embedding token `{token}`; keeping the first row");
                continue;
            }
            table.vocab.insert(token, table.vocab.len());
            table.matrix.extend(row);
        }
        Ok(table)
    }

    pub fn load<R: BufRead>(reader: R, oov: OovPolicy) -> Result<EmbeddingTable> {
        let mut lines = reader.lines();
        let header = lines.next().ok_or_else(|| Error::parse(1, "missing `count dim` header"))??;
        let mut parts = header.split_whitespace();
        let (count, dim) = match (parts.next(), parts.next(), parts.next()) {
            (Some(c), Some(d), None) => (
                c.parse::<usize>().map_err(|_| Error::parse(1, format!("bad count `{c}`")))?,
                d.parse::<usize>().map_err(|_| Error::parse(1, format!("bad dimension `{d}`")))?,
            ),
            _ => return Err(Error::parse(1, "expected header `count dim`")),
        };
        if dim == 0 {
            return Err(Error::parse(1, "dimension must be positive"));
        }
        let mut rows = Vec::with_capacity(count);
        for (i, line) in lines.enumerate() {
            let line_no = i + 2;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let token = fields.next().expect("non-empty line").to_string();
            let row: Vec<f64> = fields
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|_| Error::parse(line_no, format!("non-numeric component `{f}`")))
                })
                .collect::<Result<_>>()?;
            if row.len() != dim {
                return Err(Error::parse(
                    line_no,
                    format!("`{token}` has {} components, expected {dim}", row.len()),
                ));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::parse(line_no, format!("`{token}` has a non-finite component")));
            }
            rows.push((token, row));
        }
        if rows.len() != count {
            return Err(Error::parse(
                rows.len() + 1,
                format!("header declares {count} vectors, found {}", rows.len()),
            ));
        }
        EmbeddingTable::from_rows(dim, rows, oov)
    }

    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        let mut by_row: Vec<(&String, usize)> = self.vocab.iter().map(|(t, &r)| (t, r)).collect();
        by_row.sort_by_key(|&(_, r)| r);
        writeln!(w, "{} {}", by_row.len(), self.dim)?;
        for (token, r) in by_row {
            write!(w, "{token}")?;
            for v in self.row(r) {
                write!(w, " {v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    pub fn oov_policy(&self) -> OovPolicy {
        self.oov
    }

    pub fn contains(&self, token: &str) -> bool {
        self.vocab.contains_key(token)
    }

    /// Stored row index of an in-vocabulary token.
    pub fn row_index(&self, token: &str) -> Option<usize> {
        self.vocab.get(token).copied()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.matrix[r * self.dim..(r + 1) * self.dim]
    }

    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    /// SHA-256 of the text serialization; identifies the table in checkpoints.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut buf = Vec::new();
        self.write_text(&mut buf).expect("writing to memory");
        hex::encode(Sha256::digest(&buf))
    }

    /// The vector for `token`: its stored row, or the OOV fallback.
    pub fn lookup(&self, token: &str) -> Vec<f64> {
        if let Some(r) = self.row_index(token) {
            return self.row(r).to_vec();
        }
        match self.oov {
            OovPolicy::Zero => vec![0.0; self.dim],
            OovPolicy::RandomFixed => {
                let mut rng = seeded(splitmix64(TOKEN_SEED ^ fnv1a(token.as_bytes())));
                let mut v: Vec<f64> = (0..self.dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 0.0 {
                    v.iter_mut().for_each(|x| *x /= norm);
                }
                v
            }
            OovPolicy::SubwordHash => {
                let buckets = self.buckets();
                let grams = char_ngrams(token);
                let mut v = vec![0.0; self.dim];
                for g in &grams {
                    let b = (fnv1a(g.as_bytes()) % NGRAM_BUCKETS as u64) as usize;
                    for (acc, x) in v.iter_mut().zip(&buckets[b * self.dim..(b + 1) * self.dim]) {
                        *acc += x;
                    }
                }
                let n = grams.len().max(1) as f64;
                v.iter_mut().for_each(|x| *x /= n);
                v
            }
        }
    }

    fn buckets(&self) -> &[f64] {
        self.buckets.get_or_init(|| {
            // each bucket's vector comes from its own seed; scaled so that a
            // bucket vector has unit expected squared norm
            let scale = (3.0 / self.dim as f64).sqrt();
            let mut m = Vec::with_capacity(NGRAM_BUCKETS * self.dim);
            for b in 0..NGRAM_BUCKETS {
                let mut rng = seeded(splitmix64(BUCKET_SEED ^ b as u64));
                m.extend((0..self.dim).map(|_| rng.gen_range(-scale..scale)));
            }
            m
        })
    }

    /// Elementwise maximum over the vectors of the label's name tokens.
    pub fn label_embedding(&self, label: &LabelId, tax: &Taxonomy) -> Result<Vec<f64>> {
        let tokens = tax.label_tokens(label)?;
        Ok(max_pool(tokens.iter().map(|t| self.lookup(t)), self.dim))
    }

    pub fn encode_sequence(&self, tokens: &[String], max_len: usize) -> Result<EncodedSequence> {
        if max_len == 0 {
            return Err(Error::invalid("max_len must be positive"));
        }
        let true_length = tokens.len().min(max_len);
        let mut matrix = vec![0.0; max_len * self.dim];
        for (t, tok) in tokens.iter().take(max_len).enumerate() {
            matrix[t * self.dim..(t + 1) * self.dim].copy_from_slice(&self.lookup(tok));
        }
        let mask = (0..max_len).map(|t| t < true_length).collect();
        Ok(EncodedSequence {
            dim: self.dim,
            matrix,
            mask,
            true_length,
        })
    }
}

/// Elementwise maximum of a set of vectors (zeros when empty).
pub fn max_pool<I: IntoIterator<Item = Vec<f64>>>(vectors: I, dim: usize) -> Vec<f64> {
    let mut out: Option<Vec<f64>> = None;
    for v in vectors {
        match out.as_mut() {
            None => out = Some(v),
            Some(acc) => acc.iter_mut().zip(v).for_each(|(a, x)| *a = a.max(x)),
        }
    }
    out.unwrap_or_else(|| vec![0.0; dim])
}

/// Character n-grams of `<token>` for n in 3..=5, boundary markers included.
pub fn char_ngrams(token: &str) -> Vec<String> {
    let chars: Vec<char> = std::iter::once('<').chain(token.chars()).chain(std::iter::once('>')).collect();
    let mut out = Vec::new();
    for n in MIN_NGRAM..=MAX_NGRAM {
        if chars.len() < n {
            break;
        }
        for w in chars.windows(n) {
            out.push(w.iter().collect());
        }
    }
    out
}

/// A padded, embedded token sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedSequence {
    pub dim: usize,
    /// Row-major `max_len x dim`; padded rows are zero.
    pub matrix: Vec<f64>,
    /// `true` for real tokens; the first `true_length` entries.
    pub mask: Vec<bool>,
    pub true_length: usize,
}

impl EncodedSequence {
    pub fn max_len(&self) -> usize {
        self.mask.len()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.matrix[t * self.dim..(t + 1) * self.dim]
    }
}
