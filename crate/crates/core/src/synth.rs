//! A keyword-separable stand-in corpus with matching word vectors.
//!
//! Every label owns a few invented signature words; a sample mixes the
//! signature words of its labels with shared distractors. The vector file
//! places each signature word next to its label's embedding, so the task is
//! learnable from the vectors alone.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Sample};
use crate::embeddings::{EmbeddingTable, OovPolicy};
use crate::error::{Error, Result};
use crate::taxonomy::{LabelId, Taxonomy};
use crate::util::{derive_seed, pick, sample_distinct, seeded, shuffle};

const DISTRACTOR_KEY: &str = "_distractors";
const ONSETS: [&str; 16] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "st"];
const NUCLEI: [&str; 6] = ["a", "e", "i", "o", "u", "ai"];

/// Signature words per label plus a shared distractor vocabulary.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KeywordTable {
    pub signatures: BTreeMap<LabelId, Vec<String>>,
    pub distractors: Vec<String>,
}

fn pseudo_word<R: Rng + ?Sized>(rng: &mut R, syllables: usize) -> String {
    let mut w = String::new();
    for _ in 0..syllables {
        w.push_str(ONSETS[pick(rng, ONSETS.len())]);
        w.push_str(NUCLEI[pick(rng, NUCLEI.len())]);
    }
    w
}

impl KeywordTable {
    /// `per_label` invented words for each label and `distractors` shared
    /// ones, all distinct.
    pub fn generate(labels: &[LabelId], per_label: usize, distractors: usize, seed: u64) -> KeywordTable {
        let mut rng = seeded(derive_seed(seed, "keywords"));
        let mut used = BTreeSet::new();
        let mut fresh = |rng: &mut crate::util::SeededRng, syl: usize| loop {
            let w = pseudo_word(rng, syl);
            if used.insert(w.clone()) {
                return w;
            }
        };
        let signatures = labels
            .iter()
            .map(|l| (l.clone(), (0..per_label).map(|_| fresh(&mut rng, 3)).collect()))
            .collect();
        let distractors = (0..distractors).map(|_| fresh(&mut rng, 2)).collect();
        KeywordTable {
            signatures,
            distractors,
        }
    }

    /// Tab-separated: `label<TAB>word word ...`; distractors under
    /// `_distractors`. `#` starts a comment line.
    pub fn parse(text: &str) -> Result<KeywordTable> {
        let mut t = KeywordTable::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, words) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(i + 1, "expected `label<TAB>words`"))?;
            let words: Vec<String> = words.split_whitespace().map(str::to_string).collect();
            if words.is_empty() {
                return Err(Error::parse(i + 1, "no words"));
            }
            if key == DISTRACTOR_KEY {
                t.distractors.extend(words);
            } else if t.signatures.insert(LabelId::from_name(key), words).is_some() {
                return Err(Error::parse(i + 1, format!("label `{key}` listed twice")));
            }
        }
        Ok(t)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (l, w) in &self.signatures {
            s.push_str(&format!("{l}\t{}\n", w.join(" ")));
        }
        s.push_str(&format!("{DISTRACTOR_KEY}\t{}\n", self.distractors.join(" ")));
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub samples_per_label: usize,
    /// Most labels on one sample (1 to 3).
    pub max_labels: usize,
    /// Chance of each additional label beyond the first.
    pub extra_label_prob: f64,
    /// Signature words used per assigned label.
    pub signature_draws: usize,
    /// Sentence length range before the final period.
    pub min_len: usize,
    pub max_len: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 7,
            samples_per_label: 50,
            max_labels: 2,
            extra_label_prob: 0.3,
            signature_draws: 1,
            min_len: 6,
            max_len: 10,
        }
    }
}

/// Counts checked after generation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthAudit {
    pub samples: usize,
    pub labels: usize,
    pub min_support: usize,
    pub max_labels_seen: usize,
}

/// Labels spread across pillars: one from each pillar in turn, in file
/// order, until `n` are chosen or the taxonomy runs out.
pub fn spread_labels(tax: &Taxonomy, n: usize) -> Vec<LabelId> {
    let mut queues: Vec<Vec<LabelId>> = tax
        .t1_ids()
        .iter()
        .map(|p| {
            tax.nodes()
                .iter()
                .filter(|node| &node.t1 == p)
                .map(|node| node.t3.clone())
                .rev()
                .collect()
        })
        .collect();
    let mut out = Vec::with_capacity(n);
    while out.len() < n && queues.iter().any(|q| !q.is_empty()) {
        for q in queues.iter_mut() {
            if out.len() == n {
                break;
            }
            if let Some(l) = q.pop() {
                out.push(l);
            }
        }
    }
    out
}

/// Generates `samples_per_label` samples anchored on each label of
/// `labels`, in label order. Each sample may carry up to `max_labels`
/// labels, so every label's support is at least `samples_per_label`.
pub fn synth_corpus(tax: &Taxonomy, labels: &[LabelId], table: &KeywordTable, cfg: &SynthConfig) -> Result<(Corpus, SynthAudit)> {
    if !(1..=3).contains(&cfg.max_labels) {
        return Err(Error::invalid("max_labels must be 1, 2 or 3"));
    }
    if cfg.min_len == 0 || cfg.min_len > cfg.max_len {
        return Err(Error::invalid("bad sentence length range"));
    }
    if table.distractors.is_empty() {
        return Err(Error::invalid("keyword table has no distractors"));
    }
    for l in labels {
        tax.node(l)?;
        match table.signatures.get(l) {
            Some(w) if !w.is_empty() => {}
            _ => return Err(Error::invalid(format!("keyword table has no words for `{l}`"))),
        }
    }
    if labels.is_empty() {
        return Err(Error::NoLabels);
    }
    let mut rng = seeded(derive_seed(cfg.seed, "corpus"));
    let mut samples = Vec::with_capacity(labels.len() * cfg.samples_per_label);
    for (li, primary) in labels.iter().enumerate() {
        for _ in 0..cfg.samples_per_label {
            let mut assigned = vec![primary.clone()];
            for _ in 1..cfg.max_labels {
                if labels.len() > assigned.len() && rng.gen::<f64>() < cfg.extra_label_prob {
                    loop {
                        let other = &labels[pick(&mut rng, labels.len())];
                        if !assigned.contains(other) {
                            assigned.push(other.clone());
                            break;
                        }
                    }
                }
            }
            let len = cfg.min_len + pick(&mut rng, cfg.max_len - cfg.min_len + 1);
            let mut words = Vec::with_capacity(len);
            for l in &assigned {
                let sig = &table.signatures[l];
                for i in sample_distinct(&mut rng, sig.len(), cfg.signature_draws.min(sig.len()).max(1)) {
                    words.push(sig[i].clone());
                }
            }
            while words.len() < len {
                words.push(table.distractors[pick(&mut rng, table.distractors.len())].clone());
            }
            shuffle(&mut words, &mut rng);
            let text = format!("{}.", words.join(" "));
            let id = format!("syn-{:03}-{:05}", li, samples.len());
            samples.push(Sample::new(id, text, assigned));
        }
    }
    let corpus = Corpus::new(samples)?;
    let audit = audit(&corpus, labels, cfg)?;
    Ok((corpus, audit))
}

fn audit(corpus: &Corpus, labels: &[LabelId], cfg: &SynthConfig) -> Result<SynthAudit> {
    let supports = corpus.supports();
    let min_support = labels.iter().map(|l| supports.get(l).copied().unwrap_or(0)).min().unwrap_or(0);
    let max_labels_seen = corpus.iter().map(|s| s.labels.len()).max().unwrap_or(0);
    let n = labels.len() * cfg.samples_per_label;
    let lower = n.div_ceil(cfg.max_labels);
    let ok = min_support >= cfg.samples_per_label
        && max_labels_seen <= cfg.max_labels
        && corpus.len() >= lower
        && corpus.len() <= n;
    if !ok {
        return Err(Error::invalid(format!(
            "synthetic corpus audit failed: {} samples, min support {min_support}, up to {max_labels_seen} labels",
            corpus.len()
        )));
    }
    Ok(SynthAudit {
        samples: corpus.len(),
        labels: labels.len(),
        min_support,
        max_labels_seen,
    })
}

/// Word vectors for the synthetic vocabulary.
///
/// Label-name words get a vector mixing pillar, group and leaf directions
/// (so related labels sit close). Words shared by several label names get a
/// flat negative vector that never wins the max-pool, so each label embedding
/// comes from its own words. Each signature word sits near the max-pool
/// embedding of its label; distractors are random. Every row is finally
/// multiplied by `scale`.
pub fn synth_vectors(tax: &Taxonomy, table: &KeywordTable, dim: usize, noise: f64, scale: f64, seed: u64) -> Result<EmbeddingTable> {
    if dim == 0 {
        return Err(Error::invalid("dim must be positive"));
    }
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::invalid("scale must be positive"));
    }
    let mut rng = seeded(derive_seed(seed, "vectors"));
    let unit = |rng: &mut crate::util::SeededRng| -> Vec<f64> {
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        v.into_iter().map(|x| x / n).collect()
    };
    let mut dirs: BTreeMap<LabelId, Vec<f64>> = BTreeMap::new();
    for id in tax.t1_ids().iter().chain(tax.t2_ids()) {
        dirs.insert(id.clone(), unit(&mut rng));
    }
    let mut uses: BTreeMap<String, usize> = BTreeMap::new();
    for node in tax.nodes() {
        let own: BTreeSet<String> = tax.label_tokens(&node.t3)?.into_iter().collect();
        for tok in own {
            *uses.entry(tok).or_insert(0) += 1;
        }
    }
    let mut rows: Vec<(String, Vec<f64>)> = Vec::new();
    let mut seen = BTreeSet::new();
    for node in tax.nodes() {
        let leaf = unit(&mut rng);
        let (p, g) = (&dirs[&node.t1], &dirs[&node.t2]);
        let v: Vec<f64> = (0..dim).map(|k| 0.5 * p[k] + 0.5 * g[k] + 0.7 * leaf[k]).collect();
        for tok in tax.label_tokens(&node.t3)? {
            if seen.insert(tok.clone()) {
                let row = if uses[&tok] > 1 { vec![-1.0; dim] } else { v.clone() };
                rows.push((tok, row));
            }
        }
    }
    let names = EmbeddingTable::from_rows(dim, rows.clone(), OovPolicy::Zero)?;
    for (label, words) in &table.signatures {
        let e = names.label_embedding(label, tax)?;
        for w in words {
            if seen.insert(w.clone()) {
                let v = e.iter().map(|x| x + noise * rng.gen_range(-1.0..1.0)).collect();
                rows.push((w.clone(), v));
            }
        }
    }
    for w in &table.distractors {
        if seen.insert(w.clone()) {
            let v = unit(&mut rng).into_iter().map(|x| 1.5 * x).collect();
            rows.push((w.clone(), v));
        }
    }
    rows.push((".".to_string(), unit(&mut rng)));
    for (_, v) in &mut rows {
        v.iter_mut().for_each(|x| *x *= scale);
    }
    EmbeddingTable::from_rows(dim, rows, OovPolicy::SubwordHash)
}

/// Parameters of a full synthetic bundle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub labels: usize,
    pub keywords_per_label: usize,
    pub distractors: usize,
    pub dim: usize,
    pub noise: f64,
    pub scale: f64,
    pub corpus: SynthConfig,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            labels: 40,
            keywords_per_label: 3,
            distractors: 60,
            dim: 24,
            noise: 0.1,
            scale: 2.5,
            corpus: SynthConfig::default(),
        }
    }
}

/// Labels, keyword table, corpus and vectors generated from one seed.
#[derive(Clone, Debug)]
pub struct SynthBundle {
    pub labels: Vec<LabelId>,
    pub table: KeywordTable,
    pub corpus: Corpus,
    pub vectors: EmbeddingTable,
    pub audit: SynthAudit,
}

impl SynthBundle {
    pub fn generate(tax: &Taxonomy, spec: &SynthSpec) -> Result<SynthBundle> {
        let seed = spec.corpus.seed;
        let labels = spread_labels(tax, spec.labels);
        let table = KeywordTable::generate(&labels, spec.keywords_per_label, spec.distractors, seed);
        let (corpus, audit) = synth_corpus(tax, &labels, &table, &spec.corpus)?;
        let vectors = synth_vectors(tax, &table, spec.dim, spec.noise, spec.scale, seed)?;
        Ok(SynthBundle {
            labels,
            table,
            corpus,
            vectors,
            audit,
        })
    }

    /// Writes the corpus (JSON lines), keyword table and vectors.
    pub fn write<W1: Write, W2: Write, W3: Write>(&self, corpus_out: W1, table_out: W2, vectors_out: W3) -> Result<()> {
        write_bundle(&self.corpus, &self.table, &self.vectors, corpus_out, table_out, vectors_out)
    }
}

/// Writes corpus, keyword table and vectors as a bundle of text files.
pub fn write_bundle<W1: Write, W2: Write, W3: Write>(
    corpus: &Corpus,
    table: &KeywordTable,
    vectors: &EmbeddingTable,
    corpus_out: W1,
    mut table_out: W2,
    vectors_out: W3,
) -> Result<()> {
    corpus.write_jsonl(corpus_out)?;
    table_out.write_all(table.to_text().as_bytes())?;
    vectors.write_text(vectors_out)
}
