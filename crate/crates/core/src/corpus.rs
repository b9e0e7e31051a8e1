//! Annotated sentences: tokenization, JSON-lines ingestion, splitting,
//! support filtering and descriptive statistics.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::taxonomy::{LabelId, Taxonomy};
use crate::util::{seeded, shuffle};

/// Shortest sentence, in tokens, kept at ingestion.
pub const MIN_TOKENS: usize = 3;

/// Rule-based tokenizer: lowercase, split on whitespace, then detach each
/// leading and trailing non-alphanumeric character as its own token.
/// Interior apostrophes and hyphens stay attached.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let chars: Vec<char> = chunk.chars().collect();
        let start = chars.iter().position(|c| c.is_alphanumeric());
        let Some(start) = start else {
            out.extend(chars.iter().map(|c| c.to_string()));
            continue;
        };
        let end = chars.iter().rposition(|c| c.is_alphanumeric()).unwrap() + 1;
        out.extend(chars[..start].iter().map(|c| c.to_string()));
        out.push(chars[start..end].iter().collect::<String>().to_lowercase());
        out.extend(chars[end..].iter().map(|c| c.to_string()));
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sample {
    pub id: String,
    pub text: String,
    pub tokens: Vec<String>,
    /// Gold labels, deduplicated, in file order.
    pub labels: Vec<LabelId>,
}

impl Sample {
    pub fn new(id: impl Into<String>, text: impl Into<String>, labels: Vec<LabelId>) -> Sample {
        let text = text.into();
        let mut seen = HashSet::new();
        let labels = labels.into_iter().filter(|l| seen.insert(l.clone())).collect();
        Sample {
            id: id.into(),
            tokens: tokenize(&text),
            text,
            labels,
        }
    }

    pub fn has_label(&self, label: &LabelId) -> bool {
        self.labels.contains(label)
    }
}

/// One line of the JSON-lines corpus format.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    pub text: String,
    pub t3_labels: Vec<String>,
}

impl From<&Sample> for Record {
    fn from(s: &Sample) -> Self {
        Record {
            id: s.id.clone(),
            text: s.text.clone(),
            t3_labels: s.labels.iter().map(|l| l.to_string()).collect(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Corpus {
    samples: Vec<Sample>,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct LoadOptions {
    /// Skip unknown labels with a warning instead of failing.
    pub lenient: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub dropped_short: usize,
    pub dropped_unlabeled: usize,
    /// `(line, label)` for every unknown label skipped under `lenient`.
    pub skipped_labels: Vec<(usize, String)>,
}

impl Corpus {
    /// Builds a corpus, rejecting duplicate ids.
    pub fn new(samples: Vec<Sample>) -> Result<Corpus> {
        let mut ids = HashSet::new();
        for s in &samples {
            if !ids.insert(s.id.as_str()) {
                return Err(Error::DuplicateId(s.id.clone()));
            }
        }
        Ok(Corpus { samples })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Sample> {
        self.samples.iter()
    }

    /// Reads the JSON-lines format. Samples shorter than [`MIN_TOKENS`] or
    /// left without labels are dropped and counted in the report.
    pub fn load<R: BufRead>(reader: R, tax: &Taxonomy, opts: LoadOptions) -> Result<(Corpus, LoadReport)> {
        let mut report = LoadReport::default();
        let mut samples = Vec::new();
        let mut ids = HashSet::new();
        for (i, line) in reader.lines().enumerate() {
            let line_no = i + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record =
                serde_json::from_str(&line).map_err(|e| Error::parse(line_no, format!("malformed record: {e}")))?;
            if !ids.insert(rec.id.clone()) {
                return Err(Error::parse(line_no, format!("duplicate id `{}`", rec.id)));
            }
            let mut labels = Vec::with_capacity(rec.t3_labels.len());
            for raw in &rec.t3_labels {
                let label = LabelId::from_name(raw);
                if tax.contains(&label) {
                    labels.push(label);
                } else if opts.lenient {
                    log::warn!("line {line_no}: skipping unknown label `{raw}`");
                    report.skipped_labels.push((line_no, raw.clone()));
                } else {
                    return Err(Error::parse(line_no, format!("unknown label `{raw}`")));
                }
            }
            let sample = Sample::new(rec.id, rec.text, labels);
            if sample.tokens.len() < MIN_TOKENS {
                report.dropped_short += 1;
            } else if sample.labels.is_empty() {
                report.dropped_unlabeled += 1;
            } else {
                samples.push(sample);
            }
        }
        Ok((Corpus { samples }, report))
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for s in &self.samples {
            serde_json::to_writer(&mut w, &Record::from(s))?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("utf-8")
    }

    /// Shuffles with the seed, then takes the train share and the next
    /// `dev_count` samples as dev; the rest is test.
    pub fn split(&self, spec: &SplitSpec) -> Result<Split> {
        let n = self.samples.len();
        let n_train = spec.train_size(n)?;
        let heldout = n - n_train;
        if spec.dev_count > heldout {
            return Err(Error::invalid(format!(
                "dev_count {} exceeds heldout size {heldout}",
                spec.dev_count
            )));
        }
        let mut order: Vec<usize> = (0..n).collect();
        shuffle(&mut order, &mut seeded(spec.seed));
        let pick = |range: &[usize]| Corpus {
            samples: range.iter().map(|&i| self.samples[i].clone()).collect(),
        };
        Ok(Split {
            train: pick(&order[..n_train]),
            dev: pick(&order[n_train..n_train + spec.dev_count]),
            test: pick(&order[n_train + spec.dev_count..]),
        })
    }

    /// Label supports, counting each label once per sample.
    pub fn supports(&self) -> BTreeMap<LabelId, usize> {
        let mut counts = BTreeMap::new();
        for s in &self.samples {
            for l in &s.labels {
                *counts.entry(l.clone()).or_insert(0) += 1;
            }
        }
        counts
    }

    /// Removes labels whose support is not strictly above `min_support`, then
    /// drops samples left without labels. Returns the rejected labels sorted.
    pub fn filter_by_support(&self, min_support: usize) -> (Corpus, Vec<LabelId>) {
        let supports = self.supports();
        let rejected: Vec<LabelId> = supports
            .iter()
            .filter(|&(_, &c)| c <= min_support)
            .map(|(l, _)| l.clone())
            .collect();
        if rejected.is_empty() {
            return (self.clone(), rejected);
        }
        let drop: HashSet<&LabelId> = rejected.iter().collect();
        let samples = self
            .samples
            .iter()
            .filter_map(|s| {
                let labels: Vec<LabelId> = s.labels.iter().filter(|l| !drop.contains(l)).cloned().collect();
                (!labels.is_empty()).then(|| Sample { labels, ..s.clone() })
            })
            .collect();
        (Corpus { samples }, rejected)
    }

    /// Labels present in the corpus, in taxonomy order.
    pub fn label_set(&self, tax: &Taxonomy) -> Vec<LabelId> {
        let present = self.supports();
        tax.t3_ids().filter(|l| present.contains_key(*l)).cloned().collect()
    }

    pub fn stats(&self) -> Result<CorpusStats> {
        CorpusStats::compute(self)
    }
}

impl<'a> IntoIterator for &'a Corpus {
    type Item = &'a Sample;
    type IntoIter = std::slice::Iter<'a, Sample>;

    fn into_iter(self) -> Self::IntoIter {
        self.samples.iter()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainSize {
    /// Share of the corpus, rounded to the nearest sample.
    Fraction(f64),
    Count(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: TrainSize,
    pub dev_count: usize,
    pub seed: u64,
}

impl SplitSpec {
    pub fn fraction(train_fraction: f64, dev_count: usize, seed: u64) -> SplitSpec {
        SplitSpec {
            train: TrainSize::Fraction(train_fraction),
            dev_count,
            seed,
        }
    }

    fn train_size(&self, n: usize) -> Result<usize> {
        match self.train {
            TrainSize::Fraction(f) if f > 0.0 && f < 1.0 => Ok(((n as f64) * f).round() as usize),
            TrainSize::Fraction(f) => Err(Error::invalid(format!("train fraction {f} is outside (0, 1)"))),
            TrainSize::Count(c) if c <= n => Ok(c),
            TrainSize::Count(c) => Err(Error::invalid(format!("train count {c} exceeds corpus size {n}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Corpus,
    pub dev: Corpus,
    pub test: Corpus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub samples: usize,
    /// Labels present, sorted by id.
    pub labels: Vec<LabelId>,
    pub supports: Vec<usize>,
    /// Support as a percentage of the sample count.
    pub percents: Vec<f64>,
    pub avg_tokens: f64,
    /// Fraction of samples with more than one label.
    pub frac_multi: f64,
    /// Fraction of samples with more than two labels.
    pub frac_gt2: f64,
    /// `cooccurrence[i][j]` counts samples carrying both labels; the diagonal
    /// holds each label's own support.
    pub cooccurrence: Vec<Vec<usize>>,
}

#[derive(Clone)]
struct Partial {
    tokens: usize,
    multi: usize,
    gt2: usize,
    cooc: Vec<usize>,
}

impl CorpusStats {
    pub fn compute(corpus: &Corpus) -> Result<CorpusStats> {
        if corpus.is_empty() {
            return Err(Error::invalid("statistics need a non-empty corpus"));
        }
        let labels: Vec<LabelId> = corpus.supports().into_keys().collect();
        let index: BTreeMap<&LabelId, usize> = labels.iter().enumerate().map(|(i, l)| (l, i)).collect();
        let k = labels.len();

        // Integer counts per chunk merge exactly, so the parallel result
        // equals the serial one.
        let chunks: Vec<&[Sample]> = corpus.samples.chunks(256).collect();
        let partials = par::map(&chunks, |chunk| {
            let mut p = Partial {
                tokens: 0,
                multi: 0,
                gt2: 0,
                cooc: vec![0; k * k],
            };
            for s in chunk.iter() {
                p.tokens += s.tokens.len();
                p.multi += usize::from(s.labels.len() > 1);
                p.gt2 += usize::from(s.labels.len() > 2);
                let idx: Vec<usize> = s.labels.iter().map(|l| index[l]).collect();
                for &a in &idx {
                    for &b in &idx {
                        p.cooc[a * k + b] += 1;
                    }
                }
            }
            p
        });
        let mut total = Partial {
            tokens: 0,
            multi: 0,
            gt2: 0,
            cooc: vec![0; k * k],
        };
        for p in partials {
            total.tokens += p.tokens;
            total.multi += p.multi;
            total.gt2 += p.gt2;
            for (t, c) in total.cooc.iter_mut().zip(p.cooc) {
                *t += c;
            }
        }
        let n = corpus.len();
        let cooccurrence: Vec<Vec<usize>> = total.cooc.chunks(k.max(1)).map(<[usize]>::to_vec).take(k).collect();
        let supports: Vec<usize> = (0..k).map(|i| cooccurrence[i][i]).collect();
        Ok(CorpusStats {
            samples: n,
            percents: supports.iter().map(|&c| 100.0 * c as f64 / n as f64).collect(),
            supports,
            labels,
            avg_tokens: total.tokens as f64 / n as f64,
            frac_multi: total.multi as f64 / n as f64,
            frac_gt2: total.gt2 as f64 / n as f64,
            cooccurrence,
        })
    }

    pub fn support_of(&self, label: &LabelId) -> usize {
        self.labels
            .iter()
            .position(|l| l == label)
            .map(|i| self.supports[i])
            .unwrap_or(0)
    }

    /// `label,support,percent`
    pub fn write_support_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["label", "support", "percent"])?;
        for ((l, s), p) in self.labels.iter().zip(&self.supports).zip(&self.percents) {
            out.write_record([l.as_str(), &s.to_string(), &format!("{p:.4}")])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Square matrix with a header row and column of label ids.
    pub fn write_cooccurrence_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["label".to_string()];
        header.extend(self.labels.iter().map(|l| l.to_string()));
        out.write_record(&header)?;
        for (l, row) in self.labels.iter().zip(&self.cooccurrence) {
            let mut rec = vec![l.to_string()];
            rec.extend(row.iter().map(|c| c.to_string()));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }
}
