use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use upvtag::corpus::{Corpus, Record, Sample};
use upvtag::model::Model;
use upvtag::sampler::expand_real_simulation;
use upvtag::LabelId;

use crate::error::ServeError;
use crate::sentences::split_sentences;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    pub label: LabelId,
    pub score: f64,
    pub threshold: f64,
    pub suggested: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Accept,
    Reject,
    Add,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub doc_id: String,
    pub idx: usize,
    pub label: LabelId,
    pub action: Action,
    pub seq: u64,
}

/// One line of the gold export: a corpus record plus a review flag.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportRecord {
    #[serde(flatten)]
    pub record: Record,
    /// Set when the final label set is empty.
    pub needs_review: bool,
}

/// A scored document and its decision log.
#[derive(Clone, Debug)]
pub struct DocumentSession {
    pub id: String,
    pub text: String,
    pub sentences: Vec<String>,
    labels: Vec<LabelId>,
    /// `scores[sentence][label]`, in model label order.
    scores: Vec<Vec<f64>>,
    thresholds: Vec<f64>,
    log: Vec<Decision>,
}

impl DocumentSession {
    /// Splits `text` and scores every (sentence, label) pair.
    pub fn predict(model: &Model, id: impl Into<String>, text: &str) -> Result<DocumentSession, ServeError> {
        let id = id.into();
        let sentences = split_sentences(text);
        if sentences.is_empty() {
            return Err(ServeError::EmptyText);
        }
        let table = model.thresholds.as_ref().ok_or(ServeError::NoThresholds)?;
        let labels = model.labels().to_vec();
        let samples = sentences
            .iter()
            .enumerate()
            .map(|(i, s)| Sample::new(format!("{id}-{i:04}"), s.clone(), Vec::new()))
            .collect();
        let corpus = Corpus::new(samples)?;
        let rows = expand_real_simulation(&corpus, model.taxonomy(), &labels)?;
        let flat = model.score_pairs(&rows)?;
        let scores = flat.chunks(labels.len()).map(|c| c.iter().map(|s| s.t3).collect()).collect();
        let thresholds = labels.iter().map(|l| table.get(l)).collect();
        Ok(DocumentSession {
            id,
            text: text.to_string(),
            sentences,
            labels,
            scores,
            thresholds,
            log: Vec::new(),
        })
    }

    pub fn labels(&self) -> &[LabelId] {
        &self.labels
    }

    pub fn log(&self) -> &[Decision] {
        &self.log
    }

    /// All labels of sentence `idx`, highest score first.
    pub fn suggestions(&self, idx: usize) -> Vec<Suggestion> {
        let mut out: Vec<Suggestion> = self
            .labels
            .iter()
            .enumerate()
            .map(|(k, l)| Suggestion {
                label: l.clone(),
                score: self.scores[idx][k],
                threshold: self.thresholds[k],
                suggested: self.scores[idx][k] >= self.thresholds[k],
            })
            .collect();
        out.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.label.cmp(&b.label)));
        out
    }

    pub fn suggested(&self, idx: usize) -> BTreeSet<LabelId> {
        self.labels
            .iter()
            .enumerate()
            .filter(|&(k, _)| self.scores[idx][k] >= self.thresholds[k])
            .map(|(_, l)| l.clone())
            .collect()
    }

    fn label_index(&self, label: &LabelId) -> Result<usize, ServeError> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| ServeError::UnknownLabel(label.to_string()))
    }

    /// Checks a decision against the session without recording it.
    pub fn validate(&self, idx: usize, label: &LabelId, action: Action) -> Result<(), ServeError> {
        if idx >= self.sentences.len() {
            return Err(ServeError::OutOfRange {
                idx,
                len: self.sentences.len(),
            });
        }
        let k = self.label_index(label)?;
        let suggested = self.scores[idx][k] >= self.thresholds[k];
        match action {
            Action::Add if suggested => Err(ServeError::InvalidDecision(format!("`{label}` is already suggested; accept it instead"))),
            Action::Accept if !suggested => Err(ServeError::InvalidDecision(format!("`{label}` is not suggested; add it instead"))),
            _ => Ok(()),
        }
    }

    /// Validates and appends a decision with the next sequence number.
    pub fn apply(&mut self, idx: usize, label: LabelId, action: Action) -> Result<Decision, ServeError> {
        self.validate(idx, &label, action)?;
        let d = Decision {
            doc_id: self.id.clone(),
            idx,
            label,
            action,
            seq: self.log.last().map_or(1, |d| d.seq + 1),
        };
        self.log.push(d.clone());
        Ok(d)
    }

    pub(crate) fn undo_last(&mut self) {
        self.log.pop();
    }

    /// Re-applies a persisted log in sequence order.
    pub fn replay(&mut self, log: &[Decision]) -> Result<(), ServeError> {
        let mut sorted = log.to_vec();
        sorted.sort_by_key(|d| d.seq);
        for d in sorted {
            if d.doc_id != self.id {
                return Err(ServeError::InvalidDecision(format!("decision for `{}` in log of `{}`", d.doc_id, self.id)));
            }
            self.validate(d.idx, &d.label, d.action)?;
            self.log.push(d);
        }
        Ok(())
    }

    /// `(suggested ∖ rejected) ∪ added`, where the latest decision on a
    /// (sentence, label) pair wins.
    pub fn final_labels(&self, idx: usize) -> BTreeSet<LabelId> {
        let mut last: BTreeMap<&LabelId, Action> = BTreeMap::new();
        for d in self.log.iter().filter(|d| d.idx == idx) {
            last.insert(&d.label, d.action);
        }
        let mut set = self.suggested(idx);
        for (l, a) in last {
            match a {
                Action::Reject => {
                    set.remove(l);
                }
                Action::Accept | Action::Add => {
                    set.insert(l.clone());
                }
            }
        }
        set
    }

    pub fn export_records(&self) -> Vec<ExportRecord> {
        (0..self.sentences.len())
            .map(|i| {
                let labels = self.final_labels(i);
                ExportRecord {
                    needs_review: labels.is_empty(),
                    record: Record {
                        id: format!("{}-{i:04}", self.id),
                        text: self.sentences[i].clone(),
                        t3_labels: labels.iter().map(|l| l.to_string()).collect(),
                    },
                }
            })
            .collect()
    }

    /// JSON lines, one record per sentence.
    pub fn export_gold(&self) -> String {
        let mut out = String::new();
        for r in self.export_records() {
            out.push_str(&serde_json::to_string(&r).expect("records serialize"));
            out.push('\n');
        }
        out
    }
}
