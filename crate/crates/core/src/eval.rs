//! Precision, recall, F1 and ROC/AUC under the two evaluation protocols.
//!
//! `test_set` scores the ratio-controlled instance expansion and decides
//! relatedness at 0.5 per level. `real_simulation` scores every sample
//! against every trained label, applies per-label thresholds to get a
//! predicted label set, and compares sets.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::model::{Heads, Model, Scores};
use crate::sampler::{expand_real_simulation, make_test_set_instances, RatioConfig, TrainingInstance};
use crate::taxonomy::{LabelId, Taxonomy};
use crate::train::{ThresholdTable, DEFAULT_THRESHOLD};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    TestSet,
    RealSimulation,
}

impl Protocol {
    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::TestSet => "test_set",
            Protocol::RealSimulation => "real_simulation",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Protocol> {
        match s {
            "test_set" => Ok(Protocol::TestSet),
            "real_simulation" => Ok(Protocol::RealSimulation),
            _ => Err(Error::invalid(format!("unknown protocol `{s}`"))),
        }
    }
}

/// Anything that scores (sentence, label) pairs.
pub trait Scorer: Sync {
    fn labels(&self) -> &[LabelId];
    fn heads(&self) -> Heads;
    fn score(&self, items: &[TrainingInstance]) -> Result<Vec<Scores>>;
}

impl Scorer for Model {
    fn labels(&self) -> &[LabelId] {
        Model::labels(self)
    }

    fn heads(&self) -> Heads {
        self.config().heads
    }

    fn score(&self, items: &[TrainingInstance]) -> Result<Vec<Scores>> {
        self.score_pairs(items)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Counts {
    pub fn add(&mut self, pred: bool, gold: bool) {
        match (pred, gold) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => {}
        }
    }

    pub fn prf(&self) -> Prf {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(self.tp, self.tp + self.fp);
        let recall = ratio(self.tp, self.tp + self.fn_);
        Prf::new(precision, recall)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn new(precision: f64, recall: f64) -> Prf {
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Prf { precision, recall, f1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelMetrics {
    pub label: LabelId,
    pub counts: Counts,
    pub prf: Prf,
    /// Gold positives.
    pub support: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
}

/// Per-label and aggregate scores at one taxonomy level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    pub per_label: Vec<LabelMetrics>,
    pub micro: Prf,
    /// Unweighted mean over labels with gold support.
    #[serde(rename = "macro")]
    pub macro_: Prf,
    pub counts: Counts,
}

impl LevelReport {
    pub fn label(&self, l: &LabelId) -> Option<&LabelMetrics> {
        self.per_label.iter().find(|m| &m.label == l)
    }
}

/// Aggregates per-label confusion counts. `labels` fixes the row order.
pub fn level_from_counts(labels: &[LabelId], counts: &BTreeMap<LabelId, Counts>) -> LevelReport {
    let mut total = Counts::default();
    let mut per_label = Vec::with_capacity(labels.len());
    let (mut sp, mut sr, mut sf, mut n) = (0.0, 0.0, 0.0, 0usize);
    for l in labels {
        let c = counts.get(l).copied().unwrap_or_default();
        total.tp += c.tp;
        total.fp += c.fp;
        total.fn_ += c.fn_;
        let prf = c.prf();
        let support = c.tp + c.fn_;
        if support > 0 {
            sp += prf.precision;
            sr += prf.recall;
            sf += prf.f1;
            n += 1;
        }
        per_label.push(LabelMetrics {
            label: l.clone(),
            counts: c,
            prf,
            support,
            auc: None,
            threshold: None,
        });
    }
    let macro_ = if n == 0 {
        Prf::default()
    } else {
        Prf {
            precision: sp / n as f64,
            recall: sr / n as f64,
            f1: sf / n as f64,
        }
    };
    LevelReport {
        per_label,
        micro: total.prf(),
        macro_,
        counts: total,
    }
}

/// P/R/F1 of predicted label sets against gold label sets over `labels`.
pub fn prf(predicted: &[BTreeSet<LabelId>], gold: &[BTreeSet<LabelId>], labels: &[LabelId]) -> Result<LevelReport> {
    if predicted.len() != gold.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} gold sets",
            predicted.len(),
            gold.len()
        )));
    }
    let mut counts: BTreeMap<LabelId, Counts> = BTreeMap::new();
    for (p, g) in predicted.iter().zip(gold) {
        for l in labels {
            counts.entry(l.clone()).or_default().add(p.contains(l), g.contains(l));
        }
    }
    Ok(level_from_counts(labels, &counts))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub label: LabelId,
    /// `(fpr, tpr)` from `(0, 0)` to `(1, 1)`.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

/// ROC over the distinct scores, highest first, with trapezoidal AUC.
/// Tied scores move both rates at once, which credits ties with one half.
pub fn roc(label: &LabelId, points: &[(f64, bool)]) -> Result<RocCurve> {
    let pos = points.iter().filter(|p| p.1).count();
    let neg = points.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::DegenerateLabel(label.to_string()));
    }
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut curve = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auc = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let s = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == s {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let (x0, y0) = *curve.last().expect("starts at origin");
        let x = fp as f64 / neg as f64;
        let y = tp as f64 / pos as f64;
        auc += (x - x0) * (y + y0) / 2.0;
        curve.push((x, y));
    }
    Ok(RocCurve {
        label: label.clone(),
        points: curve,
        auc,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub protocol: Protocol,
    pub t3: LevelReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t2: Option<LevelReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t1: Option<LevelReport>,
    pub roc: Vec<RocCurve>,
    /// Labels whose ROC curve was omitted, with the reason.
    pub notices: Vec<String>,
    pub instances: usize,
}

impl MetricsReport {
    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }

    /// One row per T3 label: `label,t1,precision,recall,f1,support,auc,threshold`.
    pub fn write_csv<W: Write>(&self, w: W, tax: &Taxonomy) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["label", "t1", "precision", "recall", "f1", "support", "auc", "threshold"])?;
        for m in &self.t3.per_label {
            let t1 = tax.t1_of(&m.label).map(|t| t.to_string()).unwrap_or_default();
            out.write_record([
                m.label.to_string(),
                t1,
                format!("{:.6}", m.prf.precision),
                format!("{:.6}", m.prf.recall),
                format!("{:.6}", m.prf.f1),
                m.support.to_string(),
                m.auc.map(|a| format!("{a:.6}")).unwrap_or_default(),
                m.threshold.map(|t| format!("{t:.2}")).unwrap_or_default(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Long-format ROC points: `label,fpr,tpr`.
    pub fn write_roc_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["label", "fpr", "tpr"])?;
        for c in &self.roc {
            for (x, y) in &c.points {
                out.write_record([c.label.to_string(), format!("{x:.6}"), format!("{y:.6}")])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Scores `corpus` under `protocol`.
///
/// `thresholds` is required for `real_simulation` and must cover every
/// scorer label; `test_set` decides at 0.5 and uses `ratios` and `seed` to
/// build its instances.
pub fn evaluate(
    scorer: &dyn Scorer,
    corpus: &Corpus,
    tax: &Taxonomy,
    protocol: Protocol,
    thresholds: Option<&ThresholdTable>,
    ratios: RatioConfig,
    seed: u64,
) -> Result<MetricsReport> {
    let labels = scorer.labels().to_vec();
    match protocol {
        Protocol::TestSet => {
            let (items, _) = make_test_set_instances(corpus, tax, &labels, ratios, seed)?;
            let scores = scorer.score(&items)?;
            Ok(test_set_report(&items, &scores, &labels, tax, scorer.heads()))
        }
        Protocol::RealSimulation => {
            let th = thresholds.ok_or_else(|| Error::invalid("real_simulation needs a threshold table"))?;
            if !th.covers(&labels) {
                return Err(Error::invalid("threshold table does not cover every label"));
            }
            let items = expand_real_simulation(corpus, tax, &labels)?;
            let scores = scorer.score(&items)?;
            real_simulation_report(corpus, &items, &scores, &labels, tax, th, scorer.heads())
        }
    }
}

fn group_levels(labels: &[LabelId], tax: &Taxonomy) -> (Vec<LabelId>, Vec<LabelId>) {
    let mut t2 = Vec::new();
    let mut t1 = Vec::new();
    for l in labels {
        if let Ok(g) = tax.t2_of(l) {
            if !t2.contains(g) {
                t2.push(g.clone());
            }
        }
        if let Ok(p) = tax.t1_of(l) {
            if !t1.contains(p) {
                t1.push(p.clone());
            }
        }
    }
    (t2, t1)
}

fn attach_roc(level: &mut LevelReport, points: &BTreeMap<LabelId, Vec<(f64, bool)>>) -> (Vec<RocCurve>, Vec<String>) {
    let mut curves = Vec::new();
    let mut notices = Vec::new();
    for m in &mut level.per_label {
        let pts = points.get(&m.label).map(Vec::as_slice).unwrap_or(&[]);
        match roc(&m.label, pts) {
            Ok(c) => {
                m.auc = Some(c.auc);
                curves.push(c);
            }
            Err(e) => notices.push(e.to_string()),
        }
    }
    (curves, notices)
}

/// `test_set` metrics from already-scored instances. T2 and T1 rows group
/// instances by the candidate label's group and pillar and use the
/// corresponding head output and target.
pub fn test_set_report(
    items: &[TrainingInstance],
    scores: &[Scores],
    labels: &[LabelId],
    tax: &Taxonomy,
    heads: Heads,
) -> MetricsReport {
    let mut c3: BTreeMap<LabelId, Counts> = BTreeMap::new();
    let mut c2: BTreeMap<LabelId, Counts> = BTreeMap::new();
    let mut c1: BTreeMap<LabelId, Counts> = BTreeMap::new();
    let mut pts: BTreeMap<LabelId, Vec<(f64, bool)>> = BTreeMap::new();
    for (it, s) in items.iter().zip(scores) {
        let gold3 = it.targets[0] == 1;
        c3.entry(it.label.clone()).or_default().add(s.t3 >= DEFAULT_THRESHOLD, gold3);
        pts.entry(it.label.clone()).or_default().push((s.t3, gold3));
        if let (Some(p), Ok(g)) = (s.t2, tax.t2_of(&it.label)) {
            c2.entry(g.clone()).or_default().add(p >= DEFAULT_THRESHOLD, it.targets[1] == 1);
        }
        if let (Some(p), Ok(g)) = (s.t1, tax.t1_of(&it.label)) {
            c1.entry(g.clone()).or_default().add(p >= DEFAULT_THRESHOLD, it.targets[2] == 1);
        }
    }
    let (l2, l1) = group_levels(labels, tax);
    let mut t3 = level_from_counts(labels, &c3);
    let (roc, notices) = attach_roc(&mut t3, &pts);
    MetricsReport {
        protocol: Protocol::TestSet,
        t3,
        t2: heads.has_t2().then(|| level_from_counts(&l2, &c2)),
        t1: heads.has_t1().then(|| level_from_counts(&l1, &c1)),
        roc,
        notices,
        instances: items.len(),
    }
}

/// `real_simulation` metrics from already-scored expansion rows (in the
/// order produced by [`expand_real_simulation`]). Predicted sets are the
/// labels scoring at or above their threshold; T2 and T1 sets map the T3
/// sets upward.
pub fn real_simulation_report(
    corpus: &Corpus,
    items: &[TrainingInstance],
    scores: &[Scores],
    labels: &[LabelId],
    tax: &Taxonomy,
    thresholds: &ThresholdTable,
    heads: Heads,
) -> Result<MetricsReport> {
    if items.len() != corpus.len() * labels.len() || scores.len() != items.len() {
        return Err(Error::Shape("real_simulation rows do not match corpus x labels".into()));
    }
    let known: BTreeSet<&LabelId> = labels.iter().collect();
    let mut pred3 = Vec::with_capacity(corpus.len());
    let mut gold3 = Vec::with_capacity(corpus.len());
    let mut pts: BTreeMap<LabelId, Vec<(f64, bool)>> = BTreeMap::new();
    for (k, s) in corpus.iter().enumerate() {
        let rows = k * labels.len()..(k + 1) * labels.len();
        let mut p = BTreeSet::new();
        for (it, sc) in items[rows.clone()].iter().zip(&scores[rows]) {
            if sc.t3 >= thresholds.get(&it.label) {
                p.insert(it.label.clone());
            }
            pts.entry(it.label.clone()).or_default().push((sc.t3, it.is_positive()));
        }
        pred3.push(p);
        gold3.push(s.labels.iter().filter(|l| known.contains(l)).cloned().collect::<BTreeSet<_>>());
    }
    let up = |sets: &[BTreeSet<LabelId>], f: &dyn Fn(&LabelId) -> Result<LabelId>| -> Result<Vec<BTreeSet<LabelId>>> {
        sets.iter().map(|s| s.iter().map(f).collect::<Result<BTreeSet<_>>>()).collect()
    };
    let to_t2 = |l: &LabelId| tax.t2_of(l).cloned();
    let to_t1 = |l: &LabelId| tax.t1_of(l).cloned();
    let (l2, l1) = group_levels(labels, tax);

    let mut t3 = prf(&pred3, &gold3, labels)?;
    for m in &mut t3.per_label {
        m.threshold = Some(thresholds.get(&m.label));
    }
    let (roc, notices) = attach_roc(&mut t3, &pts);
    let t2 = if heads.has_t2() {
        Some(prf(&up(&pred3, &to_t2)?, &up(&gold3, &to_t2)?, &l2)?)
    } else {
        None
    };
    let t1 = if heads.has_t1() {
        Some(prf(&up(&pred3, &to_t1)?, &up(&gold3, &to_t1)?, &l1)?)
    } else {
        None
    };
    Ok(MetricsReport {
        protocol: Protocol::RealSimulation,
        t3,
        t2,
        t1,
        roc,
        notices,
        instances: items.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(s: &str) -> LabelId {
        LabelId::from(s)
    }

    fn set(ls: &[&str]) -> BTreeSet<LabelId> {
        ls.iter().map(|l| id(l)).collect()
    }

    #[test]
    fn perfect_predictions() {
        let labels = vec![id("a"), id("b")];
        let g = vec![set(&["a"]), set(&["a", "b"])];
        let r = prf(&g, &g, &labels).unwrap();
        assert_eq!(r.micro, Prf::new(1.0, 1.0));
        assert_eq!(r.macro_.f1, 1.0);
    }

    #[test]
    fn one_of_each() {
        let labels = vec![id("a")];
        let pred = vec![set(&["a"]), set(&["a"]), set(&[])];
        let gold = vec![set(&["a"]), set(&[]), set(&["a"])];
        let r = prf(&pred, &gold, &labels).unwrap();
        let m = &r.per_label[0].prf;
        assert_eq!((m.precision, m.recall, m.f1), (0.5, 0.5, 0.5));
    }

    #[test]
    fn length_mismatch() {
        assert!(prf(&[set(&[])], &[], &[id("a")]).is_err());
    }

    #[test]
    fn hand_auc() {
        let pts = [(0.9, true), (0.8, true), (0.4, true), (0.7, false), (0.3, false), (0.1, false)];
        let c = roc(&id("x"), &pts).unwrap();
        // .9 and .8 beat all three negatives, .4 beats two of them
        assert!((c.auc - 8.0 / 9.0).abs() < 1e-12);
        assert_eq!(c.points.first(), Some(&(0.0, 0.0)));
        assert_eq!(c.points.last(), Some(&(1.0, 1.0)));
    }

    #[test]
    fn auc_extremes() {
        let sep = [(0.9, true), (0.8, true), (0.2, false)];
        assert_eq!(roc(&id("x"), &sep).unwrap().auc, 1.0);
        let flat = [(0.5, true), (0.5, false), (0.5, false), (0.5, true)];
        assert_eq!(roc(&id("x"), &flat).unwrap().auc, 0.5);
        assert!(matches!(roc(&id("x"), &[(0.1, true)]), Err(Error::DegenerateLabel(_))));
    }

    #[test]
    fn protocol_names() {
        for p in [Protocol::TestSet, Protocol::RealSimulation] {
            assert_eq!(p.as_str().parse::<Protocol>().unwrap(), p);
        }
    }
}
