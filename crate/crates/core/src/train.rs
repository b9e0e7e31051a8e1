//! Mini-batch training with early stopping, and per-label threshold tuning.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::model::{Model, Scores};
use crate::nn::{weighted_bce, AdamState, Grads, ParamStore};
use crate::sampler::{expand_real_simulation, RatioConfig, TrainingInstance};
use crate::taxonomy::{LabelId, Taxonomy};
use crate::util::{derive_seed_n, seeded, shuffle};

/// Threshold used wherever no tuned value exists.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub ratios: RatioConfig,
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            max_epochs: 70,
            patience: 5,
            learning_rate: 1e-3,
            seed: 0,
            ratios: RatioConfig::default(),
            augment: AugmentConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::invalid("batch_size, max_epochs and patience must be positive"));
        }
        if self.patience > self.max_epochs {
            return Err(Error::invalid(format!(
                "patience {} exceeds max_epochs {}",
                self.patience, self.max_epochs
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        self.augment.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: f64,
    pub dev_f1: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch after which training stopped.
    pub stopping_epoch: usize,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs.iter().find(|e| e.epoch == self.best_epoch)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["epoch", "train_loss", "dev_loss", "dev_f1"])?;
        for e in &self.epochs {
            out.write_record([
                e.epoch.to_string(),
                format!("{:.6}", e.train_loss),
                format!("{:.6}", e.dev_loss),
                format!("{:.6}", e.dev_f1),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Stops after `patience` consecutive epochs without a strictly lower dev
/// loss.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    pub patience: usize,
    best: f64,
    best_epoch: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> EarlyStopping {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            stale: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, loss: f64) -> StopDecision {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            self.stale = 0;
            return StopDecision::Improved;
        }
        self.stale += 1;
        if self.stale >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }
}

/// Dev-set summary computed after each epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DevResult {
    pub loss: f64,
    pub f1: f64,
}

/// Weighted loss and T3 binary F1 (threshold 0.5) of `model` on `dev`.
pub fn dev_metrics(model: &Model, dev: &[TrainingInstance]) -> Result<DevResult> {
    if dev.is_empty() {
        return Ok(DevResult { loss: 0.0, f1: 0.0 });
    }
    let scores = model.score_pairs(dev)?;
    let mut loss = 0.0;
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (inst, s) in dev.iter().zip(&scores) {
        loss += instance_loss(s, inst);
        let pred = s.t3 >= DEFAULT_THRESHOLD;
        match (pred, inst.targets[0] == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            _ => {}
        }
    }
    let f1 = if tp == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fneg) as f64
    };
    Ok(DevResult {
        loss: loss / dev.len() as f64,
        f1,
    })
}

/// `weight * Σ BCE` over the levels the scores carry.
pub fn instance_loss(s: &Scores, inst: &TrainingInstance) -> f64 {
    let mut p = vec![s.t3];
    let mut y = vec![inst.targets[0] as f64];
    if let Some(v) = s.t2 {
        p.push(v);
        y.push(inst.targets[1] as f64);
    }
    if let Some(v) = s.t1 {
        p.push(v);
        y.push(inst.targets[2] as f64);
    }
    weighted_bce(&p, &y, inst.weight)
}

/// Trains with early stopping on the dev loss and restores the parameters
/// of the best epoch.
pub fn train(model: &mut Model, train: &[TrainingInstance], dev: &[TrainingInstance], cfg: &TrainConfig) -> Result<TrainHistory> {
    train_with(model, train, cfg, |_, m| dev_metrics(m, dev))
}

/// [`train`] with the per-epoch dev evaluation supplied by the caller.
pub fn train_with<F>(model: &mut Model, train: &[TrainingInstance], cfg: &TrainConfig, mut monitor: F) -> Result<TrainHistory>
where
    F: FnMut(usize, &Model) -> Result<DevResult>,
{
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::invalid("no training instances"));
    }
    for inst in train {
        if !model.knows(&inst.label) {
            return Err(Error::UnknownLabel(inst.label.to_string()));
        }
    }
    let mut adam = AdamState::new(model.params(), cfg.learning_rate);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best: Option<ParamStore> = None;
    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        let epoch_seed = derive_seed_n(cfg.seed, epoch as u64);
        order.sort_unstable();
        shuffle(&mut order, &mut seeded(epoch_seed));
        let mut loss_sum = 0.0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&TrainingInstance> = idx.iter().map(|&i| &train[i]).collect();
            let (loss, grads) = match model.batch_gradient(&batch, Some(derive_seed_n(epoch_seed, b as u64))) {
                Err(Error::NonFinite(_)) => (f64::NAN, Grads::zeros_like(model.params())),
                other => other?,
            };
            if !loss.is_finite() || !grads.all_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: b + 1,
                    loss,
                });
            }
            adam.update(model.params_mut(), &grads)?;
            loss_sum += loss * batch.len() as f64;
        }
        let dev = monitor(epoch, model)?;
        let rec = EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            dev_loss: dev.loss,
            dev_f1: dev.f1,
        };
        log::info!(
            "epoch {epoch}: train loss {:.5}, dev loss {:.5}, dev f1 {:.4}",
            rec.train_loss,
            rec.dev_loss,
            rec.dev_f1
        );
        history.epochs.push(rec);
        history.stopping_epoch = epoch;
        match stopper.observe(epoch, dev.loss) {
            StopDecision::Improved => best = Some(model.params().clone()),
            StopDecision::Continue => {}
            StopDecision::Stop => break,
        }
    }
    if let Some(p) = best {
        model.params_mut().copy_from(&p)?;
    }
    history.best_epoch = stopper.best_epoch();
    model.meta.seed = cfg.seed;
    model.meta.epochs_run = history.stopping_epoch;
    model.meta.best_epoch = history.best_epoch;
    model.meta.dev_loss = stopper.best_loss().is_finite().then(|| stopper.best_loss());
    Ok(history)
}

/// Per-label decision thresholds for the real-simulation protocol.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ThresholdTable {
    pub thresholds: BTreeMap<LabelId, f64>,
}

impl ThresholdTable {
    pub fn uniform(labels: &[LabelId], t: f64) -> ThresholdTable {
        ThresholdTable {
            thresholds: labels.iter().map(|l| (l.clone(), t)).collect(),
        }
    }

    pub fn get(&self, label: &LabelId) -> f64 {
        self.thresholds.get(label).copied().unwrap_or(DEFAULT_THRESHOLD)
    }

    pub fn covers(&self, labels: &[LabelId]) -> bool {
        labels.iter().all(|l| self.thresholds.contains_key(l))
    }
}

/// F1 of the decision `score >= t` against `gold`.
pub fn f1_at(points: &[(f64, bool)], t: f64) -> f64 {
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for &(s, g) in points {
        match (s >= t, g) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            _ => {}
        }
    }
    if tp == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fneg) as f64
    }
}

/// Candidate thresholds `k * step` strictly inside (0, 1), plus 0.5.
pub fn threshold_grid(step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step < 1.0) {
        return Err(Error::invalid(format!("grid step {step} outside (0, 1)")));
    }
    let n = (1.0 / step).round() as usize;
    let mut grid: Vec<f64> = (1..n).map(|k| k as f64 / n as f64).collect();
    if !grid.contains(&DEFAULT_THRESHOLD) {
        grid.push(DEFAULT_THRESHOLD);
        grid.sort_by(f64::total_cmp);
    }
    Ok(grid)
}

/// The grid threshold maximizing F1 on `points`; ties go to the value
/// closest to 0.5 (the lower one at equal distance). Without positives the
/// default is kept.
pub fn best_threshold(points: &[(f64, bool)], grid: &[f64]) -> f64 {
    if !points.iter().any(|&(_, g)| g) {
        return DEFAULT_THRESHOLD;
    }
    let mut best = (f64::NEG_INFINITY, DEFAULT_THRESHOLD);
    for &t in grid {
        let f = f1_at(points, t);
        let closer = (t - DEFAULT_THRESHOLD).abs() < (best.1 - DEFAULT_THRESHOLD).abs();
        if f > best.0 || (f == best.0 && closer) {
            best = (f, t);
        }
    }
    best.1
}

/// Tunes one threshold per label from `(score, gold)` points.
pub fn tune_from_scores(points: &BTreeMap<LabelId, Vec<(f64, bool)>>, step: f64) -> Result<ThresholdTable> {
    let grid = threshold_grid(step)?;
    Ok(ThresholdTable {
        thresholds: points
            .iter()
            .map(|(l, p)| (l.clone(), best_threshold(p, &grid)))
            .collect(),
    })
}

/// `(T3 score, gold)` points per label of the real-simulation expansion.
pub fn real_simulation_points(
    model: &Model,
    dev: &Corpus,
    tax: &Taxonomy,
) -> Result<BTreeMap<LabelId, Vec<(f64, bool)>>> {
    let rows = expand_real_simulation(dev, tax, model.labels())?;
    let scores = model.score_pairs(&rows)?;
    let mut points: BTreeMap<LabelId, Vec<(f64, bool)>> =
        model.labels().iter().map(|l| (l.clone(), Vec::new())).collect();
    for (r, s) in rows.iter().zip(&scores) {
        points.get_mut(&r.label).expect("trained label").push((s.t3, r.is_positive()));
    }
    Ok(points)
}

/// Tunes per-label thresholds on the real-simulation expansion of `dev`.
pub fn tune_thresholds(model: &Model, dev: &Corpus, tax: &Taxonomy, step: f64) -> Result<ThresholdTable> {
    tune_from_scores(&real_simulation_points(model, dev, tax)?, step)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stopping_rule() {
        let mut s = EarlyStopping::new(5);
        let seq = [3.0, 2.0, 2.0, 2.0, 2.0, 2.0, 2.0];
        let mut stopped = None;
        for (i, &l) in seq.iter().enumerate() {
            if s.observe(i + 1, l) == StopDecision::Stop {
                stopped = Some(i + 1);
                break;
            }
        }
        assert_eq!(stopped, Some(7));
        assert_eq!(s.best_epoch(), 2);
    }

    #[test]
    fn grid_contents() {
        let g = threshold_grid(0.01).unwrap();
        assert_eq!(g.len(), 99);
        assert_eq!(g[0], 0.01);
        assert_eq!(g[98], 0.99);
        assert!(g.contains(&0.5));
        assert!(threshold_grid(0.3).unwrap().contains(&0.5));
        assert!(threshold_grid(0.0).is_err());
    }

    #[test]
    fn separated_scores_keep_half() {
        let pts = vec![(0.95, true), (0.9, true), (0.1, false), (0.05, false)];
        assert_eq!(best_threshold(&pts, &threshold_grid(0.01).unwrap()), 0.5);
    }

    #[test]
    fn single_low_positive() {
        let pts = vec![(0.3, true), (0.2, false), (0.1, false), (0.15, false)];
        let g = threshold_grid(0.01).unwrap();
        for &t in &g {
            let f = f1_at(&pts, t);
            assert_eq!(f == 1.0, t > 0.2 && t <= 0.3, "t={t}");
        }
        assert_eq!(best_threshold(&pts, &g), 0.3);
    }

    #[test]
    fn no_positive_keeps_default() {
        let pts = vec![(0.7, false), (0.2, false)];
        assert_eq!(best_threshold(&pts, &threshold_grid(0.01).unwrap()), 0.5);
    }

    #[test]
    fn equal_distance_prefers_lower() {
        let pts = vec![(0.75, true), (0.2, false)];
        let grid = [0.25, 0.75];
        assert_eq!(best_threshold(&pts, &grid), 0.25);
    }

    #[test]
    fn history_csv() {
        let h = TrainHistory {
            epochs: vec![EpochRecord {
                epoch: 1,
                train_loss: 0.5,
                dev_loss: 0.25,
                dev_f1: 1.0,
            }],
            stopping_epoch: 1,
            best_epoch: 1,
        };
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "epoch,train_loss,dev_loss,dev_f1\n1,0.500000,0.250000,1.000000\n"
        );
    }
}
