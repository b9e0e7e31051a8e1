//! End-to-end runs: sample, train, tune thresholds, evaluate. The ratio
//! sweep repeats a run once per negative-ratio configuration.

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::augment::Resources;
use crate::corpus::{Corpus, Split};
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::eval::{evaluate, LevelReport, MetricsReport, Protocol};
use crate::model::{Model, ModelConfig};
use crate::sampler::{generate_training_instances, make_test_set_instances, Augmenter, RatioConfig, SamplerReport};
use crate::taxonomy::{LabelId, Taxonomy};
use crate::train::{train, tune_thresholds, TrainConfig, TrainHistory};
use crate::util::derive_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Ratios for the dev and `test_set` expansions. Kept apart from the
    /// training ratios so a sweep changes only what the model sees.
    pub eval_ratios: RatioConfig,
    pub threshold_step: f64,
    /// Deform negative text while sampling.
    pub augment: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: ModelConfig::text(),
            train: TrainConfig::default(),
            eval_ratios: RatioConfig::default(),
            threshold_step: 0.01,
            augment: true,
        }
    }
}

pub struct Fitted {
    pub model: Model,
    pub history: TrainHistory,
    pub sampler: SamplerReport,
}

/// Trains on `train`, stops early on the `dev` expansion and tunes per-label
/// thresholds on the real-simulation expansion of `dev`. The returned model
/// carries its thresholds.
pub fn fit(
    tax: &Arc<Taxonomy>,
    emb: &Arc<EmbeddingTable>,
    labels: &[LabelId],
    train_set: &Corpus,
    dev: &Corpus,
    resources: &Resources,
    cfg: &ExperimentConfig,
) -> Result<Fitted> {
    let seed = cfg.train.seed;
    let augmenter = cfg.augment.then_some(Augmenter {
        config: &cfg.train.augment,
        resources,
    });
    let (train_items, sampler) = generate_training_instances(
        train_set,
        tax,
        labels,
        cfg.train.ratios,
        augmenter,
        derive_seed(seed, "sample-train"),
    )?;
    let (dev_items, _) = make_test_set_instances(dev, tax, labels, cfg.eval_ratios, derive_seed(seed, "sample-dev"))?;
    log::info!(
        "{} training instances ({} positives), {} dev instances",
        train_items.len(),
        sampler.positives,
        dev_items.len()
    );
    let mut mc = cfg.model.clone();
    mc.init_seed = derive_seed(seed, "init");
    let mut model = Model::new(mc, tax.clone(), emb.clone(), labels.to_vec())?;
    let history = train(&mut model, &train_items, &dev_items, &cfg.train)?;
    model.thresholds = Some(tune_thresholds(&model, dev, tax, cfg.threshold_step)?);
    Ok(Fitted {
        model,
        history,
        sampler,
    })
}

/// Both protocol reports for a fitted model.
pub fn evaluate_both(model: &Model, test: &Corpus, tax: &Taxonomy, eval_ratios: RatioConfig, seed: u64) -> Result<[MetricsReport; 2]> {
    let ts = evaluate(model, test, tax, Protocol::TestSet, None, eval_ratios, derive_seed(seed, "sample-test"))?;
    let rs = evaluate(
        model,
        test,
        tax,
        Protocol::RealSimulation,
        model.thresholds.as_ref(),
        eval_ratios,
        seed,
    )?;
    Ok([ts, rs])
}

/// Macro P/R/F1 per level; T2 and T1 are absent without the matching head.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub t3: crate::eval::Prf,
    pub t2: Option<crate::eval::Prf>,
    pub t1: Option<crate::eval::Prf>,
}

impl LevelSummary {
    pub fn of(r: &MetricsReport) -> LevelSummary {
        let m = |l: &LevelReport| l.macro_;
        LevelSummary {
            t3: m(&r.t3),
            t2: r.t2.as_ref().map(m),
            t1: r.t1.as_ref().map(m),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub total: usize,
    pub ratios: RatioConfig,
    pub best_epoch: usize,
    pub test_set: LevelSummary,
    pub real_simulation: LevelSummary,
}

/// Sweep triples for the given totals, from [`crate::sampler::SWEEP_TABLE`].
pub fn ratios_for_totals(totals: &[usize]) -> Result<Vec<RatioConfig>> {
    totals
        .iter()
        .map(|&t| RatioConfig::for_total(t).ok_or_else(|| Error::invalid(format!("no sweep triple for total {t}"))))
        .collect()
}

/// Trains one model per ratio configuration on the same split and reports
/// macro scores per level under both protocols.
pub fn ratio_sweep(
    tax: &Arc<Taxonomy>,
    emb: &Arc<EmbeddingTable>,
    labels: &[LabelId],
    split: &Split,
    resources: &Resources,
    cfg: &ExperimentConfig,
    ratios: &[RatioConfig],
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(ratios.len());
    for &r in ratios {
        let mut c = cfg.clone();
        c.train.ratios = r;
        log::info!("sweep: ratios {}/{}/{}", r.mildly, r.negative, r.strictly);
        let fitted = fit(tax, emb, labels, &split.train, &split.dev, resources, &c)?;
        rows.push(sweep_row(&fitted, &split.test, tax, &c)?);
    }
    Ok(rows)
}

/// The sweep row of a model fitted with `cfg`.
pub fn sweep_row(fitted: &Fitted, test: &Corpus, tax: &Taxonomy, cfg: &ExperimentConfig) -> Result<SweepRow> {
    let [ts, rs] = evaluate_both(&fitted.model, test, tax, cfg.eval_ratios, cfg.train.seed)?;
    Ok(SweepRow {
        total: cfg.train.ratios.total(),
        ratios: cfg.train.ratios,
        best_epoch: fitted.history.best_epoch,
        test_set: LevelSummary::of(&ts),
        real_simulation: LevelSummary::of(&rs),
    })
}

/// One CSV row per sweep configuration; missing levels are left empty.
pub fn write_sweep_csv<W: Write>(w: W, rows: &[SweepRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "total", "mildly", "negative", "strictly", "best_epoch", "ts_t3_f1", "ts_t2_f1", "ts_t1_f1", "rs_t3_precision",
        "rs_t3_recall", "rs_t3_f1", "rs_t2_f1", "rs_t1_f1",
    ])?;
    let f = |x: f64| format!("{x:.6}");
    let opt = |p: Option<crate::eval::Prf>| p.map(|p| f(p.f1)).unwrap_or_default();
    for r in rows {
        out.write_record([
            r.total.to_string(),
            r.ratios.mildly.to_string(),
            r.ratios.negative.to_string(),
            r.ratios.strictly.to_string(),
            r.best_epoch.to_string(),
            f(r.test_set.t3.f1),
            opt(r.test_set.t2),
            opt(r.test_set.t1),
            f(r.real_simulation.t3.precision),
            f(r.real_simulation.t3.recall),
            f(r.real_simulation.t3.f1),
            opt(r.real_simulation.t2),
            opt(r.real_simulation.t1),
        ])?;
    }
    out.flush()?;
    Ok(())
}
