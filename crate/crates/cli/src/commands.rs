use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use upvtag::augment::{Resources, Stopwords, SynonymLexicon};
use upvtag::corpus::{Corpus, CorpusStats, LoadOptions, Split};
use upvtag::embeddings::EmbeddingTable;
use upvtag::eval::{evaluate, MetricsReport, Protocol};
use upvtag::experiment::{fit, ratio_sweep, ratios_for_totals, write_sweep_csv, ExperimentConfig, LevelSummary};
use upvtag::model::{inspect_checkpoint, Model};
use upvtag::sampler::{generate_training_instances, write_instances_jsonl, Augmenter};
use upvtag::synth::SynthBundle;
use upvtag::train::tune_thresholds;
use upvtag::util::derive_seed;
use upvtag::{LabelId, Taxonomy};
use upvtag_serve::{AppState, DocumentSession, DocumentStore};

use crate::config::{Protocols, RunConfig};
use crate::output::Outputs;
use crate::Failure;

fn open(key: &str, p: &Path) -> Result<BufReader<File>, Failure> {
    File::open(p)
        .map(BufReader::new)
        .map_err(|e| Failure::Data(format!("`{key}`: cannot open {}: {e}", p.display())))
}

fn in_file(p: &Path, e: upvtag::Error) -> Failure {
    match Failure::from(e) {
        Failure::Data(m) => Failure::Data(format!("{}: {m}", p.display())),
        other => other,
    }
}

fn taxonomy(cfg: &RunConfig) -> Result<Arc<Taxonomy>, Failure> {
    match &cfg.taxonomy {
        Some(p) => Ok(Arc::new(Taxonomy::load(open("taxonomy", p)?).map_err(|e| in_file(p, e))?)),
        None => Ok(Arc::new(Taxonomy::bundled())),
    }
}

fn corpus(cfg: &RunConfig, tax: &Taxonomy) -> Result<Corpus, Failure> {
    let p = cfg.require("corpus", &cfg.corpus)?;
    let (corpus, report) = Corpus::load(open("corpus", p)?, tax, LoadOptions { lenient: cfg.lenient }).map_err(|e| in_file(p, e))?;
    log::info!(
        "{}: {} samples ({} too short, {} unlabeled, {} unknown labels skipped)",
        p.display(),
        corpus.len(),
        report.dropped_short,
        report.dropped_unlabeled,
        report.skipped_labels.len()
    );
    if corpus.is_empty() {
        return Err(Failure::Data(format!("{}: no usable samples", p.display())));
    }
    Ok(corpus)
}

fn vectors(cfg: &RunConfig) -> Result<Arc<EmbeddingTable>, Failure> {
    let p = cfg.require("vectors", &cfg.vectors)?;
    let table = EmbeddingTable::load(open("vectors", p)?, cfg.oov).map_err(|e| in_file(p, e))?;
    log::info!("{}: {} vectors of dimension {}", p.display(), table.len(), table.dim());
    Ok(Arc::new(table))
}

fn resources(cfg: &RunConfig) -> Result<Resources, Failure> {
    let mut res = Resources::bundled();
    if let Some(p) = &cfg.synonyms {
        res.synonyms = SynonymLexicon::load(open("synonyms", p)?).map_err(|e| in_file(p, e))?;
    }
    if let Some(p) = &cfg.stopwords {
        let mut text = String::new();
        open("stopwords", p)?
            .read_to_string(&mut text)
            .map_err(|e| Failure::Data(format!("{}: {e}", p.display())))?;
        res.stopwords = Stopwords::parse(&text);
    }
    Ok(res)
}

/// The support-filtered corpus, its split and the labels left to train on.
struct Prepared {
    rejected: Vec<LabelId>,
    split: Split,
    labels: Vec<LabelId>,
}

fn prepare_corpus(cfg: &RunConfig, tax: &Taxonomy, corpus: &Corpus) -> Result<Prepared, Failure> {
    let (kept, rejected) = corpus.filter_by_support(cfg.min_support);
    let labels = kept.label_set(tax);
    if labels.is_empty() {
        return Err(Failure::Data(format!("no label has support above {}", cfg.min_support)));
    }
    let split = kept.split(&cfg.split)?;
    log::info!(
        "{} labels kept, {} rejected; split {}/{}/{}",
        labels.len(),
        rejected.len(),
        split.train.len(),
        split.dev.len(),
        split.test.len()
    );
    Ok(Prepared {
        rejected,
        split,
        labels,
    })
}

fn experiment(cfg: &RunConfig, emb: &EmbeddingTable) -> Result<ExperimentConfig, Failure> {
    let mut e = cfg.experiment.clone();
    if let Some(d) = cfg.emb_dim {
        if d != emb.dim() {
            return Err(Failure::Data(format!("`model.emb_dim` is {d} but the vectors have dimension {}", emb.dim())));
        }
    }
    e.model.emb_dim = emb.dim();
    e.model.validate()?;
    Ok(e)
}

fn load_model(cfg: &RunConfig) -> Result<Model, Failure> {
    let p = cfg.require("checkpoint", &cfg.checkpoint)?;
    let emb = vectors(cfg)?;
    Model::load(open("checkpoint", p)?, emb).map_err(|e| in_file(p, e))
}

fn outputs(cfg: &RunConfig) -> Result<Outputs, Failure> {
    Outputs::create(cfg.require("out", &cfg.out)?)
}

fn lines<'a>(items: impl IntoIterator<Item = &'a LabelId>) -> String {
    items.into_iter().map(|l| format!("{l}\n")).collect()
}

fn finish(out: Outputs, command: &str, cfg: &RunConfig) -> Result<(), Failure> {
    // the output location is left out so a rerun elsewhere matches byte for byte
    let mut settings = cfg.settings.clone();
    settings.remove("out");
    let p = out.finish(command, cfg.seed, &settings)?;
    println!("{}", p.display());
    Ok(())
}

pub fn validate(cfg: &RunConfig) -> Result<(), Failure> {
    let tax = taxonomy(cfg)?;
    println!("taxonomy: {} labels", tax.len());
    let res = resources(cfg)?;
    println!("synonyms: {} entries", res.synonyms.len());
    if cfg.corpus.is_some() {
        let c = corpus(cfg, &tax)?;
        let p = prepare_corpus(cfg, &tax, &c)?;
        println!("corpus: {} samples, {} labels after filtering, {} rejected", c.len(), p.labels.len(), p.rejected.len());
        println!("split: {}/{}/{}", p.split.train.len(), p.split.dev.len(), p.split.test.len());
        if cfg.vectors.is_some() {
            let emb = vectors(cfg)?;
            let e = experiment(cfg, &emb)?;
            let model = Model::new(e.model.clone(), tax.clone(), emb, p.labels.clone())?;
            println!("model: {} with {} parameters", e.model.variant_name(), model.count_params().total);
        }
    } else if cfg.vectors.is_some() {
        let emb = vectors(cfg)?;
        experiment(cfg, &emb)?;
        println!("vectors: {} rows of dimension {}", emb.len(), emb.dim());
    }
    if let Some(p) = &cfg.checkpoint {
        let bytes = std::fs::read(p).map_err(|e| Failure::Data(format!("{}: {e}", p.display())))?;
        let info = inspect_checkpoint(&bytes).map_err(|e| in_file(p, e))?;
        println!(
            "checkpoint: {} over {} labels, thresholds {}",
            info.config.variant_name(),
            info.labels.len(),
            if info.has_thresholds { "tuned" } else { "missing" }
        );
        if cfg.vectors.is_some() {
            load_model(cfg)?;
        }
    }
    println!("ok");
    Ok(())
}

pub fn stats(cfg: &RunConfig) -> Result<(), Failure> {
    let tax = taxonomy(cfg)?;
    let c = corpus(cfg, &tax)?;
    let stats = CorpusStats::compute(&c)?;
    let mut out = outputs(cfg)?;
    out.write_with("support.csv", |w| stats.write_support_csv(w))?;
    out.write_with("cooccurrence.csv", |w| stats.write_cooccurrence_csv(w))?;
    out.write_json("stats.json", &stats)?;
    finish(out, "stats", cfg)
}

pub fn prepare(cfg: &RunConfig) -> Result<(), Failure> {
    let tax = taxonomy(cfg)?;
    let c = corpus(cfg, &tax)?;
    let p = prepare_corpus(cfg, &tax, &c)?;
    let res = resources(cfg)?;
    let e = &cfg.experiment;
    let augmenter = e.augment.then_some(Augmenter {
        config: &e.train.augment,
        resources: &res,
    });
    let (items, report) = generate_training_instances(
        &p.split.train,
        &tax,
        &p.labels,
        e.train.ratios,
        augmenter,
        derive_seed(cfg.seed, "sample-train"),
    )?;
    let mut out = outputs(cfg)?;
    out.write("train.jsonl", p.split.train.to_jsonl().as_bytes())?;
    out.write("dev.jsonl", p.split.dev.to_jsonl().as_bytes())?;
    out.write("test.jsonl", p.split.test.to_jsonl().as_bytes())?;
    out.write("labels.txt", lines(&p.labels).as_bytes())?;
    out.write("rejected_labels.txt", lines(&p.rejected).as_bytes())?;
    out.write_with("train_instances.jsonl", |w| write_instances_jsonl(w, &items))?;
    out.write_json("sampler.json", &report)?;
    finish(out, "prepare", cfg)
}

pub fn train(cfg: &RunConfig) -> Result<(), Failure> {
    let tax = taxonomy(cfg)?;
    let c = corpus(cfg, &tax)?;
    let p = prepare_corpus(cfg, &tax, &c)?;
    let emb = vectors(cfg)?;
    let e = experiment(cfg, &emb)?;
    let res = resources(cfg)?;
    let fitted = fit(&tax, &emb, &p.labels, &p.split.train, &p.split.dev, &res, &e)?;
    let mut out = outputs(cfg)?;
    out.write("model.ckpt", &fitted.model.to_bytes()?)?;
    out.write_with("history.csv", |w| fitted.history.write_csv(w))?;
    out.write_json("thresholds.json", &fitted.model.thresholds)?;
    out.write_json("sampler.json", &fitted.sampler)?;
    out.write_json("params.json", &fitted.model.count_params())?;
    out.write("labels.txt", lines(&p.labels).as_bytes())?;
    println!("best epoch {} of {}", fitted.history.best_epoch, fitted.history.epochs.len());
    finish(out, "train", cfg)
}

/// The split a checkpoint was trained on, rebuilt from the config.
fn checkpoint_split(cfg: &RunConfig, model: &Model) -> Result<Split, Failure> {
    let tax = model.taxonomy();
    let c = corpus(cfg, tax)?;
    Ok(prepare_corpus(cfg, tax, &c)?.split)
}

pub fn tune(cfg: &RunConfig) -> Result<(), Failure> {
    let mut model = load_model(cfg)?;
    let split = checkpoint_split(cfg, &model)?;
    let tax = model.taxonomy().clone();
    model.thresholds = Some(tune_thresholds(&model, &split.dev, &tax, cfg.experiment.threshold_step)?);
    let mut out = outputs(cfg)?;
    out.write("model.ckpt", &model.to_bytes()?)?;
    out.write_json("thresholds.json", &model.thresholds)?;
    finish(out, "tune", cfg)
}

fn summary_line(r: &MetricsReport) -> String {
    let s = LevelSummary::of(r);
    let mut line = format!(
        "{}: T3 P {:.3} R {:.3} F1 {:.3}",
        r.protocol, s.t3.precision, s.t3.recall, s.t3.f1
    );
    for (name, level) in [("T2", s.t2), ("T1", s.t1)] {
        if let Some(p) = level {
            line.push_str(&format!(", {name} F1 {:.3}", p.f1));
        }
    }
    line
}

pub fn eval(cfg: &RunConfig) -> Result<(), Failure> {
    let model = load_model(cfg)?;
    let split = checkpoint_split(cfg, &model)?;
    let tax = model.taxonomy().clone();
    let protocols: &[Protocol] = match cfg.protocol {
        Protocols::TestSet => &[Protocol::TestSet],
        Protocols::RealSimulation => &[Protocol::RealSimulation],
        Protocols::Both => &[Protocol::TestSet, Protocol::RealSimulation],
    };
    let mut out = outputs(cfg)?;
    for &p in protocols {
        let seed = match p {
            Protocol::TestSet => derive_seed(cfg.seed, "sample-test"),
            Protocol::RealSimulation => cfg.seed,
        };
        let report = evaluate(
            &model,
            &split.test,
            &tax,
            p,
            model.thresholds.as_ref(),
            cfg.experiment.eval_ratios,
            seed,
        )?;
        out.write_with(&format!("metrics_{p}.json"), |w| report.write_json(w))?;
        out.write_with(&format!("metrics_{p}.csv"), |w| report.write_csv(w, &tax))?;
        out.write_with(&format!("roc_{p}.csv"), |w| report.write_roc_csv(w))?;
        println!("{}", summary_line(&report));
    }
    finish(out, "eval", cfg)
}

pub fn sweep(cfg: &RunConfig) -> Result<(), Failure> {
    let tax = taxonomy(cfg)?;
    let c = corpus(cfg, &tax)?;
    let p = prepare_corpus(cfg, &tax, &c)?;
    let emb = vectors(cfg)?;
    let e = experiment(cfg, &emb)?;
    let res = resources(cfg)?;
    let ratios = ratios_for_totals(&cfg.sweep_totals)?;
    let rows = ratio_sweep(&tax, &emb, &p.labels, &p.split, &res, &e, &ratios)?;
    let mut out = outputs(cfg)?;
    out.write_with("sweep.csv", |w| write_sweep_csv(w, &rows))?;
    out.write_json("sweep.json", &rows)?;
    finish(out, "sweep", cfg)
}

#[derive(serde::Serialize)]
struct Prediction {
    id: String,
    text: String,
    labels: Vec<LabelId>,
    suggestions: Vec<upvtag_serve::Suggestion>,
}

pub fn predict(cfg: &RunConfig, text: &str) -> Result<(), Failure> {
    let model = load_model(cfg)?;
    let session = DocumentSession::predict(&model, "doc", text)?;
    let mut jsonl = String::new();
    for (i, s) in session.sentences.iter().enumerate() {
        let p = Prediction {
            id: format!("doc-{i:04}"),
            text: s.clone(),
            labels: session.suggested(i).into_iter().collect(),
            suggestions: session.suggestions(i),
        };
        jsonl.push_str(&serde_json::to_string(&p).map_err(|e| Failure::Runtime(e.to_string()))?);
        jsonl.push('\n');
    }
    match &cfg.out {
        Some(_) => {
            let mut out = outputs(cfg)?;
            out.write("predictions.jsonl", jsonl.as_bytes())?;
            finish(out, "predict", cfg)
        }
        None => std::io::stdout()
            .write_all(jsonl.as_bytes())
            .map_err(|e| Failure::Runtime(e.to_string())),
    }
}

pub fn serve(cfg: &RunConfig) -> Result<(), Failure> {
    let model = load_model(cfg)?;
    if model.thresholds.is_none() {
        return Err(Failure::Data("checkpoint has no tuned thresholds; run `upvtag tune` first".into()));
    }
    let dir: PathBuf = match (&cfg.serve_dir, &cfg.out) {
        (Some(d), _) => d.clone(),
        (None, Some(o)) => o.join("documents"),
        (None, None) => return Err(Failure::Data("`serve.data_dir` is not set; pass --data-dir".into())),
    };
    let store = DocumentStore::open(dir, Arc::new(model))?;
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Failure::Runtime(e.to_string()))?;
    rt.block_on(upvtag_serve::serve(cfg.serve_addr, AppState::new(store)))
        .map_err(|e| Failure::Runtime(format!("server stopped: {e}")))
}

/// A run config for the synthetic bundle, paths relative to itself.
fn synth_run_config(cfg: &RunConfig, samples: usize) -> String {
    let mut text = String::from("# synthetic run\n");
    if let Some(t) = &cfg.taxonomy {
        let abs = std::fs::canonicalize(t).unwrap_or_else(|_| t.clone());
        text.push_str(&format!("taxonomy = {}\n", abs.display()));
    }
    let dev = (samples * 15 / 100).min(300);
    text.push_str(&format!(
        "corpus = corpus.jsonl\nvectors = vectors.txt\nseed = {}\n\
         split.min_support = 0\nsplit.train_fraction = 0.7\nsplit.dev_count = {dev}\n\
         model.hidden = 24\nmodel.head_hidden = 16\nmodel.att_dim = 16\ntrain.learning_rate = 0.004\n",
        cfg.seed
    ));
    text
}

pub fn synth(cfg: &RunConfig) -> Result<(), Failure> {
    let tax = taxonomy(cfg)?;
    let bundle = SynthBundle::generate(&tax, &cfg.synth)?;
    let mut out = outputs(cfg)?;
    out.write("corpus.jsonl", bundle.corpus.to_jsonl().as_bytes())?;
    out.write("keywords.tsv", bundle.table.to_text().as_bytes())?;
    out.write_with("vectors.txt", |w| bundle.vectors.write_text(w))?;
    out.write_json("audit.json", &bundle.audit)?;
    out.write("run.cfg", synth_run_config(cfg, bundle.corpus.len()).as_bytes())?;
    finish(out, "synth", cfg)
}
