//! The run configuration: a flat `key = value` file with dotted keys, with
//! command-line overrides applied on top.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use upvtag::augment::AugmentKind;
use upvtag::corpus::{SplitSpec, TrainSize};
use upvtag::embeddings::OovPolicy;
use upvtag::experiment::ExperimentConfig;
use upvtag::model::{Heads, ModelConfig};
use upvtag::sampler::RatioConfig;
use upvtag::synth::SynthSpec;

use crate::Failure;

/// Which protocols `eval` runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Protocols {
    TestSet,
    RealSimulation,
    Both,
}

impl FromStr for Protocols {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "test_set" => Ok(Protocols::TestSet),
            "real_simulation" => Ok(Protocols::RealSimulation),
            "both" => Ok(Protocols::Both),
            _ => Err(format!("expected test_set, real_simulation or both, got `{s}`")),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub taxonomy: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub vectors: Option<PathBuf>,
    pub synonyms: Option<PathBuf>,
    pub stopwords: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: u64,
    /// Skip unknown corpus labels instead of failing.
    pub lenient: bool,
    pub oov: OovPolicy,
    pub protocol: Protocols,
    pub min_support: usize,
    pub split: SplitSpec,
    /// `model.emb_dim` when set explicitly; otherwise the vector dimension.
    pub emb_dim: Option<usize>,
    pub experiment: ExperimentConfig,
    pub sweep_totals: Vec<usize>,
    pub serve_addr: SocketAddr,
    pub serve_dir: Option<PathBuf>,
    pub synth: SynthSpec,
    /// Every setting as given, after overrides. Recorded in manifests.
    pub settings: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            taxonomy: None,
            corpus: None,
            vectors: None,
            synonyms: None,
            stopwords: None,
            checkpoint: None,
            out: None,
            seed: 0,
            lenient: false,
            oov: OovPolicy::SubwordHash,
            protocol: Protocols::Both,
            min_support: 30,
            split: SplitSpec::fraction(0.8, 450, 0),
            emb_dim: None,
            experiment: ExperimentConfig {
                model: ModelConfig::default(),
                ..ExperimentConfig::default()
            },
            sweep_totals: vec![0, 10, 20, 30, 40, 50, 60],
            serve_addr: SocketAddr::from(([127, 0, 0, 1], 8080)),
            serve_dir: None,
            synth: SynthSpec::default(),
            settings: BTreeMap::new(),
        }
    }
}

/// Reads `key = value` lines. `#` starts a comment; blank lines are
/// ignored; a key may appear once.
pub fn parse_file(text: &str) -> Result<BTreeMap<String, String>, Failure> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Failure::Data(format!("config line {}: expected `key = value`", i + 1)))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Failure::Data(format!("config line {}: empty key", i + 1)));
        }
        if out.insert(k.to_string(), v.trim().to_string()).is_some() {
            return Err(Failure::Data(format!("config line {}: `{k}` is set twice", i + 1)));
        }
    }
    Ok(out)
}

fn parsed<T: FromStr>(key: &str, v: &str) -> Result<T, Failure>
where
    T::Err: Display,
{
    v.parse().map_err(|e| Failure::Data(format!("`{key}`: bad value `{v}`: {e}")))
}

fn list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>, Failure>
where
    T::Err: Display,
{
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| parsed(key, s)).collect()
}

impl RunConfig {
    /// Builds a config from file settings and overrides. Relative paths in
    /// the file resolve against the file's directory; relative paths in
    /// overrides resolve against the working directory.
    pub fn resolve(
        file: Option<(&Path, BTreeMap<String, String>)>,
        overrides: &[(String, String)],
    ) -> Result<RunConfig, Failure> {
        let mut cfg = RunConfig::default();
        let mut seen = BTreeMap::new();
        if let Some((path, entries)) = file {
            let base = path.parent().unwrap_or(Path::new(""));
            for (k, v) in entries {
                seen.insert(k.clone(), (v, Some(base.to_path_buf())));
            }
        }
        for (k, v) in overrides {
            seen.insert(k.clone(), (v.clone(), None));
        }
        // seed first so later keys can derive from it
        if let Some((v, _)) = seen.get("seed") {
            cfg.set_seed(parsed("seed", v)?);
        }
        for (k, (v, base)) in &seen {
            cfg.apply(k, v, base.as_deref())?;
        }
        cfg.settings = seen.into_iter().map(|(k, (v, _))| (k, v)).collect();
        cfg.check_paths()?;
        cfg.experiment.train.validate().map_err(|e| Failure::Data(e.to_string()))?;
        Ok(cfg)
    }

    fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.split.seed = seed;
        self.experiment.train.seed = seed;
        self.experiment.train.augment.seed = seed;
        self.synth.corpus.seed = seed;
    }

    fn apply(&mut self, key: &str, v: &str, base: Option<&Path>) -> Result<(), Failure> {
        let path = |v: &str| -> PathBuf {
            match base {
                Some(b) if Path::new(v).is_relative() => b.join(v),
                _ => PathBuf::from(v),
            }
        };
        let m = &mut self.experiment.model;
        let t = &mut self.experiment.train;
        let s = &mut self.synth;
        match key {
            "seed" => {}
            "taxonomy" => self.taxonomy = Some(path(v)),
            "corpus" => self.corpus = Some(path(v)),
            "vectors" => self.vectors = Some(path(v)),
            "synonyms" => self.synonyms = Some(path(v)),
            "stopwords" => self.stopwords = Some(path(v)),
            "checkpoint" => self.checkpoint = Some(path(v)),
            "out" => self.out = Some(path(v)),
            "lenient" => self.lenient = parsed(key, v)?,
            "oov" => self.oov = parsed(key, v)?,
            "protocol" => self.protocol = parsed(key, v)?,

            "split.min_support" => self.min_support = parsed(key, v)?,
            "split.train_fraction" => self.split.train = TrainSize::Fraction(parsed(key, v)?),
            "split.train_count" => self.split.train = TrainSize::Count(parsed(key, v)?),
            "split.dev_count" => self.split.dev_count = parsed(key, v)?,

            "model.attention" => m.use_attention = parsed(key, v)?,
            "model.description" => m.use_description = parsed(key, v)?,
            "model.heads" => m.heads = parsed::<Heads>(key, v)?,
            "model.emb_dim" => self.emb_dim = Some(parsed(key, v)?),
            "model.hidden" => m.hidden = parsed(key, v)?,
            "model.head_hidden" => m.head_hidden = parsed(key, v)?,
            "model.att_dim" => m.att_dim = parsed(key, v)?,
            "model.max_sample_len" => m.max_sample_len = parsed(key, v)?,
            "model.max_descr_len" => m.max_descr_len = parsed(key, v)?,
            "model.max_label_len" => m.max_label_len = parsed(key, v)?,
            "model.dropout" => m.dropout = parsed(key, v)?,
            "model.train_embeddings" => m.train_embeddings = parsed(key, v)?,

            "train.batch_size" => t.batch_size = parsed(key, v)?,
            "train.max_epochs" => t.max_epochs = parsed(key, v)?,
            "train.patience" => t.patience = parsed(key, v)?,
            "train.learning_rate" => t.learning_rate = parsed(key, v)?,
            "train.ratios" => t.ratios = parsed::<RatioConfig>(key, v)?,
            "train.augment" => self.experiment.augment = parsed(key, v)?,
            "augment.strength" => t.augment.strength = parsed(key, v)?,
            "augment.kinds" => t.augment.kinds = list::<AugmentKind>(key, v)?,
            "augment.stack" => t.augment.stack = parsed(key, v)?,

            "eval.ratios" => self.experiment.eval_ratios = parsed(key, v)?,
            "eval.threshold_step" => self.experiment.threshold_step = parsed(key, v)?,
            "sweep.totals" => self.sweep_totals = list(key, v)?,

            "serve.addr" => self.serve_addr = parsed(key, v)?,
            "serve.data_dir" => self.serve_dir = Some(path(v)),

            "synth.labels" => s.labels = parsed(key, v)?,
            "synth.keywords_per_label" => s.keywords_per_label = parsed(key, v)?,
            "synth.distractors" => s.distractors = parsed(key, v)?,
            "synth.dim" => s.dim = parsed(key, v)?,
            "synth.noise" => s.noise = parsed(key, v)?,
            "synth.scale" => s.scale = parsed(key, v)?,
            "synth.samples_per_label" => s.corpus.samples_per_label = parsed(key, v)?,
            "synth.max_labels" => s.corpus.max_labels = parsed(key, v)?,
            "synth.extra_label_prob" => s.corpus.extra_label_prob = parsed(key, v)?,
            "synth.signature_draws" => s.corpus.signature_draws = parsed(key, v)?,
            "synth.min_len" => s.corpus.min_len = parsed(key, v)?,
            "synth.max_len" => s.corpus.max_len = parsed(key, v)?,
            _ => return Err(Failure::Data(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    fn check_paths(&self) -> Result<(), Failure> {
        let files = [
            ("taxonomy", &self.taxonomy),
            ("corpus", &self.corpus),
            ("vectors", &self.vectors),
            ("synonyms", &self.synonyms),
            ("stopwords", &self.stopwords),
            ("checkpoint", &self.checkpoint),
        ];
        for (key, p) in files {
            if let Some(p) = p {
                if !p.is_file() {
                    return Err(Failure::Data(format!("`{key}`: no such file {}", p.display())));
                }
            }
        }
        Ok(())
    }

    pub fn require<'a>(&self, key: &str, v: &'a Option<PathBuf>) -> Result<&'a Path, Failure> {
        v.as_deref()
            .ok_or_else(|| Failure::Data(format!("`{key}` is not set; pass --{key} or set it in the config")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn over(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn file_values_and_overrides() {
        let file = parse_file("# run\nseed = 3\nmodel.hidden = 12 # small\ntrain.ratios = 1,2,3\n").unwrap();
        let cfg = RunConfig::resolve(Some((Path::new("cfg/run.cfg"), file)), &over(&[("model.hidden", "20")])).unwrap();
        assert_eq!(cfg.experiment.model.hidden, 20);
        assert_eq!(cfg.experiment.train.ratios, RatioConfig::new(1, 2, 3));
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.split.seed, 3);
        assert_eq!(cfg.experiment.train.augment.seed, 3);
        assert_eq!(cfg.settings["model.hidden"], "20");
    }

    #[test]
    fn unknown_key_rejected() {
        let err = RunConfig::resolve(None, &over(&[("model.hiden", "3")])).unwrap_err();
        assert!(matches!(err, Failure::Data(m) if m.contains("model.hiden")));
    }

    #[test]
    fn bad_lines() {
        assert!(parse_file("just words\n").is_err());
        assert!(parse_file("a = 1\na = 2\n").is_err());
        assert!(parse_file(" = 1\n").is_err());
    }

    #[test]
    fn missing_path_is_data_error() {
        let err = RunConfig::resolve(None, &over(&[("corpus", "/definitely/not/here.jsonl")])).unwrap_err();
        assert!(matches!(err, Failure::Data(_)));
    }

    #[test]
    fn relative_paths_follow_the_file() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("c.jsonl"), "").unwrap();
        let cfg_path = dir.path().join("run.cfg");
        let cfg = RunConfig::resolve(Some((&cfg_path, parse_file("corpus = c.jsonl").unwrap())), &[]).unwrap();
        assert_eq!(cfg.corpus.unwrap(), dir.path().join("c.jsonl"));
    }

    #[test]
    fn invalid_training_values_rejected() {
        assert!(RunConfig::resolve(None, &over(&[("train.patience", "0")])).is_err());
        assert!(RunConfig::resolve(None, &over(&[("protocol", "sometimes")])).is_err());
        assert!(RunConfig::resolve(None, &over(&[("augment.kinds", "synonym,teleport")])).is_err());
    }
}
