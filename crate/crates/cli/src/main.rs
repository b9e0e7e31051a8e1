use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

mod commands;
mod config;
mod output;

use config::{parse_file, RunConfig};

/// Command failures, by exit code.
#[derive(Debug, Error)]
pub enum Failure {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }
}

impl From<upvtag::Error> for Failure {
    fn from(e: upvtag::Error) -> Self {
        use upvtag::Error as E;
        match e {
            E::Diverged { .. } | E::NonFinite(_) | E::Shape(_) | E::UnrecordedNode(_) | E::AllMasked | E::Io(_) => {
                Failure::Runtime(e.to_string())
            }
            _ => Failure::Data(e.to_string()),
        }
    }
}

impl From<upvtag_serve::ServeError> for Failure {
    fn from(e: upvtag_serve::ServeError) -> Self {
        match e {
            upvtag_serve::ServeError::Core(c) => c.into(),
            upvtag_serve::ServeError::Io(_) => Failure::Runtime(e.to_string()),
            other => Failure::Data(other.to_string()),
        }
    }
}

/// Sentence classifier for human-values annotation: data preparation,
/// training, evaluation and an annotation-assist server.
#[derive(Parser)]
#[command(name = "upvtag", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every subcommand. Flags override config file values.
#[derive(Args, Clone, Debug)]
struct Common {
    /// Run configuration (`key = value` lines).
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_kv)]
    set: Vec<(String, String)>,
    /// Seed for every stochastic step.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Taxonomy file; the bundled taxonomy when absent.
    #[arg(long, value_name = "FILE")]
    taxonomy: Option<PathBuf>,
    /// Corpus in JSON lines.
    #[arg(long, value_name = "FILE")]
    corpus: Option<PathBuf>,
    /// Word vectors in text format.
    #[arg(long, value_name = "FILE")]
    vectors: Option<PathBuf>,
    /// Model checkpoint.
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<PathBuf>,
}

fn parse_kv(s: &str) -> Result<(String, String), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected KEY=VALUE, got `{s}`"))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

#[derive(Subcommand)]
enum Command {
    /// Check the configuration and inputs without writing anything.
    Validate(Common),
    /// Label supports and co-occurrence of a corpus.
    Stats(Common),
    /// Apply the support filter, split, and dump the training instances.
    Prepare(Common),
    /// Train a model and tune its thresholds on the dev split.
    Train(Common),
    /// Re-tune the thresholds of a checkpoint on the dev split.
    Tune(Common),
    /// Evaluate a checkpoint on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        /// test_set, real_simulation or both.
        #[arg(long)]
        protocol: Option<String>,
    },
    /// Train once per negative-ratio total and tabulate the scores.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated totals from the ratio table, e.g. 0,10,40.
        #[arg(long)]
        totals: Option<String>,
    },
    /// Split text into sentences and suggest labels for each.
    Predict {
        #[command(flatten)]
        common: Common,
        /// Text to label.
        #[arg(long, conflicts_with = "input")]
        text: Option<String>,
        /// File holding the text to label.
        #[arg(long, value_name = "FILE")]
        input: Option<PathBuf>,
    },
    /// Run the annotation-assist HTTP service.
    Serve {
        #[command(flatten)]
        common: Common,
        /// Listen address, e.g. 127.0.0.1:8080.
        #[arg(long)]
        addr: Option<String>,
        /// Where documents and decision logs are kept.
        #[arg(long, value_name = "DIR")]
        data_dir: Option<PathBuf>,
    },
    /// Generate a synthetic corpus, vectors and a matching run config.
    Synth(Common),
}

fn resolve(common: &Common, extra: Vec<(String, String)>) -> Result<RunConfig, Failure> {
    let file = match &common.config {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Failure::Data(format!("cannot read config {}: {e}", p.display())))?;
            Some((p.as_path(), parse_file(&text)?))
        }
        None => None,
    };
    let mut overrides = common.set.clone();
    let path = |p: &PathBuf| p.to_string_lossy().into_owned();
    let flags = [
        ("seed", common.seed.map(|s| s.to_string())),
        ("out", common.out.as_ref().map(path)),
        ("taxonomy", common.taxonomy.as_ref().map(path)),
        ("corpus", common.corpus.as_ref().map(path)),
        ("vectors", common.vectors.as_ref().map(path)),
        ("checkpoint", common.checkpoint.as_ref().map(path)),
    ];
    overrides.extend(flags.into_iter().filter_map(|(k, v)| v.map(|v| (k.to_string(), v))));
    overrides.extend(extra);
    RunConfig::resolve(file, &overrides)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let kv = |k: &str, v: Option<String>| v.map(|v| (k.to_string(), v)).into_iter().collect::<Vec<_>>();
    match cli.command {
        Command::Validate(c) => commands::validate(&resolve(&c, vec![])?),
        Command::Stats(c) => commands::stats(&resolve(&c, vec![])?),
        Command::Prepare(c) => commands::prepare(&resolve(&c, vec![])?),
        Command::Train(c) => commands::train(&resolve(&c, vec![])?),
        Command::Tune(c) => commands::tune(&resolve(&c, vec![])?),
        Command::Eval { common, protocol } => commands::eval(&resolve(&common, kv("protocol", protocol))?),
        Command::Sweep { common, totals } => commands::sweep(&resolve(&common, kv("sweep.totals", totals))?),
        Command::Predict { common, text, input } => {
            let text = match (text, input) {
                (Some(t), _) => t,
                (None, Some(p)) => std::fs::read_to_string(&p)
                    .map_err(|e| Failure::Data(format!("cannot read {}: {e}", p.display())))?,
                (None, None) => return Err(Failure::Usage("predict needs --text or --input".into())),
            };
            commands::predict(&resolve(&common, vec![])?, &text)
        }
        Command::Serve {
            common,
            addr,
            data_dir,
        } => {
            let mut extra = kv("serve.addr", addr);
            extra.extend(kv("serve.data_dir", data_dir.map(|p| p.to_string_lossy().into_owned())));
            commands::serve(&resolve(&common, extra)?)
        }
        Command::Synth(c) => commands::synth(&resolve(&c, vec![])?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("usage error").trim_start_matches("error: ");
            let _ = writeln!(std::io::stderr(), "upvtag: {first} (see --help)");
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = e.to_string().replace('\n', " ");
            let _ = writeln!(std::io::stderr(), "upvtag: {line}");
            ExitCode::from(e.code())
        }
    }
}
