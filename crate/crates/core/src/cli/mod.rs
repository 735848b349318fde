//! Command-line front end: argument parsing, config resolution, output
//! directory locking and run manifests around the pipeline stages.

pub mod config;
pub mod manifest;
pub mod stages;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

pub use config::{PipelineConfig, Scale};
use manifest::{DirLock, FileHash, LockError, RunManifest};
use stages::{corpus_wer, model_name, read_transcripts, Outcome, Stage, DECODED_GREEDY, PRETRAINED};

use crate::datagen::Variant;
use crate::error::Error;
use crate::evalkit::format_percent;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    /// Unknown subcommand or bad flags.
    pub const USAGE: i32 = 2;
    /// Config file malformed or a value out of range.
    pub const CONFIG: i32 = 3;
    /// Input file missing or unreadable, or an output could not be written.
    pub const IO: i32 = 4;
    /// Input data malformed or inconsistent.
    pub const DATA: i32 = 5;
    /// Output directory locked by another run.
    pub const LOCKED: i32 = 6;
}

#[derive(Debug, Parser)]
#[command(name = "recorrect", version, about = "Noisy-channel data generation, transcript correction and WER evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Top-level seed; every stage seed is derived from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_enum, default_value = "tiny")]
    pub scale: Scale,
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,
    /// JSON document merged over the scale preset.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    pub json: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Task {
    Correction,
    Mlm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    TenFold,
    Cutout,
    Dropout,
    Both,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::TenFold => Variant::TenFold,
            VariantArg::Cutout => Variant::Cutout,
            VariantArg::Dropout => Variant::Dropout,
            VariantArg::Both => Variant::Both,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the WordPiece vocabulary from the training text and pair sources.
    VocabBuild,
    /// Generate the synthetic corpus, held-out split and parallel pairs.
    GenData,
    /// Fit the word n-gram language model on the training text.
    LmFit,
    /// Train a corrector, or pretrain an encoder with `--task mlm`.
    Train {
        #[arg(long, value_enum, default_value = "correction")]
        task: Task,
        #[arg(long, value_enum)]
        variant: Option<VariantArg>,
        /// Init cell: rand/rand, pre/rand, rand/pre or pre/pre.
        #[arg(long, default_value = "rand/rand")]
        init: String,
        /// Model directory name under models/.
        #[arg(long)]
        name: Option<String>,
    },
    /// Correct hypotheses with a trained model.
    Correct {
        #[arg(long)]
        model: String,
        /// Transcript JSONL; defaults to the greedy held-out decode.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Decode held-out lattices greedily, with shallow fusion and with rescoring.
    Decode,
    /// Corpus WER of a transcript or pair JSONL file.
    Eval { input: PathBuf },
    /// Run the data-variant and init-cell grids and write the reports.
    Ablate,
    /// Run every stage end to end.
    Demo,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::VocabBuild => "vocab-build",
            Command::GenData => "gen-data",
            Command::LmFit => "lm-fit",
            Command::Train { .. } => "train",
            Command::Correct { .. } => "correct",
            Command::Decode => "decode",
            Command::Eval { .. } => "eval",
            Command::Ablate => "ablate",
            Command::Demo => "demo",
        }
    }
}

#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config { .. } => exit::CONFIG,
            Error::Io { .. } => exit::IO,
            _ => exit::DATA,
        };
        Failure { code, message: e.to_string() }
    }
}

impl From<LockError> for Failure {
    fn from(e: LockError) -> Self {
        match e {
            LockError::Held(l) => Failure { code: exit::LOCKED, message: l.to_string() },
            LockError::Io(e) => e.into(),
        }
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, Failure> {
    let overlay = match &cli.config {
        Some(p) => Some(std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?),
        None => None,
    };
    let mut cfg = PipelineConfig::from_overlay(cli.scale, overlay.as_deref())?;
    let s = cli.seed.unwrap_or(cfg.seed);
    cfg = cfg.with_seed(s);
    cfg.validate()?;
    Ok(cfg)
}

/// Runs one stage and appends its manifest.
fn stamped(
    name: &str,
    args: &[String],
    cfg: &PipelineConfig,
    dir: &Path,
    f: impl FnOnce() -> crate::Result<Outcome>,
) -> Result<Outcome, Failure> {
    let started = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let clock = Instant::now();
    let outcome = f()?;
    let hash = |paths: &[PathBuf]| -> crate::Result<Vec<FileHash>> {
        let mut v = Vec::new();
        for p in paths {
            v.extend(FileHash::of(dir, p)?);
        }
        Ok(v)
    };
    RunManifest {
        subcommand: name.into(),
        args: args.to_vec(),
        config: serde_json::to_value(cfg).map_err(Error::from)?,
        config_sha256: cfg.digest(),
        seed: cfg.seed,
        inputs: hash(&outcome.inputs)?,
        outputs: hash(&outcome.outputs)?,
        started_unix: started,
        wall_clock_secs: clock.elapsed().as_secs_f64(),
        version: env!("CARGO_PKG_VERSION").into(),
    }
    .append(dir)?;
    Ok(outcome)
}

fn execute(cli: &Cli, args: &[String]) -> Result<Value, Failure> {
    let cfg = load_config(cli)?;
    let dir = cli.out_dir.as_path();
    let _lock = DirLock::acquire(dir)?;
    let stage = Stage { dir, cfg: &cfg };
    let name = cli.command.name();
    let run = |n: &str, f: &dyn Fn() -> crate::Result<Outcome>| stamped(n, args, &cfg, dir, f).map(|o| o.summary);
    match &cli.command {
        Command::GenData => run(name, &|| stage.gen_data()),
        Command::VocabBuild => run(name, &|| stage.vocab_build()),
        Command::LmFit => run(name, &|| stage.lm_fit()),
        Command::Decode => run(name, &|| stage.decode()),
        Command::Train { task: Task::Mlm, .. } => run(name, &|| stage.train_mlm()),
        Command::Train { task: Task::Correction, variant, init, name: model } => {
            let v = variant.map_or(cfg.variant, Variant::from);
            let model = model.clone().unwrap_or_else(|| model_name(v, init));
            if model == PRETRAINED {
                return Err(Failure { code: exit::USAGE, message: format!("model name {PRETRAINED:?} is reserved") });
            }
            run(name, &|| stage.train_corrector(v, init, &model))
        }
        Command::Correct { model, input, output } => {
            let input = input.clone().unwrap_or_else(|| stage.path(DECODED_GREEDY));
            let output = output.clone().unwrap_or_else(|| stage.path(&format!("corrected.{model}.jsonl")));
            run(name, &|| stage.correct(model, &input, &output))
        }
        Command::Eval { input } => run(name, &|| {
            let items = read_transcripts(input)?;
            if items.is_empty() {
                return Err(Error::invalid(format!("{} holds no transcripts", input.display())));
            }
            let b = corpus_wer(&items);
            let rate = b.rate().ok_or_else(|| Error::invalid("WER undefined: empty references with hypotheses"))?;
            Ok(Outcome {
                inputs: vec![input.clone()],
                outputs: vec![],
                summary: json!({
                    "sentences": items.len(), "wer": format_percent(rate), "substitutions": b.substitutions,
                    "insertions": b.insertions, "deletions": b.deletions, "reference_words": b.ref_words,
                }),
            })
        }),
        Command::Ablate => run(name, &|| stage.ablate()),
        Command::Demo => {
            let mut steps = serde_json::Map::new();
            let plan: [(&str, &dyn Fn() -> crate::Result<Outcome>); 6] = [
                ("gen-data", &|| stage.gen_data()),
                ("vocab-build", &|| stage.vocab_build()),
                ("lm-fit", &|| stage.lm_fit()),
                ("decode", &|| stage.decode()),
                ("train", &|| stage.train_mlm()),
                ("ablate", &|| stage.ablate()),
            ];
            for (n, f) in plan {
                log::info!("demo: {n}");
                steps.insert(n.into(), run(n, f)?);
            }
            Ok(Value::Object(steps))
        }
    }
}

fn render(command: &Command, v: &Value) -> String {
    if let (Command::Eval { .. }, Some(w)) = (command, v.get("wer").and_then(Value::as_str)) {
        return format!(
            "WER {w} (S={} I={} D={} N={}, {} sentences)",
            v["substitutions"], v["insertions"], v["deletions"], v["reference_words"], v["sentences"]
        );
    }
    let mut lines = Vec::new();
    flatten("", v, &mut lines);
    lines.join("\n")
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<String>) {
    match v {
        Value::Object(m) => {
            for (k, x) in m {
                let p = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&p, x, out);
            }
        }
        Value::Array(xs) if xs.iter().any(|x| x.is_object()) => {
            for (i, x) in xs.iter().enumerate() {
                flatten(&format!("{prefix}[{i}]"), x, out);
            }
        }
        Value::Array(xs) if xs.len() > 8 => out.push(format!("{prefix}: [{} values]", xs.len())),
        _ => out.push(format!("{prefix}: {v}")),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Results go to stdout, errors to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { exit::USAGE } else { exit::OK };
        }
    };
    let printable: Vec<String> = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(&cli, &printable) {
        Ok(v) => {
            if cli.json {
                println!("{}", serde_json::to_string(&v).expect("summaries serialize"));
            } else {
                println!("{}", render(&cli.command, &v));
            }
            exit::OK
        }
        Err(f) => {
            if cli.json {
                eprintln!("{}", json!({"error": f.message, "code": f.code}));
            } else {
                eprintln!("error: {}", f.message);
            }
            f.code
        }
    }
}
