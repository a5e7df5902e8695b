use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use cts_core::ctc::greedy_decode;
use cts_core::cts::{summarize, SummarizeOptions};
use cts_core::formats::{read_latent_any, read_lseq, read_proj, read_vocab, write_sseq};
use cts_core::harness::{
    bench_rtf, crossval_corpus, evaluate, fine_tune_e2, run_system, training_samples,
    CrossvalConfig, Stage, SystemId, TrainSettings,
};
use cts_core::lu::{lu_train, read_model, write_model, LuModel};
use cts_core::seqcore::project_softmax;
use cts_core::synth::{
    generate_corpus, kfold_split, load_corpus, write_corpus, Corpus, SynthSpec, Utterance,
};

/// Connectionist temporal summarization toolkit.
#[derive(Debug, Parser)]
#[command(name = "cts", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic corpus directory.
    Synth(SynthArgs),
    /// Summarize a latent sequence (.lseq) into a summarized sequence (.sseq).
    Summarize(SummarizeArgs),
    /// Greedy CTC decode of .lseq or .sseq files to JSON lines.
    Decode(DecodeArgs),
    /// Train an intent classifier for one system.
    TrainLu(TrainArgs),
    /// Classify a corpus (or one fold of it) and report accuracy.
    Eval(EvalArgs),
    /// Measure the real-time factor of one system, single-threaded.
    Bench(BenchArgs),
    /// Train and evaluate all systems with k-fold cross-validation.
    Crossval(CrossvalArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Corpus spec JSON; omitted fields take their defaults.
    #[arg(long, value_name = "FILE")]
    spec: Option<PathBuf>,
    /// Output corpus directory.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Generation seed; overrides the seed in the spec file.
    #[arg(long)]
    seed: u64,
}

#[derive(Debug, Args)]
struct SummarizeArgs {
    /// Input latent sequence (.lseq).
    #[arg(long = "in", value_name = "FILE")]
    input: PathBuf,
    /// Projection matrix (.proj).
    #[arg(long, value_name = "FILE")]
    proj: PathBuf,
    /// Output summarized sequence (.sseq).
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Vocabulary JSON, used for the blank index (default blank index 0).
    #[arg(long, value_name = "FILE")]
    vocab: Option<PathBuf>,
    /// Drop segments whose label is blank.
    #[arg(long)]
    drop_blank_segments: bool,
}

#[derive(Debug, Args)]
struct DecodeArgs {
    /// Input .lseq or .sseq files.
    #[arg(long = "in", value_name = "FILE", required = true, num_args = 1..)]
    inputs: Vec<PathBuf>,
    /// Projection matrix (.proj).
    #[arg(long, value_name = "FILE")]
    proj: PathBuf,
    /// Vocabulary JSON.
    #[arg(long, value_name = "FILE")]
    vocab: PathBuf,
    /// Write JSON lines here instead of standard output.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Include the best-path log-probability as "logp".
    #[arg(long)]
    with_score: bool,
}

#[derive(Debug, Args)]
struct FoldArgs {
    /// Number of folds; with --fold, restricts the command to one split.
    #[arg(long, value_name = "K", requires = "fold")]
    k: Option<usize>,
    /// Fold index in [0, K).
    #[arg(long, value_name = "F", requires = "k")]
    fold: Option<usize>,
}

#[derive(Debug, Args)]
struct TrainFlags {
    /// Hidden units per direction.
    #[arg(long, default_value_t = TrainSettings::default().hidden)]
    hidden: usize,
    /// Stacked bidirectional layers.
    #[arg(long, default_value_t = TrainSettings::default().layers)]
    layers: usize,
    /// Adam learning rate.
    #[arg(long, default_value_t = TrainSettings::default().learning_rate)]
    learning_rate: f64,
    /// Training epochs.
    #[arg(long, default_value_t = TrainSettings::default().epochs)]
    epochs: usize,
    /// Minibatch size.
    #[arg(long, default_value_t = TrainSettings::default().batch_size)]
    batch_size: usize,
    /// E2 fine-tuning epochs on summarized inputs.
    #[arg(long, default_value_t = TrainSettings::default().fine_tune_epochs)]
    fine_tune_epochs: usize,
    /// E2 fine-tuning learning rate.
    #[arg(long, default_value_t = TrainSettings::default().fine_tune_learning_rate)]
    fine_tune_learning_rate: f64,
}

impl TrainFlags {
    fn settings(&self) -> TrainSettings {
        TrainSettings {
            hidden: self.hidden,
            layers: self.layers,
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            fine_tune_epochs: self.fine_tune_epochs,
            fine_tune_learning_rate: self.fine_tune_learning_rate,
        }
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Corpus directory written by `synth`.
    #[arg(long, value_name = "DIR")]
    corpus: PathBuf,
    /// System to train: p1, e1 or e2.
    #[arg(long, value_name = "SYSTEM")]
    mode: String,
    /// Training seed.
    #[arg(long)]
    seed: u64,
    /// Output model file.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// For e2: trained E1 model to fine-tune; when omitted E1 is trained first.
    #[arg(long, value_name = "FILE")]
    init: Option<PathBuf>,
    #[command(flatten)]
    folds: FoldArgs,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Corpus directory written by `synth`.
    #[arg(long, value_name = "DIR")]
    corpus: PathBuf,
    /// System to evaluate: p1, e1 or e2.
    #[arg(long, value_name = "SYSTEM")]
    system: String,
    /// Trained model file.
    #[arg(long, value_name = "FILE")]
    model: PathBuf,
    /// Also write per-utterance predictions as JSON lines.
    #[arg(long, value_name = "FILE")]
    predictions: Option<PathBuf>,
    #[command(flatten)]
    folds: FoldArgs,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Corpus directory written by `synth`.
    #[arg(long, value_name = "DIR")]
    corpus: PathBuf,
    /// System to benchmark: p1, e1 or e2.
    #[arg(long, value_name = "SYSTEM")]
    system: String,
    /// Trained model file.
    #[arg(long, value_name = "FILE")]
    model: PathBuf,
    /// Timed passes over the corpus; the median is reported.
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[command(flatten)]
    folds: FoldArgs,
}

#[derive(Debug, Args)]
struct CrossvalArgs {
    /// Corpus spec JSON; omitted fields take their defaults.
    #[arg(long, value_name = "FILE", conflicts_with = "corpus")]
    spec: Option<PathBuf>,
    /// Use an existing corpus directory instead of generating one.
    #[arg(long, value_name = "DIR")]
    corpus: Option<PathBuf>,
    /// Seed for corpus generation and training.
    #[arg(long)]
    seed: u64,
    /// Number of folds.
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// Timed passes per system and fold.
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    /// Write the report here instead of standard output.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    #[command(flatten)]
    train: TrainFlags,
}

/// Bad flag values or combinations; exits with status 1.
#[derive(Debug)]
struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(message: impl Into<String>) -> anyhow::Error {
    UsageError(message.into()).into()
}

fn parse_system(name: &str) -> Result<SystemId> {
    name.parse::<SystemId>().map_err(|e| usage(e.to_string()))
}

fn read_spec(path: Option<&Path>) -> Result<SynthSpec> {
    match path {
        None => Ok(SynthSpec::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing spec {}", p.display()))
        }
    }
}

fn open_corpus(dir: &Path) -> Result<Corpus> {
    load_corpus(dir).with_context(|| format!("loading corpus {}", dir.display()))
}

/// Rows selected by the fold flags: all rows, or the train or eval side of one fold.
fn select<'a>(
    corpus: &'a Corpus,
    folds: &FoldArgs,
    train_side: bool,
) -> Result<Vec<&'a Utterance>> {
    match (folds.k, folds.fold) {
        (Some(k), Some(f)) => {
            if f >= k {
                return Err(usage(format!("--fold {f} must be below --k {k}")));
            }
            let split = kfold_split(corpus.len(), k)?;
            let fold = &split[f];
            Ok(corpus.subset(if train_side { &fold.train } else { &fold.eval }))
        }
        _ => Ok(corpus.utterances.iter().collect()),
    }
}

fn output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut stdout = io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            Ok(stdout.flush()?)
        }
    }
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let spec = SynthSpec {
        seed: args.seed,
        ..read_spec(args.spec.as_deref())?
    };
    let corpus = generate_corpus(&spec)?;
    write_corpus(&corpus, &args.out)
        .with_context(|| format!("writing corpus {}", args.out.display()))?;
    eprintln!(
        "wrote {} utterances to {}",
        corpus.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_summarize(args: &SummarizeArgs) -> Result<()> {
    let seq =
        read_lseq(&args.input).with_context(|| format!("reading {}", args.input.display()))?;
    let proj = read_proj(&args.proj).with_context(|| format!("reading {}", args.proj.display()))?;
    let blank_index = match &args.vocab {
        Some(p) => {
            read_vocab(p)
                .with_context(|| format!("reading {}", p.display()))?
                .blank_index
        }
        None => 0,
    };
    let summary = summarize(
        &seq,
        &proj,
        SummarizeOptions {
            drop_blank_segments: args.drop_blank_segments,
            blank_index,
        },
    )?;
    write_sseq(&args.out, &summary).with_context(|| format!("writing {}", args.out.display()))?;
    Ok(())
}

#[derive(Serialize)]
struct DecodeLine<'a> {
    id: String,
    ids: &'a [usize],
    labels: Vec<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    logp: Option<f64>,
}

fn cmd_decode(args: &DecodeArgs) -> Result<()> {
    let proj = read_proj(&args.proj).with_context(|| format!("reading {}", args.proj.display()))?;
    let vocab =
        read_vocab(&args.vocab).with_context(|| format!("reading {}", args.vocab.display()))?;
    let mut text = String::new();
    for path in &args.inputs {
        let file = read_latent_any(path).with_context(|| format!("reading {}", path.display()))?;
        let grid = project_softmax(file.sequence(), &proj)?;
        let decoded = greedy_decode(&grid, &vocab)?;
        let line = DecodeLine {
            id: path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
            ids: &decoded.ids,
            labels: decoded.labels(&vocab),
            logp: if args.with_score { decoded.score } else { None },
        };
        text.push_str(&serde_json::to_string(&line)?);
        text.push('\n');
    }
    output(args.out.as_deref(), &text)
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let id = parse_system(&args.mode)?;
    let corpus = open_corpus(&args.corpus)?;
    let train = select(&corpus, &args.folds, true)?;
    let settings = args.train.settings();
    let (proj, vocab) = (&corpus.projection, &corpus.vocab);
    let config = settings.lu_config(proj.dim(), corpus.spec.num_intents, args.seed);
    let (model, report) = match id {
        SystemId::P1 => lu_train(
            &config.with_vocab(vocab.len()),
            &training_samples(id, &train, proj, vocab)?,
        )?,
        SystemId::E1 => lu_train(&config, &training_samples(id, &train, proj, vocab)?)?,
        SystemId::E2 => {
            let e1 = match &args.init {
                Some(p) => read_model(p).with_context(|| format!("reading {}", p.display()))?,
                None => {
                    lu_train(
                        &config,
                        &training_samples(SystemId::E1, &train, proj, vocab)?,
                    )?
                    .0
                }
            };
            if e1.has_embedding() {
                return Err(usage("--init must be a latent-input (E1) model"));
            }
            fine_tune_e2(
                &e1,
                &settings,
                args.seed,
                &training_samples(id, &train, proj, vocab)?,
            )?
        }
    };
    write_model(&args.out, &model).with_context(|| format!("writing {}", args.out.display()))?;
    for (epoch, loss) in report.epoch_losses.iter().enumerate() {
        eprintln!("epoch {epoch}: loss {loss:.6}");
    }
    Ok(())
}

fn load_model(path: &Path) -> Result<LuModel> {
    read_model(path).with_context(|| format!("reading {}", path.display()))
}

#[derive(Serialize)]
struct EvalOutput {
    system: SystemId,
    utterances: usize,
    accuracy_pct: f64,
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let id = parse_system(&args.system)?;
    let corpus = open_corpus(&args.corpus)?;
    let model = load_model(&args.model)?;
    let utts = select(&corpus, &args.folds, false)?;
    let run = run_system(id, &utts, &corpus.projection, &corpus.vocab, &model)?;
    if let Some(path) = &args.predictions {
        let mut text = String::new();
        for p in &run.predictions {
            text.push_str(&serde_json::to_string(p)?);
            text.push('\n');
        }
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    let out = EvalOutput {
        system: id,
        utterances: utts.len(),
        accuracy_pct: evaluate(&run.predictions, &utts)?,
    };
    output(None, &format!("{}\n", serde_json::to_string_pretty(&out)?))
}

#[derive(Serialize)]
struct BenchOutput {
    system: SystemId,
    utterances: usize,
    repeats: usize,
    audio_ms: f64,
    rtf: f64,
    rtfs: Vec<f64>,
    total_ms: f64,
    stage_ms: std::collections::BTreeMap<Stage, f64>,
}

fn cmd_bench(args: &BenchArgs) -> Result<()> {
    let id = parse_system(&args.system)?;
    if args.repeats < 3 {
        return Err(usage("--repeats must be at least 3"));
    }
    let corpus = open_corpus(&args.corpus)?;
    let model = load_model(&args.model)?;
    let utts = select(&corpus, &args.folds, false)?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build()?;
    let bench = pool.install(|| {
        bench_rtf(
            id,
            &utts,
            &corpus.projection,
            &corpus.vocab,
            &model,
            args.repeats,
        )
    })?;
    let run = &bench.median;
    let out = BenchOutput {
        system: id,
        utterances: utts.len(),
        repeats: args.repeats,
        audio_ms: run.audio_ms,
        rtf: run.rtf(),
        rtfs: bench.rtfs.clone(),
        total_ms: run.total.as_secs_f64() * 1e3,
        stage_ms: run.stage_ms(),
    };
    output(None, &format!("{}\n", serde_json::to_string_pretty(&out)?))
}

fn cmd_crossval(args: &CrossvalArgs) -> Result<()> {
    if args.k < 2 {
        return Err(usage("--k must be at least 2"));
    }
    if args.repeats < 3 {
        return Err(usage("--repeats must be at least 3"));
    }
    let corpus = match &args.corpus {
        Some(dir) => open_corpus(dir)?,
        None => generate_corpus(&SynthSpec {
            seed: args.seed,
            ..read_spec(args.spec.as_deref())?
        })?,
    };
    let mut config = CrossvalConfig::new(SynthSpec {
        seed: args.seed,
        ..corpus.spec.clone()
    });
    config.k = args.k;
    config.repeats = args.repeats;
    config.train = args.train.settings();
    let report = crossval_corpus(&corpus, &config)?;
    for (id, r) in &report.summary.per_system {
        eprintln!("{id}: accuracy {:.2}%, rtf {:.3e}", r.accuracy_pct, r.rtf);
    }
    output(
        args.out.as_deref(),
        &format!("{}\n", serde_json::to_string_pretty(&report)?),
    )
}

fn configure_threads() -> Result<()> {
    if let Ok(value) = std::env::var("CTS_THREADS") {
        let threads: usize = value.parse().ok().filter(|n| *n > 0).ok_or_else(|| {
            usage(format!(
                "CTS_THREADS must be a positive integer, got {value:?}"
            ))
        })?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()?;
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    configure_threads()?;
    match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Summarize(a) => cmd_summarize(a),
        Command::Decode(a) => cmd_decode(a),
        Command::TrainLu(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Crossval(a) => cmd_crossval(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help and version go to stdout with status 0
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
