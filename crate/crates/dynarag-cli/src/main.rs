//! Command line front end: index building, detector training, dataset
//! runs, evaluation, and a self-contained scripted demo.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use dynarag::adapter::{
    HttpAdapter, MockAdapter, ModelAdapter, Scenario, ScriptedAttribution, ScriptedGeneration,
    ScriptedStep,
};
use dynarag::detectors::{
    build_early_dataset, build_realtime_dataset, train_early_detector, train_realtime_detector,
    MlpNet, RnnNet, TrainConfig, DEFAULT_HIDDEN, EARLY_FEATURES, REALTIME_FEATURES,
};
use dynarag::eval::{evaluate, EvalMode};
use dynarag::files::{load_corpus, load_qa, read_jsonl, write_jsonl};
use dynarag::index::InvertedIndex;
use dynarag::orchestrator::{answer, run_batch, Detectors, GenerationTrace, RealtimeDetector};
use dynarag::text::{tokenize, EMBED_DIM};
use dynarag::types::Document;
use dynarag::EngineConfig;

/// Overrides the adapter argument with an HTTP endpoint when set.
const ADAPTER_URL_VAR: &str = "DYNARAG_ADAPTER_URL";

#[derive(Parser)]
#[command(name = "dynarag", version, about = "Dynamic retrieval-augmented generation engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a BM25 index from a JSONL corpus.
    Index {
        /// Corpus file, one document per line.
        #[arg(long)]
        corpus: PathBuf,
        /// Where to write the index.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the early detector on question attributions.
    TrainEarly(TrainEarlyArgs),
    /// Train the real-time detector on article continuations.
    TrainRealtime(TrainRealtimeArgs),
    /// Answer a dataset, writing one trace per question.
    Run(RunArgs),
    /// Score a trace file against its dataset.
    Eval {
        /// Trace file produced by `run`.
        #[arg(long)]
        traces: PathBuf,
        /// Dataset the traces were produced from.
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::Extractive)]
        mode: Mode,
    },
    /// Run a built-in scripted scenario end to end and print the trace.
    Demo {
        #[arg(long)]
        question: String,
    },
}

#[derive(Args)]
struct TrainEarlyArgs {
    /// QA dataset file, one example per line.
    #[arg(long)]
    qa: PathBuf,
    /// mock:FILE or an http(s) URL.
    #[arg(long)]
    adapter: String,
    /// Where to write the trained weights.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_HIDDEN)]
    hidden: usize,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Token budget per labeling pass.
    #[arg(long, default_value_t = 64)]
    max_tokens: usize,
}

#[derive(Args)]
struct TrainRealtimeArgs {
    /// Corpus of articles to truncate and continue.
    #[arg(long)]
    corpus: PathBuf,
    /// mock:FILE or an http(s) URL.
    #[arg(long)]
    adapter: String,
    /// Where to write the trained weights.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_HIDDEN)]
    hidden: usize,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Token budget per continuation pass.
    #[arg(long, default_value_t = 64)]
    max_tokens: usize,
    /// Cosine similarity at or above which two entities match.
    #[arg(long, default_value_t = 0.85)]
    entity_sim_threshold: f64,
}

#[derive(Args)]
struct RunArgs {
    /// QA dataset file, one example per line.
    #[arg(long)]
    dataset: PathBuf,
    /// Index file produced by `index`.
    #[arg(long)]
    index: PathBuf,
    /// Early detector weights; required unless early detection is off.
    #[arg(long)]
    early: Option<PathBuf>,
    /// Real-time detector weights; required unless real-time detection
    /// is off or replaced by the static rule.
    #[arg(long)]
    realtime: Option<PathBuf>,
    /// mock:FILE or an http(s) URL.
    #[arg(long)]
    adapter: String,
    /// Where to write the traces, one JSON object per line.
    #[arg(long)]
    out: PathBuf,
    /// Skip early detection entirely.
    #[arg(long)]
    no_early: bool,
    /// Replace the trained flag with the static rule: flag any token
    /// whose generation probability is below one half.
    #[arg(long)]
    no_realtime: bool,
    /// Keep retrieval keywords in order of appearance instead of ranking.
    #[arg(long)]
    no_prerank: bool,
    /// Retrieve all documents in a single batch.
    #[arg(long)]
    no_stepwise: bool,
    /// Inject whole documents instead of chunked blocks.
    #[arg(long)]
    no_chunk: bool,
    /// TOML config file; the flags above apply on top of it.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    /// Span answers scored by exact match and token F1.
    Extractive,
    /// Yes/no answers scored on the last yes/no token.
    YesNo,
}

impl From<Mode> for EvalMode {
    fn from(mode: Mode) -> EvalMode {
        match mode {
            Mode::Extractive => EvalMode::Extractive,
            Mode::YesNo => EvalMode::YesNo,
        }
    }
}

/// Argument combinations the parser cannot catch; exits with the usage
/// code instead of the runtime one.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage_error(message: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(UsageError(message.into()))
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            std::process::exit(code);
        }
    };
    if let Err(err) = dispatch(cli.command) {
        eprintln!("error: {err:#}");
        let code = if err.downcast_ref::<UsageError>().is_some() { 1 } else { 2 };
        std::process::exit(code);
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Index { corpus, out } => build_index(&corpus, &out),
        Command::TrainEarly(args) => train_early(&args),
        Command::TrainRealtime(args) => train_realtime(&args),
        Command::Run(args) => run(&args),
        Command::Eval { traces, dataset, mode } => eval(&traces, &dataset, mode),
        Command::Demo { question } => demo(&question),
    }
}

fn resolve_adapter(spec: &str) -> Result<Box<dyn ModelAdapter>> {
    if let Ok(url) = std::env::var(ADAPTER_URL_VAR) {
        if !url.is_empty() {
            return Ok(Box::new(HttpAdapter::new(&url)));
        }
    }
    if let Some(path) = spec.strip_prefix("mock:") {
        return Ok(Box::new(MockAdapter::from_file(Path::new(path))?));
    }
    if spec.starts_with("http://") || spec.starts_with("https://") {
        return Ok(Box::new(HttpAdapter::new(spec)));
    }
    Err(usage_error(format!(
        "--adapter must be mock:FILE or an http(s) URL, got {spec:?}"
    )))
}

fn build_index(corpus: &Path, out: &Path) -> Result<()> {
    let documents = load_corpus(corpus)?;
    let index = InvertedIndex::build(&documents)?;
    index.save(out)?;
    println!(
        "indexed {} documents, {} terms -> {}",
        index.n_docs(),
        index.n_terms(),
        out.display()
    );
    Ok(())
}

fn train_early(args: &TrainEarlyArgs) -> Result<()> {
    let qa = load_qa(&args.qa)?;
    let adapter = resolve_adapter(&args.adapter)?;
    let (samples, skipped) = build_early_dataset(&qa, adapter.as_ref(), args.max_tokens);
    if samples.is_empty() {
        anyhow::bail!("no usable training samples in {}", args.qa.display());
    }
    let cfg = TrainConfig { epochs: args.epochs, lr: args.lr, seed: args.seed };
    let (net, curve) = train_early_detector(&samples, args.hidden, &cfg)?;
    net.save(&args.out)?;
    println!(
        "trained early detector ({} inputs, {} hidden) on {} samples, {} skipped, final loss {:.4} -> {}",
        EARLY_FEATURES,
        args.hidden,
        samples.len(),
        skipped,
        curve.last().copied().unwrap_or(f64::NAN),
        args.out.display()
    );
    Ok(())
}

fn train_realtime(args: &TrainRealtimeArgs) -> Result<()> {
    let corpus = load_corpus(&args.corpus)?;
    let adapter = resolve_adapter(&args.adapter)?;
    let (samples, skipped) = build_realtime_dataset(
        &corpus,
        adapter.as_ref(),
        args.max_tokens,
        args.entity_sim_threshold,
    );
    if samples.is_empty() {
        anyhow::bail!("no usable training samples in {}", args.corpus.display());
    }
    let cfg = TrainConfig { epochs: args.epochs, lr: args.lr, seed: args.seed };
    let (net, curve) = train_realtime_detector(&samples, args.hidden, &cfg)?;
    net.save(&args.out)?;
    println!(
        "trained real-time detector ({} inputs, {} hidden) on {} samples, {} skipped, final loss {:.4} -> {}",
        REALTIME_FEATURES,
        args.hidden,
        samples.len(),
        skipped,
        curve.last().copied().unwrap_or(f64::NAN),
        args.out.display()
    );
    Ok(())
}

fn run(args: &RunArgs) -> Result<()> {
    let mut config = match &args.config {
        Some(path) => EngineConfig::load(path)?,
        None => EngineConfig::default(),
    };
    config.disable_early |= args.no_early;
    config.disable_prerank |= args.no_prerank;
    config.disable_stepwise |= args.no_stepwise;
    config.disable_chunk |= args.no_chunk;
    config.validate()?;

    let early = if config.disable_early {
        None
    } else {
        let path = args.early.as_ref().ok_or_else(|| {
            usage_error("--early WEIGHTS is required unless early detection is disabled")
        })?;
        Some(RnnNet::load(path)?)
    };
    let realtime = if config.disable_realtime {
        None
    } else if args.no_realtime {
        Some(RealtimeDetector::LowProbability)
    } else {
        let path = args.realtime.as_ref().ok_or_else(|| {
            usage_error("--realtime WEIGHTS is required unless real-time detection is disabled")
        })?;
        Some(RealtimeDetector::Mlp(MlpNet::load(path)?))
    };
    let detectors = Detectors { early, realtime };

    println!("config fingerprint: {}", config.fingerprint());
    let dataset = load_qa(&args.dataset)?;
    let index = InvertedIndex::load(&args.index)?;
    let adapter = resolve_adapter(&args.adapter)?;
    let traces = run_batch(&dataset, &index, adapter.as_ref(), &detectors, &config);
    write_jsonl(&args.out, &traces)?;
    let failed = traces.iter().filter(|t| t.failed).count();
    println!("wrote {} traces to {}, {} failed", traces.len(), args.out.display(), failed);
    Ok(())
}

fn eval(traces: &Path, dataset: &Path, mode: Mode) -> Result<()> {
    let traces: Vec<GenerationTrace> = read_jsonl(traces)?;
    let dataset = load_qa(dataset)?;
    let report = evaluate(&traces, &dataset, mode.into())?;
    print!("{}", report.render_table());
    println!("{}", serde_json::to_string_pretty(&report).context("serializing report")?);
    Ok(())
}

fn demo_corpus() -> Vec<Document> {
    let texts = [
        ("d1", "Rovaniemi", "Rovaniemi is a city in Finland. Santa Claus lives near Rovaniemi."),
        (
            "d2",
            "Lapland",
            "Lapland is the northern region of Finland. Reindeer roam across Lapland.",
        ),
        ("d3", "Mars", "Mars is the fourth planet from the Sun. Mars has two small moons."),
    ];
    texts
        .into_iter()
        .map(|(id, title, text)| Document {
            id: id.into(),
            title: title.into(),
            text: text.into(),
        })
        .collect()
}

/// Scripts an answer whose fourth token spikes in entropy, so the demo
/// exercises the flag, truncation, and continuation path on any question.
fn demo_scenario(question: &str) -> Scenario {
    let step = |token: &str, entropy: f64, is_end: bool| ScriptedStep {
        token: token.into(),
        logprob: -0.1,
        attention: 0.3,
        entropy,
        is_end,
    };
    let n = tokenize(question).len();
    let mut values = vec![1.0; n];
    values[n - 1] = 3.0;
    Scenario {
        version: 1,
        generations: vec![
            ScriptedGeneration {
                prompt_prefix: String::new(),
                steps: vec![
                    step("The", 0.2, false),
                    step("answer", 0.2, false),
                    step("involves", 0.2, false),
                    step("Jupiter", 3.0, false),
                    step("probably", 0.2, true),
                ],
            },
            ScriptedGeneration {
                prompt_prefix: "External Knowledge After Chunk:".into(),
                steps: vec![
                    step("found", 0.2, false),
                    step("in", 0.2, false),
                    step("the", 0.2, false),
                    step("retrieved", 0.2, false),
                    step("passages", 0.2, false),
                    step(".", 0.2, true),
                ],
            },
        ],
        attributions: vec![ScriptedAttribution { question_prefix: String::new(), values }],
    }
}

fn demo_detectors() -> Result<Detectors> {
    let mut rnn = RnnNet::init(EARLY_FEATURES, 2, 0);
    let zeros = vec![0.0; rnn.n_params()];
    rnn.set_params(&zeros)?;
    rnn.b_out = -10.0;

    let mut mlp = MlpNet::init(REALTIME_FEATURES, 1, 0);
    let zeros = vec![0.0; mlp.n_params()];
    mlp.set_params(&zeros)?;
    mlp.w1[0][EMBED_DIM + 1] = 1.0;
    mlp.b1[0] = -1.0;
    mlp.w2[0] = -100.0;
    mlp.b2 = 10.0;

    Ok(Detectors { early: Some(rnn), realtime: Some(RealtimeDetector::Mlp(mlp)) })
}

fn demo(question: &str) -> Result<()> {
    if tokenize(question).is_empty() {
        return Err(usage_error("--question must contain at least one word"));
    }
    let config = EngineConfig::default();
    let index = InvertedIndex::build(&demo_corpus())?;
    let adapter = MockAdapter::new(demo_scenario(question))?;
    let detectors = demo_detectors()?;

    println!("config fingerprint: {}", config.fingerprint());
    let trace = answer(question, &index, &adapter, &detectors, &config)?;
    println!("question: {}", trace.question);
    println!("answer: {}", trace.final_answer);
    println!("events:");
    for event in &trace.events {
        println!("  - {event:?}");
    }
    let c = trace.counters;
    println!("counters: rc={} gc={} hc={} tc={} sc={}", c.rc, c.gc, c.hc, c.tc, c.sc);
    Ok(())
}
