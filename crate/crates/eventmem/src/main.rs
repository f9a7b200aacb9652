use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use eventmem::bench::{run_benchmark, BenchConfig, Providers, FIXED_K};
use eventmem::config::{load_pricing, load_templates};
use eventmem::dataset::{load_dataset, ConversationDataset, DatasetError};
use eventmem::provider::{HttpProvider, ProviderConfig};
use eventmem::scale::{format_table, run_scaling, ScaleConfig};
use eventmem::storefile::{
    load_manifest, load_store, resolve_conversation, save_manifest, save_store, snapshot_name, EncoderSpec, Manifest,
    StoreFileError,
};
use eventmem::synth::{generate, SynthConfig};
use eventmem_core::gateway::{CallRecord, Gateway, PromptTemplates, Provider, Stage};
use eventmem_core::ingest::{IngestionConfig, Ingestor};
use eventmem_core::snapshot::{self, FORMAT_VERSION};
use eventmem_core::stub::{ScriptedStub, StubRules};
use eventmem_core::{MemoryStore, QuestionCategory, RetrievalConfig, RetrievalMode, Retriever};

#[derive(Parser)]
#[command(name = "eventmem", version, about = "Two-level event/turn conversational memory")]
struct Cli {
    /// Print the model call log (-v) and debug logs (-vv).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build one store snapshot per conversation.
    Ingest(IngestArgs),
    /// Answer one question against a stored conversation.
    Query(QueryArgs),
    /// Run the benchmark over a dataset and write a report.
    Eval(EvalArgs),
    /// Summarize a store directory.
    Stats {
        #[arg(long)]
        store: PathBuf,
    },
    /// Snapshot size and vector-search latency for growing stores.
    ScaleBench(ScaleArgs),
    /// Check or describe a single snapshot file.
    Snapshot {
        #[command(subcommand)]
        action: SnapshotAction,
    },
}

#[derive(Subcommand)]
enum SnapshotAction {
    /// Decode the file and check store invariants.
    Verify { path: PathBuf },
    /// Print header fields, counts and event summaries.
    Inspect {
        path: PathBuf,
        /// List every event instead of the first 20.
        #[arg(long)]
        all: bool,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ProviderKind {
    Stub,
    Http,
}

#[derive(Args)]
struct ProviderArgs {
    #[arg(long, value_enum, default_value = "stub")]
    provider: ProviderKind,
    /// Chat-completions URL for `--provider http`.
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    /// Separate model for the answer stage.
    #[arg(long)]
    answer_model: Option<String>,
    /// Environment variable holding the API key.
    #[arg(long, default_value = "OPENAI_API_KEY")]
    api_key_env: String,
    /// Directory of `<family>.txt` prompt overrides.
    #[arg(long)]
    templates: Option<PathBuf>,
}

#[derive(Args)]
struct DataArgs {
    #[arg(long, required_unless_present = "synthetic", conflicts_with = "synthetic")]
    dataset: Option<PathBuf>,
    /// Use the generated planted corpus instead of a dataset file.
    #[arg(long)]
    synthetic: bool,
    /// Seed of the synthetic corpus.
    #[arg(long, default_value_t = SynthConfig::default().seed, requires = "synthetic")]
    seed: u64,
}

#[derive(Args)]
struct IngestArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Output directory for snapshots and the manifest.
    #[arg(long)]
    store: PathBuf,
    #[command(flatten)]
    provider: ProviderArgs,
    /// Recent turns shown to turn analysis.
    #[arg(long, default_value_t = IngestionConfig::default().window_size)]
    window: usize,
    /// Link count at which event updates switch from refresh to append.
    #[arg(long, default_value_t = IngestionConfig::default().tau)]
    tau: usize,
    /// Candidate events considered for affiliation.
    #[arg(long, default_value_t = IngestionConfig::default().k_event)]
    k_event: usize,
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    store: PathBuf,
    /// Conversation id; optional when the store holds one conversation.
    #[arg(long)]
    conversation: Option<String>,
    #[arg(long)]
    question: String,
    #[arg(long, value_parser = clap::value_parser!(QuestionCategory))]
    category: QuestionCategory,
    /// Candidate answer to check (required for adversarial questions).
    #[arg(long)]
    distractor: Option<String>,
    /// Skip the event layer.
    #[arg(long, conflicts_with = "mode")]
    no_hierarchy: bool,
    #[arg(long, value_parser = clap::value_parser!(RetrievalMode))]
    mode: Option<RetrievalMode>,
    #[arg(long, default_value_t = RetrievalConfig::default().k_turn)]
    k_turn: usize,
    #[arg(long, default_value_t = RetrievalConfig::default().k_event)]
    k_event: usize,
    #[command(flatten)]
    provider: ProviderArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    provider: ProviderArgs,
    /// Retrieval modes to compare; repeat the flag for several.
    #[arg(long = "mode", value_parser = clap::value_parser!(RetrievalMode), default_value = "full")]
    modes: Vec<RetrievalMode>,
    /// Fixed-K truncation depths for the passive baseline (adds that mode).
    #[arg(long = "fixed-k", value_delimiter = ',')]
    fixed_k: Vec<usize>,
    /// Pricing file (TOML); defaults to the built-in hybrid table.
    #[arg(long)]
    pricing: Option<PathBuf>,
    /// JSON report path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Tab-separated summary path.
    #[arg(long)]
    tsv: Option<PathBuf>,
    #[arg(long, default_value_t = IngestionConfig::default().tau)]
    tau: usize,
    #[arg(long, default_value_t = IngestionConfig::default().window_size)]
    window: usize,
    #[arg(long, default_value_t = RetrievalConfig::default().k_turn)]
    k_turn: usize,
    #[arg(long, default_value_t = RetrievalConfig::default().k_event)]
    k_event: usize,
}

#[derive(Args)]
struct ScaleArgs {
    #[arg(long, value_delimiter = ',', default_value = "100,10000,100000")]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    queries: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Exit status 2 for bad input, 1 for everything that fails at run time.
enum Failure {
    Input(String),
    Runtime(String),
}

type CliResult = Result<(), Failure>;

fn input<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Input(e.to_string())
}

fn runtime<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Runtime(e.to_string())
}

fn store_error(e: StoreFileError) -> Failure {
    match e {
        StoreFileError::Io { .. } | StoreFileError::Manifest { .. } | StoreFileError::UnknownConversation { .. } => input(e),
        StoreFileError::Snapshot { .. } => runtime(e),
    }
}

struct Source {
    dataset: ConversationDataset,
    rules: StubRules,
    encoder: EncoderSpec,
}

fn load_source(args: &DataArgs) -> Result<Source, Failure> {
    if args.synthetic {
        let config = SynthConfig { seed: args.seed, ..SynthConfig::default() };
        let corpus = generate(&config).map_err(input)?;
        let encoder = EncoderSpec::Noisy { dimension: eventmem_core::DEFAULT_DIMENSION, noise: config.noise, seed: config.seed };
        return Ok(Source { dataset: corpus.dataset, rules: corpus.rules, encoder });
    }
    let path = args.dataset.as_deref().expect("clap requires --dataset without --synthetic");
    let dataset = load_dataset(path).map_err(|e| match e {
        DatasetError::Io { ref source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
            Failure::Input(format!("dataset file not found: {}", path.display()))
        }
        other => input(other),
    })?;
    Ok(Source { dataset, rules: StubRules::default(), encoder: EncoderSpec::default() })
}

fn build_provider(args: &ProviderArgs, rules: &StubRules, model: Option<&str>) -> Arc<dyn Provider> {
    match args.provider {
        ProviderKind::Stub => Arc::new(ScriptedStub::new(rules.clone()).with_model(model.unwrap_or("stub"))),
        ProviderKind::Http => {
            let mut config = ProviderConfig { api_key_env: args.api_key_env.clone(), ..ProviderConfig::default() };
            if let Some(endpoint) = &args.endpoint {
                config.endpoint = endpoint.clone();
            }
            if let Some(m) = model {
                config.model = m.to_string();
            }
            Arc::new(HttpProvider::new(config))
        }
    }
}

fn templates(args: &ProviderArgs) -> Result<PromptTemplates, Failure> {
    args.templates.as_deref().map_or_else(|| Ok(PromptTemplates::default()), |dir| load_templates(dir).map_err(input))
}

fn gateway(args: &ProviderArgs, rules: &StubRules) -> Result<Gateway, Failure> {
    let mut g = Gateway::new(build_provider(args, rules, args.model.as_deref())).with_templates(templates(args)?);
    if let Some(m) = &args.answer_model {
        g = g.with_stage_provider(Stage::Answer, build_provider(args, rules, Some(m)));
    }
    Ok(g)
}

fn print_call_log(log: &[CallRecord]) {
    for r in log {
        let outcome = match &r.outcome {
            eventmem_core::gateway::CallOutcome::Ok => "ok".to_string(),
            eventmem_core::gateway::CallOutcome::InvalidOutput(m) => format!("invalid output: {m}"),
            eventmem_core::gateway::CallOutcome::ProviderError(m) => format!("provider error: {m}"),
        };
        eprintln!(
            "call {:>5} {:<24} stage={:<19} model={} attempt={} prompt={} completion={} {}",
            r.seq,
            r.family.key(),
            r.stage.as_str(),
            r.model,
            r.attempt,
            r.usage.prompt_tokens,
            r.usage.completion_tokens,
            outcome
        );
    }
}

fn cmd_ingest(args: &IngestArgs, verbose: bool) -> CliResult {
    let source = load_source(&args.data)?;
    let config = IngestionConfig { window_size: args.window, tau: args.tau, k_event: args.k_event };
    config.validate().map_err(input)?;
    let encoder = source.encoder.build();
    let mut failed = 0usize;
    let mut ids = Vec::new();
    for conv in &source.dataset.conversations {
        let g = gateway(&args.provider, &source.rules)?;
        let ingestor = Ingestor::new(&g, encoder.as_ref(), config).map_err(input)?;
        let mut store = MemoryStore::new(encoder.dimension());
        let mut conv_failed = 0usize;
        for turn in &conv.turns {
            if let Err(e) = ingestor.ingest(&mut store, turn) {
                eprintln!("conversation {}: turn {}: {e}", conv.conversation_id, turn.turn_id);
                conv_failed += 1;
            }
        }
        if verbose {
            eprintln!("# conversation {}", conv.conversation_id);
            print_call_log(&g.call_log());
        }
        let path = args.store.join(snapshot_name(&conv.conversation_id));
        save_store(&path, &store).map_err(runtime)?;
        let mc = g.usage().memory_construction;
        println!(
            "{}: {} turns, {} events, {} links, {} failed turns, {} calls, {} prompt + {} completion tokens -> {}",
            conv.conversation_id,
            store.turn_count(),
            store.event_count(),
            store.link_count(),
            conv_failed,
            mc.call_count,
            mc.prompt_tokens,
            mc.completion_tokens,
            path.display()
        );
        failed += conv_failed;
        ids.push(conv.conversation_id.clone());
    }
    let manifest = Manifest {
        encoder: source.encoder,
        stub_rules: (args.provider.provider == ProviderKind::Stub).then_some(source.rules),
        conversations: ids,
    };
    save_manifest(&args.store, &manifest).map_err(runtime)?;
    println!("ingested {} conversations into {}", manifest.conversations.len(), args.store.display());
    if failed > 0 {
        return Err(Failure::Runtime(format!("{failed} turns could not be ingested")));
    }
    Ok(())
}

fn cmd_query(args: &QueryArgs, verbose: bool) -> CliResult {
    if args.category == QuestionCategory::Adversarial && args.distractor.as_deref().is_none_or(|d| d.trim().is_empty()) {
        return Err(Failure::Input("adversarial questions need --distractor".into()));
    }
    let manifest = load_manifest(&args.store).map_err(store_error)?;
    let path = resolve_conversation(&args.store, &manifest, args.conversation.as_deref()).map_err(store_error)?;
    let store = load_store(&path).map_err(store_error)?;
    let encoder = manifest.encoder.build();
    let rules = manifest.stub_rules.clone().unwrap_or_default();
    let g = gateway(&args.provider, &rules)?;
    let mode = match (args.no_hierarchy, args.mode) {
        (true, _) => RetrievalMode::NoHierarchy,
        (false, Some(m)) => m,
        (false, None) => RetrievalMode::Full,
    };
    let config = RetrievalConfig { k_turn: args.k_turn, k_event: args.k_event, mode, ..RetrievalConfig::default() };
    let retriever = Retriever::new(&g, encoder.as_ref(), config).map_err(input)?;
    let result = retriever.ask(&store, &args.question, args.category, args.distractor.as_deref());
    if verbose {
        print_call_log(&g.call_log());
    }
    let result = result.map_err(runtime)?;
    println!("mode: {mode}");
    println!("keywords: {}", result.trace.keywords.join(", "));
    println!("evidence ({} turns):", result.trace.t_final.len());
    for (id, prov) in result.trace.t_final.entries() {
        let t = store.turn(*id).expect("evidence ids come from the store");
        println!("  [{}] {:<9} ({}) {}: {}", id.0, prov.to_string(), t.timestamp, t.speaker, t.text);
    }
    println!("answer: {}", result.answer);
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> CliResult {
    let source = load_source(&args.data)?;
    let pricing = match &args.pricing {
        Some(p) => load_pricing(p).map_err(input)?,
        None => Default::default(),
    };
    let mut modes = args.modes.clone();
    let mut fixed_k: Vec<Option<usize>> = FIXED_K.to_vec();
    if !args.fixed_k.is_empty() {
        if args.fixed_k.contains(&0) {
            return Err(Failure::Input("--fixed-k depths must be positive".into()));
        }
        fixed_k = args.fixed_k.iter().map(|k| Some(*k)).chain([None]).collect();
        if !modes.contains(&RetrievalMode::Passive) {
            modes.push(RetrievalMode::Passive);
        }
    }
    modes.dedup();
    let config = BenchConfig {
        ingestion: IngestionConfig { window_size: args.window, tau: args.tau, ..IngestionConfig::default() },
        retrieval: RetrievalConfig { k_turn: args.k_turn, k_event: args.k_event, ..RetrievalConfig::default() },
        modes,
        pricing,
        templates: templates(&args.provider)?,
        fixed_k,
    };
    config.ingestion.validate().map_err(input)?;
    config.retrieval.validate().map_err(input)?;
    let encoder = source.encoder.build();
    let providers = Providers {
        default: build_provider(&args.provider, &source.rules, args.provider.model.as_deref()),
        answer: args.provider.answer_model.as_deref().map(|m| build_provider(&args.provider, &source.rules, Some(m))),
    };
    let report = run_benchmark(&source.dataset, providers, encoder.as_ref(), &config).map_err(runtime)?;
    let tsv = report.to_tsv();
    print!("{tsv}");
    for m in &report.modes {
        println!(
            "{}: {} failures, {} subset violations, {} prediction failures, {} filter fallbacks, cost {}",
            m.mode, m.failures, m.subset_violations, m.prediction_failures, m.filter_fallbacks, m.cost.total
        );
        for line in &m.cost.lines {
            let stages: Vec<&str> = line.stages.iter().map(|s| s.as_str()).collect();
            println!(
                "  {} [{}]: {} calls, {} in / {} out tokens, {} + {} = {}",
                line.model,
                stages.join(", "),
                line.calls,
                line.input_tokens,
                line.output_tokens,
                line.input_cost,
                line.output_cost,
                line.cost
            );
        }
    }
    if let Some(out) = &args.out {
        eventmem::storefile::write_atomic(out, report.to_json().as_bytes()).map_err(runtime)?;
    }
    if let Some(path) = &args.tsv {
        eventmem::storefile::write_atomic(path, tsv.as_bytes()).map_err(runtime)?;
    }
    Ok(())
}

fn cmd_stats(dir: &Path) -> CliResult {
    let manifest = load_manifest(dir).map_err(store_error)?;
    println!("conversation\tturns\tevents\tlinks\tmean_volume\tsnapshot_bytes");
    for id in &manifest.conversations {
        let path = dir.join(snapshot_name(id));
        let store = load_store(&path).map_err(store_error)?;
        let mean = if store.event_count() == 0 { 0.0 } else { store.link_count() as f64 / store.event_count() as f64 };
        println!(
            "{id}\t{}\t{}\t{}\t{mean:.2}\t{}",
            store.turn_count(),
            store.event_count(),
            store.link_count(),
            snapshot::encoded_len(&store)
        );
    }
    Ok(())
}

fn cmd_scale(args: &ScaleArgs) -> CliResult {
    let config = ScaleConfig { sizes: args.sizes.clone(), queries: args.queries, ..ScaleConfig::default() };
    let rows = run_scaling(&config).map_err(input)?;
    let table = format_table(&rows);
    print!("{table}");
    if let Some(out) = &args.out {
        eventmem::storefile::write_atomic(out, table.as_bytes()).map_err(runtime)?;
    }
    Ok(())
}

fn cmd_snapshot(action: &SnapshotAction) -> CliResult {
    match action {
        SnapshotAction::Verify { path } => {
            let store = load_store(path).map_err(store_error)?;
            println!("ok: {} turns, {} events, {} links", store.turn_count(), store.event_count(), store.link_count());
        }
        SnapshotAction::Inspect { path, all } => {
            let bytes = std::fs::read(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
            let store = snapshot::decode(&bytes).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
            println!("format version: {FORMAT_VERSION}");
            println!("bytes: {}", bytes.len());
            println!("dimension: {}", store.dimension());
            println!("turns: {}  events: {}  links: {}", store.turn_count(), store.event_count(), store.link_count());
            let limit = if *all { usize::MAX } else { 20 };
            for e in store.events().take(limit) {
                println!("  {} volume={} facts={} summary: {}", e.event_id, e.volume(), e.fact_sheet.len(), e.summary);
            }
            if !all && store.event_count() > limit {
                println!("  ... {} more (use --all)", store.event_count() - limit);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 | 1 => "warn",
        2 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).format_timestamp(None).init();
    let verbose = cli.verbose > 0;
    let result = match &cli.command {
        Command::Ingest(a) => cmd_ingest(a, verbose),
        Command::Query(a) => cmd_query(a, verbose),
        Command::Eval(a) => cmd_eval(a),
        Command::Stats { store } => cmd_stats(store),
        Command::ScaleBench(a) => cmd_scale(a),
        Command::Snapshot { action } => cmd_snapshot(action),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
