use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use detflow::bench::{run_bench, BenchScenario, ProviderChoice, Scenario};
use detflow::document::{load_document, DocumentError, ProviderConfig, WorkflowDocument};
use detflow::dot::to_dot;
use detflow::engine::{execute, resume, EngineError, ExecutionConfig, ExecutionResult, RunOutcome, Runtime};
use detflow::nodes::{FuzzProvider, HttpProvider, Provider, ToolRegistry};
use detflow::value::{FieldType, Value};

const EXIT_FAILED: u8 = 1;
const EXIT_INVALID: u8 = 2;

#[derive(Parser)]
#[command(name = "detflow", version, about = "Run deterministic agent workflows")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Execute a workflow file.
    Run {
        workflow: PathBuf,
        /// Resume from this checkpoint instead of starting fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Continue an interrupted run from its checkpoint.
    Resume {
        #[arg(id = "from", value_name = "CHECKPOINT")]
        from: PathBuf,
        workflow: PathBuf,
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Run a benchmark scenario and report framework overhead.
    Bench {
        #[arg(value_parser = clap::value_parser!(String))]
        scenario: String,
        #[arg(long, default_value_t = 10)]
        size: usize,
        #[arg(long, default_value_t = 10)]
        repetitions: u32,
        #[arg(long, value_enum, default_value_t = ProviderKind::Mock)]
        provider: ProviderKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 4)]
        workers: usize,
        #[arg(long)]
        base_url: Option<String>,
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        metrics_out: Option<PathBuf>,
    },
    /// Print the graph in Graphviz format.
    ExportDot {
        workflow: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Validate a workflow file and print the findings.
    Validate { workflow: PathBuf },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ProviderKind {
    Mock,
    Fuzz,
    Http,
}

#[derive(Args)]
struct RunOpts {
    /// Overrides the provider named in the workflow file.
    #[arg(long, value_enum)]
    provider: Option<ProviderKind>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    workers: usize,
    #[arg(long, default_value_t = detflow::engine::DEFAULT_WATCHDOG_MS)]
    watchdog_ms: u64,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Initial state as a JSON object.
    #[arg(long)]
    state: Option<PathBuf>,
    #[arg(long)]
    metrics_out: Option<PathBuf>,
    /// Trace log, one JSON event per line.
    #[arg(long)]
    trace_out: Option<PathBuf>,
    #[arg(long)]
    final_state_out: Option<PathBuf>,
    /// Stop after this many node commits (writes the checkpoint).
    #[arg(long)]
    interrupt_after: Option<u64>,
    #[arg(long)]
    base_url: Option<String>,
    #[arg(long)]
    model: Option<String>,
}

/// Error with the exit code it maps to.
struct Fail(u8, String);

impl From<DocumentError> for Fail {
    fn from(e: DocumentError) -> Self {
        let code = match e {
            DocumentError::Parse { .. } | DocumentError::ValidationFailed(_) | DocumentError::Binding { .. } => EXIT_INVALID,
            _ => EXIT_FAILED,
        };
        Fail(code, e.to_string())
    }
}

impl From<EngineError> for Fail {
    fn from(e: EngineError) -> Self {
        let code = match e {
            EngineError::Validation(_) | EngineError::Subgraph(_) => EXIT_INVALID,
            _ => EXIT_FAILED,
        };
        Fail(code, e.to_string())
    }
}

fn io_fail(path: &Path, e: std::io::Error) -> Fail {
    Fail(EXIT_FAILED, format!("{}: {e}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<(), Fail> {
    std::fs::write(path, text).map_err(|e| io_fail(path, e))
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn provider(doc: &WorkflowDocument, dir: &Path, opts: &RunOpts) -> Result<Arc<dyn Provider>, Fail> {
    let p: Arc<dyn Provider> = match opts.provider {
        None => doc.provider(dir, opts.seed)?,
        Some(ProviderKind::Mock) => match &doc.provider {
            Some(cfg @ ProviderConfig::Mock { .. }) => cfg.build(dir, opts.seed)?,
            _ => ProviderConfig::Mock { script: None }.build(dir, opts.seed)?,
        },
        Some(ProviderKind::Fuzz) => Arc::new(FuzzProvider::new(opts.seed)),
        Some(ProviderKind::Http) => match (&opts.base_url, &opts.model, &doc.provider) {
            (Some(url), Some(model), _) => Arc::new(HttpProvider::new(url.clone(), model.clone())),
            (None, None, Some(cfg @ ProviderConfig::Http { .. })) => cfg.build(dir, opts.seed)?,
            _ => return Err(Fail(EXIT_FAILED, "http provider needs --base-url and --model".into())),
        },
    };
    Ok(p)
}

fn initial_state(doc: &WorkflowDocument, path: Option<&Path>) -> Result<BTreeMap<String, Value>, Fail> {
    let Some(path) = path else { return Ok(BTreeMap::new()) };
    let text = std::fs::read_to_string(path).map_err(|e| io_fail(path, e))?;
    let json: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Fail(EXIT_FAILED, format!("{}: {e}", path.display())))?;
    match Value::from_json(&json, &FieldType::Record(doc.graph.state_schema.clone())) {
        Ok(Value::Record(m)) => Ok(m),
        Ok(_) => unreachable!("record type decodes to a record"),
        Err(e) => Err(Fail(EXIT_FAILED, format!("{}: {e}", path.display()))),
    }
}

fn config(opts: &RunOpts) -> ExecutionConfig {
    let mut cfg = ExecutionConfig::default().with_workers(opts.workers).with_seed(opts.seed).with_watchdog_ms(opts.watchdog_ms);
    if let Some(p) = &opts.checkpoint {
        cfg = cfg.with_checkpoint(p);
    }
    if let Some(n) = opts.interrupt_after {
        cfg = cfg.with_interrupt_after(n);
    }
    cfg
}

/// Human summary, then a `[json]` marker, then the full metrics as JSON.
fn metrics_text(res: &ExecutionResult) -> String {
    let m = &res.metrics;
    let mut s = format!(
        "setup           {:.3} ms\nprocessing      {:.3} ms\nwall            {:.3} ms\nexternal        {:.3} ms\n\
         nodes           {}\nframework/node  {:.4} ms\nmodel errors    {}\ntool calls      {}\n",
        m.setup_ms,
        m.processing_ms,
        m.wall_ms,
        m.external_ms,
        m.nodes.len(),
        m.mean_node_framework_ms(),
        m.model_errors,
        m.tool_invocations,
    );
    s.push_str("\n[json]\n");
    s.push_str(&serde_json::to_string_pretty(m).expect("metrics serialize"));
    s.push('\n');
    s
}

fn report(res: &ExecutionResult, opts: &RunOpts) -> Result<u8, Fail> {
    if let Some(p) = &opts.trace_out {
        write(p, &res.trace.to_jsonl())?;
    }
    if let Some(p) = &opts.final_state_out {
        write(p, &(Value::Record(res.final_state.clone()).canonical_string() + "\n"))?;
    }
    if let Some(p) = &opts.metrics_out {
        write(p, &metrics_text(res))?;
    }
    println!("trace digest {}", res.trace.digest());
    match &res.outcome {
        RunOutcome::Completed => {
            println!("completed");
            Ok(0)
        }
        RunOutcome::Interrupted { commits } => {
            println!("interrupted after {commits} commits");
            Ok(0)
        }
        RunOutcome::Failed { failure } => {
            eprintln!("error: {failure} [{:?}]", failure.class());
            Ok(EXIT_FAILED)
        }
        RunOutcome::Stalled { nodes, waited_ms } => {
            eprintln!("error: stalled after {waited_ms} ms waiting on {}", nodes.join(", "));
            Ok(EXIT_FAILED)
        }
    }
}

fn load(path: &Path) -> Result<(WorkflowDocument, ToolRegistry), Fail> {
    let doc = load_document(path)?;
    let tools = doc.registry()?;
    let report = doc.validate(&tools);
    if !report.is_executable() {
        return Err(DocumentError::ValidationFailed(report).into());
    }
    for w in report.warnings() {
        eprintln!("warning: {w}");
    }
    Ok((doc, tools))
}

fn cmd_run(workflow: &Path, checkpoint: Option<&Path>, opts: &RunOpts) -> Result<u8, Fail> {
    let (doc, tools) = load(workflow)?;
    let rt = Runtime::new(provider(&doc, &base_dir(workflow), opts)?, tools);
    let cfg = config(opts);
    let res = match checkpoint {
        Some(cp) => resume(&doc.graph, cp, &cfg, &rt)?,
        None => execute(&doc.graph, initial_state(&doc, opts.state.as_deref())?, &cfg, &rt)?,
    };
    report(&res, opts)
}

#[allow(clippy::too_many_arguments)]
fn cmd_bench(
    scenario: &str,
    size: usize,
    repetitions: u32,
    kind: ProviderKind,
    seed: u64,
    workers: usize,
    http: (Option<String>, Option<String>),
    metrics_out: Option<&Path>,
) -> Result<u8, Fail> {
    let name: Scenario = scenario.parse().map_err(|e| Fail(EXIT_INVALID, e))?;
    let provider = match (kind, http) {
        (ProviderKind::Mock, _) => ProviderChoice::Mock,
        (ProviderKind::Fuzz, _) => ProviderChoice::Fuzz { seed },
        (ProviderKind::Http, (Some(base_url), Some(model))) => ProviderChoice::Http { base_url, model },
        (ProviderKind::Http, _) => return Err(Fail(EXIT_FAILED, "http provider needs --base-url and --model".into())),
    };
    let s = BenchScenario::new(name, size).with_repetitions(repetitions).with_provider(provider);
    let cfg = ExecutionConfig::default().with_workers(workers).with_seed(seed);
    let r = run_bench(&s, &cfg)?;
    let text = r.to_text();
    print!("{text}");
    if let Some(p) = metrics_out {
        write(p, &text)?;
    }
    Ok(0)
}

fn cmd_export_dot(workflow: &Path, output: Option<&Path>) -> Result<u8, Fail> {
    let (doc, _) = load(workflow)?;
    let dot = to_dot(&doc.graph);
    match output {
        Some(p) => write(p, &dot)?,
        None => print!("{dot}"),
    }
    Ok(0)
}

fn cmd_validate(workflow: &Path) -> Result<u8, Fail> {
    let doc = load_document(workflow)?;
    let report = doc.validate(&doc.registry()?);
    if !report.findings.is_empty() {
        println!("{report}");
    }
    if report.is_executable() {
        println!("ok {}", doc.hash());
        Ok(0)
    } else {
        Ok(EXIT_INVALID)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let r = match cli.cmd {
        Cmd::Run { workflow, resume, opts } => cmd_run(&workflow, resume.as_deref(), &opts),
        Cmd::Resume { from, workflow, opts } => cmd_run(&workflow, Some(&from), &opts),
        Cmd::Bench { scenario, size, repetitions, provider, seed, workers, base_url, model, metrics_out } => {
            cmd_bench(&scenario, size, repetitions, provider, seed, workers, (base_url, model), metrics_out.as_deref())
        }
        Cmd::ExportDot { workflow, output } => cmd_export_dot(&workflow, output.as_deref()),
        Cmd::Validate { workflow } => cmd_validate(&workflow),
    };
    match r {
        Ok(code) => ExitCode::from(code),
        Err(Fail(code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
