//! Command-line entry point: evaluation runs, alignment-data generation,
//! complexity scoring, and report re-aggregation.
//!
//! stdout carries machine-readable JSON summaries; human diagnostics go to
//! stderr. Exit codes: 0 ok, 2 config error, 3 infrastructure failure.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use toolforge_core::actiongen::GenOptions;
use toolforge_core::backend::{
    CompletionClient, HttpCompletionClient, ScriptedClient, API_KEY_ENV,
};
use toolforge_core::datagen::{build_dataset, pack_all_shot, TaskTemplates, Template};
use toolforge_core::metrics::{complexity_score, rf1_score, LogBase, Variant};
use toolforge_core::prompt::PromptTemplate;
use toolforge_core::runner::{evaluate_spec, reaggregate, EvalOptions, TestDisposition};
use toolforge_core::spec::{DocCount, ToolSpec};

const EXIT_OK: i32 = 0;
const EXIT_CONFIG: i32 = 2;
const EXIT_INFRASTRUCTURE: i32 = 3;

#[derive(Parser)]
#[command(
    name = "toolforge",
    version,
    about = "Tool-manipulation evaluation harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate a tool spec against a completion backend.
    Eval(EvalArgs),
    /// Generate alignment data from goal/action templates.
    GenData(GenDataArgs),
    /// Score a task's API-selection complexity.
    Complexity(ComplexityArgs),
    /// Re-aggregate saved per-test outcome files.
    Report(ReportArgs),
}

#[derive(Args)]
struct EvalArgs {
    /// Tool spec JSON.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Backend: `scripted:<replay.jsonl>` or an http(s) endpoint URL.
    #[arg(long)]
    backend: Option<String>,
    #[arg(long)]
    model: Option<String>,
    /// Output directory for report.json and outcomes.jsonl.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    parallelism: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Override the spec's demonstration count.
    #[arg(long)]
    num_demos: Option<usize>,
    /// Override the spec's document count: `all` or an integer.
    #[arg(long)]
    num_docs: Option<String>,
    /// Prompt template file with {GUIDELINES} {DOCS} {DEMOS} {GOAL} slots.
    #[arg(long)]
    prompt_template: Option<PathBuf>,
    /// Wrap prompts with <human>:/<bot>: markers for chat models.
    #[arg(long)]
    chat: bool,
    /// Run config JSON; command-line flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
}

/// File form of the eval flags.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvalFileConfig {
    spec: Option<PathBuf>,
    backend: Option<String>,
    model: Option<String>,
    out: Option<PathBuf>,
    parallelism: Option<usize>,
    seed: Option<u64>,
    num_demos: Option<usize>,
    num_docs: Option<String>,
    prompt_template: Option<PathBuf>,
    chat: Option<bool>,
}

#[derive(Args)]
struct GenDataArgs {
    /// Data-generation config JSON.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Packing budget in length-function units (characters by default).
    #[arg(long)]
    budget: Option<usize>,
    /// Packed training samples, one JSON object per line.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Plain goal/action pairs, one JSON object per line.
    #[arg(long)]
    pairs_out: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
struct GenDataFileConfig {
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    budget: Option<usize>,
    tasks: Vec<GenDataTaskEntry>,
}

#[derive(Debug, Deserialize)]
struct GenDataTaskEntry {
    task_id: String,
    repeat: usize,
    #[serde(default)]
    templates: Option<Vec<Template>>,
    #[serde(default)]
    templates_path: Option<PathBuf>,
    #[serde(default)]
    docs_header: Option<String>,
}

#[derive(Args)]
struct ComplexityArgs {
    /// Tool spec JSON providing tests, examples, and the API pool.
    #[arg(long)]
    spec: PathBuf,
    /// Distance variant: strict or unused-only.
    #[arg(long, default_value = "strict")]
    variant: String,
    /// Logarithm base: `e` or a number > 1.
    #[arg(long, default_value = "e")]
    log_base: String,
    /// Override the API pool size (defaults to the spec's function count).
    #[arg(long)]
    d_size: Option<usize>,
    /// Also compute the reversed-F1 score.
    #[arg(long)]
    rf1: bool,
    /// Write the full per-test report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// One or more outcomes.jsonl files from previous eval runs.
    #[arg(long, required = true, num_args = 1..)]
    outcomes: Vec<PathBuf>,
}

fn main() {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            EXIT_CONFIG
        }
    };
    std::process::exit(code);
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Eval(args) => cmd_eval(args),
        Command::GenData(args) => cmd_gendata(args),
        Command::Complexity(args) => cmd_complexity(args),
        Command::Report(args) => cmd_report(args),
    }
}

fn build_client(descriptor: &str) -> Result<Box<dyn CompletionClient>> {
    if let Some(path) = descriptor.strip_prefix("scripted:") {
        let client = ScriptedClient::from_file(Path::new(path))
            .with_context(|| format!("loading replay file {path:?}"))?;
        return Ok(Box::new(client));
    }
    if descriptor.starts_with("http://") || descriptor.starts_with("https://") {
        return Ok(Box::new(HttpCompletionClient::new(descriptor)));
    }
    bail!("backend must be `scripted:<file>` or an http(s) URL, got {descriptor:?}");
}

fn parse_num_docs(text: &str) -> Result<DocCount> {
    if text == "all" {
        return Ok(DocCount::All);
    }
    text.parse::<usize>()
        .map(DocCount::Top)
        .map_err(|_| anyhow!("--num-docs must be `all` or an integer, got {text:?}"))
}

fn cmd_eval(args: EvalArgs) -> Result<i32> {
    let file: EvalFileConfig = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            serde_json::from_str(&text)
                .with_context(|| format!("parsing config {}", path.display()))?
        }
        None => EvalFileConfig::default(),
    };

    let spec_path = args
        .spec
        .or(file.spec)
        .ok_or_else(|| anyhow!("--spec is required (flag or config file)"))?;
    let backend = args
        .backend
        .or(file.backend)
        .ok_or_else(|| anyhow!("--backend is required (flag or config file)"))?;

    let spec = ToolSpec::load(&spec_path)
        .with_context(|| format!("loading spec {}", spec_path.display()))?;
    let client = build_client(&backend)?;

    let template = match args.prompt_template.or(file.prompt_template) {
        Some(path) => PromptTemplate::from_file(&path)
            .with_context(|| format!("loading prompt template {}", path.display()))?,
        None => PromptTemplate::default(),
    };
    let num_docs = match args.num_docs.or(file.num_docs) {
        Some(text) => Some(parse_num_docs(&text)?),
        None => None,
    };

    let opts = EvalOptions {
        gen: GenOptions {
            model: args
                .model
                .or(file.model)
                .unwrap_or_else(|| "default".into()),
            api_key: std::env::var(API_KEY_ENV).ok(),
            chat: args.chat || file.chat.unwrap_or(false),
            template,
            num_docs,
            num_demos: args.num_demos.or(file.num_demos),
            ..GenOptions::default()
        },
        parallelism: args.parallelism.or(file.parallelism).unwrap_or(1).max(1),
        seed: args.seed.or(file.seed).unwrap_or(0),
    };

    let run = evaluate_spec(&spec, client.as_ref(), &opts)?;

    if let Some(out_dir) = args.out.or(file.out) {
        std::fs::create_dir_all(&out_dir)
            .with_context(|| format!("creating {}", out_dir.display()))?;
        let report_path = out_dir.join("report.json");
        std::fs::write(&report_path, serde_json::to_string_pretty(&run)?)
            .with_context(|| format!("writing {}", report_path.display()))?;
        let outcomes_path = out_dir.join("outcomes.jsonl");
        let mut f = std::fs::File::create(&outcomes_path)
            .with_context(|| format!("writing {}", outcomes_path.display()))?;
        for disposition in &run.per_test {
            writeln!(f, "{}", serde_json::to_string(disposition)?)?;
        }
        eprintln!(
            "wrote {} and {}",
            report_path.display(),
            outcomes_path.display()
        );
    }

    let summary = serde_json::json!({
        "tool_id": run.tool_id,
        "seed": run.seed,
        "total": run.report.total,
        "success_rate": run.report.success_rate,
        "executability_rate": run.report.executability_rate,
        "mean_lcs": run.report.mean_lcs,
        "infrastructure_failures": run.infrastructure_failures,
    });
    println!("{summary}");

    Ok(if run.has_infrastructure_failures() {
        EXIT_INFRASTRUCTURE
    } else {
        EXIT_OK
    })
}

fn cmd_gendata(args: GenDataArgs) -> Result<i32> {
    let text = std::fs::read_to_string(&args.config)
        .with_context(|| format!("reading config {}", args.config.display()))?;
    let config: GenDataFileConfig = serde_json::from_str(&text)
        .with_context(|| format!("parsing config {}", args.config.display()))?;
    let base_dir = args.config.parent().unwrap_or(Path::new("."));

    let mut tasks = Vec::new();
    let mut headers = Vec::new();
    for entry in &config.tasks {
        let templates = match (&entry.templates, &entry.templates_path) {
            (Some(inline), None) => inline.clone(),
            (None, Some(path)) => {
                let resolved = if path.is_absolute() {
                    path.clone()
                } else {
                    base_dir.join(path)
                };
                let text = std::fs::read_to_string(&resolved)
                    .with_context(|| format!("reading templates {}", resolved.display()))?;
                serde_json::from_str(&text)
                    .with_context(|| format!("parsing templates {}", resolved.display()))?
            }
            _ => bail!(
                "task {:?} must set exactly one of `templates` or `templates_path`",
                entry.task_id
            ),
        };
        tasks.push(TaskTemplates {
            task_id: entry.task_id.clone(),
            templates,
            repeat: entry.repeat,
        });
        headers.push(entry.docs_header.clone().unwrap_or_default());
    }

    let seed = args.seed.or(config.seed).unwrap_or(0);
    let budget = args.budget.or(config.budget).unwrap_or(8192);
    let pairs = build_dataset(&tasks, seed).map_err(|e| anyhow!("{e}"))?;

    for task in &tasks {
        let samples = pairs.iter().filter(|p| p.task_id == task.task_id).count();
        println!(
            "{}",
            serde_json::json!({ "task": task.task_id, "samples": samples })
        );
    }

    if let Some(path) = &args.pairs_out {
        let mut f =
            std::fs::File::create(path).with_context(|| format!("writing {}", path.display()))?;
        for pair in &pairs {
            writeln!(f, "{}", serde_json::to_string(pair)?)?;
        }
        eprintln!("wrote {} pairs to {}", pairs.len(), path.display());
    }

    if let Some(path) = &args.out {
        let length = |s: &str| s.chars().count();
        let mut f =
            std::fs::File::create(path).with_context(|| format!("writing {}", path.display()))?;
        let mut packed_total = 0usize;
        for (task, header) in tasks.iter().zip(&headers) {
            let task_pairs: Vec<_> = pairs
                .iter()
                .filter(|p| p.task_id == task.task_id)
                .cloned()
                .collect();
            let samples = pack_all_shot(&task_pairs, budget, &length, header)
                .map_err(|e| anyhow!("packing {:?}: {e}", task.task_id))?;
            packed_total += samples.len();
            for sample in &samples {
                writeln!(f, "{}", serde_json::to_string(sample)?)?;
            }
        }
        eprintln!("wrote {packed_total} packed samples to {}", path.display());
    }

    Ok(EXIT_OK)
}

fn parse_variant(text: &str) -> Result<Variant> {
    match text {
        "strict" => Ok(Variant::Strict),
        "unused-only" | "unused_only" => Ok(Variant::UnusedOnly),
        other => bail!("--variant must be strict or unused-only, got {other:?}"),
    }
}

fn cmd_complexity(args: ComplexityArgs) -> Result<i32> {
    let spec = ToolSpec::load(&args.spec)
        .with_context(|| format!("loading spec {}", args.spec.display()))?;
    let variant = parse_variant(&args.variant)?;
    let log_base = LogBase::parse(&args.log_base).map_err(|e| anyhow!(e))?;
    let d_size = args.d_size.unwrap_or(spec.api_functions.len());

    let mut report = complexity_score(&spec.tests, &spec.demos, d_size, variant, log_base)
        .map_err(|e| anyhow!("{e}"))?;
    if args.rf1 {
        report.rf1_score = Some(rf1_score(&spec.tests, &spec.demos).map_err(|e| anyhow!("{e}"))?);
    }

    if let Some(path) = &args.out {
        std::fs::write(path, serde_json::to_string_pretty(&report)?)
            .with_context(|| format!("writing {}", path.display()))?;
        eprintln!("wrote {}", path.display());
    }

    let mut summary = serde_json::json!({
        "tool_id": spec.tool_id,
        "task_score": report.task_score,
        "d_size": d_size,
        "variant": report.config.variant,
        "log_base": report.config.log_base,
    });
    if let Some(rf1) = report.rf1_score {
        summary["rf1_score"] = serde_json::json!(rf1);
    }
    println!("{summary}");
    Ok(EXIT_OK)
}

fn cmd_report(args: ReportArgs) -> Result<i32> {
    let mut dispositions: Vec<TestDisposition> = Vec::new();
    for path in &args.outcomes {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let disposition: TestDisposition = serde_json::from_str(line)
                .with_context(|| format!("{}:{}", path.display(), lineno + 1))?;
            dispositions.push(disposition);
        }
    }
    let (report, infrastructure) = reaggregate(&dispositions);
    let summary = serde_json::json!({
        "report": report,
        "infrastructure_failures": infrastructure,
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(EXIT_OK)
}
