//! `icl-select`: build knowledge bases, pick few-shot exemplars and run
//! evaluations from the command line.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use icl_core::graph::ModalityWeights;
use icl_core::harness::{self, Baseline, EvalConfig, EvalInputs, EvalReport};
use icl_core::lvlm_client::{MockOracle, Oracle};
use icl_core::pipeline::{select_exemplars, PipelineConfig};
use icl_core::retrieval::RetrievalMode;
use icl_core::synth::{generate_synthetic, write_synthetic, SynthParams};
use icl_core::KnowledgeBase;
use icl_lvlm::LvlmClient;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "icl-select", version, about = "Graph-propagated exemplar selection for few-shot multimodal prompting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a knowledge-base JSONL file and write its canonical form.
    BuildKb(BuildKbArgs),
    /// Select exemplars for one or more queries and print them as JSON.
    Select(SelectArgs),
    /// Run an evaluation described by a JSON config.
    Evaluate(EvaluateArgs),
    /// Repeat an evaluation over a grid of alpha values or shot counts.
    Sweep(SweepArgs),
    /// Write a synthetic two-cluster knowledge base and query set.
    Synth(SynthArgs),
}

#[derive(Args)]
struct BuildKbArgs {
    #[arg(long = "in", value_name = "JSONL")]
    input: PathBuf,
    /// Output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Only check the file and print a summary.
    #[arg(long)]
    validate: bool,
}

#[derive(Args)]
struct SelectArgs {
    #[arg(long, value_name = "JSONL")]
    kb: PathBuf,
    /// JSONL file holding the query records.
    #[arg(long, value_name = "JSONL")]
    query: PathBuf,
    /// Only this query from the query file.
    #[arg(long)]
    query_id: Option<String>,
    #[arg(long, default_value = "ti2ti")]
    mode: RetrievalMode,
    #[arg(long, default_value_t = 50)]
    k1: usize,
    #[arg(long, default_value_t = 3)]
    k2: usize,
    #[arg(long = "ke", default_value_t = 10)]
    k_e: usize,
    #[arg(long, default_value_t = 0.4)]
    alpha: f64,
    #[arg(long, default_value_t = 3)]
    steps: usize,
    /// Modality weights as `i2i,t2t,ti2ti`.
    #[arg(long, value_parser = parse_lambda, default_value = "0.3,0.4,0.3")]
    lambda: ModalityWeights,
    /// Embedding space used for aggregation.
    #[arg(long, default_value = "ti2ti")]
    space: RetrievalMode,
    #[arg(long)]
    balance_labels: bool,
    /// Write the fused graph of the (single) query to this file.
    #[arg(long, value_name = "PATH")]
    dump_graph: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    /// Server root of an OpenAI-compatible endpoint.
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    /// Use the offline majority-label oracle.
    #[arg(long)]
    mock: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long, value_name = "JSON")]
    config: PathBuf,
    #[command(flatten)]
    oracle: OracleArgs,
    #[arg(long)]
    baseline: Option<Baseline>,
    #[arg(long)]
    k2: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Per-query trace output, overriding the config.
    #[arg(long, value_name = "PATH")]
    trace: Option<PathBuf>,
    /// Write the JSON report here.
    #[arg(long, value_name = "PATH")]
    report: Option<PathBuf>,
    /// Print the JSON report instead of the table.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, value_name = "JSON")]
    config: PathBuf,
    #[command(flatten)]
    oracle: OracleArgs,
    /// Comma-separated alpha values.
    #[arg(long, value_delimiter = ',', conflicts_with = "shots", required_unless_present = "shots")]
    alpha: Vec<f64>,
    /// Comma-separated shot counts.
    #[arg(long, value_delimiter = ',')]
    shots: Vec<usize>,
    #[arg(long, value_name = "PATH")]
    report: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    n_samples: usize,
    #[arg(long, default_value_t = 200)]
    n_queries: usize,
    #[arg(long = "dv", default_value_t = 32)]
    d_v: usize,
    #[arg(long = "dt", default_value_t = 32)]
    d_t: usize,
    #[arg(long, default_value_t = 2.0)]
    sep: f64,
    #[arg(long, default_value_t = 0.6)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_lambda(s: &str) -> Result<ModalityWeights, String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    let [i2i, t2t, ti2ti] = parts[..] else {
        return Err(format!("expected three comma-separated weights, got {}", parts.len()));
    };
    let w = ModalityWeights { i2i, t2t, ti2ti };
    w.validate().map_err(|e| e.to_string())?;
    Ok(w)
}

fn write_out(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn build_kb(args: BuildKbArgs) -> Result<()> {
    let kb = KnowledgeBase::load(&args.input)?;
    let authentic = kb
        .samples()
        .iter()
        .filter(|s| s.label == icl_core::kb::Label::Authentic)
        .count();
    eprintln!(
        "{}: {} records, d_v={}, d_t={}, {} authentic, {} manipulated",
        args.input.display(),
        kb.len(),
        kb.dim_visual(),
        kb.dim_textual(),
        authentic,
        kb.len() - authentic
    );
    if args.validate && args.out.is_none() {
        return Ok(());
    }
    match &args.out {
        Some(path) => kb.save(path)?,
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            kb.write_jsonl(&mut lock)?;
            lock.flush()?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct Scored<'a> {
    id: &'a str,
    score: f64,
}

#[derive(Serialize)]
struct SelectOutput<'a> {
    query_id: &'a str,
    candidates: Vec<Scored<'a>>,
    exemplars: Vec<Scored<'a>>,
    step_weights: Vec<f64>,
    step_alignment: Vec<f64>,
    query_isolated: bool,
}

fn select(args: SelectArgs) -> Result<()> {
    let kb = KnowledgeBase::load(&args.kb)?;
    let queries = KnowledgeBase::load(&args.query)?;
    let mut cfg = PipelineConfig {
        mode: args.mode,
        k1: args.k1,
        k_e: args.k_e,
        lambda: args.lambda,
        balance_labels: args.balance_labels,
        ..PipelineConfig::default()
    };
    cfg.gstas.alpha = args.alpha;
    cfg.gstas.steps = args.steps;
    cfg.gstas.k2 = args.k2;
    cfg.gstas.space = args.space;

    let picked: Vec<usize> = match &args.query_id {
        Some(id) => vec![queries
            .position(id)
            .with_context(|| format!("query id {id:?} not found in {}", args.query.display()))?],
        None => (0..queries.len()).collect(),
    };
    if args.dump_graph.is_some() && picked.len() != 1 {
        bail!("--dump-graph needs a single query; pass --query-id");
    }

    let selections = picked
        .iter()
        .map(|&i| select_exemplars(&kb, queries.entry(i), &cfg))
        .collect::<icl_core::Result<Vec<_>>>()?;

    if let Some(path) = &args.dump_graph {
        let dump = selections[0].fused.as_ref().map(|g| g.dump());
        write_out(path, &serde_json::to_string_pretty(&dump)?)?;
    }

    let out: Vec<SelectOutput> = selections
        .iter()
        .map(|s| SelectOutput {
            query_id: &s.query_id,
            candidates: s
                .candidates
                .entries
                .iter()
                .map(|c| Scored { id: &c.sample_id, score: c.similarity })
                .collect(),
            exemplars: s
                .exemplars
                .iter()
                .zip(s.exemplar_scores())
                .map(|(id, score)| Scored { id, score })
                .collect(),
            step_weights: s.run.as_ref().map(|r| r.step_weights.clone()).unwrap_or_default(),
            step_alignment: s.run.as_ref().map(|r| r.step_alignment.clone()).unwrap_or_default(),
            query_isolated: s.run.as_ref().is_some_and(|r| r.query_isolated),
        })
        .collect();
    let text = if args.query_id.is_some() {
        serde_json::to_string_pretty(&out[0])?
    } else {
        serde_json::to_string_pretty(&out)?
    };
    println!("{text}");
    Ok(())
}

/// Mock when asked for (flag or config), otherwise an HTTP client built from
/// the config's endpoint section with command-line overrides.
fn make_oracle(cfg: &EvalConfig, args: &OracleArgs) -> Result<Box<dyn Oracle>> {
    if args.mock || (cfg.mock && args.endpoint.is_none()) {
        let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
        return Ok(Box::new(MockOracle { workers }));
    }
    let mut endpoint = cfg.endpoint.clone().unwrap_or_default();
    if let Some(url) = &args.endpoint {
        endpoint.base_url = url.clone();
    } else if cfg.endpoint.is_none() {
        bail!("no oracle: pass --mock, --endpoint, or set \"endpoint\" in the config");
    }
    if let Some(model) = &args.model {
        endpoint.model_name = model.clone();
    }
    Ok(Box::new(LvlmClient::new(endpoint)?))
}

fn emit(reports: &[EvalReport], report_path: Option<&Path>, json: bool) -> Result<()> {
    let text = if reports.len() == 1 {
        serde_json::to_string_pretty(&reports[0])?
    } else {
        serde_json::to_string_pretty(reports)?
    };
    if let Some(path) = report_path {
        write_out(path, &text)?;
    }
    if json {
        println!("{text}");
    } else {
        for (i, r) in reports.iter().enumerate() {
            if i > 0 {
                println!();
            }
            print!("{}", r.table());
        }
    }
    Ok(())
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    let mut cfg = EvalConfig::load(&args.config)?;
    if let Some(b) = args.baseline {
        cfg.baseline = b;
    }
    if let Some(k2) = args.k2 {
        cfg.k2 = k2;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if args.trace.is_some() {
        cfg.trace_path = args.trace.clone();
    }
    let oracle = make_oracle(&cfg, &args.oracle)?;
    let report = harness::evaluate(&cfg, oracle.as_ref())?;
    emit(&[report], args.report.as_deref(), args.json)
}

fn sweep(args: SweepArgs) -> Result<()> {
    let cfg = EvalConfig::load(&args.config)?;
    let oracle = make_oracle(&cfg, &args.oracle)?;
    let inputs = EvalInputs::load(&cfg)?;
    let reports = if args.alpha.is_empty() {
        harness::sweep_shots(&inputs.kb, &inputs.queries, &cfg, &inputs.template, oracle.as_ref(), &args.shots)?
    } else {
        harness::sweep_alpha(&inputs.kb, &inputs.queries, &cfg, &inputs.template, oracle.as_ref(), &args.alpha)?
    };
    emit(&reports, args.report.as_deref(), args.json)
}

fn synth(args: SynthArgs) -> Result<()> {
    let params = SynthParams {
        n_samples: args.n_samples,
        n_queries: args.n_queries,
        d_v: args.d_v,
        d_t: args.d_t,
        cluster_sep: args.sep,
        noise: args.noise,
        seed: args.seed,
    };
    let data = generate_synthetic(&params)?;
    let (kb, queries) = write_synthetic(&data, &args.out)?;
    println!("{}", kb.display());
    println!("{}", queries.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::BuildKb(a) => build_kb(a),
        Command::Select(a) => select(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Sweep(a) => sweep(a),
        Command::Synth(a) => synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
