use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use povpool::interleave::{
    estimate_budget, load_text_counts, plan_subsample, BudgetParams, PromptMode, DEFAULT_SYS_TOKENS, DEFAULT_S_MAX,
    DEFAULT_VISUAL_TOKENS,
};
use povpool::pipeline::{
    eval_metrics_files, interleave_clip, losses_file, pool_clip, run_pipeline, InterleaveConfig, LossKind, PoolConfig,
    RunConfig,
};
use povpool::{Error, Operator};

/// Pool video into one image per second, interleave it with subtitles, and
/// compute token budgets, answer metrics and preference-loss numerics.
#[derive(Parser, Debug)]
#[command(name = "povpool", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Pool every whole second of a clip into pooled_%04d.png plus pooling.json.
    Pool(PoolArgs),
    /// Build manifest.json, prompt.txt and budget.json from a pooled directory.
    Interleave(InterleaveArgs),
    /// Print pooled and unpooled context-length estimates.
    Budget(BudgetArgs),
    /// Score predictions against references (F1, BLEU-1, BLEU-4, ROUGE-L, cosine).
    EvalMetrics(EvalArgs),
    /// Evaluate SFT or DPO losses over JSONL log-probability records.
    Losses(LossArgs),
    /// pool, align subtitles, interleave and budget in one go, recording run.json.
    Run(RunArgs),
}

#[derive(Args, Debug, Clone)]
struct PoolingArgs {
    /// Pooling operator: wa, wae, war or bblf.
    #[arg(long, default_value = "bblf", value_parser = parse_operator)]
    operator: Operator,
    /// WAE recency rate λ > 0 [default: 1/fps].
    #[arg(long)]
    lambda: Option<f64>,
    /// BBLF last-frame weight α in [0, 1] [default: 0.5].
    #[arg(long)]
    alpha: Option<f64>,
    /// BBLF blur standard deviation σ > 0 in pixels [default: 2.0].
    #[arg(long)]
    sigma: Option<f64>,
}

#[derive(Args, Debug, Clone)]
struct SourceArgs {
    /// Directory of frame_%06d.png files, or a .rgb24 stream with a .json sidecar.
    #[arg(long)]
    source: PathBuf,
    /// Frame rate; required for image directories, must match the sidecar for raw streams.
    #[arg(long)]
    fps: Option<u32>,
    /// Worker threads for per-second pooling.
    #[arg(long, env = "POVPOOL_JOBS", default_value_t = default_jobs())]
    jobs: usize,
}

#[derive(Args, Debug)]
struct PoolArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[command(flatten)]
    pooling: PoolingArgs,
    /// Second whose last raw frame is also written as key_frame.png.
    #[arg(long)]
    key_second: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct ContextArgs {
    /// Cap on the number of pooled seconds kept in context.
    #[arg(long, default_value_t = DEFAULT_S_MAX)]
    s_max: usize,
    /// Visual tokens per image.
    #[arg(long, default_value_t = DEFAULT_VISUAL_TOKENS)]
    m: usize,
    /// Tokens of system prompt plus question.
    #[arg(long, default_value_t = DEFAULT_SYS_TOKENS)]
    sys_tokens: usize,
    /// Prompt mode: freeform, or mcq with lettered options.
    #[arg(long, default_value = "freeform", value_parser = parse_mode)]
    mode: PromptMode,
    /// Answer options, one per line (mcq mode).
    #[arg(long)]
    options_file: Option<PathBuf>,
    /// JSON object {"<second>": tokens} overriding whitespace token counts.
    #[arg(long)]
    text_counts: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct InterleaveArgs {
    /// Directory written by `pool`.
    #[arg(long)]
    pooled: PathBuf,
    /// Subtitle file (.srt, or WebVTT).
    #[arg(long)]
    subs: Option<PathBuf>,
    #[arg(long)]
    question: String,
    /// Key-frame image reference [default: the one recorded by `pool`].
    #[arg(long)]
    key_frame: Option<String>,
    #[command(flatten)]
    context: ContextArgs,
    /// Output directory [default: the pooled directory].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[command(group(clap::ArgGroup::new("text").required(true).args(["text_per_second", "text_counts"])))]
struct BudgetArgs {
    /// Clip length S in whole seconds.
    #[arg(long)]
    seconds: usize,
    /// Raw frame rate, used for the unpooled estimate.
    #[arg(long)]
    fps: u32,
    #[arg(long, default_value_t = DEFAULT_S_MAX)]
    s_max: usize,
    #[arg(long, default_value_t = DEFAULT_VISUAL_TOKENS)]
    m: usize,
    #[arg(long, default_value_t = DEFAULT_SYS_TOKENS)]
    sys_tokens: usize,
    /// Subtitle tokens per second, applied to every second.
    #[arg(long)]
    text_per_second: Option<usize>,
    /// JSON object {"<second>": tokens}.
    #[arg(long)]
    text_counts: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Predictions JSONL: {"id", "reasoning", "answer"} or {"id", "raw"}.
    #[arg(long)]
    pred: PathBuf,
    /// References JSONL: {"id", "reasoning", "answer"}.
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Embeddings JSONL: {"id", "pred_vec", "ref_vec", "pred_vec_r", "ref_vec_r"}.
    #[arg(long)]
    embeds: Option<PathBuf>,
    /// freeform, or mcq to add option-letter accuracy.
    #[arg(long, default_value = "freeform", value_parser = parse_mode)]
    mode: PromptMode,
    #[arg(long, default_value = "report.json")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct LossArgs {
    /// sft or dpo.
    #[arg(long, value_parser = parse_kind)]
    kind: LossKind,
    #[arg(long)]
    input: PathBuf,
    /// DPO temperature β, overriding per-record values [default: 0.1].
    #[arg(long)]
    beta: Option<f64>,
    /// Write the report, including per-record losses, to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[command(flatten)]
    pooling: PoolingArgs,
    /// Subtitle file; when omitted every second has empty subtitle text.
    #[arg(long)]
    subs: Option<PathBuf>,
    #[arg(long)]
    question: String,
    /// Second at which the question was asked; its last raw frame becomes the key frame.
    #[arg(long)]
    key_second: Option<usize>,
    #[command(flatten)]
    context: ContextArgs,
    #[arg(long)]
    out: PathBuf,
    /// Reserved; nothing in the pipeline is random.
    #[arg(long)]
    seed: Option<u64>,
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn parse_operator(s: &str) -> Result<Operator, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_mode(s: &str) -> Result<PromptMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_kind(s: &str) -> Result<LossKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn print_json<T: Serialize>(value: &T) -> Result<(), Error> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Json {
        context: "stdout".into(),
        message: e.to_string(),
    })?;
    println!("{text}");
    Ok(())
}

fn write_json<T: Serialize>(path: &PathBuf, value: &T) -> Result<(), Error> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Json {
        context: path.display().to_string(),
        message: e.to_string(),
    })?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.clone(),
        source: e,
    })
}

fn execute(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Pool(args) => {
            let record = pool_clip(&PoolConfig {
                source: args.source.source,
                fps: args.source.fps,
                operator: args.pooling.operator,
                lambda: args.pooling.lambda,
                alpha: args.pooling.alpha,
                sigma: args.pooling.sigma,
                out_dir: args.out,
                jobs: args.source.jobs,
                key_second: args.key_second,
            })?;
            print_json(&serde_json::json!({
                "pooling": record.pooling,
                "clip": record.clip,
                "images": record.images.len(),
            }))
        }
        Command::Interleave(args) => {
            let out_dir = args.out.unwrap_or_else(|| args.pooled.clone());
            let out = interleave_clip(&InterleaveConfig {
                pooled_dir: args.pooled,
                subtitles: args.subs,
                question: args.question,
                key_frame: args.key_frame,
                s_max: args.context.s_max,
                m: args.context.m,
                sys_tokens: args.context.sys_tokens,
                mode: args.context.mode,
                options_file: args.context.options_file,
                text_counts: args.context.text_counts,
                out_dir,
            })?;
            print_json(&out.budget)
        }
        Command::Budget(args) => {
            let plan = plan_subsample(args.seconds, args.s_max)?;
            let counts = match (&args.text_counts, args.text_per_second) {
                (Some(path), _) => load_text_counts(path)?,
                (None, Some(n)) => (1..=args.seconds).map(|s| (s, n)).collect(),
                (None, None) => unreachable!("clap requires one text source"),
            };
            let params = BudgetParams::new(args.m, args.sys_tokens, counts)?;
            let report = estimate_budget(&plan, &params, args.fps)?;
            print_json(&serde_json::json!({
                "seconds": args.seconds,
                "s_max": args.s_max,
                "text_per_second": args.text_per_second,
                "text_counts": args.text_counts,
                "report": report,
            }))
        }
        Command::EvalMetrics(args) => {
            let report = eval_metrics_files(&args.pred, &args.reference, args.embeds.as_deref(), args.mode)?;
            write_json(&args.out, &report)?;
            print_json(&report.mean)
        }
        Command::Losses(args) => {
            let report = losses_file(args.kind, &args.input, args.beta)?;
            if let Some(out) = &args.out {
                write_json(out, &report)?;
            }
            print_json(&serde_json::json!({
                "kind": report.kind,
                "records": report.records,
                "loss": report.loss,
                "beta": report.beta,
            }))
        }
        Command::Run(args) => {
            if args.seed.is_some() {
                log::info!("--seed is accepted but unused: the pipeline is deterministic");
            }
            let record = run_pipeline(&RunConfig {
                source: args.source.source,
                fps: args.source.fps,
                subtitles: args.subs,
                question: args.question,
                key_second: args.key_second,
                operator: args.pooling.operator,
                lambda: args.pooling.lambda,
                alpha: args.pooling.alpha,
                sigma: args.pooling.sigma,
                s_max: args.context.s_max,
                m: args.context.m,
                sys_tokens: args.context.sys_tokens,
                mode: args.context.mode,
                options_file: args.context.options_file,
                text_counts: args.context.text_counts,
                out_dir: args.out,
                jobs: args.source.jobs,
            })?;
            print_json(&record.budget)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let payload = serde_json::json!({
                "error": err.kind(),
                "message": err.to_string(),
                "exit_code": err.exit_code(),
            });
            eprintln!("{payload}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
