//! File-level orchestration: pool a clip, interleave it with subtitles, and
//! the end-to-end `run` that chains both and records every setting used.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{open_frame_source, save_png, ClipMeta, SecondWindow, Windows};
use crate::interleave::{
    build_manifest, build_prompt, count_text_tokens, estimate_budget, load_text_counts, plan_subsample, BudgetParams,
    BudgetReport, InterleavedManifest, ManifestRequest, PromptMode, DEFAULT_SYS_TOKENS, DEFAULT_S_MAX,
    DEFAULT_VISUAL_TOKENS, SUBSAMPLE_RULE,
};
use crate::losses::{dpo_delta, dpo_loss, dpo_record_loss, seq_loglik, sft_loss, PreferenceRecord, TokenLogProbs};
use crate::metrics::{
    mcq_correct, score_record, split_two_turn, summarize, EmbeddingPair, MetricReport, MetricSummary, TwoTurnOutput,
};
use crate::pooling::{key_frame, pool_second, pooled_file_name, Operator, PooledFrame, PoolingSpec};
use crate::subtitle::{all_second_texts, parse_srt, SecondText};

pub const POOLING_RECORD: &str = "pooling.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PROMPT_FILE: &str = "prompt.txt";
pub const BUDGET_FILE: &str = "budget.json";
pub const RUN_RECORD: &str = "run.json";
pub const KEY_FRAME_FILE: &str = "key_frame.png";

pub const ROUNDING_RULE: &str = "round half to even, once, at the real to 8-bit conversion";
pub const BLUR_RULE: &str = "separable gaussian, radius ceil(3*sigma), normalized taps, reflect borders";

#[derive(Debug, Clone)]
pub struct PoolConfig {
    pub source: PathBuf,
    pub fps: Option<u32>,
    pub operator: Operator,
    pub lambda: Option<f64>,
    pub alpha: Option<f64>,
    pub sigma: Option<f64>,
    pub out_dir: PathBuf,
    pub jobs: usize,
    /// Second whose last raw frame is saved as `key_frame.png`.
    pub key_second: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClipRecord {
    pub fps: u32,
    pub total_frames: usize,
    pub seconds: usize,
    pub dropped_frames: usize,
}

impl From<ClipMeta> for ClipRecord {
    fn from(m: ClipMeta) -> Self {
        Self {
            fps: m.fps,
            total_frames: m.total_frames,
            seconds: m.seconds(),
            dropped_frames: m.dropped_frames(),
        }
    }
}

/// Contents of `pooling.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoolingRecord {
    pub pooling: PoolingSpec,
    pub clip: ClipRecord,
    pub rounding: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blur: Option<String>,
    pub images: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key_frame: Option<String>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path.display().to_string(), e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
}

fn build_thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::BadParameter(format!("cannot start {jobs} workers: {e}")))
}

/// Pools every whole second of the source into `out_dir`, writing
/// `pooled_%04d.png` files in second order and `pooling.json`.
pub fn pool_clip(config: &PoolConfig) -> Result<PoolingRecord> {
    let stream = open_frame_source(&config.source, config.fps)?;
    let meta = stream.meta();
    let spec = PoolingSpec::with_defaults(config.operator, meta.fps, config.lambda, config.alpha, config.sigma)?;
    if let Some(k) = config.key_second {
        if k == 0 || k > meta.seconds() {
            return Err(Error::BadParameter(format!(
                "key second {k} is outside the clip's 1..={} seconds",
                meta.seconds()
            )));
        }
    }
    if meta.dropped_frames() > 0 {
        log::warn!(
            "dropping {} trailing frames past the last whole second",
            meta.dropped_frames()
        );
    }
    std::fs::create_dir_all(&config.out_dir).map_err(|e| Error::io(&config.out_dir, e))?;

    let pool = build_thread_pool(config.jobs)?;
    let batch = config.jobs.max(1) * 2;
    let mut windows = Windows::new(stream, meta);
    let mut images = Vec::with_capacity(meta.seconds());
    let mut key_frame_ref = None;
    loop {
        let chunk: Vec<SecondWindow> = windows.by_ref().take(batch).collect::<Result<_>>()?;
        if chunk.is_empty() {
            break;
        }
        let pooled: Vec<PooledFrame> =
            pool.install(|| chunk.par_iter().map(|w| pool_second(w, &spec)).collect::<Result<_>>())?;
        for p in &pooled {
            let name = pooled_file_name(p.second_index);
            save_png(&config.out_dir.join(&name), p.width, p.height, &p.pixels)?;
            images.push(name);
        }
        if let Some(k) = config.key_second {
            if let Some(w) = chunk.iter().find(|w| w.second_index() == k) {
                let f = key_frame(w);
                save_png(&config.out_dir.join(KEY_FRAME_FILE), f.width(), f.height(), f.pixels())?;
                key_frame_ref = Some(KEY_FRAME_FILE.to_string());
            }
        }
    }

    let record = PoolingRecord {
        pooling: spec,
        clip: meta.into(),
        rounding: ROUNDING_RULE.to_string(),
        blur: (spec.operator == Operator::Bblf).then(|| BLUR_RULE.to_string()),
        images,
        key_frame: key_frame_ref,
    };
    write_json(&config.out_dir.join(POOLING_RECORD), &record)?;
    Ok(record)
}

#[derive(Debug, Clone)]
pub struct InterleaveConfig {
    pub pooled_dir: PathBuf,
    pub subtitles: Option<PathBuf>,
    pub question: String,
    /// Image reference for the key frame; defaults to the one recorded by `pool`.
    pub key_frame: Option<String>,
    pub s_max: usize,
    pub m: usize,
    pub sys_tokens: usize,
    pub mode: PromptMode,
    pub options_file: Option<PathBuf>,
    pub text_counts: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl InterleaveConfig {
    pub fn new(pooled_dir: impl Into<PathBuf>, question: impl Into<String>, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            pooled_dir: pooled_dir.into(),
            subtitles: None,
            question: question.into(),
            key_frame: None,
            s_max: DEFAULT_S_MAX,
            m: DEFAULT_VISUAL_TOKENS,
            sys_tokens: DEFAULT_SYS_TOKENS,
            mode: PromptMode::Freeform,
            options_file: None,
            text_counts: None,
            out_dir: out_dir.into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct InterleaveOutput {
    pub manifest: InterleavedManifest,
    pub prompt: String,
    pub budget: BudgetReport,
}

/// Reads one option per non-empty line.
pub fn load_options(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

fn image_ref(pooled_dir: &Path, out_dir: &Path, name: &str) -> String {
    if pooled_dir == out_dir {
        return name.to_string();
    }
    match pooled_dir.strip_prefix(out_dir) {
        Ok(rel) => rel.join(name).to_string_lossy().into_owned(),
        Err(_) => pooled_dir.join(name).to_string_lossy().into_owned(),
    }
}

/// Builds `manifest.json`, `prompt.txt` and `budget.json` from a pooled directory.
pub fn interleave_clip(config: &InterleaveConfig) -> Result<InterleaveOutput> {
    let record: PoolingRecord = read_json(&config.pooled_dir.join(POOLING_RECORD))?;
    let seconds = record.clip.seconds;
    let cues = match &config.subtitles {
        Some(path) => parse_srt(path)?,
        None => Vec::new(),
    };
    let texts: Vec<SecondText> = all_second_texts(&cues, seconds);
    let plan = plan_subsample(seconds, config.s_max)?;

    let pooled: BTreeMap<usize, String> = record
        .images
        .iter()
        .enumerate()
        .map(|(i, name)| (i + 1, image_ref(&config.pooled_dir, &config.out_dir, name)))
        .collect();
    let options = match &config.options_file {
        Some(p) => load_options(p)?,
        None => Vec::new(),
    };
    let key_frame = config.key_frame.clone().or_else(|| {
        record
            .key_frame
            .as_deref()
            .map(|k| image_ref(&config.pooled_dir, &config.out_dir, k))
    });
    let manifest = build_manifest(
        &plan,
        &texts,
        &pooled,
        ManifestRequest {
            question: &config.question,
            key_frame,
            pooling: record.pooling,
            mode: config.mode,
            options,
        },
    )?;
    let prompt = build_prompt(&manifest)?;

    let mut counts: BTreeMap<usize, usize> = texts
        .iter()
        .map(|t| (t.second_index, count_text_tokens(&t.text)))
        .collect();
    if let Some(path) = &config.text_counts {
        counts.extend(load_text_counts(path)?);
    }
    let params = BudgetParams::new(config.m, config.sys_tokens, counts)?;
    let budget = estimate_budget(&plan, &params, record.clip.fps)?;

    std::fs::create_dir_all(&config.out_dir).map_err(|e| Error::io(&config.out_dir, e))?;
    let manifest_path = config.out_dir.join(MANIFEST_FILE);
    let mut json = manifest.to_json()?;
    json.push('\n');
    std::fs::write(&manifest_path, json).map_err(|e| Error::io(&manifest_path, e))?;
    let prompt_path = config.out_dir.join(PROMPT_FILE);
    std::fs::write(&prompt_path, &prompt).map_err(|e| Error::io(&prompt_path, e))?;
    write_json(&config.out_dir.join(BUDGET_FILE), &budget)?;

    Ok(InterleaveOutput {
        manifest,
        prompt,
        budget,
    })
}

/// Full configuration of an end-to-end run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub source: PathBuf,
    pub fps: Option<u32>,
    pub subtitles: Option<PathBuf>,
    pub question: String,
    pub key_second: Option<usize>,
    pub operator: Operator,
    pub lambda: Option<f64>,
    pub alpha: Option<f64>,
    pub sigma: Option<f64>,
    pub s_max: usize,
    pub m: usize,
    pub sys_tokens: usize,
    pub mode: PromptMode,
    pub options_file: Option<PathBuf>,
    pub text_counts: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub jobs: usize,
}

impl RunConfig {
    pub fn new(source: impl Into<PathBuf>, question: impl Into<String>, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            source: source.into(),
            fps: None,
            subtitles: None,
            question: question.into(),
            key_second: None,
            operator: Operator::Bblf,
            lambda: None,
            alpha: None,
            sigma: None,
            s_max: DEFAULT_S_MAX,
            m: DEFAULT_VISUAL_TOKENS,
            sys_tokens: DEFAULT_SYS_TOKENS,
            mode: PromptMode::Freeform,
            options_file: None,
            text_counts: None,
            out_dir: out_dir.into(),
            jobs: 1,
        }
    }

    fn check_paths(&self) -> Result<()> {
        let mut paths = vec![&self.source];
        paths.extend(self.subtitles.iter());
        paths.extend(self.options_file.iter());
        paths.extend(self.text_counts.iter());
        for p in paths {
            if !p.exists() {
                return Err(Error::io(
                    p.as_path(),
                    std::io::Error::new(std::io::ErrorKind::NotFound, "input does not exist"),
                ));
            }
        }
        Ok(())
    }
}

/// Contents of `run.json`: every setting the run used, defaults included.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub tool: String,
    pub version: String,
    pub source: String,
    pub subtitles: Option<String>,
    pub subtitles_missing: bool,
    pub question: String,
    pub key_second: Option<usize>,
    pub pooling: PoolingSpec,
    pub clip: ClipRecord,
    pub rounding: String,
    pub blur: String,
    pub s_max: usize,
    pub subsample_rule: String,
    pub m: usize,
    pub sys_tokens: usize,
    pub mode: PromptMode,
    pub options_file: Option<String>,
    pub text_counts: Option<String>,
    pub text_token_proxy: String,
    pub jobs: usize,
    pub seed: Option<u64>,
    pub budget: BudgetReport,
    pub artifacts: Vec<String>,
}

/// pool → align → interleave → budget, all into `out_dir`, plus `run.json`.
pub fn run_pipeline(config: &RunConfig) -> Result<RunRecord> {
    config.check_paths()?;
    let pooled = pool_clip(&PoolConfig {
        source: config.source.clone(),
        fps: config.fps,
        operator: config.operator,
        lambda: config.lambda,
        alpha: config.alpha,
        sigma: config.sigma,
        out_dir: config.out_dir.clone(),
        jobs: config.jobs,
        key_second: config.key_second,
    })?;
    let out = interleave_clip(&InterleaveConfig {
        pooled_dir: config.out_dir.clone(),
        subtitles: config.subtitles.clone(),
        question: config.question.clone(),
        key_frame: None,
        s_max: config.s_max,
        m: config.m,
        sys_tokens: config.sys_tokens,
        mode: config.mode,
        options_file: config.options_file.clone(),
        text_counts: config.text_counts.clone(),
        out_dir: config.out_dir.clone(),
    })?;

    let mut artifacts = pooled.images.clone();
    if let Some(k) = &pooled.key_frame {
        artifacts.push(k.clone());
    }
    artifacts.extend([POOLING_RECORD, MANIFEST_FILE, PROMPT_FILE, BUDGET_FILE, RUN_RECORD].map(String::from));

    let display = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
    let record = RunRecord {
        tool: "povpool".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        source: config.source.display().to_string(),
        subtitles: display(&config.subtitles),
        subtitles_missing: config.subtitles.is_none(),
        question: config.question.clone(),
        key_second: config.key_second,
        pooling: pooled.pooling,
        clip: pooled.clip,
        rounding: ROUNDING_RULE.into(),
        blur: BLUR_RULE.into(),
        s_max: config.s_max,
        subsample_rule: SUBSAMPLE_RULE.into(),
        m: config.m,
        sys_tokens: config.sys_tokens,
        mode: config.mode,
        options_file: display(&config.options_file),
        text_counts: display(&config.text_counts),
        text_token_proxy: if config.text_counts.is_some() {
            "counts file, whitespace split for absent seconds".into()
        } else {
            "whitespace split".into()
        },
        jobs: config.jobs,
        seed: None,
        budget: out.budget,
        artifacts,
    };
    write_json(&config.out_dir.join(RUN_RECORD), &record)?;
    Ok(record)
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Json {
                context: format!("{} line {}", path.display(), i + 1),
                message: e.to_string(),
            })
        })
        .collect()
}

/// One line of a predictions or references JSONL file. A `raw` field is split
/// into reasoning and answer when those are absent.
#[derive(Debug, Clone, Deserialize)]
pub struct AnswerRecord {
    pub id: serde_json::Value,
    #[serde(default)]
    pub reasoning: Option<String>,
    #[serde(default)]
    pub answer: Option<String>,
    #[serde(default)]
    pub raw: Option<String>,
}

impl AnswerRecord {
    fn key(&self) -> String {
        match &self.id {
            serde_json::Value::String(s) => s.clone(),
            other => other.to_string(),
        }
    }

    fn two_turn(&self) -> (TwoTurnOutput, bool) {
        match (&self.raw, &self.reasoning, &self.answer) {
            (Some(raw), None, None) => {
                let split = split_two_turn(raw);
                (split.output, split.degraded)
            }
            _ => (
                TwoTurnOutput {
                    reasoning: self.reasoning.clone().unwrap_or_default().trim().to_string(),
                    answer: self.answer.clone().unwrap_or_default().trim().to_string(),
                },
                false,
            ),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
struct EmbeddingLine {
    id: serde_json::Value,
    #[serde(flatten)]
    pair: EmbeddingPair,
}

#[derive(Debug, Clone, Serialize)]
pub struct RecordScore {
    pub id: String,
    pub degraded_split: bool,
    #[serde(flatten)]
    pub report: MetricReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub normalization: String,
    pub bleu_smoothing: String,
    pub mode: PromptMode,
    pub mean: MetricSummary,
    pub records: Vec<RecordScore>,
}

/// Scores predictions against references, in reference order.
pub fn eval_metrics_files(
    pred: &Path,
    reference: &Path,
    embeds: Option<&Path>,
    mode: PromptMode,
) -> Result<EvalReport> {
    let preds: Vec<AnswerRecord> = read_jsonl(pred)?;
    let refs: Vec<AnswerRecord> = read_jsonl(reference)?;
    let by_id: BTreeMap<String, &AnswerRecord> = preds.iter().map(|p| (p.key(), p)).collect();
    let embeds: BTreeMap<String, EmbeddingPair> = match embeds {
        Some(path) => read_jsonl::<EmbeddingLine>(path)?
            .into_iter()
            .map(|l| {
                let key = match &l.id {
                    serde_json::Value::String(s) => s.clone(),
                    other => other.to_string(),
                };
                (key, l.pair)
            })
            .collect(),
        None => BTreeMap::new(),
    };

    let mut records = Vec::with_capacity(refs.len());
    for r in &refs {
        let key = r.key();
        let p = by_id
            .get(&key)
            .ok_or_else(|| Error::IncompletePipeline(format!("no prediction for id {key}")))?;
        let (pred_out, degraded) = p.two_turn();
        let (ref_out, _) = r.two_turn();
        let mut report = score_record(&pred_out, &ref_out, embeds.get(&key))?;
        if mode == PromptMode::Mcq {
            report.mcq_correct = Some(mcq_correct(&pred_out, &ref_out));
        }
        records.push(RecordScore {
            id: key,
            degraded_split: degraded,
            report,
        });
    }
    let reports: Vec<MetricReport> = records.iter().map(|r| r.report.clone()).collect();
    Ok(EvalReport {
        normalization: "lowercase, drop non-alphanumeric characters, whitespace split, no stemming".into(),
        bleu_smoothing: "orders longer than the candidate skipped; zero-match orders use 1/(2c)".into(),
        mode,
        mean: summarize(&reports),
        records,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Sft,
    Dpo,
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sft" => Ok(LossKind::Sft),
            "dpo" => Ok(LossKind::Dpo),
            other => Err(Error::BadParameter(format!("unknown loss kind {other:?}"))),
        }
    }
}

pub const DEFAULT_BETA: f64 = 0.1;

#[derive(Debug, Clone, Deserialize)]
struct SftLine {
    #[serde(default)]
    id: Option<serde_json::Value>,
    logp: TokenLogProbs,
}

#[derive(Debug, Clone, Deserialize)]
struct DpoLine {
    #[serde(default)]
    id: Option<serde_json::Value>,
    policy_pos: TokenLogProbs,
    policy_neg: TokenLogProbs,
    ref_pos: TokenLogProbs,
    ref_neg: TokenLogProbs,
    #[serde(default)]
    beta: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RecordLoss {
    pub id: Option<serde_json::Value>,
    pub loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct LossReport {
    pub kind: LossKind,
    pub reduction: String,
    pub records: usize,
    pub loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    pub per_record: Vec<RecordLoss>,
}

/// Evaluates SFT (`{"logp": [...]}` lines) or DPO (`policy_pos`, `policy_neg`,
/// `ref_pos`, `ref_neg`, optional `beta`) records. `beta` overrides per-record values.
pub fn losses_file(kind: LossKind, input: &Path, beta: Option<f64>) -> Result<LossReport> {
    match kind {
        LossKind::Sft => {
            let lines: Vec<SftLine> = read_jsonl(input)?;
            let batch: Vec<TokenLogProbs> = lines.iter().map(|l| l.logp.clone()).collect();
            let loss = sft_loss(&batch)?;
            let per_record = lines
                .iter()
                .map(|l| {
                    Ok(RecordLoss {
                        id: l.id.clone(),
                        loss: -seq_loglik(&l.logp)?,
                        delta: None,
                        beta: None,
                    })
                })
                .collect::<Result<_>>()?;
            Ok(LossReport {
                kind,
                reduction: "mean over sequences of summed token NLL".into(),
                records: lines.len(),
                loss,
                beta: None,
                per_record,
            })
        }
        LossKind::Dpo => {
            let lines: Vec<DpoLine> = read_jsonl(input)?;
            let batch: Vec<PreferenceRecord> = lines
                .iter()
                .map(|l| {
                    PreferenceRecord::new(
                        l.policy_pos.clone(),
                        l.policy_neg.clone(),
                        l.ref_pos.clone(),
                        l.ref_neg.clone(),
                        beta.or(l.beta).unwrap_or(DEFAULT_BETA),
                    )
                })
                .collect::<Result<_>>()?;
            let loss = dpo_loss(&batch)?;
            let per_record = lines
                .iter()
                .zip(&batch)
                .map(|(l, r)| {
                    Ok(RecordLoss {
                        id: l.id.clone(),
                        loss: dpo_record_loss(r)?,
                        delta: Some(dpo_delta(r)?),
                        beta: Some(r.beta),
                    })
                })
                .collect::<Result<_>>()?;
            Ok(LossReport {
                kind,
                reduction: "mean over records of softplus(-beta * delta)".into(),
                records: lines.len(),
                loss,
                // a single batch-wide beta, when there is one
                beta: beta.or_else(|| lines.iter().all(|l| l.beta.is_none()).then_some(DEFAULT_BETA)),
                per_record,
            })
        }
    }
}
