//! Context capping, interleaved manifests, prompt scaffolds and token budgets.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pooling::PoolingSpec;
use crate::subtitle::SecondText;

pub const DEFAULT_S_MAX: usize = 60;
pub const DEFAULT_VISUAL_TOKENS: usize = 256;
pub const DEFAULT_SYS_TOKENS: usize = 128;

pub const REASONING_MARKER: &str = "Reasoning:";
pub const ANSWER_MARKER: &str = "Final Answer:";

/// Name of the deterministic subsampling rule, echoed into manifests.
pub const SUBSAMPLE_RULE: &str = "midpoint: s_k = floor((k - 1/2) * S / K) + 1";

/// The `K = min(S, S_max)` seconds kept in context, sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsamplePlan {
    pub total_seconds: usize,
    pub s_max: usize,
    pub indices: Vec<usize>,
}

impl SubsamplePlan {
    pub fn k(&self) -> usize {
        self.indices.len()
    }
}

/// Keeps the midpoint of each of `K` equal strata of `1..=S`.
/// When `S <= S_max` this is the identity `1..=S`.
pub fn plan_subsample(total_seconds: usize, s_max: usize) -> Result<SubsamplePlan> {
    if s_max == 0 {
        return Err(Error::BadParameter("S_max must be at least 1".into()));
    }
    let k = total_seconds.min(s_max);
    let indices = (1..=k)
        .map(|i| {
            // floor((2i - 1) S / 2K) + 1, exact in integers
            let s = ((2 * i - 1) * total_seconds) / (2 * k) + 1;
            s.clamp(1, total_seconds)
        })
        .collect();
    Ok(SubsamplePlan {
        total_seconds,
        s_max,
        indices,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptMode {
    #[default]
    Freeform,
    Mcq,
}

impl std::str::FromStr for PromptMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "freeform" => Ok(PromptMode::Freeform),
            "mcq" => Ok(PromptMode::Mcq),
            other => Err(Error::BadParameter(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub second: usize,
    pub text: String,
    pub image: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsampleRecord {
    pub rule: String,
    pub total_seconds: usize,
    pub s_max: usize,
    pub k: usize,
}

/// Serialized as `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterleavedManifest {
    pub question: String,
    pub system_prompt: String,
    pub key_frame: Option<String>,
    pub pooling: PoolingSpec,
    pub subsample: SubsampleRecord,
    pub mode: PromptMode,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub options: Vec<String>,
    pub entries: Vec<ManifestEntry>,
}

impl InterleavedManifest {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::json("manifest", e))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::json("manifest", e))
    }
}

/// System prompt text; mentions the key frame only when one is attached.
pub fn system_prompt(with_key_frame: bool, mode: PromptMode) -> String {
    let mut sys = String::from(
        "You are watching a video given as one pooled image per second, each preceded by \
         the subtitles spoken during that second. Each pooled image merges all frames of its \
         second, so motion appears as blur or trails. Answer the question about the video. \
         First explain your reasoning after \"Reasoning:\", then give a short answer after \
         \"Final Answer:\".",
    );
    if mode == PromptMode::Mcq {
        sys.push_str(" The final answer must be the letter of one of the listed options.");
    }
    if with_key_frame {
        sys.push_str(
            " The image attached below is the key frame: the unpooled frame of the second at \
             which the question was asked.",
        );
    }
    sys
}

/// Everything [`build_manifest`] needs besides the plan and per-second inputs.
#[derive(Debug, Clone)]
pub struct ManifestRequest<'a> {
    pub question: &'a str,
    pub key_frame: Option<String>,
    pub pooling: PoolingSpec,
    pub mode: PromptMode,
    pub options: Vec<String>,
}

/// Assembles `[U_{s_1}, Ĩ_{s_1}, …, U_{s_K}, Ĩ_{s_K}]`.
///
/// `pooled` maps a second to its image reference (relative path).
pub fn build_manifest(
    plan: &SubsamplePlan,
    texts: &[SecondText],
    pooled: &BTreeMap<usize, String>,
    request: ManifestRequest<'_>,
) -> Result<InterleavedManifest> {
    let by_second: BTreeMap<usize, &str> = texts.iter().map(|t| (t.second_index, t.text.as_str())).collect();
    let mut entries = Vec::with_capacity(plan.k());
    for &s in &plan.indices {
        let image = pooled
            .get(&s)
            .ok_or_else(|| Error::IncompletePipeline(format!("no pooled image for second {s}")))?;
        let text = by_second
            .get(&s)
            .ok_or_else(|| Error::IncompletePipeline(format!("no subtitle text for second {s}")))?;
        entries.push(ManifestEntry {
            second: s,
            text: (*text).to_string(),
            image: image.clone(),
        });
    }
    Ok(InterleavedManifest {
        question: request.question.to_string(),
        system_prompt: system_prompt(request.key_frame.is_some(), request.mode),
        key_frame: request.key_frame,
        pooling: request.pooling,
        subsample: SubsampleRecord {
            rule: SUBSAMPLE_RULE.to_string(),
            total_seconds: plan.total_seconds,
            s_max: plan.s_max,
            k: plan.k(),
        },
        mode: request.mode,
        options: request.options,
        entries,
    })
}

/// Renders the prompt with `<image:k>` placeholders numbered in order of appearance.
///
/// Layout: system block (key frame last), question, interleaved seconds,
/// lettered options in MCQ mode, then the two elicitor lines.
pub fn build_prompt(manifest: &InterleavedManifest) -> Result<String> {
    if manifest.question.trim().is_empty() {
        return Err(Error::Prompt("question is empty".into()));
    }
    if manifest.mode == PromptMode::Mcq {
        if manifest.options.is_empty() {
            return Err(Error::Prompt("mcq mode needs at least one option".into()));
        }
        if manifest.options.len() > 26 {
            return Err(Error::Prompt(format!("{} options exceed a-z", manifest.options.len())));
        }
    }
    let mut out = String::new();
    let mut next_image = 1usize;
    let mut placeholder = || {
        let p = format!("<image:{next_image}>");
        next_image += 1;
        p
    };

    out.push_str("SYSTEM:\n");
    out.push_str(&manifest.system_prompt);
    out.push('\n');
    if manifest.key_frame.is_some() {
        let _ = writeln!(out, "Key frame: {}", placeholder());
    }
    let _ = write!(out, "\nQuestion: {}\n\nVideo:\n", manifest.question.trim());
    for entry in &manifest.entries {
        if entry.text.is_empty() {
            let _ = writeln!(out, "[{}s]", entry.second);
        } else {
            let _ = writeln!(out, "[{}s] {}", entry.second, entry.text);
        }
        let _ = writeln!(out, "{}", placeholder());
    }
    if manifest.mode == PromptMode::Mcq {
        out.push_str("\nOptions:\n");
        for (i, opt) in manifest.options.iter().enumerate() {
            let _ = writeln!(out, "{}) {}", option_label(i), opt.trim());
        }
    }
    let _ = write!(out, "\n{REASONING_MARKER}\n{ANSWER_MARKER}\n");
    Ok(out)
}

pub fn option_label(i: usize) -> char {
    (b'a' + i as u8) as char
}

/// Whitespace-delimited token count, the default stand-in for a tokenizer.
pub fn count_text_tokens(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Per-second text token counts loaded from a JSON object `{"<second>": count}`.
pub fn load_text_counts(path: &Path) -> Result<BTreeMap<usize, usize>> {
    let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let map: BTreeMap<String, usize> =
        serde_json::from_str(&raw).map_err(|e| Error::json(path.display().to_string(), e))?;
    map.into_iter()
        .map(|(k, v)| {
            k.parse::<usize>()
                .map(|s| (s, v))
                .map_err(|_| Error::BadParameter(format!("text count key {k:?} is not a second index")))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetParams {
    /// Visual tokens per image.
    pub m: usize,
    /// System prompt plus question tokens.
    pub n_sys_q: usize,
    /// Text tokens per second, keyed by 1-based second; absent seconds count 0.
    pub text_counts: BTreeMap<usize, usize>,
}

impl BudgetParams {
    pub fn new(m: usize, n_sys_q: usize, text_counts: BTreeMap<usize, usize>) -> Result<Self> {
        if m == 0 {
            return Err(Error::BadParameter("m must be at least 1".into()));
        }
        Ok(Self {
            m,
            n_sys_q,
            text_counts,
        })
    }

    /// The same count for every second `1..=seconds`.
    pub fn uniform_text(m: usize, n_sys_q: usize, seconds: usize, per_second: usize) -> Result<Self> {
        Self::new(m, n_sys_q, (1..=seconds).map(|s| (s, per_second)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetReport {
    pub k: usize,
    pub fps: u32,
    pub m: usize,
    pub n_sys_q: usize,
    pub text_tokens: usize,
    pub pooled_images: usize,
    pub pooled_tokens: usize,
    pub unpooled_images: usize,
    pub unpooled_tokens: usize,
    pub reduction_ratio: f64,
    pub reduction_ratio_rounded: u64,
}

/// Pooled `N_sys+Q + Σ_k (|u_k| + m)` versus unpooled `N_sys+Q + Σ_k |u_k| + K·f·m`.
pub fn estimate_budget(plan: &SubsamplePlan, params: &BudgetParams, fps: u32) -> Result<BudgetReport> {
    if params.m == 0 {
        return Err(Error::BadParameter("m must be at least 1".into()));
    }
    let k = plan.k();
    let text_tokens: usize = plan
        .indices
        .iter()
        .map(|s| params.text_counts.get(s).copied().unwrap_or(0))
        .sum();
    let pooled_tokens = params.n_sys_q + text_tokens + k * params.m;
    let unpooled_images = k * fps as usize;
    let unpooled_tokens = params.n_sys_q + text_tokens + unpooled_images * params.m;
    let reduction_ratio = if pooled_tokens == 0 {
        1.0
    } else {
        unpooled_tokens as f64 / pooled_tokens as f64
    };
    Ok(BudgetReport {
        k,
        fps,
        m: params.m,
        n_sys_q: params.n_sys_q,
        text_tokens,
        pooled_images: k,
        pooled_tokens,
        unpooled_images,
        unpooled_tokens,
        reduction_ratio,
        reduction_ratio_rounded: reduction_ratio.round() as u64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> PoolingSpec {
        PoolingSpec::wa(24).unwrap()
    }

    fn request<'a>(question: &'a str, key: Option<&str>) -> ManifestRequest<'a> {
        ManifestRequest {
            question,
            key_frame: key.map(str::to_string),
            pooling: spec(),
            mode: PromptMode::Freeform,
            options: Vec::new(),
        }
    }

    fn inputs(seconds: usize) -> (Vec<SecondText>, BTreeMap<usize, String>) {
        let texts = (1..=seconds)
            .map(|s| SecondText {
                second_index: s,
                text: format!("line {s}"),
            })
            .collect();
        let pooled = (1..=seconds)
            .map(|s| (s, crate::pooling::pooled_file_name(s)))
            .collect();
        (texts, pooled)
    }

    #[test]
    fn plan_examples() {
        let p = plan_subsample(300, 60).unwrap();
        assert_eq!(p.k(), 60);
        assert_eq!(plan_subsample(10, 60).unwrap().indices, (1..=10).collect::<Vec<_>>());
        assert_eq!(plan_subsample(5, 2).unwrap().indices, vec![2, 4]);
        assert!(plan_subsample(0, 60).unwrap().indices.is_empty());
        assert!(plan_subsample(10, 0).is_err());
    }

    #[test]
    fn manifest_assembly() {
        let (texts, pooled) = inputs(8);
        let plan = SubsamplePlan {
            total_seconds: 8,
            s_max: 2,
            indices: vec![3, 7],
        };
        let m = build_manifest(&plan, &texts, &pooled, request("why?", None)).unwrap();
        let seconds: Vec<usize> = m.entries.iter().map(|e| e.second).collect();
        assert_eq!(seconds, vec![3, 7]);
        assert_eq!(m.entries[0].text, "line 3");
        assert_eq!(m.entries[1].image, "pooled_0007.png");
    }

    #[test]
    fn empty_manifest_keeps_question() {
        let plan = plan_subsample(0, 60).unwrap();
        let m = build_manifest(&plan, &[], &BTreeMap::new(), request("what?", None)).unwrap();
        assert!(m.entries.is_empty());
        assert_eq!(m.question, "what?");
    }

    #[test]
    fn missing_pooled_image() {
        let (texts, mut pooled) = inputs(4);
        pooled.remove(&2);
        let plan = plan_subsample(4, 60).unwrap();
        let err = build_manifest(&plan, &texts, &pooled, request("q", None)).unwrap_err();
        assert!(matches!(err, Error::IncompletePipeline(_)));
    }

    #[test]
    fn prompt_placeholders_in_order() {
        let (texts, pooled) = inputs(2);
        let plan = plan_subsample(2, 60).unwrap();
        let m = build_manifest(&plan, &texts, &pooled, request("q?", None)).unwrap();
        let p = build_prompt(&m).unwrap();
        assert_eq!(p.matches("<image:").count(), 2);
        assert!(p.find("<image:1>").unwrap() < p.find("<image:2>").unwrap());
        assert!(p.ends_with("Reasoning:\nFinal Answer:\n"));

        let m = build_manifest(&plan, &texts, &pooled, request("q?", Some("key_frame.png"))).unwrap();
        let p = build_prompt(&m).unwrap();
        assert_eq!(p.matches("<image:").count(), 3);
        assert!(p.contains("Key frame: <image:1>"));
        assert!(m.system_prompt.contains("key frame"));
    }

    #[test]
    fn mcq_options_lettered() {
        let (texts, pooled) = inputs(1);
        let plan = plan_subsample(1, 60).unwrap();
        let mut req = request("who?", None);
        req.mode = PromptMode::Mcq;
        req.options = ["Ross", "Rachel", "Monica", "Chandler", "Joey"]
            .map(String::from)
            .to_vec();
        let m = build_manifest(&plan, &texts, &pooled, req).unwrap();
        let p = build_prompt(&m).unwrap();
        for line in ["a) Ross", "b) Rachel", "c) Monica", "d) Chandler", "e) Joey"] {
            assert!(p.contains(line), "missing {line}");
        }
        assert!(!p.contains("f) "));
    }

    #[test]
    fn empty_question_rejected() {
        let plan = plan_subsample(0, 60).unwrap();
        let m = build_manifest(&plan, &[], &BTreeMap::new(), request("  ", None)).unwrap();
        assert!(matches!(build_prompt(&m), Err(Error::Prompt(_))));
    }

    #[test]
    fn token_counts() {
        assert_eq!(count_text_tokens("Hello there General"), 3);
        assert_eq!(count_text_tokens(""), 0);
        assert_eq!(count_text_tokens("a  b\tc"), 3);
    }

    #[test]
    fn worked_budget() {
        let plan = plan_subsample(300, 60).unwrap();
        let params = BudgetParams::uniform_text(256, 128, 300, 10).unwrap();
        let r = estimate_budget(&plan, &params, 24).unwrap();
        assert_eq!(r.pooled_tokens, 16_088);
        assert_eq!(r.unpooled_images, 1_440);
        assert_eq!(r.unpooled_tokens, 369_368);
        assert!((r.reduction_ratio - 22.96).abs() < 0.01);
        assert_eq!(r.reduction_ratio_rounded, 23);
    }

    #[test]
    fn budget_rejects_zero_m() {
        assert!(BudgetParams::new(0, 0, BTreeMap::new()).is_err());
    }

    #[test]
    fn manifest_json_round_trip() {
        let (texts, pooled) = inputs(3);
        let plan = plan_subsample(3, 60).unwrap();
        let m = build_manifest(&plan, &texts, &pooled, request("q", Some("key_frame.png"))).unwrap();
        let json = m.to_json().unwrap();
        assert_eq!(InterleavedManifest::from_json(&json).unwrap(), m);
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["entries"][0]["image"], "pooled_0001.png");
        assert_eq!(v["entries"][2]["second"], 3);
        assert_eq!(v["key_frame"], "key_frame.png");
        assert_eq!(v["pooling"]["operator"], "WA");
    }
}
