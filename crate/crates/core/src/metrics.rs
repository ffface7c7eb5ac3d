//! Lexical and embedding metrics for two-turn (reasoning + answer) outputs.
//!
//! All lexical metrics share one normalization: lowercase, drop every
//! character that is neither alphanumeric nor whitespace, split on
//! whitespace. No stemming.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interleave::{ANSWER_MARKER, REASONING_MARKER};

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TwoTurnOutput {
    pub reasoning: String,
    pub answer: String,
}

/// Result of [`split_two_turn`]; `degraded` is set when a marker was missing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitOutput {
    pub output: TwoTurnOutput,
    pub degraded: bool,
}

/// Splits raw model text at the last `Final Answer:` and the last
/// `Reasoning:` before it (case-insensitive).
pub fn split_two_turn(raw: &str) -> SplitOutput {
    // ASCII lowercasing keeps byte offsets aligned with `raw`.
    let lower = raw.to_ascii_lowercase();
    let answer_marker = ANSWER_MARKER.to_ascii_lowercase();
    let reasoning_marker = REASONING_MARKER.to_ascii_lowercase();

    let Some(answer_at) = lower.rfind(&answer_marker) else {
        return SplitOutput {
            output: TwoTurnOutput {
                reasoning: String::new(),
                answer: raw.trim().to_string(),
            },
            degraded: true,
        };
    };
    let answer = raw[answer_at + answer_marker.len()..].trim().to_string();
    let head = &lower[..answer_at];
    match head.rfind(&reasoning_marker) {
        Some(r) => SplitOutput {
            output: TwoTurnOutput {
                reasoning: raw[r + reasoning_marker.len()..answer_at].trim().to_string(),
                answer,
            },
            degraded: false,
        },
        None => SplitOutput {
            output: TwoTurnOutput {
                reasoning: raw[..answer_at].trim().to_string(),
                answer,
            },
            degraded: true,
        },
    }
}

pub fn normalize(text: &str) -> String {
    let cleaned: String = text
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .flat_map(char::to_lowercase)
        .collect();
    cleaned.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn tokens(text: &str) -> Vec<String> {
    normalize(text)
        .split(' ')
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

fn counts<'a, T>(items: impl IntoIterator<Item = T>) -> HashMap<T, usize>
where
    T: std::hash::Hash + Eq + 'a,
{
    let mut map = HashMap::new();
    for it in items {
        *map.entry(it).or_insert(0) += 1;
    }
    map
}

/// Bag-of-tokens F1. Both empty scores 1, exactly one empty scores 0.
pub fn token_f1(pred: &str, reference: &str) -> f64 {
    let p = tokens(pred);
    let r = tokens(reference);
    match (p.is_empty(), r.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let pc = counts(p.iter());
    let rc = counts(r.iter());
    let common: usize = pc.iter().map(|(t, n)| (*n).min(rc.get(t).copied().unwrap_or(0))).sum();
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / p.len() as f64;
    let recall = common as f64 / r.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// BLEU with brevity penalty `exp(1 - r/c)` for `c < r`.
///
/// Orders the candidate is too short to contain are left out of the
/// geometric mean; an order with zero clipped matches contributes `1/(2c)`.
pub fn bleu(pred: &str, reference: &str, max_n: usize) -> f64 {
    let p = tokens(pred);
    let r = tokens(reference);
    let c = p.len();
    if c == 0 || max_n == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    let mut orders = 0usize;
    for n in 1..=max_n {
        if c < n {
            break;
        }
        let cand = counts(p.windows(n));
        let refs = counts(r.windows(n));
        let matched: usize = cand
            .iter()
            .map(|(g, k)| (*k).min(refs.get(g).copied().unwrap_or(0)))
            .sum();
        let total = c - n + 1;
        let precision = if matched == 0 {
            1.0 / (2.0 * c as f64)
        } else {
            matched as f64 / total as f64
        };
        log_sum += precision.ln();
        orders += 1;
    }
    let bp = if c < r.len() {
        (1.0 - r.len() as f64 / c as f64).exp()
    } else {
        1.0
    };
    bp * (log_sum / orders as f64).exp()
}

pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L F-measure (β = 1) over a pre-tokenized pair.
pub fn rouge_l_tokens<T: PartialEq>(pred: &[T], reference: &[T]) -> f64 {
    if pred.is_empty() && reference.is_empty() {
        return 1.0;
    }
    let lcs = lcs_len(pred, reference);
    if lcs == 0 {
        return 0.0;
    }
    let p = lcs as f64 / pred.len() as f64;
    let r = lcs as f64 / reference.len() as f64;
    2.0 * p * r / (p + r)
}

pub fn rouge_l(pred: &str, reference: &str) -> f64 {
    rouge_l_tokens(&tokens(pred), &tokens(reference))
}

pub fn embed_cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimMismatch(u.len(), v.len()));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// Externally computed embeddings for one record.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EmbeddingPair {
    pub pred_vec: Vec<f64>,
    pub ref_vec: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pred_vec_r: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ref_vec_r: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricReport {
    pub f1: f64,
    pub bleu1: f64,
    pub bleu4_bp: f64,
    pub rouge_l: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embed_cos: Option<f64>,
    pub f1_r: f64,
    pub bleu1_r: f64,
    pub bleu4_bp_r: f64,
    pub rouge_l_r: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embed_cos_r: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mcq_correct: Option<bool>,
}

pub fn score_record(
    pred: &TwoTurnOutput,
    reference: &TwoTurnOutput,
    embeds: Option<&EmbeddingPair>,
) -> Result<MetricReport> {
    let (embed_cos, embed_cos_r) = match embeds {
        Some(e) => {
            let answer = embed_cosine(&e.pred_vec, &e.ref_vec)?;
            let reasoning = match (&e.pred_vec_r, &e.ref_vec_r) {
                (Some(p), Some(r)) => Some(embed_cosine(p, r)?),
                _ => None,
            };
            (Some(answer), reasoning)
        }
        None => (None, None),
    };
    Ok(MetricReport {
        f1: token_f1(&pred.answer, &reference.answer),
        bleu1: bleu(&pred.answer, &reference.answer, 1),
        bleu4_bp: bleu(&pred.answer, &reference.answer, 4),
        rouge_l: rouge_l(&pred.answer, &reference.answer),
        embed_cos,
        f1_r: token_f1(&pred.reasoning, &reference.reasoning),
        bleu1_r: bleu(&pred.reasoning, &reference.reasoning, 1),
        bleu4_bp_r: bleu(&pred.reasoning, &reference.reasoning, 4),
        rouge_l_r: rouge_l(&pred.reasoning, &reference.reasoning),
        embed_cos_r,
        mcq_correct: None,
    })
}

/// Option letter of an answer such as `"b"`, `"B)"` or `"(c) Monica"`.
pub fn option_letter(answer: &str) -> Option<char> {
    let first = answer
        .split_whitespace()
        .next()?
        .trim_matches(|c: char| !c.is_alphanumeric());
    let mut chars = first.chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) if c.is_ascii_alphabetic() => Some(c.to_ascii_lowercase()),
        _ => None,
    }
}

pub fn mcq_correct(pred: &TwoTurnOutput, reference: &TwoTurnOutput) -> bool {
    match (option_letter(&pred.answer), option_letter(&reference.answer)) {
        (Some(a), Some(b)) => a == b,
        _ => false,
    }
}

/// Mean of each metric across records, summed in record order. Embedding and
/// MCQ fields are averaged over the records that carry them.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricSummary {
    pub count: usize,
    pub f1: f64,
    pub bleu1: f64,
    pub bleu4_bp: f64,
    pub rouge_l: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embed_cos: Option<f64>,
    pub f1_r: f64,
    pub bleu1_r: f64,
    pub bleu4_bp_r: f64,
    pub rouge_l_r: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embed_cos_r: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mcq_accuracy: Option<f64>,
}

fn mean_of<T>(items: &[T], f: impl Fn(&T) -> f64) -> f64 {
    if items.is_empty() {
        return 0.0;
    }
    items.iter().map(f).sum::<f64>() / items.len() as f64
}

fn mean_opt<T>(items: &[T], f: impl Fn(&T) -> Option<f64>) -> Option<f64> {
    let present: Vec<f64> = items.iter().filter_map(f).collect();
    if present.is_empty() {
        None
    } else {
        Some(present.iter().sum::<f64>() / present.len() as f64)
    }
}

pub fn summarize(reports: &[MetricReport]) -> MetricSummary {
    MetricSummary {
        count: reports.len(),
        f1: mean_of(reports, |r| r.f1),
        bleu1: mean_of(reports, |r| r.bleu1),
        bleu4_bp: mean_of(reports, |r| r.bleu4_bp),
        rouge_l: mean_of(reports, |r| r.rouge_l),
        embed_cos: mean_opt(reports, |r| r.embed_cos),
        f1_r: mean_of(reports, |r| r.f1_r),
        bleu1_r: mean_of(reports, |r| r.bleu1_r),
        bleu4_bp_r: mean_of(reports, |r| r.bleu4_bp_r),
        rouge_l_r: mean_of(reports, |r| r.rouge_l_r),
        embed_cos_r: mean_opt(reports, |r| r.embed_cos_r),
        mcq_accuracy: mean_opt(reports, |r| r.mcq_correct.map(|c| if c { 1.0 } else { 0.0 })),
    }
}
