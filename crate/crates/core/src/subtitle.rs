//! SubRip / WebVTT parsing and per-second subtitle collection.
//!
//! Cue spans `[a, b)` and second bins `[s-1, s)` are both half-open, so a cue
//! ending exactly on a second boundary does not leak into the next second.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubtitleCue {
    pub start_s: f64,
    pub end_s: f64,
    pub text: String,
}

impl SubtitleCue {
    pub fn new(start_s: f64, end_s: f64, text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        if start_s.partial_cmp(&end_s) != Some(std::cmp::Ordering::Less) {
            return Err(Error::BadParameter(format!(
                "cue must start before it ends ({start_s} >= {end_s})"
            )));
        }
        if text.trim().is_empty() {
            return Err(Error::BadParameter("cue text is empty".into()));
        }
        Ok(Self { start_s, end_s, text })
    }

    /// Whether `[start, end)` intersects `[s-1, s)`.
    pub fn overlaps_second(&self, second: usize) -> bool {
        let lo = (second as f64 - 1.0).max(self.start_s);
        let hi = (second as f64).min(self.end_s);
        lo < hi
    }
}

/// Subtitle text `U_s` of one second; empty when nothing overlaps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SecondText {
    pub second_index: usize,
    pub text: String,
}

pub fn parse_srt(path: &Path) -> Result<Vec<SubtitleCue>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let text = String::from_utf8(bytes).map_err(|e| Error::Parse {
        line: 0,
        message: format!("{} is not UTF-8: {e}", path.display()),
    })?;
    parse_subtitles(&text)
}

/// Parses SubRip text, or WebVTT when the first line starts with `WEBVTT`.
/// Cues come back sorted by start time, file order breaking ties.
pub fn parse_subtitles(input: &str) -> Result<Vec<SubtitleCue>> {
    let input = input.strip_prefix('\u{feff}').unwrap_or(input);
    let lines: Vec<&str> = input.lines().map(|l| l.trim_end_matches('\r')).collect();
    let is_vtt = lines
        .iter()
        .find(|l| !l.trim().is_empty())
        .is_some_and(|l| l.trim_start().starts_with("WEBVTT"));

    let mut cues = Vec::new();
    let mut last_index: Option<u64> = None;
    let mut i = 0;
    let mut first_block = true;
    while i < lines.len() {
        if lines[i].trim().is_empty() {
            i += 1;
            continue;
        }
        let block_start = i;
        while i < lines.len() && !lines[i].trim().is_empty() {
            i += 1;
        }
        let block = &lines[block_start..i];
        let is_header = std::mem::take(&mut first_block) && is_vtt;
        if is_header {
            continue;
        }
        let Some(timing_pos) = block.iter().position(|l| l.contains("-->")) else {
            if is_vtt {
                // NOTE, STYLE and REGION blocks
                continue;
            }
            return Err(Error::Parse {
                line: block_start + 1,
                message: "cue has no timing line".into(),
            });
        };
        if timing_pos > 1 && !is_vtt {
            return Err(Error::Parse {
                line: block_start + 1,
                message: "unexpected text before timing line".into(),
            });
        }
        if !is_vtt && timing_pos == 1 {
            let idx_line = block[0].trim();
            match idx_line.parse::<u64>() {
                Ok(idx) => {
                    if last_index.is_some_and(|prev| idx <= prev) {
                        log::warn!("subtitle index {idx} at line {} is out of order", block_start + 1);
                    }
                    last_index = Some(idx);
                }
                Err(_) => {
                    return Err(Error::Parse {
                        line: block_start + 1,
                        message: format!("bad cue index {idx_line:?}"),
                    })
                }
            }
        }
        let line_no = block_start + timing_pos + 1;
        let (start_s, end_s) = parse_timing(block[timing_pos], line_no)?;
        let text = clean_text(&block[timing_pos + 1..]);
        if text.is_empty() {
            log::warn!("skipping cue with empty text at line {line_no}");
            continue;
        }
        if start_s >= end_s {
            log::warn!("skipping cue with non-positive duration at line {line_no}");
            continue;
        }
        cues.push(SubtitleCue { start_s, end_s, text });
    }
    cues.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
    Ok(cues)
}

fn parse_timing(line: &str, line_no: usize) -> Result<(f64, f64)> {
    let (lhs, rhs) = line.split_once("-->").expect("caller checked for arrow");
    let start = parse_timestamp(lhs.trim(), line_no)?;
    let end_token = rhs.split_whitespace().next().unwrap_or("");
    let end = parse_timestamp(end_token, line_no)?;
    Ok((start as f64 / 1000.0, end as f64 / 1000.0))
}

/// `HH:MM:SS,mmm`, `HH:MM:SS.mmm` or `MM:SS.mmm`, returned in milliseconds.
fn parse_timestamp(token: &str, line_no: usize) -> Result<u64> {
    let bad = |why: &str| Error::Parse {
        line: line_no,
        message: format!("malformed timestamp {token:?}: {why}"),
    };
    let (clock, frac) = token
        .rsplit_once([',', '.'])
        .ok_or_else(|| bad("missing fractional seconds"))?;
    let parts: Vec<&str> = clock.split(':').collect();
    if !(2..=3).contains(&parts.len()) {
        return Err(bad("expected [HH:]MM:SS"));
    }
    let num = |s: &str| -> Result<u64> {
        if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad("non-numeric field"));
        }
        s.parse().map_err(|_| bad("field out of range"))
    };
    let (h, m, s) = match parts.as_slice() {
        [h, m, s] => (num(h)?, num(m)?, num(s)?),
        [m, s] => (0, num(m)?, num(s)?),
        _ => unreachable!(),
    };
    if m >= 60 || s >= 60 {
        return Err(bad("minutes and seconds must be below 60"));
    }
    if frac.is_empty() || frac.len() > 3 || !frac.bytes().all(|b| b.is_ascii_digit()) {
        return Err(bad("fraction must be 1-3 digits"));
    }
    let ms = frac.parse::<u64>().unwrap() * 10u64.pow(3 - frac.len() as u32);
    Ok(((h * 60 + m) * 60 + s) * 1000 + ms)
}

/// Strips `<...>` and `{...}` markup and joins lines with single spaces.
fn clean_text(lines: &[&str]) -> String {
    let mut raw = String::new();
    for line in lines {
        raw.push_str(line);
        raw.push(' ');
    }
    let mut stripped = String::with_capacity(raw.len());
    let mut depth_angle = false;
    let mut depth_brace = false;
    for ch in raw.chars() {
        match ch {
            '<' if !depth_brace => depth_angle = true,
            '>' if depth_angle => depth_angle = false,
            '{' if !depth_angle => depth_brace = true,
            '}' if depth_brace => depth_brace = false,
            _ if depth_angle || depth_brace => {}
            _ => stripped.push(ch),
        }
    }
    stripped.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn fmt_srt_time(out: &mut String, seconds: f64) {
    let ms = (seconds * 1000.0).round() as u64;
    let (h, rem) = (ms / 3_600_000, ms % 3_600_000);
    let (m, rem) = (rem / 60_000, rem % 60_000);
    let (s, ms) = (rem / 1000, rem % 1000);
    let _ = write!(out, "{h:02}:{m:02}:{s:02},{ms:03}");
}

/// Renders cues as SubRip, numbering from 1.
pub fn to_srt(cues: &[SubtitleCue]) -> String {
    let mut out = String::new();
    for (i, cue) in cues.iter().enumerate() {
        let _ = writeln!(out, "{}", i + 1);
        fmt_srt_time(&mut out, cue.start_s);
        out.push_str(" --> ");
        fmt_srt_time(&mut out, cue.end_s);
        out.push('\n');
        out.push_str(&cue.text);
        out.push_str("\n\n");
    }
    out
}

/// `U_s`: texts of cues overlapping `[s-1, s)`, in start-time order, space-joined.
pub fn second_text(cues: &[SubtitleCue], second: usize) -> SecondText {
    let mut hits: Vec<&SubtitleCue> = cues.iter().filter(|c| c.overlaps_second(second)).collect();
    hits.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
    SecondText {
        second_index: second,
        text: hits.iter().map(|c| c.text.as_str()).collect::<Vec<_>>().join(" "),
    }
}

/// `U_1 … U_S`.
pub fn all_second_texts(cues: &[SubtitleCue], seconds: usize) -> Vec<SecondText> {
    (1..=seconds).map(|s| second_text(cues, s)).collect()
}
