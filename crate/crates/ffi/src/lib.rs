//! C ABI for the `povpool` toolkit.
//!
//! Every fallible function returns a [`PovStatus`]; on failure the message is
//! kept per thread and read back with [`pov_last_error_message`]. Handles are
//! opaque and must be released with their matching `*_free` function. Strings
//! returned through out-parameters are released with [`pov_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use povpool::frame::Frame;
use povpool::interleave::{estimate_budget, plan_subsample, BudgetParams};
use povpool::losses::{dpo_loss, sft_loss, PreferenceRecord, TokenLogProbs};
use povpool::metrics::{bleu, rouge_l, token_f1};
use povpool::pooling::{pool_second, Operator, PoolingSpec};
use povpool::subtitle::{parse_srt, parse_subtitles, second_text, SubtitleCue};
use povpool::{Error, ErrorClass, SecondWindow};

/// Result codes. The first four match the command-line exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PovStatus {
    Ok = 0,
    Io = 1,
    Param = 2,
    Integrity = 3,
    NullPointer = 4,
    InvalidUtf8 = 5,
    Panic = 6,
}

/// Pooling operator selector.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PovOperator {
    Wa = 0,
    Wae = 1,
    War = 2,
    Bblf = 3,
}

impl From<PovOperator> for Operator {
    fn from(op: PovOperator) -> Self {
        match op {
            PovOperator::Wa => Operator::Wa,
            PovOperator::Wae => Operator::Wae,
            PovOperator::War => Operator::War,
            PovOperator::Bblf => Operator::Bblf,
        }
    }
}

/// Context-length estimate for one clip.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PovBudget {
    pub k: usize,
    pub text_tokens: usize,
    pub pooled_tokens: usize,
    pub unpooled_tokens: usize,
    pub reduction_ratio: f64,
    pub reduction_ratio_rounded: u64,
}

/// Opaque pooling configuration.
pub struct PovPooler {
    spec: PoolingSpec,
}

/// Opaque parsed subtitle track.
pub struct PovSubtitles {
    cues: Vec<SubtitleCue>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn clear_last_error() {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
}

enum Failure {
    Core(Error),
    Null(&'static str),
    Utf8(&'static str),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn guard<F>(body: F) -> PovStatus
where
    F: FnOnce() -> Result<(), Failure>,
{
    clear_last_error();
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => PovStatus::Ok,
        Ok(Err(Failure::Core(e))) => {
            set_last_error(format!("{}: {}", e.kind(), e));
            match e.class() {
                ErrorClass::Io => PovStatus::Io,
                ErrorClass::Parameter => PovStatus::Param,
                ErrorClass::Integrity => PovStatus::Integrity,
            }
        }
        Ok(Err(Failure::Null(what))) => {
            set_last_error(format!("null pointer: {what}"));
            PovStatus::NullPointer
        }
        Ok(Err(Failure::Utf8(what))) => {
            set_last_error(format!("invalid UTF-8: {what}"));
            PovStatus::InvalidUtf8
        }
        Err(_) => {
            set_last_error("internal panic".into());
            PovStatus::Panic
        }
    }
}

unsafe fn c_str<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure::Utf8(what))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &'static str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null(what));
    }
    out.write(value);
    Ok(())
}

fn opt(v: f64) -> Option<f64> {
    (!v.is_nan()).then_some(v)
}

/// Last error message on this thread, or NULL. Valid until the next call
/// into this library on the same thread.
#[no_mangle]
pub extern "C" fn pov_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Static name of a status code.
#[no_mangle]
pub extern "C" fn pov_status_name(status: PovStatus) -> *const c_char {
    let name: &'static CStr = match status {
        PovStatus::Ok => c"OK",
        PovStatus::Io => c"IO",
        PovStatus::Param => c"PARAM",
        PovStatus::Integrity => c"INTEGRITY",
        PovStatus::NullPointer => c"NULL_POINTER",
        PovStatus::InvalidUtf8 => c"INVALID_UTF8",
        PovStatus::Panic => c"PANIC",
    };
    name.as_ptr()
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn pov_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Creates a pooler. Pass NaN for `lambda`, `alpha` or `sigma` to take the
/// operator's default; parameters the operator does not use must be NaN.
///
/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn pov_pooler_new(
    op: PovOperator,
    fps: u32,
    lambda: f64,
    alpha: f64,
    sigma: f64,
    out: *mut *mut PovPooler,
) -> PovStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let spec = PoolingSpec::with_defaults(op.into(), fps, opt(lambda), opt(alpha), opt(sigma))?;
        out.write(Box::into_raw(Box::new(PovPooler { spec })));
        Ok(())
    })
}

/// Frames per window the pooler expects, or 0 for NULL.
///
/// # Safety
/// `pooler` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pov_pooler_fps(pooler: *const PovPooler) -> u32 {
    pooler.as_ref().map_or(0, |p| p.spec.fps)
}

/// Pools one second. `frames` holds `fps` RGB8 frames of `width`×`height`
/// back to back; `out` receives one RGB8 frame (`width*height*3` bytes).
///
/// # Safety
/// Buffers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn pov_pooler_pool_window(
    pooler: *const PovPooler,
    width: u32,
    height: u32,
    frames: *const u8,
    frames_len: usize,
    out: *mut u8,
    out_len: usize,
) -> PovStatus {
    guard(|| {
        let pooler = pooler.as_ref().ok_or(Failure::Null("pooler"))?;
        let frame_len = width as usize * height as usize * 3;
        let fps = pooler.spec.fps as usize;
        if frame_len == 0 {
            return Err(Error::BadParameter("frame dimensions must be positive".into()).into());
        }
        if frames_len != frame_len * fps {
            return Err(Error::WeightMismatch {
                weights: fps,
                frames: frames_len / frame_len,
            }
            .into());
        }
        if out_len != frame_len {
            return Err(Error::BadParameter(format!("output buffer holds {out_len} bytes, need {frame_len}")).into());
        }
        let data = slice(frames, frames_len, "frames")?;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let window_frames = data
            .chunks_exact(frame_len)
            .enumerate()
            .map(|(i, px)| Frame::at_rate(i + 1, pooler.spec.fps, width, height, px.to_vec()))
            .collect::<Result<Vec<_>, _>>()?;
        let window = SecondWindow::new(1, window_frames)?;
        let pooled = pool_second(&window, &pooler.spec)?;
        std::slice::from_raw_parts_mut(out, out_len).copy_from_slice(&pooled.pixels);
        Ok(())
    })
}

/// Releases a pooler. NULL is ignored.
///
/// # Safety
/// `pooler` must come from [`pov_pooler_new`] and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn pov_pooler_free(pooler: *mut PovPooler) {
    if !pooler.is_null() {
        drop(Box::from_raw(pooler));
    }
}

/// Parses SubRip or WebVTT text held in memory.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn pov_subtitles_parse(text: *const c_char, out: *mut *mut PovSubtitles) -> PovStatus {
    guard(|| {
        let text = c_str(text, "text")?;
        let cues = parse_subtitles(text)?;
        write_out(out, Box::into_raw(Box::new(PovSubtitles { cues })), "out")
    })
}

/// Reads and parses a subtitle file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn pov_subtitles_open(path: *const c_char, out: *mut *mut PovSubtitles) -> PovStatus {
    guard(|| {
        let path = c_str(path, "path")?;
        let cues = parse_srt(path.as_ref())?;
        write_out(out, Box::into_raw(Box::new(PovSubtitles { cues })), "out")
    })
}

/// Number of cues, or 0 for NULL.
///
/// # Safety
/// `subs` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pov_subtitles_count(subs: *const PovSubtitles) -> usize {
    subs.as_ref().map_or(0, |s| s.cues.len())
}

/// Subtitle text overlapping 1-based `second`; free with [`pov_string_free`].
///
/// # Safety
/// `subs` must be a live handle; `out` a valid pointer slot.
#[no_mangle]
pub unsafe extern "C" fn pov_subtitles_second_text(
    subs: *const PovSubtitles,
    second: usize,
    out: *mut *mut c_char,
) -> PovStatus {
    guard(|| {
        let subs = subs.as_ref().ok_or(Failure::Null("subs"))?;
        if second == 0 {
            return Err(Error::BadParameter("seconds are 1-based".into()).into());
        }
        let text = second_text(&subs.cues, second).text;
        let c = CString::new(text.replace('\0', " ")).unwrap_or_default();
        write_out(out, c.into_raw(), "out")
    })
}

/// Releases a subtitle track. NULL is ignored.
///
/// # Safety
/// `subs` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn pov_subtitles_free(subs: *mut PovSubtitles) {
    if !subs.is_null() {
        drop(Box::from_raw(subs));
    }
}

/// Budget for a clip of `seconds` whole seconds capped at `s_max`, with the
/// same subtitle token count in every second.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pov_budget(
    seconds: usize,
    s_max: usize,
    fps: u32,
    m: usize,
    n_sys_q: usize,
    text_per_second: usize,
    out: *mut PovBudget,
) -> PovStatus {
    guard(|| {
        let plan = plan_subsample(seconds, s_max)?;
        let params = BudgetParams::uniform_text(m, n_sys_q, seconds, text_per_second)?;
        let r = estimate_budget(&plan, &params, fps)?;
        let budget = PovBudget {
            k: r.k,
            text_tokens: r.text_tokens,
            pooled_tokens: r.pooled_tokens,
            unpooled_tokens: r.unpooled_tokens,
            reduction_ratio: r.reduction_ratio,
            reduction_ratio_rounded: r.reduction_ratio_rounded,
        };
        write_out(out, budget, "out")
    })
}

/// Bag-of-tokens F1 after normalization.
///
/// # Safety
/// Strings must be NUL-terminated; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pov_token_f1(pred: *const c_char, reference: *const c_char, out: *mut f64) -> PovStatus {
    guard(|| {
        let v = token_f1(c_str(pred, "pred")?, c_str(reference, "reference")?);
        write_out(out, v, "out")
    })
}

/// BLEU up to order `max_n` with brevity penalty.
///
/// # Safety
/// Strings must be NUL-terminated; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pov_bleu(
    pred: *const c_char,
    reference: *const c_char,
    max_n: usize,
    out: *mut f64,
) -> PovStatus {
    guard(|| {
        if max_n == 0 {
            return Err(Error::BadParameter("max_n must be at least 1".into()).into());
        }
        let v = bleu(c_str(pred, "pred")?, c_str(reference, "reference")?, max_n);
        write_out(out, v, "out")
    })
}

/// ROUGE-L F-measure.
///
/// # Safety
/// Strings must be NUL-terminated; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pov_rouge_l(pred: *const c_char, reference: *const c_char, out: *mut f64) -> PovStatus {
    guard(|| {
        let v = rouge_l(c_str(pred, "pred")?, c_str(reference, "reference")?);
        write_out(out, v, "out")
    })
}

/// Mean SFT loss. `logp` holds every record's token log-probabilities back
/// to back; `lengths[i]` is the token count of record `i`.
///
/// # Safety
/// `logp` must hold the sum of `lengths`; `lengths` must hold `n_records`.
#[no_mangle]
pub unsafe extern "C" fn pov_sft_loss(
    logp: *const f64,
    lengths: *const usize,
    n_records: usize,
    out: *mut f64,
) -> PovStatus {
    guard(|| {
        let lengths = slice(lengths, n_records, "lengths")?;
        let total = lengths
            .iter()
            .try_fold(0usize, |acc, &n| acc.checked_add(n))
            .ok_or_else(|| Error::BadParameter("record lengths overflow".into()))?;
        let logp = slice(logp, total, "logp")?;
        let mut batch = Vec::with_capacity(n_records);
        let mut at = 0;
        for &n in lengths {
            batch.push(TokenLogProbs::new(logp[at..at + n].to_vec())?);
            at += n;
        }
        write_out(out, sft_loss(&batch)?, "out")
    })
}

/// Mean DPO loss over `n_records` records given per-record sequence
/// log-likelihoods under the policy and the frozen reference.
///
/// # Safety
/// Each array must hold `n_records` values; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pov_dpo_loss(
    policy_pos: *const f64,
    policy_neg: *const f64,
    ref_pos: *const f64,
    ref_neg: *const f64,
    n_records: usize,
    beta: f64,
    out: *mut f64,
) -> PovStatus {
    guard(|| {
        let pp = slice(policy_pos, n_records, "policy_pos")?;
        let pn = slice(policy_neg, n_records, "policy_neg")?;
        let rp = slice(ref_pos, n_records, "ref_pos")?;
        let rn = slice(ref_neg, n_records, "ref_neg")?;
        let one = |v: f64| TokenLogProbs::new(vec![v]);
        let batch = (0..n_records)
            .map(|i| PreferenceRecord::new(one(pp[i])?, one(pn[i])?, one(rp[i])?, one(rn[i])?, beta))
            .collect::<Result<Vec<_>, _>>()?;
        write_out(out, dpo_loss(&batch)?, "out")
    })
}
