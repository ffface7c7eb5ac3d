use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use povpool_ffi::*;

fn last_error() -> String {
    let p = pov_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn budget_matches_reference_numbers() {
    let mut b = PovBudget::default();
    let st = unsafe { pov_budget(300, 60, 24, 256, 128, 10, &mut b) };
    assert_eq!(st, PovStatus::Ok);
    assert_eq!(b.k, 60);
    assert_eq!(b.pooled_tokens, 16_088);
    assert_eq!(b.unpooled_tokens, 369_368);
    assert_eq!(b.reduction_ratio_rounded, 23);
    assert!(pov_last_error_message().is_null());
}

#[test]
fn budget_rejects_zero_cap() {
    let mut b = PovBudget::default();
    let st = unsafe { pov_budget(300, 0, 24, 256, 128, 10, &mut b) };
    assert_eq!(st, PovStatus::Param);
    assert!(last_error().starts_with("BadParameter"));
}

#[test]
fn pooler_averages_black_and_white() {
    let mut h: *mut PovPooler = ptr::null_mut();
    let st = unsafe { pov_pooler_new(PovOperator::Wa, 2, f64::NAN, f64::NAN, f64::NAN, &mut h) };
    assert_eq!(st, PovStatus::Ok);
    assert_eq!(unsafe { pov_pooler_fps(h) }, 2);
    let mut frames = vec![0u8; 12];
    frames.extend([255u8; 12]);
    let mut out = vec![0u8; 12];
    let st = unsafe { pov_pooler_pool_window(h, 2, 2, frames.as_ptr(), frames.len(), out.as_mut_ptr(), out.len()) };
    assert_eq!(st, PovStatus::Ok);
    assert!(out.iter().all(|&v| v == 128));
    unsafe { pov_pooler_free(h) };
}

#[test]
fn pooler_bblf_alpha_one_returns_last_frame() {
    let mut h: *mut PovPooler = ptr::null_mut();
    let st = unsafe { pov_pooler_new(PovOperator::Bblf, 3, f64::NAN, 1.0, f64::NAN, &mut h) };
    assert_eq!(st, PovStatus::Ok);
    let frames: Vec<u8> = (0..3 * 4 * 4 * 3).map(|i| (i * 7 % 256) as u8).collect();
    let mut out = vec![0u8; 48];
    let st = unsafe { pov_pooler_pool_window(h, 4, 4, frames.as_ptr(), frames.len(), out.as_mut_ptr(), out.len()) };
    assert_eq!(st, PovStatus::Ok);
    assert_eq!(&out[..], &frames[96..]);
    unsafe { pov_pooler_free(h) };
}

#[test]
fn pooler_errors_map_to_codes() {
    let mut h: *mut PovPooler = ptr::null_mut();
    let st = unsafe { pov_pooler_new(PovOperator::Wae, 24, 0.0, f64::NAN, f64::NAN, &mut h) };
    assert_eq!(st, PovStatus::Param);
    assert!(h.is_null());

    let st = unsafe { pov_pooler_new(PovOperator::Wa, 2, f64::NAN, f64::NAN, f64::NAN, &mut h) };
    assert_eq!(st, PovStatus::Ok);
    let frames = [0u8; 12];
    let mut out = vec![0u8; 12];
    let st = unsafe { pov_pooler_pool_window(h, 2, 2, frames.as_ptr(), frames.len(), out.as_mut_ptr(), out.len()) };
    assert_eq!(st, PovStatus::Integrity);
    unsafe { pov_pooler_free(h) };

    let st = unsafe { pov_pooler_pool_window(ptr::null(), 2, 2, frames.as_ptr(), 12, out.as_mut_ptr(), 12) };
    assert_eq!(st, PovStatus::NullPointer);
    let st = unsafe { pov_pooler_new(PovOperator::Wa, 2, f64::NAN, f64::NAN, f64::NAN, ptr::null_mut()) };
    assert_eq!(st, PovStatus::NullPointer);
}

#[test]
fn subtitles_from_memory() {
    let srt =
        CString::new("1\n00:00:00,500 --> 00:00:01,500\nhello\n\n2\n00:00:01,200 --> 00:00:02,000\nworld\n").unwrap();
    let mut h: *mut PovSubtitles = ptr::null_mut();
    assert_eq!(unsafe { pov_subtitles_parse(srt.as_ptr(), &mut h) }, PovStatus::Ok);
    assert_eq!(unsafe { pov_subtitles_count(h) }, 2);
    let mut text = ptr::null_mut();
    assert_eq!(unsafe { pov_subtitles_second_text(h, 2, &mut text) }, PovStatus::Ok);
    assert_eq!(unsafe { CStr::from_ptr(text) }.to_str().unwrap(), "hello world");
    unsafe { pov_string_free(text) };
    assert_eq!(unsafe { pov_subtitles_second_text(h, 3, &mut text) }, PovStatus::Ok);
    assert_eq!(unsafe { CStr::from_ptr(text) }.to_bytes(), b"");
    unsafe { pov_string_free(text) };
    assert_eq!(unsafe { pov_subtitles_second_text(h, 0, &mut text) }, PovStatus::Param);
    unsafe { pov_subtitles_free(h) };
}

#[test]
fn subtitles_from_file_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.srt");
    std::fs::write(&path, "1\n00:00:00,000 --> 00:00:01,000\nhi\n").unwrap();
    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    let mut h: *mut PovSubtitles = ptr::null_mut();
    assert_eq!(unsafe { pov_subtitles_open(cpath.as_ptr(), &mut h) }, PovStatus::Ok);
    assert_eq!(unsafe { pov_subtitles_count(h) }, 1);
    unsafe { pov_subtitles_free(h) };

    let missing = CString::new(dir.path().join("none.srt").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { pov_subtitles_open(missing.as_ptr(), &mut h) }, PovStatus::Io);

    let bad = CString::new("1\n00:00:xx,000 --> 00:00:01,000\nhi\n").unwrap();
    assert_eq!(unsafe { pov_subtitles_parse(bad.as_ptr(), &mut h) }, PovStatus::Param);
    assert!(last_error().starts_with("ParseError"));

    let invalid = [0xffu8, 0xfe, 0];
    let st = unsafe { pov_subtitles_parse(invalid.as_ptr().cast(), &mut h) };
    assert_eq!(st, PovStatus::InvalidUtf8);
    assert_eq!(unsafe { pov_subtitles_count(ptr::null()) }, 0);
}

#[test]
fn metrics_through_c_strings() {
    let a = CString::new("the cat sat").unwrap();
    let b = CString::new("the cat sat down").unwrap();
    let mut v = 0.0;
    assert_eq!(unsafe { pov_token_f1(a.as_ptr(), b.as_ptr(), &mut v) }, PovStatus::Ok);
    assert!((v - 6.0 / 7.0).abs() < 1e-12);
    assert_eq!(unsafe { pov_rouge_l(a.as_ptr(), a.as_ptr(), &mut v) }, PovStatus::Ok);
    assert_eq!(v, 1.0);
    assert_eq!(unsafe { pov_bleu(a.as_ptr(), a.as_ptr(), 4, &mut v) }, PovStatus::Ok);
    assert!((v - 1.0).abs() < 1e-12);
    assert_eq!(unsafe { pov_bleu(a.as_ptr(), a.as_ptr(), 0, &mut v) }, PovStatus::Param);
    assert_eq!(
        unsafe { pov_token_f1(ptr::null(), b.as_ptr(), &mut v) },
        PovStatus::NullPointer
    );
}

#[test]
fn losses_through_arrays() {
    let logp = [-1.0, -2.0, -0.5];
    let lengths = [2usize, 1];
    let mut v = 0.0;
    assert_eq!(
        unsafe { pov_sft_loss(logp.as_ptr(), lengths.as_ptr(), 2, &mut v) },
        PovStatus::Ok
    );
    assert!((v - 1.75).abs() < 1e-12);

    let z = [-3.0];
    assert_eq!(
        unsafe { pov_dpo_loss(z.as_ptr(), z.as_ptr(), z.as_ptr(), z.as_ptr(), 1, 0.1, &mut v) },
        PovStatus::Ok
    );
    assert!((v - std::f64::consts::LN_2).abs() < 1e-12);

    assert_eq!(
        unsafe { pov_sft_loss(logp.as_ptr(), lengths.as_ptr(), 0, &mut v) },
        PovStatus::Param
    );
    let pos = [0.5];
    assert_eq!(
        unsafe { pov_sft_loss(pos.as_ptr(), [1usize].as_ptr(), 1, &mut v) },
        PovStatus::Param
    );
}

#[test]
fn status_names_are_stable() {
    let name = |s| unsafe { CStr::from_ptr(pov_status_name(s)) }.to_str().unwrap();
    assert_eq!(name(PovStatus::Ok), "OK");
    assert_eq!(name(PovStatus::Integrity), "INTEGRITY");
    assert_eq!(PovStatus::Io as i32, 1);
    assert_eq!(PovStatus::Param as i32, 2);
    assert_eq!(PovStatus::Integrity as i32, 3);
}

#[test]
fn header_is_valid_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/povpool.h");
    let text = std::fs::read_to_string(&header).expect("generated header");
    for symbol in [
        "pov_budget",
        "pov_pooler_new",
        "pov_pooler_free",
        "pov_subtitles_free",
        "POV_STATUS_INTEGRITY",
    ] {
        assert!(text.contains(symbol), "{symbol} missing from header");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("probe.c");
    std::fs::write(
        &src,
        "#include \"povpool.h\"\nint main(void) { PovBudget b; return pov_budget(1, 1, 1, 1, 0, 0, &b); }\n",
    )
    .unwrap();
    match Command::new("cc")
        .arg("-fsyntax-only")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(header.parent().unwrap())
        .arg(&src)
        .status()
    {
        Ok(status) => assert!(status.success(), "header failed to compile"),
        Err(e) => eprintln!("no C compiler available, skipping syntax check: {e}"),
    }
}
