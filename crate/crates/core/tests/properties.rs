use std::collections::BTreeMap;

use proptest::prelude::*;

use povpool::interleave::{estimate_budget, plan_subsample, BudgetParams};
use povpool::losses::{dpo_delta, dpo_loss, dpo_record_loss, PreferenceRecord, TokenLogProbs};
use povpool::metrics::{bleu, normalize, rouge_l, split_two_turn, token_f1};
use povpool::pooling::{
    exp_weights, gaussian_blur_real, pool_second, ramp_weights, uniform_weights, Operator, PoolingSpec, RealImage,
};
use povpool::subtitle::{parse_subtitles, second_text, to_srt, SubtitleCue};
use povpool::{Frame, SecondWindow};

fn window_from(frames: Vec<Vec<u8>>, w: u32, h: u32, fps: u32) -> SecondWindow {
    let frames = frames
        .into_iter()
        .enumerate()
        .map(|(i, px)| Frame::at_rate(i + 1, fps, w, h, px).unwrap())
        .collect();
    SecondWindow::new(1, frames).unwrap()
}

fn arb_window() -> impl Strategy<Value = (SecondWindow, u32)> {
    (1u32..6, 1u32..5, 1u32..5).prop_flat_map(|(fps, w, h)| {
        let len = (w * h * 3) as usize;
        prop::collection::vec(prop::collection::vec(any::<u8>(), len), fps as usize)
            .prop_map(move |frames| (window_from(frames, w, h, fps), fps))
    })
}

fn specs(fps: u32) -> Vec<PoolingSpec> {
    Operator::ALL
        .iter()
        .map(|&op| PoolingSpec::with_defaults(op, fps, None, None, None).unwrap())
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn weights_are_a_distribution(f in 1usize..200, lambda in 1e-4f64..5.0) {
        for w in [uniform_weights(f).unwrap(), exp_weights(f, lambda).unwrap(), ramp_weights(f).unwrap()] {
            prop_assert_eq!(w.len(), f);
            prop_assert!(w.as_slice().iter().all(|&x| x >= 0.0));
            prop_assert!((w.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn recency_weights_increase(f in 2usize..200, lambda in 1e-3f64..5.0) {
        // below this the earliest weights underflow to zero
        prop_assume!(lambda * (f as f64 - 1.0) < 700.0);
        let e = exp_weights(f, lambda).unwrap();
        let r = ramp_weights(f).unwrap();
        prop_assert!(e.as_slice().windows(2).all(|p| p[0] < p[1]));
        prop_assert!(r.as_slice().windows(2).all(|p| p[0] < p[1]));
    }

    #[test]
    fn pooled_pixels_stay_within_frame_range((window, fps) in arb_window()) {
        for spec in specs(fps).into_iter().filter(|s| s.operator != Operator::Bblf) {
            let pooled = pool_second(&window, &spec).unwrap();
            for (i, &v) in pooled.pixels.iter().enumerate() {
                let lo = window.frames().iter().map(|f| f.pixels()[i]).min().unwrap();
                let hi = window.frames().iter().map(|f| f.pixels()[i]).max().unwrap();
                prop_assert!(lo <= v && v <= hi, "{:?} pixel {} = {} outside [{}, {}]", spec.operator, i, v, lo, hi);
            }
        }
    }

    #[test]
    fn identical_frames_are_fixed_points_of_averages(fps in 1u32..8, w in 1u32..6, h in 1u32..6, seed in any::<u64>()) {
        let len = (w * h * 3) as usize;
        let frame: Vec<u8> = (0..len).map(|i| (seed.wrapping_mul(2654435761).wrapping_add(i as u64 * 97) >> 7) as u8).collect();
        let window = window_from(vec![frame.clone(); fps as usize], w, h, fps);
        for spec in specs(fps).into_iter().filter(|s| s.operator != Operator::Bblf) {
            prop_assert_eq!(&pool_second(&window, &spec).unwrap().pixels, &frame);
        }
    }

    #[test]
    fn constant_windows_are_fixed_points_of_every_operator(fps in 1u32..8, w in 1u32..6, h in 1u32..6, rgb in any::<[u8; 3]>()) {
        let frame: Vec<u8> = rgb.iter().copied().cycle().take((w * h * 3) as usize).collect();
        let window = window_from(vec![frame.clone(); fps as usize], w, h, fps);
        for spec in specs(fps) {
            prop_assert_eq!(&pool_second(&window, &spec).unwrap().pixels, &frame);
        }
    }

    #[test]
    fn blur_preserves_mass_and_range(w in 1u32..12, h in 1u32..12, sigma in 0.2f64..4.0, seed in any::<u64>()) {
        let mut state = seed;
        let data: Vec<u8> = (0..w * h * 3).map(|_| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 56) as u8
        }).collect();
        let img = RealImage::from_bytes(w, h, &data);
        let out = gaussian_blur_real(&img, sigma).unwrap();
        prop_assert!((out.sum() - img.sum()).abs() < 1e-9 * (1.0 + img.sum()));
        let (lo, hi) = img.data.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        prop_assert!(out.data.iter().all(|&v| v >= lo - 1e-12 && v <= hi + 1e-12));
    }

    #[test]
    fn subsample_is_increasing_and_bounded(s in 0usize..5000, s_max in 1usize..200) {
        let plan = plan_subsample(s, s_max).unwrap();
        prop_assert_eq!(plan.k(), s.min(s_max));
        prop_assert!(plan.indices.windows(2).all(|p| p[0] < p[1]));
        prop_assert!(plan.indices.iter().all(|&i| (1..=s).contains(&i)));
        if s <= s_max {
            prop_assert_eq!(plan.indices, (1..=s).collect::<Vec<_>>());
        }
    }

    #[test]
    fn budget_is_linear_in_m_and_fps_free_when_pooled(
        s in 1usize..600, s_max in 1usize..100, m in 1usize..1024, n in 0usize..512,
        per in 0usize..40, fps_a in 1u32..120, fps_b in 1u32..120,
    ) {
        let plan = plan_subsample(s, s_max).unwrap();
        let p1 = BudgetParams::uniform_text(m, n, s, per).unwrap();
        let p2 = BudgetParams::uniform_text(m + 1, n, s, per).unwrap();
        let a = estimate_budget(&plan, &p1, fps_a).unwrap();
        let b = estimate_budget(&plan, &p1, fps_b).unwrap();
        let c = estimate_budget(&plan, &p2, fps_a).unwrap();
        prop_assert_eq!(a.pooled_tokens, b.pooled_tokens);
        prop_assert_eq!(c.pooled_tokens - a.pooled_tokens, plan.k());
        prop_assert_eq!(c.unpooled_tokens - a.unpooled_tokens, plan.k() * fps_a as usize);
        prop_assert_eq!(a.pooled_tokens, n + plan.k() * (per + m));
    }

    #[test]
    fn budget_ignores_text_outside_plan(extra in 1usize..1000) {
        let plan = plan_subsample(300, 60).unwrap();
        let mut counts: BTreeMap<usize, usize> = plan.indices.iter().map(|&s| (s, 10)).collect();
        let base = estimate_budget(&plan, &BudgetParams::new(256, 128, counts.clone()).unwrap(), 24).unwrap();
        counts.insert(1, extra);
        let more = estimate_budget(&plan, &BudgetParams::new(256, 128, counts).unwrap(), 24).unwrap();
        prop_assert_eq!(base.pooled_tokens, more.pooled_tokens);
    }

    #[test]
    fn metrics_are_bounded(a in "[a-d ,.!]{0,30}", b in "[a-d ,.!]{0,30}") {
        for v in [token_f1(&a, &b), bleu(&a, &b, 1), bleu(&a, &b, 4), rouge_l(&a, &b)] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert_eq!(token_f1(&a, &b), token_f1(&b, &a));
    }

    #[test]
    fn normalization_is_idempotent(a in "[A-Za-z0-9 ,.!?'-]{0,40}", b in "[A-Za-z0-9 ,.!?'-]{0,40}") {
        let na = normalize(&a);
        prop_assert_eq!(normalize(&na), na.clone());
        let nb = normalize(&b);
        prop_assert_eq!(token_f1(&a, &b), token_f1(&na, &nb));
        prop_assert_eq!(bleu(&a, &b, 4), bleu(&na, &nb, 4));
        prop_assert_eq!(rouge_l(&a, &b), rouge_l(&na, &nb));
    }

    #[test]
    fn split_recovers_marked_fields(r in "[a-z ]{0,20}", y in "[a-z ]{0,20}") {
        let out = split_two_turn(&format!("Reasoning: {r}\nFinal Answer: {y}"));
        prop_assert!(!out.degraded);
        prop_assert_eq!(out.output.reasoning, r.trim());
        prop_assert_eq!(out.output.answer, y.trim());
    }

    #[test]
    fn dpo_loss_decreases_as_preferred_gains(
        pp in -20.0f64..0.0, pn in -20.0f64..0.0, rp in -20.0f64..0.0, rn in -20.0f64..0.0,
        beta in 0.01f64..2.0, bump in 0.01f64..5.0,
    ) {
        let lp = |v: f64| TokenLogProbs::new(vec![v]).unwrap();
        let base = PreferenceRecord::new(lp(pp - bump), lp(pn), lp(rp), lp(rn), beta).unwrap();
        let better = PreferenceRecord::new(lp(pp), lp(pn), lp(rp), lp(rn), beta).unwrap();
        prop_assert!(dpo_record_loss(&better).unwrap() < dpo_record_loss(&base).unwrap());
        let swapped = base.swapped();
        prop_assert!((dpo_delta(&swapped).unwrap() + dpo_delta(&base).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn dpo_depends_on_reference_only_through_its_margin(
        pp in -20.0f64..0.0, pn in -20.0f64..0.0, rp in -20.0f64..-1.0, rn in -20.0f64..-1.0, shift in 0.0f64..1.0,
    ) {
        let lp = |v: f64| TokenLogProbs::new(vec![v]).unwrap();
        let a = PreferenceRecord::new(lp(pp), lp(pn), lp(rp), lp(rn), 0.1).unwrap();
        let b = PreferenceRecord::new(lp(pp), lp(pn), lp(rp + shift), lp(rn + shift), 0.1).unwrap();
        prop_assert!((dpo_loss(&[a]).unwrap() - dpo_loss(&[b]).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn srt_round_trip_is_stable(raw in prop::collection::vec((0u32..100_000, 1u32..20_000, "[a-z]{1,8}( [a-z]{1,8}){0,3}"), 0..12)) {
        let cues: Vec<SubtitleCue> = raw
            .iter()
            .map(|(start, dur, text)| {
                SubtitleCue::new(*start as f64 / 1000.0, (*start + *dur) as f64 / 1000.0, text.clone()).unwrap()
            })
            .collect();
        let once = parse_subtitles(&to_srt(&cues)).unwrap();
        let twice = parse_subtitles(&to_srt(&once)).unwrap();
        prop_assert_eq!(&once, &twice);
        prop_assert_eq!(once.len(), cues.len());
        for s in 1..=130usize {
            prop_assert_eq!(second_text(&once, s), second_text(&twice, s));
        }
    }

    #[test]
    fn every_cue_lands_in_the_seconds_it_covers(start in 0u32..50_000, dur in 1u32..10_000) {
        let a = start as f64 / 1000.0;
        let b = (start + dur) as f64 / 1000.0;
        let cue = SubtitleCue::new(a, b, "x").unwrap();
        let covered: Vec<usize> = (1..=70).filter(|&s| !second_text(std::slice::from_ref(&cue), s).text.is_empty()).collect();
        let first = (a.floor() as usize) + 1;
        let last = b.ceil() as usize;
        prop_assert_eq!(covered, (first..=last).collect::<Vec<_>>());
    }
}
