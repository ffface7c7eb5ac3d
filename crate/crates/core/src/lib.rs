//! Video-QA preprocessing toolkit.
//!
//! * [`frame`]: frame sources and per-second windows
//! * [`pooling`]: the WA / WAE / WAR / BBLF temporal pooling operators
//! * [`subtitle`]: SubRip/WebVTT parsing and per-second subtitle text
//! * [`interleave`]: context capping, manifests, prompts and token budgets
//! * [`metrics`]: F1, BLEU, ROUGE-L and embedding cosine for two-turn outputs
//! * [`losses`]: SFT / DPO loss numerics and the low-rank adapter update
//! * [`pipeline`]: file-level orchestration used by the `povpool` binary

pub mod error;
pub mod frame;
pub mod interleave;
pub mod losses;
pub mod metrics;
pub mod pipeline;
pub mod pooling;
pub mod subtitle;

pub use error::{Error, ErrorClass, Result};
pub use frame::{open_frame_source, windows, ClipMeta, Frame, FrameStream, SecondWindow};
pub use interleave::{
    build_manifest, build_prompt, count_text_tokens, estimate_budget, plan_subsample, BudgetParams, BudgetReport,
    InterleavedManifest, PromptMode, SubsamplePlan,
};
pub use losses::{
    dpo_delta, dpo_loss, grad_check, lowrank_delta, seq_loglik, sft_loss, LowRankUpdate, PreferenceRecord,
    TokenLogProbs,
};
pub use metrics::{bleu, embed_cosine, rouge_l, score_record, split_two_turn, token_f1, MetricReport, TwoTurnOutput};
pub use pooling::{
    blend_blur_last_frame, exp_weights, gaussian_blur, key_frame, pool_second, ramp_weights, uniform_weights,
    weighted_average, Operator, PooledFrame, PoolingSpec, WeightVector,
};
pub use subtitle::{parse_srt, second_text, SecondText, SubtitleCue};
