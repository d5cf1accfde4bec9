//! Unified vocabulary, interleaved trace encoding, and attention masks.

pub mod encode;
pub mod mask;
pub mod vocab;

pub use encode::{
    decode_trace, encode_trace, Role, SpanLayout, ThinkingImage, Trace, VtType, OPTION_SLOTS,
    TEXT_STUB_LEN,
};
pub use mask::{base_causal_mask, AttnMask};
pub use vocab::{
    TokenId, Vocabulary, ANS, BOS, EOS, MAX_COUNT, SEP, VT_PANO, VT_POINT, VT_TEXT, VT_TOPDOWN,
};
