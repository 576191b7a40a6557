//! Segment-scoped group-relative policy optimization for structured
//! chain-of-thought completions over retrieved documents.
//!
//! A completion has three sections (document analysis, conclusion, final
//! answer). Rewards for judging document helpfulness and for citing
//! consistently are applied only to the tokens of their own section, each
//! through its own importance ratio, while the format reward covers the whole
//! completion. The vanilla variant (one ratio, one summed reward) is provided
//! for comparison.
//!
//! The crate is `no_std` + `alloc`: file formats, the command line and the
//! HTTP judge client live in the `pgrpo` crate.

#![no_std]

extern crate alloc;

pub mod error;
pub mod eval;
pub mod features;
pub mod grammar;
pub mod objective;
pub mod policy;
pub mod rewards;
pub mod rng;
pub mod sft;
pub mod synth;
pub mod train;
pub mod vocab;

pub use error::{Error, Result};
pub use features::{Conditioning, CotConditioning, FeatureLayout, Features, TableConditioning};
pub use grammar::{parse, render_reference, segment_spans, FormatError, FormatReason, ParsedCompletion, SegmentSpans, Span};
pub use policy::{Dims, PolicyParams, PolicySnapshot, Trajectory};
pub use synth::{Doc, GenConfig, Instance};
pub use vocab::{Answer, Token, TokenId, TokenVocab};
