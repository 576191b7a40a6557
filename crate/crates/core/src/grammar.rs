//! Structured chain-of-thought grammar.
//!
//! A well-formed completion for an instance with `n` retrieved samples is
//!
//! ```text
//! <A> S1 (HLP|UNH) ... Sn (HLP|UNH) </A> <C> R(j)* </C> <F> (a0..a9|NOANS) </F>
//! ```
//!
//! with citations unique and strictly ascending. Section markers belong to
//! the section they open or close, so the three segments tile the completion.

use alloc::vec::Vec;
use core::fmt;

use crate::synth::Instance;
use crate::vocab::{Answer, Marker, Token, TokenId, TokenVocab};

/// Why a token sequence failed to parse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FormatReason {
    /// A section marker was expected but something else appeared.
    MissingMarker(Marker),
    /// A sample header appeared out of sequence, or the count differs from `n`.
    WrongSampleOrder,
    /// Expected a sample header, found a non-header token.
    MissingSampleHeader,
    /// A sample header was not followed by `HLP`/`UNH`.
    MissingJudgment,
    DuplicateCitation,
    /// Citation lower than one already emitted.
    CitationOrder,
    /// Citation of a sample index greater than `n`.
    CitationOutOfRange,
    /// `<F>` not followed by a digit or `NOANS`.
    MissingAnswer,
    TrailingTokens,
    /// The sequence ended before `</F>`.
    Truncated,
    UnknownToken,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("format error at token {position}: {reason:?}")]
pub struct FormatError {
    pub reason: FormatReason,
    pub position: usize,
}

/// Inclusive token range `[start, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Span {
        debug_assert!(start <= end);
        Span { start, end }
    }

    /// Covers a whole sequence of `len > 0` tokens.
    pub fn full(len: usize) -> Span {
        Span::new(0, len - 1)
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, t: usize) -> bool {
        (self.start..=self.end).contains(&t)
    }

    pub fn range(&self) -> core::ops::RangeInclusive<usize> {
        self.start..=self.end
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{}]", self.start, self.end)
    }
}

/// Token ranges of the analysis (`h`), conclusion (`c`) and final-answer (`f`) sections.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SegmentSpans {
    pub h_span: Span,
    pub c_span: Span,
    pub f_span: Span,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedCompletion {
    /// Judgment per sample, `true` for `HLP`.
    pub judgments: Vec<bool>,
    /// Cited sample indices (1-based), ascending.
    pub citations: Vec<u8>,
    pub answer: Answer,
    pub spans: SegmentSpans,
}

impl ParsedCompletion {
    pub fn n(&self) -> usize {
        self.judgments.len()
    }

    pub fn is_cited(&self, j: u8) -> bool {
        self.citations.binary_search(&j).is_ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Phase {
    Start,
    Header(u8),
    Judgment(u8),
    AnalysisEnd,
    ConclusionBegin,
    Conclusion { last: u8 },
    AnswerBegin,
    Answer,
    AnswerEnd,
    Done,
}

/// Incremental recognizer for the grammar. Used by the parser and by the
/// optional grammar mask during sampling.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrammarCursor {
    vocab: TokenVocab,
    n: u8,
    phase: Phase,
    position: usize,
    cited: u64,
}

impl GrammarCursor {
    pub fn new(vocab: TokenVocab, n: u8) -> GrammarCursor {
        debug_assert!(n >= 1 && n <= vocab.n_max());
        GrammarCursor { vocab, n, phase: Phase::Start, position: 0, cited: 0 }
    }

    pub fn is_complete(&self) -> bool {
        self.phase == Phase::Done
    }

    pub fn position(&self) -> usize {
        self.position
    }

    fn fail(&self, reason: FormatReason) -> FormatError {
        FormatError { reason, position: self.position }
    }

    /// Consumes one token; on error the cursor is left unchanged.
    pub fn advance(&mut self, id: TokenId) -> Result<(), FormatError> {
        use FormatReason::*;
        let token = self.vocab.token(id).ok_or_else(|| self.fail(UnknownToken))?;
        let n = self.n;
        let next = match (self.phase, token) {
            (Phase::Start, Token::Marker(Marker::AnalysisBegin)) => Phase::Header(1),
            (Phase::Start, _) => return Err(self.fail(MissingMarker(Marker::AnalysisBegin))),
            (Phase::Header(j), Token::Sample(k)) if k == j => Phase::Judgment(j),
            (Phase::Header(_), Token::Sample(_) | Token::Marker(Marker::AnalysisEnd)) => {
                return Err(self.fail(WrongSampleOrder))
            }
            (Phase::Header(_), _) => return Err(self.fail(MissingSampleHeader)),
            (Phase::Judgment(j), Token::Helpful | Token::Unhelpful) => {
                if j < n {
                    Phase::Header(j + 1)
                } else {
                    Phase::AnalysisEnd
                }
            }
            (Phase::Judgment(_), _) => return Err(self.fail(MissingJudgment)),
            (Phase::AnalysisEnd, Token::Marker(Marker::AnalysisEnd)) => Phase::ConclusionBegin,
            (Phase::AnalysisEnd, Token::Sample(_)) => return Err(self.fail(WrongSampleOrder)),
            (Phase::AnalysisEnd, _) => return Err(self.fail(MissingMarker(Marker::AnalysisEnd))),
            (Phase::ConclusionBegin, Token::Marker(Marker::ConclusionBegin)) => {
                Phase::Conclusion { last: 0 }
            }
            (Phase::ConclusionBegin, _) => {
                return Err(self.fail(MissingMarker(Marker::ConclusionBegin)))
            }
            (Phase::Conclusion { last }, Token::Cite(k)) => {
                if k > n {
                    return Err(self.fail(CitationOutOfRange));
                }
                if self.cited & (1u64 << k) != 0 {
                    return Err(self.fail(DuplicateCitation));
                }
                if k < last {
                    return Err(self.fail(CitationOrder));
                }
                self.cited |= 1u64 << k;
                Phase::Conclusion { last: k }
            }
            (Phase::Conclusion { .. }, Token::Marker(Marker::ConclusionEnd)) => Phase::AnswerBegin,
            (Phase::Conclusion { .. }, _) => {
                return Err(self.fail(MissingMarker(Marker::ConclusionEnd)))
            }
            (Phase::AnswerBegin, Token::Marker(Marker::AnswerBegin)) => Phase::Answer,
            (Phase::AnswerBegin, _) => return Err(self.fail(MissingMarker(Marker::AnswerBegin))),
            (Phase::Answer, Token::Answer(_)) => Phase::AnswerEnd,
            (Phase::Answer, _) => return Err(self.fail(MissingAnswer)),
            (Phase::AnswerEnd, Token::Marker(Marker::AnswerEnd)) => Phase::Done,
            (Phase::AnswerEnd, _) => return Err(self.fail(MissingMarker(Marker::AnswerEnd))),
            (Phase::Done, _) => return Err(self.fail(TrailingTokens)),
        };
        self.phase = next;
        self.position += 1;
        Ok(())
    }

    /// Marks every token id that [`GrammarCursor::advance`] would accept.
    pub fn allowed(&self, out: &mut [bool]) {
        out.iter_mut().for_each(|b| *b = false);
        let v = &self.vocab;
        let mut allow = |t: Token| out[v.id(t) as usize] = true;
        match self.phase {
            Phase::Start => allow(Token::Marker(Marker::AnalysisBegin)),
            Phase::Header(j) => allow(Token::Sample(j)),
            Phase::Judgment(_) => {
                allow(Token::Helpful);
                allow(Token::Unhelpful);
            }
            Phase::AnalysisEnd => allow(Token::Marker(Marker::AnalysisEnd)),
            Phase::ConclusionBegin => allow(Token::Marker(Marker::ConclusionBegin)),
            Phase::Conclusion { last } => {
                for k in (last + 1)..=self.n {
                    allow(Token::Cite(k));
                }
                allow(Token::Marker(Marker::ConclusionEnd));
            }
            Phase::AnswerBegin => allow(Token::Marker(Marker::AnswerBegin)),
            Phase::Answer => {
                for d in 0..10 {
                    allow(Token::Answer(Answer::Digit(d)));
                }
                allow(Token::Answer(Answer::NoAnswer));
            }
            Phase::AnswerEnd => allow(Token::Marker(Marker::AnswerEnd)),
            Phase::Done => {}
        }
    }
}

/// Parses a completion for an instance with `n` retrieved samples.
pub fn parse(vocab: &TokenVocab, tokens: &[TokenId], n: usize) -> Result<ParsedCompletion, FormatError> {
    if n == 0 || n > vocab.n_max() as usize {
        // No token sequence is grammatical for an unrepresentable sample count.
        return Err(FormatError { reason: FormatReason::WrongSampleOrder, position: 0 });
    }
    let mut cursor = GrammarCursor::new(*vocab, n as u8);
    let mut judgments = Vec::with_capacity(n);
    let mut citations = Vec::new();
    let mut answer = Answer::NoAnswer;
    let (mut end_a, mut end_c) = (0, 0);
    for (t, &id) in tokens.iter().enumerate() {
        cursor.advance(id)?;
        match vocab.token(id) {
            Some(Token::Helpful) => judgments.push(true),
            Some(Token::Unhelpful) => judgments.push(false),
            Some(Token::Cite(k)) => citations.push(k),
            Some(Token::Answer(a)) => answer = a,
            Some(Token::Marker(Marker::AnalysisEnd)) => end_a = t,
            Some(Token::Marker(Marker::ConclusionEnd)) => end_c = t,
            _ => {}
        }
        if cursor.is_complete() && t + 1 < tokens.len() {
            return Err(FormatError { reason: FormatReason::TrailingTokens, position: t + 1 });
        }
    }
    if !cursor.is_complete() {
        return Err(FormatError { reason: FormatReason::Truncated, position: tokens.len() });
    }
    let spans = SegmentSpans {
        h_span: Span::new(0, end_a),
        c_span: Span::new(end_a + 1, end_c),
        f_span: Span::new(end_c + 1, tokens.len() - 1),
    };
    Ok(ParsedCompletion { judgments, citations, answer, spans })
}

/// Segment boundaries of a completion. The sample count is recovered from
/// the analysis section, so only the tokens are needed.
pub fn segment_spans(vocab: &TokenVocab, tokens: &[TokenId]) -> Result<SegmentSpans, FormatError> {
    let n = tokens
        .iter()
        .take_while(|&&id| vocab.token(id) != Some(Token::Marker(Marker::AnalysisEnd)))
        .filter(|&&id| matches!(vocab.token(id), Some(Token::Sample(_))))
        .count()
        .max(1);
    parse(vocab, tokens, n).map(|p| p.spans)
}

/// Emits the gold completion for `instance`: ground-truth judgments, citations
/// of exactly the helpful samples, and the gold answer.
pub fn render_reference(vocab: &TokenVocab, instance: &Instance) -> Vec<TokenId> {
    render(
        vocab,
        instance.docs.iter().map(|d| d.helpful_gt),
        instance.gold_answer,
    )
}

/// Renders a completion whose citations follow `judgments` and whose answer is `answer`.
pub fn render(
    vocab: &TokenVocab,
    judgments: impl IntoIterator<Item = bool>,
    answer: Answer,
) -> Vec<TokenId> {
    let judgments: Vec<bool> = judgments.into_iter().collect();
    let mut out = Vec::with_capacity(3 * judgments.len() + 8);
    out.push(vocab.marker(Marker::AnalysisBegin));
    for (j, &h) in judgments.iter().enumerate() {
        out.push(vocab.id(Token::Sample(j as u8 + 1)));
        out.push(vocab.id(if h { Token::Helpful } else { Token::Unhelpful }));
    }
    out.push(vocab.marker(Marker::AnalysisEnd));
    out.push(vocab.marker(Marker::ConclusionBegin));
    for (j, _) in judgments.iter().enumerate().filter(|(_, &h)| h) {
        out.push(vocab.id(Token::Cite(j as u8 + 1)));
    }
    out.push(vocab.marker(Marker::ConclusionEnd));
    out.push(vocab.marker(Marker::AnswerBegin));
    out.push(vocab.id(Token::Answer(answer)));
    out.push(vocab.marker(Marker::AnswerEnd));
    out
}

/// Length of the shortest grammatical completion for `n` samples.
pub fn min_completion_len(n: usize) -> usize {
    2 * n + 7
}
