//! Context features: what the policy sees at each decoding step.
//!
//! [`Conditioning`] abstracts "an input plus a decoding prefix" into a sparse
//! feature vector. [`CotConditioning`] is the one used for retrieval
//! instances; tests plug in small random conditionings of their own.

use alloc::vec;
use alloc::vec::Vec;

use crate::grammar::GrammarCursor;
use crate::synth::Instance;
use crate::vocab::{Marker, Token, TokenId, TokenVocab};

/// Sparse feature vector as `(index, value)` pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Features {
    pub entries: Vec<(usize, f64)>,
}

impl Features {
    pub fn clear(&mut self) {
        self.entries.clear();
    }

    pub fn push(&mut self, index: usize, value: f64) {
        if value != 0.0 {
            self.entries.push((index, value));
        }
    }

    /// Expands into a dense vector of length `dim`.
    pub fn to_dense(&self, dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; dim];
        for &(i, v) in &self.entries {
            out[i] += v;
        }
        out
    }
}

/// Deterministic map from (input, prefix) to features, advanced one token at a time.
pub trait Conditioning {
    type State: Clone;

    fn feature_dim(&self) -> usize;

    fn initial_state(&self) -> Self::State;

    fn observe(&self, state: &mut Self::State, token: TokenId);

    fn features(&self, state: &Self::State, out: &mut Features);

    /// Restricts the next-token support. Returns `false` (and leaves `allowed`
    /// untouched) when every token is permitted.
    fn mask(&self, _state: &Self::State, _allowed: &mut [bool]) -> bool {
        false
    }
}

/// Layout of the retrieval-instance feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureLayout {
    vocab: TokenVocab,
    cue_bits: usize,
}

const SECTIONS: usize = 7;

impl FeatureLayout {
    pub fn new(vocab: TokenVocab, cue_bits: usize) -> FeatureLayout {
        FeatureLayout { vocab, cue_bits }
    }

    pub fn vocab(&self) -> TokenVocab {
        self.vocab
    }

    pub fn cue_bits(&self) -> usize {
        self.cue_bits
    }

    fn n_max(&self) -> usize {
        self.vocab.n_max() as usize
    }

    // previous token (vocab + "start" slot)
    fn prev_base(&self) -> usize {
        0
    }
    fn section_base(&self) -> usize {
        self.vocab.len() + 1
    }
    // current sample index, slot 0 = none
    fn index_base(&self) -> usize {
        self.section_base() + SECTIONS
    }
    fn last_flag(&self) -> usize {
        self.index_base() + self.n_max() + 1
    }
    fn cue_base(&self) -> usize {
        self.last_flag() + 1
    }
    fn evidence_base(&self) -> usize {
        self.cue_base() + self.cue_bits
    }
    fn n_base(&self) -> usize {
        self.evidence_base() + 10
    }
    // running digit sum of cited evidence, slot 10 = nothing cited
    fn digit_base(&self) -> usize {
        self.n_base() + 1
    }

    pub fn dim(&self) -> usize {
        self.digit_base() + 11
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Section {
    Start,
    Analysis,
    AfterAnalysis,
    Conclusion,
    AfterConclusion,
    Answer,
    Done,
}

/// Prefix summary for [`CotConditioning`]. Tolerates arbitrary (ungrammatical) prefixes.
#[derive(Debug, Clone)]
pub struct CotState {
    prev: Option<TokenId>,
    section: Section,
    index: usize,
    judged_helpful: u64,
    last_cited: usize,
    cited: u64,
    digit_sum: u32,
    cursor: Option<(GrammarCursor, bool)>,
}

/// Conditions the policy on one retrieval instance.
///
/// Features: previous token, current section, current sample index (the last
/// header seen while analysing; while concluding, the next sample the
/// completion itself judged helpful and has not yet cited), whether that index
/// is the last sample, the current document's cue bits and evidence digit,
/// the sample count, and the running digit sum over cited documents.
#[derive(Debug, Clone, Copy)]
pub struct CotConditioning<'a> {
    layout: FeatureLayout,
    instance: &'a Instance,
    grammar_mask: bool,
}

impl<'a> CotConditioning<'a> {
    pub fn new(layout: FeatureLayout, instance: &'a Instance) -> Self {
        CotConditioning { layout, instance, grammar_mask: false }
    }

    pub fn with_grammar_mask(mut self, on: bool) -> Self {
        self.grammar_mask = on;
        self
    }

    pub fn instance(&self) -> &Instance {
        self.instance
    }

    fn n(&self) -> usize {
        self.instance.n
    }

    fn conclusion_pointer(&self, state: &CotState) -> usize {
        ((state.last_cited + 1)..=self.n().min(self.layout.n_max()))
            .find(|&k| state.judged_helpful & (1u64 << k) != 0)
            .unwrap_or(0)
    }
}

impl Conditioning for CotConditioning<'_> {
    type State = CotState;

    fn feature_dim(&self) -> usize {
        self.layout.dim()
    }

    fn initial_state(&self) -> CotState {
        let n = self.n();
        let cursor = (self.grammar_mask && n >= 1 && n <= self.layout.n_max())
            .then(|| (GrammarCursor::new(self.layout.vocab, n as u8), true));
        CotState {
            prev: None,
            section: Section::Start,
            index: 0,
            judged_helpful: 0,
            last_cited: 0,
            cited: 0,
            digit_sum: 0,
            cursor,
        }
    }

    fn observe(&self, s: &mut CotState, token: TokenId) {
        s.prev = Some(token);
        if let Some((cursor, ok)) = s.cursor.as_mut() {
            if *ok && cursor.advance(token).is_err() {
                *ok = false;
            }
        }
        let Some(tok) = self.layout.vocab.token(token) else { return };
        match tok {
            Token::Marker(m) => {
                s.section = match m {
                    Marker::AnalysisBegin => Section::Analysis,
                    Marker::AnalysisEnd => Section::AfterAnalysis,
                    Marker::ConclusionBegin => Section::Conclusion,
                    Marker::ConclusionEnd => Section::AfterConclusion,
                    Marker::AnswerBegin => Section::Answer,
                    Marker::AnswerEnd => Section::Done,
                };
            }
            Token::Sample(j) if s.section == Section::Analysis => s.index = j as usize,
            Token::Helpful | Token::Unhelpful if s.section == Section::Analysis && s.index >= 1 => {
                let bit = 1u64 << s.index;
                if tok == Token::Helpful {
                    s.judged_helpful |= bit;
                } else {
                    s.judged_helpful &= !bit;
                }
            }
            Token::Cite(j) if s.section == Section::Conclusion => {
                let j = j as usize;
                s.last_cited = j;
                let bit = 1u64 << j;
                if s.cited & bit == 0 {
                    s.cited |= bit;
                    if let Some(doc) = self.instance.docs.get(j - 1) {
                        s.digit_sum += doc.evidence_digit as u32;
                    }
                }
            }
            _ => {}
        }
    }

    fn features(&self, s: &CotState, out: &mut Features) {
        let l = &self.layout;
        out.clear();
        let prev = match s.prev {
            Some(t) if (t as usize) < l.vocab.len() => t as usize,
            Some(_) | None => l.vocab.len(),
        };
        out.push(l.prev_base() + prev, 1.0);
        out.push(l.section_base() + s.section as usize, 1.0);

        let index = match s.section {
            Section::Analysis => s.index.min(l.n_max()),
            Section::Conclusion => self.conclusion_pointer(s),
            _ => 0,
        };
        out.push(l.index_base() + index, 1.0);
        if index >= 1 {
            if index == self.n() {
                out.push(l.last_flag(), 1.0);
            }
            if let Some(doc) = self.instance.docs.get(index - 1) {
                for (b, &cue) in doc.cue_bits.iter().take(l.cue_bits).enumerate() {
                    out.push(l.cue_base() + b, if cue { 1.0 } else { 0.0 });
                }
                out.push(l.evidence_base() + doc.evidence_digit.min(9) as usize, 1.0);
            }
        }
        out.push(l.n_base(), self.n().min(l.n_max()) as f64 / l.n_max() as f64);
        if matches!(s.section, Section::Conclusion | Section::AfterConclusion | Section::Answer | Section::Done) {
            let slot = if s.cited == 0 { 10 } else { (s.digit_sum % 10) as usize };
            out.push(l.digit_base() + slot, 1.0);
        }
    }

    fn mask(&self, s: &CotState, allowed: &mut [bool]) -> bool {
        match &s.cursor {
            Some((cursor, true)) if !cursor.is_complete() => {
                cursor.allowed(allowed);
                true
            }
            _ => false,
        }
    }
}

/// Dense random features keyed by `(position, previous token)`. Useful for
/// exercising the policy on small synthetic vocabularies.
#[derive(Debug, Clone)]
pub struct TableConditioning {
    pub dim: usize,
    pub vocab: usize,
    pub table: Vec<f64>,
    pub max_pos: usize,
}

impl TableConditioning {
    pub fn random<R: rand::Rng + ?Sized>(dim: usize, vocab: usize, max_pos: usize, rng: &mut R) -> Self {
        let table = (0..(max_pos + 1) * (vocab + 1) * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        TableConditioning { dim, vocab, table, max_pos }
    }
}

impl Conditioning for TableConditioning {
    type State = (usize, usize);

    fn feature_dim(&self) -> usize {
        self.dim
    }

    fn initial_state(&self) -> (usize, usize) {
        (0, self.vocab)
    }

    fn observe(&self, s: &mut (usize, usize), token: TokenId) {
        *s = ((s.0 + 1).min(self.max_pos), (token as usize).min(self.vocab));
    }

    fn features(&self, s: &(usize, usize), out: &mut Features) {
        out.clear();
        let base = (s.0 * (self.vocab + 1) + s.1) * self.dim;
        for i in 0..self.dim {
            out.push(i, self.table[base + i]);
        }
    }
}
