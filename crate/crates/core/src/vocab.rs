//! Token vocabulary for structured chain-of-thought completions.
//!
//! Ids are assigned in a fixed order so that a vocabulary is fully described
//! by its `n_max` (the largest sample index it can address):
//!
//! ```text
//! <A> </A> <C> </C> <F> </F>  S1..S{n_max}  HLP UNH  R1..R{n_max}  a0..a9  NOANS
//! ```

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::error::Error;

/// Token id as stored in completions and checkpoints.
pub type TokenId = u32;

/// Smallest supported `n_max`.
pub const MIN_N_MAX: u8 = 8;
/// Largest supported `n_max` (citation sets are kept in a `u64` bitmask).
pub const MAX_N_MAX: u8 = 60;
/// Default `n_max`: covers the generator's eight-document ceiling plus
/// two extra slots for evaluation with up to ten retrieved documents.
pub const DEFAULT_N_MAX: u8 = 10;

const MARKERS: usize = 6;

/// Section markers. Each section is opened and closed by its own pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Marker {
    AnalysisBegin,
    AnalysisEnd,
    ConclusionBegin,
    ConclusionEnd,
    AnswerBegin,
    AnswerEnd,
}

impl Marker {
    const ALL: [Marker; MARKERS] = [
        Marker::AnalysisBegin,
        Marker::AnalysisEnd,
        Marker::ConclusionBegin,
        Marker::ConclusionEnd,
        Marker::AnswerBegin,
        Marker::AnswerEnd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Marker::AnalysisBegin => "<A>",
            Marker::AnalysisEnd => "</A>",
            Marker::ConclusionBegin => "<C>",
            Marker::ConclusionEnd => "</C>",
            Marker::AnswerBegin => "<F>",
            Marker::AnswerEnd => "</F>",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// Final answer: a single digit or an explicit "no answer".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Answer {
    Digit(u8),
    NoAnswer,
}

impl Answer {
    pub fn from_digit_sum(sum: u32) -> Answer {
        Answer::Digit((sum % 10) as u8)
    }
}

impl fmt::Display for Answer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Answer::Digit(d) => write!(f, "a{d}"),
            Answer::NoAnswer => f.write_str("NOANS"),
        }
    }
}

impl core::str::FromStr for Answer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "NOANS" {
            return Ok(Answer::NoAnswer);
        }
        let digit = s
            .strip_prefix('a')
            .filter(|d| d.len() == 1)
            .and_then(|d| d.parse::<u8>().ok())
            .ok_or_else(|| Error::InvalidAnswer(String::from(s)))?;
        Ok(Answer::Digit(digit))
    }
}

impl serde::Serialize for Answer {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> serde::Deserialize<'de> for Answer {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = <String as serde::Deserialize>::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A decoded token. Sample and citation indices are 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Token {
    Marker(Marker),
    Sample(u8),
    Helpful,
    Unhelpful,
    Cite(u8),
    Answer(Answer),
}

/// Bidirectional mapping between [`Token`]s and dense ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenVocab {
    n_max: u8,
}

impl Default for TokenVocab {
    fn default() -> Self {
        TokenVocab { n_max: DEFAULT_N_MAX }
    }
}

impl TokenVocab {
    pub fn new(n_max: u8) -> Result<Self, Error> {
        if !(MIN_N_MAX..=MAX_N_MAX).contains(&n_max) {
            return Err(Error::InvalidConfig(format!(
                "n_max must be in [{MIN_N_MAX}, {MAX_N_MAX}], got {n_max}"
            )));
        }
        Ok(TokenVocab { n_max })
    }

    pub fn n_max(&self) -> u8 {
        self.n_max
    }

    pub fn len(&self) -> usize {
        MARKERS + 2 * self.n_max as usize + 2 + 10 + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn sample_base(&self) -> usize {
        MARKERS
    }

    fn judgment_base(&self) -> usize {
        MARKERS + self.n_max as usize
    }

    fn cite_base(&self) -> usize {
        self.judgment_base() + 2
    }

    fn digit_base(&self) -> usize {
        self.cite_base() + self.n_max as usize
    }

    fn no_answer_id(&self) -> usize {
        self.digit_base() + 10
    }

    /// Id of `token`. Panics if a sample/citation index lies outside `1..=n_max`
    /// or a digit exceeds 9; use [`TokenVocab::try_id`] for unchecked input.
    pub fn id(&self, token: Token) -> TokenId {
        self.try_id(token)
            .unwrap_or_else(|| panic!("token {token:?} not representable with n_max={}", self.n_max))
    }

    pub fn try_id(&self, token: Token) -> Option<TokenId> {
        let n_max = self.n_max;
        let id = match token {
            Token::Marker(m) => m.index(),
            Token::Sample(j) if (1..=n_max).contains(&j) => self.sample_base() + j as usize - 1,
            Token::Helpful => self.judgment_base(),
            Token::Unhelpful => self.judgment_base() + 1,
            Token::Cite(j) if (1..=n_max).contains(&j) => self.cite_base() + j as usize - 1,
            Token::Answer(Answer::Digit(d)) if d < 10 => self.digit_base() + d as usize,
            Token::Answer(Answer::NoAnswer) => self.no_answer_id(),
            _ => return None,
        };
        Some(id as TokenId)
    }

    pub fn marker(&self, m: Marker) -> TokenId {
        m.index() as TokenId
    }

    pub fn token(&self, id: TokenId) -> Option<Token> {
        let id = id as usize;
        let n_max = self.n_max as usize;
        let token = if id < MARKERS {
            Token::Marker(Marker::ALL[id])
        } else if id < self.judgment_base() {
            Token::Sample((id - self.sample_base() + 1) as u8)
        } else if id == self.judgment_base() {
            Token::Helpful
        } else if id == self.judgment_base() + 1 {
            Token::Unhelpful
        } else if id < self.cite_base() + n_max {
            Token::Cite((id - self.cite_base() + 1) as u8)
        } else if id < self.digit_base() + 10 {
            Token::Answer(Answer::Digit((id - self.digit_base()) as u8))
        } else if id == self.no_answer_id() {
            Token::Answer(Answer::NoAnswer)
        } else {
            return None;
        };
        Some(token)
    }

    pub fn name(&self, id: TokenId) -> Option<String> {
        let name = match self.token(id)? {
            Token::Marker(m) => String::from(m.name()),
            Token::Sample(j) => format!("S{j}"),
            Token::Helpful => String::from("HLP"),
            Token::Unhelpful => String::from("UNH"),
            Token::Cite(j) => format!("R{j}"),
            Token::Answer(a) => format!("{a}"),
        };
        Some(name)
    }

    pub fn lookup(&self, name: &str) -> Option<TokenId> {
        (0..self.len() as TokenId).find(|&id| self.name(id).as_deref() == Some(name))
    }

    /// `(name, id)` pairs in id order.
    pub fn entries(&self) -> Vec<(String, TokenId)> {
        (0..self.len() as TokenId)
            .map(|id| (self.name(id).expect("dense ids"), id))
            .collect()
    }

    /// Encodes whitespace-separated token names, e.g. `"<A> S1 HLP </A>"`.
    pub fn encode(&self, text: &str) -> Result<Vec<TokenId>, Error> {
        text.split_whitespace()
            .map(|name| self.lookup(name).ok_or_else(|| Error::UnknownTokenName(String::from(name))))
            .collect()
    }

    pub fn decode(&self, tokens: &[TokenId]) -> String {
        let mut out = String::new();
        for (i, &t) in tokens.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            match self.name(t) {
                Some(name) => out.push_str(&name),
                None => out.push_str(&format!("#{t}")),
            }
        }
        out
    }
}
