//! Rule-based rewards over parsed completions and their group normalization.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grammar::{parse, ParsedCompletion};
use crate::synth::Instance;
use crate::vocab::{Answer, TokenId, TokenVocab};

/// Stabilizer added to the group standard deviation.
pub const NORM_EPS: f64 = 1e-8;

/// 1 if the completion parses for `n` samples, else 0.
pub fn format_reward(vocab: &TokenVocab, tokens: &[TokenId], n: usize) -> f64 {
    if parse(vocab, tokens, n).is_ok() {
        1.0
    } else {
        0.0
    }
}

/// Fraction of samples whose judgment matches the ground truth.
pub fn helpfulness_reward(parsed: &ParsedCompletion, gt: &[bool]) -> Result<f64> {
    if parsed.judgments.len() != gt.len() || gt.is_empty() {
        return Err(Error::Contract(format!(
            "helpfulness reward needs matching non-empty lengths, got {} judgments and {} labels",
            parsed.judgments.len(),
            gt.len()
        )));
    }
    let hits = parsed.judgments.iter().zip(gt).filter(|(h, g)| h == g).count();
    Ok(hits as f64 / gt.len() as f64)
}

/// Fraction of samples whose citation status agrees with the completion's own
/// judgment. Ground truth plays no role.
pub fn conclusion_reward(parsed: &ParsedCompletion) -> f64 {
    let n = parsed.n();
    if n == 0 {
        return 0.0;
    }
    let hits = parsed
        .judgments
        .iter()
        .enumerate()
        .filter(|&(j, &h)| parsed.is_cited(j as u8 + 1) == h)
        .count();
    hits as f64 / n as f64
}

pub fn answer_reward(parsed: &ParsedCompletion, gold: Answer) -> f64 {
    if parsed.answer == gold {
        1.0
    } else {
        0.0
    }
}

/// Raw rewards of one completion.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RewardVector {
    pub format: f64,
    pub helpfulness: f64,
    pub conclusion: f64,
    pub answer: Option<f64>,
}

impl RewardVector {
    pub fn is_valid(&self) -> bool {
        self.format > 0.5
    }
}

/// Scores a completion against its instance. Unparseable completions get
/// zero for every reward.
pub fn score(
    vocab: &TokenVocab,
    tokens: &[TokenId],
    instance: &Instance,
    with_answer: bool,
) -> (RewardVector, Option<ParsedCompletion>) {
    match parse(vocab, tokens, instance.n) {
        Ok(parsed) => {
            let helpfulness = helpfulness_reward(&parsed, &instance.helpful_bits())
                .expect("parsed judgments have length n");
            let rv = RewardVector {
                format: 1.0,
                helpfulness,
                conclusion: conclusion_reward(&parsed),
                answer: with_answer.then(|| answer_reward(&parsed, instance.gold_answer)),
            };
            (rv, Some(parsed))
        }
        Err(_) => (
            RewardVector {
                format: 0.0,
                helpfulness: 0.0,
                conclusion: 0.0,
                answer: with_answer.then_some(0.0),
            },
            None,
        ),
    }
}

/// `(r - mean) / (std + 1e-8)` with population std; zero spread gives zeros.
pub fn normalize_column(raw: &[f64]) -> Result<Vec<f64>> {
    if raw.len() < 2 {
        return Err(Error::Contract(format!("group normalization needs G >= 2, got {}", raw.len())));
    }
    Ok(normalize_masked(raw, &vec![true; raw.len()]))
}

/// Normalizes the entries selected by `mask` among themselves; unselected
/// entries (and every entry of a degenerate selection) become zero.
pub fn normalize_masked(raw: &[f64], mask: &[bool]) -> Vec<f64> {
    debug_assert_eq!(raw.len(), mask.len());
    let mut out = vec![0.0; raw.len()];
    let count = mask.iter().filter(|&&m| m).count();
    if count < 2 {
        return out;
    }
    let selected = || raw.iter().zip(mask).filter(|(_, &m)| m).map(|(&r, _)| r);
    let mean = selected().sum::<f64>() / count as f64;
    let var = selected().map(|r| (r - mean) * (r - mean)).sum::<f64>() / count as f64;
    let std = libm::sqrt(var);
    // Spread below float noise (e.g. a constant column that picked up rounding)
    // counts as degenerate.
    if std <= 1e-12 * (1.0 + libm::fabs(mean)) {
        return out;
    }
    for ((o, &r), &m) in out.iter_mut().zip(raw).zip(mask) {
        if m {
            *o = (r - mean) / (std + NORM_EPS);
        }
    }
    out
}

/// Which rewards take part in training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardToggles {
    pub format: bool,
    pub helpfulness: bool,
    pub conclusion: bool,
    pub answer: bool,
}

impl Default for RewardToggles {
    fn default() -> Self {
        RewardToggles { format: true, helpfulness: true, conclusion: true, answer: true }
    }
}

/// Group-normalized rewards, one entry per completion. Disabled rewards are
/// all-zero columns.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageMatrix {
    pub helpfulness: Vec<f64>,
    pub conclusion: Vec<f64>,
    pub format: Vec<f64>,
    pub answer: Vec<f64>,
}

impl AdvantageMatrix {
    pub fn len(&self) -> usize {
        self.format.len()
    }

    pub fn is_empty(&self) -> bool {
        self.format.is_empty()
    }

    /// Sum of all normalized rewards of completion `i`.
    pub fn total(&self, i: usize) -> f64 {
        self.helpfulness[i] + self.conclusion[i] + self.format[i] + self.answer[i]
    }
}

/// Normalizes each enabled reward column across the group.
///
/// With `gate` set, the helpfulness, conclusion and answer columns are
/// normalized over the format-valid completions only and are zero for the
/// rest, so those completions contribute nothing through the segment terms.
pub fn normalize_group(rewards: &[RewardVector], toggles: RewardToggles, gate: bool) -> Result<AdvantageMatrix> {
    let g = rewards.len();
    if g < 2 {
        return Err(Error::Contract(format!("group normalization needs G >= 2, got {g}")));
    }
    let all = vec![true; g];
    let valid: Vec<bool> = rewards.iter().map(|r| r.is_valid()).collect();
    let segment_mask = if gate { &valid } else { &all };
    let column = |enabled: bool, mask: &[bool], get: &dyn Fn(&RewardVector) -> f64| {
        if enabled {
            let raw: Vec<f64> = rewards.iter().map(get).collect();
            normalize_masked(&raw, mask)
        } else {
            vec![0.0; g]
        }
    };
    Ok(AdvantageMatrix {
        helpfulness: column(toggles.helpfulness, segment_mask, &|r| r.helpfulness),
        conclusion: column(toggles.conclusion, segment_mask, &|r| r.conclusion),
        format: column(toggles.format, &all, &|r| r.format),
        answer: column(toggles.answer, segment_mask, &|r| r.answer.unwrap_or(0.0)),
    })
}
