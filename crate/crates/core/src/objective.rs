//! Surrogate objectives: vanilla group-relative (one ratio over the whole
//! completion) and segment-scoped (one ratio per reward, over that reward's
//! own tokens).
//!
//! Both reduce to a list of [`Term`]s per completion, each pairing a token
//! span with a normalized advantage. The value of a term is
//! `min(w * A, clamp(w, 1-eps, 1+eps) * A)` where `w` is the mean per-token
//! probability ratio over the span.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::Conditioning;
use crate::grammar::{SegmentSpans, Span};
use crate::policy::{ForwardTrace, PolicyParams, Trajectory};
use crate::rewards::AdvantageMatrix;

/// Mean of `exp(new - old)` over the tokens of `span` (inclusive count).
pub fn partial_ratio(new_lp: &[f64], old_lp: &[f64], span: Span) -> Result<f64> {
    if span.end >= new_lp.len() || span.end >= old_lp.len() {
        return Err(Error::Contract(format!(
            "span {span} outside sequences of length {} and {}",
            new_lp.len(),
            old_lp.len()
        )));
    }
    let sum: f64 = span.range().map(|t| libm::exp(new_lp[t] - old_lp[t])).sum();
    Ok(sum / span.len() as f64)
}

/// Pessimistic clipped surrogate `min(w*A, clamp(w)*A)`.
pub fn clip_term(ratio: f64, advantage: f64, eps: f64) -> f64 {
    let clamped = ratio.clamp(1.0 - eps, 1.0 + eps);
    (ratio * advantage).min(clamped * advantage)
}

/// Derivative of [`clip_term`] with respect to the ratio.
fn clip_slope(ratio: f64, advantage: f64, eps: f64) -> f64 {
    let clamped = ratio.clamp(1.0 - eps, 1.0 + eps);
    if ratio * advantage <= clamped * advantage {
        advantage
    } else {
        0.0
    }
}

/// Mean over tokens of `exp(ref - new) - (ref - new) - 1`, which is >= 0.
pub fn kl_penalty(new_lp: &[f64], ref_lp: &[f64]) -> Result<f64> {
    if new_lp.len() != ref_lp.len() {
        return Err(Error::Contract(format!(
            "KL needs equal lengths, got {} and {}",
            new_lp.len(),
            ref_lp.len()
        )));
    }
    if new_lp.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = new_lp
        .iter()
        .zip(ref_lp)
        .map(|(n, r)| {
            let d = r - n;
            libm::expm1(d) - d
        })
        .sum();
    Ok(sum / new_lp.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipConfig {
    pub clip_eps: f64,
    pub kl_beta: f64,
}

impl Default for ClipConfig {
    fn default() -> Self {
        ClipConfig { clip_eps: 0.2, kl_beta: 0.01 }
    }
}

/// One reward applied to one token span.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Term {
    pub span: Span,
    pub advantage: f64,
}

/// Terms of the vanilla objective: one term over the whole completion.
pub fn grpo_terms(len: usize, advantage: f64) -> Vec<Term> {
    vec![Term { span: Span::full(len), advantage }]
}

/// Terms of the segment-scoped objective for completion `i`.
///
/// The format term always spans the whole completion. Helpfulness,
/// conclusion and answer terms use the analysis, conclusion and answer
/// segments; for an unparseable completion (`spans == None`) they are
/// dropped when `gate` is set and widened to the whole completion otherwise.
pub fn pgrpo_terms(len: usize, spans: Option<&SegmentSpans>, adv: &AdvantageMatrix, i: usize, gate: bool) -> Vec<Term> {
    let full = Span::full(len);
    let mut terms = vec![Term { span: full, advantage: adv.format[i] }];
    let segment = |pick: fn(&SegmentSpans) -> Span| match spans {
        Some(s) => Some(pick(s)),
        None if gate => None,
        None => Some(full),
    };
    for (span, advantage) in [
        (segment(|s| s.h_span), adv.helpfulness[i]),
        (segment(|s| s.c_span), adv.conclusion[i]),
        (segment(|s| s.f_span), adv.answer[i]),
    ] {
        if let Some(span) = span {
            terms.push(Term { span, advantage });
        }
    }
    terms
}

/// Objective value split into surrogate and KL parts, plus per-token
/// coefficients `dJ/d log pi(o_{i,t})` for each completion.
#[derive(Debug, Clone, PartialEq)]
pub struct TermEvaluation {
    pub surrogate: f64,
    pub kl: f64,
    pub value: f64,
    pub coeffs: Vec<Vec<f64>>,
    /// Ratio of each term, in the order the terms were given.
    pub ratios: Vec<Vec<f64>>,
}

/// Evaluates `(1/G) sum_i [ sum_terms clip_term(w, A) - beta * KL_i ]`.
pub fn evaluate_terms(
    terms: &[Vec<Term>],
    new_lps: &[Vec<f64>],
    old_lps: &[Vec<f64>],
    ref_lps: Option<&[Vec<f64>]>,
    config: ClipConfig,
) -> Result<TermEvaluation> {
    let g = terms.len();
    if g == 0 || new_lps.len() != g || old_lps.len() != g || ref_lps.is_some_and(|r| r.len() != g) {
        return Err(Error::Contract(format!(
            "inconsistent group sizes: {g} term lists, {} new, {} old logprob rows",
            new_lps.len(),
            old_lps.len()
        )));
    }
    let inv_g = 1.0 / g as f64;
    let eps = config.clip_eps;
    let mut out = TermEvaluation {
        surrogate: 0.0,
        kl: 0.0,
        value: 0.0,
        coeffs: Vec::with_capacity(g),
        ratios: Vec::with_capacity(g),
    };
    for i in 0..g {
        let (new, old) = (&new_lps[i], &old_lps[i]);
        if new.len() != old.len() || new.is_empty() {
            return Err(Error::Contract(format!("completion {i}: logprob lengths {} vs {}", new.len(), old.len())));
        }
        let token_ratio: Vec<f64> = new.iter().zip(old).map(|(n, o)| libm::exp(n - o)).collect();
        let mut coeffs = vec![0.0; new.len()];
        let mut ratios = Vec::with_capacity(terms[i].len());
        for term in &terms[i] {
            let w = partial_ratio(new, old, term.span)?;
            ratios.push(w);
            out.surrogate += inv_g * clip_term(w, term.advantage, eps);
            let slope = clip_slope(w, term.advantage, eps);
            if slope != 0.0 {
                let scale = inv_g * slope / term.span.len() as f64;
                for t in term.span.range() {
                    coeffs[t] += scale * token_ratio[t];
                }
            }
        }
        if let Some(refs) = ref_lps {
            let r = &refs[i];
            let kl = kl_penalty(new, r)?;
            out.kl += inv_g * kl;
            if config.kl_beta != 0.0 {
                let scale = config.kl_beta * inv_g / new.len() as f64;
                for t in 0..new.len() {
                    // d/dnew [exp(r-new) - (r-new) - 1] = 1 - exp(r-new)
                    coeffs[t] -= scale * (-libm::expm1(r[t] - new[t]));
                }
            }
        }
        out.coeffs.push(coeffs);
        out.ratios.push(ratios);
    }
    out.value = out.surrogate - config.kl_beta * out.kl;
    Ok(out)
}

/// Objective value and its gradient with respect to the policy parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub surrogate: f64,
    pub kl: f64,
    pub value: f64,
    pub grad: Vec<f64>,
    pub ratios: Vec<Vec<f64>>,
}

/// Evaluates `terms` for a sampled group under the current `params`.
/// `ref_lps` are the reference policy's log-probabilities for the KL term.
pub fn objective_with_terms<C: Conditioning>(
    params: &PolicyParams,
    cond: &C,
    group: &[Trajectory],
    ref_lps: Option<&[Vec<f64>]>,
    terms: &[Vec<Term>],
    config: ClipConfig,
) -> Result<Objective> {
    let traces = group
        .iter()
        .map(|traj| ForwardTrace::new(params, cond, &traj.tokens))
        .collect::<Result<Vec<_>>>()?;
    let new_lps: Vec<Vec<f64>> = traces.iter().map(|t| t.logprobs.clone()).collect();
    let old_lps: Vec<Vec<f64>> = group.iter().map(|t| t.logprobs_old.clone()).collect();
    let eval = evaluate_terms(terms, &new_lps, &old_lps, ref_lps, config)?;
    let mut grad = vec![0.0; params.dims().param_count()];
    for (trace, coeffs) in traces.iter().zip(&eval.coeffs) {
        trace.backward(params, coeffs, &mut grad);
    }
    Ok(Objective { surrogate: eval.surrogate, kl: eval.kl, value: eval.value, grad, ratios: eval.ratios })
}

/// Vanilla objective: every token of completion `i` shares advantage `advantages[i]`.
pub fn grpo_objective<C: Conditioning>(
    params: &PolicyParams,
    cond: &C,
    group: &[Trajectory],
    ref_lps: Option<&[Vec<f64>]>,
    advantages: &[f64],
    config: ClipConfig,
) -> Result<Objective> {
    if advantages.len() != group.len() {
        return Err(Error::Contract(format!(
            "{} advantages for a group of {}",
            advantages.len(),
            group.len()
        )));
    }
    let terms: Vec<Vec<Term>> = group.iter().zip(advantages).map(|(t, &a)| grpo_terms(t.tokens.len(), a)).collect();
    objective_with_terms(params, cond, group, ref_lps, &terms, config)
}

/// Segment-scoped objective. `spans[i]` is `None` for unparseable completions.
pub fn pgrpo_objective<C: Conditioning>(
    params: &PolicyParams,
    cond: &C,
    group: &[Trajectory],
    ref_lps: Option<&[Vec<f64>]>,
    advantages: &AdvantageMatrix,
    spans: &[Option<SegmentSpans>],
    gate: bool,
    config: ClipConfig,
) -> Result<Objective> {
    if advantages.len() != group.len() || spans.len() != group.len() {
        return Err(Error::Contract(format!(
            "group of {} with {} advantage rows and {} span entries",
            group.len(),
            advantages.len(),
            spans.len()
        )));
    }
    let terms: Vec<Vec<Term>> = group
        .iter()
        .enumerate()
        .map(|(i, t)| pgrpo_terms(t.tokens.len(), spans[i].as_ref(), advantages, i, gate))
        .collect();
    objective_with_terms(params, cond, group, ref_lps, &terms, config)
}
