//! Reinforcement stage: sample groups from a frozen snapshot, score them,
//! normalize rewards within each group, and take one gradient-ascent step on
//! the chosen surrogate objective.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{CotConditioning, FeatureLayout};
use crate::grammar::SegmentSpans;
use crate::objective::{grpo_terms, objective_with_terms, partial_ratio, pgrpo_terms, ClipConfig, Term};
use crate::policy::{sample_group, token_logprobs, DecodeSpec, PolicyParams};
use crate::rewards::{normalize_group, normalize_masked, score, RewardToggles, RewardVector};
use crate::rng::{mix, substream, STREAM_BATCH};
use crate::synth::Instance;
use crate::vocab::Marker;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// One ratio over the whole completion, weighted reward sum as advantage.
    Grpo,
    /// One ratio per reward, each over that reward's own segment.
    Pgrpo,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Grpo => "grpo",
            Mode::Pgrpo => "pgrpo",
        })
    }
}

impl core::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Mode> {
        match s {
            "grpo" => Ok(Mode::Grpo),
            "pgrpo" => Ok(Mode::Pgrpo),
            other => Err(Error::InvalidConfig(format!("unknown mode `{other}` (expected grpo or pgrpo)"))),
        }
    }
}

/// Reward weights for the vanilla baseline's summed reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardWeights {
    pub format: f64,
    pub helpfulness: f64,
    pub conclusion: f64,
    pub answer: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights { format: 1.0, helpfulness: 1.0, conclusion: 1.0, answer: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(alias = "G")]
    pub group_size: usize,
    pub lr: f64,
    pub updates: usize,
    pub clip_eps: f64,
    pub kl_beta: f64,
    pub seed: u64,
    pub mode: Mode,
    pub rewards: RewardToggles,
    pub grpo_weights: RewardWeights,
    /// Instances (one group each) per update.
    pub batch_instances: usize,
    pub max_len: usize,
    /// Drop helpfulness/conclusion/answer terms of unparseable completions.
    pub format_gating: bool,
    /// Restrict sampling to grammatical continuations.
    pub grammar_mask: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            group_size: 8,
            lr: 2.0,
            updates: 300,
            clip_eps: 0.2,
            kl_beta: 0.01,
            seed: 0,
            mode: Mode::Pgrpo,
            rewards: RewardToggles::default(),
            grpo_weights: RewardWeights::default(),
            batch_instances: 16,
            max_len: 40,
            format_gating: true,
            grammar_mask: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.group_size < 2 {
            return bad(format!("group_size must be >= 2, got {}", self.group_size));
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return bad(format!("clip_eps must be in (0, 1), got {}", self.clip_eps));
        }
        if !(self.kl_beta >= 0.0) {
            return bad(format!("kl_beta must be >= 0, got {}", self.kl_beta));
        }
        if !self.lr.is_finite() {
            return bad("lr must be finite".into());
        }
        if self.batch_instances == 0 || self.max_len == 0 {
            return bad("batch_instances and max_len must be positive".into());
        }
        Ok(())
    }

    pub fn clip(&self) -> ClipConfig {
        ClipConfig { clip_eps: self.clip_eps, kl_beta: self.kl_beta }
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRow {
    pub update: usize,
    pub mode: Mode,
    pub objective: f64,
    pub kl: f64,
    pub mean_rf: f64,
    pub mean_rh: f64,
    pub mean_rc: f64,
    pub mean_ra: f64,
    pub format_valid_frac: f64,
    /// Mean `|w - 1|` over all objective terms, measured after the step.
    pub mean_abs_omega_minus_1: f64,
}

/// Per-completion breakdown, for reward logs.
#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRecord {
    pub update: usize,
    pub completion_idx: usize,
    pub rewards: RewardVector,
    pub adv_h: f64,
    pub adv_c: f64,
    pub adv_f: f64,
    pub adv_a: f64,
}

/// Receives log rows as training proceeds.
pub trait TrainObserver {
    fn on_update(&mut self, _row: &TrainRow) {}
    fn on_completion(&mut self, _record: &CompletionRecord) {}
}

impl TrainObserver for () {}

impl<F: FnMut(&TrainRow)> TrainObserver for F {
    fn on_update(&mut self, row: &TrainRow) {
        self(row)
    }
}

struct PreparedGroup<'a> {
    cond: CotConditioning<'a>,
    group: Vec<crate::policy::Trajectory>,
    refs: Option<Vec<Vec<f64>>>,
    terms: Vec<Vec<Term>>,
}

/// Runs `config.updates` updates starting from `params`.
///
/// `reference` supplies the KL anchor; without one the KL term is zero.
pub fn train_loop(
    params: PolicyParams,
    reference: Option<&PolicyParams>,
    dataset: &[Instance],
    layout: &FeatureLayout,
    config: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<(PolicyParams, Vec<TrainRow>)> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    params.check_layout(layout)?;
    if let Some(r) = reference {
        r.check_layout(layout)?;
    }
    let vocab = layout.vocab();
    let spec = DecodeSpec { max_len: config.max_len, stop: Some(vocab.marker(Marker::AnswerEnd)) };
    let toggles = config.rewards;
    let w = config.grpo_weights;
    let g = config.group_size;

    let mut params = params;
    let mut log = Vec::with_capacity(config.updates);
    for update in 0..config.updates {
        let snapshot = params.snapshot();
        let mut batch_rng = substream(config.seed, &[STREAM_BATCH, update as u64]);
        let sample_seed = mix(config.seed, &[update as u64]);
        let mut prepared = Vec::with_capacity(config.batch_instances);
        let mut all_rewards: Vec<RewardVector> = Vec::with_capacity(config.batch_instances * g);
        for _ in 0..config.batch_instances {
            let inst = &dataset[batch_rng.random_range(0..dataset.len())];
            let cond = CotConditioning::new(*layout, inst).with_grammar_mask(config.grammar_mask);
            let group = sample_group(snapshot.params(), &cond, inst.instance_id, g, spec, sample_seed)?;
            let mut rewards = Vec::with_capacity(g);
            let mut spans: Vec<Option<SegmentSpans>> = Vec::with_capacity(g);
            for traj in &group {
                let (rv, parsed) = score(&vocab, &traj.tokens, inst, true);
                rewards.push(rv);
                spans.push(parsed.map(|p| p.spans));
            }
            let adv = normalize_group(&rewards, toggles, config.format_gating)?;
            let terms: Vec<Vec<Term>> = match config.mode {
                Mode::Pgrpo => (0..g)
                    .map(|i| pgrpo_terms(group[i].tokens.len(), spans[i].as_ref(), &adv, i, config.format_gating))
                    .collect(),
                Mode::Grpo => {
                    let on = |b: bool, x: f64| if b { x } else { 0.0 };
                    let summed: Vec<f64> = rewards
                        .iter()
                        .map(|r| {
                            on(toggles.format, w.format * r.format)
                                + on(toggles.helpfulness, w.helpfulness * r.helpfulness)
                                + on(toggles.conclusion, w.conclusion * r.conclusion)
                                + on(toggles.answer, w.answer * r.answer.unwrap_or(0.0))
                        })
                        .collect();
                    let a = normalize_masked(&summed, &vec![true; g]);
                    (0..g).map(|i| grpo_terms(group[i].tokens.len(), a[i])).collect()
                }
            };
            for i in 0..g {
                observer.on_completion(&CompletionRecord {
                    update,
                    completion_idx: all_rewards.len() + i,
                    rewards: rewards[i],
                    adv_h: adv.helpfulness[i],
                    adv_c: adv.conclusion[i],
                    adv_f: adv.format[i],
                    adv_a: adv.answer[i],
                });
            }
            all_rewards.extend_from_slice(&rewards);
            let refs = match reference {
                Some(r) if config.kl_beta > 0.0 => Some(
                    group
                        .iter()
                        .map(|t| token_logprobs(r, &cond, &t.tokens))
                        .collect::<Result<Vec<_>>>()?,
                ),
                _ => None,
            };
            prepared.push(PreparedGroup { cond, group, refs, terms });
        }

        let inv_b = 1.0 / prepared.len() as f64;
        let mut grad = vec![0.0; params.dims().param_count()];
        let (mut objective, mut kl) = (0.0, 0.0);
        for p in &prepared {
            let obj = objective_with_terms(&params, &p.cond, &p.group, p.refs.as_deref(), &p.terms, config.clip())?;
            objective += inv_b * obj.value;
            kl += inv_b * obj.kl;
            grad.iter_mut().zip(&obj.grad).for_each(|(a, b)| *a += inv_b * b);
        }
        if !objective.is_finite() || grad.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                update,
                detail: format!("objective {objective}, kl {kl}, mode {}", config.mode),
            });
        }
        params.add_scaled(&grad, config.lr);

        let mut drift = 0.0;
        let mut count = 0usize;
        for p in &prepared {
            for (traj, terms) in p.group.iter().zip(&p.terms) {
                let lp = token_logprobs(&params, &p.cond, &traj.tokens)?;
                for term in terms {
                    drift += libm::fabs(partial_ratio(&lp, &traj.logprobs_old, term.span)? - 1.0);
                    count += 1;
                }
            }
        }
        let m = all_rewards.len() as f64;
        let mean = |f: &dyn Fn(&RewardVector) -> f64| all_rewards.iter().map(f).sum::<f64>() / m;
        let row = TrainRow {
            update,
            mode: config.mode,
            objective,
            kl,
            mean_rf: mean(&|r| r.format),
            mean_rh: mean(&|r| r.helpfulness),
            mean_rc: mean(&|r| r.conclusion),
            mean_ra: mean(&|r| r.answer.unwrap_or(0.0)),
            format_valid_frac: mean(&|r| if r.is_valid() { 1.0 } else { 0.0 }),
            mean_abs_omega_minus_1: if count > 0 { drift / count as f64 } else { 0.0 },
        };
        observer.on_update(&row);
        log.push(row);
    }
    Ok((params, log))
}

/// First update index at which the rolling mean of `mean_rh` over `window`
/// rows reaches `threshold`.
pub fn updates_to_reach(log: &[TrainRow], threshold: f64, window: usize) -> Option<usize> {
    let window = window.max(1);
    if log.len() < window {
        return None;
    }
    (window - 1..log.len()).find(|&end| {
        let s: f64 = log[end + 1 - window..=end].iter().map(|r| r.mean_rh).sum();
        s / window as f64 >= threshold
    })
}
