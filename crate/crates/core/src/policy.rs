//! Autoregressive categorical policy: a two-layer tanh scorer mapping context
//! features to next-token logits, with exact log-probabilities and analytic
//! parameter gradients.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{Conditioning, FeatureLayout, Features};
use crate::rng::{substream, STREAM_INIT, STREAM_SAMPLE};
use crate::vocab::TokenId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub vocab_size: usize,
}

pub const DEFAULT_HIDDEN: usize = 64;

impl Dims {
    pub fn new(feature_dim: usize, hidden_dim: usize, vocab_size: usize) -> Result<Dims> {
        if feature_dim == 0 || hidden_dim == 0 || vocab_size == 0 {
            return Err(Error::InvalidConfig(format!(
                "policy dimensions must be positive, got ({feature_dim}, {hidden_dim}, {vocab_size})"
            )));
        }
        Ok(Dims { feature_dim, hidden_dim, vocab_size })
    }

    /// Dimensions for the retrieval feature layout.
    pub fn for_layout(layout: &FeatureLayout, hidden_dim: usize) -> Result<Dims> {
        Dims::new(layout.dim(), hidden_dim, layout.vocab().len())
    }

    pub fn param_count(&self) -> usize {
        let (f, h, v) = (self.feature_dim, self.hidden_dim, self.vocab_size);
        f * h + h + v * h + v
    }

    fn w1(&self) -> usize {
        0
    }
    fn b1(&self) -> usize {
        self.feature_dim * self.hidden_dim
    }
    fn w2(&self) -> usize {
        self.b1() + self.hidden_dim
    }
    fn b2(&self) -> usize {
        self.w2() + self.vocab_size * self.hidden_dim
    }
}

impl core::fmt::Display for Dims {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "({}, {}, {})", self.feature_dim, self.hidden_dim, self.vocab_size)
    }
}

/// Flat parameter vector: `W1` stored feature-major (`[feature][hidden]`),
/// then `b1`, `W2` (`[vocab][hidden]`), `b2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    dims: Dims,
    theta: Vec<f64>,
}

impl PolicyParams {
    pub fn zeros(dims: Dims) -> PolicyParams {
        PolicyParams { dims, theta: vec![0.0; dims.param_count()] }
    }

    pub fn from_vec(dims: Dims, theta: Vec<f64>) -> Result<PolicyParams> {
        if theta.len() != dims.param_count() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} parameters for {dims}", dims.param_count()),
                found: format!("{}", theta.len()),
            });
        }
        if theta.iter().any(|x| !x.is_finite()) {
            return Err(Error::Contract("non-finite policy parameter".into()));
        }
        Ok(PolicyParams { dims, theta })
    }

    /// Weights uniform in `±1/sqrt(fan_in)`, biases zero; deterministic in `seed`.
    pub fn init(seed: u64, dims: Dims) -> PolicyParams {
        let mut rng = substream(seed, &[STREAM_INIT]);
        let mut p = PolicyParams::zeros(dims);
        let a1 = 1.0 / libm::sqrt(dims.feature_dim as f64);
        let a2 = 1.0 / libm::sqrt(dims.hidden_dim as f64);
        for w in &mut p.theta[dims.w1()..dims.b1()] {
            *w = rng.random_range(-a1..a1);
        }
        for w in &mut p.theta[dims.w2()..dims.b2()] {
            *w = rng.random_range(-a2..a2);
        }
        p
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.theta
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.theta
    }

    /// Errors unless the parameters fit `layout`.
    pub fn check_layout(&self, layout: &FeatureLayout) -> Result<()> {
        let (f, v) = (layout.dim(), layout.vocab().len());
        if self.dims.feature_dim != f || self.dims.vocab_size != v {
            return Err(Error::DimensionMismatch {
                expected: format!("feature_dim={f}, vocab_size={v}"),
                found: format!("{}", self.dims),
            });
        }
        Ok(())
    }

    /// `self += step * direction`.
    pub fn add_scaled(&mut self, direction: &[f64], step: f64) {
        debug_assert_eq!(direction.len(), self.theta.len());
        for (t, d) in self.theta.iter_mut().zip(direction) {
            *t += step * d;
        }
    }

    pub fn snapshot(&self) -> PolicySnapshot {
        PolicySnapshot { params: self.clone() }
    }
}

/// Frozen copy of the parameters that sampled a group.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySnapshot {
    params: PolicyParams,
}

impl PolicySnapshot {
    pub fn params(&self) -> &PolicyParams {
        &self.params
    }
}

/// One sampled completion and its log-probabilities under the sampler.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub instance_id: u64,
    pub tokens: Vec<TokenId>,
    pub logprobs_old: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecodeSpec {
    pub max_len: usize,
    /// Decoding ends after this token is emitted.
    pub stop: Option<TokenId>,
}

/// Per-step activations, reused across positions.
#[derive(Debug, Clone)]
struct Step {
    features: Features,
    hidden: Vec<f64>,
    probs: Vec<f64>,
    allowed: Vec<bool>,
    masked: bool,
    log_norm: f64,
}

impl Step {
    fn new(dims: Dims) -> Step {
        Step {
            features: Features::default(),
            hidden: vec![0.0; dims.hidden_dim],
            probs: vec![0.0; dims.vocab_size],
            allowed: vec![true; dims.vocab_size],
            masked: false,
            log_norm: 0.0,
        }
    }

    /// `probs` receives the logits first, then the normalized distribution.
    fn forward<C: Conditioning>(&mut self, params: &PolicyParams, cond: &C, state: &C::State) {
        let d = params.dims;
        let th = &params.theta;
        cond.features(state, &mut self.features);
        self.hidden.copy_from_slice(&th[d.b1()..d.b1() + d.hidden_dim]);
        for &(i, x) in &self.features.entries {
            let col = &th[d.w1() + i * d.hidden_dim..d.w1() + (i + 1) * d.hidden_dim];
            for (h, w) in self.hidden.iter_mut().zip(col) {
                *h += x * w;
            }
        }
        for h in &mut self.hidden {
            *h = libm::tanh(*h);
        }
        self.masked = cond.mask(state, &mut self.allowed);
        if !self.masked {
            self.allowed.iter_mut().for_each(|a| *a = true);
        }
        let w2 = &th[d.w2()..d.b2()];
        let b2 = &th[d.b2()..];
        let mut max = f64::NEG_INFINITY;
        for v in 0..d.vocab_size {
            if !self.allowed[v] {
                self.probs[v] = f64::NEG_INFINITY;
                continue;
            }
            let row = &w2[v * d.hidden_dim..(v + 1) * d.hidden_dim];
            let logit = b2[v] + row.iter().zip(&self.hidden).map(|(w, h)| w * h).sum::<f64>();
            self.probs[v] = logit;
            max = max.max(logit);
        }
        let mut total = 0.0;
        for p in &mut self.probs {
            *p = if *p == f64::NEG_INFINITY { 0.0 } else { libm::exp(*p - max) };
            total += *p;
        }
        self.log_norm = max + libm::log(total);
        // logits are recoverable as log(p) + log_norm; keep normalized probabilities.
        for p in &mut self.probs {
            *p /= total;
        }
    }

    fn logprob(&self, token: usize) -> f64 {
        if self.probs[token] > 0.0 {
            libm::log(self.probs[token])
        } else {
            f64::NEG_INFINITY
        }
    }
}

/// Cached forward pass over a fixed token sequence.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    dims: Dims,
    tokens: Vec<TokenId>,
    features: Vec<Features>,
    hidden: Vec<Vec<f64>>,
    probs: Vec<Vec<f64>>,
    pub logprobs: Vec<f64>,
}

impl ForwardTrace {
    pub fn new<C: Conditioning>(params: &PolicyParams, cond: &C, tokens: &[TokenId]) -> Result<ForwardTrace> {
        let dims = params.dims;
        check_compat(params, cond)?;
        if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= dims.vocab_size) {
            return Err(Error::UnknownToken(bad));
        }
        let mut state = cond.initial_state();
        let mut step = Step::new(dims);
        let mut trace = ForwardTrace {
            dims,
            tokens: tokens.to_vec(),
            features: Vec::with_capacity(tokens.len()),
            hidden: Vec::with_capacity(tokens.len()),
            probs: Vec::with_capacity(tokens.len()),
            logprobs: Vec::with_capacity(tokens.len()),
        };
        for &t in tokens {
            step.forward(params, cond, &state);
            trace.logprobs.push(step.logprob(t as usize));
            trace.features.push(step.features.clone());
            trace.hidden.push(step.hidden.clone());
            trace.probs.push(step.probs.clone());
            cond.observe(&mut state, t);
        }
        Ok(trace)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Adds `sum_t coeffs[t] * grad log pi(token_t | prefix_t)` to `grad`.
    pub fn backward(&self, params: &PolicyParams, coeffs: &[f64], grad: &mut [f64]) {
        let d = self.dims;
        debug_assert_eq!(coeffs.len(), self.len());
        debug_assert_eq!(grad.len(), d.param_count());
        let th = &params.theta;
        let mut g_hidden = vec![0.0; d.hidden_dim];
        for (t, &c) in coeffs.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            let hidden = &self.hidden[t];
            let probs = &self.probs[t];
            let target = self.tokens[t] as usize;
            g_hidden.iter_mut().for_each(|g| *g = 0.0);
            for v in 0..d.vocab_size {
                // d log p_target / d logit_v = [v == target] - p_v
                let g = c * (if v == target { 1.0 } else { 0.0 } - probs[v]);
                if g == 0.0 {
                    continue;
                }
                grad[d.b2() + v] += g;
                let row = d.w2() + v * d.hidden_dim;
                for k in 0..d.hidden_dim {
                    grad[row + k] += g * hidden[k];
                    g_hidden[k] += g * th[row + k];
                }
            }
            for k in 0..d.hidden_dim {
                g_hidden[k] *= 1.0 - hidden[k] * hidden[k];
                grad[d.b1() + k] += g_hidden[k];
            }
            for &(i, x) in &self.features[t].entries {
                let col = d.w1() + i * d.hidden_dim;
                for k in 0..d.hidden_dim {
                    grad[col + k] += x * g_hidden[k];
                }
            }
        }
    }
}

fn check_compat<C: Conditioning>(params: &PolicyParams, cond: &C) -> Result<()> {
    if cond.feature_dim() != params.dims.feature_dim {
        return Err(Error::DimensionMismatch {
            expected: format!("feature_dim={}", cond.feature_dim()),
            found: format!("{}", params.dims),
        });
    }
    Ok(())
}

/// Log-probability of each token given its prefix.
pub fn token_logprobs<C: Conditioning>(params: &PolicyParams, cond: &C, tokens: &[TokenId]) -> Result<Vec<f64>> {
    Ok(ForwardTrace::new(params, cond, tokens)?.logprobs)
}

/// Next-token distribution after `prefix`.
pub fn next_token_distribution<C: Conditioning>(
    params: &PolicyParams,
    cond: &C,
    prefix: &[TokenId],
) -> Result<Vec<f64>> {
    check_compat(params, cond)?;
    let mut state = cond.initial_state();
    for &t in prefix {
        cond.observe(&mut state, t);
    }
    let mut step = Step::new(params.dims);
    step.forward(params, cond, &state);
    Ok(step.probs)
}

/// Ancestral sampling at temperature 1.
pub fn sample<C: Conditioning>(
    params: &PolicyParams,
    cond: &C,
    spec: DecodeSpec,
    rng: &mut crate::rng::Rng,
) -> Result<(Vec<TokenId>, Vec<f64>)> {
    decode(params, cond, spec, |probs| {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut last = 0;
        for (v, &p) in probs.iter().enumerate() {
            if p > 0.0 {
                acc += p;
                last = v;
                if u < acc {
                    return v;
                }
            }
        }
        last
    })
}

/// Argmax decoding; ties go to the lowest token id.
pub fn greedy<C: Conditioning>(params: &PolicyParams, cond: &C, spec: DecodeSpec) -> Result<Vec<TokenId>> {
    let (tokens, _) = decode(params, cond, spec, |probs| {
        let mut best = 0;
        for (v, &p) in probs.iter().enumerate() {
            if p > probs[best] {
                best = v;
            }
        }
        best
    })?;
    Ok(tokens)
}

fn decode<C: Conditioning>(
    params: &PolicyParams,
    cond: &C,
    spec: DecodeSpec,
    mut choose: impl FnMut(&[f64]) -> usize,
) -> Result<(Vec<TokenId>, Vec<f64>)> {
    check_compat(params, cond)?;
    let mut state = cond.initial_state();
    let mut step = Step::new(params.dims);
    let mut tokens = Vec::new();
    let mut logprobs = Vec::new();
    while tokens.len() < spec.max_len {
        step.forward(params, cond, &state);
        let v = choose(&step.probs);
        tokens.push(v as TokenId);
        logprobs.push(step.logprob(v));
        cond.observe(&mut state, v as TokenId);
        if Some(v as TokenId) == spec.stop {
            break;
        }
    }
    Ok((tokens, logprobs))
}

/// Draws `g` completions; trajectory `i` uses the RNG substream
/// `(seed, instance_id, i)`, so any evaluation order gives the same group.
pub fn sample_group<C: Conditioning>(
    params: &PolicyParams,
    cond: &C,
    instance_id: u64,
    g: usize,
    spec: DecodeSpec,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    if g < 2 {
        return Err(Error::Contract(format!("group size must be >= 2, got {g}")));
    }
    (0..g)
        .map(|i| {
            let mut rng = substream(seed, &[STREAM_SAMPLE, instance_id, i as u64]);
            let (tokens, logprobs_old) = sample(params, cond, spec, &mut rng)?;
            Ok(Trajectory { instance_id, tokens, logprobs_old })
        })
        .collect()
}

/// `weight * grad_theta [ (1/|span|) sum_{t in span} pi_theta(o_t) / pi_old(o_t) ]`,
/// with `pi_old` held constant.
pub fn logprob_gradient<C: Conditioning>(
    params: &PolicyParams,
    cond: &C,
    tokens: &[TokenId],
    logprobs_old: &[f64],
    span: crate::grammar::Span,
    weight: f64,
) -> Result<Vec<f64>> {
    if span.end >= tokens.len() || logprobs_old.len() != tokens.len() {
        return Err(Error::Contract(format!(
            "span {span} outside a completion of {} tokens ({} old logprobs)",
            tokens.len(),
            logprobs_old.len()
        )));
    }
    let trace = ForwardTrace::new(params, cond, tokens)?;
    let mut coeffs = vec![0.0; tokens.len()];
    let scale = weight / span.len() as f64;
    for t in span.range() {
        coeffs[t] = scale * libm::exp(trace.logprobs[t] - logprobs_old[t]);
    }
    let mut grad = vec![0.0; params.dims.param_count()];
    trace.backward(params, &coeffs, &mut grad);
    Ok(grad)
}
