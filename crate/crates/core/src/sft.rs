//! Supervised warm-up on gold completions.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{Conditioning, CotConditioning, FeatureLayout};
use crate::grammar::render_reference;
use crate::policy::{ForwardTrace, PolicyParams, PolicySnapshot};
use crate::rng::{substream, STREAM_BATCH};
use crate::synth::Instance;
use crate::vocab::TokenId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SftConfig {
    pub data_fraction: f64,
    pub steps: usize,
    pub lr: f64,
    /// Gold completions per gradient step.
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for SftConfig {
    fn default() -> Self {
        SftConfig { data_fraction: 0.15, steps: 200, lr: 2.0, batch_size: 4, seed: 0 }
    }
}

impl SftConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.data_fraction > 0.0 && self.data_fraction <= 1.0) {
            return Err(Error::InvalidConfig(format!("data_fraction must be in (0, 1], got {}", self.data_fraction)));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::InvalidConfig("lr must be finite and non-negative".into()));
        }
        Ok(())
    }

    /// Number of leading instances the warm-up may touch: `ceil(fraction * n)`.
    pub fn slice_len(&self, dataset_len: usize) -> usize {
        let len = libm::ceil(self.data_fraction * dataset_len as f64) as usize;
        len.clamp(1, dataset_len.max(1))
    }
}

/// Mean negative log-likelihood of `gold` and its gradient (of the loss, i.e.
/// the descent direction is its negation).
pub fn sft_loss<C: Conditioning>(params: &PolicyParams, cond: &C, gold: &[TokenId]) -> Result<(f64, Vec<f64>)> {
    if gold.is_empty() {
        return Err(Error::Empty("gold completion"));
    }
    let trace = ForwardTrace::new(params, cond, gold)?;
    let scale = 1.0 / gold.len() as f64;
    let loss = -trace.logprobs.iter().sum::<f64>() * scale;
    let mut grad = vec![0.0; params.dims().param_count()];
    trace.backward(params, &vec![-scale; gold.len()], &mut grad);
    Ok((loss, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftRow {
    pub update: usize,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct WarmupResult {
    pub params: PolicyParams,
    /// Frozen copy of the warmed parameters, used as the KL reference later.
    pub reference: PolicySnapshot,
    pub log: Vec<SftRow>,
    /// Distinct instance ids the warm-up trained on.
    pub used_instances: Vec<u64>,
}

/// Runs `config.steps` gradient steps over the leading `ceil(fraction * N)` instances.
pub fn warmup(
    params: PolicyParams,
    dataset: &[Instance],
    layout: &FeatureLayout,
    config: &SftConfig,
) -> Result<WarmupResult> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    params.check_layout(layout)?;
    let slice = &dataset[..config.slice_len(dataset.len())];
    let mut order: Vec<usize> = (0..slice.len()).collect();
    order.shuffle(&mut substream(config.seed, &[STREAM_BATCH]));
    let golds: Vec<Vec<TokenId>> = slice.iter().map(|inst| render_reference(&layout.vocab(), inst)).collect();

    let mut params = params;
    let mut log = Vec::with_capacity(config.steps);
    let mut used = vec![false; slice.len()];
    let mut cursor = 0;
    for update in 0..config.steps {
        let mut grad = vec![0.0; params.dims().param_count()];
        let mut loss = 0.0;
        for _ in 0..config.batch_size {
            let k = order[cursor % order.len()];
            cursor += 1;
            used[k] = true;
            let cond = CotConditioning::new(*layout, &slice[k]);
            let (l, g) = sft_loss(&params, &cond, &golds[k])?;
            loss += l;
            grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        }
        let inv = 1.0 / config.batch_size as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite { update, detail: format!("sft loss {loss}") });
        }
        params.add_scaled(&grad, -config.lr * inv);
        log.push(SftRow { update, loss: loss * inv });
    }
    let used_instances = slice
        .iter()
        .zip(&used)
        .filter(|(_, &u)| u)
        .map(|(inst, _)| inst.instance_id)
        .collect();
    Ok(WarmupResult { reference: params.snapshot(), params, log, used_instances })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::Dims;
    use crate::synth::{generate_dataset, GenConfig};
    use crate::vocab::TokenVocab;

    fn setup() -> (FeatureLayout, Vec<Instance>) {
        let layout = FeatureLayout::new(TokenVocab::default(), 4);
        let data = generate_dataset(&GenConfig { n_instances: 40, seed: 3, ..GenConfig::default() }).unwrap();
        (layout, data)
    }

    #[test]
    fn zero_params_loss_is_log_vocab() {
        let (layout, data) = setup();
        let dims = Dims::for_layout(&layout, 8).unwrap();
        let cond = CotConditioning::new(layout, &data[0]);
        let gold = render_reference(&layout.vocab(), &data[0]);
        let (loss, _) = sft_loss(&PolicyParams::zeros(dims), &cond, &gold).unwrap();
        assert!((loss - libm::log(layout.vocab().len() as f64)).abs() < 1e-12);
    }

    #[test]
    fn zero_steps_is_identity_and_slice_is_respected() {
        let (layout, data) = setup();
        let dims = Dims::for_layout(&layout, 8).unwrap();
        let p0 = PolicyParams::init(1, dims);
        let out = warmup(p0.clone(), &data, &layout, &SftConfig { steps: 0, ..SftConfig::default() }).unwrap();
        assert_eq!(out.params, p0);
        assert!(out.log.is_empty());

        let config = SftConfig { steps: 30, ..SftConfig::default() };
        let out = warmup(p0.clone(), &data, &layout, &config).unwrap();
        assert_eq!(config.slice_len(40), 6);
        assert!(out.used_instances.len() <= 6);
        assert!(out.used_instances.iter().all(|&id| id < 6));
        assert_eq!(out.reference.params(), &out.params);
        assert!(out.log.iter().all(|r| r.loss >= 0.0));
        assert!(out.log.last().unwrap().loss < out.log[0].loss);
        let again = warmup(p0, &data, &layout, &config).unwrap();
        assert_eq!(again.params, out.params);
    }

    #[test]
    fn invalid_fraction() {
        assert!(SftConfig { data_fraction: 0.0, ..SftConfig::default() }.validate().is_err());
        assert!(SftConfig { data_fraction: 1.5, ..SftConfig::default() }.validate().is_err());
        assert!(SftConfig { data_fraction: 1.0, ..SftConfig::default() }.validate().is_ok());
    }
}
