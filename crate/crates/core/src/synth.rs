//! Synthetic retrieval-augmented QA instances.
//!
//! Each instance carries `n` retrieved documents. A document is either
//! helpful or not; the policy never sees that bit directly, only `m` noisy
//! cue bits (each an independent copy of the label flipped with probability
//! `p`). The gold answer is the digit sum of the helpful documents' evidence
//! modulo 10, so answering correctly requires combining every helpful
//! document and ignoring every unhelpful one.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{substream, STREAM_GENERATE};
use crate::vocab::Answer;

/// Doc ids are `instance_id * DOC_ID_STRIDE + position`.
pub const DOC_ID_STRIDE: u64 = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Doc {
    pub doc_id: u64,
    pub helpful_gt: bool,
    pub evidence_digit: u8,
    pub cue_bits: Vec<bool>,
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub instance_id: u64,
    pub n: usize,
    pub gold_answer: Answer,
    pub answerable: bool,
    pub query_embedding: Vec<f64>,
    pub docs: Vec<Doc>,
}

impl Instance {
    /// Builds an instance, deriving `n`, the gold answer and answerability from `docs`.
    pub fn from_docs(instance_id: u64, docs: Vec<Doc>, query_embedding: Vec<f64>) -> Instance {
        let gold = gold_answer(&docs);
        Instance {
            instance_id,
            n: docs.len(),
            gold_answer: gold,
            answerable: gold != Answer::NoAnswer,
            query_embedding,
            docs,
        }
    }

    pub fn helpful_count(&self) -> usize {
        self.docs.iter().filter(|d| d.helpful_gt).count()
    }

    pub fn helpful_bits(&self) -> Vec<bool> {
        self.docs.iter().map(|d| d.helpful_gt).collect()
    }

    /// Checks the structural invariants a deserialized instance must satisfy.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: alloc::string::String| {
            Err(Error::Contract(format!("instance {}: {msg}", self.instance_id)))
        };
        if self.n != self.docs.len() {
            return fail(format!("n={} but {} docs", self.n, self.docs.len()));
        }
        if self.n == 0 {
            return fail("no documents".into());
        }
        if self.gold_answer != gold_answer(&self.docs) {
            return fail(format!("gold answer {} inconsistent with documents", self.gold_answer));
        }
        if self.answerable != (self.gold_answer != Answer::NoAnswer) {
            return fail("answerable flag inconsistent with gold answer".into());
        }
        if self.docs.iter().any(|d| d.evidence_digit > 9) {
            return fail("evidence digit out of range".into());
        }
        Ok(())
    }
}

/// `(sum of helpful evidence) mod 10`, or `NOANS` when no document is helpful.
pub fn gold_answer(docs: &[Doc]) -> Answer {
    let mut any = false;
    let mut sum = 0u32;
    for d in docs.iter().filter(|d| d.helpful_gt) {
        any = true;
        sum += d.evidence_digit as u32;
    }
    if any {
        Answer::from_digit_sum(sum)
    } else {
        Answer::NoAnswer
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub n_instances: usize,
    pub n_mean: f64,
    pub n_sd: f64,
    pub n_min: usize,
    pub n_max: usize,
    pub helpful_mean: f64,
    pub helpful_sd: f64,
    pub cue_flip_prob: f64,
    pub cue_bits: usize,
    pub embedding_dim: usize,
    pub embedding_mix: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n_instances: 10_000,
            n_mean: 5.05,
            n_sd: 1.06,
            n_min: 2,
            n_max: 8,
            helpful_mean: 1.85,
            helpful_sd: 1.36,
            cue_flip_prob: 0.1,
            cue_bits: 4,
            embedding_dim: 16,
            embedding_mix: 0.8,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.n_instances == 0 {
            return Err(Error::Empty("n_instances must be positive"));
        }
        if !(0.0..=1.0).contains(&self.cue_flip_prob) || !(0.0..=1.0).contains(&self.embedding_mix) {
            return bad("probabilities and mixing weights must lie in [0, 1]");
        }
        if self.n_min == 0 || self.n_min > self.n_max {
            return bad("document-count clamp must satisfy 1 <= n_min <= n_max");
        }
        if self.n_max as u64 >= DOC_ID_STRIDE {
            return bad("n_max too large for doc id layout");
        }
        if !(self.n_sd >= 0.0 && self.helpful_sd >= 0.0) {
            return bad("standard deviations must be non-negative");
        }
        if self.cue_bits == 0 || self.embedding_dim == 0 {
            return bad("cue_bits and embedding_dim must be positive");
        }
        Ok(())
    }
}

fn clamped_round(x: f64, lo: usize, hi: usize) -> usize {
    let r = libm::round(x);
    if r <= lo as f64 {
        lo
    } else if r >= hi as f64 {
        hi
    } else {
        r as usize
    }
}

fn unit_gaussian(rng: &mut impl rand::Rng, d: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
    normalize(&mut v);
    v
}

fn normalize(v: &mut [f64]) {
    let norm = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

/// Generates instance `index` of the dataset described by `config`.
pub fn generate_instance(config: &GenConfig, index: u64) -> Instance {
    let mut rng = substream(config.seed, &[STREAM_GENERATE, index]);
    let n_dist = Normal::new(config.n_mean, config.n_sd).expect("validated sd");
    let h_dist = Normal::new(config.helpful_mean, config.helpful_sd).expect("validated sd");
    let n = clamped_round(n_dist.sample(&mut rng), config.n_min, config.n_max);
    let helpful = clamped_round(h_dist.sample(&mut rng), 0, n);

    let mut labels: Vec<bool> = (0..n).map(|j| j < helpful).collect();
    labels.shuffle(&mut rng);

    let d = config.embedding_dim;
    let alpha = config.embedding_mix;
    let query = unit_gaussian(&mut rng, d);
    let docs = labels
        .into_iter()
        .enumerate()
        .map(|(j, helpful_gt)| {
            let evidence_digit = rng.random_range(0..10u8);
            let cue_bits = (0..config.cue_bits)
                .map(|_| helpful_gt ^ rng.random_bool(config.cue_flip_prob))
                .collect();
            let noise = unit_gaussian(&mut rng, d);
            let mut embedding: Vec<f64> =
                query.iter().zip(&noise).map(|(q, e)| alpha * q + (1.0 - alpha) * e).collect();
            normalize(&mut embedding);
            Doc {
                doc_id: index * DOC_ID_STRIDE + j as u64,
                helpful_gt,
                evidence_digit,
                cue_bits,
                embedding,
            }
        })
        .collect();
    Instance::from_docs(index, docs, query)
}

pub fn generate_dataset(config: &GenConfig) -> Result<Vec<Instance>> {
    config.validate()?;
    Ok((0..config.n_instances as u64).map(|i| generate_instance(config, i)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub instances: usize,
    pub n_mean: f64,
    pub n_sd: f64,
    pub helpful_mean: f64,
    pub helpful_sd: f64,
    pub answerable_fraction: f64,
}

impl DatasetStats {
    /// `(metric, value)` rows in a fixed order.
    pub fn rows(&self) -> [(&'static str, f64); 6] {
        [
            ("instances", self.instances as f64),
            ("n_mean", self.n_mean),
            ("n_sd", self.n_sd),
            ("helpful_mean", self.helpful_mean),
            ("helpful_sd", self.helpful_sd),
            ("answerable_fraction", self.answerable_fraction),
        ]
    }
}

/// Population mean and standard deviation.
pub fn mean_sd(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let (count, sum) = values.clone().fold((0usize, 0.0), |(c, s), x| (c + 1, s + x));
    if count == 0 {
        return (0.0, 0.0);
    }
    let mean = sum / count as f64;
    let var = values.map(|x| (x - mean) * (x - mean)).sum::<f64>() / count as f64;
    (mean, libm::sqrt(var))
}

pub fn dataset_stats(dataset: &[Instance]) -> Result<DatasetStats> {
    if dataset.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let (n_mean, n_sd) = mean_sd(dataset.iter().map(|i| i.n as f64));
    let (helpful_mean, helpful_sd) = mean_sd(dataset.iter().map(|i| i.helpful_count() as f64));
    let answerable = dataset.iter().filter(|i| i.answerable).count();
    Ok(DatasetStats {
        instances: dataset.len(),
        n_mean,
        n_sd,
        helpful_mean,
        helpful_sd,
        answerable_fraction: answerable as f64 / dataset.len() as f64,
    })
}
