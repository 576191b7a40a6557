//! Robustness evaluation: polluted and top-K generation protocols, judging,
//! exact inner-product retrieval, and accuracy summaries.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{CotConditioning, FeatureLayout};
use crate::grammar::{parse, render_reference};
use crate::policy::{greedy, DecodeSpec, PolicyParams};
use crate::rng::{substream, STREAM_POLLUTE};
use crate::synth::{Doc, Instance};
use crate::vocab::{Answer, Marker, TokenId, TokenVocab};

/// Judge grade on the 0..=5 scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    score: u8,
}

pub const MAX_SCORE: u8 = 5;

impl JudgeVerdict {
    pub fn new(score: i64) -> Result<JudgeVerdict> {
        if !(0..=MAX_SCORE as i64).contains(&score) {
            return Err(Error::Judge(format!("score {score} outside 0..=5")));
        }
        Ok(JudgeVerdict { score: score as u8 })
    }

    pub fn zero() -> JudgeVerdict {
        JudgeVerdict { score: 0 }
    }

    pub fn score(&self) -> u8 {
        self.score
    }

    /// Score mapped onto 0..=100.
    pub fn normalized(&self) -> f64 {
        20.0 * self.score as f64
    }
}

/// A grading request. Answers are rendered as token names (`a7`, `NOANS`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeRequest {
    pub question: String,
    pub gold: String,
    pub answer: String,
}

pub trait Judge {
    fn judge(&mut self, request: &JudgeRequest) -> Result<JudgeVerdict>;
}

/// Full marks for an exact match, zero otherwise.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExactJudge;

pub fn judge_exact(pred: Answer, gold: Answer) -> JudgeVerdict {
    if pred == gold {
        JudgeVerdict { score: MAX_SCORE }
    } else {
        JudgeVerdict::zero()
    }
}

impl Judge for ExactJudge {
    fn judge(&mut self, request: &JudgeRequest) -> Result<JudgeVerdict> {
        let gold: Answer = request.gold.parse()?;
        Ok(match request.answer.parse::<Answer>() {
            Ok(pred) => judge_exact(pred, gold),
            Err(_) => JudgeVerdict::zero(),
        })
    }
}

/// A document in the global retrieval database.
#[derive(Debug, Clone, PartialEq)]
pub struct DbEntry {
    /// Instance the document was retrieved for originally.
    pub owner: u64,
    pub doc: Doc,
}

pub fn build_database(dataset: &[Instance]) -> Vec<DbEntry> {
    dataset
        .iter()
        .flat_map(|inst| inst.docs.iter().map(|d| DbEntry { owner: inst.instance_id, doc: d.clone() }))
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Exact top-`k` by inner product; ties go to the lower doc id. Returns
/// indices into `database`, best first.
pub fn retrieve_topk(query: &[f64], database: &[DbEntry], k: usize) -> Result<Vec<usize>> {
    if k > database.len() {
        return Err(Error::TooFew { requested: k, available: database.len() });
    }
    // (score, doc_id, index), kept sorted best-first.
    let mut best: Vec<(f64, u64, usize)> = Vec::with_capacity(k + 1);
    let better = |a: &(f64, u64, usize), b: &(f64, u64, usize)| match b.0.partial_cmp(&a.0) {
        Some(Ordering::Equal) | None => a.1.cmp(&b.1),
        Some(o) => o,
    };
    for (idx, entry) in database.iter().enumerate() {
        let cand = (dot(query, &entry.doc.embedding), entry.doc.doc_id, idx);
        if best.len() == k {
            match best.last() {
                Some(worst) if better(&cand, worst) == Ordering::Less => {}
                _ => continue,
            }
        }
        let pos = best.partition_point(|b| better(b, &cand) != Ordering::Greater);
        best.insert(pos, cand);
        best.truncate(k);
    }
    Ok(best.into_iter().map(|(_, _, i)| i).collect())
}

/// Something that answers a (possibly modified) instance with a completion.
pub trait Responder {
    fn respond(&self, instance: &Instance) -> Result<Vec<TokenId>>;
}

/// Greedy decoding from a policy.
#[derive(Debug, Clone)]
pub struct GreedyResponder<'a> {
    pub params: &'a PolicyParams,
    pub layout: FeatureLayout,
    pub max_len: usize,
}

impl Responder for GreedyResponder<'_> {
    fn respond(&self, instance: &Instance) -> Result<Vec<TokenId>> {
        let cond = CotConditioning::new(self.layout, instance);
        let stop = Some(self.layout.vocab().marker(Marker::AnswerEnd));
        greedy(self.params, &cond, DecodeSpec { max_len: self.max_len, stop })
    }
}

/// Emits the gold completion for whatever documents it is shown.
#[derive(Debug, Clone, Copy)]
pub struct ReferenceResponder {
    pub vocab: TokenVocab,
}

impl Responder for ReferenceResponder {
    fn respond(&self, instance: &Instance) -> Result<Vec<TokenId>> {
        Ok(render_reference(&self.vocab, instance))
    }
}

impl<F: Fn(&Instance) -> Vec<TokenId>> Responder for F {
    fn respond(&self, instance: &Instance) -> Result<Vec<TokenId>> {
        Ok(self(instance))
    }
}

/// Scores one presented instance; unparseable completions get zero without
/// consulting the judge.
fn score_response(
    vocab: &TokenVocab,
    responder: &dyn Responder,
    judge: &mut dyn Judge,
    shown: &Instance,
    gold: Answer,
) -> Result<f64> {
    let tokens = responder.respond(shown)?;
    let Ok(parsed) = parse(vocab, &tokens, shown.n) else {
        return Ok(0.0);
    };
    let request = JudgeRequest {
        question: format!("instance {}", shown.instance_id),
        gold: format!("{gold}"),
        answer: format!("{}", parsed.answer),
    };
    Ok(judge.judge(&request)?.normalized())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricMode {
    /// `MA_k = mean(ACC_{+1..k})`, `ADR_k = mean relative drop`.
    Equation,
    /// `MA_k = mean(ACC_{+0..k})`, `ADR_k = sum of percentage-point drops`.
    Table,
}

impl core::str::FromStr for MetricMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<MetricMode> {
        match s {
            "equation" => Ok(MetricMode::Equation),
            "table" => Ok(MetricMode::Table),
            other => Err(Error::InvalidConfig(format!("unknown metric mode `{other}`"))),
        }
    }
}

impl core::fmt::Display for MetricMode {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(match self {
            MetricMode::Equation => "equation",
            MetricMode::Table => "table",
        })
    }
}

/// Accuracies (0..=100) indexed by the number of injected harmful documents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    pub acc: Vec<f64>,
    /// Instances evaluated at every level.
    pub instances: usize,
}

impl MetricSeries {
    pub fn k(&self) -> usize {
        self.acc.len().saturating_sub(1)
    }
}

fn check_series(series: &[f64], k: usize) -> Result<()> {
    if series.len() < k + 1 {
        return Err(Error::Contract(format!("series of length {} is too short for k={k}", series.len())));
    }
    Ok(())
}

pub fn mean_accuracy(series: &[f64], k: usize, mode: MetricMode) -> Result<f64> {
    check_series(series, k)?;
    match mode {
        MetricMode::Equation => {
            if k == 0 {
                return Err(Error::Contract("equation-mode MA needs k >= 1".into()));
            }
            Ok(series[1..=k].iter().sum::<f64>() / k as f64)
        }
        MetricMode::Table => Ok(series[..=k].iter().sum::<f64>() / (k + 1) as f64),
    }
}

pub fn accuracy_degradation(series: &[f64], k: usize, mode: MetricMode) -> Result<f64> {
    check_series(series, k)?;
    let base = series[0];
    match mode {
        MetricMode::Equation => {
            if k == 0 {
                return Err(Error::Contract("equation-mode ADR needs k >= 1".into()));
            }
            if base == 0.0 {
                return Err(Error::Contract("equation-mode ADR undefined for ACC_+0 = 0".into()));
            }
            Ok(series[1..=k].iter().map(|a| (base - a) / base).sum::<f64>() / k as f64)
        }
        MetricMode::Table => Ok(series[1..=k].iter().map(|a| base - a).sum()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PollutionConfig {
    pub k_max: usize,
    /// Upper bound on documents shown at once; instances whose helpful count
    /// plus `k_max` exceeds it are skipped.
    pub max_docs: usize,
    pub seed: u64,
}

impl Default for PollutionConfig {
    fn default() -> Self {
        PollutionConfig { k_max: 5, max_docs: 8, seed: 0 }
    }
}

/// Harmful documents for `inst`, in injection order: its own unhelpful
/// documents, then deterministic draws of unhelpful documents from other
/// instances.
fn harmful_pool(inst: &Instance, dataset: &[Instance], k_max: usize, rng: &mut crate::rng::Rng) -> Result<Vec<Doc>> {
    let mut pool: Vec<Doc> = inst.docs.iter().filter(|d| !d.helpful_gt).take(k_max).cloned().collect();
    let foreign: Vec<&Doc> = dataset
        .iter()
        .filter(|o| o.instance_id != inst.instance_id)
        .flat_map(|o| o.docs.iter().filter(|d| !d.helpful_gt))
        .collect();
    while pool.len() < k_max {
        if foreign.is_empty() {
            return Err(Error::TooFew { requested: k_max, available: pool.len() });
        }
        let pick = foreign[rng.random_range(0..foreign.len())];
        if pool.iter().all(|d| d.doc_id != pick.doc_id) || pool.len() + 1 >= foreign.len() {
            pool.push(pick.clone());
        }
    }
    Ok(pool)
}

/// Instances eligible for polluted evaluation under `config`.
pub fn polluted_subset<'a>(dataset: &'a [Instance], config: &PollutionConfig) -> Vec<&'a Instance> {
    dataset
        .iter()
        .filter(|i| i.answerable && i.helpful_count() + config.k_max <= config.max_docs)
        .collect()
}

/// For k = 0..=k_max, shows each answerable instance its helpful documents
/// plus the first k harmful ones and records the mean judged accuracy.
///
/// Documents keep a per-instance random placement, so adding a harmful
/// document inserts it among the ones already shown.
pub fn polluted_eval(
    responder: &dyn Responder,
    vocab: &TokenVocab,
    dataset: &[Instance],
    config: &PollutionConfig,
    judge: &mut dyn Judge,
) -> Result<MetricSeries> {
    let subset = polluted_subset(dataset, config);
    if subset.is_empty() {
        return Err(Error::Empty("answerable instances eligible for pollution"));
    }
    if config.max_docs > vocab.n_max() as usize {
        return Err(Error::InvalidConfig(format!(
            "max_docs {} exceeds vocabulary n_max {}",
            config.max_docs,
            vocab.n_max()
        )));
    }
    let mut totals = alloc::vec![0.0; config.k_max + 1];
    for inst in &subset {
        let mut rng = substream(config.seed, &[STREAM_POLLUTE, inst.instance_id]);
        let harmful = harmful_pool(inst, dataset, config.k_max, &mut rng)?;
        let helpful: Vec<&Doc> = inst.docs.iter().filter(|d| d.helpful_gt).collect();
        let mut slots: Vec<usize> = (0..helpful.len() + config.k_max).collect();
        slots.shuffle(&mut rng);
        for (k, total) in totals.iter_mut().enumerate() {
            let mut shown: Vec<(usize, Doc)> = helpful
                .iter()
                .enumerate()
                .map(|(i, d)| (slots[i], (*d).clone()))
                .chain(harmful[..k].iter().enumerate().map(|(i, d)| (slots[helpful.len() + i], d.clone())))
                .collect();
            shown.sort_by_key(|(slot, _)| *slot);
            let view = Instance::from_docs(
                inst.instance_id,
                shown.into_iter().map(|(_, d)| d).collect(),
                inst.query_embedding.clone(),
            );
            debug_assert_eq!(view.gold_answer, inst.gold_answer);
            *total += score_response(vocab, responder, judge, &view, inst.gold_answer)?;
        }
    }
    let count = subset.len();
    Ok(MetricSeries { acc: totals.into_iter().map(|t| t / count as f64).collect(), instances: count })
}

/// Retrieves `k` documents from the global database for every answerable
/// instance and returns the mean judged accuracy. A retrieved document counts
/// as helpful only if it was a helpful document of the same instance.
pub fn topk_eval(
    responder: &dyn Responder,
    vocab: &TokenVocab,
    dataset: &[Instance],
    database: &[DbEntry],
    k: usize,
    judge: &mut dyn Judge,
) -> Result<f64> {
    if k == 0 {
        return Err(Error::Contract("K must be >= 1".into()));
    }
    if k > database.len() {
        return Err(Error::TooFew { requested: k, available: database.len() });
    }
    if k > vocab.n_max() as usize {
        return Err(Error::InvalidConfig(format!("K={k} exceeds vocabulary n_max {}", vocab.n_max())));
    }
    let answerable: Vec<&Instance> = dataset.iter().filter(|i| i.answerable).collect();
    if answerable.is_empty() {
        return Err(Error::Empty("answerable instances"));
    }
    let mut total = 0.0;
    for inst in &answerable {
        let docs = retrieve_topk(&inst.query_embedding, database, k)?
            .into_iter()
            .map(|idx| {
                let e = &database[idx];
                let mut d = e.doc.clone();
                d.helpful_gt = e.owner == inst.instance_id && e.doc.helpful_gt;
                d
            })
            .collect();
        let view = Instance::from_docs(inst.instance_id, docs, inst.query_embedding.clone());
        total += score_response(vocab, responder, judge, &view, inst.gold_answer)?;
    }
    Ok(total / answerable.len() as f64)
}
