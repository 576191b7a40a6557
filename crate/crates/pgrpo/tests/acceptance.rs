//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use pgrpo_core::eval::{
    accuracy_degradation, build_database, mean_accuracy, polluted_eval, retrieve_topk, topk_eval, DbEntry,
    ExactJudge, GreedyResponder, MetricMode, PollutionConfig,
};
use pgrpo_core::grammar::{parse, render, segment_spans};
use pgrpo_core::objective::{grpo_objective, partial_ratio, pgrpo_objective, ClipConfig};
use pgrpo_core::policy::{sample_group, token_logprobs, DecodeSpec, DEFAULT_HIDDEN};
use pgrpo_core::rewards::{
    conclusion_reward, format_reward, helpfulness_reward, normalize_group, score, AdvantageMatrix, RewardToggles,
};
use pgrpo_core::rng::{substream, Rng as ChaCha};
use pgrpo_core::sft::{sft_loss, warmup, SftConfig};
use pgrpo_core::synth::{dataset_stats, generate_dataset, GenConfig};
use pgrpo_core::train::{train_loop, updates_to_reach, Mode, TrainConfig, TrainRow};
use pgrpo_core::vocab::{Marker, Token};
use pgrpo_core::{
    Answer, Dims, Doc, FeatureLayout, Instance, PolicyParams, SegmentSpans, Span, TableConditioning, TokenId,
    TokenVocab, Trajectory,
};
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

// 1. Published metric rows.

const TABLE: [(&str, [f64; 6], f64, f64); 15] = [
    ("Qwen2-VL Zero-shot", [46.81, 44.15, 41.03, 39.53, 37.93, 37.34], 41.13, 34.05),
    ("Qwen2-VL SURf", [49.46, 47.39, 44.48, 44.66, 43.59, 42.12], 45.28, 25.08),
    ("Qwen2-VL SURf+CoT", [50.35, 46.92, 47.44, 48.04, 47.34, 45.41], 47.58, 16.60),
    ("Qwen2-VL GRPO", [58.46, 54.94, 54.26, 53.72, 53.03, 52.60], 54.50, 23.75),
    ("Qwen2-VL Partial GRPO", [58.93, 56.24, 55.64, 55.72, 55.50, 55.58], 56.27, 15.98),
    ("Qwen2.5-VL Zero-shot", [62.42, 55.50, 55.52, 54.66, 52.19, 51.79], 55.35, 42.45),
    ("Qwen2.5-VL SURf", [61.89, 56.32, 56.22, 57.16, 56.06, 54.69], 57.06, 29.00),
    ("Qwen2.5-VL SURf+CoT", [60.82, 59.44, 60.19, 61.12, 59.49, 58.06], 59.85, 5.83),
    ("Qwen2.5-VL GRPO", [59.86, 59.44, 60.19, 61.11, 59.49, 58.86], 59.83, 0.21),
    ("Qwen2.5-VL Partial GRPO", [66.27, 64.97, 64.02, 64.28, 63.92, 63.73], 64.53, 10.43),
    ("InternVL3 Zero-shot", [62.31, 58.37, 57.27, 57.09, 56.18, 54.99], 57.70, 27.65),
    ("InternVL3 SURf", [49.02, 42.28, 45.64, 41.28, 42.75, 44.48], 44.24, 28.67),
    ("InternVL3 SURf+CoT", [57.49, 55.13, 55.02, 54.85, 54.64, 54.37], 55.25, 13.44),
    ("InternVL3 GRPO", [63.47, 62.02, 60.43, 60.06, 58.67, 59.02], 60.61, 17.13),
    ("InternVL3 Partial GRPO", [64.24, 63.18, 62.60, 61.74, 61.49, 60.43], 62.28, 11.76),
];

fn metric_fixtures() -> Outcome {
    let start = Instant::now();
    let mut worst_ma: f64 = 0.0;
    let mut worst_adr: f64 = 0.0;
    let mut bad = Vec::new();
    for (name, acc, ma, adr) in TABLE {
        let got_ma = mean_accuracy(&acc, 5, MetricMode::Table).unwrap();
        let got_adr = accuracy_degradation(&acc, 5, MetricMode::Table).unwrap();
        worst_ma = worst_ma.max((got_ma - ma).abs());
        worst_adr = worst_adr.max((got_adr - adr).abs());
        if (got_ma - ma).abs() > 0.02 || (got_adr - adr).abs() > 0.06 {
            bad.push(format!("{name}: MA {got_ma:.3} ADR {got_adr:.3}"));
        }
    }
    let elapsed = start.elapsed();
    outcome(
        bad.is_empty() && elapsed < Duration::from_secs(1),
        format!(
            "15 rows, max |dMA| {worst_ma:.4}, max |dADR| {worst_adr:.4}, {:.3}s{}",
            secs(elapsed),
            if bad.is_empty() { String::new() } else { format!("; off: {}", bad.join(", ")) }
        ),
    )
}

// 2. Finite-difference gradients.

const FD_STEP: f64 = 1e-5;

fn perturbed(params: &PolicyParams, scale: f64, rng: &mut ChaCha) -> PolicyParams {
    let mut p = params.clone();
    p.as_mut_slice().iter_mut().for_each(|x| *x += rng.random_range(-scale..scale));
    p
}

fn fd_worst(params: &PolicyParams, analytic: &[f64], f: impl Fn(&PolicyParams) -> f64) -> f64 {
    let mut worst: f64 = 0.0;
    for k in 0..analytic.len() {
        let mut plus = params.clone();
        plus.as_mut_slice()[k] += FD_STEP;
        let mut minus = params.clone();
        minus.as_mut_slice()[k] -= FD_STEP;
        let fd = (f(&plus) - f(&minus)) / (2.0 * FD_STEP);
        let err = (fd - analytic[k]).abs() / fd.abs().max(analytic[k].abs()).max(1e-6);
        worst = worst.max(err);
    }
    worst
}

fn random_spans(len: usize, rng: &mut ChaCha) -> SegmentSpans {
    let a = rng.random_range(0..len - 2);
    let b = rng.random_range(a + 1..len - 1);
    SegmentSpans { h_span: Span::new(0, a), c_span: Span::new(a + 1, b), f_span: Span::new(b + 1, len - 1) }
}

/// True when some ratio sits close enough to a clipping boundary for central
/// differences to straddle the kink.
fn near_kink(ratios: &[Vec<f64>], eps: f64) -> bool {
    ratios.iter().flatten().any(|w| (w - (1.0 - eps)).abs() < 1e-3 || (w - (1.0 + eps)).abs() < 1e-3)
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let mut rng = substream(2024, &[]);
    let (mut worst_sft, mut worst_grpo, mut worst_pgrpo): (f64, f64, f64) = (0.0, 0.0, 0.0);
    let mut configs = 0;
    let mut skipped = 0;
    let (mut clipped, mut terms) = (0, 0);
    while configs < 120 {
        let fdim = rng.random_range(2..=8);
        let vocab = rng.random_range(2..=16);
        let hidden = rng.random_range(2..=6);
        let g = rng.random_range(2..=4);
        let cond = TableConditioning::random(fdim, vocab, 12, &mut rng);
        let dims = Dims::new(fdim, hidden, vocab).unwrap();
        let params = perturbed(&PolicyParams::init(rng.random(), dims), 0.5, &mut rng);
        let old = perturbed(&params, 0.3, &mut rng);
        let reference = perturbed(&params, 0.2, &mut rng);
        let group: Vec<Trajectory> = (0..g)
            .map(|_| {
                let len = rng.random_range(3..=10);
                let tokens: Vec<TokenId> = (0..len).map(|_| rng.random_range(0..vocab as TokenId)).collect();
                let logprobs_old = token_logprobs(&old, &cond, &tokens).unwrap();
                Trajectory { instance_id: 0, tokens, logprobs_old }
            })
            .collect();
        let refs: Vec<Vec<f64>> = group.iter().map(|t| token_logprobs(&reference, &cond, &t.tokens).unwrap()).collect();
        let config = ClipConfig { clip_eps: 0.2, kl_beta: rng.random_range(0.0..0.1) };
        let mut column = || (0..g).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<f64>>();
        let adv = AdvantageMatrix { helpfulness: column(), conclusion: column(), format: column(), answer: column() };
        let flat = column();
        let spans: Vec<Option<SegmentSpans>> = group
            .iter()
            .map(|t| rng.random_bool(0.8).then(|| random_spans(t.tokens.len(), &mut rng)))
            .collect();
        let gate = rng.random_bool(0.5);

        let grpo = |p: &PolicyParams| grpo_objective(p, &cond, &group, Some(&refs), &flat, config).unwrap();
        let pgrpo = |p: &PolicyParams| pgrpo_objective(p, &cond, &group, Some(&refs), &adv, &spans, gate, config).unwrap();
        let (g0, p0) = (grpo(&params), pgrpo(&params));
        if near_kink(&g0.ratios, config.clip_eps) || near_kink(&p0.ratios, config.clip_eps) {
            skipped += 1;
            continue;
        }
        clipped += p0.ratios.iter().flatten().chain(g0.ratios.iter().flatten()).filter(|w| (**w - 1.0).abs() > config.clip_eps).count();
        terms += p0.ratios.iter().flatten().chain(g0.ratios.iter().flatten()).count();
        worst_grpo = worst_grpo.max(fd_worst(&params, &g0.grad, |p| grpo(p).value));
        worst_pgrpo = worst_pgrpo.max(fd_worst(&params, &p0.grad, |p| pgrpo(p).value));
        let gold = &group[0].tokens;
        let (_, sft_grad) = sft_loss(&params, &cond, gold).unwrap();
        worst_sft = worst_sft.max(fd_worst(&params, &sft_grad, |p| sft_loss(p, &cond, gold).unwrap().0));
        configs += 1;
    }
    let elapsed = start.elapsed();
    let worst = worst_sft.max(worst_grpo).max(worst_pgrpo);
    outcome(
        worst < 1e-4 && elapsed < Duration::from_secs(60),
        format!(
            "{configs} configs ({skipped} resampled near a clip boundary, {clipped}/{terms} terms outside the clip range), max rel err sft {worst_sft:.1e} grpo {worst_grpo:.1e} pgrpo {worst_pgrpo:.1e}, {:.1}s",
            secs(elapsed)
        ),
    )
}

// 3 and 4. Objective identities on sampled groups.

struct SampledGroup {
    instance: Instance,
    layout: FeatureLayout,
    params: PolicyParams,
    group: Vec<Trajectory>,
    refs: Vec<Vec<f64>>,
}

fn sampled_groups(count: usize, seed: u64, old_noise: f64) -> Vec<SampledGroup> {
    let layout = FeatureLayout::new(TokenVocab::default(), 4);
    let data = generate_dataset(&GenConfig { n_instances: count, seed, ..GenConfig::default() }).unwrap();
    let mut rng = substream(seed, &[1]);
    data.into_iter()
        .enumerate()
        .map(|(i, instance)| {
            let dims = Dims::for_layout(&layout, 8).unwrap();
            let params = perturbed(&PolicyParams::init(seed + i as u64, dims), 0.3, &mut rng);
            let old = if old_noise > 0.0 { perturbed(&params, old_noise, &mut rng) } else { params.clone() };
            let reference = perturbed(&params, 0.1, &mut rng);
            let cond = pgrpo_core::CotConditioning::new(layout, &instance);
            let spec = DecodeSpec { max_len: 30, stop: Some(layout.vocab().marker(Marker::AnswerEnd)) };
            // half sampled, half well-formed with random judgments, so reward columns vary
            let mut group = sample_group(&old, &cond, instance.instance_id, 8, spec, seed).unwrap();
            for traj in group.iter_mut().skip(4) {
                let judgments: Vec<bool> = (0..instance.n).map(|_| rng.random_bool(0.5)).collect();
                let answer = Answer::Digit(rng.random_range(0..10));
                traj.tokens = render(&layout.vocab(), judgments, answer);
                traj.logprobs_old = token_logprobs(&old, &cond, &traj.tokens).unwrap();
            }
            let refs = group.iter().map(|t| token_logprobs(&reference, &cond, &t.tokens).unwrap()).collect();
            SampledGroup { instance, layout, params, group, refs }
        })
        .collect()
}

fn advantages(s: &SampledGroup, gate: bool) -> (AdvantageMatrix, Vec<Option<SegmentSpans>>) {
    let vocab = s.layout.vocab();
    let rewards: Vec<_> = s.group.iter().map(|t| score(&vocab, &t.tokens, &s.instance, true).0).collect();
    let spans = s.group.iter().map(|t| segment_spans(&vocab, &t.tokens).ok()).collect();
    (normalize_group(&rewards, RewardToggles::default(), gate).unwrap(), spans)
}

fn reduction_property() -> Outcome {
    let mut worst_value: f64 = 0.0;
    let mut worst_grad: f64 = 0.0;
    let groups = sampled_groups(50, 31, 0.2);
    let mut nontrivial = 0;
    let config = ClipConfig { clip_eps: 1e9, kl_beta: 0.01 };
    for s in &groups {
        let cond = pgrpo_core::CotConditioning::new(s.layout, &s.instance);
        let (adv, _) = advantages(s, false);
        let widened: Vec<Option<SegmentSpans>> = s
            .group
            .iter()
            .map(|t| {
                let full = Span::full(t.tokens.len());
                Some(SegmentSpans { h_span: full, c_span: full, f_span: full })
            })
            .collect();
        let summed: Vec<f64> = (0..adv.len()).map(|i| adv.total(i)).collect();
        nontrivial += summed.iter().any(|a| a.abs() > 0.1) as usize;
        let p = pgrpo_objective(&s.params, &cond, &s.group, Some(&s.refs), &adv, &widened, false, config).unwrap();
        let g = grpo_objective(&s.params, &cond, &s.group, Some(&s.refs), &summed, config).unwrap();
        worst_value = worst_value.max((p.value - g.value).abs());
        for (a, b) in p.grad.iter().zip(&g.grad) {
            worst_grad = worst_grad.max((a - b).abs());
        }
    }
    outcome(
        worst_value <= 1e-10 && worst_grad <= 1e-10 && nontrivial == groups.len(),
        format!(
            "{} groups ({nontrivial} with non-zero advantages), max |dvalue| {worst_value:.1e}, max |dgrad| {worst_grad:.1e}",
            groups.len()
        ),
    )
}

fn zero_point() -> Outcome {
    let mut rng = substream(9, &[]);
    let mut ratio_ok = true;
    for _ in 0..1000 {
        let len = rng.random_range(1..40);
        let lp: Vec<f64> = (0..len).map(|_| rng.random_range(-30.0..0.0)).collect();
        let a = rng.random_range(0..len);
        let b = rng.random_range(a..len);
        ratio_ok &= partial_ratio(&lp, &lp, Span::new(a, b)).unwrap() == 1.0;
    }
    let groups = sampled_groups(50, 77, 0.0);
    let config = ClipConfig { clip_eps: 0.2, kl_beta: 0.0 };
    let mut worst: f64 = 0.0;
    for s in &groups {
        let cond = pgrpo_core::CotConditioning::new(s.layout, &s.instance);
        for gate in [true, false] {
            let (adv, spans) = advantages(s, gate);
            let summed: Vec<f64> = (0..adv.len()).map(|i| adv.total(i)).collect();
            let p = pgrpo_objective(&s.params, &cond, &s.group, None, &adv, &spans, gate, config).unwrap();
            let g = grpo_objective(&s.params, &cond, &s.group, None, &summed, config).unwrap();
            worst = worst.max(p.value.abs()).max(g.value.abs());
        }
    }
    outcome(
        ratio_ok && worst <= 1e-12,
        format!("ratio identity on 1000 spans: {ratio_ok}; max |J| at theta_old over {} groups {worst:.1e}", groups.len()),
    )
}

// 5. Parser and reward oracle on fuzzed sequences.

/// Builds a completion with arbitrary judgments and an arbitrary ascending
/// citation set, then applies random edits.
fn fuzzed_sequence(vocab: &TokenVocab, rng: &mut ChaCha) -> (Vec<TokenId>, usize) {
    let n = rng.random_range(1..=vocab.n_max() as usize);
    let mut tokens = vec![vocab.marker(Marker::AnalysisBegin)];
    for j in 1..=n as u8 {
        tokens.push(vocab.id(Token::Sample(j)));
        tokens.push(vocab.id(if rng.random_bool(0.5) { Token::Helpful } else { Token::Unhelpful }));
    }
    tokens.push(vocab.marker(Marker::AnalysisEnd));
    tokens.push(vocab.marker(Marker::ConclusionBegin));
    for j in 1..=n as u8 {
        if rng.random_bool(0.4) {
            tokens.push(vocab.id(Token::Cite(j)));
        }
    }
    tokens.push(vocab.marker(Marker::ConclusionEnd));
    tokens.push(vocab.marker(Marker::AnswerBegin));
    let answer = if rng.random_bool(0.2) { Answer::NoAnswer } else { Answer::Digit(rng.random_range(0..10)) };
    tokens.push(vocab.id(Token::Answer(answer)));
    tokens.push(vocab.marker(Marker::AnswerEnd));
    match rng.random_range(0..4) {
        0 => {}
        1 => {
            for _ in 0..rng.random_range(1..=3) {
                let pos = rng.random_range(0..tokens.len());
                match rng.random_range(0..3) {
                    0 => tokens[pos] = rng.random_range(0..vocab.len() as TokenId),
                    1 => tokens.insert(pos, rng.random_range(0..vocab.len() as TokenId)),
                    _ => {
                        tokens.remove(pos);
                    }
                }
                if tokens.is_empty() {
                    break;
                }
            }
        }
        2 => {
            let len = rng.random_range(0..40);
            tokens = (0..len).map(|_| rng.random_range(0..vocab.len() as TokenId)).collect();
        }
        _ => {
            // wrong sample count for an otherwise well-formed completion
            return (tokens, rng.random_range(1..=vocab.n_max() as usize));
        }
    }
    (tokens, n)
}

/// Judgments and citations recovered by scanning tokens section by section.
fn recount(vocab: &TokenVocab, tokens: &[TokenId], n: usize) -> (Vec<Option<bool>>, Vec<bool>) {
    let mut judged = vec![None; n + 1];
    let mut cited = vec![false; n + 1];
    let mut section = None;
    let mut last_sample = None;
    for &id in tokens {
        match vocab.token(id) {
            Some(Token::Marker(m)) => section = Some(m),
            Some(Token::Sample(j)) if section == Some(Marker::AnalysisBegin) => last_sample = Some(j as usize),
            Some(t @ (Token::Helpful | Token::Unhelpful)) if section == Some(Marker::AnalysisBegin) => {
                judged[last_sample.unwrap()] = Some(t == Token::Helpful);
            }
            Some(Token::Cite(j)) if section == Some(Marker::ConclusionBegin) => cited[j as usize] = true,
            _ => {}
        }
    }
    (judged, cited)
}

fn parser_oracle() -> Outcome {
    let vocab = TokenVocab::default();
    let mut rng = substream(5, &[]);
    let (mut valid, mut mismatches) = (0, Vec::new());
    for case in 0..10_000 {
        let (tokens, n) = fuzzed_sequence(&vocab, &mut rng);
        let gt: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        let parsed = parse(&vocab, &tokens, n);
        if format_reward(&vocab, &tokens, n) != if parsed.is_ok() { 1.0 } else { 0.0 } {
            mismatches.push(format!("case {case}: format reward disagrees with parse"));
            continue;
        }
        let Ok(parsed) = parsed else { continue };
        valid += 1;
        let (judged, cited) = recount(&vocab, &tokens, n);
        let judged: Vec<bool> = judged[1..].iter().map(|j| j.expect("every sample judged")).collect();
        let h_hits = judged.iter().zip(&gt).filter(|(a, b)| a == b).count();
        let c_hits = (1..=n).filter(|&j| cited[j] == judged[j - 1]).count();
        let rh = helpfulness_reward(&parsed, &gt).unwrap();
        let rc = conclusion_reward(&parsed);
        if rh != h_hits as f64 / n as f64 || rc != c_hits as f64 / n as f64 {
            mismatches.push(format!("case {case}: r_h {rh} vs {h_hits}/{n}, r_c {rc} vs {c_hits}/{n}"));
        }
    }
    outcome(
        mismatches.is_empty() && valid > 1000,
        format!(
            "10000 sequences ({valid} parseable), {} mismatches{}",
            mismatches.len(),
            mismatches.first().map(|m| format!("; first: {m}")).unwrap_or_default()
        ),
    )
}

// 6. Generator calibration.

fn dataset_calibration() -> Outcome {
    let start = Instant::now();
    let data = generate_dataset(&GenConfig { n_instances: 10_000, ..GenConfig::default() }).unwrap();
    let stats = dataset_stats(&data).unwrap();
    let elapsed = start.elapsed();
    outcome(
        (4.9..=5.2).contains(&stats.n_mean)
            && (0.82..=0.86).contains(&stats.answerable_fraction)
            && elapsed < Duration::from_secs(10),
        format!(
            "mean n {:.3} (sd {:.3}), answerable {:.4}, mean helpful {:.3}, {:.2}s",
            stats.n_mean,
            stats.n_sd,
            stats.answerable_fraction,
            stats.helpful_mean,
            secs(elapsed)
        ),
    )
}

// 7 and 8. Training runs.

const SEEDS: u64 = 10;
const REACH_THRESHOLD: f64 = 0.9;
const REACH_WINDOW: usize = 10;
const TAIL: usize = 20;

struct SeedRuns {
    reach_grpo: Option<usize>,
    reach_pgrpo: Option<usize>,
    adr_grpo: f64,
    adr_pgrpo: f64,
    adr_no_help: f64,
    adr_no_conc: f64,
    ma_pgrpo: f64,
    ma_no_help: f64,
    ma_no_conc: f64,
    valid_tail_full: f64,
    valid_low_no_format: f64,
    top_small: f64,
    top_large: f64,
}

fn comparison_data(seed: u64, n_instances: usize) -> Vec<Instance> {
    generate_dataset(&GenConfig { n_instances, seed, n_sd: 2.0, n_min: 1, ..GenConfig::default() }).unwrap()
}

fn rolling_min(log: &[TrainRow], window: usize) -> f64 {
    log.windows(window)
        .map(|w| w.iter().map(|r| r.format_valid_frac).sum::<f64>() / window as f64)
        .fold(f64::INFINITY, f64::min)
}

fn tail_mean(log: &[TrainRow], tail: usize) -> f64 {
    let t = &log[log.len().saturating_sub(tail)..];
    t.iter().map(|r| r.format_valid_frac).sum::<f64>() / t.len() as f64
}

fn run_seed(seed: u64) -> SeedRuns {
    let layout = FeatureLayout::new(TokenVocab::default(), 4);
    let vocab = layout.vocab();
    let train = comparison_data(seed, 2000);
    let held_out = comparison_data(seed + 1000, 400);
    let init = PolicyParams::init(seed, Dims::for_layout(&layout, DEFAULT_HIDDEN).unwrap());
    let warm = warmup(init, &train, &layout, &SftConfig { seed, ..SftConfig::default() }).unwrap();
    let max_len = 3 * vocab.n_max() as usize + 7;

    let run = |mode: Mode, rewards: RewardToggles| {
        let config = TrainConfig { mode, seed, rewards, ..TrainConfig::default() };
        train_loop(warm.params.clone(), Some(warm.reference.params()), &train, &layout, &config, &mut ()).unwrap()
    };
    let polluted = |params: &PolicyParams| {
        let responder = GreedyResponder { params, layout, max_len };
        let series = polluted_eval(&responder, &vocab, &held_out, &PollutionConfig::default(), &mut ExactJudge).unwrap();
        (
            mean_accuracy(&series.acc, 5, MetricMode::Table).unwrap(),
            accuracy_degradation(&series.acc, 5, MetricMode::Table).unwrap(),
        )
    };
    let all = RewardToggles::default();

    let (p_grpo, log_grpo) = run(Mode::Grpo, all);
    let (p_pgrpo, log_pgrpo) = run(Mode::Pgrpo, all);
    let (_, log_no_format) = run(Mode::Pgrpo, RewardToggles { format: false, ..all });
    let (p_no_help, _) = run(Mode::Pgrpo, RewardToggles { helpfulness: false, ..all });
    let (p_no_conc, _) = run(Mode::Pgrpo, RewardToggles { conclusion: false, ..all });

    let (_, adr_grpo) = polluted(&p_grpo);
    let (ma_pgrpo, adr_pgrpo) = polluted(&p_pgrpo);
    let (ma_no_help, adr_no_help) = polluted(&p_no_help);
    let (ma_no_conc, adr_no_conc) = polluted(&p_no_conc);
    let database = build_database(&held_out);
    let responder = GreedyResponder { params: &p_pgrpo, layout, max_len };
    let topk = |k| topk_eval(&responder, &vocab, &held_out, &database, k, &mut ExactJudge).unwrap();
    SeedRuns {
        reach_grpo: updates_to_reach(&log_grpo, REACH_THRESHOLD, REACH_WINDOW),
        reach_pgrpo: updates_to_reach(&log_pgrpo, REACH_THRESHOLD, REACH_WINDOW),
        adr_grpo,
        adr_pgrpo,
        adr_no_help,
        adr_no_conc,
        ma_pgrpo,
        ma_no_help,
        ma_no_conc,
        valid_tail_full: tail_mean(&log_pgrpo, TAIL),
        valid_low_no_format: rolling_min(&log_no_format, REACH_WINDOW),
        top_small: topk(2),
        top_large: topk(8),
    }
}

fn fmt_reach(r: Option<usize>) -> String {
    r.map_or("never".into(), |u| u.to_string())
}

fn faster(a: Option<usize>, b: Option<usize>) -> bool {
    match (a, b) {
        (Some(a), Some(b)) => a < b,
        (Some(_), None) => true,
        _ => false,
    }
}

fn training_criteria() -> (Outcome, Outcome, Outcome) {
    let start = Instant::now();
    let mut runs = Vec::new();
    for seed in 0..SEEDS {
        let r = run_seed(seed);
        eprintln!(
            "  seed {seed}: reach grpo {} pgrpo {} | ADR5 grpo {:.2} pgrpo {:.2} no-help {:.2} no-conc {:.2} | MA5 pgrpo {:.2} no-help {:.2} no-conc {:.2} | valid full {:.3} no-format min {:.3} | top2 {:.1} top8 {:.1}",
            fmt_reach(r.reach_grpo),
            fmt_reach(r.reach_pgrpo),
            r.adr_grpo,
            r.adr_pgrpo,
            r.adr_no_help,
            r.adr_no_conc,
            r.ma_pgrpo,
            r.ma_no_help,
            r.ma_no_conc,
            r.valid_tail_full,
            r.valid_low_no_format,
            r.top_small,
            r.top_large
        );
        runs.push(r);
    }
    let elapsed = start.elapsed();
    let count = |f: &dyn Fn(&SeedRuns) -> bool| runs.iter().filter(|r| f(r)).count();
    let n = runs.len();

    let reach = count(&|r| faster(r.reach_pgrpo, r.reach_grpo));
    let adr = count(&|r| r.adr_pgrpo < r.adr_grpo);
    let both = count(&|r| faster(r.reach_pgrpo, r.reach_grpo) && r.adr_pgrpo < r.adr_grpo);
    let comparison = outcome(
        reach >= 7 && adr >= 7,
        format!(
            "faster to mean r_h >= {REACH_THRESHOLD} in {reach}/{n} seeds, lower ADR_5 in {adr}/{n} (both in {both}/{n}), {:.0}s for all training runs",
            secs(elapsed)
        ),
    );

    let collapsed = count(&|r| r.valid_low_no_format < 0.5);
    let kept = count(&|r| r.valid_tail_full >= 0.95);
    let worse_help = count(&|r| r.adr_no_help > r.adr_pgrpo);
    let worse_conc = count(&|r| r.adr_no_conc > r.adr_pgrpo);
    let lower_ma_help = count(&|r| r.ma_no_help < r.ma_pgrpo);
    let lower_ma_conc = count(&|r| r.ma_no_conc < r.ma_pgrpo);
    let ablation = outcome(
        collapsed >= 7 && kept >= 7 && 2 * worse_help > n && 2 * worse_conc > n,
        format!(
            "no format reward below 50% valid in {collapsed}/{n}; full method >= 95% valid in {kept}/{n}; ADR_5 worse without helpfulness {worse_help}/{n}, without conclusion {worse_conc}/{n} (MA_5 lower: {lower_ma_help}/{n}, {lower_ma_conc}/{n})"
        ),
    );

    let wider = count(&|r| r.top_large >= r.top_small);
    let topk = outcome(2 * wider > n, format!("Top-8 accuracy >= Top-2 accuracy in {wider}/{n} seeds"));
    (comparison, ablation, topk)
}

// 9. Exact retrieval.

fn entry(doc_id: u64, embedding: Vec<f64>) -> DbEntry {
    DbEntry {
        owner: 0,
        doc: Doc { doc_id, helpful_gt: false, evidence_digit: 0, cue_bits: vec![], embedding },
    }
}

fn retrieval_exactness() -> Outcome {
    let mut rng = substream(17, &[]);
    let mut failures = 0;
    for _ in 0..100 {
        let d = rng.random_range(1..=16);
        let size = rng.random_range(1..200);
        let mut ids: Vec<u64> = (0..size as u64).map(|i| i * 7 + 3).collect();
        for i in (1..ids.len()).rev() {
            ids.swap(i, rng.random_range(0..=i));
        }
        let db: Vec<DbEntry> =
            ids.iter().map(|&id| entry(id, (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())).collect();
        let q: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let k = rng.random_range(0..=size);
        let score = |i: usize| db[i].doc.embedding.iter().zip(&q).map(|(a, b)| a * b).sum::<f64>();
        let mut oracle: Vec<usize> = (0..size).collect();
        oracle.sort_by(|&a, &b| score(b).total_cmp(&score(a)).then(db[a].doc.doc_id.cmp(&db[b].doc.doc_id)));
        oracle.truncate(k);
        failures += (retrieve_topk(&q, &db, k).unwrap() != oracle) as usize;
    }
    // exact ties resolve by ascending doc id regardless of storage order
    let tied = vec![entry(9, vec![1.0, 0.0]), entry(2, vec![0.0, 1.0]), entry(5, vec![1.0, 0.0]), entry(1, vec![0.5, 0.0])];
    let ties = retrieve_topk(&[1.0, 1.0], &tied, 3).unwrap();
    let ties_ok = ties == vec![1, 2, 0];
    outcome(failures == 0 && ties_ok, format!("{failures}/100 triples differ from the sort oracle; tie order {ties:?}"))
}

// 10. CLI determinism.

fn run_pipeline(dir: &Path) -> Result<(), String> {
    std::fs::write(dir.join("sft.json"), r#"{"policy": {"hidden_dim": 16}, "sft": {"steps": 30}}"#).unwrap();
    std::fs::write(dir.join("train.json"), r#"{"updates": 5, "G": 4, "batch_instances": 3}"#).unwrap();
    let steps: [&[&str]; 4] = [
        &["gen-data", "--n", "150", "--seed", "4", "--out", "d.jsonl"],
        &["sft", "--data", "d.jsonl", "--config", "sft.json", "--out", "sft.ckpt", "--log", "sft.csv"],
        &[
            "train", "--mode", "pgrpo", "--data", "d.jsonl", "--init", "sft.ckpt", "--config", "train.json", "--out",
            "rl.ckpt", "--log", "train.csv", "--rewards-log", "rewards.csv",
        ],
        &["eval-polluted", "--ckpt", "rl.ckpt", "--data", "d.jsonl", "--kmax", "3", "--max-docs", "6", "--out", "polluted.csv"],
    ];
    for args in steps {
        let out = Command::new(env!("CARGO_BIN_EXE_pgrpo")).args(args).current_dir(dir).output().unwrap();
        if !out.status.success() {
            return Err(format!("{}: {}", args[0], String::from_utf8_lossy(&out.stderr).trim()));
        }
    }
    Ok(())
}

fn cli_determinism() -> Outcome {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        if let Err(e) = run_pipeline(d.path()) {
            return outcome(false, e);
        }
    }
    let files = ["d.jsonl", "sft.csv", "train.csv", "rewards.csv", "polluted.csv", "sft.ckpt", "rl.ckpt"];
    let differing: Vec<&str> = files
        .iter()
        .copied()
        .filter(|f| std::fs::read(dirs[0].path().join(f)).unwrap() != std::fs::read(dirs[1].path().join(f)).unwrap())
        .collect();
    outcome(
        differing.is_empty(),
        if differing.is_empty() {
            format!("two runs of gen-data, sft, train, eval-polluted: {} outputs byte-identical", files.len())
        } else {
            format!("outputs differ: {}", differing.join(", "))
        },
    )
}

fn main() {
    let quick = std::env::var_os("PGRPO_ACCEPTANCE_QUICK").is_some();
    let mut results: Vec<(&str, Outcome)> = vec![
        ("1 published metric rows", metric_fixtures()),
        ("2 gradient check", gradient_suite()),
        ("3 reduction to the vanilla objective", reduction_property()),
        ("4 zero point and ratio identity", zero_point()),
        ("5 parser and reward oracle", parser_oracle()),
        ("6 generator calibration", dataset_calibration()),
    ];
    if quick {
        eprintln!("PGRPO_ACCEPTANCE_QUICK set: skipping training runs");
    } else {
        let (comparison, ablation, topk) = training_criteria();
        results.push(("7 training comparison", comparison));
        results.push(("8 reward ablations", ablation));
        results.push(("7b retrieval depth (Top-K)", topk));
    }
    results.push(("9 exact retrieval", retrieval_exactness()));
    results.push(("10 end-to-end determinism", cli_determinism()));

    let mut failed = 0;
    for (name, o) in &results {
        println!("{} criterion {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += (!o.pass) as usize;
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
