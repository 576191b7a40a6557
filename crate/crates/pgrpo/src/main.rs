use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use pgrpo::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use pgrpo::config::{load_config, SftCommandConfig};
use pgrpo::dataset::{load_dataset, save_dataset, write_stats};
use pgrpo::judge::{Failover, RemoteJudge, RemoteJudgeConfig};
use pgrpo::logs::{read_series, save_rows, series_rows, RewardRow, SummaryRow, TopkRow};
use pgrpo::manifest::{manifest_path, version_stamp, RunManifest};
use pgrpo::report;
use pgrpo_core::eval::{
    accuracy_degradation, build_database, mean_accuracy, polluted_eval, topk_eval, ExactJudge, GreedyResponder, Judge,
    MetricMode, PollutionConfig,
};
use pgrpo_core::policy::{Dims, PolicyParams};
use pgrpo_core::sft::warmup;
use pgrpo_core::synth::{generate_dataset, GenConfig, Instance};
use pgrpo_core::train::{train_loop, CompletionRecord, Mode, TrainConfig, TrainObserver, TrainRow};
use pgrpo_core::vocab::TokenVocab;
use pgrpo_core::FeatureLayout;

#[derive(Parser)]
#[command(name = "pgrpo", version, about = "Segment-scoped GRPO on synthetic retrieval tasks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset as JSON Lines.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config's instance count.
        #[arg(long)]
        n: Option<usize>,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print `metric,value` statistics of a dataset.
    Stats {
        #[arg(long)]
        data: PathBuf,
    },
    /// Supervised warm-up of a fresh policy.
    Sft {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// `update,loss` log.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Reinforcement learning from a checkpoint.
    Train {
        #[arg(long)]
        mode: Mode,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        init: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        log: PathBuf,
        /// Per-completion reward and advantage log.
        #[arg(long)]
        rewards_log: Option<PathBuf>,
        /// KL reference policy; defaults to the initial checkpoint.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Accuracy as harmful documents are added to the helpful ones.
    EvalPolluted {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 5)]
        kmax: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Skip instances that would show more documents than this.
        #[arg(long, default_value_t = 8)]
        max_docs: usize,
        #[command(flatten)]
        judge: JudgeArgs,
    },
    /// Accuracy with K documents retrieved from the whole database.
    EvalTopk {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated list of K values.
        #[arg(long = "K", value_delimiter = ',', required = true)]
        k: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Dataset whose documents form the database; defaults to --data.
        #[arg(long)]
        database: Option<PathBuf>,
        #[command(flatten)]
        judge: JudgeArgs,
    },
    /// Mean accuracy and degradation of a `k,acc` series.
    Metrics {
        #[arg(long)]
        series: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value = "table")]
        mode: MetricMode,
        /// Also write a `metric,mode,value` table.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Collect polluted series under a directory into one table.
    Report {
        #[arg(long)]
        runs: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "table")]
        mode: MetricMode,
    },
}

#[derive(Args)]
struct JudgeArgs {
    /// Grade answers remotely instead of by exact match.
    #[arg(long)]
    remote_judge: bool,
    #[arg(long, env = "JUDGE_URL")]
    judge_url: Option<String>,
    #[arg(long, default_value_t = 10_000)]
    judge_timeout_ms: u64,
    #[arg(long, value_enum, default_value_t = Failover::Error)]
    judge_failover: Failover,
    #[arg(long, default_value_t = 4)]
    judge_max_in_flight: usize,
}

impl JudgeArgs {
    fn build(&self) -> anyhow::Result<Box<dyn Judge>> {
        if !self.remote_judge {
            return Ok(Box::new(ExactJudge));
        }
        let Some(url) = &self.judge_url else {
            bail!("--remote-judge needs --judge-url or JUDGE_URL");
        };
        let mut config = RemoteJudgeConfig::new(url.clone());
        config.timeout = std::time::Duration::from_millis(self.judge_timeout_ms);
        config.failover = self.judge_failover;
        config.max_in_flight = self.judge_max_in_flight;
        Ok(Box::new(RemoteJudge::new(config)))
    }
}

struct Run {
    command: &'static str,
    config_path: Option<PathBuf>,
    seed: Option<u64>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Run {
    fn new(command: &'static str) -> Self {
        Run { command, config_path: None, seed: None, inputs: Vec::new(), outputs: Vec::new() }
    }

    /// Writes the manifest next to the first output.
    fn finish(self, started: Instant) -> anyhow::Result<()> {
        let Some(primary) = self.outputs.first() else {
            return Ok(());
        };
        let manifest = RunManifest {
            command: self.command.to_string(),
            config_path: self.config_path,
            seed: self.seed,
            version: version_stamp(),
            duration_secs: started.elapsed().as_secs_f64(),
            inputs: self.inputs,
            outputs: self.outputs.clone(),
        };
        manifest.save(&manifest_path(primary))?;
        Ok(())
    }
}

fn layout_for(dataset: &[Instance], n_max: u8) -> anyhow::Result<FeatureLayout> {
    let vocab = TokenVocab::new(n_max)?;
    let cue_bits = dataset.first().and_then(|i| i.docs.first()).map_or(0, |d| d.cue_bits.len());
    if dataset.iter().flat_map(|i| &i.docs).any(|d| d.cue_bits.len() != cue_bits) {
        bail!("documents disagree on the number of cue bits");
    }
    if let Some(inst) = dataset.iter().find(|i| i.n > n_max as usize) {
        bail!("instance {} has {} documents but the vocabulary allows {n_max}", inst.instance_id, inst.n);
    }
    Ok(FeatureLayout::new(vocab, cue_bits))
}

fn max_len(layout: &FeatureLayout) -> usize {
    3 * layout.vocab().n_max() as usize + 7
}

fn run(command: Command) -> anyhow::Result<()> {
    let started = Instant::now();
    match command {
        Command::GenData { config, out, n, seed } => {
            let mut gen: GenConfig = load_config(config.as_deref())?;
            if let Some(n) = n {
                gen.n_instances = n;
            }
            if let Some(seed) = seed {
                gen.seed = seed;
            }
            let dataset = generate_dataset(&gen)?;
            save_dataset(&out, &dataset)?;
            let mut run = Run::new("gen-data");
            run.config_path = config;
            run.seed = Some(gen.seed);
            run.outputs.push(out);
            run.finish(started)?;
        }
        Command::Stats { data } => {
            let dataset = load_dataset(&data)?;
            write_stats(std::io::stdout().lock(), &dataset)?;
        }
        Command::Sft { data, config, out, log } => {
            let cfg: SftCommandConfig = load_config(config.as_deref())?;
            let dataset = load_dataset(&data)?;
            let layout = layout_for(&dataset, cfg.policy.n_max)?;
            let params = PolicyParams::init(cfg.policy.init_seed, Dims::for_layout(&layout, cfg.policy.hidden_dim)?);
            let result = warmup(params, &dataset, &layout, &cfg.sft)?;
            save_checkpoint(&out, &Checkpoint { params: result.params, layout, seed: cfg.sft.seed })?;
            let mut run = Run::new("sft");
            run.config_path = config;
            run.seed = Some(cfg.sft.seed);
            run.inputs.push(data);
            run.outputs.push(out);
            if let Some(log) = log {
                save_rows(&log, &result.log)?;
                run.outputs.push(log);
            }
            run.finish(started)?;
        }
        Command::Train { mode, data, init, config, out, log, rewards_log, reference } => {
            let mut cfg: TrainConfig = load_config(config.as_deref())?;
            cfg.mode = mode;
            let dataset = load_dataset(&data)?;
            let start = load_checkpoint(&init)?;
            let reference_ckpt = match &reference {
                Some(path) => load_checkpoint(path)?,
                None => start.clone(),
            };
            if reference_ckpt.layout != start.layout || reference_ckpt.params.dims() != start.params.dims() {
                bail!("reference checkpoint does not match the initial checkpoint's shape");
            }
            layout_for(&dataset, start.layout.vocab().n_max())?;
            let mut observer = RewardCollector { rows: Vec::new(), keep: rewards_log.is_some() };
            let (params, rows) =
                train_loop(start.params, Some(&reference_ckpt.params), &dataset, &start.layout, &cfg, &mut observer)?;
            save_checkpoint(&out, &Checkpoint { params, layout: start.layout, seed: cfg.seed })?;
            save_rows(&log, &rows)?;
            let mut run = Run::new("train");
            run.config_path = config;
            run.seed = Some(cfg.seed);
            run.inputs.extend([data, init]);
            run.inputs.extend(reference);
            run.outputs.extend([out, log]);
            if let Some(path) = rewards_log {
                save_rows(&path, &observer.rows)?;
                run.outputs.push(path);
            }
            run.finish(started)?;
        }
        Command::EvalPolluted { ckpt, data, kmax, out, seed, max_docs, judge } => {
            let model = load_checkpoint(&ckpt)?;
            let dataset = load_dataset(&data)?;
            let responder = GreedyResponder { params: &model.params, layout: model.layout, max_len: max_len(&model.layout) };
            let config = PollutionConfig { k_max: kmax, max_docs, seed };
            let mut judge = judge.build()?;
            let series = polluted_eval(&responder, &model.layout.vocab(), &dataset, &config, judge.as_mut())?;
            save_rows(&out, &series_rows(&series.acc))?;
            let mut run = Run::new("eval-polluted");
            run.seed = Some(seed);
            run.inputs.extend([ckpt, data]);
            run.outputs.push(out);
            run.finish(started)?;
        }
        Command::EvalTopk { ckpt, data, k, out, database, judge } => {
            let model = load_checkpoint(&ckpt)?;
            let dataset = load_dataset(&data)?;
            let db_source = match &database {
                Some(path) => load_dataset(path)?,
                None => dataset.clone(),
            };
            let db = build_database(&db_source);
            let responder = GreedyResponder { params: &model.params, layout: model.layout, max_len: max_len(&model.layout) };
            let mut judge = judge.build()?;
            let rows = k
                .iter()
                .map(|&k| {
                    let acc = topk_eval(&responder, &model.layout.vocab(), &dataset, &db, k, judge.as_mut())?;
                    Ok(TopkRow { k, acc })
                })
                .collect::<anyhow::Result<Vec<_>>>()?;
            save_rows(&out, &rows)?;
            let mut run = Run::new("eval-topk");
            run.inputs.extend([ckpt, data]);
            run.inputs.extend(database);
            run.outputs.push(out);
            run.finish(started)?;
        }
        Command::Metrics { series, k, mode, out } => {
            let acc = read_series(&series)?;
            let ma = mean_accuracy(&acc, k, mode)?;
            let adr = accuracy_degradation(&acc, k, mode)?;
            println!("MA_{k},{ma:.2}");
            println!("ADR_{k},{adr:.2}");
            let mut run = Run::new("metrics");
            run.inputs.push(series);
            if let Some(out) = out {
                let rows = [
                    SummaryRow { metric: format!("MA_{k}"), mode, value: ma },
                    SummaryRow { metric: format!("ADR_{k}"), mode, value: adr },
                ];
                save_rows(&out, &rows)?;
                run.outputs.push(out);
            }
            run.finish(started)?;
        }
        Command::Report { runs, out, mode } => {
            if !runs.is_dir() {
                bail!("{}: not a directory", runs.display());
            }
            let rows = report::collect(&runs, mode)?;
            if rows.is_empty() {
                bail!("{}: no k,acc series found", runs.display());
            }
            let file = std::fs::File::create(&out).with_context(|| out.display().to_string())?;
            report::write_report(std::io::BufWriter::new(file), &rows)?;
            let mut run = Run::new("report");
            run.inputs.push(runs);
            run.outputs.push(out);
            run.finish(started)?;
        }
    }
    Ok(())
}

struct RewardCollector {
    rows: Vec<RewardRow>,
    keep: bool,
}

impl TrainObserver for RewardCollector {
    fn on_update(&mut self, row: &TrainRow) {
        log::info!(
            "update {} objective {:.4} r_h {:.3} valid {:.3}",
            row.update,
            row.objective,
            row.mean_rh,
            row.format_valid_frac
        );
    }

    fn on_completion(&mut self, record: &CompletionRecord) {
        if self.keep {
            self.rows.push(RewardRow::from(record));
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

