use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use freshchain::config::{load_config, Algorithm, Execution, ExperimentConfig, SweepAxis, SweepSpec};
use freshchain::harness::{run_experiment, run_sweep, Checkpoint, CsvSink, RunOptions, Runner};
use freshchain_core::agents::a3c::A3cTrainer;
use freshchain_core::agents::ss::ss_grid_tune;
use freshchain_core::agents::{evaluate, EpisodeSummary};
use freshchain_core::metrics::{summarize, MetricsRow, Observed};

#[derive(Parser)]
#[command(name = "freshchain", version, about = "Perishable multi-echelon inventory experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate every configured seed.
    Train(TrainArgs),
    /// Evaluate a frozen policy: a checkpoint for a3c_dppo, the policy itself for ss/random.
    Evaluate(EvalArgs),
    /// Repeat training along one scenario axis.
    Sweep(SweepArgs),
    /// Grid-tune the (s,S) baseline and print the candidate table.
    TuneSs(Common),
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Replaces the configured seed list.
    #[arg(long)]
    seed: Option<u64>,
    /// CSV output; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    algo: Option<Algorithm>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, conflicts_with = "async_mode")]
    sync: bool,
    #[arg(long = "async")]
    async_mode: bool,
    #[arg(long)]
    epochs: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Frozen-policy evaluation rows; defaults to `<out>.eval.csv`.
    #[arg(long)]
    eval_out: Option<PathBuf>,
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    episodes: Option<u64>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Overrides the configured sweep axis.
    #[arg(long, value_parser = parse_axis)]
    axis: Option<SweepAxis>,
    /// Comma-separated axis values.
    #[arg(long, value_delimiter = ',')]
    values: Option<Vec<f64>>,
}

fn parse_axis(s: &str) -> Result<SweepAxis, String> {
    match s {
        "demand_variance" => Ok(SweepAxis::DemandVariance),
        "leadtime_rate" => Ok(SweepAxis::LeadtimeRate),
        "perishability_delta" => Ok(SweepAxis::PerishabilityDelta),
        "topology_scale" => Ok(SweepAxis::TopologyScale),
        _ => Err(format!("unknown axis {s}")),
    }
}

fn load(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = load_config(&c.config).with_context(|| format!("loading {}", c.config.display()))?;
    if let Some(s) = c.seed {
        cfg.seeds = vec![s];
    }
    if let Some(a) = c.algo {
        cfg.algorithm = a;
    }
    if let Some(k) = c.workers {
        if k == 0 {
            bail!("--workers must be at least 1");
        }
        cfg.workers = k;
    }
    if c.sync {
        cfg.execution = Execution::Sync;
    }
    if c.async_mode {
        cfg.execution = Execution::Async;
    }
    if let Some(e) = c.epochs {
        if e == 0 {
            bail!("--epochs must be at least 1");
        }
        cfg.epochs = e;
    }
    Ok(cfg)
}

fn open_out(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?))
        }
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn eval_path(out: Option<&Path>, explicit: Option<&Path>) -> Option<PathBuf> {
    explicit.map(Path::to_path_buf).or_else(|| out.map(|p| p.with_extension("eval.csv")))
}

fn report(evals: &[MetricsRow]) {
    let obs: Vec<Observed> = evals
        .iter()
        .map(|r| Observed {
            algorithm: r.algorithm.clone(),
            axis_value: None,
            seed: r.seed,
            reward: r.mean_episode_reward,
            cost: r.costs.total(),
        })
        .collect();
    for s in summarize(&obs) {
        eprintln!(
            "{}: evaluation profit {:.2} ± {:.2}, cost {:.2} ± {:.2} over {} seed(s)",
            s.algorithm, s.reward_mean, s.reward_std, s.cost_mean, s.cost_std, s.seeds
        );
    }
}

fn train(args: TrainArgs) -> Result<()> {
    let cfg = load(&args.common)?;
    let out = args.common.out.as_deref();
    let mut sink = CsvSink::new(open_out(out)?, None)?;
    let opts = RunOptions { checkpoint_dir: args.checkpoint_dir };
    let log = run_experiment(&cfg, &opts, &mut |r| {
        sink.write(None, r).map_err(|e| freshchain::harness::HarnessError::Io { context: "writing CSV".into(), source: e })
    })?;
    sink.flush()?;
    if let Some(p) = eval_path(out, args.eval_out.as_deref()) {
        let mut eval = CsvSink::new(open_out(Some(&p))?, None)?;
        for r in &log.evaluations {
            eval.write(None, r)?;
        }
        eval.flush()?;
    }
    report(&log.evaluations);
    Ok(())
}

fn evaluate_cmd(args: EvalArgs) -> Result<()> {
    let mut cfg = load(&args.common)?;
    if let Some(n) = args.episodes {
        cfg.eval_episodes = n;
    }
    let mut sink = CsvSink::new(open_out(args.common.out.as_deref())?, None)?;
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        let summaries = match (cfg.algorithm, &args.checkpoint) {
            (Algorithm::A3cDppo, Some(path)) => {
                let cp = Checkpoint::load(path)?;
                let mut a = cfg.a3c.clone();
                if cfg.workers > 0 {
                    a.workers = cfg.workers;
                }
                let mut t = A3cTrainer::new(&cfg.scenario, a, seed)?;
                cp.restore(&mut t)?;
                evaluate(&cfg.scenario, &t, cfg.eval_episodes, seed)?
            }
            (Algorithm::Ss | Algorithm::Random, _) => {
                let Runner::Fixed { mut policy, .. } = Runner::build(&cfg, &cfg.scenario, seed)? else { unreachable!() };
                freshchain_core::agents::evaluate_policy(&cfg.scenario, policy.as_mut(), cfg.eval_episodes, seed)?
            }
            (a, _) => bail!("evaluate needs --checkpoint with a3c_dppo, or a fixed policy (ss, random); got {}", a.name()),
        };
        let row = MetricsRow::from_summary(0, seed, cfg.algorithm.name(), &EpisodeSummary::mean(&summaries), 0);
        sink.write(None, &row)?;
        rows.push(row);
    }
    sink.flush()?;
    report(&rows);
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<()> {
    let cfg = load(&args.common)?;
    let spec = match (&cfg.sweep, args.axis, args.values) {
        (_, Some(axis), Some(values)) => SweepSpec { axis, values },
        (Some(s), axis, values) => SweepSpec { axis: axis.unwrap_or(s.axis), values: values.unwrap_or_else(|| s.values.clone()) },
        _ => bail!("no [sweep] section in the configuration and no --axis/--values given"),
    };
    if spec.values.is_empty() {
        bail!("sweep needs at least one value");
    }
    let mut sink = CsvSink::new(open_out(args.common.out.as_deref())?, Some(spec.axis))?;
    let points = run_sweep(&cfg, &spec, &RunOptions::default(), &mut |v, r| {
        sink.write(Some(v), r).map_err(|e| freshchain::harness::HarnessError::Io { context: "writing CSV".into(), source: e })
    })?;
    sink.flush()?;
    for (v, log) in &points {
        eprintln!("{} = {v}", spec.axis.name());
        report(&log.evaluations);
    }
    Ok(())
}

fn tune_ss(c: Common) -> Result<()> {
    let cfg = load(&c)?;
    let mut out = open_out(c.out.as_deref())?;
    writeln!(out, "seed,reorder_point,order_up_to,mean_profit")?;
    for &seed in &cfg.seeds {
        let t = ss_grid_tune(&cfg.scenario, &cfg.ss.reorder_points, &cfg.ss.order_up_to, cfg.ss.units, cfg.ss.tuning_episodes, seed)?;
        for cand in &t.candidates {
            writeln!(out, "{seed},{},{},{}", cand.reorder_point, cand.order_up_to, cand.mean_profit)?;
        }
        eprintln!("seed {seed}: best s = {}, S = {}, mean profit {:.2}", t.best.reorder_point, t.best.order_up_to, t.best.mean_profit);
    }
    out.flush()?;
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Sweep(a) => sweep(a),
        Command::TuneSs(c) => tune_ss(c),
    };
    if let Err(e) = res {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
