use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use imgdial_core::harness::{
    check_cell, check_sweep, curve_csv, evaluate_episodes, ser_sweep, success_plot_svg, sweep_csv, train_dqn, Curriculum,
    DialoguePolicy, GreedyDqn, Metrics, RewardFunction, RulePolicy, RunConfig, World, CSV_HEADER, SWEEP_SERS,
};
use imgdial_core::ontology::Ontology;
use imgdial_core::policy::{load_checkpoint, save_checkpoint, SyncUnit};
use imgdial_core::simulator::ConfidenceModel;
use imgdial_core::vision::{Dataset, DatasetConfig};
use imgdial_service::{AppState, ServiceConfig, SessionConfig};

#[derive(Parser)]
#[command(name = "imgdial", version, about = "Conversational image-editing dialogue system")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate or inspect the synthetic scene dataset.
    Dataset {
        #[command(subcommand)]
        action: DatasetCommand,
    },
    /// Train a DQN policy against the user simulator.
    Train(TrainArgs),
    /// Evaluate a policy on test scenes.
    Eval(EvalArgs),
    /// Rule vs DQN across semantic error rates.
    Sweep(SweepArgs),
    /// Serve the live-session HTTP API (and optionally the UI bundle).
    Serve(ServeArgs),
    /// Print the belief-vector layout.
    Layout {
        #[arg(long)]
        include_turn: bool,
    },
}

#[derive(Subcommand)]
enum DatasetCommand {
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DatasetConfig::default().seed)]
        seed: u64,
        #[arg(long, default_value_t = DatasetConfig::default().scenes)]
        scenes: usize,
        #[arg(long, default_value_t = DatasetConfig::default().train)]
        train: usize,
        #[arg(long, default_value_t = DatasetConfig::default().width)]
        width: usize,
        #[arg(long, default_value_t = DatasetConfig::default().height)]
        height: usize,
        #[arg(long)]
        distractors: bool,
    },
    Inspect {
        dir: PathBuf,
    },
}

/// Every experiment knob. A `--config` JSON file is applied first, then flags.
#[derive(Args, Debug, Default)]
struct RunArgs {
    /// JSON file with (a subset of) the run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Load scenes from a dataset directory instead of generating them.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    dataset_seed: Option<u64>,
    #[arg(long)]
    ser: Option<f64>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    theta_drops_intent: Option<bool>,
    #[arg(long)]
    max_turns: Option<usize>,
    #[arg(long)]
    train_dialogues: Option<usize>,
    #[arg(long)]
    eval_dialogues: Option<usize>,
    /// `terminal` or `shaped`.
    #[arg(long)]
    reward: Option<String>,
    #[arg(long)]
    goal_reward: Option<f64>,
    #[arg(long)]
    incorrect_penalty: Option<f64>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    replay_capacity: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    sync_every: Option<usize>,
    /// `train_steps` or `dialogues`.
    #[arg(long, value_parser = parse_enum::<SyncUnit>)]
    sync_unit: Option<SyncUnit>,
    #[arg(long)]
    epsilon_start: Option<f64>,
    #[arg(long)]
    epsilon_end: Option<f64>,
    #[arg(long)]
    anneal_fraction: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    include_turn: Option<bool>,
    /// Confidence model as JSON, e.g. `{"kind":"uniform","lo":0.5,"hi":1.0}`.
    #[arg(long, value_parser = parse_json::<ConfidenceModel>)]
    confidence: Option<ConfidenceModel>,
    #[arg(long)]
    iou_threshold: Option<f64>,
    /// Let the error channel corrupt image paths as well.
    #[arg(long)]
    corrupt_image_path: Option<bool>,
    /// `fixed`, `mixed` or `ramp`.
    #[arg(long, value_parser = parse_enum::<Curriculum>)]
    curriculum: Option<Curriculum>,
    #[arg(long)]
    curve_window: Option<usize>,
}

fn parse_enum<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

fn parse_json<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_str(s).map_err(|e| e.to_string())
}

impl RunArgs {
    fn config(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => serde_json::from_str(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)
                .with_context(|| format!("parsing {}", p.display()))?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($field:ident).+ <- $arg:ident) => {
                if let Some(v) = self.$arg.clone() {
                    c.$($field).+ = v;
                }
            };
        }
        set!(seed <- seed);
        set!(dataset_seed <- dataset_seed);
        set!(ser <- ser);
        set!(theta <- theta);
        set!(theta_drops_intent <- theta_drops_intent);
        set!(max_turns <- max_turns);
        set!(train_dialogues <- train_dialogues);
        set!(eval_dialogues <- eval_dialogues);
        set!(dqn.hidden <- hidden);
        set!(dqn.learning_rate <- learning_rate);
        set!(dqn.batch_size <- batch_size);
        set!(dqn.replay_capacity <- replay_capacity);
        set!(dqn.gamma <- gamma);
        set!(dqn.sync_every <- sync_every);
        set!(dqn.sync_unit <- sync_unit);
        set!(dqn.epsilon_start <- epsilon_start);
        set!(dqn.epsilon_end <- epsilon_end);
        set!(dqn.anneal_fraction <- anneal_fraction);
        set!(tau <- tau);
        set!(include_turn <- include_turn);
        set!(confidence <- confidence);
        set!(iou_threshold <- iou_threshold);
        set!(corrupt_image_path <- corrupt_image_path);
        set!(curriculum <- curriculum);
        set!(curve_window <- curve_window);
        match self.reward.as_deref() {
            None => {}
            Some("terminal") => c.reward = RewardFunction::Terminal,
            Some("shaped") => c.reward = RewardFunction::shaped_default(),
            Some(other) => bail!("unknown reward function `{other}` (terminal | shaped)"),
        }
        if let RewardFunction::Shaped { goal_reward, incorrect_penalty } = &mut c.reward {
            *goal_reward = self.goal_reward.unwrap_or(*goal_reward);
            *incorrect_penalty = self.incorrect_penalty.unwrap_or(*incorrect_penalty);
        }
        c.validate()?;
        Ok(c)
    }

    fn world(&self, config: &RunConfig) -> Result<World> {
        let dataset = match &self.dataset {
            Some(dir) => Dataset::load(dir).with_context(|| format!("loading dataset from {}", dir.display()))?,
            None => Dataset::generate(DatasetConfig { seed: config.dataset_seed, ..DatasetConfig::default() }),
        };
        Ok(World::new(Ontology::default(), dataset))
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Checkpoint output path.
    #[arg(long, default_value = "dqn.bin")]
    out: PathBuf,
    /// Learning-curve CSV output path.
    #[arg(long)]
    curve: Option<PathBuf>,
    /// Greedy-evaluate after training and fail if the bands are missed.
    #[arg(long)]
    check: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    run: RunArgs,
    /// `rule` or `dqn`.
    #[arg(long, default_value = "rule")]
    policy: String,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Write every episode transcript to this file.
    #[arg(long)]
    transcripts: Option<PathBuf>,
    #[arg(long)]
    check: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    /// CSV output (stdout if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Success-vs-SER SVG chart.
    #[arg(long)]
    plot: Option<PathBuf>,
    /// Comma-separated SER levels.
    #[arg(long, value_delimiter = ',')]
    sers: Option<Vec<f64>>,
    #[arg(long)]
    check: bool,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    /// Default checkpoint for DQN sessions.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Directory with the browser UI bundle.
    #[arg(long)]
    static_dir: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, default_value_t = DatasetConfig::default().seed)]
    dataset_seed: u64,
    #[arg(long, default_value_t = SessionConfig::default().max_turns)]
    max_turns: usize,
    #[arg(long, default_value_t = SessionConfig::default().iou_threshold)]
    iou_threshold: f64,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

/// `Ok(false)` means a `--check` found violations.
fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Dataset { action } => dataset(action).map(|_| true),
        Command::Train(args) => train(args),
        Command::Eval(args) => eval(args),
        Command::Sweep(args) => sweep(args),
        Command::Serve(args) => serve(args).map(|_| true),
        Command::Layout { include_turn } => {
            let layout = imgdial_core::tracker::VectorLayout { include_turn, ..Default::default() };
            for (i, name) in layout.describe(&Ontology::default()).iter().enumerate() {
                println!("{i:>2}  {name}");
            }
            Ok(true)
        }
    }
}

fn report(violations: &[String]) -> bool {
    for v in violations {
        eprintln!("check failed: {v}");
    }
    violations.is_empty()
}

fn dataset(action: DatasetCommand) -> Result<()> {
    match action {
        DatasetCommand::Generate { out, seed, scenes, train, width, height, distractors } => {
            if train > scenes {
                bail!("--train ({train}) exceeds --scenes ({scenes})");
            }
            let ds = Dataset::generate(DatasetConfig { seed, scenes, train, width, height, distractors });
            ds.save(&out).with_context(|| format!("writing {}", out.display()))?;
            println!("wrote {} scenes ({} train / {} test) to {}", ds.scenes().len(), ds.train().len(), ds.test().len(), out.display());
        }
        DatasetCommand::Inspect { dir } => {
            let ds = Dataset::load(&dir).with_context(|| format!("loading {}", dir.display()))?;
            println!("scenes: {} ({} train / {} test)", ds.scenes().len(), ds.train().len(), ds.test().len());
            let mut counts = std::collections::BTreeMap::<&str, usize>::new();
            for s in ds.scenes() {
                for o in &s.spec.objects {
                    *counts.entry(o.name.as_str()).or_default() += 1;
                }
            }
            for (name, n) in counts {
                println!("  {name:<10} {n}");
            }
        }
    }
    Ok(())
}

fn print_metrics(label: &str, ser: f64, m: &Metrics) {
    println!("{CSV_HEADER}");
    println!("{label},{ser:.1},{:.4},{:.4},{:.4},{:.4}", m.turn, m.reward, m.goal, m.success);
}

fn train(args: TrainArgs) -> Result<bool> {
    let config = args.run.config()?;
    let world = args.run.world(&config)?;
    let start = Instant::now();
    let out = train_dqn(&world, &config)?;
    eprintln!(
        "trained {} dialogues at SER {} in {:.1}s ({} updates, {} target syncs)",
        config.train_dialogues,
        config.ser,
        start.elapsed().as_secs_f64(),
        out.train_steps,
        out.target_syncs
    );
    save_checkpoint(&args.out, &out.checkpoint(&world, &config))?;
    if let Some(path) = &args.curve {
        fs::write(path, curve_csv(&out.curve))?;
    }
    if !args.check {
        return Ok(true);
    }
    let mut policy = GreedyDqn { network: out.network };
    let m = Metrics::from_episodes(&evaluate_episodes(&world, &mut policy, &config, config.ser, config.eval_dialogues)?);
    print_metrics("dqn", config.ser, &m);
    Ok(report(&check_cell("dqn", config.ser, &m)))
}

fn load_policy(world: &World, config: &mut RunConfig, kind: &str, checkpoint: Option<&Path>) -> Result<Box<dyn DialoguePolicy>> {
    match kind {
        "rule" => Ok(Box::new(RulePolicy::new(&world.ontology, config.tau))),
        "dqn" => {
            let path = checkpoint.context("--policy dqn needs --checkpoint")?;
            let ckpt = load_checkpoint(path, &world.ontology).with_context(|| format!("loading {}", path.display()))?;
            config.include_turn = ckpt.meta.include_turn;
            Ok(Box::new(GreedyDqn { network: ckpt.network }))
        }
        other => bail!("unknown policy `{other}` (rule | dqn)"),
    }
}

fn eval(args: EvalArgs) -> Result<bool> {
    let mut config = args.run.config()?;
    let world = args.run.world(&config)?;
    let mut policy = load_policy(&world, &mut config, &args.policy, args.checkpoint.as_deref())?;
    let episodes = evaluate_episodes(&world, policy.as_mut(), &config, config.ser, config.eval_dialogues)?;
    let m = Metrics::from_episodes(&episodes);
    print_metrics(policy.label(), config.ser, &m);
    if let Some(path) = &args.transcripts {
        let mut text = String::new();
        for (i, e) in episodes.iter().enumerate() {
            text.push_str(&format!("# dialogue {i} success={} turns={} reward={}\n", e.success, e.turns, e.total_reward));
            text.push_str(&e.transcript_log());
        }
        fs::write(path, text)?;
    }
    Ok(!args.check || report(&check_cell(policy.label(), config.ser, &m)))
}

fn sweep(args: SweepArgs) -> Result<bool> {
    let config = args.run.config()?;
    let world = args.run.world(&config)?;
    let sers = args.sers.clone().unwrap_or_else(|| SWEEP_SERS.to_vec());
    let start = Instant::now();
    let rows = ser_sweep(&world, &config, &sers, |row| {
        eprintln!(
            "[{:>6.1}s] {:<4} SER {:.1}: success {:.3} turns {:.2} reward {:.2}",
            start.elapsed().as_secs_f64(),
            row.policy,
            row.ser,
            row.metrics.success,
            row.metrics.turn,
            row.metrics.reward
        );
    })?;
    let csv = sweep_csv(&rows);
    match &args.out {
        Some(p) => fs::write(p, &csv)?,
        None => print!("{csv}"),
    }
    if let Some(p) = &args.plot {
        fs::write(p, success_plot_svg(&rows))?;
    }
    Ok(!args.check || report(&check_sweep(&rows)))
}

fn serve(args: ServeArgs) -> Result<()> {
    let dataset = match &args.dataset {
        Some(dir) => Dataset::load(dir)?,
        None => Dataset::generate(DatasetConfig { seed: args.dataset_seed, ..DatasetConfig::default() }),
    };
    let world = Arc::new(World::new(Ontology::default(), dataset));
    if let Some(p) = &args.checkpoint {
        load_checkpoint(p, &world.ontology).with_context(|| format!("loading {}", p.display()))?;
    }
    let config = ServiceConfig {
        session: SessionConfig { max_turns: args.max_turns, iou_threshold: args.iou_threshold, ..SessionConfig::default() },
        default_checkpoint: args.checkpoint,
        static_dir: args.static_dir,
    };
    let runtime = tokio::runtime::Runtime::new()?;
    eprintln!("listening on http://{}", args.addr);
    runtime.block_on(imgdial_service::serve(args.addr, AppState::new(world, config)))?;
    Ok(())
}
