//! Command-line entry points: generate, train, track, eval.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mot3d::config::RunConfig;
use mot3d::eval::trajectories_csv;
use mot3d::neural::{Checkpoint, EpochLog, Stage, TrackerNet, Trainer};
use mot3d::pipeline::{evaluate_dataset, generate_dataset, load_dataset, track_dataset, training_graphs, Tracker};
use mot3d::{Error, Result};

#[derive(Parser)]
#[command(name = "mot3d", version, about = "3D multi-object tracking: simulate, train, track, evaluate")]
struct Cli {
    /// TOML run configuration; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for per-sequence work (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Prints the effective configuration as TOML and exits.
    #[arg(long)]
    print_config: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulates sequences and writes ground truth, detections and an index.
    Generate(GenerateArgs),
    /// Trains the association network on a generated dataset.
    Train(TrainArgs),
    /// Writes one tracklet file per sequence.
    Track(TrackArgs),
    /// Scores tracklets against ground truth.
    Eval(EvalArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Overrides `generate.sequences`.
    #[arg(long)]
    sequences: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory written by `generate`.
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Per-epoch loss log (CSV); defaults to the checkpoint path with a
    /// `.csv` extension.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Continues training from this checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Stops after this many epochs in this run.
    #[arg(long)]
    epochs: Option<usize>,
    /// Trains with zero node embeddings.
    #[arg(long)]
    no_geometry: bool,
}

#[derive(Args)]
#[command(group = clap::ArgGroup::new("model").required(true).args(["checkpoint", "heuristic"]))]
struct TrackArgs {
    /// Dataset directory written by `generate`.
    #[arg(long)]
    data: PathBuf,
    /// Directory for the tracklet files.
    #[arg(long)]
    out: PathBuf,
    /// Trained network checkpoint.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Links detections by nearest center instead of the network.
    #[arg(long, conflicts_with_all = ["checkpoint", "no_geometry"])]
    heuristic: bool,
    /// Replaces node embeddings by zeros at inference.
    #[arg(long)]
    no_geometry: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Dataset directory holding the ground truth.
    #[arg(long)]
    data: PathBuf,
    /// Directory of tracklet files written by `track`.
    #[arg(long)]
    tracklets: PathBuf,
    /// Writes `report.json`, `report.txt` and `trajectories.csv` here.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_invalid_input() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => {
            require_file(p)?;
            RunConfig::load(p)?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(Error::Config("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    if cli.print_config {
        print!("{}", cfg.to_toml()?);
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err(Error::InvalidInput("no command given; see --help".into()));
    };
    match command {
        Command::Generate(a) => generate(cfg, a),
        Command::Train(a) => train(cfg, a),
        Command::Track(a) => track(cfg, a),
        Command::Eval(a) => eval(cfg, a),
    }
}

fn require_file(p: &Path) -> Result<()> {
    if p.is_file() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{} does not exist", p.display())))
    }
}

fn generate(mut cfg: RunConfig, a: GenerateArgs) -> Result<()> {
    if let Some(n) = a.sequences {
        cfg.generate.sequences = n;
    }
    let idx = generate_dataset(&cfg, &a.out)?;
    log::info!("wrote {} sequences to {}", idx.sequences.len(), a.out.display());
    Ok(())
}

fn train(mut cfg: RunConfig, a: TrainArgs) -> Result<()> {
    cfg.validate()?;
    if a.no_geometry {
        cfg.gnn.use_geometry = false;
    }
    let mut trainer = match &a.resume {
        Some(p) => {
            require_file(p)?;
            Checkpoint::load(p)?.into_trainer()?
        }
        None => Trainer::new(TrackerNet::new(cfg.gnn.clone())?, cfg.schedule.clone(), cfg.loss)?,
    };
    let data = load_dataset(&a.data)?;
    let graphs = training_graphs(&data, &cfg)?;
    let log_path = a.log.clone().unwrap_or_else(|| a.checkpoint.with_extension("csv"));
    // the log always holds the full history, so a resumed run rewrites it
    let mut log = File::create(&log_path)?;
    writeln!(log, "epoch,stage,track_loss,noc_loss,rec_loss,total_loss")?;
    for e in &trainer.history {
        write_epoch(&mut log, e)?;
    }
    let mut failure = None;
    let mut ran = 0usize;
    trainer.run(&graphs, a.epochs, |e| {
        if failure.is_none() {
            failure = write_epoch(&mut log, e).err();
        }
        ran += 1;
    })?;
    if let Some(e) = failure {
        return Err(e.into());
    }
    Checkpoint::from_trainer(&trainer).save(&a.checkpoint)?;
    log::info!(
        "trained {} epochs ({} total), checkpoint {}",
        ran,
        trainer.epochs_done(),
        a.checkpoint.display()
    );
    Ok(())
}

fn write_epoch(w: &mut impl Write, e: &EpochLog) -> std::io::Result<()> {
    let stage = match e.stage {
        Stage::Pretrain => "pretrain",
        Stage::Joint => "joint",
    };
    writeln!(
        w,
        "{},{stage},{:?},{:?},{:?},{:?}",
        e.epoch, e.track_loss, e.noc_loss, e.rec_loss, e.total_loss
    )
}

fn track(cfg: RunConfig, a: TrackArgs) -> Result<()> {
    cfg.validate()?;
    let net = match &a.checkpoint {
        Some(p) => {
            require_file(p)?;
            let mut net = Checkpoint::load(p)?.net()?;
            if a.no_geometry {
                net.config.use_geometry = false;
            }
            Some(net)
        }
        None => None,
    };
    let tracker = match &net {
        Some(n) => Tracker::Gnn(n),
        None => Tracker::Heuristic,
    };
    let out = track_dataset(&a.data, &a.out, tracker, &cfg)?;
    log::info!("wrote tracklets for {} sequences to {}", out.len(), a.out.display());
    Ok(())
}

fn eval(cfg: RunConfig, a: EvalArgs) -> Result<()> {
    cfg.validate()?;
    let ev = evaluate_dataset(&a.data, &a.tracklets, cfg.eval.radius)?;
    let table = ev.report.table();
    print!("{table}");
    if let Some(out) = &a.out {
        std::fs::create_dir_all(out)?;
        std::fs::write(out.join("report.json"), ev.report.to_json()?)?;
        std::fs::write(out.join("report.txt"), &table)?;
        std::fs::write(out.join("trajectories.csv"), trajectories_csv(&ev.predictions, &ev.ground_truth))?;
    }
    Ok(())
}
