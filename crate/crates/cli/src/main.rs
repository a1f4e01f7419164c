use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use clap::{Parser, Subcommand};
use sdai_cli::commands::{self, DataSource, ModelSource, GRADCHECK_TOLERANCE};
use sdai_cli::teleop::{Bridge, BridgeConfig};
use sdai_cli::{CliError, ExperimentConfig, Result};

#[derive(Parser)]
#[command(name = "sdai", version, about = "Imitation-driving pipeline: collect, train, evaluate, explain, serve")]
struct Cli {
    /// key=value experiment config file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// override one config key, e.g. --set epochs=4 (repeatable)
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Record expert demonstration runs
    Collect {
        #[arg(long)]
        out: PathBuf,
        /// number of runs (overrides n_runs)
        #[arg(long)]
        runs: Option<usize>,
        /// first run seed (overrides seed)
        #[arg(long)]
        seed: Option<u64>,
        /// upload every run to the data service at this address
        #[arg(long, value_name = "HOST:PORT")]
        upload: Option<String>,
    },
    /// Train the steering policy
    Train {
        #[arg(long)]
        out: PathBuf,
        /// directory of .sdep episodes
        #[arg(long, conflicts_with_all = ["storage", "dataset"])]
        episodes: Option<PathBuf>,
        /// data-service storage directory
        #[arg(long, conflicts_with = "dataset")]
        storage: Option<PathBuf>,
        /// only stored runs with this scenario tag
        #[arg(long, requires = "storage")]
        tag: Option<String>,
        /// encoded dataset file
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// train without slit augmentation
        #[arg(long)]
        baseline: bool,
    },
    /// Closed-loop evaluation over the misalignment sweep
    Eval {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, required_unless_present = "expert")]
        model: Option<PathBuf>,
        /// evaluate the pure-pursuit expert instead of a model
        #[arg(long)]
        expert: bool,
    },
    /// Grad-CAM overlay and depth-head view for one episode sample
    Attention {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        episode: PathBuf,
        #[arg(long, default_value_t = 0)]
        index: usize,
    },
    /// Finite-difference gradient check of the policy network
    Gradcheck {
        #[arg(long, value_delimiter = ',', default_values_t = [1u64, 2, 3])]
        seeds: Vec<u64>,
        #[arg(long, default_value_t = 200)]
        min_params: usize,
    },
    /// Run the run-ingest and model-distribution service
    Serve {
        #[arg(long)]
        storage: PathBuf,
        #[arg(long, env = "SDAI_PORT", default_value_t = 7878)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
    /// Run the simulator behind the teleoperation session protocol
    TeleopBridge {
        /// recorded episodes go here
        #[arg(long)]
        out: PathBuf,
        #[arg(long, env = "SDAI_TELEOP_PORT", default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// drive with this policy and stream its attention
        #[arg(long)]
        model: Option<PathBuf>,
        /// advance one tick per CONTROL message
        #[arg(long)]
        lockstep: bool,
        /// static files served over plain HTTP
        #[arg(long)]
        assets: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = ExperimentConfig::load(cli.config.as_deref(), &cli.overrides)?;
    match cli.command {
        Command::Collect { out, runs, seed, upload } => {
            cfg.n_runs = runs.unwrap_or(cfg.n_runs);
            cfg.seed = seed.unwrap_or(cfg.seed);
            let collected = commands::collect(&cfg, &out, upload.as_deref())?;
            let samples: usize = collected.iter().map(|r| r.samples).sum();
            println!("collected {} runs ({samples} samples) into {}", collected.len(), out.join("episodes").display());
            if upload.is_some() {
                println!("uploaded {} of {} runs", collected.len(), cfg.n_runs);
            }
        }
        Command::Train { out, episodes, storage, tag, dataset, baseline } => {
            let source = match (episodes, storage, dataset) {
                (Some(d), None, None) => DataSource::Episodes(d),
                (None, Some(dir), None) => DataSource::Storage { dir, scenario_tag: tag },
                (None, None, Some(f)) => DataSource::Dataset(f),
                _ => return Err(CliError::Usage("give exactly one of --episodes, --storage, --dataset".into())),
            };
            let r = commands::train(&cfg, &source, baseline, &out)?;
            println!(
                "trained on {} entries in {:.1} s: loss {:.6} -> {:.6}; model {}",
                r.entries,
                r.seconds,
                r.loss_trace.first().copied().unwrap_or(f64::NAN),
                r.loss_trace.last().copied().unwrap_or(f64::NAN),
                r.model_path.display()
            );
        }
        Command::Eval { out, model, expert } => {
            let source = match (model, expert) {
                (_, true) => ModelSource::Expert,
                (Some(m), false) => ModelSource::File(m),
                (None, false) => return Err(CliError::Usage("--model or --expert is required".into())),
            };
            let r = commands::eval(&cfg, &source, &out)?;
            println!("{:>8} {:>8} {:>4} {:>7} {:>10} {:>9} {:>9} {:>8}", "shift_px", "yaw_rad", "seed", "start", "completion", "mean_lat", "max_lat", "rms");
            for row in r.rows.iter().chain(std::iter::once(&r.nominal)) {
                let m = &row.metrics;
                println!(
                    "{:>8} {:>8} {:>4} {:>7.3} {:>10.3} {:>9.4} {:>9.4} {:>8.4}",
                    row.misalignment.shift_px,
                    row.misalignment.yaw_rad,
                    row.seed,
                    row.start_lateral,
                    m.completion,
                    m.mean_abs_lateral_error,
                    m.max_abs_lateral_error,
                    row.tracking_rms.unwrap_or(f64::NAN)
                );
            }
            println!("nominal run (last row) telemetry: {}", out.join("telemetry_nominal.csv").display());
        }
        Command::Attention { out, model, episode, index } => {
            let r = commands::attention(&model, &episode, index, &out)?;
            println!(
                "wrote {}×{} overlay{} to {}",
                r.width,
                r.height,
                if r.depth.is_some() { " and depth view" } else { "" },
                out.display()
            );
        }
        Command::Gradcheck { seeds, min_params } => {
            let t0 = Instant::now();
            let reports = commands::gradcheck_all(&seeds, min_params)?;
            for r in &reports {
                println!("seed {}: {} parameters, max relative error {:.3e}", r.seed, r.checked, r.max_rel_error);
                for l in &r.layers {
                    println!("  {:<24} {:>5} checked  max {:.3e}", l.name, l.checked, l.max_rel_error);
                }
            }
            println!("{:.1} s", t0.elapsed().as_secs_f64());
            if !commands::gradcheck_passed(&reports) {
                return Err(CliError::Numerical(format!("relative gradient error above {GRADCHECK_TOLERANCE:e}")));
            }
            println!("PASS (< {GRADCHECK_TOLERANCE:e})");
        }
        Command::Serve { storage, port, host } => {
            let server = commands::bind_server(&storage, &host, port)?;
            println!("listening on {}", server.local_addr()?);
            server.run()?;
        }
        Command::TeleopBridge { out, port, host, model, lockstep, assets } => {
            let mut bc = BridgeConfig::from_experiment(&cfg, out);
            bc.lockstep = lockstep;
            bc.assets = assets;
            bc.tick = Duration::from_secs_f64(cfg.sim.dt);
            if let Some(m) = model {
                bc.model = Some(
                    sdai_nn::model::load_model(&m).map_err(|e| CliError::Data(format!("model {}: {e}", m.display())))?,
                );
            }
            let bridge = Bridge::bind(bc, (host.as_str(), port))?;
            println!("listening on {}", bridge.local_addr()?);
            bridge.run()?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
