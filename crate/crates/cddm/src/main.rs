//! Command-line front end: experiment runs, single trainings, grid search,
//! plot-data extraction and batch prediction.
//!
//! Exit codes: 0 success, 1 configuration error, 2 data or model file error,
//! 3 numerical failure, 4 partial result (candidate cap hit).

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};

use cddm::error::Error;
use cddm::experiment::{self, CvConfig, DataSpec, ExperimentConfig};
use cddm::network::{self, NetworkModel};
use cddm::trainer::{self, TrainError, TrainMode};

#[derive(Parser)]
#[command(
    name = "cddm",
    version,
    about = "Randomized single-hidden-layer networks built by data-driven node placement"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a multi-trial experiment described by a config file.
    Run {
        /// key = value experiment description
        #[arg(long)]
        config: PathBuf,
    },
    /// Train one model and save it.
    Train(Box<TrainArgs>),
    /// Select k' and m by cross-validation over a grid.
    Crossval {
        /// key = value grid description
        #[arg(long)]
        config: PathBuf,
    },
    /// Extract plot-ready CSV from a finished run's records.
    Plotdata {
        /// output directory of a previous `run`
        #[arg(long)]
        records: PathBuf,
        #[arg(long, value_enum)]
        kind: PlotKind,
        /// write here instead of stdout
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Batch predictions from a saved model.
    Predict {
        #[arg(long)]
        model: PathBuf,
        /// CSV of inputs in original units (header optional, extra target
        /// column ignored)
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// map predictions back to original target units
        #[arg(long)]
        denormalize: bool,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PlotKind {
    Convergence,
    Theta,
    Fitcurve,
}

#[derive(Args)]
struct TrainArgs {
    /// KEEL-format data file
    #[arg(long, conflicts_with = "synthetic")]
    data: Option<PathBuf>,
    /// synthetic generator: tf1 or tf2
    #[arg(long)]
    synthetic: Option<String>,
    #[arg(long, value_parser = TrainMode::from_str)]
    mode: TrainMode,
    /// hidden nodes (target count for cddm)
    #[arg(long)]
    m: usize,
    /// neighborhood size including the anchor
    #[arg(long)]
    k_prime: usize,
    /// acceptance threshold start (negative: required improvement)
    #[arg(long, default_value_t = -0.01, allow_hyphen_values = true)]
    theta0: f64,
    /// candidates without improvement before the threshold halves
    #[arg(long = "Q", default_value_t = 50)]
    stall_q: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// where to save the trained model
    #[arg(long)]
    out: PathBuf,
    /// candidate budget for cddm; 0 means 200*m
    #[arg(long, default_value_t = 0)]
    max_candidates: usize,
    #[arg(long)]
    allow_small_k: bool,
    /// use the explicit pseudoinverse instead of the incremental solver
    #[arg(long)]
    naive_pinv: bool,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    #[arg(long, default_value_t = 0.2)]
    noise: f64,
    #[arg(long, default_value_t = 0.75)]
    train_fraction: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_thread_pool();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 1,
        Error::Parse { .. }
        | Error::Io { .. }
        | Error::Dimension { .. }
        | Error::ModelVersion { .. }
        | Error::ModelTruncated(_) => 2,
        Error::NonFinite(_) | Error::Numerical(_) | Error::SolverState(_) => 3,
    }
}

fn init_thread_pool() {
    if let Ok(v) = std::env::var("CDDM_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n >= 1 => {
                // Ignore failure: the pool can only be built once.
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => eprintln!("warning: ignoring CDDM_THREADS='{v}' (want a positive integer)"),
        }
    }
}

fn dispatch(command: Command) -> Result<ExitCode, Error> {
    match command {
        Command::Run { config } => cmd_run(&config),
        Command::Train(args) => cmd_train(&args),
        Command::Crossval { config } => cmd_crossval(&config),
        Command::Plotdata {
            records,
            kind,
            output,
        } => cmd_plotdata(&records, kind, output.as_deref()),
        Command::Predict {
            model,
            input,
            output,
            denormalize,
        } => cmd_predict(&model, &input, &output, denormalize),
    }
}

fn cmd_run(config: &Path) -> Result<ExitCode, Error> {
    let cfg = ExperimentConfig::from_file(config)?;
    warn_small_k(&cfg);
    let summary = experiment::run_experiment(&cfg)?;
    print!("{}", summary.summary_text);
    println!("records written to {}", summary.output_dir.display());
    if summary.successes == 0 {
        eprintln!("error: all {} trials failed", summary.trials);
        return Ok(ExitCode::from(if summary.all_failures_partial { 4 } else { 3 }));
    }
    Ok(ExitCode::SUCCESS)
}

fn warn_small_k(cfg: &ExperimentConfig) {
    if cfg.allow_small_k {
        eprintln!(
            "warning: allow_small_k is set; hyperplanes may be fit from fewer \
             points than input dimensions"
        );
    }
}

fn cmd_train(args: &TrainArgs) -> Result<ExitCode, Error> {
    let dataset = match (&args.data, &args.synthetic) {
        (Some(path), None) => DataSpec::Keel(path.clone()),
        (None, Some(name)) => {
            let spec = DataSpec::parse(name);
            if !spec.is_synthetic() {
                return Err(Error::Config(format!(
                    "--synthetic takes tf1 or tf2, got '{name}'"
                )));
            }
            spec
        }
        _ => {
            return Err(Error::Config(
                "exactly one of --data and --synthetic is required".into(),
            ));
        }
    };
    let (def_train, def_test) = match dataset {
        DataSpec::Tf1 => (1000, 300),
        _ => (5000, 5000),
    };
    let cfg = ExperimentConfig {
        dataset,
        mode: args.mode,
        m: args.m,
        k_prime: args.k_prime,
        theta0: args.theta0,
        stall_q: args.stall_q,
        trials: 1,
        master_seed: args.seed,
        output_dir: PathBuf::from("."),
        n_train: args.n_train.unwrap_or(def_train),
        n_test: args.n_test.unwrap_or(def_test),
        noise: args.noise,
        train_fraction: args.train_fraction,
        max_candidates: args.max_candidates,
        allow_small_k: args.allow_small_k,
        naive_pinv: args.naive_pinv,
        resplit_per_trial: false,
    };
    cfg.validate()?;
    warn_small_k(&cfg);
    let source = experiment::build_source(&cfg)?;
    let td = source.trial_data(args.seed)?;
    match trainer::train(&td.train, &cfg.train_config(), Some(&td.test), &td.normalizer) {
        Ok((model, record)) => {
            network::save_model(&model, &args.out)?;
            println!(
                "trained {} nodes ({} candidates) in {:.2}s",
                model.node_count(),
                record.candidates_total,
                record.wall_time.as_secs_f64()
            );
            println!("train RMSE {}", record.final_train_rmse);
            if let Some(test) = record.final_test_rmse {
                println!("test RMSE {test}");
            }
            println!("model saved to {}", args.out.display());
            Ok(ExitCode::SUCCESS)
        }
        Err(TrainError::Base(e)) => Err(e),
        Err(TrainError::CandidateCap {
            accepted,
            requested,
            cap,
            partial,
        }) => {
            let (model, record) = *partial;
            network::save_model(&model, &args.out)?;
            eprintln!(
                "warning: candidate cap {cap} reached with {accepted} of {requested} \
                 nodes accepted; partial model saved to {}",
                args.out.display()
            );
            println!("train RMSE {}", record.final_train_rmse);
            Ok(ExitCode::from(4))
        }
    }
}

fn cmd_crossval(config: &Path) -> Result<ExitCode, Error> {
    let cfg = CvConfig::from_file(config)?;
    let summary = experiment::run_crossval(&cfg)?;
    print!("{}", summary.summary_text);
    println!("records written to {}", summary.output_dir.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_plotdata(
    records: &Path,
    kind: PlotKind,
    output: Option<&Path>,
) -> Result<ExitCode, Error> {
    let text = match kind {
        PlotKind::Convergence => experiment::plot_convergence(records)?,
        PlotKind::Theta => experiment::plot_theta(records)?,
        PlotKind::Fitcurve => experiment::plot_fitcurve(records)?,
    };
    match output {
        Some(path) => std::fs::write(path, &text).map_err(|e| Error::io(path, e))?,
        None => print!("{text}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_predict(
    model_path: &Path,
    input: &Path,
    output: &Path,
    denormalize: bool,
) -> Result<ExitCode, Error> {
    let model: NetworkModel<f64> = network::load_model(model_path)?;
    let raw = experiment::read_inputs_csv(input, model.input_dim())?;
    let mut predictions = Vec::with_capacity(raw.len());
    for row in &raw {
        let x = model.normalizer.normalize_input(row)?;
        let y = model.predict(&x)?;
        predictions.push(if denormalize {
            model.normalizer.denormalize_target(y)
        } else {
            y
        });
    }
    let text = experiment::predictions_csv(&raw, &predictions);
    std::fs::write(output, &text).map_err(|e| Error::io(output, e))?;
    println!("{} predictions written to {}", raw.len(), output.display());
    Ok(ExitCode::SUCCESS)
}
