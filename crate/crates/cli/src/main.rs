use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use tsfex_core::event::Grain;
use tsfex_core::pipeline::{cmd_featurize, cmd_gen, cmd_predict, cmd_score, cmd_train, cmd_tune, PipelineConfig};

/// Proximity classification from contact-event sensor logs.
#[derive(Debug, Parser)]
#[command(name = "tsfex", version)]
struct Cli {
    /// TOML pipeline configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed (and the generator seed for `gen`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic corpus: `<out>/events/*.txt` and `<out>/key.csv`.
    Gen(GenArgs),
    /// Fit per-grain featurizers and write feature matrices.
    Featurize(FeaturizeArgs),
    /// Train the fine and coarse models into a bundle.
    Train(TrainArgs),
    /// Bayesian tuning of both boosters on a holdout split.
    Tune(TuneArgs),
    /// Predict distances for a directory of event files.
    Predict(PredictArgs),
    /// Score predictions against a key.
    Score(ScoreArgs),
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    n_events: Option<usize>,
    /// RSSI noise standard deviation in dB.
    #[arg(long)]
    noise_sd: Option<f64>,
}

#[derive(Debug, Args)]
struct FeaturizeArgs {
    /// Directory of event files.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory for matrices, schemas and featurizers.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Directory written by `featurize`.
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    key: Option<PathBuf>,
    /// Bundle path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TuneArgs {
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    key: Option<PathBuf>,
    /// Directory for the tuned config and trial histories.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    bundle: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Prediction CSV path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    #[arg(long)]
    predictions: Option<PathBuf>,
    #[arg(long)]
    key: Option<PathBuf>,
    /// Directory for `report.txt` and `report.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Usage and configuration problems exit 1; everything else exits 2.
enum Failure {
    Usage(anyhow::Error),
    Data(anyhow::Error),
}

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

fn classify(e: tsfex_core::Error) -> Failure {
    match e {
        tsfex_core::Error::InvalidInput(_) | tsfex_core::Error::Toml(_) => Failure::Usage(e.into()),
        other => Failure::Data(other.into()),
    }
}

fn resolve(flag: Option<PathBuf>, configured: &Option<PathBuf>, what: &str) -> Result<PathBuf, Failure> {
    flag.or_else(|| configured.clone())
        .ok_or_else(|| usage(anyhow!("no {what} given; pass it as a flag or set it under [paths]")))
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, Failure> {
    let mut config = match &cli.config {
        Some(path) => {
            PipelineConfig::load(path).with_context(|| format!("loading config {}", path.display())).map_err(usage)?
        }
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
        config.gen.seed = seed;
    }
    Ok(config)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut config = load_config(&cli)?;
    match cli.command {
        Command::Gen(args) => {
            if let Some(n) = args.n_events {
                config.gen.n_events = n;
            }
            if let Some(sd) = args.noise_sd {
                config.gen.rssi_noise_sd = sd;
            }
            config.gen.validate().map_err(classify)?;
            let corpus = cmd_gen(&config.gen, &args.out).map_err(classify)?;
            println!("wrote {} events to {}", corpus.len(), args.out.display());
        }
        Command::Featurize(args) => {
            let data = resolve(args.data, &config.paths.data_dir, "event directory")?;
            let out = resolve(args.out, &config.paths.features_dir, "features directory")?;
            let featurized = cmd_featurize(&config, &data, &out).map_err(classify)?;
            for g in Grain::BOTH {
                if let Some((_, m)) = featurized.get(g) {
                    println!("{g}: {} events x {} features", m.n_rows(), m.n_cols());
                }
            }
        }
        Command::Train(args) => {
            let features = resolve(args.features, &config.paths.features_dir, "features directory")?;
            let key = resolve(args.key, &config.paths.key_file, "key file")?;
            let out = resolve(args.out, &config.paths.bundle, "bundle path")?;
            let bundle = cmd_train(&config, &features, &key, &out).map_err(classify)?;
            for g in Grain::BOTH {
                match bundle.model(g) {
                    Some(m) => println!("{g}: training accuracy {:.4}", m.train_accuracy),
                    None => println!("{g}: absent"),
                }
            }
        }
        Command::Tune(args) => {
            let features = resolve(args.features, &config.paths.features_dir, "features directory")?;
            let key = resolve(args.key, &config.paths.key_file, "key file")?;
            let (_, histories) = cmd_tune(&config, &features, &key, &args.out).map_err(classify)?;
            for (g, result) in &histories {
                println!("{g}: best holdout nDCF {:.4} (trial {})", result.best.objective, result.best.index);
            }
        }
        Command::Predict(args) => {
            let bundle = resolve(args.bundle, &config.paths.bundle, "bundle path")?;
            let data = resolve(args.data, &config.paths.data_dir, "event directory")?;
            let out = resolve(args.out, &config.paths.predictions, "predictions path")?;
            let predictions = cmd_predict(&bundle, &data, &out, config.max_skip_fraction).map_err(classify)?;
            println!("wrote {} predictions to {}", predictions.len(), out.display());
        }
        Command::Score(args) => {
            let predictions = resolve(args.predictions, &config.paths.predictions, "predictions path")?;
            let key = resolve(args.key, &config.paths.key_file, "key file")?;
            let out = resolve(args.out, &config.paths.report_dir, "report directory")?;
            let report = cmd_score(&predictions, &key, &config.eval, &out).map_err(classify)?;
            print!("{}", report.to_text());
        }
    }
    Ok(())
}

fn report(e: &anyhow::Error) {
    eprintln!("error: {e:#}");
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            report(&e);
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            report(&e);
            ExitCode::from(2)
        }
    }
}
