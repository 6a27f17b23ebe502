use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use flowmap::app;
use flowmap::config::{parse_vector, RunConfig};
use flowmap::error::{Error, Result};

/// Learn and evaluate flow maps of the Lorenz system from noise-cloud data.
#[derive(Parser)]
#[command(name = "flowmap", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    mode: Option<String>,
    /// none, euler, euler-ec, rk4 or rk4-ec.
    #[arg(long)]
    constraints: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Discount factor (ac mode).
    #[arg(long)]
    gamma: Option<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        for kv in &self.overrides {
            cfg.set_assignment(kv)?;
        }
        for (key, value) in [
            ("mode", &self.mode),
            ("constraints", &self.constraints),
            ("seed", &self.seed),
            ("gamma", &self.gamma),
        ] {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        if let Some(dir) = &self.out_dir {
            cfg.set("out_dir", &dir.to_string_lossy())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the truth trajectory and build the noise-cloud dataset.
    Gen(ConfigArgs),
    /// Train a flow map on a generated dataset.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Directory holding dataset.csv (defaults to the output directory).
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Roll a checkpointed flow map out from an initial state.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated initial state.
        #[arg(long, default_value = "0,1,0", allow_hyphen_values = true)]
        x0: String,
        #[arg(long, default_value_t = 1.5e-2)]
        dt: f64,
        #[arg(long, default_value_t = 9.0)]
        t_end: f64,
        #[arg(long, default_value = "prediction.csv")]
        out: PathBuf,
    },
    /// Compare a prediction against a fine truth trajectory.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, default_value = "compare.csv")]
        out: PathBuf,
    },
    /// Check analytic gradients against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Divergence(_) | Error::IntegrationBlowup { .. } => 3,
        Error::Io { .. } | Error::Parse { .. } | Error::Checkpoint(_) => 4,
        Error::Config { .. }
        | Error::InvalidArgument(_)
        | Error::Misuse(_)
        | Error::Shape { .. }
        | Error::GridMismatch(_)
        | Error::InsufficientData(_) => 2,
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Gen(args) => {
            let cfg = args.resolve()?;
            println!("{}", app::cmd_gen(&cfg)?);
        }
        Command::Train { config, data } => {
            let cfg = config.resolve()?;
            let data = data.unwrap_or_else(|| cfg.out_dir.clone());
            let summary = app::cmd_train(&cfg, &data)?;
            println!("{summary}");
            app::check_divergence(&summary)?;
        }
        Command::Predict {
            checkpoint,
            x0,
            dt,
            t_end,
            out,
        } => {
            let x0 = parse_vector("x0", &x0)?;
            println!("{}", app::cmd_predict(&checkpoint, &x0, dt, t_end, &out)?);
        }
        Command::Eval { pred, truth, out } => {
            println!("{}", app::cmd_eval(&pred, &truth, &out)?.summary());
        }
        Command::Gradcheck { seed } => {
            let summary = app::gradcheck(seed)?;
            println!("{summary}");
            if !summary.passed() {
                println!("gradcheck FAILED");
                return Ok(ExitCode::from(1));
            }
            println!("gradcheck passed");
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
