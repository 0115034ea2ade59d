use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use imu4d_cli::config::{DeviceSpec, RunConfig, SplitSel};
use imu4d_cli::pipeline;
use imu4d_cli::{CliError, CliResult};
use imu4d_core::model::Variant;

#[derive(Parser)]
#[command(name = "imu4d", version, about = "Recover motion, a caption and a scene layout from body-worn IMUs")]
struct Cli {
    /// TOML run configuration; `IMU4D_<SECTION>_<KEY>` variables override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for synthesis, tokenizer fitting, model init, training and sampling.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_parser = clap::value_parser!(u8).range(1..=2))]
    stage: Option<u8>,
    #[arg(long, global = true, value_parser = ["bi", "ar"])]
    variant: Option<String>,
    /// A device count (1-5) or a comma list such as `ear,left_wrist`.
    #[arg(long, global = true)]
    devices: Option<DeviceSpec>,
    /// Evaluation frame budget.
    #[arg(long, global = true)]
    frames: Option<usize>,
    #[arg(long, global = true)]
    temperature: Option<f64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate procedural scenarios into the data directory.
    Synth,
    /// Fit the motion tokenizer and caption vocabulary on the training split.
    FitTokenizer,
    /// Train the model for the configured stage.
    Train,
    /// Run a trained model on one IMU file.
    Infer {
        #[arg(long)]
        imu: PathBuf,
        /// Output prefix; `.motion`, `.txt` and `.scene` are appended.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a split and write reports.
    Eval {
        /// Score the ground truth against itself.
        #[arg(long)]
        oracle: bool,
        /// Evaluate the long-horizon frame budget.
        #[arg(long)]
        long_horizon: bool,
        #[arg(long, value_parser = ["train", "val", "test", "all"])]
        split: Option<String>,
    },
}

fn apply_flags(cli: &Cli, cfg: &mut RunConfig) -> CliResult<()> {
    if let Some(s) = cli.seed {
        cfg.synth.seed = s;
        cfg.tokenizer.vq.seed = s;
        cfg.model.seed = s;
        cfg.train.seed = s;
        cfg.eval.seed = s;
    }
    if let Some(s) = cli.stage {
        cfg.train.stage = s;
    }
    if let Some(v) = &cli.variant {
        cfg.model.variant = Variant::from_name(v).expect("clap restricts the values");
    }
    if let Some(d) = cli.devices {
        cfg.eval.devices = d;
    }
    if let Some(t) = cli.temperature {
        cfg.eval.temperature = t;
    }
    if let Cmd::Eval { oracle, long_horizon, split } = &cli.cmd {
        cfg.eval.oracle |= oracle;
        cfg.eval.long_horizon |= long_horizon;
        if let Some(s) = split {
            cfg.eval.split = toml::Value::String(s.clone()).try_into::<SplitSel>().map_err(|e| CliError::Config(e.to_string()))?;
        }
    }
    if let Some(f) = cli.frames {
        if cfg.eval.long_horizon {
            cfg.eval.long_frames = f;
        } else {
            cfg.eval.frames = f;
        }
    }
    cfg.validate()
}

fn run(cli: &Cli) -> CliResult<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref(), std::env::vars())?;
    apply_flags(cli, &mut cfg)?;
    match &cli.cmd {
        Cmd::Synth => {
            let entries = pipeline::cmd_synth(&cfg)?;
            println!("sequences = {}", entries.len());
            println!("data_dir = {}", cfg.paths.data_dir.display());
        }
        Cmd::FitTokenizer => {
            pipeline::cmd_fit_tokenizer(&cfg)?;
            println!("tokenizer = {}", pipeline::tokenizer_path(&cfg).display());
        }
        Cmd::Train => {
            let s = pipeline::cmd_train(&cfg)?;
            println!("checkpoint = {}", s.path.display());
            println!("stage = {}", s.stage.number());
            println!("steps = {}", s.steps);
            println!("final_loss = {:.6}", s.final_loss);
        }
        Cmd::Infer { imu, out } => {
            let o = pipeline::cmd_infer(&cfg, imu, out)?;
            println!("caption = {}", o.text);
            println!("motion = {}", o.motion.display());
            if let Some(s) = o.scene {
                println!("scene = {}", s.display());
            }
        }
        Cmd::Eval { .. } => {
            let report = pipeline::cmd_eval(&cfg)?;
            print!("{}", report.summary());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_timestamp(None).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
