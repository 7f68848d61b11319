//! Command-line surface of the `arflow` binary.

use std::path::{Path, PathBuf};
use std::io::Write;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use super::commands::*;
use super::config::{Overrides, RunConfig};
use crate::bench::Mechanism;
use crate::error::{Error, Result};
use crate::sampler::SamplerMode;

#[derive(Debug, Parser)]
#[command(name = "arflow", version, about = "Autoregressive flow matching at desk scale")]
pub struct Cli {
    /// TOML run configuration; defaults are used for anything missing.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory for every artifact of the run.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the training and held-out datasets.
    MakeData,
    /// Train a model, writing checkpoints and a metrics CSV.
    Train(TrainFlags),
    /// Sample latents with the EMA weights of a checkpoint.
    Sample(SampleFlags),
    /// Compare samples against a reference dataset.
    Eval(EvalFlags),
    /// Time the attention kernels over sequence lengths.
    Bench(BenchFlags),
    /// Summarise a checkpoint.
    Inspect(InspectFlags),
}

#[derive(Debug, Args)]
pub struct TrainFlags {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Continue from the checkpoint in the output directory.
    #[arg(long)]
    pub resume: bool,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long, default_value_t = 10)]
    pub log_every: u64,
}

#[derive(Debug, Args)]
pub struct SampleFlags {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Class to sample; every class when omitted.
    #[arg(long)]
    pub class: Option<usize>,
    #[arg(long, default_value_t = 16)]
    pub count: usize,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub cfg_scale: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Euler-Maruyama instead of Euler.
    #[arg(long)]
    pub sde: bool,
    #[arg(long)]
    pub diffusion_scale: Option<f64>,
    /// Drop the cached states between steps.
    #[arg(long)]
    pub no_cache: bool,
    /// Write per-channel PGM grids next to the latents.
    #[arg(long)]
    pub grid: bool,
}

#[derive(Debug, Args)]
pub struct EvalFlags {
    #[arg(long)]
    pub samples: Option<PathBuf>,
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long)]
    pub class: Option<usize>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchFlags {
    /// Comma-separated subset of hybrid, softmax_full, linear_causal.
    #[arg(long, value_delimiter = ',')]
    pub mechanism: Vec<Mechanism>,
    /// Comma-separated ascending sequence lengths.
    #[arg(long = "t", value_delimiter = ',')]
    pub t_list: Vec<usize>,
    #[arg(long, default_value_t = 64)]
    pub chunk: usize,
    #[arg(long, default_value_t = 64)]
    pub head_dim: usize,
    #[arg(long, default_value_t = 1)]
    pub heads: usize,
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    #[arg(long, default_value_t = 1)]
    pub warmup: usize,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectFlags {
    /// Checkpoint file; the run's checkpoint when omitted.
    pub checkpoint: Option<PathBuf>,
}

/// Exit status for an error: 2 config, 3 data format, 4 numeric failure,
/// 1 for anything else.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Contract(_) => 2,
        Error::Format(_) => 3,
        Error::NonFinite(_) | Error::Numeric(_) | Error::Singularity(_) => 4,
        Error::Shape { .. } | Error::Io(_) => 1,
    }
}

fn load_config(cli: &Cli, tweak: impl FnOnce(&mut RunConfig)) -> Result<RunConfig> {
    let ov = Overrides {
        seed: cli.seed,
        out_dir: cli.out.clone(),
        threads: cli.threads,
    };
    let mut cfg = RunConfig::load(cli.config.as_deref(), &ov)?;
    tweak(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

fn show(p: &Path) -> String {
    p.display().to_string()
}

/// Runs one parsed invocation, printing progress through `out`.
pub fn run(cli: &Cli, mut out: impl FnMut(&str)) -> Result<()> {
    match &cli.command {
        Command::MakeData => {
            let cfg = load_config(cli, |_| {})?;
            let (t, h) = cmd_make_data(&cfg)?;
            out(&format!("wrote {} and {}", show(&t), show(&h)));
        }
        Command::Train(f) => {
            let cfg = load_config(cli, |c| {
                if let Some(s) = f.steps {
                    c.train.total_steps = s;
                }
            })?;
            let args = TrainArgs {
                data: f.data.clone(),
                resume: f.resume,
                log_every: f.log_every,
            };
            let s = cmd_train(&cfg, &args, &mut out)?;
            let last = s.log.last().map_or(f64::NAN, |m| m.loss);
            out(&format!(
                "trained steps {}..{}, last loss {last:.6}, checkpoint {}",
                s.start_step,
                s.start_step + s.log.len() as u64,
                show(&s.checkpoint)
            ));
        }
        Command::Sample(f) => {
            let cfg = load_config(cli, |c| {
                let s = &mut c.sampler;
                if let Some(v) = f.cfg_scale {
                    s.cfg_scale = v;
                }
                if let Some(v) = f.steps {
                    s.steps = v;
                }
                if let Some(v) = f.diffusion_scale {
                    s.diffusion_scale = v;
                }
                if f.sde {
                    s.mode = SamplerMode::SdeEulerMaruyama;
                }
                if f.no_cache {
                    s.use_cache = false;
                }
            })?;
            let args = SampleArgs {
                checkpoint: f.checkpoint.clone(),
                class: f.class,
                count: f.count,
                output: f.output.clone(),
                grid: f.grid,
            };
            let (path, grids) = cmd_sample(&cfg, &args)?;
            out(&format!("wrote {}", show(&path)));
            for g in grids {
                out(&format!("wrote {}", show(&g)));
            }
        }
        Command::Eval(f) => {
            let cfg = load_config(cli, |_| {})?;
            let args = EvalArgs {
                samples: f.samples.clone(),
                reference: f.reference.clone(),
                class: f.class,
                output: f.output.clone(),
            };
            let reports = cmd_eval(&cfg, &args)?;
            out(super::eval::EVAL_HEADER);
            for r in &reports {
                out(&r.csv_row());
            }
        }
        Command::Bench(f) => {
            let cfg = load_config(cli, |_| {})?;
            let mut args = BenchArgs {
                chunk: f.chunk,
                head_dim: f.head_dim,
                heads: f.heads,
                repeats: f.repeats,
                warmup: f.warmup,
                output: f.output.clone(),
                ..BenchArgs::default()
            };
            if !f.mechanism.is_empty() {
                args.mechanisms = f.mechanism.clone();
            }
            if !f.t_list.is_empty() {
                args.t_list = f.t_list.clone();
            }
            let (points, summary) = cmd_bench(&cfg, &args)?;
            out(crate::bench::BENCH_HEADER);
            for p in &points {
                out(&p.csv_row());
            }
            out(summary.trim_end());
        }
        Command::Inspect(f) => {
            let path = match &f.checkpoint {
                Some(p) => p.clone(),
                None => load_config(cli, |_| {})?.path(CHECKPOINT),
            };
            out(cmd_inspect(&path)?.trim_end());
        }
    }
    Ok(())
}

/// Entry point of the binary.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let mut stdout = std::io::stdout().lock();
    // a closed pipe (e.g. `| head`) is not an error of the command
    match run(&cli, |line| {
        let _ = writeln!(stdout, "{line}");
    }) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
