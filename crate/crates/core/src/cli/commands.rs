use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::config::{RunConfig, SAMPLE_STREAM};
use super::eval::{reports_csv, EvalReport};
use super::pgm::channel_grids;
use crate::bench::{fit_scaling_exponent, sweep, to_csv, BenchPoint, Mechanism, SweepConfig};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::model::count_params;
use crate::numcore::{RngState, Tensor};
use crate::sampler::generate_many;
use crate::sequence::{load_dataset, save_dataset, CategoryDataset, LatentFile};
use crate::training::{metrics_csv, Checkpoint, StepMetrics, Trainer};

pub const TRAIN_DATA: &str = "train.arfds";
pub const HELDOUT_DATA: &str = "heldout.arfds";
pub const CHECKPOINT: &str = "checkpoint.arfckpt";
pub const METRICS: &str = "metrics.csv";
pub const SAMPLES: &str = "samples.arfds";
pub const EVAL_REPORT: &str = "eval.csv";
pub const BENCH_CSV: &str = "bench.csv";

fn or_default(p: &Option<PathBuf>, cfg: &RunConfig, name: &str) -> PathBuf {
    p.clone().unwrap_or_else(|| cfg.path(name))
}

fn ensure_dir(path: &Path) -> Result<()> {
    match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => Ok(std::fs::create_dir_all(d)?),
        _ => Ok(()),
    }
}

fn save(path: &Path, bytes: &[u8]) -> Result<()> {
    ensure_dir(path)?;
    write_atomic(path, bytes)
}

/// Writes the training and held-out datasets; returns their paths.
pub fn cmd_make_data(cfg: &RunConfig) -> Result<(PathBuf, PathBuf)> {
    let (train, heldout) = cfg.data.generate(&cfg.model, cfg.seed)?;
    let (tp, hp) = (cfg.path(TRAIN_DATA), cfg.path(HELDOUT_DATA));
    ensure_dir(&tp)?;
    save_dataset(&train, &tp)?;
    save_dataset(&heldout, &hp)?;
    Ok((tp, hp))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainArgs {
    pub data: Option<PathBuf>,
    /// Continue from the run's checkpoint if one exists.
    pub resume: bool,
    /// Print a progress line every this many steps (0 = never).
    pub log_every: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub start_step: u64,
    pub log: Vec<StepMetrics>,
    pub checkpoint: PathBuf,
}

fn read_metrics(path: &Path, upto: u64) -> Result<Vec<StepMetrics>> {
    let Ok(text) = std::fs::read_to_string(path) else {
        return Ok(Vec::new());
    };
    let bad = |l: &str| Error::Format(format!("bad metrics row {l:?}"));
    let mut rows = Vec::new();
    for line in text.lines().skip(1).filter(|l| !l.is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(bad(line));
        }
        let m = StepMetrics {
            step: f[0].parse().map_err(|_| bad(line))?,
            loss: f[1].parse().map_err(|_| bad(line))?,
            grad_norm: f[2].parse().map_err(|_| bad(line))?,
            wall_ms: f[3].parse().map_err(|_| bad(line))?,
        };
        if m.step <= upto {
            rows.push(m);
        }
    }
    Ok(rows)
}

fn load_training_data(cfg: &RunConfig, data: &Option<PathBuf>) -> Result<CategoryDataset> {
    let path = or_default(data, cfg, TRAIN_DATA);
    let ds = load_dataset(&path)?;
    if ds.latent_shape() != cfg.model.latent_shape || ds.num_classes() != cfg.model.num_classes {
        return Err(Error::Config(format!(
            "{} holds {} classes of {:?}, the model expects {} of {:?}",
            path.display(),
            ds.num_classes(),
            ds.latent_shape().dims(),
            cfg.model.num_classes,
            cfg.model.latent_shape.dims()
        )));
    }
    Ok(ds)
}

/// Trains (or resumes) and keeps the checkpoint and metrics CSV current.
pub fn cmd_train(cfg: &RunConfig, args: &TrainArgs, mut out: impl FnMut(&str)) -> Result<TrainSummary> {
    let ds = load_training_data(cfg, &args.data)?;
    let ck_path = cfg.path(CHECKPOINT);
    let metrics_path = cfg.path(METRICS);
    let mut trainer = if args.resume && ck_path.exists() {
        let mut t = Checkpoint::load(&ck_path)?.into_trainer();
        if *t.model.config() != cfg.model {
            return Err(Error::Config("checkpoint model config differs from the run config".into()));
        }
        t.config.total_steps = cfg.train.total_steps;
        t.config.threads = cfg.train.threads;
        t
    } else {
        Trainer::from_seed(cfg.model, cfg.train)?
    };
    let start_step = trainer.step;
    let mut history = if start_step > 0 { read_metrics(&metrics_path, start_step)? } else { Vec::new() };
    ensure_dir(&ck_path)?;
    let mut log = Vec::new();
    while trainer.step < trainer.config.total_steps {
        let m = trainer.step(&ds)?;
        if args.log_every > 0 && m.step % args.log_every == 0 {
            out(&format!("step {} loss {:.6} grad_norm {:.4}", m.step, m.loss, m.grad_norm));
        }
        history.push(m);
        log.push(m);
        if trainer.step % cfg.checkpoint_every == 0 || trainer.step == trainer.config.total_steps {
            Checkpoint::from_trainer(&trainer).save(&ck_path)?;
            write_atomic(&metrics_path, metrics_csv(&history).as_bytes())?;
        }
    }
    if log.is_empty() && !ck_path.exists() {
        Checkpoint::from_trainer(&trainer).save(&ck_path)?;
        write_atomic(&metrics_path, metrics_csv(&history).as_bytes())?;
    }
    Ok(TrainSummary {
        start_step,
        log,
        checkpoint: ck_path,
    })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SampleArgs {
    pub checkpoint: Option<PathBuf>,
    /// `None` samples every class.
    pub class: Option<usize>,
    pub count: usize,
    pub output: Option<PathBuf>,
    /// Also write one PGM grid per channel.
    pub grid: bool,
}

/// Samples with the EMA weights; returns the latents file path and any PGM
/// paths written.
pub fn cmd_sample(cfg: &RunConfig, args: &SampleArgs) -> Result<(PathBuf, Vec<PathBuf>)> {
    let ck = Checkpoint::load(&or_default(&args.checkpoint, cfg, CHECKPOINT))?;
    let ema = ck.trainer.ema_params()?;
    let mc = *ema.config();
    let mut rng = RngState::new(cfg.seed).split(SAMPLE_STREAM);
    let classes: Vec<usize> = match args.class {
        Some(c) if c >= mc.num_classes => {
            return Err(Error::Config(format!("class {c} out of range ({} classes)", mc.num_classes)))
        }
        Some(c) => vec![c],
        None => (0..mc.num_classes).collect(),
    };
    let mut latents: Vec<Tensor> = Vec::with_capacity(classes.len() * args.count);
    for &c in &classes {
        latents.extend(generate_many(&ema, c, args.count, &cfg.sampler, &mut rng)?);
    }
    if latents.iter().any(|t| !t.is_finite()) {
        return Err(Error::NonFinite("generated latents"));
    }
    let mut file = LatentFile::from_latents(mc.latent_shape, &latents)?;
    file.num_classes = classes.len();
    file.items_per_class = args.count;
    let path = or_default(&args.output, cfg, SAMPLES);
    save(&path, &file.encode())?;

    let mut grids = Vec::new();
    let image_like = mc.latent_shape.height > 1 && mc.latent_shape.width > 1;
    if args.grid && image_like && !latents.is_empty() {
        let stem = path.with_extension("");
        for (ch, bytes) in channel_grids(&latents)?.into_iter().enumerate() {
            let p = PathBuf::from(format!("{}_c{ch}.pgm", stem.display()));
            save(&p, &bytes)?;
            grids.push(p);
        }
    }
    Ok((path, grids))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalArgs {
    pub samples: Option<PathBuf>,
    pub reference: Option<PathBuf>,
    /// Class of a single-class samples file, or the one class to score.
    pub class: Option<usize>,
    pub output: Option<PathBuf>,
}

pub fn cmd_eval(cfg: &RunConfig, args: &EvalArgs) -> Result<Vec<EvalReport>> {
    let samples = LatentFile::load(&or_default(&args.samples, cfg, SAMPLES))?;
    let reference = load_dataset(&or_default(&args.reference, cfg, HELDOUT_DATA))?;
    if samples.shape != reference.latent_shape() {
        return Err(Error::Format(format!(
            "samples are {:?}, reference is {:?}",
            samples.shape.dims(),
            reference.latent_shape().dims()
        )));
    }
    let all = samples.latents();
    let per = samples.items_per_class;
    let class_samples = |i: usize| &all[i * per..(i + 1) * per];
    let k = reference.num_classes();
    let check = |c: usize| {
        if c < k {
            Ok(c)
        } else {
            Err(Error::Config(format!("class {c} out of range ({k} classes)")))
        }
    };
    let pairs: Vec<(usize, usize)> = match (samples.num_classes, args.class) {
        (1, Some(c)) => vec![(0, check(c)?)],
        (1, None) if k == 1 => vec![(0, 0)],
        (1, None) => return Err(Error::Config("single-class samples need --class".into())),
        (n, Some(c)) if n == k => vec![(check(c)?, c)],
        (n, None) if n == k => (0..k).map(|c| (c, c)).collect(),
        (n, _) => {
            return Err(Error::Format(format!("samples hold {n} classes, reference {k}")));
        }
    };
    let mut reports = pairs
        .into_iter()
        .map(|(s, r)| EvalReport::compute(Some(r), class_samples(s), reference.class_items(r), cfg.seed))
        .collect::<Result<Vec<_>>>()?;
    if reports.len() > 1 {
        let avg = EvalReport::average(&reports).expect("non-empty");
        reports.push(avg);
    }
    save(&or_default(&args.output, cfg, EVAL_REPORT), reports_csv(&reports).as_bytes())?;
    Ok(reports)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchArgs {
    pub mechanisms: Vec<Mechanism>,
    pub t_list: Vec<usize>,
    pub chunk: usize,
    pub head_dim: usize,
    pub heads: usize,
    pub repeats: usize,
    pub warmup: usize,
    pub output: Option<PathBuf>,
}

impl Default for BenchArgs {
    fn default() -> Self {
        Self {
            mechanisms: Mechanism::ALL.to_vec(),
            t_list: vec![256, 512, 1024, 2048, 4096],
            chunk: 64,
            head_dim: 64,
            heads: 1,
            repeats: 5,
            warmup: 1,
            output: None,
        }
    }
}

/// Runs the sweeps, writes one CSV and returns the points with a slope
/// summary per mechanism.
pub fn cmd_bench(cfg: &RunConfig, args: &BenchArgs) -> Result<(Vec<BenchPoint>, String)> {
    let mut points = Vec::new();
    let mut summary = String::new();
    for &m in &args.mechanisms {
        let pts = sweep(&SweepConfig {
            mechanism: m,
            t_list: args.t_list.clone(),
            chunk: args.chunk,
            head_dim: args.head_dim,
            heads: args.heads,
            repeats: args.repeats,
            warmup: args.warmup,
            seed: cfg.seed,
        })?;
        if let Ok((slope, r2)) = fit_scaling_exponent(&pts) {
            let _ = writeln!(summary, "{}: log-log slope {slope:.3} (r² {r2:.4})", m.name());
        }
        points.extend(pts);
    }
    save(&or_default(&args.output, cfg, BENCH_CSV), to_csv(&points).as_bytes())?;
    Ok((points, summary))
}

/// Human-readable summary of a checkpoint.
pub fn cmd_inspect(path: &Path) -> Result<String> {
    let ck = Checkpoint::load(path)?;
    let t = &ck.trainer;
    let mc = t.model.config();
    let mut s = String::new();
    let _ = writeln!(s, "checkpoint {}", path.display());
    let _ = writeln!(s, "step {} (optimizer step {})", t.step, t.opt.step);
    let _ = writeln!(s, "parameters {}", count_params(mc));
    let model = toml::to_string(mc).map_err(|e| Error::Format(e.to_string()))?;
    let train = toml::to_string(&t.config).map_err(|e| Error::Format(e.to_string()))?;
    let _ = writeln!(s, "\n[model]\n{model}\n[train]\n{train}");
    let _ = writeln!(s, "tensors:");
    for (name, x) in ck.named_tensors() {
        let _ = writeln!(s, "  {name} {:?}", x.shape());
    }
    Ok(s)
}
