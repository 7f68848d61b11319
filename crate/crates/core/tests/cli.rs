use std::path::Path;
use std::process::Command;

use arflow::cli::{cmd_eval, cmd_make_data, cmd_sample, cmd_train, EvalArgs, RunConfig, SampleArgs, TrainArgs};
use arflow::sequence::{load_dataset, LatentFile, LatentShape, DATASET_MAGIC};
use arflow::training::Checkpoint;

const TOY: &str = r#"
seed = 3
checkpoint_every = 2

[model]
latent_shape = { channels = 1, height = 4, width = 4 }
patch_size = 2
hidden_size = 16
depth = 1
num_heads = 2
num_classes = 2
time_freq_dim = 8
seq_len_train = 2

[train]
batch_size = 2
total_steps = 4
learning_rate = 1e-2
ema_decay = 0.0

[sampler]
steps = 3

[data]
items_per_class = 6
heldout_per_class = 6
"#;

fn toy(dir: &Path) -> RunConfig {
    let mut cfg = RunConfig::from_toml(TOY).unwrap();
    cfg.out_dir = dir.to_path_buf();
    cfg.train.seed = cfg.seed;
    cfg.validate().unwrap();
    cfg
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_arflow"))
}

#[test]
fn make_data_writes_parseable_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy(dir.path());
    let (train, heldout) = cmd_make_data(&cfg).unwrap();
    let bytes = std::fs::read(&train).unwrap();
    assert_eq!(&bytes[..6], DATASET_MAGIC);
    assert_eq!(u32::from_le_bytes(bytes[6..10].try_into().unwrap()), 2);
    let ds = load_dataset(&train).unwrap();
    assert_eq!(ds.num_classes(), 2);
    assert_eq!(ds.latent_shape(), LatentShape::new(1, 4, 4));
    assert_eq!(load_dataset(&heldout).unwrap().class_items(1).len(), 6);
    // same seed, same bytes
    cmd_make_data(&cfg).unwrap();
    assert_eq!(std::fs::read(&train).unwrap(), bytes);
}

#[test]
fn train_resume_matches_uninterrupted() {
    let a = tempfile::tempdir().unwrap();
    let cfg = toy(a.path());
    cmd_make_data(&cfg).unwrap();
    let full = cmd_train(&cfg, &TrainArgs::default(), |_| {}).unwrap();
    assert_eq!(full.log.len(), 4);

    let b = tempfile::tempdir().unwrap();
    let mut half = toy(b.path());
    cmd_make_data(&half).unwrap();
    half.train.total_steps = 2;
    cmd_train(&half, &TrainArgs::default(), |_| {}).unwrap();
    half.train.total_steps = 4;
    let args = TrainArgs {
        resume: true,
        ..TrainArgs::default()
    };
    let rest = cmd_train(&half, &args, |_| {}).unwrap();
    assert_eq!(rest.start_step, 2);
    let tail: Vec<f64> = full.log[2..].iter().map(|m| m.loss).collect();
    assert_eq!(rest.log.iter().map(|m| m.loss).collect::<Vec<_>>(), tail);
    let ca = Checkpoint::load(&cfg.path("checkpoint.arfckpt")).unwrap();
    let cb = Checkpoint::load(&half.path("checkpoint.arfckpt")).unwrap();
    assert_eq!(ca.trainer, cb.trainer);

    let metrics = std::fs::read_to_string(half.path("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 5);
}

#[test]
fn sample_and_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = toy(dir.path());
    cmd_make_data(&cfg).unwrap();
    cmd_train(&cfg, &TrainArgs::default(), |_| {}).unwrap();

    let args = SampleArgs {
        count: 5,
        grid: true,
        ..SampleArgs::default()
    };
    let (path, grids) = cmd_sample(&cfg, &args).unwrap();
    let file = LatentFile::load(&path).unwrap();
    assert_eq!((file.num_classes, file.items_per_class), (2, 5));
    assert_eq!(grids.len(), 1);
    assert!(std::fs::read(&grids[0]).unwrap().starts_with(b"P5\n"));
    let first = std::fs::read(&path).unwrap();
    cmd_sample(&cfg, &args).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), first);

    let reports = cmd_eval(&cfg, &EvalArgs::default()).unwrap();
    assert_eq!(reports.len(), 3);
    assert!(reports.iter().all(|r| r.mmd.value.is_finite()));
    let csv = std::fs::read_to_string(cfg.path("eval.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);

    let one = SampleArgs {
        class: Some(1),
        count: 4,
        output: Some(dir.path().join("one.arfds")),
        ..SampleArgs::default()
    };
    let (p1, _) = cmd_sample(&cfg, &one).unwrap();
    let e = EvalArgs {
        samples: Some(p1.clone()),
        class: Some(1),
        output: Some(dir.path().join("one.csv")),
        ..EvalArgs::default()
    };
    assert_eq!(cmd_eval(&cfg, &e).unwrap().len(), 1);

    cfg.sampler.cfg_scale = 3.0;
    let (p3, _) = cmd_sample(&cfg, &SampleArgs {
        output: Some(dir.path().join("three.arfds")),
        ..one.clone()
    })
    .unwrap();
    assert_ne!(std::fs::read(p1).unwrap(), std::fs::read(p3).unwrap());

    let empty = SampleArgs {
        count: 0,
        class: Some(0),
        output: Some(dir.path().join("empty.arfds")),
        ..SampleArgs::default()
    };
    let (pe, _) = cmd_sample(&cfg, &empty).unwrap();
    let f = LatentFile::load(&pe).unwrap();
    assert_eq!((f.num_classes, f.items_per_class, f.data.len()), (1, 0, 0));
}

#[test]
fn binary_end_to_end_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("run.toml");
    std::fs::write(&conf, TOY).unwrap();
    let out = dir.path().join("run");
    let run = |args: &[&str]| {
        bin()
            .arg("--config")
            .arg(&conf)
            .arg("--out")
            .arg(&out)
            .args(args)
            .output()
            .unwrap()
    };
    for args in [
        &["make-data"][..],
        &["train", "--log-every", "2"],
        &["sample", "--count", "3", "--steps", "2", "--cfg-scale", "2"],
        &["eval"],
        &["inspect"],
        &["bench", "--t", "64,128", "--chunk", "16", "--head-dim", "8", "--mechanism", "hybrid"],
    ] {
        let o = run(args);
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let inspect = String::from_utf8(run(&["inspect"]).stdout).unwrap();
    assert!(inspect.contains("step 4"));
    assert!(inspect.contains("ema/final.head.w"));
    assert!(out.join("bench.csv").exists());

    // config error
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "nonsense = 1").unwrap();
    let o = bin().arg("--config").arg(&bad).arg("make-data").output().unwrap();
    assert_eq!(o.status.code(), Some(2));

    // data format error
    let junk = dir.path().join("junk.arfckpt");
    std::fs::write(&junk, b"not a checkpoint").unwrap();
    let o = bin().arg("inspect").arg(&junk).output().unwrap();
    assert_eq!(o.status.code(), Some(3));

    // numeric failure: a diverging learning rate
    let hot = dir.path().join("hot.toml");
    std::fs::write(&hot, TOY.replace("learning_rate = 1e-2", "learning_rate = 1e30")).unwrap();
    let hot_out = dir.path().join("hot");
    let o = bin().arg("--config").arg(&hot).arg("--out").arg(&hot_out).arg("make-data").output().unwrap();
    assert!(o.status.success());
    let o = bin()
        .arg("--config")
        .arg(&hot)
        .arg("--out")
        .arg(&hot_out)
        .args(["train", "--steps", "50"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
}
