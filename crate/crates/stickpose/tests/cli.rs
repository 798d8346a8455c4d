//! End-to-end runs of the binary: exit codes, file outputs, determinism.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_stickpose"))
}

fn write_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("small.cfg");
    std::fs::write(
        &path,
        "map_size = 8\nimage_stride = 2\nstages = 2\nwidth = 4\nsteps = 1\n\
         epochs = 1\nbatch = 4\naugment = off\nval_every = 0\nthreads = 1\n",
    )
    .unwrap();
    path
}

#[test]
fn gen_train_eval_pipeline_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let data = dir.path().join("d.pgnd");
    let ckpt = dir.path().join("m.pgck");

    let out = bin()
        .args(["gen", "--count", "24", "--seed", "3", "--out"])
        .arg(&data)
        .arg("--config")
        .arg(&cfg)
        .output()
        .unwrap();
    assert!(out.status.success(), "gen failed: {}", String::from_utf8_lossy(&out.stderr));
    assert!(data.exists());

    let out = bin()
        .args(["train", "--data"])
        .arg(&data)
        .args(["--out"])
        .arg(&ckpt)
        .arg("--config")
        .arg(&cfg)
        .output()
        .unwrap();
    assert!(out.status.success(), "train failed: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("params: backbone"), "param report missing: {stdout}");
    assert!(ckpt.exists());
    assert!(dir.path().join("m.pgck.curve.csv").exists());
    assert!(dir.path().join("m.pgck.metrics.csv").exists());

    let metrics = dir.path().join("eval.csv");
    let out = bin()
        .args(["eval", "--checkpoint"])
        .arg(&ckpt)
        .args(["--data"])
        .arg(&data)
        .args(["--out"])
        .arg(&metrics)
        .arg("--config")
        .arg(&cfg)
        .output()
        .unwrap();
    assert!(out.status.success(), "eval failed: {}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(&metrics).unwrap();
    assert!(csv.starts_with("tag,cpf,graph,T,seed,joint,metric,value\n"));
    assert!(csv.contains("l_wrist,pckh"));
}

#[test]
fn train_zero_epochs_checkpoint_equals_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let data = dir.path().join("d.pgnd");
    let ckpt = dir.path().join("m.pgck");

    assert!(bin()
        .args(["gen", "--count", "8", "--seed", "1", "--out"])
        .arg(&data)
        .arg("--config")
        .arg(&cfg)
        .status()
        .unwrap()
        .success());
    assert!(bin()
        .args(["train", "--epochs", "0", "--data"])
        .arg(&data)
        .args(["--out"])
        .arg(&ckpt)
        .arg("--config")
        .arg(&cfg)
        .status()
        .unwrap()
        .success());

    // the stored tensors must equal the seeded initialization (as f32)
    let mut run_cfg = stickpose::config::RunConfig::default();
    run_cfg.apply_text(&std::fs::read_to_string(&cfg).unwrap()).unwrap();
    let fresh = stickpose::model::PoseModel::new(&run_cfg.model_config()).unwrap();
    let loaded = stickpose::checkpoint::load(&ckpt).unwrap();
    for ((name, a), (_, b)) in fresh.named_params().iter().zip(loaded.named_params().iter()) {
        for (&x, &y) in a.data().iter().zip(b.data()) {
            assert_eq!(x as f32, y as f32, "tensor {name} changed during 0-epoch train");
        }
    }
}

#[test]
fn eval_joint_mismatch_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let data8 = dir.path().join("d8.pgnd");
    let ckpt = dir.path().join("m.pgck");
    assert!(bin()
        .args(["gen", "--count", "8", "--seed", "1", "--out"])
        .arg(&data8)
        .arg("--config")
        .arg(&cfg)
        .status()
        .unwrap()
        .success());
    assert!(bin()
        .args(["train", "--epochs", "0", "--data"])
        .arg(&data8)
        .args(["--out"])
        .arg(&ckpt)
        .arg("--config")
        .arg(&cfg)
        .status()
        .unwrap()
        .success());

    // dataset at a different map size than the checkpoint
    let other = dir.path().join("d16.pgnd");
    assert!(bin()
        .args(["gen", "--count", "4", "--seed", "1", "--out"])
        .arg(&other)
        .status()
        .unwrap()
        .success());
    let out = bin()
        .args(["eval", "--checkpoint"])
        .arg(&ckpt)
        .args(["--data"])
        .arg(&other)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("maps") || err.contains("mismatch"), "stderr: {err}");
}

#[test]
fn unknown_config_key_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "learning_rate = 1\n").unwrap();
    let out = bin()
        .args(["gen", "--count", "1", "--seed", "0", "--out"])
        .arg(dir.path().join("x.pgnd"))
        .arg("--config")
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown key"));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let data = dir.path().join("d.pgnd");
    assert!(bin()
        .args(["gen", "--count", "16", "--seed", "9", "--out"])
        .arg(&data)
        .arg("--config")
        .arg(&cfg)
        .status()
        .unwrap()
        .success());

    let run = |suffix: &str| {
        let ckpt = dir.path().join(format!("m{suffix}.pgck"));
        assert!(bin()
            .args(["train", "--data"])
            .arg(&data)
            .args(["--out"])
            .arg(&ckpt)
            .arg("--config")
            .arg(&cfg)
            .status()
            .unwrap()
            .success());
        (
            std::fs::read(dir.path().join(format!("m{suffix}.pgck.curve.csv"))).unwrap(),
            std::fs::read(dir.path().join(format!("m{suffix}.pgck.metrics.csv"))).unwrap(),
            std::fs::read(&ckpt).unwrap(),
        )
    };
    let a = run("1");
    let b = run("2");
    assert_eq!(a.0, b.0, "curve CSVs differ between reruns");
    assert_eq!(a.1, b.1, "metrics CSVs differ between reruns");
    assert_eq!(a.2, b.2, "checkpoints differ between reruns");
}

#[test]
fn gradcheck_command_exits_zero() {
    let out = bin().arg("gradcheck").output().unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("all 13 checks passed"), "stdout: {stdout}");
}

#[test]
fn dump_heatmaps_writes_pgm_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let data = dir.path().join("d.pgnd");
    assert!(bin()
        .args(["gen", "--count", "2", "--seed", "4", "--out"])
        .arg(&data)
        .arg("--config")
        .arg(&cfg)
        .status()
        .unwrap()
        .success());
    let maps = dir.path().join("maps");
    assert!(bin()
        .args(["dump-heatmaps", "--data"])
        .arg(&data)
        .args(["--index", "1", "--out"])
        .arg(&maps)
        .status()
        .unwrap()
        .success());
    assert!(maps.join("gt_head_top.pgm").exists());
    assert!(maps.join("gt_scale.txt").exists());
    let head = std::fs::read(maps.join("gt_head_top.pgm")).unwrap();
    assert!(head.starts_with(b"P5\n8 8\n255\n"));
}
