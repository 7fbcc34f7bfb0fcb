use std::path::Path;
use std::process::{Command, Output};

fn fluidrecon(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fluidrecon"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("FLUIDRECON_CONFIG")
        .env_remove("FLUIDRECON_SEED")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn scene_train_reconstruct_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene");
    let o = fluidrecon(&scene, &["--seed", "3", "gen-scene", "--kind", "translating_sphere", "--frames", "3", "--points", "400"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(scene.join("manifest.toml").exists());
    assert!(scene.join("run_manifest.json").exists());

    let run = dir.path().join("run");
    let tiny = [
        "--set", "network.n_layers=2",
        "--set", "network.hidden_dim=8",
        "--set", "schedule.epochs_per_phase=[2, 1, 1]",
        "--set", "schedule.checkpoint_every=2",
        "--set", "sampling.times_per_epoch=2",
        "--set", "sampling.points_per_time=64",
    ];
    let mut args: Vec<&str> = tiny.to_vec();
    args.extend(["train", "--scene", scene.to_str().unwrap()]);
    let o = fluidrecon(&run, &args);
    assert!(o.status.success(), "{}", stderr(&o));
    let history = std::fs::read_to_string(run.join("loss_history.csv")).unwrap();
    assert_eq!(history.lines().count(), 1 + 4, "{history}");
    assert!(history.starts_with("epoch,phase,recon,div,advect,ns,total"));
    assert!(run.join("checkpoints/epoch_00002.ckpt").exists());
    let ckpt = run.join("checkpoints/final.ckpt");
    assert!(ckpt.exists());
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("run_manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["summary"]["epochs"], 4);
    assert!(manifest["config"].as_str().unwrap().contains("hidden_dim = 8"));

    let meshes = dir.path().join("meshes");
    let o = fluidrecon(&meshes, &["reconstruct", "--checkpoint", ckpt.to_str().unwrap(), "--res", "16"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for k in 0..3 {
        assert!(meshes.join(format!("mesh_{k:03}.obj")).exists());
    }

    let matched = dir.path().join("match");
    let o = fluidrecon(
        &matched,
        &[
            "match",
            "--checkpoint", ckpt.to_str().unwrap(),
            "--source", scene.join("frame_000.ply").to_str().unwrap(),
            "--target", scene.join("frame_002.ply").to_str().unwrap(),
            "--steps", "8",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(matched.join("matching.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 400);

    let resumed = dir.path().join("resumed");
    let mut args: Vec<&str> = tiny.to_vec();
    args[5] = "schedule.epochs_per_phase=[2, 1, 2]";
    args.extend(["train", "--scene", scene.to_str().unwrap(), "--resume", ckpt.to_str().unwrap()]);
    let o = fluidrecon(&resumed, &args);
    assert!(o.status.success(), "{}", stderr(&o));
    let history = std::fs::read_to_string(resumed.join("loss_history.csv")).unwrap();
    assert_eq!(history.lines().count(), 1 + 5, "{history}");
}

#[test]
fn eval_of_identical_meshes_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let o = fluidrecon(dir.path(), &["gen-scene", "--kind", "rotating_box", "--frames", "2", "--points", "200"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let frame = dir.path().join("frame_000.ply");
    let o = fluidrecon(&dir.path().join("eval"), &["eval", "--pred", frame.to_str().unwrap(), "--gt", frame.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(String::from_utf8_lossy(&o.stdout).trim(), "chamfer 0.0");
}

#[test]
fn unknown_flag_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = fluidrecon(dir.path(), &["train", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(64));
}

#[test]
fn unknown_scene_kind_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = fluidrecon(dir.path(), &["gen-scene", "--kind", "teapot"]);
    assert_eq!(o.status.code(), Some(64));
}

#[test]
fn bad_config_exits_65() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[network]\nhidden_dim = 0\n").unwrap();
    let o = fluidrecon(dir.path(), &["--config", cfg.to_str().unwrap(), "train", "--frames", "x.ply"]);
    assert_eq!(o.status.code(), Some(65), "{}", stderr(&o));
    assert!(stderr(&o).starts_with("fluidrecon: error category=config code=65"));

    let o = fluidrecon(dir.path(), &["--set", "optimizer.nope=1", "train", "--frames", "x.ply"]);
    assert_eq!(o.status.code(), Some(65), "{}", stderr(&o));
}

#[test]
fn missing_input_exits_66() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.ply");
    let o = fluidrecon(dir.path(), &["eval", "--pred", missing.to_str().unwrap(), "--gt", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(66), "{}", stderr(&o));
    let err = stderr(&o);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.contains("category=io"));

    let o = fluidrecon(dir.path(), &["reconstruct", "--checkpoint", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(66));
}
