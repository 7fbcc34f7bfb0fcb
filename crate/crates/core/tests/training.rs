use fluidrecon_core::scenes::{Scene, SceneKind, SceneSpec};
use fluidrecon_core::trainer::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, train, train_with, TrainOptions,
};
use fluidrecon_core::{Error, FrameSequence, LossReport, Phase, TrainConfig};

fn tiny_config(epochs: [usize; 3]) -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.network.n_layers = 2;
    cfg.network.hidden_dim = 8;
    cfg.schedule.epochs_per_phase = epochs;
    cfg.schedule.checkpoint_every = 2;
    cfg.sampling.times_per_epoch = 2;
    cfg.sampling.points_per_time = 64;
    cfg.optimizer.lr = 1e-3;
    cfg
}

fn frames() -> FrameSequence {
    Scene::new(SceneSpec::new(SceneKind::TranslatingSphere, 3, 300, 1)).generate().unwrap()
}

fn bits(h: &[LossReport]) -> Vec<[u64; 5]> {
    h.iter()
        .map(|r| [r.recon, r.div, r.advect, r.ns, r.total].map(f64::to_bits))
        .collect()
}

#[test]
fn same_seed_same_history() {
    let cfg = tiny_config([3, 2, 2]);
    let a = train(&frames(), &cfg).unwrap();
    let b = train(&frames(), &cfg).unwrap();
    assert_eq!(bits(a.history()), bits(b.history()));
    assert_eq!(a.f().as_slice(), b.f().as_slice());
    assert_eq!(a.v().as_slice(), b.v().as_slice());

    let mut other = cfg.clone();
    other.seed += 1;
    let c = train(&frames(), &other).unwrap();
    assert_ne!(bits(a.history()), bits(c.history()));
}

#[test]
fn history_follows_phases() {
    let cfg = tiny_config([2, 3, 1]);
    let out = train(&frames(), &cfg).unwrap();
    let phases: Vec<Phase> = out.history().iter().map(|r| r.phase).collect();
    use Phase::*;
    assert_eq!(phases, vec![Geometry, Geometry, Velocity, Velocity, Velocity, Joint]);
    for (i, r) in out.history().iter().enumerate() {
        assert_eq!(r.epoch, i);
        assert!(r.identity_error(&cfg.loss.weights()) <= 1e-12);
    }
    let first = &out.history()[0];
    assert!(first.recon > 0.0 && first.div == 0.0 && first.advect == 0.0 && first.ns == 0.0);
    let vel = &out.history()[2];
    assert!(vel.recon == 0.0 && vel.div > 0.0 && vel.advect > 0.0 && vel.ns > 0.0);
}

#[test]
fn phases_update_only_their_networks() {
    let fr = frames();
    let cfg = tiny_config([2, 2, 2]);
    let start = train(&fr, &tiny_config([0, 0, 0])).unwrap();
    let geo = train_with(&fr, &cfg, TrainOptions { stop_after: Some(2), ..Default::default() }).unwrap();
    assert_ne!(geo.f().fingerprint(), start.f().fingerprint());
    assert_eq!(geo.v().fingerprint(), start.v().fingerprint());

    let vel = train_with(&fr, &cfg, TrainOptions { resume: Some(geo.state.clone()), stop_after: Some(4), ..Default::default() })
        .unwrap();
    assert_eq!(vel.f().fingerprint(), geo.f().fingerprint());
    assert_ne!(vel.v().fingerprint(), geo.v().fingerprint());

    let joint = train_with(&fr, &cfg, TrainOptions { resume: Some(vel.state.clone()), ..Default::default() }).unwrap();
    assert_ne!(joint.f().fingerprint(), vel.f().fingerprint());
    assert_ne!(joint.v().fingerprint(), vel.v().fingerprint());
}

#[test]
fn resume_matches_uninterrupted_run() {
    let fr = frames();
    let cfg = tiny_config([2, 2, 2]);
    let dir = tempfile::tempdir().unwrap();
    let full = train(&fr, &cfg).unwrap();
    train_with(
        &fr,
        &cfg,
        TrainOptions { checkpoint_dir: Some(dir.path().to_path_buf()), stop_after: Some(3), ..Default::default() },
    )
    .unwrap();
    assert!(dir.path().join("epoch_00002.ckpt").exists());
    let saved = load_checkpoint(&dir.path().join("final.ckpt")).unwrap();
    assert_eq!(saved.epoch, 3);
    let resumed = train_with(&fr, &cfg, TrainOptions { resume: Some(saved), ..Default::default() }).unwrap();
    assert_eq!(bits(resumed.history()), bits(full.history()));
    assert_eq!(resumed.f().as_slice(), full.f().as_slice());
    assert_eq!(resumed.v().as_slice(), full.v().as_slice());
}

#[test]
fn resume_rejects_other_shapes() {
    let fr = frames();
    let state = train(&fr, &tiny_config([1, 0, 0])).unwrap().state;
    let mut wider = tiny_config([2, 0, 0]);
    wider.network.hidden_dim = 16;
    let err = train_with(&fr, &wider, TrainOptions { resume: Some(state), ..Default::default() }).unwrap_err();
    assert!(matches!(err, Error::Checkpoint(_)), "{err}");
}

#[test]
fn checkpoint_round_trip_and_corruption() {
    let state = train(&frames(), &tiny_config([1, 1, 1])).unwrap().state;
    let bytes = encode_checkpoint(&state);
    assert_eq!(decode_checkpoint(&bytes).unwrap(), state);

    for cut in [0, 7, 8, bytes.len() / 2, bytes.len() - 1] {
        assert!(matches!(decode_checkpoint(&bytes[..cut]), Err(Error::Checkpoint(_))), "cut at {cut}");
    }
    let mut flipped = bytes.clone();
    flipped[bytes.len() / 2] ^= 0x10;
    assert!(matches!(decode_checkpoint(&flipped), Err(Error::Checkpoint(_))));
    let mut longer = bytes.clone();
    longer.push(0);
    assert!(decode_checkpoint(&longer).is_err());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.ckpt");
    save_checkpoint(&path, &state).unwrap();
    assert_eq!(load_checkpoint(&path).unwrap(), state);
    std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(Error::Checkpoint(_))));
    assert!(matches!(load_checkpoint(&dir.path().join("none.ckpt")), Err(Error::Io { .. })));
}

#[test]
fn empty_schedule_returns_initial_state() {
    let out = train(&frames(), &tiny_config([0, 0, 0])).unwrap();
    assert!(out.history().is_empty());
    assert_eq!(out.state.epoch, 0);
    assert_eq!(out.state.times.len(), 3);
}
