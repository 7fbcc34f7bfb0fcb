//! Shared inputs for the kernel benchmarks.

use fluidrecon_core::sampling::rng_for;
use fluidrecon_core::scenes::{Scene, SceneKind, SceneSpec};
use fluidrecon_core::siren::init_siren;
use fluidrecon_core::{FrameSequence, SirenParams, TrainConfig};
use rand::Rng;

/// Geometry and velocity networks with the desk-scale shape (3 x 64).
pub fn desk_networks() -> (SirenParams, SirenParams) {
    let f = init_siren(3, 64, 4, 1, 30.0, 1).expect("valid shape");
    let v = init_siren(3, 64, 4, 3, 30.0, 2).expect("valid shape");
    (f, v)
}

/// Uniform `(x, y, z, t)` samples in `[-1, 1]^3 x [0, 1]`.
pub fn space_time(n: usize) -> Vec<[f64; 4]> {
    let mut rng = rng_for(7, &[]);
    (0..n)
        .map(|_| {
            [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(0.0..1.0),
            ]
        })
        .collect()
}

pub fn translating_sphere(frames: usize, points: usize) -> FrameSequence {
    Scene::new(SceneSpec::new(SceneKind::TranslatingSphere, frames, points, 0))
        .generate()
        .expect("valid scene")
}

/// Desk-scale training configuration, shortened to `epochs` per phase.
pub fn desk_config(epochs: usize) -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.network.n_layers = 3;
    cfg.network.hidden_dim = 64;
    cfg.schedule.epochs_per_phase = [epochs; 3];
    cfg.sampling.times_per_epoch = 8;
    cfg.sampling.points_per_time = 2048;
    cfg.optimizer.lr = 1e-3;
    cfg
}
