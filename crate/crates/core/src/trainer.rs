//! Three-phase optimization of the geometry and velocity networks.
//!
//! 1. geometry only, plain reconstruction;
//! 2. velocity only, fluid residuals against the frozen geometry;
//! 3. both, with reconstruction queried through linear warping whose offset
//!    interval grows linearly from zero to one frame gap.
//!
//! Every batch is drawn from a generator keyed by `(seed, epoch, step)`, so a
//! run resumed from a checkpoint replays the uninterrupted trajectory exactly.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{debug, info};
use rand::Rng;

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::geometry::{Aabb, FrameSequence};
use crate::losses::{total_loss, LossReport, Phase, ReconTarget, TrainBatch};
use crate::sampling::{physics_batch, rng_for, stratified_times, supervision_points};
use crate::siren::{init_siren, read_exact, read_u64, ParamGradient, SirenParams};

/// First and second moment estimates for one network.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &SirenParams) -> Self {
        Self {
            m: vec![0.0; params.len()],
            v: vec![0.0; params.len()],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update. A non-finite gradient leaves parameters
/// and state untouched.
pub fn adam_step(
    params: &mut SirenParams,
    grad: &ParamGradient,
    state: &mut AdamState,
    lr: f64,
    betas: (f64, f64),
    eps: f64,
) -> Result<()> {
    if !grad.is_congruent(params) || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::Shape("optimizer state, gradient and parameters differ in shape".into()));
    }
    let bad: Vec<usize> = grad
        .as_slice()
        .iter()
        .enumerate()
        .filter(|(_, g)| !g.is_finite())
        .map(|(i, _)| i)
        .collect();
    if let Some(&first) = bad.first() {
        return Err(Error::Numerical(format!(
            "{} non-finite gradient entries (first at index {first}: {}); step {} skipped",
            bad.len(),
            grad.as_slice()[first],
            state.step + 1
        )));
    }
    let (b1, b2) = betas;
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (((p, &g), m), v) in params
        .as_mut_slice()
        .iter_mut()
        .zip(grad.as_slice())
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// Everything needed to continue or use a run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    /// Completed epochs.
    pub epoch: usize,
    pub f: SirenParams,
    pub v: SirenParams,
    pub adam_f: AdamState,
    pub adam_v: AdamState,
    pub history: Vec<LossReport>,
    pub bbox: Aabb,
    pub times: Vec<f64>,
    /// Effective configuration as TOML.
    pub config: String,
}

/// Result of [`train`].
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub state: TrainState,
    /// Wall-clock seconds spent in each phase during this call.
    pub phase_seconds: [f64; 3],
}

impl TrainOutcome {
    pub fn f(&self) -> &SirenParams {
        &self.state.f
    }

    pub fn v(&self) -> &SirenParams {
        &self.state.v
    }

    pub fn history(&self) -> &[LossReport] {
        &self.state.history
    }
}

/// Optional hooks for [`train_with`].
#[derive(Default)]
pub struct TrainOptions<'a> {
    /// Periodic and final checkpoints are written here.
    pub checkpoint_dir: Option<PathBuf>,
    /// Continue from this state instead of a fresh initialization.
    pub resume: Option<TrainState>,
    /// Stop once this many epochs are complete.
    pub stop_after: Option<usize>,
    pub on_epoch: Option<&'a mut dyn FnMut(&LossReport)>,
}

/// Phase and index within that phase for a global epoch.
pub fn phase_of(epoch: usize, epochs_per_phase: &[usize; 3]) -> Option<(Phase, usize)> {
    let mut start = 0;
    for (phase, &n) in Phase::ALL.iter().zip(epochs_per_phase) {
        if epoch < start + n {
            return Some((*phase, epoch - start));
        }
        start += n;
    }
    None
}

/// Warp interval growth: 0 on the first joint epoch, 1 on the last.
pub fn warp_progress(epoch_in_phase: usize, phase_epochs: usize) -> f64 {
    if phase_epochs <= 1 {
        1.0
    } else {
        epoch_in_phase as f64 / (phase_epochs - 1) as f64
    }
}

/// Frames supervised in one step: all of them when they fit in
/// `times_per_epoch`, otherwise one random frame per equal stratum.
fn recon_frames<R: Rng>(n_frames: usize, budget: usize, rng: &mut R) -> Vec<usize> {
    if n_frames <= budget {
        return (0..n_frames).collect();
    }
    let mut picks: Vec<usize> = stratified_times(budget, 0.0, n_frames as f64, rng)
        .expect("budget >= 1")
        .into_iter()
        .map(|t| (t.floor() as usize).min(n_frames - 1))
        .collect();
    picks.dedup();
    picks
}

/// Samples for one optimization step.
pub fn build_batch(
    frames: &FrameSequence,
    config: &TrainConfig,
    phase: Phase,
    epoch: usize,
    step: usize,
) -> Result<TrainBatch> {
    let seed = config.seed;
    let bbox = frames.bbox();
    let (t_min, t_max) = frames.time_range();
    let gap = frames.frame_gap();
    let s = &config.sampling;

    let mut recon = Vec::new();
    if matches!(phase, Phase::Geometry | Phase::Joint) {
        let mut rng = rng_for(seed, &[0x5245, epoch as u64, step as u64]);
        let sigma = s.near_surface_sigma * bbox.diagonal();
        for i in recon_frames(frames.len(), s.times_per_epoch, &mut rng) {
            let frame = frames.frame(i);
            let points = supervision_points(
                frame,
                &bbox,
                s.points_per_time,
                s.near_surface_fraction,
                sigma,
                &mut rng,
            )?;
            let mut target = ReconTarget::from_frame(frame, frames.times()[i], points);
            if phase == Phase::Joint {
                for u in target.warp_units.iter_mut() {
                    *u = rng.gen_range(-1.0..=1.0);
                }
            }
            recon.push(target);
        }
    }

    let mut physics = Vec::new();
    if matches!(phase, Phase::Velocity | Phase::Joint) {
        let (lo, hi) = if t_max > t_min { (t_min, t_max) } else { (t_min, t_min + 1.0) };
        let physics_seed = rng_for(seed, &[0x5048, epoch as u64, step as u64]).gen();
        physics = physics_batch(&bbox, (lo, hi), s.times_per_epoch, s.points_per_time, physics_seed)?
            .space_time();
    }

    Ok(TrainBatch {
        recon,
        physics,
        frame_gap: gap,
        time_bounds: (t_min - gap, t_max + gap),
    })
}

/// Fresh networks for `config`.
pub fn initial_state(frames: &FrameSequence, config: &TrainConfig) -> Result<TrainState> {
    let n = &config.network;
    let f = init_siren(n.n_layers, n.hidden_dim, 4, 1, n.omega0, rng_for(config.seed, &[0x46]).gen())?;
    let v = init_siren(n.n_layers, n.hidden_dim, 4, 3, n.omega0, rng_for(config.seed, &[0x56]).gen())?;
    Ok(TrainState {
        epoch: 0,
        adam_f: AdamState::new(&f),
        adam_v: AdamState::new(&v),
        f,
        v,
        history: Vec::new(),
        bbox: frames.bbox(),
        times: frames.times().to_vec(),
        config: config.to_toml_string(),
    })
}

/// Runs the full schedule.
pub fn train(frames: &FrameSequence, config: &TrainConfig) -> Result<TrainOutcome> {
    train_with(frames, config, TrainOptions::default())
}

/// [`train`] with checkpointing, resumption and per-epoch callbacks.
pub fn train_with(
    frames: &FrameSequence,
    config: &TrainConfig,
    mut options: TrainOptions<'_>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if frames.is_empty() {
        return Err(Error::Domain("training needs at least one frame".into()));
    }
    let mut state = match options.resume.take() {
        Some(s) => {
            let fresh = initial_state(frames, config)?;
            if s.f.dims() != fresh.f.dims() || s.v.dims() != fresh.v.dims() {
                return Err(Error::Checkpoint(
                    "checkpoint network shapes do not match the configuration".into(),
                ));
            }
            s
        }
        None => initial_state(frames, config)?,
    };
    if let Some(dir) = &options.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let sched = &config.schedule;
    let total = sched.total_epochs();
    let end = options.stop_after.map_or(total, |s| s.min(total));
    let opt = &config.optimizer;
    let betas = (opt.adam_beta1, opt.adam_beta2);
    let weights = config.loss.weights();
    let mut phase_seconds = [0.0; 3];

    while state.epoch < end {
        let epoch = state.epoch;
        let (phase, in_phase) = phase_of(epoch, &sched.epochs_per_phase).expect("epoch < total");
        let progress = if phase == Phase::Joint {
            warp_progress(in_phase, sched.epochs_per_phase[2])
        } else {
            0.0
        };
        let started = Instant::now();
        let mut mean: Option<LossReport> = None;
        for step in 0..sched.steps_per_epoch {
            let batch = build_batch(frames, config, phase, epoch, step)?;
            let loss = total_loss(phase, &state.f, &state.v, &batch, &weights, progress, config.loss.residual)?;
            if !loss.report.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite loss at epoch {epoch} step {step}: {:?}",
                    loss.report
                )));
            }
            if matches!(phase, Phase::Geometry | Phase::Joint) {
                adam_step(&mut state.f, &loss.grad_f, &mut state.adam_f, opt.lr, betas, opt.adam_eps)
                    .map_err(|e| Error::Numerical(format!("epoch {epoch}, geometry network: {e}")))?;
            }
            if matches!(phase, Phase::Velocity | Phase::Joint) {
                adam_step(&mut state.v, &loss.grad_v, &mut state.adam_v, opt.lr, betas, opt.adam_eps)
                    .map_err(|e| Error::Numerical(format!("epoch {epoch}, velocity network: {e}")))?;
            }
            mean = Some(match mean {
                None => loss.report,
                Some(mut acc) => {
                    acc.recon += loss.report.recon;
                    acc.div += loss.report.div;
                    acc.advect += loss.report.advect;
                    acc.ns += loss.report.ns;
                    acc.n_recon += loss.report.n_recon;
                    acc.n_physics += loss.report.n_physics;
                    acc.n_clamped += loss.report.n_clamped;
                    acc
                }
            });
        }
        let mut report = mean.expect("steps_per_epoch >= 1");
        let k = sched.steps_per_epoch as f64;
        if sched.steps_per_epoch > 1 {
            report.recon /= k;
            report.div /= k;
            report.advect /= k;
            report.ns /= k;
        }
        report.total = weights.total(report.recon, report.div, report.advect, report.ns);
        report.epoch = epoch;
        phase_seconds[phase.index()] += started.elapsed().as_secs_f64();
        debug!(
            "epoch {epoch} phase {phase}: recon {:.4e} div {:.4e} advect {:.4e} ns {:.4e}",
            report.recon, report.div, report.advect, report.ns
        );
        if let Some(cb) = options.on_epoch.as_mut() {
            cb(&report);
        }
        state.history.push(report);
        state.epoch += 1;

        if let Some(dir) = &options.checkpoint_dir {
            if sched.checkpoint_every > 0 && state.epoch % sched.checkpoint_every == 0 {
                save_checkpoint(&dir.join(format!("epoch_{:05}.ckpt", state.epoch)), &state)?;
            }
        }
    }
    if let Some(dir) = &options.checkpoint_dir {
        save_checkpoint(&dir.join("final.ckpt"), &state)?;
    }
    info!(
        "trained {} epochs (phase seconds {:.1}/{:.1}/{:.1})",
        state.epoch, phase_seconds[0], phase_seconds[1], phase_seconds[2]
    );
    Ok(TrainOutcome {
        state,
        phase_seconds,
    })
}

const CKPT_MAGIC: &[u8; 8] = b"FLRCKPT\0";
const CKPT_VERSION: u32 = 1;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    out.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn get_f64s<R: Read>(input: &mut R) -> Result<Vec<f64>> {
    let n = read_u64(input)? as usize;
    if n > (1 << 32) {
        return Err(Error::Checkpoint(format!("implausible array length {n}")));
    }
    let mut bytes = vec![0u8; n * 8];
    read_exact(input, &mut bytes)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Serializes a training state. Layout (little endian): magic, version,
/// epoch, box, times, config text, both networks, both optimizer states, loss
/// history, then an FNV-1a checksum of everything before it.
pub fn encode_checkpoint(state: &TrainState) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CKPT_MAGIC);
    out.extend_from_slice(&CKPT_VERSION.to_le_bytes());
    out.extend_from_slice(&(state.epoch as u64).to_le_bytes());
    for v in state.bbox.min.iter().chain(state.bbox.max.iter()) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    put_f64s(&mut out, &state.times);
    out.extend_from_slice(&(state.config.len() as u64).to_le_bytes());
    out.extend_from_slice(state.config.as_bytes());
    state.f.write_to(&mut out).expect("Vec write");
    state.v.write_to(&mut out).expect("Vec write");
    for adam in [&state.adam_f, &state.adam_v] {
        out.extend_from_slice(&adam.step.to_le_bytes());
        put_f64s(&mut out, &adam.m);
        put_f64s(&mut out, &adam.v);
    }
    out.extend_from_slice(&(state.history.len() as u64).to_le_bytes());
    for r in &state.history {
        out.extend_from_slice(&(r.epoch as u64).to_le_bytes());
        out.push(r.phase as u8);
        for v in [r.recon, r.div, r.advect, r.ns, r.total] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for n in [r.n_recon, r.n_physics, r.n_clamped] {
            out.extend_from_slice(&(n as u64).to_le_bytes());
        }
    }
    let sum = fnv1a(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<TrainState> {
    if bytes.len() < CKPT_MAGIC.len() + 4 + 8 {
        return Err(Error::Checkpoint("truncated checkpoint".into()));
    }
    if &bytes[..8] != CKPT_MAGIC {
        return Err(Error::Checkpoint("not a fluidrecon checkpoint".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CKPT_VERSION {
        return Err(Error::Checkpoint(format!(
            "checkpoint version {version}, this build reads version {CKPT_VERSION}"
        )));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    if fnv1a(body) != u64::from_le_bytes(tail.try_into().unwrap()) {
        return Err(Error::Checkpoint("checksum mismatch (truncated or corrupted file)".into()));
    }
    let mut r = &body[12..];
    let epoch = read_u64(&mut r)? as usize;
    let mut corners = [0.0; 6];
    for c in corners.iter_mut() {
        *c = f64::from_bits(read_u64(&mut r)?);
    }
    let bbox = Aabb::new(
        crate::Vec3::new(corners[0], corners[1], corners[2]),
        crate::Vec3::new(corners[3], corners[4], corners[5]),
    );
    let times = get_f64s(&mut r)?;
    let clen = read_u64(&mut r)? as usize;
    let mut cbytes = vec![0u8; clen.min(r.len())];
    read_exact(&mut r, &mut cbytes)?;
    let config = String::from_utf8(cbytes).map_err(|_| Error::Checkpoint("config text is not UTF-8".into()))?;
    let f = SirenParams::read_from(&mut r)?;
    let v = SirenParams::read_from(&mut r)?;
    let mut adam = Vec::with_capacity(2);
    for params in [&f, &v] {
        let step = read_u64(&mut r)?;
        let m = get_f64s(&mut r)?;
        let vv = get_f64s(&mut r)?;
        if m.len() != params.len() || vv.len() != params.len() {
            return Err(Error::Checkpoint("optimizer state does not match network".into()));
        }
        adam.push(AdamState { m, v: vv, step });
    }
    let n_hist = read_u64(&mut r)? as usize;
    let mut history = Vec::with_capacity(n_hist.min(1 << 20));
    for _ in 0..n_hist {
        let epoch = read_u64(&mut r)? as usize;
        let mut p = [0u8; 1];
        read_exact(&mut r, &mut p)?;
        let phase = Phase::try_from(p[0]).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut vals = [0.0; 5];
        for v in vals.iter_mut() {
            *v = f64::from_bits(read_u64(&mut r)?);
        }
        let mut counts = [0usize; 3];
        for c in counts.iter_mut() {
            *c = read_u64(&mut r)? as usize;
        }
        history.push(LossReport {
            epoch,
            phase,
            recon: vals[0],
            div: vals[1],
            advect: vals[2],
            ns: vals[3],
            total: vals[4],
            n_recon: counts[0],
            n_physics: counts[1],
            n_clamped: counts[2],
        });
    }
    if !r.is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", r.len())));
    }
    let adam_v = adam.pop().unwrap();
    let adam_f = adam.pop().unwrap();
    Ok(TrainState {
        epoch,
        f,
        v,
        adam_f,
        adam_v,
        history,
        bbox,
        times,
        config,
    })
}

/// Writes via a temporary file and rename, so an existing checkpoint is
/// never left half-written.
pub fn save_checkpoint(path: &Path, state: &TrainState) -> Result<()> {
    let tmp = path.with_extension("ckpt.tmp");
    let mut file = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    file.write_all(&encode_checkpoint(state))
        .and_then(|_| file.sync_all())
        .map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
