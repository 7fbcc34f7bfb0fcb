//! Training objectives.
//!
//! Every integral over space and time is a Monte Carlo mean. Residuals enter
//! through their absolute value by default ([`ResidualNorm::L1`]) so that
//! positive and negative violations cannot cancel.
//!
//! | term     | residual per sample                     | trains   |
//! |----------|-----------------------------------------|----------|
//! | `recon`  | `f(x, t) - d(x, X_t)` (optionally warped) | f (and v) |
//! | `div`    | `div v`                                 | v        |
//! | `advect` | `df/dt + v . grad f`                    | v only   |
//! | `ns`     | `dv/dt + (v . grad) v`, L1 over components | v     |

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{signed_distances, OrientedPointCloud};
use crate::par;
use crate::siren::{eval_with_jacobian, FieldEval, ParamGradient, SirenParams, SirenTape};
use crate::Vec3;

/// Loss weights of the total objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 10.0,
            lambda2: 10.0,
            lambda3: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2), ("lambda3", self.lambda3)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn total(&self, recon: f64, div: f64, advect: f64, ns: f64) -> f64 {
        recon + self.lambda1 * div + self.lambda2 * advect + self.lambda3 * ns
    }
}

/// How a residual `r` is turned into a penalty.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualNorm {
    #[default]
    L1,
    Squared,
}

impl ResidualNorm {
    /// Penalty and its derivative with respect to `r`.
    #[inline]
    pub fn apply(self, r: f64) -> (f64, f64) {
        match self {
            ResidualNorm::L1 => (r.abs(), if r > 0.0 { 1.0 } else if r < 0.0 { -1.0 } else { 0.0 }),
            ResidualNorm::Squared => (r * r, 2.0 * r),
        }
    }
}

/// Training phase.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    /// Geometry only: plain reconstruction.
    Geometry = 1,
    /// Velocity only: fluid residuals with the geometry frozen.
    Velocity = 2,
    /// Both networks, reconstruction through linear warping.
    Joint = 3,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::Geometry, Phase::Velocity, Phase::Joint];

    pub fn index(self) -> usize {
        self as usize - 1
    }
}

impl TryFrom<u8> for Phase {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            1 => Ok(Phase::Geometry),
            2 => Ok(Phase::Velocity),
            3 => Ok(Phase::Joint),
            _ => Err(Error::Domain(format!("invalid training phase {v}; expected 1, 2 or 3"))),
        }
    }
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", *self as u8)
    }
}

/// Loss values for one step (or the mean over one epoch's steps).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub epoch: usize,
    pub phase: Phase,
    pub recon: f64,
    pub div: f64,
    pub advect: f64,
    pub ns: f64,
    pub total: f64,
    pub n_recon: usize,
    pub n_physics: usize,
    pub n_clamped: usize,
}

impl LossReport {
    pub const CSV_HEADER: &'static str = "epoch,phase,recon,div,advect,ns,total";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:e},{:e},{:e},{:e},{:e}",
            self.epoch, self.phase, self.recon, self.div, self.advect, self.ns, self.total
        )
    }

    /// Relative violation of `total = recon + l1 div + l2 advect + l3 ns`.
    pub fn identity_error(&self, w: &LossWeights) -> f64 {
        let expected = w.total(self.recon, self.div, self.advect, self.ns);
        (self.total - expected).abs() / expected.abs().max(f64::MIN_POSITIVE)
    }

    pub fn is_finite(&self) -> bool {
        [self.recon, self.div, self.advect, self.ns, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// A loss value with its parameter gradients.
#[derive(Clone, Debug)]
pub struct LossGrad {
    pub value: f64,
    /// Gradient for the geometry network; all zeros when the loss does not
    /// train it.
    pub grad_f: Option<ParamGradient>,
    pub grad_v: Option<ParamGradient>,
    pub n_samples: usize,
    pub n_clamped: usize,
}

/// Supervised samples of one frame at its real time.
#[derive(Clone, Debug, PartialEq)]
pub struct ReconTarget {
    pub time: f64,
    pub points: Vec<Vec3>,
    /// Ground-truth signed distance per point.
    pub sdf: Vec<f64>,
    /// Warp draws in `[-1, 1]`; the offset is `unit * progress * frame_gap`.
    pub warp_units: Vec<f64>,
}

impl ReconTarget {
    /// Computes ground truth against `frame`. Warp units start at zero.
    pub fn from_frame(frame: &OrientedPointCloud, time: f64, points: Vec<Vec3>) -> Self {
        let sdf = signed_distances(&points, frame);
        let warp_units = vec![0.0; points.len()];
        Self {
            time,
            points,
            sdf,
            warp_units,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Linear warping setup: offsets `delta_i = warp_units_i * scale`, warped
/// times clamped to `time_bounds`.
#[derive(Clone, Copy, Debug)]
pub struct Warp<'a> {
    pub v: &'a SirenParams,
    pub scale: f64,
    pub time_bounds: (f64, f64),
}

fn check_field(params: &SirenParams, out: usize, role: &str) -> Result<()> {
    if params.in_dim() != 4 || params.out_dim() != out {
        return Err(Error::Shape(format!(
            "{role} network must map R^4 to R^{out}, got {:?}",
            params.dims()
        )));
    }
    Ok(())
}

fn check_samples(samples: &[[f64; 4]]) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::Domain("loss evaluated on zero samples".into()));
    }
    if samples.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite loss sample".into()));
    }
    Ok(())
}

struct ReconSums {
    penalty: f64,
    clamped: usize,
    grad_f: Vec<f64>,
    grad_v: Option<Vec<f64>>,
}

/// Sum of penalties over all targets; gradients scaled by `weight`.
fn recon_pass(
    f: &SirenParams,
    targets: &[ReconTarget],
    warp: Option<Warp<'_>>,
    weight: f64,
    norm: ResidualNorm,
) -> ReconSums {
    let index: Vec<(usize, usize)> = targets
        .iter()
        .enumerate()
        .flat_map(|(g, t)| (0..t.len()).map(move |i| (g, i)))
        .collect();
    let nf = f.len();
    let nv = warp.map_or(0, |w| w.v.len());
    let width = nf + nv + 2;
    let acc = par::accumulate(index.len(), width, |range, acc| {
        let mut f_tape = SirenTape::new(f, false);
        let mut v_tape = warp.map(|w| SirenTape::new(w.v, false));
        let (gf, rest) = acc.split_at_mut(nf);
        let (gv, sums) = rest.split_at_mut(nv);
        let mut d_input = [0.0; 4];
        for &(g, i) in &index[range] {
            let target = &targets[g];
            let x = target.points[i];
            let t = target.time;
            let mut query = [x.x, x.y, x.z, t];
            let mut delta = 0.0;
            if let (Some(w), Some(v_tape)) = (warp, v_tape.as_mut()) {
                delta = target.warp_units[i] * w.scale;
                v_tape.forward(w.v, &query);
                let vel = v_tape.value();
                for k in 0..3 {
                    query[k] += delta * vel[k];
                }
                let warped_t = t + delta;
                let clamped_t = warped_t.clamp(w.time_bounds.0, w.time_bounds.1);
                if clamped_t != warped_t {
                    sums[1] += 1.0;
                }
                query[3] = clamped_t;
            }
            f_tape.forward(f, &query);
            let r = f_tape.value()[0] - target.sdf[i];
            let (pen, dpen) = norm.apply(r);
            sums[0] += pen;
            let g_val = weight * dpen;
            if g_val == 0.0 {
                continue;
            }
            if let (Some(w), Some(v_tape)) = (warp, v_tape.as_mut()) {
                f_tape.backward(f, &[g_val], None, gf, Some(&mut d_input));
                if delta != 0.0 {
                    let d_vel = [delta * d_input[0], delta * d_input[1], delta * d_input[2]];
                    v_tape.backward(w.v, &d_vel, None, gv, None);
                }
            } else {
                f_tape.backward(f, &[g_val], None, gf, None);
            }
        }
    });
    ReconSums {
        penalty: acc[nf + nv],
        clamped: acc[nf + nv + 1] as usize,
        grad_f: acc[..nf].to_vec(),
        grad_v: warp.map(|_| acc[nf..nf + nv].to_vec()),
    }
}

/// Reconstruction loss on precomputed targets.
pub fn recon_loss_targets(
    f: &SirenParams,
    targets: &[ReconTarget],
    warp: Option<Warp<'_>>,
    norm: ResidualNorm,
) -> Result<LossGrad> {
    check_field(f, 1, "geometry")?;
    if let Some(w) = warp {
        check_field(w.v, 3, "velocity")?;
    }
    let n: usize = targets.iter().map(ReconTarget::len).sum();
    if n == 0 {
        return Err(Error::Domain("reconstruction loss on zero samples".into()));
    }
    for t in targets {
        if t.sdf.len() != t.len() || t.warp_units.len() != t.len() {
            return Err(Error::Shape("reconstruction target arrays differ in length".into()));
        }
    }
    let sums = recon_pass(f, targets, warp, 1.0 / n as f64, norm);
    Ok(LossGrad {
        value: sums.penalty / n as f64,
        grad_f: Some(ParamGradient::from_vec(f.dims().to_vec(), sums.grad_f)),
        grad_v: warp.map(|w| ParamGradient::from_vec(w.v.dims().to_vec(), sums.grad_v.unwrap())),
        n_samples: n,
        n_clamped: sums.clamped,
    })
}

/// Mean `|f_hat(x, t) - d(x, X_t)|` over `sample_points` for one frame.
///
/// Without a warp `f_hat` is the geometry network itself; with one it is
/// `f(x + delta v(x, t), t + delta)` using `deltas` per sample.
pub fn recon_loss(
    f: &SirenParams,
    frame: &OrientedPointCloud,
    time: f64,
    sample_points: &[Vec3],
    warp: Option<(Warp<'_>, &[f64])>,
    norm: ResidualNorm,
) -> Result<LossGrad> {
    let mut target = ReconTarget::from_frame(frame, time, sample_points.to_vec());
    let warp = match warp {
        Some((w, deltas)) => {
            if deltas.len() != sample_points.len() {
                return Err(Error::Shape(format!(
                    "{} warp offsets for {} samples",
                    deltas.len(),
                    sample_points.len()
                )));
            }
            target.warp_units = deltas.to_vec();
            Some(Warp { scale: 1.0, ..w })
        }
        None => None,
    };
    recon_loss_targets(f, std::slice::from_ref(&target), warp, norm)
}

/// Per-term weights for a fused pass over space-time samples; `None` skips
/// the term.
#[derive(Clone, Copy, Debug, Default)]
struct PhysicsTerms {
    div: Option<f64>,
    advect: Option<f64>,
    ns: Option<f64>,
}

struct PhysicsSums {
    div: f64,
    advect: f64,
    ns: f64,
    grad_v: Vec<f64>,
}

/// Divergence of a velocity Jacobian (row-major `3 x 4`).
#[inline]
pub fn div_residual(jac_v: &[f64]) -> f64 {
    jac_v[0] + jac_v[5] + jac_v[10]
}

/// Transport residual from the geometry Jacobian (`1 x 4`) and velocity.
#[inline]
pub fn advect_residual(jac_f: &[f64], v: &[f64]) -> f64 {
    jac_f[3] + v[0] * jac_f[0] + v[1] * jac_f[1] + v[2] * jac_f[2]
}

/// Self-advection residual `dv/dt + (grad v) v`.
#[inline]
pub fn ns_residual(jac_v: &[f64], v: &[f64]) -> [f64; 3] {
    std::array::from_fn(|j| {
        let row = &jac_v[j * 4..j * 4 + 4];
        row[3] + row[0] * v[0] + row[1] * v[1] + row[2] * v[2]
    })
}

fn physics_pass(
    f: Option<&SirenParams>,
    v: &SirenParams,
    samples: &[[f64; 4]],
    terms: PhysicsTerms,
    norm: ResidualNorm,
) -> PhysicsSums {
    let nv = v.len();
    let acc = par::accumulate(samples.len(), nv + 3, |range, acc| {
        let mut v_tape = SirenTape::new(v, true);
        let mut f_tape = f.map(|f| SirenTape::new(f, true));
        let (gv, sums) = acc.split_at_mut(nv);
        let mut d_val = [0.0; 3];
        let mut d_jac = [0.0; 12];
        for x in &samples[range] {
            v_tape.forward(v, x);
            d_val.fill(0.0);
            d_jac.fill(0.0);
            let vel: [f64; 3] = v_tape.value().try_into().unwrap();
            let jv = v_tape.jacobian();
            let mut uses_jac = false;
            if let Some(w) = terms.div {
                let (pen, dpen) = norm.apply(div_residual(jv));
                sums[0] += pen;
                let g = w * dpen;
                d_jac[0] += g;
                d_jac[5] += g;
                d_jac[10] += g;
                uses_jac = true;
            }
            if let (Some(w), Some(f_tape), Some(fp)) = (terms.advect, f_tape.as_mut(), f) {
                f_tape.forward(fp, x);
                let jf = f_tape.jacobian();
                let (pen, dpen) = norm.apply(advect_residual(jf, &vel));
                sums[1] += pen;
                let g = w * dpen;
                for i in 0..3 {
                    d_val[i] += g * jf[i];
                }
            }
            if let Some(w) = terms.ns {
                let r = ns_residual(jv, &vel);
                for j in 0..3 {
                    let (pen, dpen) = norm.apply(r[j]);
                    sums[2] += pen;
                    let g = w * dpen;
                    if g == 0.0 {
                        continue;
                    }
                    d_jac[j * 4 + 3] += g;
                    for i in 0..3 {
                        d_jac[j * 4 + i] += g * vel[i];
                        d_val[i] += g * jv[j * 4 + i];
                    }
                }
                uses_jac = true;
            }
            let d_jac_opt = uses_jac.then_some(&d_jac[..]);
            v_tape.backward(v, &d_val, d_jac_opt, gv, None);
        }
    });
    PhysicsSums {
        div: acc[nv],
        advect: acc[nv + 1],
        ns: acc[nv + 2],
        grad_v: acc[..nv].to_vec(),
    }
}

fn physics_loss(
    f: Option<&SirenParams>,
    v: &SirenParams,
    samples: &[[f64; 4]],
    terms: PhysicsTerms,
    norm: ResidualNorm,
    pick: fn(&PhysicsSums) -> f64,
) -> Result<LossGrad> {
    check_field(v, 3, "velocity")?;
    if let Some(f) = f {
        check_field(f, 1, "geometry")?;
    }
    check_samples(samples)?;
    let n = samples.len() as f64;
    let sums = physics_pass(f, v, samples, terms, norm);
    Ok(LossGrad {
        value: pick(&sums) / n,
        grad_f: f.map(ParamGradient::zeros_like),
        grad_v: Some(ParamGradient::from_vec(v.dims().to_vec(), sums.grad_v)),
        n_samples: samples.len(),
        n_clamped: 0,
    })
}

/// Mean absolute divergence of `v` over `(x, y, z, t)` samples.
pub fn div_loss(v: &SirenParams, samples: &[[f64; 4]], norm: ResidualNorm) -> Result<LossGrad> {
    let w = 1.0 / samples.len().max(1) as f64;
    let terms = PhysicsTerms {
        div: Some(w),
        ..Default::default()
    };
    physics_loss(None, v, samples, terms, norm, |s| s.div)
}

/// Mean absolute transport residual. Only `v` is trained: the returned
/// geometry gradient is identically zero.
pub fn advect_loss(
    f: &SirenParams,
    v: &SirenParams,
    samples: &[[f64; 4]],
    norm: ResidualNorm,
) -> Result<LossGrad> {
    let w = 1.0 / samples.len().max(1) as f64;
    let terms = PhysicsTerms {
        advect: Some(w),
        ..Default::default()
    };
    physics_loss(Some(f), v, samples, terms, norm, |s| s.advect)
}

/// Mean L1 norm of the self-advection residual.
pub fn ns_loss(v: &SirenParams, samples: &[[f64; 4]], norm: ResidualNorm) -> Result<LossGrad> {
    let w = 1.0 / samples.len().max(1) as f64;
    let terms = PhysicsTerms {
        ns: Some(w),
        ..Default::default()
    };
    physics_loss(None, v, samples, terms, norm, |s| s.ns)
}

/// Everything one optimization step consumes.
#[derive(Clone, Debug)]
pub struct TrainBatch {
    pub recon: Vec<ReconTarget>,
    /// `(x, y, z, t)` samples for the fluid residuals.
    pub physics: Vec<[f64; 4]>,
    /// Spacing of supervised frames; the warp interval at full progress.
    pub frame_gap: f64,
    /// Allowed range of warped times.
    pub time_bounds: (f64, f64),
}

/// Loss report and gradients of the phase objective.
#[derive(Clone, Debug)]
pub struct TotalLoss {
    pub report: LossReport,
    pub grad_f: ParamGradient,
    pub grad_v: ParamGradient,
}

/// Phase objective.
///
/// * [`Phase::Geometry`]: `recon` without warping; trains `f`.
/// * [`Phase::Velocity`]: `l1 div + l2 advect + l3 ns`; trains `v`, `f` frozen.
/// * [`Phase::Joint`]: all terms, reconstruction warped with offsets up to
///   `warp_progress * frame_gap`; trains both.
///
/// Inactive terms are reported as zero.
pub fn total_loss(
    phase: Phase,
    f: &SirenParams,
    v: &SirenParams,
    batch: &TrainBatch,
    weights: &LossWeights,
    warp_progress: f64,
    norm: ResidualNorm,
) -> Result<TotalLoss> {
    check_field(f, 1, "geometry")?;
    check_field(v, 3, "velocity")?;
    weights.validate()?;
    if !(0.0..=1.0).contains(&warp_progress) {
        return Err(Error::Domain(format!("warp progress {warp_progress} outside [0, 1]")));
    }
    let mut grad_f = ParamGradient::zeros_like(f);
    let mut grad_v = ParamGradient::zeros_like(v);
    let (mut recon, mut div, mut advect, mut ns) = (0.0, 0.0, 0.0, 0.0);
    let (mut n_recon, mut n_physics, mut n_clamped) = (0, 0, 0);

    if matches!(phase, Phase::Geometry | Phase::Joint) {
        n_recon = batch.recon.iter().map(ReconTarget::len).sum();
        if n_recon == 0 {
            return Err(Error::Domain("phase needs reconstruction samples".into()));
        }
        let warp = (phase == Phase::Joint).then_some(Warp {
            v,
            scale: warp_progress * batch.frame_gap,
            time_bounds: batch.time_bounds,
        });
        let sums = recon_pass(f, &batch.recon, warp, 1.0 / n_recon as f64, norm);
        recon = sums.penalty / n_recon as f64;
        n_clamped = sums.clamped;
        grad_f = ParamGradient::from_vec(f.dims().to_vec(), sums.grad_f);
        if let Some(gv) = sums.grad_v {
            grad_v = ParamGradient::from_vec(v.dims().to_vec(), gv);
        }
    }

    if matches!(phase, Phase::Velocity | Phase::Joint) {
        check_samples(&batch.physics)?;
        n_physics = batch.physics.len();
        let w = 1.0 / n_physics as f64;
        let terms = PhysicsTerms {
            div: Some(weights.lambda1 * w),
            advect: Some(weights.lambda2 * w),
            ns: Some(weights.lambda3 * w),
        };
        let sums = physics_pass(Some(f), v, &batch.physics, terms, norm);
        div = sums.div * w;
        advect = sums.advect * w;
        ns = sums.ns * w;
        let physics_grad = ParamGradient::from_vec(v.dims().to_vec(), sums.grad_v);
        grad_v.add_assign(&physics_grad);
    }

    let report = LossReport {
        epoch: 0,
        phase,
        recon,
        div,
        advect,
        ns,
        total: weights.total(recon, div, advect, ns),
        n_recon,
        n_physics,
        n_clamped,
    };
    Ok(TotalLoss {
        report,
        grad_f,
        grad_v,
    })
}

/// Any field that can report its value and input Jacobian at `(x, y, z, t)`.
///
/// Lets the residual definitions run on closed-form fields as well as
/// networks.
pub trait SpaceTimeField {
    fn out_dim(&self) -> usize;
    fn eval(&self, x: &[f64; 4]) -> FieldEval;
}

impl SpaceTimeField for SirenParams {
    fn out_dim(&self) -> usize {
        SirenParams::out_dim(self)
    }

    fn eval(&self, x: &[f64; 4]) -> FieldEval {
        eval_with_jacobian(self, x).expect("finite sample")
    }
}

/// Closed-form field given as value and Jacobian closures.
pub struct AnalyticField<V, J> {
    pub out_dim: usize,
    pub value: V,
    pub jacobian: J,
}

impl<V, J> SpaceTimeField for AnalyticField<V, J>
where
    V: Fn(&[f64; 4]) -> Vec<f64>,
    J: Fn(&[f64; 4]) -> Vec<f64>,
{
    fn out_dim(&self) -> usize {
        self.out_dim
    }

    fn eval(&self, x: &[f64; 4]) -> FieldEval {
        FieldEval {
            value: (self.value)(x),
            input_jacobian: (self.jacobian)(x),
            in_dim: 4,
        }
    }
}

/// Mean divergence penalty of any velocity field.
pub fn div_residual_mean(v: &dyn SpaceTimeField, samples: &[[f64; 4]], norm: ResidualNorm) -> f64 {
    mean(samples, |x| norm.apply(div_residual(&v.eval(x).input_jacobian)).0)
}

/// Mean transport penalty of any geometry/velocity pair.
pub fn advect_residual_mean(
    f: &dyn SpaceTimeField,
    v: &dyn SpaceTimeField,
    samples: &[[f64; 4]],
    norm: ResidualNorm,
) -> f64 {
    mean(samples, |x| {
        let jf = f.eval(x).input_jacobian;
        norm.apply(advect_residual(&jf, &v.eval(x).value)).0
    })
}

/// Mean self-advection penalty of any velocity field.
pub fn ns_residual_mean(v: &dyn SpaceTimeField, samples: &[[f64; 4]], norm: ResidualNorm) -> f64 {
    mean(samples, |x| {
        let e = v.eval(x);
        ns_residual(&e.input_jacobian, &e.value)
            .iter()
            .map(|&r| norm.apply(r).0)
            .sum()
    })
}

fn mean(samples: &[[f64; 4]], term: impl Fn(&[f64; 4]) -> f64) -> f64 {
    samples.iter().map(term).sum::<f64>() / samples.len().max(1) as f64
}
