//! Synthetic 4D scenes with analytic level-set and velocity oracles.
//!
//! All scenes live in `[-1, 1]³` over `t ∈ [0, 1]`, with frame `i` of `n`
//! observed at `i / (n - 1)`. Frames are area-uniform random surface samples
//! carrying exact normals and per-sample area weights.
//!
//! * `translating_sphere`: sphere moving at constant velocity along x.
//! * `merging_spheres`: two spheres approaching along x until they fuse.
//!   The oracle is the min of both sphere distances, which is not a true
//!   distance near the junction.
//! * `rotating_box`: box spinning about z.
//! * `swirl`: capsule carried by the divergence-free differential rotation
//!   `v = w s(|x|) (-y, x, 0)` with `s(r) = exp(-r² / σ²)`. Each orbit keeps
//!   its angular speed, so the flow map is known in closed form; the oracle is
//!   the capsule distance pulled back through it.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::Matrix3;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extraction::marching_cubes_fn;
use crate::geometry::{Aabb, FrameSequence, OrientedPointCloud};
use crate::io::{read_point_cloud, write_point_cloud};
use crate::mesh::TriMesh;
use crate::sampling::{rng_for, SampleRng};
use crate::Vec3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneKind {
    TranslatingSphere,
    MergingSpheres,
    RotatingBox,
    Swirl,
}

impl SceneKind {
    pub const ALL: [SceneKind; 4] = [
        SceneKind::TranslatingSphere,
        SceneKind::MergingSpheres,
        SceneKind::RotatingBox,
        SceneKind::Swirl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SceneKind::TranslatingSphere => "translating_sphere",
            SceneKind::MergingSpheres => "merging_spheres",
            SceneKind::RotatingBox => "rotating_box",
            SceneKind::Swirl => "swirl",
        }
    }

    /// Size parameter used when the spec leaves it unset.
    pub fn default_radius(self) -> f64 {
        match self {
            SceneKind::TranslatingSphere => 0.4,
            SceneKind::MergingSpheres => 0.35,
            SceneKind::RotatingBox => 0.5,
            SceneKind::Swirl => 0.15,
        }
    }

    /// Motion parameter used when the spec leaves it unset.
    pub fn default_speed(self) -> f64 {
        match self {
            SceneKind::TranslatingSphere => 0.6,
            SceneKind::MergingSpheres => 0.35,
            SceneKind::RotatingBox => FRAC_PI_2,
            SceneKind::Swirl => PI,
        }
    }
}

impl fmt::Display for SceneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SceneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SceneKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = SceneKind::ALL.iter().map(|k| k.name()).collect();
                Error::Config(format!("unknown scene kind '{s}' (expected one of {})", names.join(", ")))
            })
    }
}

/// What to generate.
///
/// `radius` is the sphere radius, the largest box half-extent or the capsule
/// radius. `speed` is the sphere speed, the distance each merging sphere
/// travels, or the angular speed of the box and the swirl core.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub kind: SceneKind,
    pub n_frames: usize,
    pub points_per_frame: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speed: Option<f64>,
}

impl SceneSpec {
    pub fn new(kind: SceneKind, n_frames: usize, points_per_frame: usize, seed: u64) -> Self {
        Self {
            kind,
            n_frames,
            points_per_frame,
            seed,
            radius: None,
            speed: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_frames < 2 {
            return Err(Error::Config(format!("a scene needs at least 2 frames, got {}", self.n_frames)));
        }
        if self.points_per_frame < 100 {
            return Err(Error::Config(format!(
                "a scene needs at least 100 points per frame, got {}",
                self.points_per_frame
            )));
        }
        let scene = Scene::new(self.clone());
        if !(scene.radius > 0.0 && scene.radius.is_finite() && scene.speed.is_finite()) {
            return Err(Error::Config("scene radius must be positive and speed finite".into()));
        }
        let reach = match self.kind {
            SceneKind::TranslatingSphere => scene.radius + 0.5 * scene.speed.abs(),
            SceneKind::MergingSpheres => scene.radius + MERGE_START,
            SceneKind::RotatingBox => scene.radius * Vec3::new(1.0, BOX_RATIO.0, BOX_RATIO.1).norm(),
            SceneKind::Swirl => scene.radius + SWIRL_HALF_LENGTH.hypot(SWIRL_OFFSET),
        };
        if reach >= 1.0 {
            return Err(Error::Config(format!(
                "{} with radius {} and speed {} leaves the [-1, 1]³ domain",
                self.kind, scene.radius, scene.speed
            )));
        }
        if self.kind == SceneKind::MergingSpheres && scene.speed > MERGE_START {
            return Err(Error::Config("merging spheres would pass through each other".into()));
        }
        Ok(())
    }
}

/// Initial half-distance between merging sphere centers.
const MERGE_START: f64 = 0.6;
/// Box half-extents relative to the largest one.
const BOX_RATIO: (f64, f64) = (0.6, 0.4);
const SWIRL_HALF_LENGTH: f64 = 0.35;
const SWIRL_OFFSET: f64 = 0.15;
const SWIRL_SIGMA2: f64 = 0.25;

/// Evaluable ground truth for one spec.
#[derive(Clone, Debug)]
pub struct Scene {
    pub spec: SceneSpec,
    radius: f64,
    speed: f64,
}

fn rot_z(theta: f64, x: &Vec3) -> Vec3 {
    let (s, c) = theta.sin_cos();
    Vec3::new(c * x.x - s * x.y, s * x.x + c * x.y, x.z)
}

fn unit_gaussian<R: Rng>(rng: &mut R) -> Vec3 {
    loop {
        let g = Vec3::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        let n = g.norm();
        if n > 1e-12 {
            return g / n;
        }
    }
}

fn box_sdf(half: &Vec3, x: &Vec3) -> f64 {
    let q = x.abs() - half;
    q.sup(&Vec3::zeros()).norm() + q.max().min(0.0)
}

impl Scene {
    pub fn new(spec: SceneSpec) -> Self {
        let radius = spec.radius.unwrap_or_else(|| spec.kind.default_radius());
        let speed = spec.speed.unwrap_or_else(|| spec.kind.default_speed());
        Self { spec, radius, speed }
    }

    pub fn kind(&self) -> SceneKind {
        self.spec.kind
    }

    /// Scene domain.
    pub fn bbox(&self) -> Aabb {
        Aabb::cube(1.0)
    }

    pub fn times(&self) -> Vec<f64> {
        let n = self.spec.n_frames;
        (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
    }

    fn sphere_center(&self, t: f64) -> Vec3 {
        Vec3::new(self.speed * (t - 0.5), 0.0, 0.0)
    }

    fn merge_half_gap(&self, t: f64) -> f64 {
        MERGE_START - self.speed * t
    }

    fn box_half(&self) -> Vec3 {
        self.radius * Vec3::new(1.0, BOX_RATIO.0, BOX_RATIO.1)
    }

    fn capsule(&self) -> (Vec3, Vec3) {
        (
            Vec3::new(-SWIRL_HALF_LENGTH, SWIRL_OFFSET, 0.0),
            Vec3::new(SWIRL_HALF_LENGTH, SWIRL_OFFSET, 0.0),
        )
    }

    fn capsule_sdf(&self, x: &Vec3) -> f64 {
        let (a, b) = self.capsule();
        let ab = b - a;
        let s = ((x - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
        (x - (a + ab * s)).norm() - self.radius
    }

    fn swirl_falloff(r: f64) -> f64 {
        (-r * r / SWIRL_SIGMA2).exp()
    }

    /// Level-set oracle: negative inside, zero on the surface.
    pub fn sdf(&self, x: &Vec3, t: f64) -> f64 {
        match self.kind() {
            SceneKind::TranslatingSphere => (x - self.sphere_center(t)).norm() - self.radius,
            SceneKind::MergingSpheres => {
                let d = self.merge_half_gap(t);
                let a = (x - Vec3::new(-d, 0.0, 0.0)).norm() - self.radius;
                let b = (x - Vec3::new(d, 0.0, 0.0)).norm() - self.radius;
                a.min(b)
            }
            SceneKind::RotatingBox => box_sdf(&self.box_half(), &rot_z(-self.speed * t, x)),
            SceneKind::Swirl => {
                let back = rot_z(-self.speed * t * Self::swirl_falloff(x.norm()), x);
                self.capsule_sdf(&back)
            }
        }
    }

    /// Velocity oracle. For merging spheres each half-space follows its sphere.
    pub fn velocity(&self, x: &Vec3, _t: f64) -> Vec3 {
        match self.kind() {
            SceneKind::TranslatingSphere => Vec3::new(self.speed, 0.0, 0.0),
            SceneKind::MergingSpheres => Vec3::new(-self.speed * x.x.signum(), 0.0, 0.0),
            SceneKind::RotatingBox => self.speed * Vec3::new(-x.y, x.x, 0.0),
            SceneKind::Swirl => self.speed * Self::swirl_falloff(x.norm()) * Vec3::new(-x.y, x.x, 0.0),
        }
    }

    /// Exact position at `t1` of the material point at `x` at time `t0`.
    pub fn flow(&self, x: &Vec3, t0: f64, t1: f64) -> Vec3 {
        let dt = t1 - t0;
        match self.kind() {
            SceneKind::TranslatingSphere | SceneKind::MergingSpheres => x + self.velocity(x, t0) * dt,
            SceneKind::RotatingBox => rot_z(self.speed * dt, x),
            SceneKind::Swirl => rot_z(self.speed * dt * Self::swirl_falloff(x.norm()), x),
        }
    }

    /// Surface samples at time `t` with exact normals and area weights.
    pub fn sample_surface<R: Rng>(&self, t: f64, n: usize, rng: &mut R) -> Result<OrientedPointCloud> {
        let (points, normals, areas) = match self.kind() {
            SceneKind::TranslatingSphere => {
                let c = self.sphere_center(t);
                let r = self.radius;
                let dirs: Vec<Vec3> = (0..n).map(|_| unit_gaussian(rng)).collect();
                let area = 4.0 * PI * r * r / n as f64;
                (dirs.iter().map(|d| c + d * r).collect(), dirs, vec![area; n])
            }
            SceneKind::MergingSpheres => self.sample_merging(t, n, rng),
            SceneKind::RotatingBox => {
                let (p, nrm, a) = self.sample_box(n, rng);
                let theta = self.speed * t;
                (
                    p.iter().map(|x| rot_z(theta, x)).collect(),
                    nrm.iter().map(|x| rot_z(theta, x)).collect(),
                    a,
                )
            }
            SceneKind::Swirl => self.sample_swirl(t, n, rng),
        };
        OrientedPointCloud::new(points, normals, areas)
    }

    /// Each sphere keeps only samples outside the other; weights are the
    /// exposed area over the kept count.
    fn sample_merging<R: Rng>(&self, t: f64, n: usize, rng: &mut R) -> (Vec<Vec3>, Vec<Vec3>, Vec<f64>) {
        let d = self.merge_half_gap(t);
        let r = self.radius;
        let buried_cap = if d < r { 2.0 * PI * r * (r - d) } else { 0.0 };
        let exposed = 4.0 * PI * r * r - buried_cap;
        let mut points = Vec::with_capacity(n);
        let mut normals = Vec::with_capacity(n);
        let mut areas = Vec::with_capacity(n);
        for (side, count) in [(-1.0, n / 2), (1.0, n - n / 2)] {
            let c = Vec3::new(side * d, 0.0, 0.0);
            let other = -c;
            let mut kept = 0;
            while kept < count {
                let dir = unit_gaussian(rng);
                let p = c + dir * r;
                if (p - other).norm() < r {
                    continue;
                }
                points.push(p);
                normals.push(dir);
                areas.push(exposed / count as f64);
                kept += 1;
            }
        }
        (points, normals, areas)
    }

    fn sample_box<R: Rng>(&self, n: usize, rng: &mut R) -> (Vec<Vec3>, Vec<Vec3>, Vec<f64>) {
        let h = self.box_half();
        // Face pair k is normal to axis k.
        let face_area = [4.0 * h.y * h.z, 4.0 * h.x * h.z, 4.0 * h.x * h.y];
        let total = 2.0 * face_area.iter().sum::<f64>();
        let mut points = Vec::with_capacity(n);
        let mut normals = Vec::with_capacity(n);
        for _ in 0..n {
            let mut u = rng.gen::<f64>() * total / 2.0;
            let mut axis = 0;
            while axis < 2 && u >= face_area[axis] {
                u -= face_area[axis];
                axis += 1;
            }
            let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            let mut p = Vec3::new(
                rng.gen_range(-h.x..=h.x),
                rng.gen_range(-h.y..=h.y),
                rng.gen_range(-h.z..=h.z),
            );
            p[axis] = sign * h[axis];
            let mut nrm = Vec3::zeros();
            nrm[axis] = sign;
            points.push(p);
            normals.push(nrm);
        }
        (points, normals, vec![total / n as f64; n])
    }

    /// Capsule samples pushed through the flow map; normals and areas follow
    /// Nanson's relation `n' da' = det(J) J^-T n da`.
    fn sample_swirl<R: Rng>(&self, t: f64, n: usize, rng: &mut R) -> (Vec<Vec3>, Vec<Vec3>, Vec<f64>) {
        let (a, b) = self.capsule();
        let r = self.radius;
        let axis = b - a;
        let len = axis.norm();
        let side_area = 2.0 * PI * r * len;
        let total = side_area + 4.0 * PI * r * r;
        let mut points = Vec::with_capacity(n);
        let mut normals = Vec::with_capacity(n);
        let mut areas = Vec::with_capacity(n);
        for _ in 0..n {
            let (p0, n0) = if rng.gen::<f64>() * total < side_area {
                // Axis along x: the side normal lies in the yz plane.
                let s = rng.gen::<f64>();
                let phi = rng.gen_range(0.0..2.0 * PI);
                let nrm = Vec3::new(0.0, phi.cos(), phi.sin());
                (a + axis * s + nrm * r, nrm)
            } else {
                let dir = unit_gaussian(rng);
                let end = if dir.x < 0.0 { a } else { b };
                (end + dir * r, dir)
            };
            let theta = self.speed * t * Self::swirl_falloff(p0.norm());
            let rot = Matrix3::new(
                theta.cos(), -theta.sin(), 0.0,
                theta.sin(), theta.cos(), 0.0,
                0.0, 0.0, 1.0,
            );
            let grad_theta = p0 * (-2.0 * theta / SWIRL_SIGMA2);
            let jac = rot + (rot * Vec3::new(-p0.y, p0.x, 0.0)) * grad_theta.transpose();
            let inv_t = jac
                .try_inverse()
                .expect("flow map Jacobian is invertible")
                .transpose();
            let m = inv_t * n0;
            points.push(rot * p0);
            normals.push(m.normalize());
            areas.push(jac.determinant() * m.norm() * total / n as f64);
        }
        (points, normals, areas)
    }

    /// All frames, generated in parallel with one generator per frame.
    pub fn generate(&self) -> Result<FrameSequence> {
        self.spec.validate()?;
        let times = self.times();
        let frames = times
            .par_iter()
            .enumerate()
            .map(|(i, &t)| {
                let mut rng: SampleRng = rng_for(self.spec.seed, &[0x5343, i as u64]);
                self.sample_surface(t, self.spec.points_per_frame, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        FrameSequence::new(frames, times, self.bbox())
    }

    /// Marching cubes of the oracle at time `t`.
    pub fn reference_mesh(&self, t: f64, resolution: usize) -> Result<TriMesh> {
        marching_cubes_fn(|x| self.sdf(x, t), resolution, &self.bbox())
    }
}

/// On-disk description of a generated scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneManifest {
    pub spec: SceneSpec,
    /// Frame files relative to the manifest.
    pub frames: Vec<String>,
    pub times: Vec<f64>,
    pub bbox_min: [f64; 3],
    pub bbox_max: [f64; 3],
}

pub const MANIFEST_FILE: &str = "manifest.toml";

impl SceneManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))
    }

    pub fn bbox(&self) -> Aabb {
        Aabb::new(Vec3::from(self.bbox_min), Vec3::from(self.bbox_max))
    }

    pub fn frame_paths(&self, dir: &Path) -> Vec<PathBuf> {
        self.frames.iter().map(|f| dir.join(f)).collect()
    }

    /// Reads the frames listed next to a manifest at `path`.
    pub fn load_frames(&self, path: &Path) -> Result<FrameSequence> {
        let dir = path.parent().unwrap_or_else(|| Path::new("."));
        let frames = self
            .frame_paths(dir)
            .iter()
            .map(|p| read_point_cloud(p))
            .collect::<Result<Vec<_>>>()?;
        FrameSequence::new(frames, self.times.clone(), self.bbox())
    }
}

/// Generates `spec` and writes `frame_XXX.ply` files plus the manifest into
/// `dir`, which is created if missing. The manifest goes last.
pub fn write_scene(spec: &SceneSpec, dir: &Path) -> Result<SceneManifest> {
    let scene = Scene::new(spec.clone());
    let seq = scene.generate()?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let names: Vec<String> = (0..seq.len()).map(|i| format!("frame_{i:03}.ply")).collect();
    for (name, frame) in names.iter().zip(seq.frames()) {
        write_point_cloud(&dir.join(name), frame)?;
    }
    let bbox = seq.bbox();
    let manifest = SceneManifest {
        spec: spec.clone(),
        frames: names,
        times: seq.times().to_vec(),
        bbox_min: bbox.min.into(),
        bbox_max: bbox.max.into(),
    };
    let path = dir.join(MANIFEST_FILE);
    let text = toml::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene(kind: SceneKind) -> Scene {
        Scene::new(SceneSpec::new(kind, 8, 2000, 7))
    }

    fn fd_grad(s: &Scene, x: &Vec3, t: f64) -> (Vec3, f64) {
        let h = 1e-6;
        let mut g = Vec3::zeros();
        for k in 0..3 {
            let mut e = Vec3::zeros();
            e[k] = h;
            g[k] = (s.sdf(&(x + e), t) - s.sdf(&(x - e), t)) / (2.0 * h);
        }
        (g, (s.sdf(x, t + h) - s.sdf(x, t - h)) / (2.0 * h))
    }

    #[test]
    fn kind_names_round_trip() {
        for k in SceneKind::ALL {
            assert_eq!(k.name().parse::<SceneKind>().unwrap(), k);
        }
        assert!(matches!("vortex".parse::<SceneKind>(), Err(Error::Config(_))));
    }

    #[test]
    fn spec_validation() {
        assert!(SceneSpec::new(SceneKind::Swirl, 1, 500, 0).validate().is_err());
        assert!(SceneSpec::new(SceneKind::Swirl, 4, 50, 0).validate().is_err());
        let mut big = SceneSpec::new(SceneKind::TranslatingSphere, 4, 500, 0);
        big.radius = Some(0.9);
        assert!(big.validate().is_err());
        for k in SceneKind::ALL {
            SceneSpec::new(k, 4, 500, 0).validate().unwrap();
        }
    }

    #[test]
    fn translating_sphere_oracles() {
        let s = scene(SceneKind::TranslatingSphere);
        assert!((s.sdf(&Vec3::new(-0.3, 0.0, 0.0), 0.0) + 0.4).abs() < 1e-15);
        assert!((s.sdf(&Vec3::new(0.3, 0.5, 0.0), 1.0) - 0.1).abs() < 1e-15);
        assert_eq!(s.velocity(&Vec3::zeros(), 0.3), Vec3::new(0.6, 0.0, 0.0));
    }

    #[test]
    fn samples_lie_on_the_surface_with_oracle_normals() {
        let mut rng = rng_for(1, &[]);
        for kind in SceneKind::ALL {
            let s = scene(kind);
            for &t in &[0.0, 0.37, 1.0] {
                let cloud = s.sample_surface(t, 400, &mut rng).unwrap();
                for (p, n) in cloud.points().iter().zip(cloud.normals()) {
                    assert!(s.sdf(p, t).abs() < 1e-9, "{kind} t={t} {p:?}");
                    let (g, _) = fd_grad(&s, p, t);
                    // Box edges and the merging junction have no gradient.
                    if kind == SceneKind::RotatingBox || g.norm() < 0.5 {
                        continue;
                    }
                    assert!((g.normalize() - n).norm() < 1e-6, "{kind} t={t} {p:?}");
                }
            }
        }
    }

    #[test]
    fn box_normals_are_face_normals() {
        let s = scene(SceneKind::RotatingBox);
        let cloud = s.sample_surface(0.5, 500, &mut rng_for(2, &[])).unwrap();
        for (p, n) in cloud.points().iter().zip(cloud.normals()) {
            let e = 1e-7;
            assert!(s.sdf(&(p + n * e), 0.5) > 0.0 && s.sdf(&(p - n * e), 0.5) < 0.0);
        }
    }

    #[test]
    fn area_weights_sum_to_surface_area() {
        let mut rng = rng_for(3, &[]);
        let sphere = scene(SceneKind::TranslatingSphere).sample_surface(0.2, 1000, &mut rng).unwrap();
        let total: f64 = sphere.areas().iter().sum();
        assert!((total - 4.0 * PI * 0.16).abs() < 1e-9);
        // Swirled weights integrate to the deformed surface's area and,
        // through the divergence theorem, to the conserved volume.
        let s = scene(SceneKind::Swirl);
        let cloud = s.sample_surface(1.0, 100_000, &mut rng_for(4, &[])).unwrap();
        let area: f64 = cloud.areas().iter().sum();
        let mesh_area = s.reference_mesh(1.0, 160).unwrap().surface_area();
        assert!((area - mesh_area).abs() / mesh_area < 0.02, "{area} {mesh_area}");
        let volume: f64 = cloud
            .points()
            .iter()
            .zip(cloud.normals())
            .zip(cloud.areas())
            .map(|((p, n), a)| p.dot(n) * a / 3.0)
            .sum();
        let exact = PI * 0.15f64.powi(2) * 0.7 + 4.0 / 3.0 * PI * 0.15f64.powi(3);
        assert!((volume - exact).abs() / exact < 0.02, "{volume} {exact}");
    }

    #[test]
    fn transport_pairs_have_zero_advection_residual() {
        let mut rng = rng_for(5, &[]);
        for kind in [SceneKind::TranslatingSphere, SceneKind::Swirl, SceneKind::RotatingBox] {
            let s = scene(kind);
            let mut worst: f64 = 0.0;
            for _ in 0..2000 {
                let x = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                let t = rng.gen_range(0.05..0.95);
                let (g, ft) = fd_grad(&s, &x, t);
                if (g.norm() - 1.0).abs() > 0.5 && kind != SceneKind::Swirl {
                    continue;
                }
                worst = worst.max((ft + s.velocity(&x, t).dot(&g)).abs());
            }
            assert!(worst < 1e-6, "{kind}: {worst}");
        }
    }

    #[test]
    fn flow_maps_track_the_surface() {
        let mut rng = rng_for(6, &[]);
        for kind in SceneKind::ALL {
            let s = scene(kind);
            let cloud = s.sample_surface(0.0, 300, &mut rng).unwrap();
            for p in cloud.points() {
                let q = s.flow(p, 0.0, 0.5);
                // Merging sphere samples near the plane may cross into the
                // other sphere once the gap closes; stop before that.
                assert!(s.sdf(&q, 0.5).abs() < 1e-9, "{kind} {p:?}");
            }
        }
    }

    #[test]
    fn merging_spheres_change_topology() {
        let s = scene(SceneKind::MergingSpheres);
        assert_eq!(s.reference_mesh(0.0, 48).unwrap().connected_components(), 2);
        assert_eq!(s.reference_mesh(1.0, 48).unwrap().connected_components(), 1);
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = SceneSpec::new(SceneKind::Swirl, 3, 300, 11);
        let a = Scene::new(spec.clone()).generate().unwrap();
        let b = Scene::new(spec).generate().unwrap();
        for (fa, fb) in a.frames().iter().zip(b.frames()) {
            assert_eq!(fa.points(), fb.points());
            assert_eq!(fa.normals(), fb.normals());
        }
        assert_eq!(a.times(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SceneSpec::new(SceneKind::MergingSpheres, 3, 200, 2);
        let written = write_scene(&spec, dir.path()).unwrap();
        let path = dir.path().join(MANIFEST_FILE);
        let manifest = SceneManifest::load(&path).unwrap();
        assert_eq!(manifest, written);
        let seq = manifest.load_frames(&path).unwrap();
        let direct = Scene::new(spec).generate().unwrap();
        assert_eq!(seq.len(), 3);
        for (a, b) in seq.frames().iter().zip(direct.frames()) {
            assert_eq!(a.points(), b.points());
            for (x, y) in a.areas().iter().zip(b.areas()) {
                assert_eq!(x, y);
            }
        }
    }
}
