//! Ground-truth signed distances from oriented point clouds.
//!
//! Magnitude comes from the closest sample; the sign comes from the
//! generalized winding number evaluated at the query point.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kdtree::KdTree;
use crate::Vec3;

/// Unit normals must be within this distance of length one.
pub const NORMAL_TOLERANCE: f64 = 1e-6;
/// Neighbour rank used for local area estimates.
pub const AREA_NEIGHBOURS: usize = 8;
/// Winding numbers at or above this value count as inside.
pub const INSIDE_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        Self { min, max }
    }

    pub fn cube(half: f64) -> Self {
        Self::new(Vec3::repeat(-half), Vec3::repeat(half))
    }

    /// Tightest box around `points`; `None` when empty.
    pub fn around<'a>(points: impl IntoIterator<Item = &'a Vec3>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = *it.next()?;
        Some(it.fold(Self::new(first, first), |b, p| Self::new(b.min.inf(p), b.max.sup(p))))
    }

    pub fn union(&self, other: &Aabb) -> Aabb {
        Aabb::new(self.min.inf(&other.min), self.max.sup(&other.max))
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn diagonal(&self) -> f64 {
        self.extent().norm()
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn is_degenerate(&self) -> bool {
        (0..3).any(|i| !(self.max[i] > self.min[i]))
    }

    /// Grows every axis by `fraction` of its half extent on each side. Flat
    /// axes borrow the largest half extent so the result has volume.
    pub fn padded(&self, fraction: f64) -> Aabb {
        let half = self.extent() * 0.5;
        let fallback = half.max().max(1e-3);
        let pad = half.map(|h| if h > 0.0 { h * fraction } else { fallback * fraction });
        Aabb::new(self.min - pad, self.max + pad)
    }
}

/// One observed frame: positions, unit normals and per-sample area weights.
#[derive(Clone, Debug)]
pub struct OrientedPointCloud {
    points: Vec<Vec3>,
    normals: Vec<Vec3>,
    areas: Vec<f64>,
    tree: KdTree,
    epsilon: f64,
    // Structure-of-arrays copy of positions and area-weighted normals for
    // the winding number sum.
    soa: [Vec<f64>; 6],
}

impl OrientedPointCloud {
    pub fn new(points: Vec<Vec3>, normals: Vec<Vec3>, areas: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Domain("a point cloud needs at least one point".into()));
        }
        if normals.len() != points.len() || areas.len() != points.len() {
            return Err(Error::Shape(format!(
                "{} points, {} normals, {} areas",
                points.len(),
                normals.len(),
                areas.len()
            )));
        }
        if let Some(i) = points.iter().position(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(Error::Domain(format!("point {i} is not finite")));
        }
        if let Some(i) = normals
            .iter()
            .position(|n| !((n.norm() - 1.0).abs() <= NORMAL_TOLERANCE))
        {
            return Err(Error::Domain(format!(
                "normal {i} has length {}, expected unit length",
                normals[i].norm()
            )));
        }
        if let Some(i) = areas.iter().position(|a| !(a.is_finite() && *a > 0.0)) {
            return Err(Error::Domain(format!("area {i} = {} is not positive", areas[i])));
        }
        let bbox = Aabb::around(&points).unwrap();
        let epsilon = 1e-6 * bbox.diagonal().max(f64::MIN_POSITIVE);
        let mut soa: [Vec<f64>; 6] = Default::default();
        for ((p, n), a) in points.iter().zip(&normals).zip(&areas) {
            for k in 0..3 {
                soa[k].push(p[k]);
                soa[3 + k].push(a * n[k]);
            }
        }
        let tree = KdTree::new(&points);
        Ok(Self {
            points,
            normals,
            areas,
            tree,
            epsilon,
            soa,
        })
    }

    /// Builds a cloud whose area weights come from local sample density:
    /// `pi * rho^2 / k`, with `rho` the distance to the k-th neighbour.
    pub fn with_estimated_areas(points: Vec<Vec3>, normals: Vec<Vec3>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Domain("a point cloud needs at least one point".into()));
        }
        let tree = KdTree::new(&points);
        let k = AREA_NEIGHBOURS.min(points.len() - 1);
        let areas: Vec<f64> = points
            .par_iter()
            .map(|p| {
                if k == 0 {
                    return 1.0;
                }
                // The query point itself comes back first.
                let rho = tree.k_nearest(p, k + 1).last().map_or(0.0, |x| x.1);
                (PI * rho * rho / k as f64).max(f64::MIN_POSITIVE)
            })
            .collect();
        let floor = areas.iter().cloned().fold(f64::INFINITY, f64::min);
        // Coincident duplicates would get zero area; fall back to the median.
        let areas = if floor > f64::MIN_POSITIVE {
            areas
        } else {
            let mut sorted = areas.clone();
            sorted.sort_by(f64::total_cmp);
            let median = sorted[sorted.len() / 2].max(1e-12);
            areas
                .into_iter()
                .map(|a| if a > f64::MIN_POSITIVE { a } else { median })
                .collect()
        };
        Self::new(points, normals, areas)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn normals(&self) -> &[Vec3] {
        &self.normals
    }

    pub fn areas(&self) -> &[f64] {
        &self.areas
    }

    pub fn bbox(&self) -> Aabb {
        Aabb::around(&self.points).unwrap()
    }

    pub fn tree(&self) -> &KdTree {
        &self.tree
    }

    /// Singularity clamp for the winding number kernel.
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
}

/// Generalized winding number of the cloud at `x`: close to 1 inside a
/// closed, outward-oriented sampling and close to 0 outside.
pub fn winding_number(x: &Vec3, cloud: &OrientedPointCloud) -> f64 {
    let [px, py, pz, nx, ny, nz] = &cloud.soa;
    let eps3 = cloud.epsilon.powi(3);
    let mut sum = 0.0;
    for i in 0..px.len() {
        let dx = px[i] - x[0];
        let dy = py[i] - x[1];
        let dz = pz[i] - x[2];
        let r2 = dx * dx + dy * dy + dz * dz;
        let r3 = (r2 * r2.sqrt()).max(eps3);
        sum += (dx * nx[i] + dy * ny[i] + dz * nz[i]) / r3;
    }
    sum / (4.0 * PI)
}

/// Closest sample to `x`, ties broken towards the lowest index.
pub fn nearest_point(x: &Vec3, cloud: &OrientedPointCloud) -> Result<(usize, f64)> {
    cloud
        .tree
        .nearest(x)
        .ok_or_else(|| Error::Domain("nearest point query on an empty cloud".into()))
}

/// Signed distance to the sampled surface, negative inside.
pub fn signed_distance(x: &Vec3, cloud: &OrientedPointCloud) -> f64 {
    let (_, dist) = cloud.tree.nearest(x).expect("clouds are never empty");
    if dist == 0.0 {
        return 0.0;
    }
    if winding_number(x, cloud) >= INSIDE_THRESHOLD {
        -dist
    } else {
        dist
    }
}

/// [`signed_distance`] over many points, evaluated in parallel.
pub fn signed_distances(points: &[Vec3], cloud: &OrientedPointCloud) -> Vec<f64> {
    points.par_iter().map(|p| signed_distance(p, cloud)).collect()
}

/// How frame labels map to real time values.
#[derive(Clone, Debug, PartialEq, Default)]
pub enum TimeMap {
    /// Label `i` of `n` maps to `i / (n - 1)`.
    #[default]
    Linear,
    Explicit(Vec<f64>),
}

impl TimeMap {
    pub fn times(&self, n: usize) -> Result<Vec<f64>> {
        match self {
            TimeMap::Linear if n <= 1 => Ok(vec![0.0; n]),
            TimeMap::Linear => Ok((0..n).map(|i| i as f64 / (n - 1) as f64).collect()),
            TimeMap::Explicit(times) if times.len() == n => Ok(times.clone()),
            TimeMap::Explicit(times) => Err(Error::Config(format!(
                "{} explicit times for {n} frames",
                times.len()
            ))),
        }
    }
}

/// Time-ordered observations and the domain box they live in.
#[derive(Clone, Debug)]
pub struct FrameSequence {
    frames: Vec<OrientedPointCloud>,
    times: Vec<f64>,
    bbox: Aabb,
}

/// Relative padding applied around the union of all frames.
pub const BBOX_PADDING: f64 = 0.1;

impl FrameSequence {
    pub fn new(frames: Vec<OrientedPointCloud>, times: Vec<f64>, bbox: Aabb) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::Domain("a frame sequence needs at least one frame".into()));
        }
        if frames.len() != times.len() {
            return Err(Error::Shape(format!(
                "{} frames but {} times",
                frames.len(),
                times.len()
            )));
        }
        if times.iter().any(|t| !t.is_finite()) || times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Domain(format!("frame times must increase strictly: {times:?}")));
        }
        if bbox.is_degenerate() {
            return Err(Error::Domain("degenerate domain box".into()));
        }
        for (i, f) in frames.iter().enumerate() {
            if let Some(p) = f.points().iter().find(|p| !bbox.contains(p)) {
                return Err(Error::Domain(format!("frame {i} point {p:?} lies outside the domain box")));
            }
        }
        Ok(Self { frames, times, bbox })
    }

    /// Domain box = union of frame boxes grown by [`BBOX_PADDING`].
    pub fn with_padded_bbox(frames: Vec<OrientedPointCloud>, times: Vec<f64>) -> Result<Self> {
        let bbox = frames
            .iter()
            .map(|f| f.bbox())
            .reduce(|a, b| a.union(&b))
            .ok_or_else(|| Error::Domain("a frame sequence needs at least one frame".into()))?
            .padded(BBOX_PADDING);
        Self::new(frames, times, bbox)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames(&self) -> &[OrientedPointCloud] {
        &self.frames
    }

    pub fn frame(&self, i: usize) -> &OrientedPointCloud {
        &self.frames[i]
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn bbox(&self) -> Aabb {
        self.bbox
    }

    pub fn time_range(&self) -> (f64, f64) {
        (self.times[0], *self.times.last().unwrap())
    }

    /// Mean spacing between adjacent supervised times (0 for one frame).
    pub fn frame_gap(&self) -> f64 {
        if self.times.len() < 2 {
            return 0.0;
        }
        let (lo, hi) = self.time_range();
        (hi - lo) / (self.times.len() - 1) as f64
    }
}
