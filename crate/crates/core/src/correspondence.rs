//! Dense correspondences by integrating the velocity field and snapping the
//! flowed points to the nearest target vertex.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kdtree::KdTree;
use crate::mesh::TriMesh;
use crate::siren::{SirenParams, SirenTape};
use crate::Vec3;

/// Explicit Euler substeps per frame interval when the caller gives none.
pub const DEFAULT_SUBSTEPS_PER_GAP: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct FlowTrajectory {
    pub start_points: Vec<Vec3>,
    pub end_points: Vec<Vec3>,
    pub n_steps: usize,
    pub t_start: f64,
    pub t_end: f64,
}

/// Euler integration `x += h v(x, t)` of every point from `t_start` to
/// `t_end`. `t_end < t_start` integrates backwards.
pub fn flow_points_fn<F>(
    points: &[Vec3],
    velocity: F,
    t_start: f64,
    t_end: f64,
    n_steps: usize,
) -> Result<FlowTrajectory>
where
    F: Fn(&Vec3, f64) -> Vec3 + Sync,
{
    if n_steps == 0 {
        return Err(Error::Domain("flow integration needs n_steps >= 1".into()));
    }
    if !(t_start.is_finite() && t_end.is_finite()) {
        return Err(Error::Domain(format!("flow interval [{t_start}, {t_end}] is not finite")));
    }
    let h = (t_end - t_start) / n_steps as f64;
    let ends: Vec<std::result::Result<Vec3, usize>> = points
        .par_iter()
        .map(|&p| {
            let mut x = p;
            for k in 0..n_steps {
                let t = t_start + k as f64 * h;
                x += velocity(&x, t) * h;
                if !(x.x.is_finite() && x.y.is_finite() && x.z.is_finite()) {
                    return Err(k + 1);
                }
            }
            Ok(x)
        })
        .collect();
    let mut end_points = Vec::with_capacity(points.len());
    for (i, e) in ends.into_iter().enumerate() {
        match e {
            Ok(x) => end_points.push(x),
            Err(step) => {
                return Err(Error::Numerical(format!(
                    "flow of point {i} became non-finite at step {step} of {n_steps}"
                )))
            }
        }
    }
    Ok(FlowTrajectory {
        start_points: points.to_vec(),
        end_points,
        n_steps,
        t_start,
        t_end,
    })
}

/// [`flow_points_fn`] driven by the velocity network.
pub fn flow_points(
    points: &[Vec3],
    v: &SirenParams,
    t_start: f64,
    t_end: f64,
    n_steps: usize,
) -> Result<FlowTrajectory> {
    if v.in_dim() != 4 || v.out_dim() != 3 {
        return Err(Error::Shape(format!(
            "velocity network must map 4 inputs to 3 outputs, has dims {:?}",
            v.dims()
        )));
    }
    flow_points_fn(
        points,
        |x, t| {
            let mut tape = SirenTape::new(v, false);
            tape.forward(v, &[x.x, x.y, x.z, t]);
            let out = tape.value();
            Vec3::new(out[0], out[1], out[2])
        },
        t_start,
        t_end,
        n_steps,
    )
}

/// Euler steps for integrating across `intervals` frame intervals.
pub fn default_steps(intervals: usize) -> usize {
    DEFAULT_SUBSTEPS_PER_GAP * intervals.max(1)
}

/// Source point `i` corresponds to target vertex `targets[i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Matching {
    pub targets: Vec<usize>,
    /// Euclidean distance from the flowed point to its match.
    pub residuals: Vec<f64>,
}

impl Matching {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// `source_index,target_index,residual` rows with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("source_index,target_index,residual\n");
        for (i, (t, r)) in self.targets.iter().zip(&self.residuals).enumerate() {
            writeln!(out, "{i},{t},{r:e}").unwrap();
        }
        out
    }
}

/// Exact nearest target for every flowed point, ties to the lowest index.
pub fn nearest_match(flowed: &[Vec3], target: &[Vec3]) -> Result<Matching> {
    if target.is_empty() {
        return Err(Error::Domain("cannot match against an empty target".into()));
    }
    let tree = KdTree::new(target);
    let (targets, residuals) = flowed
        .par_iter()
        .map(|p| tree.nearest(p).expect("nonempty tree"))
        .unzip();
    Ok(Matching { targets, residuals })
}

#[derive(Clone, Copy, PartialEq)]
struct Frontier(f64, u32);

impl Eq for Frontier {}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Shortest-path distances over a mesh's edge graph.
#[derive(Clone, Debug)]
pub struct MeshGeodesics {
    graph: Vec<Vec<(u32, f64)>>,
    diameter: f64,
}

impl MeshGeodesics {
    /// Builds the edge graph and its exact diameter (largest finite
    /// shortest-path distance), which costs one Dijkstra per vertex.
    pub fn new(mesh: &TriMesh) -> Result<Self> {
        mesh.validate()?;
        if mesh.vertices.is_empty() {
            return Err(Error::Domain("geodesics need a nonempty mesh".into()));
        }
        let graph = mesh.edge_graph();
        let mut g = Self {
            graph,
            diameter: 0.0,
        };
        g.diameter = (0..g.graph.len())
            .into_par_iter()
            .map(|s| {
                g.distances_from(s)
                    .into_iter()
                    .filter(|d| d.is_finite())
                    .fold(0.0, f64::max)
            })
            .reduce(|| 0.0, f64::max);
        Ok(g)
    }

    pub fn diameter(&self) -> f64 {
        self.diameter
    }

    /// Dijkstra from `source`; unreachable vertices get infinity.
    pub fn distances_from(&self, source: usize) -> Vec<f64> {
        let mut dist = vec![f64::INFINITY; self.graph.len()];
        let mut heap = BinaryHeap::new();
        dist[source] = 0.0;
        heap.push(Frontier(0.0, source as u32));
        while let Some(Frontier(d, u)) = heap.pop() {
            if d > dist[u as usize] {
                continue;
            }
            for &(w, len) in &self.graph[u as usize] {
                let nd = d + len;
                if nd < dist[w as usize] {
                    dist[w as usize] = nd;
                    heap.push(Frontier(nd, w));
                }
            }
        }
        dist
    }

    /// Symmetric by construction: always searched from the smaller index.
    pub fn distance(&self, a: usize, b: usize) -> f64 {
        let (s, t) = if a <= b { (a, b) } else { (b, a) };
        self.distances_from(s)[t]
    }
}

/// Per-point normalized geodesic errors.
#[derive(Clone, Debug, PartialEq)]
pub struct GeodesicErrors {
    /// Graph distance over the mesh diameter; disconnected pairs score 1.
    pub errors: Vec<f64>,
    pub n_disconnected: usize,
    pub diameter: f64,
}

/// Errors between predicted and ground-truth target vertices.
pub fn geodesic_errors(
    predicted: &[usize],
    ground_truth: &[usize],
    geodesics: &MeshGeodesics,
) -> Result<GeodesicErrors> {
    if predicted.len() != ground_truth.len() {
        return Err(Error::Shape(format!(
            "{} predicted matches but {} ground-truth matches",
            predicted.len(),
            ground_truth.len()
        )));
    }
    let n = geodesics.graph.len();
    if let Some(bad) = predicted.iter().chain(ground_truth).find(|&&i| i >= n) {
        return Err(Error::Shape(format!("vertex index {bad} out of range for {n} vertices")));
    }
    // One search per distinct source vertex.
    let mut by_source: HashMap<usize, Vec<usize>> = HashMap::new();
    for (k, (&p, &g)) in predicted.iter().zip(ground_truth).enumerate() {
        by_source.entry(p.min(g)).or_default().push(k);
    }
    let mut sources: Vec<usize> = by_source.keys().copied().collect();
    sources.sort_unstable();
    let rows: Vec<(usize, Vec<f64>)> = sources
        .par_iter()
        .map(|&s| (s, geodesics.distances_from(s)))
        .collect();
    let mut errors = vec![0.0; predicted.len()];
    let mut n_disconnected = 0;
    for (s, dist) in rows {
        for &k in &by_source[&s] {
            let d = dist[predicted[k].max(ground_truth[k])];
            errors[k] = if !d.is_finite() {
                n_disconnected += 1;
                1.0
            } else if geodesics.diameter > 0.0 {
                (d / geodesics.diameter).min(1.0)
            } else {
                0.0
            };
        }
    }
    Ok(GeodesicErrors {
        errors,
        n_disconnected,
        diameter: geodesics.diameter,
    })
}
