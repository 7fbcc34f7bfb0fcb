use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::Vec3;

/// Indexed triangle mesh.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
}

impl TriMesh {
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[u32; 3]>) -> Result<Self> {
        let mesh = Self { vertices, triangles };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    /// Checks index range, repeated indices and vertex finiteness.
    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        if let Some(v) = self.vertices.iter().position(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::Domain(format!("vertex {v} is not finite")));
        }
        for (t, tri) in self.triangles.iter().enumerate() {
            if tri.iter().any(|&i| i as usize >= n) {
                return Err(Error::Domain(format!("triangle {t} indexes past {n} vertices")));
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(Error::Domain(format!("triangle {t} repeats a vertex: {tri:?}")));
            }
        }
        Ok(())
    }

    /// Undirected edges with the number of incident triangles.
    pub fn edge_counts(&self) -> HashMap<(u32, u32), usize> {
        let mut edges = HashMap::with_capacity(self.triangles.len() * 3 / 2);
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *edges.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        edges
    }

    /// Every edge is shared by exactly two triangles.
    pub fn is_watertight(&self) -> bool {
        !self.triangles.is_empty() && self.edge_counts().values().all(|&c| c == 2)
    }

    /// `V - E + F` over referenced vertices.
    pub fn euler_characteristic(&self) -> i64 {
        let mut used = vec![false; self.vertices.len()];
        for t in &self.triangles {
            for &i in t {
                used[i as usize] = true;
            }
        }
        let v = used.iter().filter(|&&u| u).count() as i64;
        let e = self.edge_counts().len() as i64;
        v - e + self.triangles.len() as i64
    }

    /// Number of edge-connected triangle components.
    pub fn connected_components(&self) -> usize {
        let mut parent: Vec<u32> = (0..self.vertices.len() as u32).collect();
        fn find(parent: &mut [u32], mut x: u32) -> u32 {
            while parent[x as usize] != x {
                parent[x as usize] = parent[parent[x as usize] as usize];
                x = parent[x as usize];
            }
            x
        }
        for t in &self.triangles {
            let r0 = find(&mut parent, t[0]);
            for &i in &t[1..] {
                let r = find(&mut parent, i);
                if r != r0 {
                    parent[r as usize] = r0;
                }
            }
        }
        let mut roots: Vec<u32> = self
            .triangles
            .iter()
            .map(|t| find(&mut parent, t[0]))
            .collect();
        roots.sort_unstable();
        roots.dedup();
        roots.len()
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.corners(t);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn corners(&self, t: usize) -> [Vec3; 3] {
        let tri = self.triangles[t];
        tri.map(|i| self.vertices[i as usize])
    }

    /// Unnormalized face normal (right-hand rule).
    pub fn face_normal(&self, t: usize) -> Vec3 {
        let [a, b, c] = self.corners(t);
        (b - a).cross(&(c - a))
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    /// `n` points distributed uniformly by area.
    pub fn sample_surface<R: Rng>(&self, n: usize, rng: &mut R) -> Vec<Vec3> {
        if self.triangles.is_empty() || n == 0 {
            return Vec::new();
        }
        let mut cdf = Vec::with_capacity(self.triangles.len());
        let mut acc = 0.0;
        for t in 0..self.triangles.len() {
            acc += self.triangle_area(t);
            cdf.push(acc);
        }
        (0..n)
            .map(|_| {
                let target = rng.gen::<f64>() * acc;
                let t = cdf.partition_point(|&c| c < target).min(cdf.len() - 1);
                let [a, b, c] = self.corners(t);
                let (mut u, mut v) = (rng.gen::<f64>(), rng.gen::<f64>());
                if u + v > 1.0 {
                    u = 1.0 - u;
                    v = 1.0 - v;
                }
                a + (b - a) * u + (c - a) * v
            })
            .collect()
    }

    /// Vertex adjacency with Euclidean edge lengths.
    pub fn edge_graph(&self) -> Vec<Vec<(u32, f64)>> {
        let mut adj = vec![Vec::new(); self.vertices.len()];
        let mut edges: Vec<(u32, u32)> = self.edge_counts().into_keys().collect();
        edges.sort_unstable();
        for (a, b) in edges {
            let len = (self.vertices[a as usize] - self.vertices[b as usize]).norm();
            adj[a as usize].push((b, len));
            adj[b as usize].push((a, len));
        }
        adj
    }
}
