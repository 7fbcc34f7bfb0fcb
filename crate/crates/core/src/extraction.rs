//! Zero level set extraction with classic marching cubes.
//!
//! The 15-case table is used without the asymptotic decider, so ambiguous
//! faces may be resolved inconsistently with the underlying trilinear field.
//! Neighbouring cells still agree on every shared edge vertex, which keeps
//! the result watertight when the field is nonzero on the grid boundary.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::Aabb;
use crate::mc_tables::{CORNERS, EDGE_CORNERS, TRI_TABLE};
use crate::mesh::TriMesh;
use crate::siren::{SirenParams, SirenTape};
use crate::Vec3;

/// Grid resolution used by the reconstruction command when none is given.
pub const DEFAULT_RESOLUTION: usize = 128;

/// Field samples on a `res³` lattice spanning `bbox` (corners included),
/// stored x-fastest.
#[derive(Clone, Debug)]
pub struct Grid {
    pub res: usize,
    pub bbox: Aabb,
    pub values: Vec<f64>,
}

impl Grid {
    /// Evaluates `field` one z-slab per task.
    pub fn sample<F>(field: F, res: usize, bbox: &Aabb) -> Result<Self>
    where
        F: Fn(&Vec3) -> f64 + Sync,
    {
        if res < 2 {
            return Err(Error::Domain(format!("marching cubes needs resolution >= 2, got {res}")));
        }
        if bbox.is_degenerate() {
            return Err(Error::Domain(format!("degenerate extraction box {bbox:?}")));
        }
        let mut values = vec![0.0; res * res * res];
        let grid = Grid {
            res,
            bbox: *bbox,
            values: Vec::new(),
        };
        values
            .par_chunks_mut(res * res)
            .enumerate()
            .for_each(|(k, slab)| {
                for j in 0..res {
                    for i in 0..res {
                        slab[j * res + i] = field(&grid.node(i, j, k));
                    }
                }
            });
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            let (i, j, k) = (bad % res, (bad / res) % res, bad / (res * res));
            return Err(Error::Numerical(format!(
                "non-finite field value at grid node ({i}, {j}, {k}) = {:?}",
                grid.node(i, j, k)
            )));
        }
        Ok(Grid { values, ..grid })
    }

    pub fn spacing(&self) -> Vec3 {
        self.bbox.extent() / (self.res - 1) as f64
    }

    pub fn node(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.bbox.min + self.spacing().component_mul(&Vec3::new(i as f64, j as f64, k as f64))
    }

    fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.res + j) * self.res + i
    }

    pub fn value(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.index(i, j, k)]
    }

    /// Length of one cell's diagonal.
    pub fn cell_diagonal(&self) -> f64 {
        self.spacing().norm()
    }

    /// Triangulates the zero level set. Cells are visited in x-fastest order
    /// and vertices are shared through their grid edge, so the output is
    /// deterministic and indexed.
    pub fn triangulate(&self) -> TriMesh {
        let res = self.res;
        let mut vertices = Vec::new();
        let mut triangles = Vec::new();
        let mut edge_vertex: HashMap<(usize, usize), u32> = HashMap::new();
        for k in 0..res - 1 {
            for j in 0..res - 1 {
                for i in 0..res - 1 {
                    let corner = |c: usize| {
                        let [dx, dy, dz] = CORNERS[c];
                        (i + dx, j + dy, k + dz)
                    };
                    let mut case = 0usize;
                    for c in 0..8 {
                        let (a, b, d) = corner(c);
                        if self.value(a, b, d) < 0.0 {
                            case |= 1 << c;
                        }
                    }
                    if case == 0 || case == 255 {
                        continue;
                    }
                    let mut vertex_of = |e: usize| -> u32 {
                        let [c0, c1] = EDGE_CORNERS[e];
                        let (p, q) = (corner(c0), corner(c1));
                        // Grid edge key: lower endpoint and axis.
                        let (lo, hi) = if self.index(p.0, p.1, p.2) < self.index(q.0, q.1, q.2) {
                            (p, q)
                        } else {
                            (q, p)
                        };
                        let axis = if hi.0 != lo.0 {
                            0
                        } else if hi.1 != lo.1 {
                            1
                        } else {
                            2
                        };
                        let key = (self.index(lo.0, lo.1, lo.2), axis);
                        *edge_vertex.entry(key).or_insert_with(|| {
                            let (va, vb) = (self.value(lo.0, lo.1, lo.2), self.value(hi.0, hi.1, hi.2));
                            let s = va / (va - vb);
                            let (pa, pb) = (self.node(lo.0, lo.1, lo.2), self.node(hi.0, hi.1, hi.2));
                            vertices.push(pa + (pb - pa) * s);
                            (vertices.len() - 1) as u32
                        })
                    };
                    for tri in TRI_TABLE[case].chunks(3).take_while(|t| t[0] >= 0) {
                        let a = vertex_of(tri[0] as usize);
                        let b = vertex_of(tri[1] as usize);
                        let c = vertex_of(tri[2] as usize);
                        // The table winds triangles toward the inside.
                        triangles.push([a, c, b]);
                    }
                }
            }
        }
        TriMesh {
            vertices,
            triangles,
        }
    }
}

/// Marching cubes on an arbitrary scalar field. Inside is `field < 0`.
pub fn marching_cubes_fn<F>(field: F, resolution: usize, bbox: &Aabb) -> Result<TriMesh>
where
    F: Fn(&Vec3) -> f64 + Sync,
{
    Ok(Grid::sample(field, resolution, bbox)?.triangulate())
}

/// Zero level set of the geometry network at time `t`.
pub fn marching_cubes(f: &SirenParams, t: f64, resolution: usize, bbox: &Aabb) -> Result<TriMesh> {
    if f.in_dim() != 4 || f.out_dim() != 1 {
        return Err(Error::Shape(format!(
            "geometry network must map 4 inputs to 1 output, has dims {:?}",
            f.dims()
        )));
    }
    if !t.is_finite() {
        return Err(Error::Domain(format!("extraction time {t} is not finite")));
    }
    marching_cubes_fn(
        |p| {
            let mut tape = SirenTape::new(f, false);
            tape.forward(f, &[p.x, p.y, p.z, t]);
            tape.value()[0]
        },
        resolution,
        bbox,
    )
}
