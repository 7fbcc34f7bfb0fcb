//! Reconstruction and matching metrics.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kdtree::KdTree;
use crate::mesh::TriMesh;
use crate::sampling::rng_for;
use crate::Vec3;

/// Surface samples per mesh for mesh-to-mesh chamfer.
pub const MESH_CHAMFER_SAMPLES: usize = 100_000;

/// Which per-pair distance the chamfer average uses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ChamferKind {
    #[default]
    Euclidean,
    Squared,
}

fn one_sided(from: &[Vec3], tree: &KdTree, kind: ChamferKind) -> f64 {
    let sum: f64 = from
        .par_iter()
        .map(|p| {
            let d = tree.nearest(p).expect("nonempty").1;
            match kind {
                ChamferKind::Euclidean => d,
                ChamferKind::Squared => d * d,
            }
        })
        .collect::<Vec<_>>()
        .iter()
        .sum();
    sum / from.len() as f64
}

/// Symmetric chamfer distance: the average of both mean nearest-neighbour
/// distances.
pub fn chamfer_with(a: &[Vec3], b: &[Vec3], kind: ChamferKind) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Domain("chamfer distance of an empty point set".into()));
    }
    let (ta, tb) = (KdTree::new(a), KdTree::new(b));
    Ok(0.5 * (one_sided(a, &tb, kind) + one_sided(b, &ta, kind)))
}

pub fn chamfer(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    chamfer_with(a, b, ChamferKind::Euclidean)
}

/// Chamfer between `n` area-uniform samples of each mesh. Both meshes are
/// sampled with the same random stream, so identical meshes score exactly 0.
pub fn mesh_chamfer(a: &TriMesh, b: &TriMesh, n: usize, seed: u64, kind: ChamferKind) -> Result<f64> {
    if a.triangles.is_empty() || b.triangles.is_empty() {
        return Err(Error::Domain("chamfer distance of a mesh without triangles".into()));
    }
    let sa = a.sample_surface(n, &mut rng_for(seed, &[0xa]));
    let sb = b.sample_surface(n, &mut rng_for(seed, &[0xa]));
    chamfer_with(&sa, &sb, kind)
}

/// Cumulative share of errors at or below each threshold.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchingCurve {
    pub thresholds: Vec<f64>,
    pub fractions: Vec<f64>,
}

impl MatchingCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,fraction\n");
        for (t, f) in self.thresholds.iter().zip(&self.fractions) {
            writeln!(out, "{t},{f}").unwrap();
        }
        out
    }
}

/// `n + 1` evenly spaced thresholds over `[0, 1]`.
pub fn uniform_thresholds(n: usize) -> Vec<f64> {
    (0..=n).map(|k| k as f64 / n.max(1) as f64).collect()
}

pub fn matching_curve(errors: &[f64], thresholds: &[f64]) -> Result<MatchingCurve> {
    if errors.is_empty() {
        return Err(Error::Domain("matching curve of an empty error list".into()));
    }
    if thresholds.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(Error::Domain("matching curve thresholds must ascend".into()));
    }
    if errors.iter().any(|e| e.is_nan()) {
        return Err(Error::Numerical("NaN in matching errors".into()));
    }
    let mut sorted: Vec<f64> = errors.iter().map(|e| e.clamp(0.0, 1.0)).collect();
    sorted.sort_by(f64::total_cmp);
    let fractions = thresholds
        .iter()
        .map(|&t| sorted.partition_point(|&e| e <= t) as f64 / sorted.len() as f64)
        .collect();
    Ok(MatchingCurve {
        thresholds: thresholds.to_vec(),
        fractions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn brute(a: &[Vec3], b: &[Vec3]) -> f64 {
        let side = |x: &[Vec3], y: &[Vec3]| {
            x.iter()
                .map(|p| y.iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min))
                .sum::<f64>()
                / x.len() as f64
        };
        0.5 * (side(a, b) + side(b, a))
    }

    #[test]
    fn chamfer_examples() {
        let a = vec![Vec3::zeros()];
        assert_eq!(chamfer(&a, &a).unwrap(), 0.0);
        assert_eq!(chamfer(&a, &[Vec3::new(0.3, 0.0, 0.0)]).unwrap(), 0.3);
        assert!(chamfer(&a, &[]).is_err());
        let sq = chamfer_with(&a, &[Vec3::new(0.3, 0.0, 0.0)], ChamferKind::Squared).unwrap();
        assert!((sq - 0.09).abs() < 1e-15);
    }

    #[test]
    fn chamfer_equals_double_loop() {
        let mut rng = rng_for(8, &[]);
        let mut cloud = |n| -> Vec<Vec3> { (0..n).map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen())).collect() };
        let (a, b) = (cloud(700), cloud(500));
        assert!((chamfer(&a, &b).unwrap() - brute(&a, &b)).abs() < 1e-12);
    }

    #[test]
    fn mesh_chamfer_of_identical_meshes_is_small() {
        let m = crate::correspondence::tests::icosphere(2);
        assert_eq!(mesh_chamfer(&m, &m, 20_000, 0, ChamferKind::Euclidean).unwrap(), 0.0);
        let fine = crate::correspondence::tests::icosphere(3);
        let d = mesh_chamfer(&m, &fine, 20_000, 0, ChamferKind::Euclidean).unwrap();
        assert!(d > 0.0 && d < 0.05, "{d}");
        let empty = TriMesh::default();
        assert!(mesh_chamfer(&m, &empty, 10, 0, ChamferKind::Euclidean).is_err());
    }

    #[test]
    fn curve_examples() {
        let t = uniform_thresholds(10);
        assert_eq!(t.len(), 11);
        let zero = matching_curve(&[0.0; 5], &t).unwrap();
        assert!(zero.fractions.iter().all(|&f| f == 1.0));
        let c = matching_curve(&[0.05, 0.15], &[0.1]).unwrap();
        assert_eq!(c.fractions, vec![0.5]);
        assert!(matching_curve(&[], &t).is_err());
        assert!(matching_curve(&[0.1], &[0.5, 0.2]).is_err());
        assert!(c.to_csv().starts_with("threshold,fraction\n0.1,0.5"));
    }

    #[test]
    fn curve_is_empirical_cdf() {
        let mut rng = rng_for(9, &[]);
        let errors: Vec<f64> = (0..10_000).map(|_| rng.gen()).collect();
        let mut hist = [0usize; 20];
        for &e in &errors {
            hist[((e * 20.0) as usize).min(19)] += 1;
        }
        let t: Vec<f64> = (1..=20).map(|k| k as f64 / 20.0).collect();
        let c = matching_curve(&errors, &t).unwrap();
        let mut acc = 0;
        for (k, &h) in hist.iter().enumerate() {
            acc += h;
            // Bins are half-open while the curve counts e <= t; a draw landing
            // exactly on a bin edge is measure-zero.
            assert_eq!(c.fractions[k], acc as f64 / errors.len() as f64);
        }
    }

    proptest! {
        #[test]
        fn chamfer_is_symmetric_and_nonnegative(
            a in prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64), 1..40),
            b in prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64), 1..40),
        ) {
            let a: Vec<Vec3> = a.into_iter().map(|(x, y, z)| Vec3::new(x, y, z)).collect();
            let b: Vec<Vec3> = b.into_iter().map(|(x, y, z)| Vec3::new(x, y, z)).collect();
            let ab = chamfer(&a, &b).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab, chamfer(&b, &a).unwrap());
            let key = |v: &Vec<Vec3>| {
                let mut k: Vec<[u64; 3]> = v.iter().map(|p| [p.x.to_bits(), p.y.to_bits(), p.z.to_bits()]).collect();
                k.sort();
                k.dedup();
                k
            };
            prop_assert_eq!(ab == 0.0, key(&a) == key(&b));
        }

        #[test]
        fn curve_is_monotone(
            errors in prop::collection::vec(0.0..1.5f64, 1..100),
            mut t in prop::collection::vec(0.0..1.0f64, 1..20),
        ) {
            t.sort_by(f64::total_cmp);
            let c = matching_curve(&errors, &t).unwrap();
            prop_assert!(c.fractions.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(c.fractions.iter().all(|&f| (0.0..=1.0).contains(&f)));
        }
    }
}
