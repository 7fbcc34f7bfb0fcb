//! Static k-d tree with exact nearest-neighbour queries.
//!
//! Ties in distance resolve to the lowest point index, so every query agrees
//! with a linear scan that keeps the first minimum.

use crate::Vec3;

const LEAF_SIZE: usize = 8;

#[derive(Clone, Debug)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { dim: usize, value: f64, left: usize, right: usize },
}

#[derive(Clone, Debug)]
pub struct KdTree {
    points: Vec<Vec3>,
    perm: Vec<usize>,
    nodes: Vec<Node>,
}

#[inline]
fn better(d2: f64, idx: usize, best_d2: f64, best_idx: usize) -> bool {
    d2 < best_d2 || (d2 == best_d2 && idx < best_idx)
}

impl KdTree {
    pub fn new(points: &[Vec3]) -> Self {
        let mut tree = Self {
            points: points.to_vec(),
            perm: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            tree.build(0, points.len());
        }
        tree
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

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for &i in &self.perm[start..end] {
            lo = lo.inf(&self.points[i]);
            hi = hi.sup(&self.points[i]);
        }
        let extent = hi - lo;
        if extent.max() == 0.0 {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let dim = extent.imax();
        let mid = start + (end - start) / 2;
        let points = &self.points;
        self.perm[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a][dim].total_cmp(&points[b][dim])
        });
        let value = self.points[self.perm[mid]][dim];
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id] = Node::Split { dim, value, left, right };
        id
    }

    /// Index of and distance to the closest point; `None` on an empty tree.
    pub fn nearest(&self, query: &Vec3) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = (f64::INFINITY, usize::MAX);
        // Entries carry a lower bound on the squared distance to the node's
        // cell, built from per-axis offsets to the splitting planes.
        let mut stack = vec![(0usize, 0.0f64, [0.0f64; 3])];
        while let Some((node, bound, off)) = stack.pop() {
            if bound > best.0 {
                continue;
            }
            match self.nodes[node] {
                Node::Leaf { start, end } => {
                    for &i in &self.perm[start..end] {
                        let d2 = (self.points[i] - query).norm_squared();
                        if better(d2, i, best.0, best.1) {
                            best = (d2, i);
                        }
                    }
                }
                Node::Split { dim, value, left, right } => {
                    let diff = query[dim] - value;
                    let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                    let mut far_off = off;
                    far_off[dim] = diff * diff;
                    stack.push((far, bound - off[dim] + far_off[dim], far_off));
                    stack.push((near, bound, off));
                }
            }
        }
        Some((best.1, best.0.sqrt()))
    }

    /// The `k` closest points sorted by `(distance, index)`.
    pub fn k_nearest(&self, query: &Vec3, k: usize) -> Vec<(usize, f64)> {
        let k = k.min(self.points.len());
        if k == 0 {
            return Vec::new();
        }
        // Sorted ascending by (d2, idx); small k keeps insertion cheap.
        let mut found: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        let worst = |found: &Vec<(f64, usize)>| {
            if found.len() < k {
                f64::INFINITY
            } else {
                found[k - 1].0
            }
        };
        let mut stack = vec![(0usize, 0.0f64, [0.0f64; 3])];
        while let Some((node, bound, off)) = stack.pop() {
            if bound > worst(&found) {
                continue;
            }
            match self.nodes[node] {
                Node::Leaf { start, end } => {
                    for &i in &self.perm[start..end] {
                        let d2 = (self.points[i] - query).norm_squared();
                        if found.len() == k {
                            let (wd, wi) = found[k - 1];
                            if !better(d2, i, wd, wi) {
                                continue;
                            }
                            found.pop();
                        }
                        let pos = found
                            .iter()
                            .position(|&(fd, fi)| better(d2, i, fd, fi))
                            .unwrap_or(found.len());
                        found.insert(pos, (d2, i));
                    }
                }
                Node::Split { dim, value, left, right } => {
                    let diff = query[dim] - value;
                    let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                    let mut far_off = off;
                    far_off[dim] = diff * diff;
                    stack.push((far, bound - off[dim] + far_off[dim], far_off));
                    stack.push((near, bound, off));
                }
            }
        }
        found.into_iter().map(|(d2, i)| (i, d2.sqrt())).collect()
    }
}

/// Linear-scan nearest neighbour, first minimum wins.
pub fn nearest_brute_force(points: &[Vec3], query: &Vec3) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in points.iter().enumerate() {
        let d2 = (p - query).norm_squared();
        if best.map_or(true, |(_, b)| d2 < b) {
            best = Some((i, d2));
        }
    }
    best.map(|(i, d2)| (i, d2.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(n: usize, seed: u64) -> Vec<Vec3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect()
    }

    #[test]
    fn matches_linear_scan() {
        let pts = random_points(10_000, 1);
        let tree = KdTree::new(&pts);
        for q in random_points(100, 2) {
            assert_eq!(tree.nearest(&q), nearest_brute_force(&pts, &q));
        }
    }

    #[test]
    fn ties_resolve_to_lowest_index() {
        let pts: Vec<Vec3> = (0..40).map(|i| Vec3::new((i % 2) as f64, 0.0, 0.0)).collect();
        let tree = KdTree::new(&pts);
        assert_eq!(tree.nearest(&Vec3::new(0.5, 0.0, 0.0)).unwrap().0, 0);
        assert_eq!(tree.nearest(&Vec3::new(0.9, 0.0, 0.0)).unwrap().0, 1);
    }

    #[test]
    fn empty_tree() {
        let tree = KdTree::new(&[]);
        assert!(tree.nearest(&Vec3::zeros()).is_none());
        assert!(tree.k_nearest(&Vec3::zeros(), 3).is_empty());
    }

    #[test]
    fn knn_matches_sorted_scan() {
        let pts = random_points(2000, 3);
        let tree = KdTree::new(&pts);
        for q in random_points(50, 4) {
            let mut all: Vec<(f64, usize)> =
                pts.iter().enumerate().map(|(i, p)| ((p - q).norm_squared(), i)).collect();
            all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let got = tree.k_nearest(&q, 8);
            let want: Vec<usize> = all[..8].iter().map(|x| x.1).collect();
            assert_eq!(got.iter().map(|x| x.0).collect::<Vec<_>>(), want);
        }
    }

    proptest! {
        #[test]
        fn nearest_equals_scan_on_grids(
            coords in prop::collection::vec((-3i32..3, -3i32..3, -3i32..3), 1..200),
            q in (-4.0f64..4.0, -4.0f64..4.0, -4.0f64..4.0),
        ) {
            // Integer lattices produce many exact ties.
            let pts: Vec<Vec3> = coords.iter().map(|&(x, y, z)| Vec3::new(x as f64, y as f64, z as f64)).collect();
            let tree = KdTree::new(&pts);
            let q = Vec3::new(q.0.round() / 2.0, q.1.round() / 2.0, q.2.round() / 2.0);
            prop_assert_eq!(tree.nearest(&q), nearest_brute_force(&pts, &q));
        }
    }
}
