//! Monte Carlo sample generation for the loss integrals.

use rand::distributions::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::geometry::{Aabb, OrientedPointCloud};
use crate::Vec3;

/// Generator used everywhere in the pipeline.
pub type SampleRng = ChaCha8Rng;

/// Derives an independent generator from a base seed and stream labels.
pub fn rng_for(seed: u64, stream: &[u64]) -> SampleRng {
    // SplitMix64 finalizer over the labels.
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    for &s in stream {
        h = h.wrapping_add(s.wrapping_add(0x9e37_79b9_7f4a_7c15));
        h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h ^= h >> 31;
    }
    SampleRng::seed_from_u64(h)
}

/// Space-time points for one step: `space_points[i]` belong to `times[i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleBatch {
    pub times: Vec<f64>,
    pub space_points: Vec<Vec<Vec3>>,
    pub rng_seed: u64,
}

impl SampleBatch {
    /// Flattened `(x, y, z, t)` network inputs.
    pub fn space_time(&self) -> Vec<[f64; 4]> {
        self.times
            .iter()
            .zip(&self.space_points)
            .flat_map(|(&t, pts)| pts.iter().map(move |p| [p.x, p.y, p.z, t]))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.space_points.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One uniform draw in each of `n` equal bins of `[t_min, t_max)`, ascending.
pub fn stratified_times<R: Rng>(n: usize, t_min: f64, t_max: f64, rng: &mut R) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::Domain("stratified sampling needs n >= 1".into()));
    }
    if !(t_min < t_max) {
        return Err(Error::Domain(format!("empty time interval [{t_min}, {t_max}]")));
    }
    let width = (t_max - t_min) / n as f64;
    Ok((0..n)
        .map(|k| {
            let lo = t_min + k as f64 * width;
            // Rounding can push lo + u*width onto the next bin edge.
            let t = lo + rng.gen::<f64>() * width;
            let hi = t_min + (k + 1) as f64 * width;
            if t >= hi && k + 1 < n {
                lo
            } else {
                t.min(t_max)
            }
        })
        .collect())
}

/// `m` i.i.d. uniform points in `bbox`.
pub fn sample_box<R: Rng>(bbox: &Aabb, m: usize, rng: &mut R) -> Result<Vec<Vec3>> {
    if bbox.is_degenerate() {
        return Err(Error::Domain(format!("degenerate sampling box {bbox:?}")));
    }
    if m == 0 {
        return Err(Error::Domain("box sampling needs m >= 1".into()));
    }
    let axes: Vec<Uniform<f64>> = (0..3)
        .map(|k| Uniform::new_inclusive(bbox.min[k], bbox.max[k]))
        .collect();
    Ok((0..m)
        .map(|_| Vec3::new(axes[0].sample(rng), axes[1].sample(rng), axes[2].sample(rng)))
        .collect())
}

/// Symmetric warp offset in `[-progress * gap, progress * gap]`.
pub fn warp_delta<R: Rng>(progress: f64, frame_gap: f64, rng: &mut R) -> f64 {
    let half = progress.clamp(0.0, 1.0) * frame_gap.max(0.0);
    if half == 0.0 {
        return 0.0;
    }
    rng.gen_range(-half..=half)
}

/// Space-time batch: stratified times, `points_per_time` box points each.
pub fn physics_batch(
    bbox: &Aabb,
    t_range: (f64, f64),
    n_times: usize,
    points_per_time: usize,
    seed: u64,
) -> Result<SampleBatch> {
    let mut rng = rng_for(seed, &[0x5047]);
    let times = stratified_times(n_times, t_range.0, t_range.1, &mut rng)?;
    let space_points = times
        .iter()
        .map(|_| sample_box(bbox, points_per_time, &mut rng))
        .collect::<Result<_>>()?;
    Ok(SampleBatch {
        times,
        space_points,
        rng_seed: seed,
    })
}

/// Supervision points for one frame: a `near_fraction` share are cloud
/// samples jittered by an isotropic Gaussian of standard deviation `sigma`,
/// the rest are uniform in `bbox`. Jittered points are clamped into `bbox`.
pub fn supervision_points<R: Rng>(
    cloud: &OrientedPointCloud,
    bbox: &Aabb,
    m: usize,
    near_fraction: f64,
    sigma: f64,
    rng: &mut R,
) -> Result<Vec<Vec3>> {
    let n_near = ((m as f64) * near_fraction.clamp(0.0, 1.0)).round() as usize;
    let mut pts = if m > n_near {
        sample_box(bbox, m - n_near, rng)?
    } else {
        Vec::with_capacity(m)
    };
    let pick = Uniform::new(0, cloud.len());
    for _ in 0..n_near {
        let base = cloud.points()[pick.sample(rng)];
        let jitter = Vec3::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        ) * sigma;
        pts.push((base + jitter).sup(&bbox.min).inf(&bbox.max));
    }
    Ok(pts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stratified_one_per_bin() {
        let mut rng = rng_for(1, &[]);
        let t = stratified_times(4, 0.0, 1.0, &mut rng).unwrap();
        for (k, v) in t.iter().enumerate() {
            assert!(*v >= k as f64 / 4.0 && *v < (k + 1) as f64 / 4.0, "{t:?}");
        }
        let one = stratified_times(1, -2.0, 3.0, &mut rng).unwrap();
        assert!(one[0] >= -2.0 && one[0] <= 3.0);
        assert!(stratified_times(0, 0.0, 1.0, &mut rng).is_err());
        assert!(stratified_times(3, 1.0, 1.0, &mut rng).is_err());
    }

    #[test]
    fn stratified_histogram_is_exact() {
        let mut rng = rng_for(2, &[]);
        let mut counts = [0usize; 10];
        for _ in 0..10_000 {
            for t in stratified_times(10, 0.0, 1.0, &mut rng).unwrap() {
                counts[((t * 10.0).floor() as usize).min(9)] += 1;
            }
        }
        assert!(counts.iter().all(|&c| c == 10_000), "{counts:?}");
    }

    #[test]
    fn box_statistics_and_containment() {
        let b = Aabb::new(Vec3::zeros(), Vec3::repeat(1.0));
        let mut rng = rng_for(3, &[]);
        let pts = sample_box(&b, 100_000, &mut rng).unwrap();
        assert!(pts.iter().all(|p| b.contains(p)));
        let mean = pts.iter().sum::<Vec3>() / pts.len() as f64;
        for k in 0..3 {
            assert!((mean[k] - 0.5).abs() < 0.01, "{mean:?}");
        }
        let again = sample_box(&b, 100_000, &mut rng_for(3, &[])).unwrap();
        assert_eq!(pts, again);
    }

    #[test]
    fn degenerate_box_rejected() {
        let b = Aabb::new(Vec3::zeros(), Vec3::new(1.0, 0.0, 1.0));
        assert!(sample_box(&b, 3, &mut rng_for(0, &[])).is_err());
    }

    #[test]
    fn warp_offsets() {
        let mut rng = rng_for(4, &[]);
        assert!((0..100).all(|_| warp_delta(0.0, 0.3, &mut rng) == 0.0));
        assert!((0..1000).all(|_| warp_delta(1.0, 0.1, &mut rng).abs() <= 0.1));
        let draws: Vec<f64> = (0..100_000).map(|_| warp_delta(0.5, 1.0, &mut rng)).collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        assert!(mean.abs() < 0.01, "{mean}");
        assert!(draws.iter().all(|d| d.abs() <= 0.5));
    }

    #[test]
    fn batches_are_reproducible() {
        let b = Aabb::cube(1.0);
        let a1 = physics_batch(&b, (0.0, 1.0), 8, 64, 77).unwrap();
        let a2 = physics_batch(&b, (0.0, 1.0), 8, 64, 77).unwrap();
        assert_eq!(a1, a2);
        assert!(a1.times.windows(2).all(|w| w[0] < w[1]));
        assert!(a1.space_points.iter().flatten().all(|p| b.contains(p)));
        assert_eq!(a1.space_time().len(), 8 * 64);
        assert_ne!(a1, physics_batch(&b, (0.0, 1.0), 8, 64, 78).unwrap());
    }
}
