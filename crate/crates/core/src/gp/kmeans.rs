//! k-means++ seeding followed by Lloyd iterations.

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::synth::rng::SplitMix64;

pub const MAX_LLOYD_ITERS: usize = 100;
pub const SHIFT_TOL: f64 = 1e-6;

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centers.iter().enumerate() {
        let d = dist2(p, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// `k` centres of `points`. Seeding draws the first centre uniformly and the
/// rest with probability proportional to squared distance; Lloyd then runs
/// until no centre moves by more than `SHIFT_TOL` relative to its norm.
pub fn kmeans_pp(points: &[Vec<f64>], k: usize, rng: &mut SplitMix64) -> Result<Vec<Vec<f64>>> {
    let distinct: HashSet<Vec<u64>> = points.iter().map(|p| p.iter().map(|v| v.to_bits()).collect()).collect();
    if k == 0 || k > distinct.len() {
        return Err(Error::TooFewPoints { requested: k, distinct: distinct.len() });
    }
    let mut centers = vec![points[rng.below(points.len() as u64) as usize].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &centers[0])).collect();
    while centers.len() < k {
        let idx = rng.weighted_index(&d2).expect("k <= distinct points leaves positive mass");
        let c = points[idx].clone();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(dist2(p, &c));
        }
        centers.push(c);
    }

    let dim = points[0].len();
    for _ in 0..MAX_LLOYD_ITERS {
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for p in points {
            let (c, _) = nearest(p, &centers);
            counts[c] += 1;
            sums[c].iter_mut().zip(p).for_each(|(s, v)| *s += v);
        }
        let mut moved = false;
        for ((c, s), &n) in centers.iter_mut().zip(&sums).zip(&counts) {
            if n == 0 {
                continue;
            }
            let next: Vec<f64> = s.iter().map(|v| v / n as f64).collect();
            let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
            if dist2(c, &next).sqrt() > SHIFT_TOL * norm {
                moved = true;
            }
            *c = next;
        }
        if !moved {
            break;
        }
    }
    Ok(centers)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sorted(mut v: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v
    }

    #[test]
    fn all_distinct_points_become_centers() {
        let pts = vec![vec![0.0, 0.0], vec![1.0, 5.0], vec![-2.0, 3.0], vec![1.0, 5.0]];
        let c = kmeans_pp(&pts, 3, &mut SplitMix64::new(1)).unwrap();
        assert_eq!(sorted(c), vec![vec![-2.0, 3.0], vec![0.0, 0.0], vec![1.0, 5.0]]);
    }

    #[test]
    fn single_center_is_mean() {
        let pts = vec![vec![0.0, 0.0], vec![2.0, 0.0], vec![1.0, 3.0]];
        let c = kmeans_pp(&pts, 1, &mut SplitMix64::new(2)).unwrap();
        assert!((c[0][0] - 1.0).abs() < 1e-12 && (c[0][1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn separated_blobs() {
        let mut rng = SplitMix64::new(3);
        let mut pts = Vec::new();
        for (cx, cy) in [(-117.0, 41.0), (-110.0, 35.0)] {
            for _ in 0..50 {
                let (a, b) = rng.normal_pair();
                pts.push(vec![cx + 0.1 * a, cy + 0.1 * b]);
            }
        }
        for seed in 0..20 {
            let c = kmeans_pp(&pts, 2, &mut SplitMix64::new(seed)).unwrap();
            // Brute-force oracle: each centre is nearest to a different blob
            // and the between-centre distance dwarfs within-blob spread.
            let blob = |p: &[f64]| (p[0] > -113.5) as usize;
            assert_ne!(blob(&c[0]), blob(&c[1]));
            assert!(dist2(&c[0], &c[1]).sqrt() > 5.0);
        }
    }

    #[test]
    fn too_few_points() {
        let pts = vec![vec![1.0], vec![1.0]];
        assert!(matches!(
            kmeans_pp(&pts, 2, &mut SplitMix64::new(0)),
            Err(Error::TooFewPoints { requested: 2, distinct: 1 })
        ));
    }

    #[test]
    fn deterministic() {
        let pts: Vec<Vec<f64>> = (0..40).map(|i| vec![(i * 7 % 13) as f64, (i * 3 % 11) as f64]).collect();
        let a = kmeans_pp(&pts, 5, &mut SplitMix64::new(9)).unwrap();
        let b = kmeans_pp(&pts, 5, &mut SplitMix64::new(9)).unwrap();
        assert_eq!(a, b);
    }
}
