//! Lloyd's k-means with seeded k-means++ initialization.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const DEFAULT_MAX_ITERATIONS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    /// Within-cluster sum of squares after seeding and after every
    /// iteration.
    pub wcss_trace: Vec<f64>,
    pub iterations: usize,
}

impl KMeans {
    pub fn cluster_count(&self) -> usize {
        self.centroids.len()
    }

    pub fn wcss(&self) -> f64 {
        *self.wcss_trace.last().unwrap_or(&0.0)
    }

    /// Member indices of every cluster, in point order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.centroids.len()];
        for (i, &a) in self.assignments.iter().enumerate() {
            out[a].push(i);
        }
        out
    }
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = squared_distance(point, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// k-means++ seeding: the first center is uniform, every further center is
/// drawn with probability proportional to its squared distance from the
/// chosen ones. Seeding stops early once every point coincides with a
/// center, so fewer than `k` centroids can be returned.
pub fn seed_centroids(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    if points.is_empty() || k == 0 {
        return centroids;
    }
    centroids.push(points[rng.gen_range(0..points.len())].clone());
    let mut dist: Vec<f64> = points.iter().map(|p| squared_distance(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = dist.iter().sum();
        if !(total > 0.0) {
            break;
        }
        let target = rng.gen::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = points.len() - 1;
        for (i, d) in dist.iter().enumerate() {
            acc += d;
            if acc > target && *d > 0.0 {
                pick = i;
                break;
            }
        }
        let c = points[pick].clone();
        for (d, p) in dist.iter_mut().zip(points) {
            *d = d.min(squared_distance(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Cluster `points` into at most `k` groups. Deterministic given `seed`;
/// empty clusters are dropped from the result and cluster ids are compacted
/// in centroid order.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, max_iterations: usize) -> KMeans {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_centroids(points, k, &mut rng);
    if centroids.is_empty() {
        return KMeans { centroids, assignments: Vec::new(), wcss_trace: Vec::new(), iterations: 0 };
    }
    let dim = points[0].len();
    let mut assignments: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
    let mut wcss_trace = vec![wcss(points, &centroids, &assignments)];
    let mut iterations = 0;
    while iterations < max_iterations {
        iterations += 1;
        // Update step; a cluster without members keeps its centroid.
        let mut sums = vec![vec![0.0; dim]; centroids.len()];
        let mut counts = vec![0usize; centroids.len()];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        for ((c, s), &n) in centroids.iter_mut().zip(sums).zip(&counts) {
            if n > 0 {
                *c = s.into_iter().map(|v| v / n as f64).collect();
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
        let changed = next != assignments;
        assignments = next;
        wcss_trace.push(wcss(points, &centroids, &assignments));
        if !changed {
            break;
        }
    }
    compact(KMeans { centroids, assignments, wcss_trace, iterations })
}

fn wcss(points: &[Vec<f64>], centroids: &[Vec<f64>], assignments: &[usize]) -> f64 {
    points.iter().zip(assignments).map(|(p, &a)| squared_distance(p, &centroids[a])).sum()
}

fn compact(mut km: KMeans) -> KMeans {
    let mut used = vec![false; km.centroids.len()];
    for &a in &km.assignments {
        used[a] = true;
    }
    let mut remap = vec![usize::MAX; km.centroids.len()];
    let mut kept = Vec::new();
    for (i, c) in km.centroids.into_iter().enumerate() {
        if used[i] {
            remap[i] = kept.len();
            kept.push(c);
        }
    }
    for a in &mut km.assignments {
        *a = remap[*a];
    }
    km.centroids = kept;
    km
}

/// Reassign members of clusters smaller than `min_size` to the nearest
/// remaining centroid, smallest cluster first, until every cluster is large
/// enough or only one is left. Centroids of receiving clusters are
/// recomputed as member means.
pub fn merge_small_clusters(points: &[Vec<f64>], km: &mut KMeans, min_size: usize) {
    loop {
        let members = km.members();
        if members.len() <= 1 {
            return;
        }
        let Some((victim, _)) = members
            .iter()
            .enumerate()
            .filter(|(_, m)| m.len() < min_size)
            .min_by_key(|(i, m)| (m.len(), *i))
        else {
            return;
        };
        let others: Vec<usize> = (0..members.len()).filter(|&i| i != victim).collect();
        let targets: Vec<Vec<f64>> = others.iter().map(|&i| km.centroids[i].clone()).collect();
        for &p in &members[victim] {
            km.assignments[p] = others[nearest(&points[p], &targets).0];
        }
        // Recompute centroids, then drop the emptied cluster.
        let dim = points[0].len();
        let mut sums = vec![vec![0.0; dim]; km.centroids.len()];
        let mut counts = vec![0usize; km.centroids.len()];
        for (p, &a) in points.iter().zip(&km.assignments) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        for ((c, s), &n) in km.centroids.iter_mut().zip(sums).zip(&counts) {
            if n > 0 {
                *c = s.into_iter().map(|v| v / n as f64).collect();
            }
        }
        *km = compact(core::mem::replace(
            km,
            KMeans { centroids: Vec::new(), assignments: Vec::new(), wcss_trace: Vec::new(), iterations: 0 },
        ));
        let w = wcss(points, &km.centroids, &km.assignments);
        km.wcss_trace.push(w);
    }
}
