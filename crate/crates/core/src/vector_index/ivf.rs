use rand::Rng;
use rayon::prelude::*;

use crate::embedder::dot;
use crate::seed::rng;

pub const KMEANS_MAX_ITERS: usize = 20;
pub const KMEANS_TOLERANCE: f64 = 1e-4;
/// Minimum average posting-list size the nlist clamp aims for.
pub const MIN_POINTS_PER_LIST: usize = 8;

/// `min(nlist, max(1, count / 8))`, or 0 for an empty corpus.
pub fn effective_nlist(nlist: usize, count: usize) -> usize {
    if count == 0 {
        0
    } else {
        nlist.min((count / MIN_POINTS_PER_LIST).max(1))
    }
}

/// Coarse quantizer plus posting lists.
#[derive(Debug, Clone, PartialEq)]
pub struct IvfLists {
    pub(crate) centroids: Vec<f32>,
    pub(crate) lists: Vec<Vec<u32>>,
    pub(crate) iterations: usize,
}

fn row(data: &[f32], dim: usize, i: usize) -> &[f32] {
    &data[i * dim..(i + 1) * dim]
}

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| f64::from(x - y) * f64::from(x - y)).sum()
}

/// Index of the nearest centroid by squared L2; ties go to the lower index.
fn nearest(centroids: &[f32], dim: usize, v: &[f32]) -> usize {
    let k = centroids.len() / dim;
    let mut best = (f64::INFINITY, 0);
    for c in 0..k {
        let d = sq_dist(row(centroids, dim, c), v);
        if d < best.0 {
            best = (d, c);
        }
    }
    best.1
}

impl IvfLists {
    pub fn nlist(&self) -> usize {
        self.lists.len()
    }

    pub fn lists(&self) -> &[Vec<u32>] {
        &self.lists
    }

    pub fn centroid(&self, list: usize, dim: usize) -> &[f32] {
        row(&self.centroids, dim, list)
    }

    /// Lloyd iterations actually run.
    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub(crate) fn build(data: &[f32], dim: usize, nlist: usize, seed: u64) -> Self {
        let n = data.len().checked_div(dim).unwrap_or(0);
        let k = effective_nlist(nlist, n);
        if k == 0 {
            return Self { centroids: Vec::new(), lists: Vec::new(), iterations: 0 };
        }
        let mut centroids = kmeans_plus_plus(data, dim, n, k, seed);
        let mut assignment = vec![0usize; n];
        let mut iterations = 0;
        for _ in 0..KMEANS_MAX_ITERS {
            iterations += 1;
            assignment = assign(data, dim, n, &centroids);
            let mut sums = vec![0.0f64; k * dim];
            let mut counts = vec![0usize; k];
            for (i, &c) in assignment.iter().enumerate() {
                counts[c] += 1;
                for (s, x) in sums[c * dim..(c + 1) * dim].iter_mut().zip(row(data, dim, i)) {
                    *s += f64::from(*x);
                }
            }
            let mut movement = 0.0f64;
            for c in 0..k {
                // Empty clusters keep their previous centroid.
                if counts[c] == 0 {
                    continue;
                }
                let inv = 1.0 / counts[c] as f64;
                let updated: Vec<f32> = sums[c * dim..(c + 1) * dim].iter().map(|s| (s * inv) as f32).collect();
                movement = movement.max(sq_dist(&updated, row(&centroids, dim, c)).sqrt());
                centroids[c * dim..(c + 1) * dim].copy_from_slice(&updated);
            }
            if movement < KMEANS_TOLERANCE {
                break;
            }
        }
        assignment = assign(data, dim, n, &centroids);
        let mut lists = vec![Vec::new(); k];
        for (i, c) in assignment.into_iter().enumerate() {
            lists[c].push(i as u32);
        }
        Self { centroids, lists, iterations }
    }

    /// Rows stored in the `nprobe` lists whose centroids are nearest to `q`.
    pub(crate) fn probe(&self, dim: usize, q: &[f32], nprobe: usize) -> Vec<usize> {
        let k = self.nlist();
        let nprobe = nprobe.min(k);
        if nprobe == 0 {
            return Vec::new();
        }
        // ||c - q||^2 = ||c||^2 - 2 c.q + 1 for unit q; rank by the first two terms.
        let mut order: Vec<(f64, usize)> = (0..k)
            .map(|c| {
                let cen = row(&self.centroids, dim, c);
                (f64::from(dot(cen, cen)) - 2.0 * f64::from(dot(cen, q)), c)
            })
            .collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if nprobe < k {
            order.select_nth_unstable_by(nprobe - 1, cmp);
            order.truncate(nprobe);
        }
        order.iter().flat_map(|&(_, c)| self.lists[c].iter().map(|&r| r as usize)).collect()
    }
}

fn assign(data: &[f32], dim: usize, n: usize, centroids: &[f32]) -> Vec<usize> {
    (0..n).into_par_iter().map(|i| nearest(centroids, dim, row(data, dim, i))).collect()
}

/// k-means++ seeding: first center uniform, each next one sampled with
/// probability proportional to squared distance from the nearest chosen center.
fn kmeans_plus_plus(data: &[f32], dim: usize, n: usize, k: usize, seed: u64) -> Vec<f32> {
    let mut g = rng(seed);
    let mut centroids = Vec::with_capacity(k * dim);
    let first = g.gen_range(0..n);
    centroids.extend_from_slice(row(data, dim, first));
    let mut d2: Vec<f64> = (0..n).into_par_iter().map(|i| sq_dist(row(data, dim, i), row(data, dim, first))).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = g.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            g.gen_range(0..n)
        };
        let c = row(data, dim, pick).to_vec();
        centroids.extend_from_slice(&c);
        d2.par_iter_mut().enumerate().for_each(|(i, d)| {
            let nd = sq_dist(row(data, dim, i), &c);
            if nd < *d {
                *d = nd;
            }
        });
    }
    centroids
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedder::EmbeddingVector;
    use rand_distr::StandardNormal;

    fn data(n: usize, dim: usize, seed: u64) -> Vec<f32> {
        let mut g = rng(seed);
        (0..n)
            .flat_map(|_| {
                let v: Vec<f32> = (0..dim).map(|_| g.sample(StandardNormal)).collect();
                EmbeddingVector::normalized(v).unwrap().into_values()
            })
            .collect()
    }

    #[test]
    fn clamp_formula() {
        assert_eq!(effective_nlist(1024, 64), 8);
        assert_eq!(effective_nlist(1024, 5000), 625);
        assert_eq!(effective_nlist(4, 5000), 4);
        assert_eq!(effective_nlist(1024, 3), 1);
        assert_eq!(effective_nlist(1024, 0), 0);
    }

    #[test]
    fn lists_partition_ids() {
        let d = data(64, 8, 1);
        let ivf = IvfLists::build(&d, 8, 1024, 3);
        assert_eq!(ivf.nlist(), 8);
        assert_eq!(ivf.centroids.len(), 8 * 8);
        let mut all: Vec<u32> = ivf.lists.iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..64).collect::<Vec<u32>>());
        assert!(ivf.iterations() >= 1 && ivf.iterations() <= KMEANS_MAX_ITERS);
    }

    #[test]
    fn full_probe_scans_everything() {
        let d = data(200, 8, 2);
        let ivf = IvfLists::build(&d, 8, 1024, 3);
        let q = row(&d, 8, 0);
        let mut rows = ivf.probe(8, q, ivf.nlist());
        rows.sort_unstable();
        assert_eq!(rows, (0..200).collect::<Vec<_>>());
    }

    #[test]
    fn separated_clusters_are_recovered() {
        // Two antipodal blobs; each list must be pure.
        let mut g = rng(4);
        let mut d = Vec::new();
        for i in 0..32 {
            let sign = if i < 16 { 1.0 } else { -1.0 };
            let v: Vec<f32> = (0..4).map(|j| if j == 0 { sign } else { 0.05 * g.sample::<f32, _>(StandardNormal) }).collect();
            d.extend(EmbeddingVector::normalized(v).unwrap().into_values());
        }
        let ivf = IvfLists::build(&d, 4, 2, 11);
        for list in &ivf.lists {
            assert_eq!(list.len(), 16);
            let side = list[0] < 16;
            assert!(list.iter().all(|&r| (r < 16) == side));
        }
    }
}
