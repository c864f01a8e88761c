use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use rand::Rng;

use crate::embedder::dot;
use crate::seed::{combine, rng};

/// Levels above this are clamped; reaching it needs astronomically many nodes.
pub(crate) const MAX_LEVEL: usize = 16;

/// Layered proximity graph. `links[node][layer]` holds the neighbors of `node`
/// on `layer`, for layers `0..=levels[node]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HnswGraph {
    pub(crate) m: usize,
    pub(crate) ef_construction: usize,
    pub(crate) levels: Vec<u8>,
    pub(crate) links: Vec<Vec<Vec<u32>>>,
    pub(crate) entry: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    sim: f32,
    node: u32,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    /// Higher similarity is greater; among equals the lower node id is greater.
    fn cmp(&self, other: &Self) -> Ordering {
        self.sim.total_cmp(&other.sim).then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Epoch-stamped visited set, reusable across searches without clearing.
struct Visited {
    marks: Vec<u32>,
    epoch: u32,
}

impl Visited {
    fn new(n: usize) -> Self {
        Self { marks: vec![0; n], epoch: 0 }
    }

    fn reset(&mut self, n: usize) {
        if self.marks.len() < n {
            self.marks.resize(n, 0);
        }
        self.epoch = self.epoch.wrapping_add(1);
        if self.epoch == 0 {
            self.marks.iter_mut().for_each(|m| *m = 0);
            self.epoch = 1;
        }
    }

    /// Returns true the first time `node` is seen in this epoch.
    fn insert(&mut self, node: u32) -> bool {
        let slot = &mut self.marks[node as usize];
        if *slot == self.epoch {
            false
        } else {
            *slot = self.epoch;
            true
        }
    }
}

fn row(data: &[f32], dim: usize, node: u32) -> &[f32] {
    let i = node as usize * dim;
    &data[i..i + dim]
}

/// Level for insertion `index`: floor(-ln(U) / ln(M)) with U drawn from a
/// generator seeded by `(seed, index)`.
pub(crate) fn draw_level(seed: u64, index: usize, m: usize) -> usize {
    let mut g = rng(combine(seed, index as u64));
    let u: f64 = 1.0 - g.gen::<f64>();
    let ml = 1.0 / (m as f64).ln();
    ((-u.ln() * ml).floor() as usize).min(MAX_LEVEL)
}

impl HnswGraph {
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn max_degree(&self, layer: usize) -> usize {
        if layer == 0 {
            2 * self.m
        } else {
            self.m
        }
    }

    pub fn levels(&self) -> &[u8] {
        &self.levels
    }

    pub fn entry_point(&self) -> Option<u32> {
        self.entry
    }

    pub fn neighbors(&self, node: usize, layer: usize) -> &[u32] {
        self.links[node].get(layer).map_or(&[], Vec::as_slice)
    }

    pub fn max_level(&self) -> usize {
        self.entry.map_or(0, |e| self.levels[e as usize] as usize)
    }

    /// Sequential insertion in id order.
    pub(crate) fn build(data: &[f32], dim: usize, m: usize, ef_construction: usize, seed: u64) -> Self {
        let n = data.len().checked_div(dim).unwrap_or(0);
        let mut g = HnswGraph {
            m,
            ef_construction,
            levels: Vec::with_capacity(n),
            links: Vec::with_capacity(n),
            entry: None,
        };
        let mut visited = Visited::new(n);
        for i in 0..n {
            g.insert(data, dim, i as u32, draw_level(seed, i, m), &mut visited);
        }
        g
    }

    fn insert(&mut self, data: &[f32], dim: usize, node: u32, level: usize, visited: &mut Visited) {
        self.levels.push(level as u8);
        self.links.push(vec![Vec::new(); level + 1]);
        let Some(entry) = self.entry else {
            self.entry = Some(node);
            return;
        };
        let q = row(data, dim, node);
        let top = self.max_level();

        let mut ep = Candidate { sim: dot(q, row(data, dim, entry)), node: entry };
        for layer in (level + 1..=top).rev() {
            ep = self.greedy_closest(data, dim, q, ep, layer);
        }

        let mut entry_points = vec![ep];
        for layer in (0..=level.min(top)).rev() {
            let found = self.search_layer(data, dim, q, &entry_points, self.ef_construction, layer, visited);
            let selected = select_neighbors(data, dim, &found, self.m);
            self.links[node as usize][layer] = selected.iter().map(|c| c.node).collect();
            for c in &selected {
                self.link_back(data, dim, c.node, node, layer);
            }
            entry_points = found;
        }

        if level > top {
            self.entry = Some(node);
        }
    }

    /// Add `new` to `target`'s list on `layer`, re-pruning when over capacity.
    fn link_back(&mut self, data: &[f32], dim: usize, target: u32, new: u32, layer: usize) {
        let cap = self.max_degree(layer);
        let list = &mut self.links[target as usize][layer];
        list.push(new);
        if list.len() <= cap {
            return;
        }
        let base = row(data, dim, target);
        let mut cands: Vec<Candidate> =
            list.iter().map(|&nb| Candidate { sim: dot(base, row(data, dim, nb)), node: nb }).collect();
        cands.sort_unstable_by(|a, b| b.cmp(a));
        let kept = select_neighbors(data, dim, &cands, cap);
        *list = kept.into_iter().map(|c| c.node).collect();
    }

    fn greedy_closest(&self, data: &[f32], dim: usize, q: &[f32], mut best: Candidate, layer: usize) -> Candidate {
        loop {
            let mut improved = false;
            for &nb in self.neighbors(best.node as usize, layer) {
                let c = Candidate { sim: dot(q, row(data, dim, nb)), node: nb };
                if c > best {
                    best = c;
                    improved = true;
                }
            }
            if !improved {
                return best;
            }
        }
    }

    /// Best-first search bounded by `ef`. Returns candidates sorted by
    /// descending similarity.
    #[allow(clippy::too_many_arguments)]
    fn search_layer(
        &self,
        data: &[f32],
        dim: usize,
        q: &[f32],
        entry_points: &[Candidate],
        ef: usize,
        layer: usize,
        visited: &mut Visited,
    ) -> Vec<Candidate> {
        visited.reset(self.levels.len());
        let mut frontier: BinaryHeap<Candidate> = BinaryHeap::new();
        let mut results: BinaryHeap<Reverse<Candidate>> = BinaryHeap::new();
        for &ep in entry_points {
            if visited.insert(ep.node) {
                frontier.push(ep);
                results.push(Reverse(ep));
                if results.len() > ef {
                    results.pop();
                }
            }
        }
        while let Some(c) = frontier.pop() {
            let worst = results.peek().map(|r| r.0).expect("results never empty here");
            if c < worst && results.len() >= ef {
                break;
            }
            for &nb in self.neighbors(c.node as usize, layer) {
                if !visited.insert(nb) {
                    continue;
                }
                let cand = Candidate { sim: dot(q, row(data, dim, nb)), node: nb };
                let worst = results.peek().map(|r| r.0).expect("results never empty here");
                if results.len() < ef || cand > worst {
                    frontier.push(cand);
                    results.push(Reverse(cand));
                    if results.len() > ef {
                        results.pop();
                    }
                }
            }
        }
        let mut out: Vec<Candidate> = results.into_iter().map(|r| r.0).collect();
        out.sort_unstable_by(|a, b| b.cmp(a));
        out
    }

    /// Row indices of the best `ef` candidates found for `q`.
    pub(crate) fn search(&self, data: &[f32], dim: usize, q: &[f32], ef: usize) -> Vec<usize> {
        let Some(entry) = self.entry else { return Vec::new() };
        let mut ep = Candidate { sim: dot(q, row(data, dim, entry)), node: entry };
        for layer in (1..=self.max_level()).rev() {
            ep = self.greedy_closest(data, dim, q, ep, layer);
        }
        let mut visited = Visited::new(self.levels.len());
        self.search_layer(data, dim, q, &[ep], ef, 0, &mut visited)
            .into_iter()
            .map(|c| c.node as usize)
            .collect()
    }
}

/// Diversity heuristic: walk candidates from most to least similar and keep
/// one only if it is more similar to the base than to every neighbor already
/// kept. `candidates` must be sorted by descending similarity to the base.
fn select_neighbors(data: &[f32], dim: usize, candidates: &[Candidate], max: usize) -> Vec<Candidate> {
    let mut kept: Vec<Candidate> = Vec::with_capacity(max);
    for &c in candidates {
        if kept.len() >= max {
            break;
        }
        let v = row(data, dim, c.node);
        if kept.iter().all(|k| dot(v, row(data, dim, k.node)) < c.sim) {
            kept.push(c);
        }
    }
    kept
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
    fn level_distribution_is_geometric() {
        // P(level >= 1) = 1/M.
        let n = 20_000;
        let high = (0..n).filter(|&i| draw_level(3, i, 32) >= 1).count() as f64 / n as f64;
        assert!((high - 1.0 / 32.0).abs() < 0.006, "{high}");
        assert_eq!(draw_level(3, 17, 32), draw_level(3, 17, 32));
    }

    #[test]
    fn degree_caps_hold() {
        let (n, dim) = (1000, 16);
        let d = data(n, dim, 1);
        let g = HnswGraph::build(&d, dim, 32, 128, 7);
        for node in 0..n {
            for layer in 0..=g.levels[node] as usize {
                let nbrs = g.neighbors(node, layer);
                assert!(nbrs.len() <= g.max_degree(layer));
                assert!(!nbrs.contains(&(node as u32)));
                assert!(nbrs.iter().all(|&nb| g.levels[nb as usize] as usize >= layer));
            }
        }
        assert!(g.neighbors(0, 0).len() <= 64);
    }

    #[test]
    fn graph_is_connected_at_layer_zero() {
        let (n, dim) = (500, 8);
        let d = data(n, dim, 2);
        let g = HnswGraph::build(&d, dim, 8, 64, 1);
        let mut seen = vec![false; n];
        let mut stack = vec![g.entry.unwrap() as usize];
        while let Some(x) = stack.pop() {
            if std::mem::replace(&mut seen[x], true) {
                continue;
            }
            stack.extend(g.neighbors(x, 0).iter().map(|&y| y as usize));
        }
        assert!(seen.iter().filter(|&&s| s).count() as f64 > 0.99 * n as f64);
    }
}
