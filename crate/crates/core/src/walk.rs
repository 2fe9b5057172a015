//! Simple random walk on a locally finite tree, with three estimators of the
//! return probability `p_2n(o, o) = P[Y_2n = o] / deg(o)`, displacement and
//! exit times. Walks on an [`MsfHandle`] expand vertices on first visit, so
//! every neighbour choice is made over the final degree.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::msf::MsfHandle;
use crate::rng::RngStream;
use crate::tree::{adjacency, SizedTree, VertexId};

/// A rooted, locally finite tree that a walk can explore.
pub trait WalkGraph {
    fn start(&self) -> VertexId;
    /// Final degree of `v`, materialising its neighbours if needed.
    fn degree_of(&mut self, v: VertexId) -> Result<u32>;
    /// `k`-th neighbour, `k < degree_of(v)`; only valid after `degree_of(v)`.
    fn neighbor_of(&self, v: VertexId, k: u32) -> VertexId;
    /// Graph distance from the start vertex.
    fn distance(&self, v: VertexId) -> u32;
    /// Upper bound on vertex ids created so far.
    fn vertex_bound(&self) -> usize;
}

impl WalkGraph for MsfHandle {
    fn start(&self) -> VertexId {
        self.root()
    }

    #[inline]
    fn degree_of(&mut self, v: VertexId) -> Result<u32> {
        self.ensure_expanded(v)?;
        self.degree(v)
    }

    #[inline]
    fn neighbor_of(&self, v: VertexId, k: u32) -> VertexId {
        self.neighbor(v, k)
    }

    #[inline]
    fn distance(&self, v: VertexId) -> u32 {
        self.dist(v)
    }

    fn vertex_bound(&self) -> usize {
        self.vertex_count()
    }
}

/// A finite tree with adjacency lists, walked from its root.
#[derive(Debug, Clone)]
pub struct FiniteTree {
    adj: Vec<Vec<VertexId>>,
    dist: Vec<u32>,
    root: VertexId,
}

impl FiniteTree {
    pub fn new(tree: &SizedTree) -> Result<Self> {
        if !tree.is_valid() {
            return Err(Error::Precondition("walks need a connected acyclic graph".into()));
        }
        let depths = tree.depths().ok_or_else(|| Error::Precondition("tree is not rooted".into()))?;
        Ok(Self { adj: adjacency(tree.vertex_count, &tree.edges), dist: depths, root: tree.root })
    }

    pub fn adjacency(&self) -> &[Vec<VertexId>] {
        &self.adj
    }
}

impl WalkGraph for FiniteTree {
    fn start(&self) -> VertexId {
        self.root
    }

    fn degree_of(&mut self, v: VertexId) -> Result<u32> {
        Ok(self.adj[v as usize].len() as u32)
    }

    fn neighbor_of(&self, v: VertexId, k: u32) -> VertexId {
        self.adj[v as usize][k as usize]
    }

    fn distance(&self, v: VertexId) -> u32 {
        self.dist[v as usize]
    }

    fn vertex_bound(&self) -> usize {
        self.adj.len()
    }
}

#[inline]
fn step<G: WalkGraph>(g: &mut G, v: VertexId, rng: &mut RngStream) -> Result<VertexId> {
    let d = g.degree_of(v)?;
    if d == 0 {
        return Err(Error::Precondition(format!("vertex {v} is isolated")));
    }
    Ok(g.neighbor_of(v, rng.below(d as u64) as u32))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkTrace {
    pub positions: Vec<VertexId>,
    pub distances: Vec<u32>,
}

impl WalkTrace {
    /// First time the distance exceeds `radius`, if within the trace.
    pub fn exit_time(&self, radius: u32) -> Option<u64> {
        self.distances.iter().position(|&d| d > radius).map(|k| k as u64)
    }

    pub fn exit_times(&self, radii: &[u32]) -> BTreeMap<u32, Option<u64>> {
        radii.iter().map(|&r| (r, self.exit_time(r))).collect()
    }
}

pub fn simulate_walk<G: WalkGraph>(g: &mut G, steps: u64, rng: &mut RngStream) -> Result<WalkTrace> {
    let mut v = g.start();
    let mut positions = Vec::with_capacity(steps as usize + 1);
    let mut distances = Vec::with_capacity(steps as usize + 1);
    positions.push(v);
    distances.push(g.distance(v));
    for _ in 0..steps {
        v = step(g, v, rng)?;
        positions.push(v);
        distances.push(g.distance(v));
    }
    Ok(WalkTrace { positions, distances })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReturnMethod {
    ExactPropagation,
    Collision,
    Hit,
}

impl ReturnMethod {
    pub fn name(self) -> &'static str {
        match self {
            Self::ExactPropagation => "exact-propagation",
            Self::Collision => "collision",
            Self::Hit => "hit",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReturnEstimate {
    pub n: u64,
    pub p2n: f64,
    pub stderr: f64,
    pub method: ReturnMethod,
    /// Rigorous bound on the error caused by dropping small atoms; zero for
    /// Monte Carlo estimators.
    pub truncation_bound: f64,
}

/// Largest support the exact propagation may reach before giving up.
pub const MAX_EXACT_SUPPORT: usize = 20_000_000;

/// Exact `p_2n` for every `n` in `ns`, from the distribution `μ_n` of the
/// walk after `n` steps: reversibility gives `p_2n(o,o) = Σ_y μ_n(y)² / deg(y)`.
/// Atoms below `eps_trunc` are dropped after every step; since the kept
/// vector is dominated by the true one, the error is at most twice the total
/// dropped mass.
pub fn return_prob_exact_series<G: WalkGraph>(g: &mut G, ns: &[u64], eps_trunc: f64) -> Result<Vec<ReturnEstimate>> {
    if ns.contains(&0) || !(eps_trunc >= 0.0) {
        return Err(Error::domain("return_prob_exact", "need n >= 1 and eps_trunc >= 0"));
    }
    let n_max = ns.iter().copied().max().unwrap_or(0);
    let mut want: Vec<u64> = ns.to_vec();
    want.sort_unstable();
    want.dedup();
    let mut found: HashMap<u64, ReturnEstimate> = HashMap::new();
    let o = g.start();
    g.degree_of(o)?;
    let mut cur = vec![0.0f64; g.vertex_bound()];
    let mut next = vec![0.0f64; g.vertex_bound()];
    let mut support = vec![o];
    let mut next_support = Vec::new();
    cur[o as usize] = 1.0;
    let mut dropped = 0.0f64;
    for k in 1..=n_max {
        for &v in &support {
            let m = cur[v as usize];
            cur[v as usize] = 0.0;
            let d = g.degree_of(v)?;
            if g.vertex_bound() > next.len() {
                let len = g.vertex_bound().next_power_of_two();
                next.resize(len, 0.0);
                cur.resize(len, 0.0);
            }
            let share = m / d as f64;
            for j in 0..d {
                let w = g.neighbor_of(v, j) as usize;
                if next[w] == 0.0 {
                    next_support.push(w as VertexId);
                }
                next[w] += share;
            }
        }
        support.clear();
        let mut sum = 0.0;
        for &w in &next_support {
            let m = next[w as usize];
            next[w as usize] = 0.0;
            if m < eps_trunc {
                dropped += m;
                continue;
            }
            let d = g.degree_of(w)?;
            sum += m * m / d as f64;
            if g.vertex_bound() > cur.len() {
                let len = g.vertex_bound().next_power_of_two();
                next.resize(len, 0.0);
                cur.resize(len, 0.0);
            }
            cur[w as usize] = m;
            support.push(w);
        }
        next_support.clear();
        if support.len() > MAX_EXACT_SUPPORT {
            return Err(Error::Resource(format!("exact propagation support {} after {k} steps", support.len())));
        }
        if want.binary_search(&k).is_ok() {
            found.insert(
                k,
                ReturnEstimate {
                    n: k,
                    p2n: sum,
                    stderr: 0.0,
                    method: ReturnMethod::ExactPropagation,
                    truncation_bound: 2.0 * dropped,
                },
            );
        }
    }
    Ok(ns.iter().map(|n| found[n]).collect())
}

pub fn return_prob_exact<G: WalkGraph>(g: &mut G, n: u64, eps_trunc: f64) -> Result<ReturnEstimate> {
    Ok(return_prob_exact_series(g, &[n], eps_trunc)?[0])
}

/// Collision estimates for every `n` in `ns` from `reps` independent walks.
/// For each `n` the estimate is the U-statistic over all pairs of walks of
/// `1{Y_n = Y'_n} / deg(Y_n)`, whose expectation is `p_2n(o, o)`. The standard
/// error comes from the Hoeffding decomposition of the U-statistic variance.
pub fn return_prob_collision_series<G: WalkGraph>(
    g: &mut G,
    ns: &[u64],
    reps: usize,
    rng: &mut RngStream,
) -> Result<Vec<ReturnEstimate>> {
    if reps < 2 || ns.contains(&0) {
        return Err(Error::domain("return_prob_collision", "need reps >= 2 and n >= 1"));
    }
    let n_max = ns.iter().copied().max().unwrap_or(0);
    let mut order: Vec<usize> = (0..ns.len()).collect();
    order.sort_by_key(|&i| ns[i]);
    let mut ends = vec![Vec::with_capacity(reps); ns.len()];
    for _ in 0..reps {
        let mut v = g.start();
        let mut next = 0;
        for k in 1..=n_max {
            v = step(g, v, rng)?;
            while next < order.len() && ns[order[next]] == k {
                ends[order[next]].push(v);
                next += 1;
            }
        }
    }
    let mut out = Vec::with_capacity(ns.len());
    for (i, &n) in ns.iter().enumerate() {
        out.push(collision_u_statistic(g, &ends[i], n)?);
    }
    Ok(out)
}

fn collision_u_statistic<G: WalkGraph>(g: &mut G, ends: &[VertexId], n: u64) -> Result<ReturnEstimate> {
    let k = ends.len() as f64;
    let mut counts: BTreeMap<VertexId, u64> = BTreeMap::new();
    for &y in ends {
        *counts.entry(y).or_insert(0) += 1;
    }
    let pairs = k * (k - 1.0) / 2.0;
    let mut sum_h = 0.0;
    let mut sum_h2 = 0.0;
    let mut g_sum = 0.0;
    let mut g_sq = 0.0;
    for (&y, &c) in &counts {
        let d = g.degree_of(y)? as f64;
        let c = c as f64;
        let same = c * (c - 1.0) / 2.0;
        sum_h += same / d;
        sum_h2 += same / (d * d);
        let gi = (c - 1.0) / ((k - 1.0) * d);
        g_sum += c * gi;
        g_sq += c * gi * gi;
    }
    let u = sum_h / pairs;
    let zeta1 = (g_sq / k - (g_sum / k).powi(2)).max(0.0);
    let zeta2 = (sum_h2 / pairs - u * u).max(0.0);
    let var = 4.0 * zeta1 / k + 2.0 * zeta2 / (k * k);
    Ok(ReturnEstimate { n, p2n: u, stderr: var.sqrt(), method: ReturnMethod::Collision, truncation_bound: 0.0 })
}

pub fn return_prob_collision<G: WalkGraph>(g: &mut G, n: u64, reps: usize, rng: &mut RngStream) -> Result<ReturnEstimate> {
    Ok(return_prob_collision_series(g, &[n], reps, rng)?[0])
}

/// Naive estimate: the fraction of `2n`-step walks back at the start, over `deg(o)`.
pub fn return_prob_hit_series<G: WalkGraph>(
    g: &mut G,
    ns: &[u64],
    reps: usize,
    rng: &mut RngStream,
) -> Result<Vec<ReturnEstimate>> {
    if reps < 2 || ns.contains(&0) {
        return Err(Error::domain("return_prob_hit", "need reps >= 2 and n >= 1"));
    }
    let o = g.start();
    let d0 = g.degree_of(o)? as f64;
    let n_max = ns.iter().copied().max().unwrap_or(0);
    let mut hits = vec![0u64; ns.len()];
    for _ in 0..reps {
        let mut v = o;
        for k in 1..=2 * n_max {
            v = step(g, v, rng)?;
            if v == o && k % 2 == 0 {
                for (i, &n) in ns.iter().enumerate() {
                    hits[i] += (2 * n == k) as u64;
                }
            }
        }
    }
    Ok(ns
        .iter()
        .zip(&hits)
        .map(|(&n, &h)| {
            let p = h as f64 / reps as f64;
            ReturnEstimate {
                n,
                p2n: p / d0,
                stderr: (p * (1.0 - p) / (reps as f64 - 1.0)).sqrt() / d0,
                method: ReturnMethod::Hit,
                truncation_bound: 0.0,
            }
        })
        .collect())
}

/// Distances `d(o, Y_n)` at each `n` in `ns` along one walk.
pub fn displacement<G: WalkGraph>(g: &mut G, ns: &[u64], rng: &mut RngStream) -> Result<Vec<u32>> {
    let n_max = ns.iter().copied().max().unwrap_or(0);
    let mut v = g.start();
    let mut out = vec![0; ns.len()];
    for k in 1..=n_max {
        v = step(g, v, rng)?;
        for (i, &n) in ns.iter().enumerate() {
            if n == k {
                out[i] = g.distance(v);
            }
        }
    }
    Ok(out)
}

/// Hard step cap for exit-time walks.
pub const EXIT_STEP_CAP: u64 = 1_000_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExitSample {
    pub radius: u32,
    /// First time the walk leaves the ball, or the cap if it never did.
    pub steps: u64,
    pub censored: bool,
}

/// One walk from the start until it leaves the largest ball in `radii` (or
/// `cap` steps pass), reporting the first exit time of every ball.
pub fn exit_times<G: WalkGraph>(g: &mut G, radii: &[u32], cap: u64, rng: &mut RngStream) -> Result<Vec<ExitSample>> {
    let r_max = radii.iter().copied().max().unwrap_or(0);
    let mut first: Vec<Option<u64>> = vec![None; r_max as usize + 1];
    let mut v = g.start();
    let mut reached = g.distance(v);
    let mut k = 0u64;
    while reached <= r_max && k < cap {
        v = step(g, v, rng)?;
        k += 1;
        let d = g.distance(v);
        if d > reached {
            // Distances change by one per step, so d - 1 is the ball just left.
            first[(d - 1) as usize].get_or_insert(k);
            reached = d;
        }
    }
    Ok(radii
        .iter()
        .map(|&r| match first[r as usize] {
            Some(steps) => ExitSample { radius: r, steps, censored: false },
            None => ExitSample { radius: r, steps: k, censored: true },
        })
        .collect())
}

/// `reps` independent samples of the exit time of the ball of radius `radius`.
pub fn exit_time<G: WalkGraph>(g: &mut G, radius: u32, reps: usize, rng: &mut RngStream) -> Result<Vec<ExitSample>> {
    (0..reps).map(|_| Ok(exit_times(g, &[radius], EXIT_STEP_CAP, rng)?[0])).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::msf::new_msf;

    fn star(k: u32) -> FiniteTree {
        FiniteTree::new(&SizedTree { vertex_count: k as usize + 1, edges: (1..=k).map(|i| (0, i)).collect(), root: 0 })
            .unwrap()
    }

    fn path(len: u32) -> FiniteTree {
        FiniteTree::new(&SizedTree { vertex_count: len as usize + 1, edges: (0..len).map(|i| (i, i + 1)).collect(), root: 0 })
            .unwrap()
    }

    #[test]
    fn zero_step_walk() {
        let mut h = new_msf(1).unwrap();
        let t = simulate_walk(&mut h, 0, &mut RngStream::new(1, 1)).unwrap();
        assert_eq!(t.positions, vec![0]);
        assert_eq!(t.distances, vec![0]);
    }

    #[test]
    fn walks_change_distance_by_one() {
        for seed in 0..20 {
            let mut h = new_msf(seed).unwrap();
            let t = simulate_walk(&mut h, 2000, &mut RngStream::new(seed, 7)).unwrap();
            for (k, w) in t.distances.windows(2).enumerate() {
                assert_eq!(w[0].abs_diff(w[1]), 1);
                assert_eq!(w[1] % 2, ((k + 1) % 2) as u32);
            }
            for r in [0, 1, 3] {
                if let Some(tau) = t.exit_time(r) {
                    assert!(tau > r as u64);
                    assert!(t.distances[..tau as usize].iter().all(|&d| d <= r));
                }
            }
            h.check_invariants().unwrap();
        }
    }

    #[test]
    fn small_graph_return_probabilities() {
        let p = return_prob_exact(&mut star(3), 1, 0.0).unwrap();
        assert!((p.p2n - 1.0 / 3.0).abs() < 1e-15);
        let p = return_prob_exact(&mut path(2), 1, 0.0).unwrap();
        assert!((p.p2n - 0.5).abs() < 1e-15);
        let mut edge = path(1);
        let c = return_prob_collision_series(&mut edge, &[2, 4, 6], 10, &mut RngStream::new(0, 0)).unwrap();
        assert!(c.iter().all(|e| e.p2n == 1.0));
    }

    #[test]
    fn exit_from_radius_zero_takes_one_step() {
        for seed in 0..20 {
            let mut h = new_msf(seed).unwrap();
            let s = exit_time(&mut h, 0, 5, &mut RngStream::new(seed, 3)).unwrap();
            assert!(s.iter().all(|e| e.steps == 1 && !e.censored));
        }
    }

    #[test]
    fn exit_times_are_at_least_the_radius() {
        let mut h = new_msf(4).unwrap();
        let radii = [1, 2, 4, 8];
        for _ in 0..20 {
            let s = exit_times(&mut h, &radii, EXIT_STEP_CAP, &mut RngStream::new(4, 9)).unwrap();
            for e in &s {
                assert!(e.steps > e.radius as u64);
            }
            assert!(s.windows(2).all(|w| w[0].steps <= w[1].steps));
        }
        let s = exit_times(&mut h, &[50], 10, &mut RngStream::new(4, 10)).unwrap();
        assert!(s[0].censored && s[0].steps == 10);
    }

    #[test]
    fn exact_return_probability_decreases() {
        for seed in 0..5 {
            let mut h = new_msf(seed).unwrap();
            let ns: Vec<u64> = (1..=64).collect();
            let est = return_prob_exact_series(&mut h, &ns, 1e-15).unwrap();
            for w in est.windows(2) {
                assert!(w[1].p2n <= w[0].p2n + w[0].truncation_bound + 1e-15);
            }
            assert!(est.iter().all(|e| e.p2n > 0.0 && e.p2n <= 1.0 && e.truncation_bound < 1e-9));
        }
    }

    #[test]
    fn estimators_agree_on_a_handle() {
        let ns = [4u64, 16, 64];
        for seed in 0..4 {
            let mut h = new_msf(seed).unwrap();
            let exact = return_prob_exact_series(&mut h, &ns, 1e-15).unwrap();
            let coll = return_prob_collision_series(&mut h, &ns, 4000, &mut RngStream::new(seed, 1)).unwrap();
            let hit = return_prob_hit_series(&mut h, &ns, 20_000, &mut RngStream::new(seed, 2)).unwrap();
            for i in 0..ns.len() {
                let zc = (coll[i].p2n - exact[i].p2n) / coll[i].stderr;
                let zh = (hit[i].p2n - exact[i].p2n) / hit[i].stderr.max(1e-12);
                assert!(zc.abs() < 4.0, "seed {seed} n {}: collision z {zc}", ns[i]);
                assert!(zh.abs() < 4.0, "seed {seed} n {}: hit z {zh}", ns[i]);
            }
        }
    }

    fn transfer(adj: &[Vec<VertexId>], steps: usize) -> Vec<Vec<f64>> {
        let n = adj.len();
        let mut m: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| (i == j) as u8 as f64).collect()).collect();
        for _ in 0..steps {
            let mut next = vec![vec![0.0; n]; n];
            for (x, row) in m.iter().enumerate() {
                for (y, &p) in row.iter().enumerate() {
                    for &z in &adj[y] {
                        next[x][z as usize] += p / adj[y].len() as f64;
                    }
                }
            }
            m = next;
        }
        m
    }

    #[test]
    fn collision_identity_by_enumeration() {
        let t = SizedTree::from_undirected(5, &[(0, 1), (1, 2), (1, 3), (3, 4)], 0);
        let mut g = FiniteTree::new(&t).unwrap();
        let adj = g.adjacency().to_vec();
        // Every 3-step path from the root with its probability.
        let mut paths = vec![(0u32, 1.0f64)];
        for _ in 0..3 {
            let mut next = Vec::new();
            for &(v, p) in &paths {
                let d = adj[v as usize].len() as f64;
                next.extend(adj[v as usize].iter().map(|&w| (w, p / d)));
            }
            paths = next;
        }
        let mut brute = 0.0;
        for &(y, p) in &paths {
            for &(y2, p2) in &paths {
                if y == y2 {
                    brute += p * p2 / adj[y as usize].len() as f64;
                }
            }
        }
        let tm = transfer(&adj, 6)[0][0] / adj[0].len() as f64;
        assert!((brute - tm).abs() < 1e-12);
        assert!((return_prob_exact(&mut g, 3, 0.0).unwrap().p2n - tm).abs() < 1e-12);
    }

    #[test]
    fn reversibility_on_random_trees() {
        let mut rng = RngStream::new(17, 0);
        for _ in 0..10 {
            let t = crate::dist::sample_uniform_labelled_tree(20, &mut rng).unwrap();
            let adj = adjacency(20, &t.edges);
            for steps in 1..=8 {
                let m = transfer(&adj, steps);
                for x in 0..20 {
                    for y in 0..20 {
                        let a = adj[x].len() as f64 * m[x][y];
                        let b = adj[y].len() as f64 * m[y][x];
                        assert!((a - b).abs() <= 1e-12);
                    }
                }
            }
            let m = transfer(&adj, 8);
            for x in 0..20u32 {
                let mut g = FiniteTree::new(&SizedTree::from_undirected(20, &t.edges, x)).unwrap();
                let p = return_prob_exact(&mut g, 4, 0.0).unwrap().p2n;
                assert!((p - m[x as usize][x as usize] / adj[x as usize].len() as f64).abs() <= 1e-12);
            }
        }
    }
}
