//! Minimal spanning trees of finite weighted graphs, the minimal a-ary
//! exploration subtree, canonical codes of rooted balls, and the comparison of
//! root-ball statistics of MST(K_n) with those of the root component.

use std::collections::{BTreeMap, BinaryHeap};
use std::cmp::Reverse;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::msf::MsfHandle;
use crate::rng::{mix3, unit_from_bits, RngStream};
use crate::tree::{adjacency, SizedTree, VertexId, NO_PARENT};

/// An edge `(u, v, weight)`.
pub type WeightedEdge = (VertexId, VertexId, f64);

/// Anything whose edges around a vertex can be enumerated with weights.
pub trait EdgeSource {
    fn vertex_count(&self) -> usize;
    fn degree(&self, u: VertexId) -> usize;
    fn for_each_edge(&self, u: VertexId, f: impl FnMut(VertexId, f64));
}

/// A simple connected graph with pairwise distinct edge weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedGraph {
    n: usize,
    edges: Vec<WeightedEdge>,
    regular_degree: Option<usize>,
    #[serde(skip)]
    adj: Vec<Vec<(VertexId, f64)>>,
}

impl WeightedGraph {
    pub fn new(n: usize, edges: Vec<WeightedEdge>) -> Result<Self> {
        if n == 0 {
            return Err(Error::Precondition("graph needs at least one vertex".into()));
        }
        let mut seen = std::collections::HashSet::with_capacity(edges.len());
        for &(u, v, w) in &edges {
            if u as usize >= n || v as usize >= n || u == v {
                return Err(Error::Precondition(format!("bad edge ({u}, {v})")));
            }
            if !w.is_finite() {
                return Err(Error::Precondition(format!("non-finite weight on ({u}, {v})")));
            }
            if !seen.insert((u.min(v), u.max(v))) {
                return Err(Error::Precondition(format!("parallel edge ({u}, {v})")));
            }
        }
        let mut ws: Vec<f64> = edges.iter().map(|e| e.2).collect();
        ws.sort_by(f64::total_cmp);
        if ws.windows(2).any(|p| p[0] == p[1]) {
            return Err(Error::Precondition("edge weights must be pairwise distinct".into()));
        }
        let mut adj = vec![Vec::new(); n];
        for &(u, v, w) in &edges {
            adj[u as usize].push((v, w));
            adj[v as usize].push((u, w));
        }
        let d0 = adj[0].len();
        let regular_degree = adj.iter().all(|a| a.len() == d0).then_some(d0);
        Ok(Self { n, edges, regular_degree, adj })
    }

    /// `K_n` with i.i.d. uniform `[0, scale)` weights.
    pub fn complete(n: usize, scale: f64, rng: &mut RngStream) -> Result<Self> {
        let mut edges = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for u in 0..n as VertexId {
            for v in u + 1..n as VertexId {
                edges.push((u, v, rng.uniform() * scale));
            }
        }
        Self::new(n, edges)
    }

    /// Random simple `d`-regular graph by Steger-Wormald pairing: stubs are
    /// paired uniformly among the pairs that keep the graph simple, restarting
    /// when stuck. Weights are i.i.d. uniform `[0, scale)`.
    pub fn random_regular(n: usize, d: usize, scale: f64, rng: &mut RngStream) -> Result<Self> {
        if d >= n || (n * d) % 2 == 1 {
            return Err(Error::Precondition(format!("no simple {d}-regular graph on {n} vertices")));
        }
        'attempt: for _ in 0..1_000 {
            let mut stubs: Vec<VertexId> = (0..n).flat_map(|v| std::iter::repeat_n(v as VertexId, d)).collect();
            let mut seen = std::collections::HashSet::with_capacity(n * d / 2);
            let mut pairs = Vec::with_capacity(n * d / 2);
            while !stubs.is_empty() {
                let mut tries = 0;
                loop {
                    let i = rng.below(stubs.len() as u64) as usize;
                    let j = rng.below(stubs.len() as u64) as usize;
                    let (u, v) = (stubs[i], stubs[j]);
                    if i != j && u != v && !seen.contains(&(u.min(v), u.max(v))) {
                        seen.insert((u.min(v), u.max(v)));
                        pairs.push((u, v));
                        let (hi, lo) = (i.max(j), i.min(j));
                        stubs.swap_remove(hi);
                        stubs.swap_remove(lo);
                        break;
                    }
                    tries += 1;
                    if tries > 100 * stubs.len() + 1000 {
                        continue 'attempt;
                    }
                }
            }
            let edges = pairs.into_iter().map(|(u, v)| (u, v, rng.uniform() * scale)).collect();
            let g = Self::new(n, edges)?;
            if connected(&g) {
                return Ok(g);
            }
        }
        Err(Error::Resource("pairing kept getting stuck".into()))
    }

    pub fn edges(&self) -> &[WeightedEdge] {
        &self.edges
    }

    pub fn regular_degree(&self) -> Option<usize> {
        self.regular_degree
    }

    /// The same graph with every weight multiplied by `c > 0`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(self.n, self.edges.iter().map(|&(u, v, w)| (u, v, w * c)).collect())
    }
}

impl EdgeSource for WeightedGraph {
    fn vertex_count(&self) -> usize {
        self.n
    }

    fn degree(&self, u: VertexId) -> usize {
        self.adj[u as usize].len()
    }

    fn for_each_edge(&self, u: VertexId, mut f: impl FnMut(VertexId, f64)) {
        for &(v, w) in &self.adj[u as usize] {
            f(v, w);
        }
    }
}

fn connected(g: &WeightedGraph) -> bool {
    let mut dsu = Dsu::new(g.n);
    let mut parts = g.n;
    for &(u, v, _) in &g.edges {
        parts -= dsu.union(u, v) as usize;
    }
    parts == 1
}

/// `K_n` whose weights are hashed from `(seed, u, v)`: uniform on
/// `[0, scale)`, never stored.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImplicitComplete {
    pub n: usize,
    pub seed: u64,
    pub scale: f64,
}

impl ImplicitComplete {
    #[inline]
    pub fn weight(&self, u: VertexId, v: VertexId) -> f64 {
        let (a, b) = if u < v { (u, v) } else { (v, u) };
        unit_from_bits(mix3(self.seed, a as u64, b as u64)) * self.scale
    }
}

impl EdgeSource for ImplicitComplete {
    fn vertex_count(&self) -> usize {
        self.n
    }

    fn degree(&self, _: VertexId) -> usize {
        self.n - 1
    }

    fn for_each_edge(&self, u: VertexId, mut f: impl FnMut(VertexId, f64)) {
        for v in 0..self.n as VertexId {
            if v != u {
                f(v, self.weight(u, v));
            }
        }
    }
}

struct Dsu {
    parent: Vec<u32>,
    rank: Vec<u8>,
}

impl Dsu {
    fn new(n: usize) -> Self {
        Self { parent: (0..n as u32).collect(), rank: vec![0; n] }
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let p = self.parent[x as usize];
            self.parent[x as usize] = self.parent[p as usize];
            x = p;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) -> bool {
        let (a, b) = (self.find(a), self.find(b));
        if a == b {
            return false;
        }
        let (a, b) = if self.rank[a as usize] < self.rank[b as usize] { (b, a) } else { (a, b) };
        self.parent[b as usize] = a;
        if self.rank[a as usize] == self.rank[b as usize] {
            self.rank[a as usize] += 1;
        }
        true
    }
}

fn canonical_edges(mut e: Vec<WeightedEdge>) -> Vec<WeightedEdge> {
    for x in &mut e {
        if x.0 > x.1 {
            *x = (x.1, x.0, x.2);
        }
    }
    e.sort_by_key(|a| (a.0, a.1));
    e
}

/// Kruskal: sort by weight, keep edges joining two components. Edges are
/// returned as `(min, max, w)` sorted by endpoints.
pub fn kruskal_mst(g: &WeightedGraph) -> Result<Vec<WeightedEdge>> {
    let mut order: Vec<&WeightedEdge> = g.edges.iter().collect();
    order.sort_by(|a, b| a.2.total_cmp(&b.2));
    let mut dsu = Dsu::new(g.n);
    let mut out = Vec::with_capacity(g.n - 1);
    for &&(u, v, w) in &order {
        if dsu.union(u, v) {
            out.push((u, v, w));
        }
    }
    if out.len() + 1 != g.n {
        return Err(Error::Precondition("graph is disconnected".into()));
    }
    Ok(canonical_edges(out))
}

#[derive(Clone, Copy, PartialEq)]
struct Key(f64);

impl Eq for Key {}

impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Key {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Prim with a binary heap, grown from vertex 0.
pub fn prim_mst(g: &impl EdgeSource) -> Result<Vec<WeightedEdge>> {
    let n = g.vertex_count();
    let mut inside = vec![false; n];
    let mut heap = BinaryHeap::new();
    let mut out = Vec::with_capacity(n.saturating_sub(1));
    inside[0] = true;
    g.for_each_edge(0, |v, w| heap.push(Reverse((Key(w), 0u32, v))));
    while let Some(Reverse((Key(w), u, v))) = heap.pop() {
        if inside[v as usize] {
            continue;
        }
        inside[v as usize] = true;
        out.push((u, v, w));
        g.for_each_edge(v, |x, wx| {
            if !inside[x as usize] {
                heap.push(Reverse((Key(wx), v, x)));
            }
        });
    }
    if out.len() + 1 != n {
        return Err(Error::Precondition("graph is disconnected".into()));
    }
    Ok(canonical_edges(out))
}

/// Quadratic-time Prim on an implicit complete graph, without a heap.
pub fn dense_prim(g: &ImplicitComplete) -> Vec<WeightedEdge> {
    let n = g.n;
    let mut best = vec![f64::INFINITY; n];
    let mut from = vec![0u32; n];
    let mut inside = vec![false; n];
    let mut out = Vec::with_capacity(n.saturating_sub(1));
    let mut u = 0u32;
    inside[0] = true;
    for _ in 1..n {
        let mut next = u32::MAX;
        let mut next_w = f64::INFINITY;
        for v in 0..n as u32 {
            if inside[v as usize] {
                continue;
            }
            let w = g.weight(u, v);
            if w < best[v as usize] {
                best[v as usize] = w;
                from[v as usize] = u;
            }
            if best[v as usize] < next_w {
                next_w = best[v as usize];
                next = v;
            }
        }
        inside[next as usize] = true;
        out.push((from[next as usize], next, next_w));
        u = next;
    }
    canonical_edges(out)
}

/// MST of `K_n` with i.i.d. uniform `[0, 1)` weights, built from the edges
/// lighter than a threshold `t`: each pair is present with probability `t`
/// and then carries a uniform `[0, t)` weight. If the light subgraph is
/// connected it contains the whole MST; otherwise `t` is doubled.
pub fn mst_complete_uniform(n: usize, rng: &mut RngStream) -> Vec<WeightedEdge> {
    if n < 2 {
        return Vec::new();
    }
    let mut t = (2.0 * (n as f64).ln() / n as f64).clamp(1e-300, 1.0);
    loop {
        let mut edges = Vec::new();
        let ln_q = (1.0 - t).ln();
        for u in 0..n as VertexId {
            let mut v = u as u64;
            loop {
                let skip = if t >= 1.0 { 0 } else { (rng.uniform_open().ln() / ln_q).floor() as u64 };
                v = v.saturating_add(skip + 1);
                if v >= n as u64 {
                    break;
                }
                edges.push((u, v as VertexId, rng.uniform() * t));
            }
        }
        edges.sort_by(|a, b| a.2.total_cmp(&b.2));
        let mut dsu = Dsu::new(n);
        let mut out = Vec::with_capacity(n - 1);
        for &(u, v, w) in &edges {
            if dsu.union(u, v) {
                out.push((u, v, w));
                if out.len() + 1 == n {
                    return canonical_edges(out);
                }
            }
        }
        t = (2.0 * t).min(1.0);
    }
}

/// Checks that every non-tree edge is the heaviest edge on the cycle it
/// closes with `mst`.
pub fn cycle_property_holds(g: &WeightedGraph, mst: &[WeightedEdge]) -> bool {
    let pairs: Vec<(VertexId, VertexId)> = mst.iter().map(|e| (e.0, e.1)).collect();
    let tree = SizedTree::from_undirected(g.n, &pairs, 0);
    let parent = tree.parents();
    let depth = match tree.depths() {
        Some(d) => d,
        None => return false,
    };
    let mut up_weight = vec![0.0; g.n];
    for &(u, v, w) in mst {
        let child = if parent[v as usize] == u { v } else { u };
        up_weight[child as usize] = w;
    }
    let in_tree: std::collections::HashSet<(VertexId, VertexId)> = pairs.iter().map(|&(a, b)| (a.min(b), a.max(b))).collect();
    g.edges.iter().filter(|e| !in_tree.contains(&(e.0.min(e.1), e.0.max(e.1)))).all(|&(u, v, w)| {
        let (mut a, mut b) = (u, v);
        let mut heaviest = f64::NEG_INFINITY;
        while a != b {
            if depth[a as usize] < depth[b as usize] {
                std::mem::swap(&mut a, &mut b);
            }
            heaviest = heaviest.max(up_weight[a as usize]);
            a = parent[a as usize];
        }
        w > heaviest
    })
}

/// The minimal `a`-ary exploration subtree of height `b`, in exploration order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AryTree {
    pub tree: SizedTree,
    /// Graph vertex behind each tree vertex.
    pub graph_vertex: Vec<VertexId>,
    /// Weight of the edge into each tree vertex; 0 at the root.
    pub weight: Vec<f64>,
    pub depth: Vec<u32>,
}

/// Explores from `root`: each vertex, taken in order of increasing depth and
/// then by index, claims its `a` lightest edges to vertices not yet explored.
/// The root itself counts as explored, so the result is always a tree.
pub fn minimal_ary_subtree(g: &impl EdgeSource, root: VertexId, a: usize, b: u32) -> Result<AryTree> {
    if a == 0 {
        return Err(Error::Precondition("a must be >= 1".into()));
    }
    let need = (a as f64).powi(b as i32 + 1);
    let n = g.vertex_count();
    if (root as usize) >= n {
        return Err(Error::Precondition(format!("root {root} out of range")));
    }
    let min_deg = (0..n as VertexId).map(|u| g.degree(u)).min().unwrap_or(0);
    if (min_deg as f64) < need {
        return Err(Error::Precondition(format!("degree {min_deg} below a^(b+1) = {need}")));
    }
    let mut explored = std::collections::HashSet::new();
    explored.insert(root);
    let mut t = AryTree { tree: SizedTree::singleton(), graph_vertex: vec![root], weight: vec![0.0], depth: vec![0] };
    let mut head = 0;
    let mut picks: Vec<(f64, VertexId)> = Vec::with_capacity(a + 1);
    while head < t.graph_vertex.len() && t.depth[head] < b {
        let u = t.graph_vertex[head];
        picks.clear();
        g.for_each_edge(u, |v, w| {
            if explored.contains(&v) || (picks.len() == a && w >= picks[a - 1].0) {
                return;
            }
            let pos = picks.partition_point(|p| p.0 < w);
            picks.insert(pos, (w, v));
            picks.truncate(a);
        });
        if picks.len() < a {
            return Err(Error::Precondition(format!("vertex {u} has fewer than {a} unexplored neighbours")));
        }
        for &(w, v) in &picks {
            explored.insert(v);
            let id = t.graph_vertex.len() as VertexId;
            t.tree.edges.push((head as VertexId, id));
            t.graph_vertex.push(v);
            t.weight.push(w);
            t.depth.push(t.depth[head] + 1);
        }
        head += 1;
    }
    t.tree.vertex_count = t.graph_vertex.len();
    Ok(t)
}

/// Canonical code of a rooted ball: two rooted trees get equal codes iff
/// there is a root-preserving isomorphism between them.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RootedBallCode {
    pub radius: u32,
    pub code: String,
}

/// Canonical code of the ball of radius `r` around `root`, from adjacency lists.
pub fn canonical_ball_adj(adj: &[Vec<VertexId>], root: VertexId, r: u32) -> RootedBallCode {
    let mut order = vec![root];
    let mut parent = vec![NO_PARENT];
    let mut depth = vec![0u32];
    let mut seen = std::collections::HashMap::new();
    seen.insert(root, 0usize);
    let mut head = 0;
    while head < order.len() {
        if depth[head] < r {
            let u = order[head];
            for &w in &adj[u as usize] {
                if let std::collections::hash_map::Entry::Vacant(e) = seen.entry(w) {
                    e.insert(order.len());
                    order.push(w);
                    parent.push(head as u32);
                    depth.push(depth[head] + 1);
                }
            }
        }
        head += 1;
    }
    let mut kids: Vec<Vec<String>> = vec![Vec::new(); order.len()];
    let mut code = String::new();
    for i in (0..order.len()).rev() {
        let mut k = std::mem::take(&mut kids[i]);
        k.sort_unstable();
        let mut c = String::with_capacity(2 + k.iter().map(String::len).sum::<usize>());
        c.push('(');
        for s in &k {
            c.push_str(s);
        }
        c.push(')');
        if i == 0 {
            code = c;
        } else {
            kids[parent[i] as usize].push(c);
        }
    }
    RootedBallCode { radius: r, code }
}

pub fn canonical_ball(tree: &SizedTree, root: VertexId, r: u32) -> RootedBallCode {
    canonical_ball_adj(&tree.neighbors(), root, r)
}

/// Canonical code of the ball of radius `r` around the root of a handle.
pub fn canonical_ball_msf(h: &mut MsfHandle, r: u32) -> Result<RootedBallCode> {
    h.ensure_ball(r)?;
    let (tree, _) = h.ball_tree(r)?;
    Ok(canonical_ball(&tree, 0, r))
}

/// Root-ball code frequencies of MST(K_n) at one `n`, and the distance to M.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalLimitRow {
    pub n: usize,
    pub radius: u32,
    pub roots: u64,
    pub tv: f64,
    pub mean_root_degree: f64,
}

/// Ball-code frequencies over every vertex of `instances` independent
/// MST(K_n) samples with uniform `[0, 1)` weights.
pub fn mst_ball_frequencies(n: usize, r: u32, instances: u64, seed: u64) -> BTreeMap<String, u64> {
    let mut freq = BTreeMap::new();
    for i in 0..instances {
        let mut rng = RngStream::new(seed, mix3(0x4d5354, n as u64, i));
        let edges: Vec<(VertexId, VertexId)> = mst_complete_uniform(n, &mut rng).iter().map(|e| (e.0, e.1)).collect();
        let adj = adjacency(n, &edges);
        for v in 0..n as VertexId {
            *freq.entry(canonical_ball_adj(&adj, v, r).code).or_insert(0) += 1;
        }
    }
    freq
}

/// Root-ball code frequencies of `samples` independent handles.
pub fn msf_ball_frequencies(r: u32, samples: u64, seed: u64) -> Result<BTreeMap<String, u64>> {
    let mut freq = BTreeMap::new();
    for s in 0..samples {
        let mut h = crate::msf::new_msf(mix3(seed, 0x4d5346, s))?;
        *freq.entry(canonical_ball_msf(&mut h, r)?.code).or_insert(0) += 1;
    }
    Ok(freq)
}

/// Total-variation distances between the root-ball law of MST(K_n) and that
/// of the root component, for each `n`. Every vertex of each MST instance is
/// used as a root; `roots` is the target number of roots per `n`.
pub fn locallimit_compare(n_list: &[usize], r: u32, roots: u64, m_samples: u64, seed: u64) -> Result<Vec<LocalLimitRow>> {
    if n_list.windows(2).any(|w| w[0] >= w[1]) || n_list.first().is_some_and(|&n| n < 2) {
        return Err(Error::Precondition("n list must be ascending and >= 2".into()));
    }
    let m = msf_ball_frequencies(r, m_samples, seed)?;
    let mut rows = Vec::new();
    for &n in n_list {
        let instances = roots.div_ceil(n as u64).max(1);
        let f = mst_ball_frequencies(n, r, instances, seed);
        let total: u64 = f.values().sum();
        let deg_sum: u64 = if r >= 1 { f.iter().map(|(c, k)| root_degree(c) as u64 * k).sum() } else { 0 };
        rows.push(LocalLimitRow {
            n,
            radius: r,
            roots: total,
            tv: crate::stats::total_variation(&f, &m),
            mean_root_degree: deg_sum as f64 / total as f64,
        });
    }
    Ok(rows)
}

/// Number of top-level children in a canonical code.
pub fn root_degree(code: &str) -> usize {
    let mut depth = 0i32;
    let mut count = 0;
    for ch in code.chars() {
        match ch {
            '(' => {
                depth += 1;
                if depth == 2 {
                    count += 1;
                }
            }
            ')' => depth -= 1,
            _ => {}
        }
    }
    count
}
