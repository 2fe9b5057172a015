//! The component of the root in the wired minimal spanning forest, built
//! lazily: the invasion cluster pond by pond, with an aggregation tree hanging
//! off every cluster vertex from its activation time onwards.
//!
//! Ponds are grown breadth first on demand, as size-conditioned Galton–Watson
//! trees, so only the explored part of a huge pond is ever stored. Every
//! vertex owns a random stream keyed by its creation path and each pond draws
//! from its own sequential stream, so the sample does not depend on the order
//! in which vertices are expanded. Vertex ids are assigned in creation order
//! and every parent has a smaller id than its children.

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dist::{sample_borel_tanner, sample_first_outlet, sample_outlet_step, ConditionedBfs};
use crate::error::{Error, Result};
use crate::invasion::DEFAULT_VERTEX_CAP;
use crate::kernel::dual_unchecked;
use crate::pgwa::expand_children;
use crate::rng::{mix2, mix3, RngStream};
use crate::tree::{SizedTree, VertexId, NO_PARENT};

const CHAIN_KEY: u64 = 0x6368_6169_6e00_0001;
const POND_KEY: u64 = 0x706f_6e64_0000_0002;

const CLUSTER: u8 = 1;
const EXPANDED: u8 = 2;
const BACKBONE: u8 = 4;
const EXIT: u8 = 8;

/// Summary of one pond that has been reached.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PondInfo {
    pub index: u64,
    pub entry: VertexId,
    /// The exit vertex, once the pond has been explored far enough to create it.
    pub exit: Option<VertexId>,
    pub outlet_weight: f64,
    /// Full size of the pond, most of which may never be generated.
    pub size: u64,
    /// Breadth-first position of the exit within the pond.
    pub exit_position: u64,
    pub entry_depth: u64,
}

/// A pond grown in breadth-first order on demand.
#[derive(Debug, Clone)]
struct LazyPond {
    info: PondInfo,
    shape: ConditionedBfs,
    rng: RngStream,
    /// Vertex ids of the created pond vertices, in breadth-first order.
    ids: Vec<VertexId>,
}

#[derive(Debug, Clone)]
pub struct MsfHandle {
    seed: u64,
    cap: usize,
    parent: Vec<VertexId>,
    dist: Vec<u32>,
    first_child: Vec<VertexId>,
    next_sibling: Vec<VertexId>,
    child_count: Vec<u32>,
    /// Weight of the edge to the parent; 0 at the root.
    weight: Vec<f64>,
    activation: Vec<f64>,
    key: Vec<u64>,
    level: Vec<u16>,
    flags: Vec<u8>,
    /// Pond index and breadth-first position of every cluster vertex.
    slot: HashMap<VertexId, (u32, u64)>,
    ponds: Vec<LazyPond>,
    next_outlet: f64,
    ensured: Option<u32>,
    censored: bool,
    scratch: Vec<f64>,
}

/// Opens a handle with the default vertex cap; only the root exists afterwards.
pub fn new_msf(seed: u64) -> Result<MsfHandle> {
    MsfHandle::new(seed, DEFAULT_VERTEX_CAP)
}

impl MsfHandle {
    pub fn new(seed: u64, cap: usize) -> Result<Self> {
        let mut chain_rng = RngStream::new(seed, CHAIN_KEY);
        let mut h = Self {
            seed,
            cap: cap.max(1),
            parent: Vec::new(),
            dist: Vec::new(),
            first_child: Vec::new(),
            next_sibling: Vec::new(),
            child_count: Vec::new(),
            weight: Vec::new(),
            activation: Vec::new(),
            key: Vec::new(),
            level: Vec::new(),
            flags: Vec::new(),
            slot: HashMap::new(),
            ponds: Vec::new(),
            next_outlet: sample_first_outlet(&mut chain_rng),
            ensured: None,
            censored: false,
            scratch: Vec::new(),
        };
        h.open_pond(NO_PARENT)?;
        Ok(h)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn root(&self) -> VertexId {
        0
    }

    pub fn vertex_count(&self) -> usize {
        self.parent.len()
    }

    pub fn ponds(&self) -> Vec<PondInfo> {
        self.ponds.iter().map(|p| p.info).collect()
    }

    pub fn is_censored(&self) -> bool {
        self.censored
    }

    fn check(&self, v: VertexId) -> Result<usize> {
        let i = v as usize;
        if i >= self.parent.len() {
            return Err(Error::State(format!("vertex {v} is not materialised")));
        }
        Ok(i)
    }

    pub fn parent(&self, v: VertexId) -> Option<VertexId> {
        let p = self.parent[v as usize];
        (p != NO_PARENT).then_some(p)
    }

    pub fn dist(&self, v: VertexId) -> u32 {
        self.dist[v as usize]
    }

    /// Weight of the edge from `v` to its parent.
    pub fn edge_weight(&self, v: VertexId) -> f64 {
        self.weight[v as usize]
    }

    pub fn activation_time(&self, v: VertexId) -> Result<f64> {
        Ok(self.activation[self.check(v)?])
    }

    /// Number of attachment steps between `v` and the cluster vertex it hangs from.
    pub fn level(&self, v: VertexId) -> u32 {
        self.level[v as usize] as u32
    }

    /// Hash of the creation path of `v`, independent of expansion order.
    pub fn vertex_key(&self, v: VertexId) -> u64 {
        self.key[v as usize]
    }

    pub fn in_cluster(&self, v: VertexId) -> bool {
        self.flags[v as usize] & CLUSTER != 0
    }

    pub fn on_backbone(&self, v: VertexId) -> bool {
        self.flags[v as usize] & BACKBONE != 0
    }

    pub fn is_expanded(&self, v: VertexId) -> bool {
        self.flags[v as usize] & EXPANDED != 0
    }

    pub fn child_count(&self, v: VertexId) -> u32 {
        self.child_count[v as usize]
    }

    pub fn children(&self, v: VertexId) -> Children<'_> {
        Children { h: self, next: self.first_child[v as usize] }
    }

    /// Degree of an expanded vertex, which is then final.
    pub fn degree(&self, v: VertexId) -> Result<u32> {
        let i = self.check(v)?;
        if self.flags[i] & EXPANDED == 0 {
            return Err(Error::State(format!("degree of unexpanded vertex {v}")));
        }
        Ok(self.child_count[i] + (self.parent[i] != NO_PARENT) as u32)
    }

    /// The `k`-th neighbour of `v` in the order parent, then children.
    pub fn neighbor(&self, v: VertexId, mut k: u32) -> VertexId {
        let i = v as usize;
        if self.parent[i] != NO_PARENT {
            if k == 0 {
                return self.parent[i];
            }
            k -= 1;
        }
        let mut c = self.first_child[i];
        for _ in 0..k {
            c = self.next_sibling[c as usize];
        }
        c
    }

    fn push_vertex(&mut self, parent: VertexId, weight: f64, activation: f64, key: u64, level: u16, flags: u8) -> VertexId {
        let id = self.parent.len() as VertexId;
        self.parent.push(parent);
        self.first_child.push(NO_PARENT);
        self.next_sibling.push(NO_PARENT);
        self.child_count.push(0);
        self.weight.push(weight);
        self.activation.push(activation);
        self.key.push(key);
        self.level.push(level);
        self.flags.push(flags);
        if parent == NO_PARENT {
            self.dist.push(0);
        } else {
            let p = parent as usize;
            self.dist.push(self.dist[p] + 1);
            self.next_sibling[id as usize] = self.first_child[p];
            self.first_child[p] = id;
            self.child_count[p] += 1;
        }
        id
    }

    fn censor(&mut self, vertices: usize) -> Error {
        self.censored = true;
        Error::Censored { cap: self.cap, vertices }
    }

    /// Draws the size, exit position and successor outlet weight of the next
    /// pond and creates its entry vertex below `attach`.
    fn open_pond(&mut self, attach: VertexId) -> Result<()> {
        let i = self.ponds.len() as u64 + 1;
        let x = self.next_outlet;
        let mut rng = RngStream::new(self.seed, mix2(POND_KEY, i));
        let size = sample_borel_tanner(x, &mut rng)?;
        let exit_position = rng.below(size);
        self.next_outlet = sample_outlet_step(x, &mut RngStream::new(self.seed, mix2(CHAIN_KEY, i)))?;
        let entry_weight = self.ponds.last().map_or(0.0, |p| p.info.outlet_weight);
        let flags = CLUSTER | BACKBONE | if exit_position == 0 { EXIT } else { 0 };
        let entry = self.push_vertex(attach, entry_weight, x, mix3(POND_KEY, i, 0), 0, flags);
        self.slot.insert(entry, (self.ponds.len() as u32, 0));
        self.ponds.push(LazyPond {
            info: PondInfo {
                index: i,
                entry,
                exit: (exit_position == 0).then_some(entry),
                outlet_weight: x,
                size,
                exit_position,
                entry_depth: self.dist[entry as usize] as u64,
            },
            shape: ConditionedBfs::new(size)?,
            rng,
            ids: vec![entry],
        });
        Ok(())
    }

    /// Draws offspring for pond vertices in breadth-first order up to and
    /// including position `upto`.
    fn grow_pond(&mut self, p: usize, upto: u64) -> Result<()> {
        while self.ponds[p].shape.processed() <= upto {
            let pond = &mut self.ponds[p];
            let j = pond.shape.processed();
            let first = pond.shape.created();
            let c = pond.shape.next_offspring(&mut pond.rng).expect("position inside the pond");
            let (x, i, exit_position) = (pond.info.outlet_weight, pond.info.index, pond.info.exit_position);
            let parent = pond.ids[j as usize];
            if self.vertex_count() + c as usize > self.cap {
                return Err(self.censor(self.vertex_count() + c as usize));
            }
            for pos in first..first + c {
                let w = self.ponds[p].rng.uniform_open() * x;
                let is_exit = pos == exit_position;
                let flags = CLUSTER | if is_exit { EXIT } else { 0 };
                let v = self.push_vertex(parent, w, x, mix3(POND_KEY, i, pos), 0, flags);
                self.slot.insert(v, (p as u32, pos));
                self.ponds[p].ids.push(v);
                if is_exit {
                    self.ponds[p].info.exit = Some(v);
                    let mut u = v;
                    while self.flags[u as usize] & BACKBONE == 0 {
                        self.flags[u as usize] |= BACKBONE;
                        u = self.parent[u as usize];
                    }
                }
            }
        }
        Ok(())
    }

    /// Materialises every neighbour of `v`: the next pond when `v` is the
    /// newest pond's exit, then the blocks attached at `v`'s activation time.
    pub fn expand_vertex(&mut self, v: VertexId) -> Result<Vec<VertexId>> {
        let i = self.check(v)?;
        if self.flags[i] & EXPANDED != 0 {
            return Err(Error::State(format!("vertex {v} is already expanded")));
        }
        let before = self.vertex_count();
        self.expand_unchecked(v)?;
        Ok((before as VertexId..self.vertex_count() as VertexId).collect())
    }

    /// Expands `v` unless it already is.
    #[inline]
    pub fn ensure_expanded(&mut self, v: VertexId) -> Result<()> {
        if self.flags[v as usize] & EXPANDED == 0 {
            self.expand_unchecked(v)?;
        }
        Ok(())
    }

    fn expand_unchecked(&mut self, v: VertexId) -> Result<()> {
        if self.censored {
            return Err(Error::Censored { cap: self.cap, vertices: self.vertex_count() });
        }
        let i = v as usize;
        if let Some(&(p, pos)) = self.slot.get(&v) {
            self.grow_pond(p as usize, pos)?;
            if self.flags[i] & EXIT != 0 {
                self.open_pond(v)?;
            }
        }
        let a = self.activation[i];
        let cluster = self.flags[i] & CLUSTER != 0;
        let mu = if cluster { 0.0 } else { dual_unchecked(a) };
        let key = self.key[i];
        let level = self.level[i];
        let mut rng = RngStream::new(self.seed, key);
        let mut scratch = std::mem::take(&mut self.scratch);
        let mut kids = Vec::new();
        expand_children(a, mu, true, &mut rng, &mut scratch, |c| kids.push(c));
        self.scratch = scratch;
        if self.vertex_count() + kids.len() > self.cap {
            return Err(self.censor(self.vertex_count() + kids.len()));
        }
        for (j, c) in kids.iter().enumerate() {
            let lev = level.saturating_add(c.new_level as u16);
            self.push_vertex(v, c.weight, c.activation, mix2(key, j as u64 + 1), lev, 0);
        }
        self.flags[i] |= EXPANDED;
        Ok(())
    }

    /// Expands every vertex within distance `r - 1` of the root, so that every
    /// vertex of the ball of radius `r` is materialised with its exact distance.
    pub fn ensure_ball(&mut self, r: u32) -> Result<()> {
        if self.ensured.is_some_and(|e| e >= r) {
            return Ok(());
        }
        let mut v = 0usize;
        while v < self.vertex_count() {
            if self.dist[v] < r && self.flags[v] & EXPANDED == 0 {
                self.expand_unchecked(v as VertexId)?;
            }
            v += 1;
        }
        self.ensured = Some(r);
        Ok(())
    }

    pub fn ensured_radius(&self) -> Option<u32> {
        self.ensured
    }

    fn require_ball(&self, r: u32) -> Result<()> {
        if self.ensured.is_some_and(|e| e >= r) {
            Ok(())
        } else {
            Err(Error::State(format!("ball of radius {r} has not been ensured")))
        }
    }

    pub fn ball_volume(&self, r: u32) -> Result<u64> {
        self.require_ball(r)?;
        Ok(self.dist.iter().filter(|&&d| d <= r).count() as u64)
    }

    /// `|B(∅, k)|` for every `k ≤ r`.
    pub fn volume_profile(&self, r: u32) -> Result<Vec<u64>> {
        self.require_ball(r)?;
        let mut counts = vec![0u64; r as usize + 1];
        for &d in &self.dist {
            if d <= r {
                counts[d as usize] += 1;
            }
        }
        for k in 1..counts.len() {
            counts[k] += counts[k - 1];
        }
        Ok(counts)
    }

    /// Vertices of the ball of radius `r` in id order, so parents come first.
    pub fn ball_vertices(&self, r: u32) -> Result<Vec<VertexId>> {
        self.require_ball(r)?;
        Ok((0..self.vertex_count() as VertexId).filter(|&v| self.dist[v as usize] <= r).collect())
    }

    /// The ball of radius `r` relabelled `0..` in id order, rooted at 0.
    pub fn ball_tree(&self, r: u32) -> Result<(SizedTree, Vec<VertexId>)> {
        let ids = self.ball_vertices(r)?;
        let mut local = vec![NO_PARENT; self.vertex_count()];
        for (k, &v) in ids.iter().enumerate() {
            local[v as usize] = k as VertexId;
        }
        let edges = ids[1..].iter().map(|&v| (local[self.parent[v as usize] as usize], local[v as usize])).collect();
        Ok((SizedTree { vertex_count: ids.len(), edges, root: 0 }, ids))
    }

    /// Writes the ball of radius `r` as lines `parent child weight activation_child`.
    pub fn write_edge_list(&self, r: u32, out: &mut impl Write) -> Result<()> {
        for v in self.ball_vertices(r)?.into_iter().skip(1) {
            let i = v as usize;
            writeln!(out, "{} {} {:e} {:e}", self.parent[i], v, self.weight[i], self.activation[i])?;
        }
        Ok(())
    }

    /// Structural self-check over the materialised part.
    pub fn check_invariants(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Invariant(m));
        for (k, p) in self.ponds.iter().enumerate() {
            if k > 0 && !(p.info.outlet_weight < self.ponds[k - 1].info.outlet_weight) {
                return fail(format!("outlet weights not decreasing at pond {}", p.info.index));
            }
            if p.ids.iter().any(|&v| self.activation[v as usize] != p.info.outlet_weight) {
                return fail(format!("pond {} has a vertex with a foreign activation", p.info.index));
            }
        }
        for v in 1..self.vertex_count() {
            let p = self.parent[v] as usize;
            if p >= v || self.dist[v] != self.dist[p] + 1 {
                return fail(format!("vertex {v} breaks parent order or distance"));
            }
            let (w, a, ap) = (self.weight[v], self.activation[v], self.activation[p]);
            let cluster = self.flags[v] & CLUSTER != 0;
            if cluster {
                if self.flags[p] & CLUSTER == 0 {
                    return fail(format!("cluster vertex {v} below an aggregated vertex"));
                }
                if a != ap && !(a < ap && w == ap) {
                    return fail(format!("cluster vertex {v} has activation {a} under {ap}"));
                }
            } else if a.to_bits() != ap.max(w).to_bits() {
                return fail(format!("aggregated vertex {v} has activation {a}, expected max({ap}, {w})"));
            }
        }
        Ok(())
    }
}

pub struct Children<'a> {
    h: &'a MsfHandle,
    next: VertexId,
}

impl Iterator for Children<'_> {
    type Item = VertexId;

    fn next(&mut self) -> Option<VertexId> {
        if self.next == NO_PARENT {
            return None;
        }
        let c = self.next;
        self.next = self.h.next_sibling[c as usize];
        Some(c)
    }
}

/// One line of an edge-list dump.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DumpEdge {
    pub parent: u64,
    pub child: u64,
    pub weight: f64,
    pub activation: f64,
}

/// Parses the output of [`MsfHandle::write_edge_list`]; blank lines and lines
/// starting with `#` are skipped.
pub fn parse_edge_list(text: &str) -> Result<Vec<DumpEdge>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |what: &str| Error::Parse(format!("line {}: {what}: {line:?}", n + 1));
        let mut it = line.split_ascii_whitespace();
        let mut field = |name: &str| it.next().ok_or_else(|| bad(&format!("missing {name}")));
        let parent: u64 = field("parent")?.parse().map_err(|_| bad("bad parent"))?;
        let child: u64 = field("child")?.parse().map_err(|_| bad("bad child"))?;
        let weight: f64 = field("weight")?.parse().map_err(|_| bad("bad weight"))?;
        let activation: f64 = field("activation")?.parse().map_err(|_| bad("bad activation"))?;
        if it.next().is_some() {
            return Err(bad("trailing fields"));
        }
        if !(weight.is_finite() && weight >= 0.0 && activation.is_finite() && activation > 0.0) {
            return Err(bad("weight and activation must be finite and non-negative"));
        }
        if parent == child {
            return Err(bad("self loop"));
        }
        out.push(DumpEdge { parent, child, weight, activation });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn root_is_in_pond_one() {
        for seed in 0..50 {
            let h = new_msf(seed).unwrap();
            assert_eq!(h.activation_time(0).unwrap(), h.ponds()[0].outlet_weight);
            assert!(h.on_backbone(0));
            assert_eq!(h.ponds()[0].entry, 0);
            assert_eq!(h.vertex_count(), 1);
        }
    }

    #[test]
    fn cluster_vertices_carry_their_outlet_weight() {
        let mut h = new_msf(7).unwrap();
        h.ensure_ball(40).unwrap();
        h.check_invariants().unwrap();
        let backbone: Vec<_> = (0..h.vertex_count() as VertexId).filter(|&v| h.on_backbone(v)).collect();
        // The backbone is a path: every backbone vertex but the root has a backbone parent.
        for &v in &backbone[1..] {
            assert!(h.on_backbone(h.parent(v).unwrap()));
        }
        let ponds = h.ponds();
        for (k, p) in ponds.iter().enumerate() {
            assert!(h.in_cluster(p.entry));
            if k + 1 < ponds.len() {
                let exit = p.exit.unwrap();
                assert!(h.on_backbone(exit));
                assert_eq!(h.parent(ponds[k + 1].entry), Some(exit));
                assert_eq!(h.edge_weight(ponds[k + 1].entry), p.outlet_weight);
            }
        }
    }

    #[test]
    fn double_expansion_is_an_error() {
        let mut h = new_msf(3).unwrap();
        h.expand_vertex(0).unwrap();
        assert!(matches!(h.expand_vertex(0), Err(Error::State(_))));
        assert!(h.activation_time(1_000_000).is_err());
        assert!(h.ball_volume(1).is_err());
    }

    #[test]
    fn ball_zero_is_the_root() {
        let mut h = new_msf(11).unwrap();
        h.ensure_ball(0).unwrap();
        assert_eq!(h.ball_volume(0).unwrap(), 1);
    }

    #[test]
    fn cap_censors() {
        let mut hit = false;
        for seed in 0..20 {
            let mut h = MsfHandle::new(seed, 200).unwrap();
            if let Err(Error::Censored { .. }) = h.ensure_ball(60) {
                hit = true;
                assert!(h.is_censored());
                assert!(h.ensure_ball(61).is_err());
            }
        }
        assert!(hit);
    }

    #[test]
    fn edge_list_round_trip() {
        let mut h = new_msf(5).unwrap();
        h.ensure_ball(6).unwrap();
        let mut buf = Vec::new();
        h.write_edge_list(6, &mut buf).unwrap();
        let edges = parse_edge_list(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(edges.len() as u64 + 1, h.ball_volume(6).unwrap());
        for e in &edges {
            let v = e.child as VertexId;
            assert_eq!(e.parent, h.parent(v).unwrap() as u64);
            assert_eq!(e.weight, h.edge_weight(v));
            assert_eq!(e.activation, h.activation_time(v).unwrap());
        }
        assert!(parse_edge_list("1 2 0.5").is_err());
        assert!(parse_edge_list("1 2 -0.5 0.1").is_err());
        assert!(parse_edge_list("1 1 0.5 0.1").is_err());
        assert!(parse_edge_list("# header\n\n1 2 0.5 2.0\n").unwrap().len() == 1);
    }

    fn ball_signature(h: &MsfHandle, r: u32) -> Vec<(u64, u32, u64, u64)> {
        let mut sig: Vec<_> = h
            .ball_vertices(r)
            .unwrap()
            .into_iter()
            .map(|v| {
                let pk = h.parent(v).map_or(0, |p| h.vertex_key(p));
                (h.vertex_key(v), h.dist(v), h.edge_weight(v).to_bits(), pk)
            })
            .collect();
        sig.sort_unstable();
        sig
    }

    #[test]
    fn expansion_order_does_not_change_the_ball() {
        for seed in 0..30 {
            let mut direct = new_msf(seed).unwrap();
            direct.ensure_ball(12).unwrap();
            let mut stepped = new_msf(seed).unwrap();
            for r in 0..=12 {
                stepped.ensure_ball(r).unwrap();
            }
            // Expand some vertices out of order first, as a walk would.
            let mut scrambled = new_msf(seed).unwrap();
            let mut rng = RngStream::new(seed, 99);
            let mut v = 0;
            for _ in 0..200 {
                scrambled.ensure_expanded(v).unwrap();
                let d = scrambled.degree(v).unwrap();
                v = scrambled.neighbor(v, rng.below(d as u64) as u32);
            }
            scrambled.ensure_ball(12).unwrap();
            let a = ball_signature(&direct, 12);
            assert_eq!(a, ball_signature(&stepped, 12));
            assert_eq!(a, ball_signature(&scrambled, 12));
            assert_eq!(direct.ball_volume(12).unwrap(), a.len() as u64);
            direct.check_invariants().unwrap();
            scrambled.check_invariants().unwrap();
        }
    }
}
