//! The invasion percolation cluster of the root, sampled either pond by
//! pond from the outlet-weight Markov chain, or by running invasion directly
//! on a lazily generated Poisson-weighted infinite tree.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::dist::{
    sample_borel_tanner, sample_first_outlet, sample_outlet_step, sample_uniform_labelled_tree,
};
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tree::{SizedTree, VertexId};

/// Resumable state of the pond chain: the next pond to draw is pond `index`,
/// whose outlet weight is `outlet_weight` and whose entry vertex sits at
/// backbone distance `entry_depth` from the root.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PondChainState {
    pub index: u64,
    pub outlet_weight: f64,
    pub entry_depth: u64,
}

impl PondChainState {
    pub fn initial(rng: &mut RngStream) -> Self {
        Self { index: 1, outlet_weight: sample_first_outlet(rng), entry_depth: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.outlet_weight > 1.0) || !self.outlet_weight.is_finite() || self.index == 0 {
            return Err(Error::Invariant(format!("corrupted pond chain state {self:?}")));
        }
        Ok(())
    }
}

/// One pond, relabelled breadth-first from its entry vertex (label 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PondRecord {
    pub index: u64,
    pub tree: SizedTree,
    pub entry: VertexId,
    pub exit: VertexId,
    pub outlet_weight: f64,
    /// Weights of `tree.edges`, in the same order.
    pub edge_weights: Vec<f64>,
    /// Depth of each vertex below the entry.
    pub depth: Vec<u32>,
    pub entry_depth: u64,
}

impl PondRecord {
    pub fn size(&self) -> usize {
        self.tree.vertex_count
    }

    /// Backbone distance of the exit vertex from the root.
    pub fn exit_depth(&self) -> u64 {
        self.entry_depth + self.depth[self.exit as usize] as u64
    }

    pub fn diameter(&self) -> u32 {
        if self.tree.vertex_count == 1 {
            return 0;
        }
        let far = |start: VertexId| {
            let l = self.tree.bfs_from(start).expect("pond is a tree");
            let i = (0..l.order.len()).max_by_key(|&i| l.depth[i]).unwrap();
            (l.order[i], l.depth[i])
        };
        let (a, _) = far(0);
        far(a).1
    }
}

/// Vertex cap shared by every sampler that can produce very large trees.
pub const DEFAULT_VERTEX_CAP: usize = 100_000_000;

/// Draws the pond described by `state` and advances the chain.
pub fn next_pond(state: PondChainState, rng: &mut RngStream) -> Result<(PondRecord, PondChainState)> {
    next_pond_capped(state, rng, DEFAULT_VERTEX_CAP)
}

/// As [`next_pond`], but refuses to build a pond with more than `cap` vertices.
pub fn next_pond_capped(
    state: PondChainState,
    rng: &mut RngStream,
    cap: usize,
) -> Result<(PondRecord, PondChainState)> {
    state.validate()?;
    let x = state.outlet_weight;
    let size = sample_borel_tanner(x, rng)?;
    if size > cap.min(u32::MAX as usize / 2) as u64 {
        return Err(Error::Censored { cap, vertices: size as usize });
    }
    let size = size as usize;
    let raw = sample_uniform_labelled_tree(size, rng)?;
    let entry_raw = rng.below(size as u64) as VertexId;
    let exit_raw = rng.below(size as u64) as VertexId;
    let layout = raw.bfs_from(entry_raw).ok_or_else(|| Error::Invariant("pond is not a tree".into()))?;
    let edges: Vec<(VertexId, VertexId)> = (1..size).map(|i| (layout.parent[i], i as VertexId)).collect();
    let edge_weights: Vec<f64> = (1..size)
        .map(|_| loop {
            let w = rng.uniform_open() * x;
            if w < x {
                break w;
            }
        })
        .collect();
    let record = PondRecord {
        index: state.index,
        tree: SizedTree { vertex_count: size, edges, root: 0 },
        entry: 0,
        exit: layout.slot[exit_raw as usize],
        outlet_weight: x,
        edge_weights,
        depth: layout.depth,
        entry_depth: state.entry_depth,
    };
    let next = PondChainState {
        index: state.index + 1,
        outlet_weight: sample_outlet_step(x, rng)?,
        entry_depth: record.exit_depth() + 1,
    };
    Ok((record, next))
}

/// `I(z) = min{i : X_i ≤ z}` along the outlet chain started from `state`.
pub fn count_outlets_above(state: PondChainState, z: f64, rng: &mut RngStream) -> Result<u64> {
    if !z.is_finite() || z <= 1.0 {
        return Err(Error::domain("count_outlets_above", format!("z must be > 1, got {z}")));
    }
    state.validate()?;
    let mut x = state.outlet_weight;
    let mut i = state.index;
    while x > z {
        x = sample_outlet_step(x, rng)?;
        i += 1;
    }
    Ok(i)
}

/// One accepted edge of direct invasion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InvadedEdge {
    pub weight: f64,
    pub parent: VertexId,
    pub child: VertexId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvasionTrace {
    pub edges: Vec<InvadedEdge>,
    pub running_max: f64,
}

impl InvasionTrace {
    pub fn running_max_series(&self) -> Vec<f64> {
        self.edges
            .iter()
            .scan(0.0f64, |m, e| {
                *m = m.max(e.weight);
                Some(*m)
            })
            .collect()
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Frontier(f64);

impl Eq for Frontier {}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Invasion percolation from the root of a lazily generated PWIT. Each
/// invaded vertex exposes only its lightest unexplored child edge; the gaps
/// between its child weights are i.i.d. Exp(1).
pub fn invade_pwit(steps: usize, rng: &mut RngStream) -> Result<InvasionTrace> {
    if steps == 0 {
        return Err(Error::domain("invade_pwit", "steps must be >= 1"));
    }
    let mut heap: BinaryHeap<Reverse<(Frontier, VertexId)>> = BinaryHeap::with_capacity(steps + 1);
    let mut next_weight: Vec<f64> = Vec::with_capacity(steps + 1);
    let mut edges = Vec::with_capacity(steps);
    next_weight.push(rng.exp1());
    heap.push(Reverse((Frontier(next_weight[0]), 0)));
    let mut running_max = 0.0f64;
    for _ in 0..steps {
        let Reverse((Frontier(w), parent)) = heap.pop().expect("frontier never empties");
        let child = next_weight.len() as VertexId;
        edges.push(InvadedEdge { weight: w, parent, child });
        running_max = running_max.max(w);
        let p = parent as usize;
        next_weight[p] += rng.exp1();
        heap.push(Reverse((Frontier(next_weight[p]), parent)));
        let first = rng.exp1();
        next_weight.push(first);
        heap.push(Reverse((Frontier(first), child)));
    }
    Ok(InvasionTrace { edges, running_max })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::theta;
    use crate::stats::ks_statistic;

    #[test]
    fn chain_is_strictly_decreasing_and_ponds_are_valid() {
        let mut rng = RngStream::new(51, 0);
        let mut state = PondChainState::initial(&mut rng);
        while state.outlet_weight > 1.01 {
            let (pond, next) = next_pond(state, &mut rng).unwrap();
            assert!(next.outlet_weight < state.outlet_weight && next.outlet_weight > 1.0);
            assert!(pond.tree.is_valid());
            assert!(pond.edge_weights.iter().all(|&w| w > 0.0 && w < pond.outlet_weight));
            assert!((pond.exit as usize) < pond.size());
            assert_eq!(next.entry_depth, pond.exit_depth() + 1);
            state = next;
        }
    }

    #[test]
    fn singleton_pond_has_entry_equal_exit() {
        let mut rng = RngStream::new(52, 0);
        let mut state = PondChainState { index: 1, outlet_weight: 8.0, entry_depth: 0 };
        let mut seen = 0;
        for _ in 0..1000 {
            let (pond, _) = next_pond(state, &mut rng).unwrap();
            if pond.size() == 1 {
                assert_eq!(pond.entry, pond.exit);
                assert_eq!(pond.exit_depth(), pond.entry_depth);
                seen += 1;
            }
            state.index += 1;
        }
        assert!(seen > 0);
    }

    #[test]
    fn corrupted_state_is_rejected() {
        let mut rng = RngStream::new(0, 0);
        let bad = PondChainState { index: 3, outlet_weight: 0.9, entry_depth: 0 };
        assert!(matches!(next_pond(bad, &mut rng), Err(Error::Invariant(_))));
        assert!(count_outlets_above(PondChainState { index: 1, outlet_weight: 2.0, entry_depth: 0 }, 1.0, &mut rng).is_err());
    }

    #[test]
    fn first_outlet_law() {
        let mut rng = RngStream::new(53, 0);
        let mut xs: Vec<f64> = (0..100_000).map(|_| PondChainState::initial(&mut rng).outlet_weight).collect();
        xs.sort_by(f64::total_cmp);
        let ks = ks_statistic(&xs, |x| theta(x).unwrap());
        assert!(ks < 0.01, "ks {ks}");
    }

    #[test]
    fn outlet_index_above_first_weight_is_one() {
        let mut rng = RngStream::new(54, 0);
        let s = PondChainState { index: 1, outlet_weight: 1.7, entry_depth: 0 };
        assert_eq!(count_outlets_above(s, 1.7, &mut rng).unwrap(), 1);
        assert_eq!(count_outlets_above(s, 2.5, &mut rng).unwrap(), 1);
    }

    #[test]
    fn invasion_builds_a_tree_with_exp_first_edge() {
        let mut rng = RngStream::new(55, 0);
        let mut firsts = Vec::new();
        for _ in 0..20_000 {
            let t = invade_pwit(50, &mut rng).unwrap();
            // Every child is new and every parent was invaded earlier: a tree.
            for (k, e) in t.edges.iter().enumerate() {
                assert_eq!(e.child as usize, k + 1);
                assert!((e.parent as usize) <= k);
            }
            firsts.push(t.edges[0].weight);
        }
        firsts.sort_by(f64::total_cmp);
        let ks = ks_statistic(&firsts, |x| 1.0 - (-x).exp());
        assert!(ks < 0.015, "ks {ks}");
    }
}
