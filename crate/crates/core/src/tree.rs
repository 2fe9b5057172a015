//! Finite rooted trees shared by the samplers.

use serde::{Deserialize, Serialize};

pub type VertexId = u32;

pub const NO_PARENT: VertexId = u32::MAX;

/// A finite rooted tree with vertices `0..vertex_count`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizedTree {
    pub vertex_count: usize,
    /// `(parent, child)` pairs, oriented away from `root`.
    pub edges: Vec<(VertexId, VertexId)>,
    pub root: VertexId,
}

impl SizedTree {
    pub fn singleton() -> Self {
        Self { vertex_count: 1, edges: Vec::new(), root: 0 }
    }

    /// Builds a rooted tree from an unoriented edge list by orienting away from `root`.
    pub fn from_undirected(vertex_count: usize, edges: &[(VertexId, VertexId)], root: VertexId) -> Self {
        let adj = adjacency(vertex_count, edges);
        let mut oriented = Vec::with_capacity(edges.len());
        let mut seen = vec![false; vertex_count];
        let mut queue = std::collections::VecDeque::new();
        if vertex_count > 0 {
            seen[root as usize] = true;
            queue.push_back(root);
        }
        while let Some(u) = queue.pop_front() {
            for &w in &adj[u as usize] {
                if !seen[w as usize] {
                    seen[w as usize] = true;
                    oriented.push((u, w));
                    queue.push_back(w);
                }
            }
        }
        Self { vertex_count, edges: oriented, root }
    }

    pub fn parents(&self) -> Vec<VertexId> {
        let mut p = vec![NO_PARENT; self.vertex_count];
        for &(a, b) in &self.edges {
            p[b as usize] = a;
        }
        p
    }

    pub fn children(&self) -> Vec<Vec<VertexId>> {
        let mut c = vec![Vec::new(); self.vertex_count];
        for &(a, b) in &self.edges {
            c[a as usize].push(b);
        }
        c
    }

    pub fn neighbors(&self) -> Vec<Vec<VertexId>> {
        adjacency(self.vertex_count, &self.edges)
    }

    /// Root distances, or `None` if the edge set is not a tree spanning all vertices.
    pub fn depths(&self) -> Option<Vec<u32>> {
        self.bfs_from(self.root).map(|l| {
            let mut d = vec![0; self.vertex_count];
            for (i, &v) in l.order.iter().enumerate() {
                d[v as usize] = l.depth[i];
            }
            d
        })
    }

    pub fn height(&self) -> u32 {
        self.depths().map(|d| d.into_iter().max().unwrap_or(0)).unwrap_or(0)
    }

    /// Connected, acyclic and `|E| = |V| - 1`.
    pub fn is_valid(&self) -> bool {
        self.vertex_count >= 1
            && self.edges.len() + 1 == self.vertex_count
            && (self.root as usize) < self.vertex_count
            && self.edges.iter().all(|&(a, b)| (a as usize) < self.vertex_count && (b as usize) < self.vertex_count)
            && self.bfs_from(self.root).is_some()
    }

    /// Breadth-first layout from `start`, treating edges as undirected.
    pub fn bfs_from(&self, start: VertexId) -> Option<BfsLayout> {
        let adj = self.neighbors();
        let n = self.vertex_count;
        let mut slot = vec![u32::MAX; n];
        let mut order = Vec::with_capacity(n);
        let mut parent = Vec::with_capacity(n);
        let mut depth = Vec::with_capacity(n);
        slot[start as usize] = 0;
        order.push(start);
        parent.push(NO_PARENT);
        depth.push(0);
        let mut head = 0;
        while head < order.len() {
            let u = order[head];
            for &w in &adj[u as usize] {
                if slot[w as usize] == u32::MAX {
                    slot[w as usize] = order.len() as u32;
                    order.push(w);
                    parent.push(head as u32);
                    depth.push(depth[head] + 1);
                } else if parent[head] != slot[w as usize] {
                    // A visited neighbour other than the BFS parent closes a cycle.
                    return None;
                }
            }
            head += 1;
        }
        (order.len() == n).then_some(BfsLayout { order, parent, depth, slot })
    }
}

/// Breadth-first relabelling of a tree: position `i` holds original vertex
/// `order[i]`, its parent's position and its depth.
#[derive(Debug, Clone)]
pub struct BfsLayout {
    pub order: Vec<VertexId>,
    pub parent: Vec<u32>,
    pub depth: Vec<u32>,
    /// Inverse of `order`.
    pub slot: Vec<u32>,
}

pub fn adjacency(n: usize, edges: &[(VertexId, VertexId)]) -> Vec<Vec<VertexId>> {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a as usize].push(b);
        adj[b as usize].push(a);
    }
    adj
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validity() {
        assert!(SizedTree::singleton().is_valid());
        let t = SizedTree::from_undirected(4, &[(0, 1), (1, 2), (3, 1)], 2);
        assert!(t.is_valid());
        assert_eq!(t.root, 2);
        assert_eq!(t.depths().unwrap(), vec![2, 1, 0, 2]);
        let cyc = SizedTree { vertex_count: 3, edges: vec![(0, 1), (1, 2), (2, 0)], root: 0 };
        assert!(!cyc.is_valid());
        let disc = SizedTree { vertex_count: 4, edges: vec![(0, 1), (2, 3), (0, 1)], root: 0 };
        assert!(!disc.is_valid());
    }
}
