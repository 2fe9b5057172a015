//! Effective resistance from a vertex to the outside of a ball, with unit
//! resistors: an exact conductance recursion on trees and a Laplacian solve
//! used as an independent check.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::msf::MsfHandle;
use crate::tree::{SizedTree, VertexId, NO_PARENT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResistanceMethod {
    TreeRecursion,
    Laplacian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResistanceQuery {
    pub center: VertexId,
    pub radius: u32,
    pub value: f64,
    pub method: ResistanceMethod,
}

/// Resistance recursion over a rooted tree given in an order where every
/// parent comes before its children. `shell(i)` is the number of edges from
/// vertex `i` to the outside when `i` sits at depth `r`. Branches that never
/// reach the outside are dropped. A single live child is added in series
/// directly, so chains stay exact in floating point.
fn resistance(parent: &[u32], depth: &[u32], shell: impl Fn(usize) -> f64, r: u32) -> Option<f64> {
    let n = parent.len();
    // Per vertex: number of live children, and the sum of their conductances
    // or the single child's resistance plus one.
    let mut live = vec![0u32; n];
    let mut acc = vec![0.0; n];
    let mut series = vec![0.0; n];
    let mut res = vec![f64::INFINITY; n];
    for i in (0..n).rev() {
        res[i] = if depth[i] == r {
            let k = shell(i);
            if k > 0.0 { 1.0 / k } else { f64::INFINITY }
        } else {
            match live[i] {
                0 => f64::INFINITY,
                1 => series[i],
                _ => 1.0 / acc[i],
            }
        };
        if i > 0 && res[i].is_finite() {
            let p = parent[i] as usize;
            live[p] += 1;
            series[p] = 1.0 + res[i];
            acc[p] += 1.0 / (1.0 + res[i]);
        }
    }
    res[0].is_finite().then_some(res[0])
}

/// `R_eff(root, B(root, r)^c)` on a handle. Expands the ball of radius
/// `r + 1` so that every boundary edge exists.
pub fn reff_root_to_shell(h: &mut MsfHandle, r: u32) -> Result<f64> {
    h.ensure_ball(r + 1)?;
    let ids = h.ball_vertices(r)?;
    let mut local = std::collections::HashMap::with_capacity(ids.len());
    let mut parent = Vec::with_capacity(ids.len());
    let mut depth = Vec::with_capacity(ids.len());
    for (i, &v) in ids.iter().enumerate() {
        local.insert(v, i as u32);
        parent.push(h.parent(v).map_or(NO_PARENT, |p| local[&p]));
        depth.push(h.dist(v));
    }
    resistance(&parent, &depth, |i| h.child_count(ids[i]) as f64, r)
        .ok_or_else(|| Error::Invariant(format!("no boundary edge leaves the ball of radius {r}")))
}

/// The same recursion on a finite tree around `center`. `None` when nothing
/// lies beyond depth `r`.
pub fn reff_tree(tree: &SizedTree, center: VertexId, r: u32) -> Option<f64> {
    let lay = tree.bfs_from(center)?;
    let adj = tree.neighbors();
    resistance(&lay.parent, &lay.depth, |i| adj[lay.order[i] as usize].len() as f64 - 1.0 + (i == 0) as u8 as f64, r)
}

/// Effective resistance between `source` and the set `sink` (shorted into one
/// vertex) on an undirected graph with unit edges, by conjugate gradients on
/// the grounded Laplacian with Jacobi preconditioning. Infinite when no sink
/// vertex is reachable.
pub fn reff_laplacian(adj: &[Vec<VertexId>], source: VertexId, sink: &[bool]) -> f64 {
    let n = adj.len();
    if !reaches_sink(adj, source, sink) {
        return f64::INFINITY;
    }
    // Unknowns: every vertex except the source and the sink vertices.
    let mut slot = vec![u32::MAX; n];
    let mut free = Vec::new();
    for v in 0..n {
        if v != source as usize && !sink[v] {
            slot[v] = free.len() as u32;
            free.push(v);
        }
    }
    let m = free.len();
    let diag: Vec<f64> = free.iter().map(|&v| adj[v].len() as f64).collect();
    // Right-hand side: unit potential at the source.
    let mut b = vec![0.0; m];
    for (i, &v) in free.iter().enumerate() {
        b[i] = adj[v].iter().filter(|&&w| w == source).count() as f64;
    }
    let apply = |x: &[f64], y: &mut [f64]| {
        for (i, &v) in free.iter().enumerate() {
            let mut s = diag[i] * x[i];
            for &w in &adj[v] {
                let j = slot[w as usize];
                if j != u32::MAX {
                    s -= x[j as usize];
                }
            }
            y[i] = s;
        }
    };
    let mut x = vec![0.0; m];
    let mut res = b.clone();
    let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut z: Vec<f64> = res.iter().zip(&diag).map(|(r, d)| r / d).collect();
    let mut p = z.clone();
    let mut rz: f64 = res.iter().zip(&z).map(|(a, b)| a * b).sum();
    let mut ap = vec![0.0; m];
    if bnorm > 0.0 {
        for _ in 0..10 * m + 100 {
            apply(&p, &mut ap);
            let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
            if pap <= 0.0 {
                break;
            }
            let alpha = rz / pap;
            for i in 0..m {
                x[i] += alpha * p[i];
                res[i] -= alpha * ap[i];
            }
            if res.iter().map(|v| v * v).sum::<f64>().sqrt() <= 1e-12 * bnorm {
                break;
            }
            for i in 0..m {
                z[i] = res[i] / diag[i];
            }
            let rz_new: f64 = res.iter().zip(&z).map(|(a, b)| a * b).sum();
            for i in 0..m {
                p[i] = z[i] + rz_new / rz * p[i];
            }
            rz = rz_new;
        }
    }
    // Current leaving the source.
    let current: f64 = adj[source as usize]
        .iter()
        .map(|&w| if sink[w as usize] { 1.0 } else { 1.0 - x[slot[w as usize] as usize] })
        .sum();
    1.0 / current
}

fn reaches_sink(adj: &[Vec<VertexId>], source: VertexId, sink: &[bool]) -> bool {
    let mut seen = vec![false; adj.len()];
    let mut stack = vec![source];
    seen[source as usize] = true;
    while let Some(u) = stack.pop() {
        if sink[u as usize] {
            return true;
        }
        for &w in &adj[u as usize] {
            if !std::mem::replace(&mut seen[w as usize], true) {
                stack.push(w);
            }
        }
    }
    false
}

/// Laplacian oracle for `R_eff(center, B(center, r)^c)` on a finite tree.
pub fn reff_laplacian_oracle(tree: &SizedTree, center: VertexId, r: u32) -> f64 {
    let adj = tree.neighbors();
    let sink = far_from(&adj, center, r);
    reff_laplacian(&adj, center, &sink)
}

fn far_from(adj: &[Vec<VertexId>], center: VertexId, r: u32) -> Vec<bool> {
    let mut depth = vec![u32::MAX; adj.len()];
    depth[center as usize] = 0;
    let mut queue = std::collections::VecDeque::from([center]);
    while let Some(u) = queue.pop_front() {
        for &w in &adj[u as usize] {
            if depth[w as usize] == u32::MAX {
                depth[w as usize] = depth[u as usize] + 1;
                queue.push_back(w);
            }
        }
    }
    depth.iter().map(|&d| d != u32::MAX && d > r).collect()
}

/// Number of edges whose removal separates `source` from every sink vertex.
/// Each is a unit resistor in series, so this bounds the resistance below.
pub fn cut_edge_count(adj: &[Vec<VertexId>], source: VertexId, sink: &[bool]) -> u32 {
    let n = adj.len();
    let mut order = vec![source];
    let mut parent = vec![NO_PARENT; n];
    let mut seen = vec![false; n];
    seen[source as usize] = true;
    let mut head = 0;
    while head < order.len() {
        let u = order[head];
        for &w in &adj[u as usize] {
            if !seen[w as usize] {
                seen[w as usize] = true;
                parent[w as usize] = u;
                order.push(w);
            }
        }
        head += 1;
    }
    let mut below = vec![0u64; n];
    for &v in order.iter().rev() {
        below[v as usize] += sink[v as usize] as u64;
        if parent[v as usize] != NO_PARENT {
            below[parent[v as usize] as usize] += below[v as usize];
        }
    }
    let total = below[source as usize];
    if total == 0 {
        return 0;
    }
    order[1..].iter().filter(|&&v| below[v as usize] == total && !sink[parent[v as usize] as usize]).count() as u32
}

/// `R_eff(v, B(root, r)^c)` on a handle and the matching cut-edge count.
/// Needs `v` inside the ball of radius `r`.
pub fn reff_vertex_to_shell(h: &mut MsfHandle, v: VertexId, r: u32) -> Result<(f64, u32)> {
    h.ensure_ball(r + 1)?;
    if h.dist(v) > r {
        return Err(Error::Precondition(format!("vertex {v} lies outside the ball of radius {r}")));
    }
    let (tree, ids) = h.ball_tree(r + 1)?;
    let adj = tree.neighbors();
    let sink: Vec<bool> = ids.iter().map(|&u| h.dist(u) > r).collect();
    let src = ids.iter().position(|&u| u == v).expect("vertex is in the ball") as VertexId;
    Ok((reff_laplacian(&adj, src, &sink), cut_edge_count(&adj, src, &sink)))
}
