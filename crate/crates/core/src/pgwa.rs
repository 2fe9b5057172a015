//! Poisson Galton–Watson aggregation: the finite tree hanging below a vertex
//! of the invasion cluster, grown from its activation time.

use serde::{Deserialize, Serialize};

use crate::dist::{for_each_tail_atom, poisson};
use crate::error::{Error, Result};
use crate::invasion::DEFAULT_VERTEX_CAP;
use crate::kernel::dual_unchecked;
use crate::rng::RngStream;
use crate::tree::{SizedTree, VertexId};

/// A child edge produced by expanding one vertex.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChildSpec {
    pub weight: f64,
    pub activation: f64,
    /// Offspring mean of the block the child belongs to.
    pub block_mu: f64,
    /// True when the child roots a freshly attached block (one level deeper).
    pub new_level: bool,
}

/// Expands one vertex with activation `activation` that sits in a block of
/// offspring mean `block_mu` (zero for a vertex of the invasion cluster).
/// Children are emitted in ascending weight order: first the block offspring,
/// weighted uniformly below the activation, then one new block root per atom
/// of the tail process above the activation.
pub fn expand_children(
    activation: f64,
    block_mu: f64,
    aggregate: bool,
    rng: &mut RngStream,
    scratch: &mut Vec<f64>,
    mut emit: impl FnMut(ChildSpec),
) {
    scratch.clear();
    let k = poisson(rng, block_mu);
    for _ in 0..k {
        scratch.push(rng.uniform_open() * activation);
    }
    scratch.sort_unstable_by(f64::total_cmp);
    for &w in scratch.iter() {
        emit(ChildSpec { weight: w, activation, block_mu, new_level: false });
    }
    if aggregate {
        for_each_tail_atom(activation, rng, |tau| {
            emit(ChildSpec { weight: tau, activation: tau, block_mu: dual_unchecked(tau), new_level: true })
        });
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PgwaTree {
    pub lambda: f64,
    /// Breadth-first ordered; every parent precedes its children.
    pub tree: SizedTree,
    pub activation: Vec<f64>,
    pub level: Vec<u32>,
    pub depth: Vec<u32>,
    /// Weight of the edge into each vertex; 0 at the root.
    pub weight: Vec<f64>,
    pub censored: bool,
}

impl PgwaTree {
    pub fn size(&self) -> usize {
        self.tree.vertex_count
    }

    pub fn height(&self) -> u32 {
        self.depth.iter().copied().max().unwrap_or(0)
    }

    pub fn level_counts(&self) -> Vec<u64> {
        let mut counts = vec![0u64; self.level.iter().copied().max().unwrap_or(0) as usize + 1];
        for &l in &self.level {
            counts[l as usize] += 1;
        }
        counts
    }

    /// Recomputes activations as running maxima of edge weights along root
    /// paths and compares them bit for bit with the stored ones.
    pub fn activation_consistent(&self) -> bool {
        if self.activation.first() != Some(&self.lambda) {
            return false;
        }
        self.tree.edges.iter().all(|&(p, c)| {
            let expected = self.activation[p as usize].max(self.weight[c as usize]);
            self.activation[c as usize].to_bits() == expected.to_bits()
        })
    }

    /// Levels step by exactly one across attachment edges (those whose weight
    /// is at least the parent's activation) and are constant across block edges.
    pub fn levels_consistent(&self) -> bool {
        self.level[0] == 0
            && self.tree.edges.iter().all(|&(p, c)| {
                let attach = self.weight[c as usize] >= self.activation[p as usize];
                self.level[c as usize] == self.level[p as usize] + attach as u32
            })
    }
}

fn check_lambda(op: &'static str, lambda: f64) -> Result<()> {
    if !lambda.is_finite() || lambda <= 1.0 {
        return Err(Error::domain(op, format!("lambda must be > 1, got {lambda}")));
    }
    Ok(())
}

fn grow(lambda: f64, rng: &mut RngStream, depth_budget: Option<u32>, cap: usize, aggregate_all: bool) -> PgwaTree {
    let mut t = PgwaTree {
        lambda,
        tree: SizedTree::singleton(),
        activation: vec![lambda],
        level: vec![0],
        depth: vec![0],
        weight: vec![0.0],
        censored: false,
    };
    let mut block_mu = vec![0.0f64];
    let mut scratch = Vec::new();
    let mut next = 0usize;
    while next < t.activation.len() {
        let v = next;
        next += 1;
        if depth_budget.is_some_and(|b| t.depth[v] >= b) {
            continue;
        }
        let (a, mu, lev, d) = (t.activation[v], block_mu[v], t.level[v], t.depth[v]);
        let aggregate = aggregate_all || v == 0;
        expand_children(a, mu, aggregate, rng, &mut scratch, |c| {
            let id = t.activation.len() as VertexId;
            t.tree.edges.push((v as VertexId, id));
            t.activation.push(c.activation);
            t.level.push(lev + c.new_level as u32);
            t.depth.push(d + 1);
            t.weight.push(c.weight);
            block_mu.push(c.block_mu);
        });
        if t.activation.len() > cap {
            t.censored = true;
            break;
        }
    }
    t.tree.vertex_count = t.activation.len();
    t
}

/// One aggregation step: new blocks hang off the root at the tail atoms, but
/// the block vertices are not aggregated further.
pub fn one_step_aggregate(lambda: f64, rng: &mut RngStream, depth_budget: u32) -> Result<PgwaTree> {
    check_lambda("one_step_aggregate", lambda)?;
    Ok(grow(lambda, rng, Some(depth_budget), DEFAULT_VERTEX_CAP, false))
}

/// The full aggregation tree grown from activation `lambda`. Vertices at
/// distance `depth_budget` are created but not expanded.
pub fn sample_pgwa(lambda: f64, rng: &mut RngStream, depth_budget: Option<u32>) -> Result<PgwaTree> {
    sample_pgwa_capped(lambda, rng, depth_budget, DEFAULT_VERTEX_CAP)
}

/// As [`sample_pgwa`], stopping (and flagging the tree censored) once it
/// exceeds `cap` vertices.
pub fn sample_pgwa_capped(lambda: f64, rng: &mut RngStream, depth_budget: Option<u32>, cap: usize) -> Result<PgwaTree> {
    check_lambda("sample_pgwa", lambda)?;
    Ok(grow(lambda, rng, depth_budget, cap, true))
}

pub fn height(tree: &PgwaTree) -> u32 {
    tree.height()
}

/// Size statistics of one aggregation tree, computed without storing it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PgwaSummary {
    pub size: u64,
    pub height: u32,
    pub level_counts: Vec<u64>,
    pub censored: bool,
}

/// Same law as the size, height and level counts of [`sample_pgwa`], grown
/// depth first with a stack of pending vertices.
pub fn sample_pgwa_summary(lambda: f64, rng: &mut RngStream, cap: u64) -> Result<PgwaSummary> {
    check_lambda("sample_pgwa_summary", lambda)?;
    let mut s = PgwaSummary { size: 1, height: 0, level_counts: vec![1], censored: false };
    let mut stack: Vec<(f64, f64, u32, u32)> = vec![(lambda, 0.0, 0, 0)];
    let mut scratch = Vec::new();
    while let Some((a, mu, lev, d)) = stack.pop() {
        expand_children(a, mu, true, rng, &mut scratch, |c| {
            let l = lev + c.new_level as u32;
            stack.push((c.activation, c.block_mu, l, d + 1));
            s.size += 1;
            s.height = s.height.max(d + 1);
            if s.level_counts.len() <= l as usize {
                s.level_counts.resize(l as usize + 1, 0);
            }
            s.level_counts[l as usize] += 1;
        });
        if s.size > cap {
            s.censored = true;
            break;
        }
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::tail_mass;

    #[test]
    fn rejects_subcritical_activation() {
        let mut rng = RngStream::new(1, 0);
        assert!(sample_pgwa(1.0, &mut rng, None).is_err());
        assert!(one_step_aggregate(0.5, &mut rng, 3).is_err());
        assert!(sample_pgwa_summary(f64::NAN, &mut rng, 10).is_err());
    }

    #[test]
    fn structure_holds_on_every_draw() {
        let mut rng = RngStream::new(2, 0);
        for i in 0..3000 {
            let lambda = 1.1 + (i % 20) as f64 * 0.1;
            let t = sample_pgwa(lambda, &mut rng, None).unwrap();
            assert!(t.tree.is_valid());
            assert!(t.activation_consistent());
            assert!(t.levels_consistent());
            for &(p, c) in &t.tree.edges {
                let (w, ap, ac) = (t.weight[c as usize], t.activation[p as usize], t.activation[c as usize]);
                if t.level[c as usize] > t.level[p as usize] {
                    assert_eq!(w, ac);
                    assert!(w >= ap);
                } else {
                    assert!(w < ac && ac == ap);
                }
            }
        }
    }

    #[test]
    fn one_step_never_aggregates_twice() {
        let mut rng = RngStream::new(3, 0);
        for _ in 0..2000 {
            let t = one_step_aggregate(1.3, &mut rng, u32::MAX).unwrap();
            assert!(t.level.iter().all(|&l| l <= 1));
            assert!(t.activation_consistent());
        }
    }

    #[test]
    fn depth_budget_truncates_exactly() {
        let mut a = RngStream::new(4, 0);
        let t = sample_pgwa(1.2, &mut a, Some(0)).unwrap();
        assert_eq!(t.size(), 1);
        for _ in 0..500 {
            let t = sample_pgwa(1.2, &mut a, Some(3)).unwrap();
            assert!(t.height() <= 3);
        }
    }

    #[test]
    fn root_child_count_is_poisson_tail_mass() {
        let mut rng = RngStream::new(5, 0);
        let n = 200_000;
        let lam = 1.5;
        let xs: Vec<f64> = (0..n)
            .map(|_| one_step_aggregate(lam, &mut rng, 1).unwrap().size() as f64 - 1.0)
            .collect();
        let m = xs.iter().sum::<f64>() / n as f64;
        let target = tail_mass(lam).unwrap();
        assert!((m - target).abs() < 3.0 * (target / n as f64).sqrt(), "{m} vs {target}");
    }

    #[test]
    fn censoring_stops_growth() {
        let mut rng = RngStream::new(6, 0);
        let mut hit = false;
        for _ in 0..2000 {
            let t = sample_pgwa_capped(1.05, &mut rng, None, 5).unwrap();
            assert!(t.size() <= 5 + 64);
            hit |= t.censored;
        }
        assert!(hit);
    }
}
