use proptest::prelude::*;

use pwit_msf::dist::{decode_pruefer, sample_uniform_labelled_tree};
use pwit_msf::experiments::{parse_grid, ExperimentConfig, ExperimentKind};
use pwit_msf::invasion::{invade_pwit, next_pond, next_pond_capped, PondChainState};
use pwit_msf::msf::MsfHandle;
use pwit_msf::mst::{canonical_ball, kruskal_mst, prim_mst, WeightedGraph};
use pwit_msf::resistance::reff_root_to_shell;
use pwit_msf::walk::return_prob_exact_series;
use pwit_msf::{kernel, pgwa, RngStream, SizedTree};

fn connected_acyclic(m: usize, edges: &[(u32, u32)]) -> bool {
    let mut p: Vec<usize> = (0..m).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for &(a, b) in edges {
        let (ra, rb) = (find(&mut p, a as usize), find(&mut p, b as usize));
        if ra == rb {
            return false;
        }
        p[ra] = rb;
    }
    edges.len() + 1 == m
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn survival_equation_holds(ln in (1e-4f64).ln()..(49.0f64).ln()) {
        let l = 1.0 + ln.exp();
        let t = kernel::theta(l).unwrap();
        prop_assert!(t > 0.0 && t < 1.0);
        prop_assert!(kernel::survival_residual(l, t).abs() <= 1e-12);
    }

    #[test]
    fn theta_is_concave(a in 1.01f64..40.0, h in 1e-3f64..0.5) {
        let t = |x: f64| kernel::theta(x).unwrap();
        prop_assert!(t(a) - 2.0 * t(a + h) + t(a + 2.0 * h) <= 1e-8);
    }

    #[test]
    fn duality_pairs(s in 1.0001f64..50.0) {
        let p = kernel::dual_pair(s).unwrap();
        prop_assert!(p.s_star <= 1.0);
        prop_assert!((p.s_star - s * (1.0 - kernel::theta(s).unwrap())).abs() <= 1e-12 * s);
        prop_assert!((s * (-s).exp() - p.s_star * (-p.s_star).exp()).abs() <= 1e-12);
    }

    #[test]
    fn theta_inverse_round_trips(l in 1.01f64..30.0) {
        let back = kernel::theta_inv(kernel::theta(l).unwrap()).unwrap();
        // A few ulps of θ move λ by that much over θ'.
        let cond = 4.0 * f64::EPSILON / kernel::theta_prime(l).unwrap();
        prop_assert!((back - l).abs() <= 1e-9 * l + cond);
    }

    #[test]
    fn streams_replay(seed: u64, id: u64) {
        let (mut a, mut b) = (RngStream::new(seed, id), RngStream::new(seed, id));
        for _ in 0..32 {
            prop_assert_eq!(a.uniform().to_bits(), b.uniform().to_bits());
        }
    }

    #[test]
    fn pruefer_decodes_to_trees(seq in prop::collection::vec(0u32..40, 0..38)) {
        let m = seq.len() + 2;
        let seq: Vec<u32> = seq.into_iter().map(|x| x % m as u32).collect();
        let edges = decode_pruefer(m, &seq).unwrap();
        prop_assert!(connected_acyclic(m, &edges));
    }

    #[test]
    fn labelled_trees_are_trees(m in 1usize..200, seed: u64) {
        let t = sample_uniform_labelled_tree(m, &mut RngStream::new(seed, 0)).unwrap();
        prop_assert!(t.is_valid());
        prop_assert_eq!(t.edges.len() + 1, m);
    }

    #[test]
    fn pond_chain_decreases(seed: u64) {
        let mut rng = RngStream::new(seed, 1);
        let mut state = PondChainState::initial(&mut rng);
        for _ in 0..4 {
            // Ponds near criticality can be astronomically large; stop there.
            let Ok((pond, next)) = next_pond_capped(state, &mut rng, 1_000_000) else { break };
            prop_assert!(next.outlet_weight < state.outlet_weight && next.outlet_weight > 1.0);
            prop_assert!(pond.edge_weights.iter().all(|&w| w < pond.outlet_weight));
            prop_assert!((pond.entry as usize) < pond.size() && (pond.exit as usize) < pond.size());
            state = next;
        }
    }

    #[test]
    fn corrupted_chain_state_rejected(x in -5.0f64..=1.0) {
        let s = PondChainState { index: 1, outlet_weight: x, entry_depth: 0 };
        prop_assert!(next_pond(s, &mut RngStream::new(0, 0)).is_err());
    }

    #[test]
    fn invasion_running_max_monotone(seed: u64) {
        let t = invade_pwit(500, &mut RngStream::new(seed, 2)).unwrap();
        let s = t.running_max_series();
        prop_assert!(s.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(*s.last().unwrap(), t.running_max);
    }

    #[test]
    fn pgwa_activations_consistent(l in 1.2f64..4.0, seed: u64) {
        let t = pgwa::sample_pgwa_capped(l, &mut RngStream::new(seed, 3), Some(12), 200_000).unwrap();
        prop_assert!(t.activation_consistent());
        prop_assert!(t.levels_consistent());
        prop_assert!(t.tree.is_valid());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn ball_growth_is_incremental(seed: u64, r in 1u32..24) {
        let mut a = MsfHandle::new(seed, 5_000_000).unwrap();
        let mut b = MsfHandle::new(seed, 5_000_000).unwrap();
        a.ensure_ball(r).unwrap();
        a.ensure_ball(r + 1).unwrap();
        b.ensure_ball(r + 1).unwrap();
        let pa = a.volume_profile(r + 1).unwrap();
        prop_assert_eq!(&pa, &b.volume_profile(r + 1).unwrap());
        prop_assert!(pa.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(a.check_invariants().is_ok());
    }

    #[test]
    fn return_probabilities_decrease(seed: u64) {
        let mut h = MsfHandle::new(seed, 5_000_000).unwrap();
        let ns: Vec<u64> = (1..=40).collect();
        let est = return_prob_exact_series(&mut h, &ns, 0.0).unwrap();
        prop_assert!(est.iter().all(|e| (0.0..=1.0).contains(&e.p2n)));
        prop_assert!(est.windows(2).all(|w| w[1].p2n <= w[0].p2n + 1e-15));
    }

    #[test]
    fn resistance_bounded_and_monotone(seed: u64) {
        let mut h = MsfHandle::new(seed, 5_000_000).unwrap();
        let mut prev = 0.0;
        for r in 1..=24 {
            let v = reff_root_to_shell(&mut h, r).unwrap();
            prop_assert!(v >= prev - 1e-12 && v <= r as f64 + 1.0);
            prev = v;
        }
    }

    #[test]
    fn mst_algorithms_agree(n in 2usize..40, seed: u64, c in 0.1f64..10.0) {
        let mut rng = RngStream::new(seed, 4);
        let g = WeightedGraph::complete(n, 1.0, &mut rng).unwrap();
        let k = kruskal_mst(&g).unwrap();
        prop_assert_eq!(&k, &prim_mst(&g).unwrap());
        let pairs = |e: &[(u32, u32, f64)]| e.iter().map(|&(a, b, _)| (a, b)).collect::<Vec<_>>();
        prop_assert_eq!(pairs(&k), pairs(&kruskal_mst(&g.scaled(c).unwrap()).unwrap()));
    }

    #[test]
    fn ball_codes_ignore_labels(m in 1usize..60, seed: u64, r in 0u32..6) {
        let mut rng = RngStream::new(seed, 5);
        let t = sample_uniform_labelled_tree(m, &mut rng).unwrap();
        // Relabel by a random permutation keeping the root.
        let mut perm: Vec<u32> = (0..m as u32).collect();
        for i in (2..m).rev() {
            let j = 1 + rng.below(i as u64) as usize;
            perm.swap(i, j);
        }
        let edges: Vec<(u32, u32)> = t.edges.iter().map(|&(a, b)| (perm[a as usize], perm[b as usize])).collect();
        let u = SizedTree::from_undirected(m, &edges, 0);
        prop_assert_eq!(canonical_ball(&t, 0, r), canonical_ball(&u, 0, r));
    }

    #[test]
    fn configs_round_trip(seed: u64, reps in 1usize..500, lo in 1u32..6, k in 3u32..6) {
        let mut c = ExperimentConfig::new(ExperimentKind::Volume);
        c.seed = seed;
        c.replicates = reps;
        c.scales = (lo..lo + k).map(|i| 1u64 << i).collect();
        let back = ExperimentConfig::from_json(&c.to_json()).unwrap();
        prop_assert_eq!(c, back);
    }

    #[test]
    fn grids_have_requested_length(a in -10.0f64..10.0, w in 1e-3f64..10.0, n in 2usize..500) {
        let g = parse_grid(&format!("{a}:{}:{n}", a + w)).unwrap();
        prop_assert_eq!(g.len(), n);
        prop_assert!(g.windows(2).all(|p| p[0] < p[1]));
    }
}
