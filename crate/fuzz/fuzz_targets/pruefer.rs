#![no_main]

use libfuzzer_sys::fuzz_target;
use pwit_msf::dist::decode_pruefer;

// First byte picks the vertex count, the rest are labels (taken unreduced,
// so out-of-range labels are exercised too).
fuzz_target!(|data: &[u8]| {
    let Some((&m, rest)) = data.split_first() else { return };
    let m = m as usize;
    let seq: Vec<u32> = rest.iter().map(|&b| b as u32).collect();
    if let Ok(edges) = decode_pruefer(m, &seq) {
        assert_eq!(edges.len(), m - 1);
        // The edges must form a spanning tree: union-find sees no cycle.
        let mut parent: Vec<usize> = (0..m).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for (a, b) in edges {
            let (ra, rb) = (find(&mut parent, a as usize), find(&mut parent, b as usize));
            assert_ne!(ra, rb);
            parent[ra] = rb;
        }
    }
});
