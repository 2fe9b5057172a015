#![no_main]

use libfuzzer_sys::fuzz_target;
use pwit_msf::msf::parse_edge_list;

fuzz_target!(|data: &[u8]| {
    let s = String::from_utf8_lossy(data);
    if let Ok(edges) = parse_edge_list(&s) {
        for e in edges {
            assert!(e.parent != e.child);
            assert!(e.weight.is_finite() && e.activation.is_finite());
        }
    }
});
