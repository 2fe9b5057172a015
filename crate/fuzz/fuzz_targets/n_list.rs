#![no_main]

use libfuzzer_sys::fuzz_target;
use pwit_msf::experiments::parse_n_list;

fuzz_target!(|data: &[u8]| {
    let s = String::from_utf8_lossy(data);
    if let Ok(ns) = parse_n_list(&s) {
        assert!(!ns.is_empty() && ns.iter().all(|&n| n > 0));
    }
});
