#![no_main]

use libfuzzer_sys::fuzz_target;
use pwit_msf::experiments::parse_grid;

fuzz_target!(|data: &[u8]| {
    let s = String::from_utf8_lossy(data);
    if let Ok(g) = parse_grid(&s) {
        assert!(g.len() >= 2);
        assert!(g.iter().all(|x| x.is_finite()));
        assert!(g.windows(2).all(|w| w[0] <= w[1]));
    }
});
