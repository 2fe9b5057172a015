#![no_main]

use libfuzzer_sys::fuzz_target;
use pwit_msf::experiments::ExperimentConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    if let Ok(c) = ExperimentConfig::from_json(s) {
        // Anything accepted must survive a round trip unchanged.
        let back = ExperimentConfig::from_json(&c.to_json()).expect("accepted config re-parses");
        assert_eq!(c, back);
    }
});
