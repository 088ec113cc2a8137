#![no_main]

use libfuzzer_sys::fuzz_target;
use smallphase::scenario::ScenarioConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = ScenarioConfig::parse(text) {
        for k in 0..cfg.converters.len() {
            let _ = cfg.parameters(k);
        }
        // inline networks only; CSV paths resolve against an empty base
        if cfg.network.buses.is_none() && cfg.network.branches.is_none() && cfg.network.inline_buses.len() <= 8 {
            let _ = cfg.build(std::path::Path::new("/nonexistent"));
        }
    }
});
