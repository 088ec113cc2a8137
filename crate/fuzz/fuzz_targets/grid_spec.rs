#![no_main]

use libfuzzer_sys::fuzz_target;
use smallphase::criteria::FrequencyGrid;

fuzz_target!(|data: &[u8]| {
    let Ok(spec) = std::str::from_utf8(data) else { return };
    if let Ok(g) = FrequencyGrid::parse(spec) {
        assert!(g.points.windows(2).all(|w| w[0] < w[1]));
        assert!(g.points.iter().all(|f| *f >= 0.0));
    }
});
