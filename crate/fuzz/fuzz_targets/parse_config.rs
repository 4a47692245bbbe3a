#![no_main]

use libfuzzer_sys::fuzz_target;
use meritfed_cli::config::{emit, parse_config};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = parse_config(text) {
        // Anything accepted must survive an emit/parse round trip.
        let again = parse_config(&emit(&cfg)).expect("emitted config parses");
        assert_eq!(again, cfg);
    }
});
