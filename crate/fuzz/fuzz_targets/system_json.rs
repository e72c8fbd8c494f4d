#![no_main]

use libfuzzer_sys::fuzz_target;
use stc_core::plant::LtiSystem;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    // Arbitrary documents must be rejected cleanly; accepted ones must
    // survive a serialize/parse round trip unchanged.
    if let Ok(sys) = LtiSystem::from_json_str(text) {
        let back = LtiSystem::from_json_str(&sys.to_json_string()).expect("round trip parses");
        assert_eq!(sys, back);
    }
});
