#![no_main]

use libfuzzer_sys::fuzz_target;
use stc_cli::ExperimentConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(config) = ExperimentConfig::from_json_str(text) {
        let back =
            ExperimentConfig::from_json_str(&config.to_json_string()).expect("round trip parses");
        assert_eq!(config, back);
    }
});
