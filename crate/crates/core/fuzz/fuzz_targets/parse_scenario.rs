#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(config) = ccsim::parse_scenario(text, "fuzz") {
            // A valid scenario renders back to text that parses to the same config.
            let rendered = ccsim::scenario::scenario_to_string(&config).expect("render");
            let again = ccsim::parse_scenario(&rendered, "fuzz").expect("re-parse");
            assert_eq!(config, again);
        }
    }
});
