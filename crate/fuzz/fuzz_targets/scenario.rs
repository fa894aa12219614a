#![no_main]

use std::path::Path;

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(s) = uwb_coop::io::parse_scenario_str(text, Path::new("fuzz.json")) {
            // Anything that validates must survive a serialize/parse round trip.
            let again = serde_json::to_string(&s).unwrap();
            uwb_coop::io::parse_scenario_str(&again, Path::new("again.json")).unwrap();
        }
    }
});
