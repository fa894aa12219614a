#![no_main]

use std::path::Path;

use libfuzzer_sys::fuzz_target;
use uwb_coop::engine::{Layout, PeriodMeasurements};
use uwb_coop::Scenario;

fuzz_target!(|data: &[u8]| {
    let layout = Layout::from_scenario(&Scenario::reference());
    if let Ok(raw) = uwb_coop::io::read_replay(data, &layout, Path::new("fuzz.csv")) {
        let mut buf = Vec::new();
        uwb_coop::io::write_replay(&mut buf, &raw).unwrap();
        let again = uwb_coop::io::read_replay(buf.as_slice(), &layout, Path::new("again.csv")).unwrap();
        assert_eq!(again.len(), raw.len());
        for r in &raw {
            let _ = PeriodMeasurements::from_raw(r, &layout.anchors);
        }
    }
});
