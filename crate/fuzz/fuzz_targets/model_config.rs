#![no_main]

use libfuzzer_sys::fuzz_target;
use mzinb::io;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(spec) = io::parse_model_spec(text) {
            let rendered = io::model_spec_to_toml(&spec).expect("spec renders");
            assert_eq!(io::parse_model_spec(&rendered).expect("rendered spec reparses"), spec);
        }
    }
});
