#![no_main]

use libfuzzer_sys::fuzz_target;
use mzinb::prep::Schema;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(schema) = Schema::parse(text) {
            let again = Schema::parse(&schema.to_text()).expect("rendered schema reparses");
            assert_eq!(schema.to_text(), again.to_text());
        }
    }
});
