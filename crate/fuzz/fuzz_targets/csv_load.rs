#![no_main]

use libfuzzer_sys::fuzz_target;
use mzinb::prep::{self, Schema};

const SCHEMA: &str = "y response\nx1 covariate\nx2 covariate keep-scale\ng factor\n";

fuzz_target!(|data: &[u8]| {
    let schema = Schema::parse(SCHEMA).expect("fixed schema parses");
    if let Ok(loaded) = prep::load_csv_reader(data, &schema) {
        loaded.data.validate().expect("loaded data is valid");
    }
});
