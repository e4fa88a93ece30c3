#![no_main]

use libfuzzer_sys::fuzz_target;
use moralcal::report::parse_scores;

fuzz_target!(|data: &[u8]| {
    let _ = parse_scores(data);
});
