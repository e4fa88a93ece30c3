#![no_main]

use libfuzzer_sys::fuzz_target;
use moralcal::elicitation::CacheEntry;

fuzz_target!(|data: &[u8]| {
    let _ = CacheEntry::from_json(data);
});
