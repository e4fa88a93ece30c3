#![no_main]

use libfuzzer_sys::fuzz_target;
use moralcal::report::RunConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(config) = RunConfig::from_json(text) {
        let _ = config.validate();
        for pair in &config.models {
            let _ = config.endpoint_for(&pair.original);
        }
    }
});
