#![no_main]

use libfuzzer_sys::fuzz_target;
use moralcal::elicitation::{parse_predictions, write_predictions};

fuzz_target!(|data: &[u8]| {
    let Ok(parsed) = parse_predictions(data) else { return };
    let mut out = Vec::new();
    write_predictions(&mut out, &parsed).unwrap();
    assert_eq!(parse_predictions(&out[..]).expect("written predictions reparse"), parsed);
});
