#![no_main]

use libfuzzer_sys::fuzz_target;
use moralcal::corpus::{parse_dilemmas, write_dilemmas, CorpusError, ParseOptions};

fuzz_target!(|data: &[u8]| {
    // Lenient mode collects bad lines; it only fails when nothing survives.
    let parsed = match parse_dilemmas(data, ParseOptions::default()) {
        Ok(parsed) => parsed,
        Err(CorpusError::NoValidRecords { .. }) => return,
        Err(e) => panic!("lenient parse failed: {e}"),
    };
    let mut out = Vec::new();
    write_dilemmas(&parsed.records, &mut out).unwrap();
    let again = parse_dilemmas(&out[..], ParseOptions { strict: true }).expect("written records reparse");
    assert_eq!(again.records, parsed.records);
});
