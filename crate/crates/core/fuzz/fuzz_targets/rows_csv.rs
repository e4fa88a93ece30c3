#![no_main]

use libfuzzer_sys::fuzz_target;
use moralcal::report::{parse_rows_csv, render_report, ReportFormat};

fuzz_target!(|data: &[u8]| {
    let Ok(rows) = parse_rows_csv(data) else { return };
    for format in [ReportFormat::Text, ReportFormat::Csv, ReportFormat::Json] {
        let _ = render_report(&rows, format, "fuzz");
    }
});
