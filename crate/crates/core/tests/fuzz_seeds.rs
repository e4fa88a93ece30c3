//! Replays the checked-in fuzz seeds so stable builds exercise the same
//! entry points as the fuzz targets.

use std::path::{Path, PathBuf};

use moralcal::corpus::{parse_anecdotes, parse_dilemmas, write_dilemmas, ParseOptions};
use moralcal::elicitation::{decode_response, parse_predictions, write_predictions, ApiKind, CacheEntry, PromptTemplate};
use moralcal::report::{parse_rows_csv, parse_scores, render_report, ReportFormat, RunConfig};

fn seeds(target: &str) -> Vec<(PathBuf, Vec<u8>)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fuzz/corpus").join(target);
    let mut out: Vec<_> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .map(|p| {
            let bytes = std::fs::read(&p).unwrap();
            (p, bytes)
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

#[test]
fn corpus_seeds() {
    let mut accepted = 0;
    for (_, data) in seeds("parse_dilemmas") {
        if let Ok(parsed) = parse_dilemmas(&data[..], ParseOptions::default()) {
            let mut out = Vec::new();
            write_dilemmas(&parsed.records, &mut out).unwrap();
            assert_eq!(parse_dilemmas(&out[..], ParseOptions { strict: true }).unwrap().records, parsed.records);
            accepted += 1;
        }
    }
    for (_, data) in seeds("parse_anecdotes") {
        accepted += usize::from(parse_anecdotes(&data[..], ParseOptions::default()).is_ok());
    }
    assert!(accepted >= 4);
}

#[test]
fn response_seeds() {
    let decoded: Vec<bool> = seeds("decode_response")
        .iter()
        .map(|(_, d)| decode_response(ApiKind::Completions, d).is_ok() || decode_response(ApiKind::Chat, d).is_ok())
        .collect();
    assert!(decoded.iter().any(|&ok| ok) && decoded.iter().any(|&ok| !ok));
}

#[test]
fn cache_and_config_seeds() {
    for (path, data) in seeds("cache_entry") {
        let wrong = path.file_name().unwrap().to_string_lossy().starts_with("wrong");
        assert_eq!(CacheEntry::from_json(&data).is_err(), wrong, "{}", path.display());
    }
    for (path, data) in seeds("run_config") {
        let text = String::from_utf8(data).unwrap();
        let fixture = path.file_name().unwrap() == "fixture.json";
        assert_eq!(RunConfig::from_json(&text).is_ok(), fixture, "{}", path.display());
    }
    for (path, data) in seeds("prompt_template") {
        let text = String::from_utf8(data).unwrap();
        let overlap = path.file_name().unwrap() == "overlap.json";
        assert_eq!(PromptTemplate::from_json(&text).is_err(), overlap, "{}", path.display());
    }
}

#[test]
fn file_format_seeds() {
    for (path, data) in seeds("predictions") {
        match parse_predictions(&data[..]) {
            Ok(parsed) => {
                let mut out = Vec::new();
                write_predictions(&mut out, &parsed).unwrap();
                assert_eq!(parse_predictions(&out[..]).unwrap(), parsed);
            }
            Err(_) => assert!(path.ends_with("bad_sum.jsonl")),
        }
    }
    for (path, data) in seeds("scores") {
        assert_eq!(parse_scores(&data[..]).is_err(), path.ends_with("bad.jsonl"), "{}", path.display());
    }
    for (path, data) in seeds("rows_csv") {
        match parse_rows_csv(&data[..]) {
            Ok(rows) => assert!(render_report(&rows, ReportFormat::Text, "seed").is_ok(), "{}", path.display()),
            Err(_) => assert!(path.ends_with("zero_original.csv")),
        }
    }
}
