use std::path::{Path, PathBuf};

use moralcal::elicitation::mock::{MockEndpoint, MockSpec};
use moralcal::elicitation::ApiKind;
use moralcal::report::{run, RunConfig, RunOptions, RunStatus};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn mock() -> MockEndpoint {
    let spec = std::fs::read_to_string(fixtures().join("mock_dilemmas.json")).unwrap();
    MockEndpoint::start(MockSpec::from_json(&spec).unwrap()).unwrap()
}

fn config_for(endpoint: &MockEndpoint) -> RunConfig {
    let mut config = RunConfig::load(&fixtures().join("run_dilemmas.json")).unwrap();
    config.endpoint.base_url = endpoint.base_url().to_string();
    config
}

fn options(out: &Path, cache: &Path) -> RunOptions {
    RunOptions {
        out_dir: Some(out.to_path_buf()),
        cache_dir: Some(cache.to_path_buf()),
        api_key: Some("test-key".into()),
        ..RunOptions::default()
    }
}

#[test]
fn golden_report_and_warm_cache_rerun() {
    let endpoint = mock();
    let config = config_for(&endpoint);
    let work = tempfile::tempdir().unwrap();
    let cache = work.path().join("cache");

    let first = run(&config, &options(&work.path().join("cold"), &cache)).unwrap();
    let cold_requests = endpoint.request_count();
    assert_eq!(cold_requests, 40);
    assert!(endpoint.requests().iter().all(|r| r.authorization.as_deref() == Some("Bearer test-key")));

    let golden_path = fixtures().join("golden/report.txt");
    if std::env::var_os("MORALCAL_UPDATE_GOLDEN").is_some() {
        std::fs::write(&golden_path, &first.report_text).unwrap();
    }
    let golden = std::fs::read_to_string(&golden_path).unwrap();
    assert_eq!(first.report_text, golden);

    let second = run(&config, &options(&work.path().join("warm"), &cache)).unwrap();
    assert_eq!(endpoint.request_count(), cold_requests, "warm rerun must not hit the endpoint");
    assert!(second.manifest.models.iter().all(|m| m.live_requests == 0 && m.cached == 10));
    for file in ["report.txt", "report.csv", "report.json", "scores.jsonl"] {
        let a = std::fs::read(work.path().join("cold").join(file)).unwrap();
        let b = std::fs::read(work.path().join("warm").join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between cold and warm runs");
    }
    assert_eq!(first.manifest.digest(), second.manifest.digest());
}

#[test]
fn manifest_counts_balance_and_exclusions_are_recorded() {
    let endpoint = mock();
    let config = config_for(&endpoint);
    let work = tempfile::tempdir().unwrap();
    let out = run(&config, &options(work.path(), &work.path().join("cache"))).unwrap();
    let m = &out.manifest;
    assert_eq!(m.status, RunStatus::Complete);
    assert_eq!(m.total_records, 10);
    assert!(m.counts_balance());
    let mistral = m.models.iter().find(|r| r.model_name == "mistral-7b").unwrap();
    assert_eq!((mistral.scored, mistral.excluded), (9, 1));

    let scores = std::fs::read_to_string(work.path().join("scores.jsonl")).unwrap();
    assert_eq!(scores.lines().count(), 40);
    assert!(scores.lines().any(|l| l.contains("\"status\":\"excluded\"") && l.contains("dlm-05")));
    let on_disk: moralcal::report::RunManifest =
        serde_json::from_str(&std::fs::read_to_string(work.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(&on_disk, m);
}

#[test]
fn unreachable_endpoint_fails_with_partial_manifest() {
    let endpoint = mock();
    let mut config = config_for(&endpoint);
    drop(endpoint);
    // Nothing listens on the discard port.
    config.endpoint.base_url = "http://127.0.0.1:9".into();
    let work = tempfile::tempdir().unwrap();
    let failure = run(&config, &options(work.path(), &work.path().join("cache"))).unwrap_err();
    let manifest = failure.manifest.expect("manifest is recorded");
    assert_eq!(manifest.status, RunStatus::Failed);
    assert!(manifest.models.iter().all(|m| m.scored == 0));
    assert!(manifest.counts_balance());
    assert!(failure.error.to_string().contains("127.0.0.1:9"), "{}", failure.error);
    let on_disk = std::fs::read_to_string(work.path().join("manifest.json")).unwrap();
    assert!(on_disk.contains("\"status\": \"failed\""));
    assert!(!work.path().join("report.txt").exists());
}

#[test]
fn chat_api_gives_the_same_numbers() {
    let endpoint = mock();
    let completions = config_for(&endpoint);
    let mut chat = completions.clone();
    chat.endpoint.api = ApiKind::Chat;
    let work = tempfile::tempdir().unwrap();
    let a = run(&completions, &options(&work.path().join("a"), &work.path().join("ca"))).unwrap();
    let b = run(&chat, &options(&work.path().join("b"), &work.path().join("cb"))).unwrap();
    assert_eq!(a.rows, b.rows);
    assert!(endpoint.requests().iter().any(|r| r.path == "/v1/chat/completions"));
}

#[test]
fn transient_failures_are_retried() {
    let spec = MockSpec::from_json(
        r#"{"default": {"top_logprobs": {" Yes": -0.2231435513142097, " No": -1.6094379124341003}, "fail_first": [503, 429]}}"#,
    )
    .unwrap();
    let endpoint = MockEndpoint::start(spec).unwrap();
    let mut config = config_for(&endpoint);
    config.endpoint.max_retries = 3;
    config.concurrency = 1;
    let work = tempfile::tempdir().unwrap();
    let out = run(&config, &options(work.path(), &work.path().join("cache"))).unwrap();
    assert_eq!(endpoint.request_count(), 42);
    assert!(out.manifest.models.iter().all(|m| m.scored == 10));
}
