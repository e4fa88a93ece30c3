use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::cache::{CacheEntry, CacheKey, CachedChoice, PredictionCache};
use super::extract::{extract_choice_probabilities, ChoiceVariants, ExtractedChoice};
use super::wire::{decode_response, request_body, EndpointConfig};
use super::{ChoicePrediction, ChoiceSet, ElicitError, Provenance};

/// Environment variable holding the bearer token.
pub const API_KEY_ENV: &str = "MORALCAL_API_KEY";

const MAX_BACKOFF: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpReply {
    pub status: u16,
    pub body: Vec<u8>,
}

/// Blocking JSON POST. `Err` means no HTTP response was received.
pub trait Transport: Send + Sync {
    fn post_json(&self, url: &str, body: &[u8], bearer: Option<&str>) -> Result<HttpReply, String>;
}

pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { agent }
    }
}

impl Transport for UreqTransport {
    fn post_json(&self, url: &str, body: &[u8], bearer: Option<&str>) -> Result<HttpReply, String> {
        let mut request = self.agent.post(url).header("Content-Type", "application/json");
        if let Some(token) = bearer {
            request = request.header("Authorization", &format!("Bearer {token}"));
        }
        let mut response = request.send(body).map_err(|e| e.to_string())?;
        let status = response.status().as_u16();
        let body = response.body_mut().read_to_vec().map_err(|e| e.to_string())?;
        Ok(HttpReply { status, body })
    }
}

/// A prediction plus how many retries it took.
#[derive(Debug, Clone, PartialEq)]
pub struct Elicited {
    pub prediction: ChoicePrediction,
    pub retries: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ElicitJob {
    pub instance_id: String,
    pub prompt: String,
}

/// Issues completion requests against one endpoint, consulting the cache
/// first.
pub struct Elicitor {
    config: EndpointConfig,
    transport: Arc<dyn Transport>,
    cache: Option<Arc<PredictionCache>>,
    api_key: Option<String>,
    coverage_threshold: f64,
    rng: Mutex<ChaCha8Rng>,
    live_requests: AtomicU64,
    retries: AtomicU64,
    cache_hits: AtomicU64,
}

impl std::fmt::Debug for Elicitor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Elicitor")
            .field("config", &self.config)
            .field("cache", &self.cache.as_ref().map(|c| c.root().to_path_buf()))
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .field("coverage_threshold", &self.coverage_threshold)
            .finish()
    }
}

impl Elicitor {
    pub fn new(config: EndpointConfig, transport: Arc<dyn Transport>) -> Result<Self, ElicitError> {
        config.validate()?;
        Ok(Self {
            config,
            transport,
            cache: None,
            api_key: None,
            coverage_threshold: super::DEFAULT_COVERAGE_THRESHOLD,
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(0)),
            live_requests: AtomicU64::new(0),
            retries: AtomicU64::new(0),
            cache_hits: AtomicU64::new(0),
        })
    }

    /// Elicitor over HTTP with the bearer token from [`API_KEY_ENV`], if set.
    pub fn http(config: EndpointConfig) -> Result<Self, ElicitError> {
        let transport = Arc::new(UreqTransport::new(config.timeout()));
        let key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        Ok(Self::new(config, transport)?.with_api_key(key))
    }

    pub fn with_cache(mut self, cache: Arc<PredictionCache>) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }

    pub fn with_coverage_threshold(mut self, threshold: f64) -> Self {
        self.coverage_threshold = threshold;
        self
    }

    /// Seeds the backoff jitter.
    pub fn with_seed(self, seed: u64) -> Self {
        *self.rng.lock().unwrap_or_else(|p| p.into_inner()) = ChaCha8Rng::seed_from_u64(seed);
        self
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.config
    }

    pub fn live_requests(&self) -> u64 {
        self.live_requests.load(Ordering::Relaxed)
    }

    /// Prompts answered from the cache, including cached exclusions.
    pub fn cache_hits(&self) -> u64 {
        self.cache_hits.load(Ordering::Relaxed)
    }

    pub fn total_retries(&self) -> u64 {
        self.retries.load(Ordering::Relaxed)
    }

    pub fn cache_key(&self, prompt: &str, choices: &ChoiceSet) -> CacheKey {
        CacheKey::new(&self.config.model_name, self.config.api, prompt, choices, self.config.top_logprobs)
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let base = Duration::from_millis(self.config.backoff_base_ms);
        let exp = base.saturating_mul(1u32 << attempt.min(16));
        let jitter: f64 = self.rng.lock().unwrap_or_else(|p| p.into_inner()).random();
        exp.mul_f64(1.0 + jitter).min(MAX_BACKOFF)
    }

    fn fetch(&self, body: &[u8]) -> Result<(Vec<(String, f64)>, u32), ElicitError> {
        let url = self.config.url();
        let mut attempt = 0u32;
        loop {
            self.live_requests.fetch_add(1, Ordering::Relaxed);
            let outcome = self.transport.post_json(&url, body, self.api_key.as_deref());
            let retryable = match &outcome {
                Ok(reply) if reply.status == 200 => {
                    let top = decode_response(self.config.api, &reply.body)
                        .map_err(|detail| ElicitError::Protocol { endpoint: url.clone(), detail })?;
                    return Ok((top, attempt));
                }
                Ok(reply) if reply.status == 429 || reply.status >= 500 => format!("HTTP {}", reply.status),
                Ok(reply) => {
                    let detail = String::from_utf8_lossy(&reply.body).chars().take(300).collect();
                    return Err(ElicitError::Http { endpoint: url, status: reply.status, detail });
                }
                Err(e) => e.clone(),
            };
            if attempt >= self.config.max_retries {
                return Err(ElicitError::Transport { endpoint: url, attempts: attempt + 1, detail: retryable });
            }
            let delay = self.backoff(attempt);
            log::debug!("{url}: {retryable}; retrying in {delay:?}");
            std::thread::sleep(delay);
            attempt += 1;
            self.retries.fetch_add(1, Ordering::Relaxed);
        }
    }

    fn extract(&self, top: &[(String, f64)], choices: &ChoiceSet) -> Result<ExtractedChoice, ElicitError> {
        let variants = ChoiceVariants::new(choices)?;
        extract_choice_probabilities(top, &variants, self.coverage_threshold)
    }

    fn finish(
        instance_id: &str,
        extracted: ExtractedChoice,
        provenance: Provenance,
        retries: u32,
    ) -> Elicited {
        Elicited {
            prediction: ChoicePrediction {
                instance_id: instance_id.to_string(),
                probs: extracted.probs,
                raw_choice_mass: extracted.raw_choice_mass,
                provenance,
            },
            retries,
        }
    }

    /// One prediction for `prompt`, from the cache when the key hits.
    pub fn elicit(&self, instance_id: &str, prompt: &str, choices: &ChoiceSet) -> Result<Elicited, ElicitError> {
        let key = self.cache_key(prompt, choices);
        if let Some(entry) = self.cache.as_ref().and_then(|c| c.get(&key)) {
            self.cache_hits.fetch_add(1, Ordering::Relaxed);
            let extracted = self.extract(&entry.top_logprobs, choices)?;
            return Ok(Self::finish(instance_id, extracted, Provenance::Cache, 0));
        }
        let body = request_body(&self.config, prompt);
        let (top, retries) = self.fetch(&body)?;
        let extracted = self.extract(&top, choices);
        if let Some(cache) = &self.cache {
            let entry = CacheEntry {
                key,
                request: serde_json::from_slice(&body).expect("request is JSON"),
                top_logprobs: top,
                prediction: extracted.as_ref().ok().map(|e| CachedChoice {
                    probs: e.probs.probs().to_vec(),
                    raw_choice_mass: e.raw_choice_mass,
                }),
            };
            cache.put(&entry)?;
        }
        Ok(Self::finish(instance_id, extracted?, Provenance::Live, retries))
    }

    /// Elicits every job with at most `concurrency` requests in flight.
    /// Jobs sharing a prompt are sent once. Results keep job order.
    pub fn elicit_batch(
        &self,
        jobs: &[ElicitJob],
        choices: &ChoiceSet,
        concurrency: usize,
    ) -> Vec<Result<Elicited, ElicitError>> {
        let mut unique: Vec<&str> = Vec::new();
        let mut slot_of: HashMap<&str, usize> = HashMap::new();
        let job_slots: Vec<usize> = jobs
            .iter()
            .map(|job| {
                *slot_of.entry(job.prompt.as_str()).or_insert_with(|| {
                    unique.push(job.prompt.as_str());
                    unique.len() - 1
                })
            })
            .collect();

        let results: Vec<Mutex<Option<Result<Elicited, ElicitError>>>> =
            unique.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        let workers = concurrency.max(1).min(unique.len().max(1));
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= unique.len() {
                        break;
                    }
                    let outcome = self.elicit("", unique[i], choices);
                    *results[i].lock().unwrap_or_else(|p| p.into_inner()) = Some(outcome);
                });
            }
        });
        let results: Vec<Result<Elicited, ElicitError>> = results
            .into_iter()
            .map(|m| m.into_inner().unwrap_or_else(|p| p.into_inner()).expect("every prompt was elicited"))
            .collect();

        jobs.iter()
            .zip(job_slots)
            .map(|(job, slot)| {
                results[slot].clone().map(|mut e| {
                    e.prediction.instance_id = job.instance_id.clone();
                    e
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicU32;

    struct Scripted {
        statuses: Mutex<Vec<u16>>,
        body: Vec<u8>,
        calls: AtomicU32,
    }

    impl Transport for Scripted {
        fn post_json(&self, _url: &str, _body: &[u8], _bearer: Option<&str>) -> Result<HttpReply, String> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            let mut statuses = self.statuses.lock().unwrap();
            let status = if statuses.is_empty() { 200 } else { statuses.remove(0) };
            Ok(HttpReply { status, body: self.body.clone() })
        }
    }

    fn scripted(statuses: Vec<u16>, body: &str) -> Arc<Scripted> {
        Arc::new(Scripted { statuses: Mutex::new(statuses), body: body.as_bytes().to_vec(), calls: AtomicU32::new(0) })
    }

    const OK_BODY: &str = r#"{"choices":[{"logprobs":{"top_logprobs":[{" Yes":-0.5108256237659907," No":-0.916290731874155}]}}]}"#;

    fn config() -> EndpointConfig {
        EndpointConfig { backoff_base_ms: 1, max_retries: 3, ..EndpointConfig::new("http://mock", "m") }
    }

    fn choices() -> ChoiceSet {
        ChoiceSet::new(&["ONE", "TWO"], &["Yes", "No"]).unwrap()
    }

    #[test]
    fn retries_on_429_then_succeeds() {
        let t = scripted(vec![429, 429], OK_BODY);
        let e = Elicitor::new(config(), t.clone()).unwrap();
        let got = e.elicit("i", "prompt", &choices()).unwrap();
        assert_eq!(got.retries, 2);
        assert_eq!(t.calls.load(Ordering::SeqCst), 3);
        assert!((got.prediction.probs.probs()[0] - 0.6 / 1.0).abs() < 1e-12);
        assert_eq!(e.total_retries(), 2);
    }

    #[test]
    fn gives_up_after_max_retries() {
        let t = scripted(vec![503; 10], OK_BODY);
        let e = Elicitor::new(config(), t.clone()).unwrap();
        let err = e.elicit("i", "prompt", &choices()).unwrap_err();
        assert!(matches!(err, ElicitError::Transport { attempts: 4, .. }));
        assert_eq!(t.calls.load(Ordering::SeqCst), 4);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let t = scripted(vec![401], OK_BODY);
        let e = Elicitor::new(config(), t.clone()).unwrap();
        assert!(matches!(e.elicit("i", "p", &choices()), Err(ElicitError::Http { status: 401, .. })));
        assert_eq!(t.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn missing_logprobs_names_the_endpoint() {
        let t = scripted(vec![], r#"{"choices":[{"text":"Yes"}]}"#);
        let e = Elicitor::new(config(), t).unwrap();
        match e.elicit("i", "p", &choices()) {
            Err(ElicitError::Protocol { endpoint, .. }) => assert_eq!(endpoint, "http://mock/v1/completions"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn cache_hit_makes_no_request() {
        let dir = tempfile::tempdir().unwrap();
        let cache = Arc::new(PredictionCache::new(dir.path()));
        let t = scripted(vec![], OK_BODY);
        let e = Elicitor::new(config(), t.clone()).unwrap().with_cache(cache.clone());
        let first = e.elicit("i", "p", &choices()).unwrap();
        assert_eq!(first.prediction.provenance, Provenance::Live);
        let second = e.elicit("i", "p", &choices()).unwrap();
        assert_eq!(second.prediction.provenance, Provenance::Cache);
        assert_eq!(t.calls.load(Ordering::SeqCst), 1);
        assert_eq!(first.prediction.probs, second.prediction.probs);
        assert_eq!(first.prediction.raw_choice_mass, second.prediction.raw_choice_mass);

        // A fresh elicitor over the same directory behaves like a restarted process.
        let t2 = scripted(vec![], "{}");
        let e2 = Elicitor::new(config(), t2.clone()).unwrap().with_cache(cache);
        let third = e2.elicit("i", "p", &choices()).unwrap();
        assert_eq!(t2.calls.load(Ordering::SeqCst), 0);
        assert_eq!(
            serde_json::to_string(&third.prediction.probs).unwrap(),
            serde_json::to_string(&first.prediction.probs).unwrap()
        );
    }

    #[test]
    fn low_coverage_is_cached_as_raw_logprobs() {
        let dir = tempfile::tempdir().unwrap();
        let cache = Arc::new(PredictionCache::new(dir.path()));
        let body = r#"{"choices":[{"logprobs":{"top_logprobs":[{"The":-0.1,"A":-2.8}]}}]}"#;
        let t = scripted(vec![], body);
        let e = Elicitor::new(config(), t.clone()).unwrap().with_cache(cache.clone());
        assert!(matches!(e.elicit("i", "p", &choices()), Err(ElicitError::LowCoverage { .. })));
        assert!(matches!(e.elicit("i", "p", &choices()), Err(ElicitError::LowCoverage { .. })));
        assert_eq!(t.calls.load(Ordering::SeqCst), 1);
        let entry = cache.get(&e.cache_key("p", &choices())).unwrap();
        assert!(entry.prediction.is_none());
        assert_eq!(entry.top_logprobs.len(), 2);
    }

    #[test]
    fn batch_dedups_prompts_and_keeps_order() {
        let t = scripted(vec![], OK_BODY);
        let e = Elicitor::new(config(), t.clone()).unwrap();
        let jobs: Vec<ElicitJob> = (0..10)
            .map(|i| ElicitJob { instance_id: format!("id{i}"), prompt: format!("prompt {}", i % 3) })
            .collect();
        let out = e.elicit_batch(&jobs, &choices(), 4);
        assert_eq!(t.calls.load(Ordering::SeqCst), 3);
        for (i, r) in out.iter().enumerate() {
            assert_eq!(r.as_ref().unwrap().prediction.instance_id, format!("id{i}"));
        }
    }

    #[test]
    fn same_prompt_same_request_bytes() {
        let c = config();
        assert_eq!(request_body(&c, "p"), request_body(&c, "p"));
    }

    #[test]
    fn debug_redacts_api_key() {
        let e = Elicitor::new(config(), scripted(vec![], OK_BODY)).unwrap().with_api_key(Some("sk-secret".into()));
        let shown = format!("{e:?}");
        assert!(!shown.contains("sk-secret"));
        assert!(shown.contains("<redacted>"));
    }
}
