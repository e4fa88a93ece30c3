//! A local OpenAI-compatible endpoint that serves canned logprobs. Used by
//! the test suites and handy for dry runs of a config.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use serde::Deserialize;
use serde_json::{json, Value};

/// One canned response. A rule applies when every given matcher matches.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockRule {
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub prompt_contains: Option<String>,
    #[serde(default)]
    pub top_logprobs: BTreeMap<String, f64>,
    /// Statuses returned, in order, before the rule starts succeeding.
    #[serde(default)]
    pub fail_first: Vec<u16>,
    /// Respond successfully but without a logprobs field.
    #[serde(default)]
    pub omit_logprobs: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockSpec {
    #[serde(default)]
    pub rules: Vec<MockRule>,
    #[serde(default)]
    pub default: Option<MockRule>,
}

impl MockSpec {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordedRequest {
    pub path: String,
    pub authorization: Option<String>,
    pub body: Value,
}

struct State {
    spec: MockSpec,
    failures_served: Mutex<BTreeMap<usize, usize>>,
    requests: Mutex<Vec<RecordedRequest>>,
    count: AtomicU64,
}

pub struct MockEndpoint {
    server: Arc<tiny_http::Server>,
    state: Arc<State>,
    base_url: String,
    worker: Option<JoinHandle<()>>,
}

impl std::fmt::Debug for MockEndpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MockEndpoint").field("base_url", &self.base_url).finish()
    }
}

impl MockEndpoint {
    /// Binds an ephemeral port on 127.0.0.1 and starts serving.
    pub fn start(spec: MockSpec) -> std::io::Result<Self> {
        let server = tiny_http::Server::http("127.0.0.1:0").map_err(std::io::Error::other)?;
        let port = server.server_addr().to_ip().map(|a| a.port()).ok_or_else(|| std::io::Error::other("no ip"))?;
        let server = Arc::new(server);
        let state = Arc::new(State {
            spec,
            failures_served: Mutex::new(BTreeMap::new()),
            requests: Mutex::new(Vec::new()),
            count: AtomicU64::new(0),
        });
        let worker = {
            let server = server.clone();
            let state = state.clone();
            std::thread::spawn(move || {
                for request in server.incoming_requests() {
                    let state = state.clone();
                    std::thread::spawn(move || handle(&state, request));
                }
            })
        };
        Ok(Self { server, state, base_url: format!("http://127.0.0.1:{port}"), worker: Some(worker) })
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    pub fn request_count(&self) -> u64 {
        self.state.count.load(Ordering::SeqCst)
    }

    pub fn requests(&self) -> Vec<RecordedRequest> {
        self.state.requests.lock().unwrap_or_else(|p| p.into_inner()).clone()
    }
}

impl Drop for MockEndpoint {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(worker) = self.worker.take() {
            let _ = worker.join();
        }
    }
}

fn prompt_of(body: &Value) -> String {
    if let Some(p) = body.get("prompt").and_then(Value::as_str) {
        return p.to_string();
    }
    body.get("messages")
        .and_then(Value::as_array)
        .map(|m| m.iter().filter_map(|m| m.get("content").and_then(Value::as_str)).collect::<Vec<_>>().join("\n"))
        .unwrap_or_default()
}

fn select<'a>(spec: &'a MockSpec, model: &str, prompt: &str) -> Option<(usize, &'a MockRule)> {
    let matches = |r: &MockRule| {
        r.model.as_deref().is_none_or(|m| m == model)
            && r.prompt_contains.as_deref().is_none_or(|p| prompt.contains(p))
    };
    spec.rules
        .iter()
        .enumerate()
        .find(|(_, r)| matches(r))
        .or_else(|| spec.default.as_ref().filter(|r| matches(r)).map(|r| (usize::MAX, r)))
}

fn completions_body(rule: &MockRule) -> Value {
    if rule.omit_logprobs {
        return json!({"object": "text_completion", "choices": [{"index": 0, "text": ""}]});
    }
    let top: serde_json::Map<String, Value> =
        rule.top_logprobs.iter().map(|(t, lp)| (t.clone(), json!(lp))).collect();
    let best = best_token(rule);
    json!({
        "object": "text_completion",
        "choices": [{"index": 0, "text": best, "logprobs": {"tokens": [best], "top_logprobs": [top]}}]
    })
}

fn chat_body(rule: &MockRule) -> Value {
    let best = best_token(rule);
    if rule.omit_logprobs {
        return json!({"object": "chat.completion", "choices": [{"index": 0, "message": {"role": "assistant", "content": best}}]});
    }
    let top: Vec<Value> = rule.top_logprobs.iter().map(|(t, lp)| json!({"token": t, "logprob": lp})).collect();
    json!({
        "object": "chat.completion",
        "choices": [{
            "index": 0,
            "message": {"role": "assistant", "content": best},
            "logprobs": {"content": [{"token": best, "logprob": top.first().map(|t| t["logprob"].clone()), "top_logprobs": top}]}
        }]
    })
}

fn best_token(rule: &MockRule) -> String {
    rule.top_logprobs
        .iter()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(t, _)| t.clone())
        .unwrap_or_default()
}

fn respond(request: tiny_http::Request, status: u16, body: Value) {
    let header = tiny_http::Header::from_bytes("Content-Type", "application/json").expect("static header");
    let response = tiny_http::Response::from_string(body.to_string()).with_status_code(status).with_header(header);
    let _ = request.respond(response);
}

fn handle(state: &State, mut request: tiny_http::Request) {
    state.count.fetch_add(1, Ordering::SeqCst);
    let path = request.url().to_string();
    let authorization = request
        .headers()
        .iter()
        .find(|h| h.field.equiv("Authorization"))
        .map(|h| h.value.as_str().to_string());
    let mut raw = Vec::new();
    if request.as_reader().read_to_end(&mut raw).is_err() {
        return respond(request, 400, json!({"error": "unreadable body"}));
    }
    let Ok(body) = serde_json::from_slice::<Value>(&raw) else {
        return respond(request, 400, json!({"error": "body is not JSON"}));
    };
    state
        .requests
        .lock()
        .unwrap_or_else(|p| p.into_inner())
        .push(RecordedRequest { path: path.clone(), authorization, body: body.clone() });

    let chat = match path.as_str() {
        "/v1/completions" => false,
        "/v1/chat/completions" => true,
        _ => return respond(request, 404, json!({"error": "not found"})),
    };
    let model = body.get("model").and_then(Value::as_str).unwrap_or_default();
    let Some((index, rule)) = select(&state.spec, model, &prompt_of(&body)) else {
        return respond(request, 404, json!({"error": format!("no mock rule for model {model:?}")}));
    };
    {
        let mut served = state.failures_served.lock().unwrap_or_else(|p| p.into_inner());
        let n = served.entry(index).or_insert(0);
        if let Some(&status) = rule.fail_first.get(*n) {
            *n += 1;
            drop(served);
            return respond(request, status, json!({"error": "injected failure"}));
        }
    }
    let reply = if chat { chat_body(rule) } else { completions_body(rule) };
    respond(request, 200, reply)
}
