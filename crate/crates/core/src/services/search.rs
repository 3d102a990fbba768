//! Web search through pluggable engines.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{arg_str, arg_usize, ServiceFunction, ServiceResponse};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchHit {
    pub title: String,
    pub link: String,
    pub snippet: String,
}

pub trait SearchEngine: Send + Sync {
    fn search(&self, question: &str, api_key: Option<&str>, num_results: usize) -> Result<Vec<SearchHit>, String>;
}

fn get_json(url: &str, query: &[(&str, String)], headers: &[(&str, String)]) -> Result<Value, String> {
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs(30)))
        .http_status_as_error(false)
        .build()
        .into();
    let mut req = agent.get(url);
    for (k, v) in query {
        req = req.query(*k, v);
    }
    for (k, v) in headers {
        req = req.header(*k, v);
    }
    let mut resp = req.call().map_err(|e| format!("GET {url}: {e}"))?;
    let status = resp.status().as_u16();
    let text = resp.body_mut().read_to_string().unwrap_or_default();
    if !(200..300).contains(&status) {
        return Err(format!("GET {url}: HTTP {status}"));
    }
    serde_json::from_str(&text).map_err(|e| format!("GET {url}: invalid JSON: {e}"))
}

fn hits_from(items: Option<&Value>, title: &str, link: &str) -> Vec<SearchHit> {
    items
        .and_then(Value::as_array)
        .map(|a| {
            a.iter()
                .map(|it| SearchHit {
                    title: it[title].as_str().unwrap_or_default().to_string(),
                    link: it[link].as_str().unwrap_or_default().to_string(),
                    snippet: it["snippet"].as_str().unwrap_or_default().to_string(),
                })
                .collect()
        })
        .unwrap_or_default()
}

/// Bing Web Search v7.
#[derive(Debug, Clone)]
pub struct BingSearch {
    pub endpoint: String,
}

impl Default for BingSearch {
    fn default() -> Self {
        Self {
            endpoint: "https://api.bing.microsoft.com/v7.0/search".into(),
        }
    }
}

impl SearchEngine for BingSearch {
    fn search(&self, question: &str, api_key: Option<&str>, num_results: usize) -> Result<Vec<SearchHit>, String> {
        let key = api_key.ok_or("bing search needs an api_key")?;
        let v = get_json(
            &self.endpoint,
            &[("q", question.to_string()), ("count", num_results.to_string())],
            &[("Ocp-Apim-Subscription-Key", key.to_string())],
        )?;
        Ok(hits_from(v.pointer("/webPages/value"), "name", "url"))
    }
}

/// Google Custom Search; the api_key is given as `key:cse_id`.
#[derive(Debug, Clone)]
pub struct GoogleSearch {
    pub endpoint: String,
}

impl Default for GoogleSearch {
    fn default() -> Self {
        Self {
            endpoint: "https://www.googleapis.com/customsearch/v1".into(),
        }
    }
}

impl SearchEngine for GoogleSearch {
    fn search(&self, question: &str, api_key: Option<&str>, num_results: usize) -> Result<Vec<SearchHit>, String> {
        let (key, cx) = api_key
            .and_then(|k| k.split_once(':'))
            .ok_or("google search needs an api_key of the form key:cse_id")?;
        let v = get_json(
            &self.endpoint,
            &[
                ("key", key.to_string()),
                ("cx", cx.to_string()),
                ("q", question.to_string()),
                ("num", num_results.min(10).to_string()),
            ],
            &[],
        )?;
        Ok(hits_from(v.get("items"), "title", "link"))
    }
}

/// Deterministic offline engine with optional latency and canned results.
#[derive(Debug, Default)]
pub struct MockSearchEngine {
    latency: Duration,
    canned: HashMap<String, Vec<SearchHit>>,
    calls: Mutex<Vec<String>>,
}

impl MockSearchEngine {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = latency;
        self
    }

    pub fn with_results(mut self, question: impl Into<String>, hits: Vec<SearchHit>) -> Self {
        self.canned.insert(question.into(), hits);
        self
    }

    /// Questions received, in order.
    pub fn calls(&self) -> Vec<String> {
        self.calls.lock().unwrap().clone()
    }
}

impl SearchEngine for MockSearchEngine {
    fn search(&self, question: &str, _api_key: Option<&str>, num_results: usize) -> Result<Vec<SearchHit>, String> {
        self.calls.lock().unwrap().push(question.to_string());
        if !self.latency.is_zero() {
            std::thread::sleep(self.latency);
        }
        if let Some(hits) = self.canned.get(question) {
            return Ok(hits.iter().take(num_results).cloned().collect());
        }
        let slug: String = question
            .chars()
            .map(|c| if c.is_alphanumeric() { c.to_ascii_lowercase() } else { '-' })
            .collect();
        Ok((0..num_results)
            .map(|i| SearchHit {
                title: format!("Result {} for {question}", i + 1),
                link: format!("https://search.example/{slug}/{}", i + 1),
                snippet: format!("Snippet {} about {question}.", i + 1),
            })
            .collect())
    }
}

/// Engines addressable by name from the `engine` argument.
#[derive(Clone)]
pub struct SearchEngines(Arc<RwLock<HashMap<String, Arc<dyn SearchEngine>>>>);

impl std::fmt::Debug for SearchEngines {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut names: Vec<String> = self.0.read().unwrap().keys().cloned().collect();
        names.sort();
        f.debug_tuple("SearchEngines").field(&names).finish()
    }
}

impl SearchEngines {
    /// `bing`, `google` and an offline `mock`.
    pub fn with_defaults() -> Self {
        let e = Self(Arc::new(RwLock::new(HashMap::new())));
        e.register("bing", Arc::new(BingSearch::default()));
        e.register("google", Arc::new(GoogleSearch::default()));
        e.register("mock", Arc::new(MockSearchEngine::new()));
        e
    }

    pub fn register(&self, name: &str, engine: Arc<dyn SearchEngine>) {
        self.0.write().unwrap().insert(name.to_string(), engine);
    }

    pub fn get(&self, name: &str) -> Option<Arc<dyn SearchEngine>> {
        self.0.read().unwrap().get(name).cloned()
    }
}

pub fn web_search(engines: SearchEngines) -> ServiceFunction {
    ServiceFunction::new("web_search", "Search the web for the given question.", move |args| {
        let question = match arg_str(args, "question") {
            Ok(q) => q,
            Err(e) => return ServiceResponse::error(e),
        };
        let name = args.get("engine").and_then(Value::as_str).unwrap_or("mock");
        let Some(engine) = engines.get(name) else {
            return ServiceResponse::error(format!("unknown search engine: {name}"));
        };
        let n = match arg_usize(args, "num_results", 10) {
            Ok(n) => n,
            Err(e) => return ServiceResponse::error(e),
        };
        let key = args.get("api_key").and_then(Value::as_str);
        match engine.search(question, key, n) {
            Ok(hits) => ServiceResponse::success(serde_json::to_value(hits).unwrap_or_default()),
            Err(e) => ServiceResponse::error(format!("web search failed: {e}")),
        }
    })
    .param("question", "string", "The string question to search.")
    .param("engine", "string", "Search engine name.")
    .param("api_key", "string", "API key of the search engine.")
    .optional_param("num_results", "integer", "Number of results.")
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn mock_engine_through_service() {
        let engines = SearchEngines::with_defaults();
        let mock = Arc::new(MockSearchEngine::new());
        engines.register("stub", mock.clone());
        let f = web_search(engines);
        let args = [
            ("question".to_string(), json!("rust actors")),
            ("engine".to_string(), json!("stub")),
            ("num_results".to_string(), json!(2)),
        ]
        .into_iter()
        .collect();
        let r = f.call(&args);
        assert!(r.is_success());
        assert_eq!(r.content.as_array().unwrap().len(), 2);
        assert_eq!(mock.calls(), ["rust actors"]);
    }

    #[test]
    fn unknown_engine_is_error_response() {
        let f = web_search(SearchEngines::with_defaults());
        let args = [("question".to_string(), json!("q")), ("engine".to_string(), json!("altavista"))]
            .into_iter()
            .collect();
        assert!(!f.call(&args).is_success());
    }
}
