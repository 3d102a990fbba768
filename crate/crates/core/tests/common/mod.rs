#![allow(dead_code)]

use std::sync::{Arc, OnceLock};
use std::time::Duration;

use agentmesh::agents::{Agent, DialogAgent};
use agentmesh::models::{ModelConfig, NoSleep, ScriptedRule};
use agentmesh::runtime::Runtime;
use serde_json::Value;

fn agent() -> &'static ureq::Agent {
    static A: OnceLock<ureq::Agent> = OnceLock::new();
    A.get_or_init(|| {
        ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(30)))
            .build()
            .into()
    })
}

/// Minimal JSON-over-HTTP call returning the status and parsed body.
pub fn http(method: &str, url: &str, body: Option<Value>) -> (u16, Value) {
    let resp = match (method, body) {
        ("GET", _) => agent().get(url).call(),
        ("DELETE", _) => agent().delete(url).call(),
        (_, Some(b)) => agent().post(url).send_json(&b),
        (_, None) => agent().post(url).send_empty(),
    };
    let mut resp = resp.unwrap_or_else(|e| panic!("{method} {url}: {e}"));
    let status = resp.status().as_u16();
    let text = resp.body_mut().read_to_string().unwrap();
    let v = if text.trim().is_empty() {
        Value::Null
    } else {
        serde_json::from_str(&text).unwrap_or(Value::String(text))
    };
    (status, v)
}

pub fn http_text(url: &str) -> (u16, String) {
    let mut resp = agent().get(url).call().unwrap();
    (resp.status().as_u16(), resp.body_mut().read_to_string().unwrap())
}

/// A runtime writing into a throwaway directory, with no retry delays.
pub fn runtime() -> (Arc<Runtime>, tempfile::TempDir) {
    let dir = tempfile::tempdir().unwrap();
    let rt = Runtime::builder().run_dir(dir.path()).sleeper(Arc::new(NoSleep)).build();
    (rt, dir)
}

pub fn scripted(rt: &Runtime, name: &str, rules: Vec<ScriptedRule>) {
    rt.register_models(vec![ModelConfig::scripted(name, rules)]).unwrap();
}

pub fn dialog(rt: &Runtime, name: &str, model: &str) -> Arc<dyn Agent> {
    Arc::new(DialogAgent::new(name, format!("You are {name}."), rt.model(model).unwrap()).unwrap())
}
