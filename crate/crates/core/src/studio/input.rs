use std::time::{Duration, Instant};

use serde_json::{json, Value};

use crate::agents::InputSource;
use crate::error::{Error, Result};
use crate::rpc::client::request;

const POLL_WAIT: Duration = Duration::from_secs(10);

/// Reads user turns from a studio: posts an input request, then long-polls
/// for the human's response.
#[derive(Debug, Clone)]
pub struct StudioInput {
    base: String,
}

impl StudioInput {
    pub fn new(studio_url: &str) -> Self {
        Self {
            base: studio_url.trim_end_matches('/').to_string(),
        }
    }
}

impl InputSource for StudioInput {
    fn read(&self, agent: &str, prompt: &str, timeout: Option<Duration>) -> Result<String> {
        let request_id = uuid::Uuid::new_v4().to_string();
        let body = json!({
            "request_id": request_id,
            "prompt": prompt,
            "agent": agent,
            "timeout": timeout.map(|t| t.as_secs_f64()),
        });
        let url = format!("{}/api/input_request", self.base);
        match request("POST", &url, Some(&body), Duration::from_secs(5))? {
            (202, _) => {}
            (status, v) => {
                return Err(Error::Accessibility {
                    attempts: 1,
                    cause: format!("studio rejected input request ({status}): {v}"),
                })
            }
        }
        let deadline = timeout.map(|t| Instant::now() + t);
        loop {
            let wait = match deadline {
                Some(d) => {
                    let left = d.saturating_duration_since(Instant::now());
                    if left.is_zero() {
                        return Err(Error::Timeout(format!(
                            "{agent}: user has not typed text for {:.0}s",
                            timeout.unwrap_or_default().as_secs_f64()
                        )));
                    }
                    left.min(POLL_WAIT)
                }
                None => POLL_WAIT,
            };
            let url = format!("{}/api/input_response/{request_id}?wait_ms={}", self.base, wait.as_millis());
            let (status, v) = request("GET", &url, None, wait + Duration::from_secs(5))?;
            if status != 200 {
                return Err(Error::Accessibility {
                    attempts: 1,
                    cause: format!("studio input poll failed ({status}): {v}"),
                });
            }
            if v.get("status").and_then(Value::as_str) == Some("done") {
                return Ok(v.get("content").and_then(Value::as_str).unwrap_or_default().to_string());
            }
        }
    }
}
