use std::sync::mpsc::{channel, Sender};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use serde_json::json;

use super::client::request;
use crate::monitor::{LogRecord, LogSink};

/// Forwards chat records to a studio as `POST {studio}/api/messages`.
///
/// Posting happens on a background thread in record order. Failures are
/// reported once on stderr and never reach the caller.
pub struct StudioEmitter {
    tx: Mutex<Option<Sender<serde_json::Value>>>,
    worker: Mutex<Option<JoinHandle<()>>>,
    origin: String,
}

impl std::fmt::Debug for StudioEmitter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StudioEmitter").field("origin", &self.origin).finish()
    }
}

impl StudioEmitter {
    /// `origin` identifies the sender, e.g. `host:port` of a server.
    pub fn new(studio_url: &str, origin: impl Into<String>) -> Arc<Self> {
        let url = format!("{}/api/messages", studio_url.trim_end_matches('/'));
        let (tx, rx) = channel::<serde_json::Value>();
        let worker = std::thread::spawn(move || {
            let mut warned = false;
            for body in rx {
                let ok = matches!(request("POST", &url, Some(&body), Duration::from_secs(5)), Ok((202, _)));
                if !ok && !warned {
                    eprintln!("studio at {url} is not accepting messages; continuing without it");
                    warned = true;
                }
            }
        });
        Arc::new(Self {
            tx: Mutex::new(Some(tx)),
            worker: Mutex::new(Some(worker)),
            origin: origin.into(),
        })
    }

    /// Waits until every queued record has been posted.
    pub fn flush(&self) {
        self.tx.lock().unwrap().take();
        if let Some(w) = self.worker.lock().unwrap().take() {
            let _ = w.join();
        }
    }
}

impl LogSink for StudioEmitter {
    fn write(&self, record: &LogRecord) {
        let Some(msg) = &record.msg else { return };
        let body = json!({
            "msg": msg.to_value(),
            "source": format!("{}@{}", record.source, self.origin),
        });
        if let Some(tx) = self.tx.lock().unwrap().as_ref() {
            let _ = tx.send(body);
        }
    }
}

impl Drop for StudioEmitter {
    fn drop(&mut self) {
        self.flush();
    }
}
