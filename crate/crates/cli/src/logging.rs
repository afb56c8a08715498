//! Plain or JSON-per-event logging on stderr.

use std::time::{SystemTime, UNIX_EPOCH};

pub struct Logger {
    json: bool,
}

impl Logger {
    pub fn new(json: bool) -> Self {
        Self { json }
    }

    fn ts() -> f64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs_f64())
            .unwrap_or(0.0)
    }

    pub fn event(&self, event: &str, detail: &str) {
        if self.json {
            eprintln!(
                "{}",
                serde_json::json!({
                    "ts": Self::ts(),
                    "level": "info",
                    "event": event,
                    "detail": detail,
                })
            );
        } else {
            eprintln!("[{event}] {detail}");
        }
    }

    pub fn error(&self, err: &mvoct_core::Error) {
        if self.json {
            eprintln!(
                "{}",
                serde_json::json!({
                    "ts": Self::ts(),
                    "level": "error",
                    "event": "error",
                    "kind": kind_of(err),
                    "message": err.to_string(),
                })
            );
        } else {
            eprintln!("error: {err}");
        }
    }
}

fn kind_of(err: &mvoct_core::Error) -> &'static str {
    use mvoct_core::Error::*;
    match err {
        Format(_) => "format",
        CorruptInput(_) => "corrupt_input",
        Io { .. } => "io",
        Contract(_) => "contract",
        Config(_) => "config",
        Detection(_) => "detection",
        Params(_) => "params",
        Training(_) => "training",
    }
}
