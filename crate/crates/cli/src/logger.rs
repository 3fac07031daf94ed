//! JSON-lines output on stderr, shared by progress events and `log` records.

use std::io::Write;

use serde_json::{json, Value};

struct JsonLogger;

impl log::Log for JsonLogger {
    fn enabled(&self, m: &log::Metadata) -> bool {
        m.level() <= log::max_level()
    }

    fn log(&self, r: &log::Record) {
        if self.enabled(r.metadata()) {
            line(
                &json!({ "event": "log", "level": r.level().as_str().to_lowercase(), "target": r.target(), "message": r.args().to_string() }),
            );
        }
    }

    fn flush(&self) {}
}

static LOGGER: JsonLogger = JsonLogger;

/// `UAD_LOG=debug|info|warn|error|off` picks the level; warn by default.
pub fn init() {
    let level = std::env::var("UAD_LOG").ok().and_then(|s| s.parse().ok()).unwrap_or(log::LevelFilter::Warn);
    if log::set_logger(&LOGGER).is_ok() {
        log::set_max_level(level);
    }
}

/// One compact JSON object, newline terminated, written in a single call so
/// concurrent lines do not interleave.
pub fn line(v: &Value) {
    let mut s = v.to_string();
    s.push('\n');
    let _ = std::io::stderr().lock().write_all(s.as_bytes());
}
