//! Newline-delimited event log.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub tick: u64,
    pub kind: String,
    pub data: Value,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
}

impl Trace {
    pub fn push(&mut self, tick: u64, kind: &str, data: Value) {
        self.records.push(TraceRecord { tick, kind: kind.to_string(), data });
    }

    pub fn of_kind<'a>(&'a self, kind: &'a str) -> impl Iterator<Item = &'a TraceRecord> + 'a {
        self.records.iter().filter(move |r| r.kind == kind)
    }

    pub fn to_ndjson(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("trace records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_ndjson(text: &str) -> Result<Self> {
        let mut records = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            records.push(serde_json::from_str(line)?);
        }
        Ok(Trace { records })
    }
}

/// Millimetre rounding keeps traces short and readable.
pub fn mm(v: f64) -> f64 {
    (v * 1000.0).round() / 1000.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn round_trips_with_stable_field_order() {
        let mut t = Trace::default();
        t.push(3, "discover", json!({"task": 1, "robot": 0}));
        let text = t.to_ndjson();
        assert_eq!(text, "{\"tick\":3,\"kind\":\"discover\",\"data\":{\"robot\":0,\"task\":1}}\n");
        assert_eq!(Trace::from_ndjson(&text).unwrap(), t);
    }
}
