//! Annotation traces: one JSON object per line.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::Label;

pub const TRACE_VERSION: u32 = 1;

/// One annotated step: the action class and what was visible before and after.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationTuple {
    #[serde(default = "version", skip_serializing)]
    v: u32,
    pub action: String,
    pub loc_t: Label,
    pub loc_next: Label,
    #[serde(default)]
    pub held_t: BTreeMap<Label, u64>,
    #[serde(default)]
    pub held_next: BTreeMap<Label, u64>,
}

fn version() -> u32 {
    TRACE_VERSION
}

impl AnnotationTuple {
    pub fn new(
        action: &str,
        loc_t: &str,
        loc_next: &str,
        held_t: &[(&str, u64)],
        held_next: &[(&str, u64)],
    ) -> Self {
        let held = |h: &[(&str, u64)]| {
            h.iter()
                .filter(|(_, c)| *c > 0)
                .map(|(l, c)| (Label::new(l), *c))
                .collect()
        };
        Self {
            v: TRACE_VERSION,
            action: action.to_string(),
            loc_t: Label::new(loc_t),
            loc_next: Label::new(loc_next),
            held_t: held(held_t),
            held_next: held(held_next),
        }
    }

    pub fn from_maps(
        action: &str,
        loc_t: Label,
        loc_next: Label,
        held_t: BTreeMap<Label, u64>,
        held_next: BTreeMap<Label, u64>,
    ) -> Self {
        Self {
            v: TRACE_VERSION,
            action: action.to_string(),
            loc_t,
            loc_next,
            held_t,
            held_next,
        }
        .normalize()
    }

    fn normalize(mut self) -> Self {
        self.held_t.retain(|_, c| *c > 0);
        self.held_next.retain(|_, c| *c > 0);
        self
    }
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("trace line {line}: unsupported version {version}")]
    Version { line: usize, version: u32 },
}

/// Parses JSON lines; blank lines are skipped. Line numbers are 1-based.
pub fn parse_trace(text: &str) -> Result<Vec<AnnotationTuple>, TraceError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let t: AnnotationTuple = serde_json::from_str(line).map_err(|e| TraceError::Malformed {
            line: i + 1,
            message: e.to_string(),
        })?;
        if t.v != TRACE_VERSION {
            return Err(TraceError::Version {
                line: i + 1,
                version: t.v,
            });
        }
        out.push(t.normalize());
    }
    Ok(out)
}

pub fn serialize_trace(trace: &[AnnotationTuple]) -> String {
    let mut s = String::new();
    for t in trace {
        let _ = writeln!(s, "{}", serde_json::to_string(t).expect("tuples serialize"));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn take_an_eccentric() {
        let line = r#"{"action":"take","loc_t":"floor","loc_next":"floor","held_t":{},"held_next":{"eccentric":1}}"#;
        let t = parse_trace(line).unwrap();
        assert_eq!(
            t,
            vec![AnnotationTuple::new(
                "take",
                "floor",
                "floor",
                &[],
                &[("eccentric", 1)]
            )]
        );
        assert_eq!(serialize_trace(&t).trim_end(), line);
    }

    #[test]
    fn empty_and_malformed() {
        assert!(parse_trace("").unwrap().is_empty());
        assert!(parse_trace("\n\n").unwrap().is_empty());
        let neg = "{\"action\":\"take\",\"loc_t\":\"floor\",\"loc_next\":\"floor\",\"held_t\":{\"bolt\":-1}}";
        let err = parse_trace(&format!("\n{neg}")).unwrap_err();
        assert!(matches!(err, TraceError::Malformed { line: 2, .. }));
        let v2 = r#"{"v":2,"action":"take","loc_t":"floor","loc_next":"floor"}"#;
        assert!(matches!(parse_trace(v2), Err(TraceError::Version { .. })));
    }

    #[test]
    fn zero_counts_are_dropped() {
        let line = r#"{"action":"move","loc_t":"floor","loc_next":"table","held_t":{"bolt":0}}"#;
        assert!(parse_trace(line).unwrap()[0].held_t.is_empty());
    }
}
