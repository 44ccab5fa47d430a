use serde::{Deserialize, Serialize};

use mhgfilter::filter::{Mode, StepStats};

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    Explained,
    Inconsistent { step: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    /// `None` once a step had zero likelihood.
    pub log_likelihood: Option<f64>,
    pub max_lifted: usize,
    pub max_ground: u128,
    pub compression_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunReport {
    pub version: u32,
    pub domain: String,
    pub mode: Mode,
    pub steps: Vec<StepStats>,
    pub totals: Totals,
    pub outcome: Outcome,
}

impl RunReport {
    pub fn new(domain: &str, mode: Mode, steps: Vec<StepStats>, outcome: Outcome) -> Self {
        let max_lifted = steps.iter().map(|s| s.lifted_count).max().unwrap_or(0);
        let max_ground = steps.iter().map(|s| s.ground_count).max().unwrap_or(0);
        let log_likelihood = match outcome {
            Outcome::Explained => Some(steps.iter().map(|s| s.log_z).sum()),
            Outcome::Inconsistent { .. } => None,
        };
        let compression_ratio = if max_lifted == 0 {
            1.0
        } else {
            max_ground as f64 / max_lifted as f64
        };
        Self {
            version: REPORT_VERSION,
            domain: domain.to_string(),
            mode,
            steps,
            totals: Totals {
                log_likelihood,
                max_lifted,
                max_ground,
                compression_ratio,
            },
            outcome,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("reports serialize");
        s.push('\n');
        s
    }
}
