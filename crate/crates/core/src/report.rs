//! Report primitives shared by the library pipelines and the batch driver.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// One named residual check against a tolerance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub residual: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Check {
    pub fn new(name: impl Into<String>, residual: f64, tolerance: f64) -> Self {
        Check {
            name: name.into(),
            residual,
            tolerance,
            pass: residual.is_finite() && residual <= tolerance,
        }
    }
}

/// A diagnostic observation that does not gate success.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Finding {
    pub name: String,
    pub detail: String,
}

impl Finding {
    pub fn new(name: impl Into<String>, detail: impl Into<String>) -> Self {
        Finding {
            name: name.into(),
            detail: detail.into(),
        }
    }
}

pub const SCHEMA_VERSION: u32 = 1;

/// Full run report: scenario echo, checks, findings, and effective
/// tolerances. Serialized as JSON; byte-stable for a fixed scenario except
/// for the timing field.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub schema: u32,
    pub tool_version: String,
    pub mode: String,
    pub scenario: serde_json::Value,
    pub tolerances: BTreeMap<String, f64>,
    pub checks: Vec<Check>,
    pub findings: Vec<Finding>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classification: Option<String>,
    pub pass: bool,
    pub timing_ms: u64,
}

impl Report {
    pub fn new(mode: impl Into<String>, scenario: serde_json::Value) -> Self {
        Report {
            schema: SCHEMA_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            mode: mode.into(),
            scenario,
            tolerances: BTreeMap::new(),
            checks: Vec::new(),
            findings: Vec::new(),
            classification: None,
            pass: true,
            timing_ms: 0,
        }
    }

    pub fn push_check(&mut self, check: Check) {
        self.pass = self.pass && check.pass;
        self.tolerances
            .insert(check.name.clone(), check.tolerance);
        self.checks.push(check);
    }

    pub fn push_finding(&mut self, finding: Finding) {
        self.findings.push(finding);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_round_trips_and_tracks_pass() {
        let mut r = Report::new("verify", serde_json::json!({"chart": {"n": 2}}));
        r.push_check(Check::new("a", 1e-3, 1e-2));
        assert!(r.pass);
        r.push_check(Check::new("b", 2.0, 1e-2));
        assert!(!r.pass);
        assert_eq!(r.tolerances["b"], 1e-2);
        let s = serde_json::to_string(&r).unwrap();
        let back: Report = serde_json::from_str(&s).unwrap();
        assert_eq!(back.checks.len(), 2);
        assert!(!back.pass);
        assert_eq!(back.schema, SCHEMA_VERSION);
    }

    #[test]
    fn nan_residual_never_passes() {
        let c = Check::new("x", f64::NAN, 1.0);
        assert!(!c.pass);
    }
}
