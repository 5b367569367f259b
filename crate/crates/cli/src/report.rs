use serde::{Deserialize, Serialize};

/// Acceptance region for a measured value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bound {
    AtMost(f64),
    AtLeast(f64),
    Between(f64, f64),
}

impl Bound {
    /// NaN never passes.
    pub fn admits(&self, v: f64) -> bool {
        match *self {
            Bound::AtMost(hi) => v <= hi,
            Bound::AtLeast(lo) => v >= lo,
            Bound::Between(lo, hi) => lo <= v && v <= hi,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub tolerance: Bound,
    pub measured: f64,
    pub passed: bool,
    /// Non-gating checks are reported but do not fail the run.
    pub gating: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub note: Option<String>,
}

impl Check {
    pub fn new(name: impl Into<String>, measured: f64, tolerance: Bound) -> Self {
        Check {
            name: name.into(),
            passed: tolerance.admits(measured),
            tolerance,
            measured,
            gating: true,
            note: None,
        }
    }

    pub fn informational(mut self) -> Self {
        self.gating = false;
        self
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub scenario: String,
    pub seed: u64,
    pub passed: bool,
    pub checks: Vec<Check>,
    pub files: Vec<String>,
}

impl Report {
    pub fn new(scenario: &str, seed: u64) -> Self {
        Report {
            scenario: scenario.to_string(),
            seed,
            passed: true,
            checks: Vec::new(),
            files: Vec::new(),
        }
    }

    pub fn push(&mut self, check: Check) {
        self.checks.push(check);
        self.refresh();
    }

    /// A module error ends the scenario as a failed check.
    pub fn fail_with(&mut self, stage: &str, message: String) {
        self.push(Check::new(format!("{stage}_error"), f64::NAN, Bound::AtMost(0.0)).with_note(message));
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    fn refresh(&mut self) {
        self.passed = self.checks.iter().all(|c| c.passed || !c.gating);
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bounds() {
        assert!(Bound::AtMost(1e-8).admits(1e-9));
        assert!(!Bound::AtMost(1e-8).admits(f64::NAN));
        assert!(Bound::AtLeast(0.0).admits(0.0));
        assert!(Bound::Between(3.5, 4.5).admits(4.0));
        assert!(!Bound::Between(3.5, 4.5).admits(4.6));
    }

    #[test]
    fn informational_failures_do_not_gate() {
        let mut r = Report::new("x", 1);
        r.push(Check::new("a", 1.0, Bound::AtMost(0.0)).informational());
        assert!(r.passed);
        r.push(Check::new("b", 1.0, Bound::AtMost(0.0)));
        assert!(!r.passed);
        let json = r.to_json();
        assert!(json.contains("\"at_most\": 0.0"));
    }
}
