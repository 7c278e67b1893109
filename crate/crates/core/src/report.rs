//! Structured outcome of a verification check.

use serde::Serialize;

/// Aggregated result of one check over any number of cases. Margins are
/// oriented so that a case passes when `margin ≥ −tolerance`; cases whose
/// sides are not well defined pass by convention and are counted apart.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerificationReport {
    pub check: String,
    pub passed: bool,
    pub tolerance: f64,
    /// What the computed values are compared against.
    pub oracle: String,
    pub cases: usize,
    pub violations: usize,
    pub undefined: usize,
    pub worst_margin: Option<f64>,
    pub flags: Vec<String>,
    pub details: serde_json::Value,
}

impl VerificationReport {
    pub fn new(check: &str, tolerance: f64, oracle: &str) -> Self {
        VerificationReport {
            check: check.to_string(),
            passed: true,
            tolerance,
            oracle: oracle.to_string(),
            cases: 0,
            violations: 0,
            undefined: 0,
            worst_margin: None,
            flags: Vec::new(),
            details: serde_json::Value::Null,
        }
    }

    /// Records one case; returns whether it passed.
    pub fn record(&mut self, margin: Option<f64>) -> bool {
        self.cases += 1;
        match margin {
            None => {
                self.undefined += 1;
                true
            }
            Some(m) => {
                self.worst_margin = Some(self.worst_margin.map_or(m, |w| w.min(m)));
                let ok = m >= -self.tolerance;
                if !ok {
                    self.violations += 1;
                    self.passed = false;
                }
                ok
            }
        }
    }

    /// Records a case that failed outright (for example a non-finite value).
    pub fn record_failure(&mut self, note: String) {
        self.cases += 1;
        self.violations += 1;
        self.passed = false;
        self.flags.push(note);
    }

    pub fn flag(&mut self, note: &str) {
        if !self.flags.iter().any(|f| f == note) {
            self.flags.push(note.to_string());
        }
    }

    /// Folds another report's counts into this one.
    pub fn absorb(&mut self, other: &VerificationReport) {
        self.cases += other.cases;
        self.violations += other.violations;
        self.undefined += other.undefined;
        self.passed &= other.passed;
        if let Some(m) = other.worst_margin {
            self.worst_margin = Some(self.worst_margin.map_or(m, |w| w.min(m)));
        }
        for f in &other.flags {
            self.flag(f);
        }
    }

    pub fn with_details<T: Serialize>(mut self, details: &T) -> Self {
        self.details = serde_json::to_value(details).unwrap_or(serde_json::Value::Null);
        self
    }
}

/// `(left − right) / max(|left|, |right|)`, or `None` unless both are defined.
pub fn relative_margin(left: Option<f64>, right: Option<f64>) -> Option<f64> {
    let (l, r) = (left?, right?);
    let scale = l.abs().max(r.abs());
    Some(if scale > 0.0 { (l - r) / scale } else { 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_and_margins() {
        let mut r = VerificationReport::new("demo", 1e-8, "none");
        assert!(r.record(Some(0.5)));
        assert!(r.record(None));
        assert!(r.record(Some(-1e-9)));
        assert!(!r.record(Some(-1e-3)));
        assert_eq!((r.cases, r.undefined, r.violations), (4, 1, 1));
        assert!(!r.passed);
        assert_eq!(r.worst_margin, Some(-1e-3));
        assert_eq!(relative_margin(Some(2.0), Some(1.0)), Some(0.5));
        assert_eq!(relative_margin(None, Some(1.0)), None);
    }
}
