use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

/// Offending data attached to a failed check.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Counterexample {
    pub description: String,
    /// Scalar coordinates of the violation (sample point, parameter, ...).
    pub location: BTreeMap<String, f64>,
    /// Offending function as CSV node values, when one exists.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub csv: Option<String>,
}

/// Outcome of one numerical check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub property: String,
    pub verdict: Verdict,
    /// Signed distance to violation; negative means violated.
    pub margin: f64,
    pub tolerance: f64,
    /// Values of the headline quantity at successive grid levels.
    pub trend: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub counterexample: Option<Counterexample>,
    pub details: BTreeMap<String, f64>,
    pub notes: Vec<String>,
}

impl Certificate {
    pub fn new(property: impl Into<String>, tolerance: f64) -> Self {
        Self {
            property: property.into(),
            verdict: Verdict::Inconclusive,
            margin: f64::INFINITY,
            tolerance,
            trend: Vec::new(),
            counterexample: None,
            details: BTreeMap::new(),
            notes: Vec::new(),
        }
    }

    /// Pass iff `margin >= -tolerance`; a failure without an explicit
    /// counterexample gets a minimal one so the payload invariant holds.
    pub fn decide(mut self) -> Self {
        if self.margin.is_nan() {
            self.verdict = Verdict::Inconclusive;
            return self;
        }
        if self.margin >= -self.tolerance {
            self.verdict = Verdict::Pass;
        } else {
            self.verdict = Verdict::Fail;
            if self.counterexample.is_none() {
                self.counterexample = Some(Counterexample {
                    description: format!("margin {:e} below tolerance", self.margin),
                    ..Default::default()
                });
            }
        }
        self
    }

    pub fn with_detail(mut self, key: &str, value: f64) -> Self {
        self.details.insert(key.to_string(), value);
        self
    }

    pub fn detail(&self, key: &str) -> Option<f64> {
        self.details.get(key).copied()
    }

    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }

    pub fn failed(&self) -> bool {
        self.verdict == Verdict::Fail
    }

    /// Fold a violation candidate into the running minimum margin.
    pub fn observe(&mut self, margin: f64, location: &[(&str, f64)], what: &str) {
        if margin < self.margin || self.margin.is_nan() {
            self.margin = margin;
            if margin < -self.tolerance {
                self.counterexample = Some(Counterexample {
                    description: what.to_string(),
                    location: location.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
                    csv: None,
                });
            }
        }
    }
}
