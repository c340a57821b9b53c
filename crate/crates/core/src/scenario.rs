//! Scenario files: slices, topology, initial allocation and run settings in
//! one TOML document, plus the built-in reference scenario.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::{validate_scenario, AllocationMatrix, InvariantViolation, Scenario, SliceId, SliceSpec, Topology};
use crate::error::{Error, Result};
use crate::osra::OsraConfig;
use crate::sim::SimConfig;

/// Source of the built-in three-slice scenario.
pub const REFERENCE_TOML: &str = include_str!("../scenarios/reference.toml");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineConfig {
    /// Fraction of the delay bound given to the network stage.
    pub budget_split: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig { budget_split: 0.5 }
    }
}

/// On-disk form. Field order matters for TOML output: plain values first,
/// then tables, then arrays of tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub new_slice: SliceId,
    pub topology: Topology,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub osra: OsraConfig,
    #[serde(default)]
    pub baseline: BaselineConfig,
    pub slices: Vec<SliceSpec>,
    pub initial_alloc: AllocationMatrix,
}

/// A scenario file whose every invariant has been checked.
#[derive(Clone, Debug)]
pub struct ValidConfig {
    pub scenario: Scenario,
    pub config: ScenarioConfig,
}

impl ValidConfig {
    pub fn new_slice(&self) -> SliceId {
        self.config.new_slice
    }

    pub fn initial_alloc(&self) -> &AllocationMatrix {
        &self.config.initial_alloc
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn reference() -> Self {
        Self::from_toml(REFERENCE_TOML).expect("built-in reference scenario parses")
    }

    /// Checks every invariant: the slice set and allocation, the run
    /// settings, that the new slice exists and has lower-priority slices
    /// to draw from, and that its weights dominate theirs.
    pub fn validate(self) -> Result<ValidConfig> {
        let mut bad: Vec<InvariantViolation> = Vec::new();
        let scenario = match validate_scenario(&self.slices, &self.topology, &self.initial_alloc) {
            Ok(s) => Some(s),
            Err(Error::Invalid(v)) => {
                bad.extend(v);
                None
            }
            Err(e) => return Err(e),
        };
        for r in [self.sim.validate(), self.osra.validate()] {
            match r {
                Err(Error::Invalid(v)) => bad.extend(v),
                Err(e) => return Err(e),
                Ok(()) => {}
            }
        }
        let bs = self.baseline.budget_split;
        if !(bs > 0.0 && bs < 1.0) {
            bad.push(InvariantViolation {
                field: "baseline.budget_split".into(),
                message: format!("must lie in (0, 1), got {bs}"),
            });
        }
        for s in &self.osra.eta_per_slice {
            if !self.slices.iter().any(|x| x.id == s.slice) {
                bad.push(InvariantViolation {
                    field: "osra.eta_per_slice".into(),
                    message: format!("slice {} is not defined", s.slice),
                });
            }
        }
        if let Some(sc) = &scenario {
            match sc.slice(self.new_slice) {
                Err(_) => bad.push(InvariantViolation {
                    field: "new_slice".into(),
                    message: format!("slice {} is not defined", self.new_slice),
                }),
                Ok(j) => {
                    let lower = sc.lower_priority_than(self.new_slice)?;
                    if lower.is_empty() {
                        bad.push(InvariantViolation {
                            field: "new_slice".into(),
                            message: format!("slice {} has no lower-priority slices", j.id),
                        });
                    }
                    for id in lower {
                        let i = sc.slice(id)?;
                        if !(j.alpha_tau > i.alpha_tau && j.alpha_rho > i.alpha_rho) {
                            bad.push(InvariantViolation {
                                field: format!("slice[{}].alpha", j.id),
                                message: format!(
                                    "new slice weights ({}, {}) must exceed slice {}'s ({}, {})",
                                    j.alpha_tau, j.alpha_rho, i.id, i.alpha_tau, i.alpha_rho
                                ),
                            });
                        }
                    }
                }
            }
        }
        match scenario {
            Some(scenario) if bad.is_empty() => Ok(ValidConfig {
                scenario,
                config: self,
            }),
            _ => Err(Error::Invalid(bad)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::DelayBound;

    #[test]
    fn reference_is_valid() {
        let v = ScenarioConfig::reference().validate().unwrap();
        assert_eq!(v.new_slice(), SliceId(1));
        assert_eq!(v.scenario.lower_priority_than(SliceId(1)).unwrap(), vec![SliceId(2), SliceId(3)]);
    }

    #[test]
    fn reference_carries_published_constants() {
        let c = ScenarioConfig::reference();
        let s = |id| c.slices.iter().find(|s| s.id == SliceId(id)).unwrap();
        assert_eq!(s(1).requirement.tau_ms, DelayBound::Bounded(2.0));
        assert_eq!(s(1).requirement.rho, 0.999);
        assert_eq!(s(1).demand_mi, 5e4);
        assert_eq!(s(2).requirement.tau_ms, DelayBound::Bounded(5.0));
        assert_eq!(s(2).requirement.rho, 0.95);
        assert_eq!(s(2).demand_mi, 8e4);
        assert_eq!(s(3).requirement.tau_ms, DelayBound::Unbounded);
        assert_eq!(s(3).requirement.rho, 1.0);
        assert_eq!(c.topology.cores.len(), 2);
        assert!(c.topology.cores.iter().all(|k| k.mips == 3e8));
        for sl in &c.slices {
            assert_eq!((sl.traffic.size_min, sl.traffic.size_max), (20, 65535));
        }
    }

    #[test]
    fn invented_values_are_labelled() {
        for key in ["capacity_mbps", "mean_rate", "burst_len", "off_time_ms", "buffer_pkts"] {
            for line in REFERENCE_TOML.lines().filter(|l| l.trim_start().starts_with(key)) {
                assert!(line.contains("# default:"), "unlabelled invented value: {line}");
            }
        }
    }

    #[test]
    fn round_trip() {
        let c = ScenarioConfig::reference();
        let back = ScenarioConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_key_is_named() {
        let text = REFERENCE_TOML.replace("horizon_s", "horizon_secs");
        let err = ScenarioConfig::from_toml(&text).unwrap_err().to_string();
        assert!(err.contains("horizon_secs"), "{err}");
    }

    #[test]
    fn weights_must_dominate() {
        let mut c = ScenarioConfig::reference();
        for s in c.slices.iter_mut().filter(|s| s.id == SliceId(1)) {
            s.alpha_tau = 0.0;
        }
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("must exceed"), "{err}");
    }

    #[test]
    fn unknown_new_slice() {
        let mut c = ScenarioConfig::reference();
        c.new_slice = SliceId(9);
        assert!(c.validate().unwrap_err().to_string().contains("new_slice"));
    }
}
