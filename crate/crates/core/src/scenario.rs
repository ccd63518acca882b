//! Scenario files: network, safe set, grid, controller and run settings.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::controller_names;
use crate::geometry::{GeometryError, SafeSet, SafetyExpr};
use crate::mpc::{ConfigError, MpcConfig};
use crate::network::{DemandBox, Network, NetworkError, NetworkSpec};
use crate::pipeline::{Synthesis, SynthesisError};
use crate::reach::{Reach, ReachError};
use crate::sampler::sampler_names;

const BUNDLED: &[(&str, &str)] = &[
    ("paper_fig2", include_str!("../scenarios/paper_fig2.json")),
    ("desk2", include_str!("../scenarios/desk2.json")),
    ("arterial4", include_str!("../scenarios/arterial4.json")),
];

pub fn bundled_names() -> impl Iterator<Item = &'static str> {
    BUNDLED.iter().map(|(n, _)| *n)
}

pub fn bundled(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed scenario {path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("network: {0}")]
    Network(#[from] NetworkError),
    #[error("safety expression: {0}")]
    Geometry(#[from] GeometryError),
    #[error("mpc: {0}")]
    Config(#[from] ConfigError),
    #[error("reach: {0}")]
    Reach(#[from] ReachError),
    #[error("breakpoints given for unknown link {0}")]
    UnknownBreakpointLink(u32),
    #[error("breakpoint {value} on link {link} outside (0, {capacity})")]
    BreakpointRange { link: u32, value: f64, capacity: f64 },
    #[error("initial state has {got} entries for {expected} links or lies outside the state space")]
    InitialState { expected: usize, got: usize },
    #[error("unknown {kind} '{name}'")]
    UnknownStrategy { kind: &'static str, name: String },
}

/// Network given inline or as a path relative to the scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NetworkRef {
    Inline(NetworkSpec),
    Path(PathBuf),
}

fn default_steps() -> usize {
    20
}

fn default_controller() -> String {
    "mpc".into()
}

fn default_sampler() -> String {
    "uniform".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub network: NetworkRef,
    pub safety: SafetyExpr,
    /// Extra interior breakpoints keyed by link id.
    #[serde(default)]
    pub breakpoints: BTreeMap<u32, Vec<f64>>,
    /// Replaces the network's demand set when present.
    #[serde(default)]
    pub demand: Option<Vec<DemandBox>>,
    pub mpc: MpcConfig,
    pub initial_state: Vec<f64>,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_controller")]
    pub controller: String,
    #[serde(default = "default_sampler")]
    pub demand_sampler: String,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

/// A scenario with every reference resolved and cross-checked.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub scenario: Scenario,
    pub net: Network,
    pub safe: SafeSet,
    /// Extra breakpoints in link order.
    pub extra: Vec<Vec<f64>>,
}

impl Scenario {
    pub fn from_json(text: &str, origin: &Path) -> Result<Self, ScenarioError> {
        serde_json::from_str(text).map_err(|source| ScenarioError::Json { path: origin.to_path_buf(), source })
    }

    /// Load from a file, or from the bundled set when `path` names one and
    /// no such file exists.
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        if !path.exists() {
            if let Some(text) = path.to_str().and_then(bundled) {
                return Self::from_json(text, path);
            }
        }
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io { path: path.to_path_buf(), source })?;
        let mut s = Self::from_json(&text, path)?;
        if let NetworkRef::Path(p) = &s.network {
            let full = path.parent().unwrap_or(Path::new(".")).join(p);
            let text = std::fs::read_to_string(&full).map_err(|source| ScenarioError::Io { path: full.clone(), source })?;
            let spec = serde_json::from_str(&text).map_err(|source| ScenarioError::Json { path: full, source })?;
            s.network = NetworkRef::Inline(spec);
        }
        Ok(s)
    }

    pub fn bundled(name: &str) -> Option<Self> {
        bundled(name).map(|t| Self::from_json(t, Path::new(name)).expect("bundled scenarios parse"))
    }

    /// Validate everything the pipeline and the closed loop will need.
    pub fn resolve(self) -> Result<Resolved, ScenarioError> {
        let mut spec = match &self.network {
            NetworkRef::Inline(spec) => spec.clone(),
            NetworkRef::Path(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ScenarioError::Io { path: p.clone(), source })?;
                serde_json::from_str(&text).map_err(|source| ScenarioError::Json { path: p.clone(), source })?
            }
        };
        if let Some(d) = &self.demand {
            spec.demand = d.clone();
        }
        let net = spec.validate()?;
        Reach::new(&net)?;
        let safe = self.safety.compile(&net, true)?;

        let mut extra = vec![Vec::new(); net.len()];
        for (&id, pts) in &self.breakpoints {
            let l = net.index_of(id).ok_or(ScenarioError::UnknownBreakpointLink(id))?;
            let capacity = net.capacity(l);
            if let Some(&value) = pts.iter().find(|&&v| !(v > 0.0 && v < capacity)) {
                return Err(ScenarioError::BreakpointRange { link: id, value, capacity });
            }
            extra[l] = pts.clone();
        }

        self.mpc.validate(&net)?;
        if self.initial_state.len() != net.len() || !net.in_state_space(&self.initial_state) {
            return Err(ScenarioError::InitialState { expected: net.len(), got: self.initial_state.len() });
        }
        if !controller_names().any(|n| n == self.controller) {
            return Err(ScenarioError::UnknownStrategy { kind: "controller", name: self.controller.clone() });
        }
        if !sampler_names().any(|n| n == self.demand_sampler) {
            return Err(ScenarioError::UnknownStrategy { kind: "demand sampler", name: self.demand_sampler.clone() });
        }
        Ok(Resolved { scenario: self, net, safe, extra })
    }
}

impl Resolved {
    pub fn synthesize(&self) -> Result<Synthesis, SynthesisError> {
        Synthesis::run(self.net.clone(), self.safe.clone(), &self.extra)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_scenarios_resolve() {
        for name in bundled_names() {
            let s = Scenario::bundled(name).unwrap();
            assert_eq!(s.name, name);
            s.resolve().unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }

    #[test]
    fn bad_breakpoint_is_rejected() {
        let mut s = Scenario::bundled("desk2").unwrap();
        s.breakpoints.insert(1, vec![12.0]);
        assert!(matches!(s.resolve(), Err(ScenarioError::BreakpointRange { link: 1, .. })));
        let mut s = Scenario::bundled("desk2").unwrap();
        s.breakpoints.insert(9, vec![1.0]);
        assert!(matches!(s.resolve(), Err(ScenarioError::UnknownBreakpointLink(9))));
    }

    #[test]
    fn unknown_controller_is_rejected() {
        let mut s = Scenario::bundled("desk2").unwrap();
        s.controller = "fixed-time".into();
        assert!(matches!(s.resolve(), Err(ScenarioError::UnknownStrategy { kind: "controller", .. })));
    }
}
