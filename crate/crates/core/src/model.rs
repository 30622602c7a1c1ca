//! Market case data and its JSON form.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::probkit::GaussianSpec;

pub const SYSTEM_NODE: &str = "system";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Generator {
    pub id: String,
    #[serde(default)]
    pub p_min: f64,
    pub p_max: f64,
    pub c2: f64,
    pub c1: f64,
    pub c_beta: f64,
    pub epsilon: f64,
    pub epsilon_ext: f64,
    #[serde(default = "system_node")]
    pub node: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindSpec {
    #[serde(default)]
    pub id: String,
    pub forecast: f64,
    pub std: f64,
    #[serde(default = "system_node")]
    pub node: String,
}

fn system_node() -> String {
    SYSTEM_NODE.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Node {
    pub id: String,
    #[serde(default)]
    pub demand: f64,
}

/// DC line; flow f = susceptance·(θ_from − θ_to) with susceptance in MW/rad.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Line {
    #[serde(default)]
    pub id: String,
    pub from: String,
    pub to: String,
    pub susceptance: f64,
    pub f_max: f64,
}

impl Line {
    pub fn key(&self) -> String {
        if self.id.is_empty() {
            format!("{}-{}", self.from, self.to)
        } else {
            self.id.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub nodes: Vec<Node>,
    #[serde(default)]
    pub lines: Vec<Line>,
}

impl NetworkSpec {
    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    pub fn total_demand(&self) -> f64 {
        self.nodes.iter().map(|n| n.demand).sum()
    }

    fn is_connected(&self) -> bool {
        let n = self.nodes.len();
        if n == 0 {
            return false;
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for l in &self.lines {
                let (a, b) = (self.node_index(&l.from), self.node_index(&l.to));
                if let (Some(a), Some(b)) = (a, b) {
                    for (x, y) in [(a, b), (b, a)] {
                        if x == u && !seen[y] {
                            seen[y] = true;
                            stack.push(y);
                        }
                    }
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// Where the LDT-WCC region boundary Ω_ε sits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OmegaEpsRule {
    /// Ω_ε = Φ⁻¹(1−ε)·σ, the edge of regular coverage.
    #[default]
    RegularBoundary,
    /// Ω_ε = κ·Ω*.
    FractionOfOmegaStar { kappa: f64 },
}

/// How a negative above-region scale (α − β)σ is fed to the expectation term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ExtremeScale {
    /// Closed form evaluated at the signed scale, i.e. E[min(Y, 0)] for σ̃ < 0.
    #[default]
    Signed,
    /// Closed form evaluated at |σ̃|, i.e. E[max(Y, 0)] always.
    Magnitude,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelOptions {
    pub enforce_min_side: bool,
    pub omega_eps_rule: OmegaEpsRule,
    pub extreme_scale: ExtremeScale,
    pub cut_tolerance: f64,
    pub max_cut_iterations: usize,
    pub duality_gap_tol: f64,
}

impl Default for ModelOptions {
    fn default() -> Self {
        Self {
            enforce_min_side: false,
            omega_eps_rule: OmegaEpsRule::RegularBoundary,
            extreme_scale: ExtremeScale::Signed,
            cut_tolerance: 1e-6,
            max_cut_iterations: 100,
            duality_gap_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemCase {
    #[serde(default)]
    pub name: String,
    pub generators: Vec<Generator>,
    #[serde(default)]
    pub wind: Vec<WindSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub network: Option<NetworkSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub demand: Option<f64>,
    pub voll: f64,
    #[serde(default)]
    pub options: ModelOptions,
}

/// Aggregate forecast error: zero mean, std √(Σσᵢ²).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateWind {
    pub forecast: f64,
    pub mean: f64,
    pub std: f64,
}

impl AggregateWind {
    pub fn gaussian(&self) -> Result<GaussianSpec> {
        GaussianSpec::new(self.mean, self.std)
            .map_err(|_| Error::Invariant("no uncertainty to balance: wind std is zero".into()))
    }
}

pub fn aggregate_wind(case: &SystemCase) -> AggregateWind {
    AggregateWind {
        forecast: case.wind.iter().map(|w| w.forecast).sum(),
        mean: 0.0,
        std: case.wind.iter().map(|w| w.std * w.std).sum::<f64>().sqrt(),
    }
}

pub fn load_case(path: impl AsRef<Path>) -> Result<SystemCase> {
    let bytes = std::fs::read(path.as_ref())?;
    load_case_bytes(&bytes)
}

pub fn load_case_bytes(bytes: &[u8]) -> Result<SystemCase> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    let case: SystemCase = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::schema(path, e.into_inner().to_string())
    })?;
    case.validate()?;
    Ok(case)
}

impl SystemCase {
    pub fn validate(&self) -> Result<()> {
        let finite = |field: String, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::schema(field, "must be finite"))
            }
        };
        if self.generators.is_empty() {
            return Err(Error::Invariant("at least one generator is required".into()));
        }
        let mut ids = HashSet::new();
        for (k, g) in self.generators.iter().enumerate() {
            let f = |name: &str| format!("generators[{k}].{name}");
            for (name, v) in [("p_min", g.p_min), ("p_max", g.p_max), ("c2", g.c2), ("c1", g.c1), ("c_beta", g.c_beta)]
            {
                finite(f(name), v)?;
            }
            if !ids.insert(g.id.as_str()) {
                return Err(Error::schema(f("id"), format!("duplicate generator id `{}`", g.id)));
            }
            if g.p_min > g.p_max {
                return Err(Error::schema(f("p_min"), "p_min exceeds p_max"));
            }
            if g.c2 < 0.0 {
                return Err(Error::schema(f("c2"), "must be non-negative"));
            }
            if !(g.epsilon > 0.0 && g.epsilon < 1.0) {
                return Err(Error::schema(f("epsilon"), "must lie in (0, 1)"));
            }
            if !(g.epsilon_ext > 0.0 && g.epsilon_ext < g.epsilon) {
                return Err(Error::schema(f("epsilon_ext"), "must lie in (0, epsilon)"));
            }
        }
        for (k, w) in self.wind.iter().enumerate() {
            finite(format!("wind[{k}].forecast"), w.forecast)?;
            finite(format!("wind[{k}].std"), w.std)?;
            if w.std < 0.0 {
                return Err(Error::schema(format!("wind[{k}].std"), "must be non-negative"));
            }
            if w.forecast < 0.0 {
                return Err(Error::schema(format!("wind[{k}].forecast"), "must be non-negative"));
            }
        }
        if !(self.voll.is_finite() && self.voll >= 0.0) {
            return Err(Error::schema("voll", "must be finite and non-negative"));
        }
        self.validate_options()?;

        match (&self.network, self.demand) {
            (None, None) => return Err(Error::schema("demand", "required when network is absent")),
            (None, Some(d)) => finite("demand".into(), d)?,
            (Some(net), d) => {
                self.validate_network(net)?;
                if let Some(d) = d {
                    let total = net.total_demand();
                    if (total - d).abs() > 1e-6 * d.abs().max(1.0) {
                        return Err(Error::schema("demand", format!("{d} disagrees with nodal demand total {total}")));
                    }
                }
            }
        }
        Ok(())
    }

    fn validate_options(&self) -> Result<()> {
        let o = &self.options;
        if !(o.cut_tolerance > 0.0) {
            return Err(Error::schema("options.cut_tolerance", "must be positive"));
        }
        if !(o.duality_gap_tol > 0.0) {
            return Err(Error::schema("options.duality_gap_tol", "must be positive"));
        }
        if o.max_cut_iterations == 0 {
            return Err(Error::schema("options.max_cut_iterations", "must be at least 1"));
        }
        if let OmegaEpsRule::FractionOfOmegaStar { kappa } = o.omega_eps_rule {
            if !(kappa > 0.0 && kappa < 1.0) {
                return Err(Error::schema("options.omega_eps_rule.kappa", "must lie in (0, 1)"));
            }
        }
        Ok(())
    }

    fn validate_network(&self, net: &NetworkSpec) -> Result<()> {
        let mut ids = HashSet::new();
        for (k, n) in net.nodes.iter().enumerate() {
            if !ids.insert(n.id.as_str()) {
                return Err(Error::schema(format!("network.nodes[{k}].id"), "duplicate node id"));
            }
            if !n.demand.is_finite() {
                return Err(Error::schema(format!("network.nodes[{k}].demand"), "must be finite"));
            }
        }
        if net.nodes.is_empty() {
            return Err(Error::schema("network.nodes", "at least one node is required"));
        }
        let mut keys = HashSet::new();
        for (k, l) in net.lines.iter().enumerate() {
            for end in [&l.from, &l.to] {
                if !ids.contains(end.as_str()) {
                    return Err(Error::UnknownNode(end.clone()));
                }
            }
            if l.from == l.to {
                return Err(Error::schema(format!("network.lines[{k}]"), "line is a self-loop"));
            }
            if !(l.f_max > 0.0) {
                return Err(Error::schema(format!("network.lines[{k}].f_max"), "must be positive"));
            }
            if !(l.susceptance.is_finite() && l.susceptance > 0.0) {
                return Err(Error::schema(format!("network.lines[{k}].susceptance"), "must be positive"));
            }
            if !keys.insert(l.key()) {
                return Err(Error::schema(format!("network.lines[{k}]"), "duplicate line key"));
            }
        }
        for g in &self.generators {
            if !ids.contains(g.node.as_str()) {
                return Err(Error::UnknownNode(g.node.clone()));
            }
        }
        for w in &self.wind {
            if !ids.contains(w.node.as_str()) {
                return Err(Error::UnknownNode(w.node.clone()));
            }
        }
        if !net.is_connected() {
            return Err(Error::Invariant("network is not connected".into()));
        }
        Ok(())
    }

    /// D: the explicit demand, or the nodal total when only a network is given.
    pub fn total_demand(&self) -> f64 {
        match (self.demand, &self.network) {
            (Some(d), _) => d,
            (None, Some(net)) => net.total_demand(),
            (None, None) => 0.0,
        }
    }

    /// D − Ŵ, the load the generators must cover at zero forecast error.
    pub fn net_demand(&self) -> f64 {
        self.total_demand() - aggregate_wind(self).forecast
    }

    pub fn total_capacity(&self) -> f64 {
        self.generators.iter().map(|g| g.p_max).sum()
    }

    pub fn to_json(&self) -> Result<String> {
        // Going through Value sorts object keys.
        Ok(serde_json::to_string_pretty(&serde_json::to_value(self)?)?)
    }

    /// SHA-256 of the canonical JSON form; ties results to the case they came from.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_value(self).and_then(|v| serde_json::to_string(&v)).expect("case serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    /// Copy with every cost coefficient multiplied by `s`.
    pub fn with_scaled_costs(&self, s: f64) -> Self {
        let mut c = self.clone();
        for g in &mut c.generators {
            g.c2 *= s;
            g.c1 *= s;
            g.c_beta *= s;
        }
        c
    }
}

/// Cases shipped with the library.
pub mod bundled {
    use super::*;

    pub const ILLUSTRATIVE_JSON: &str = include_str!("../cases/illustrative.json");
    pub const ISONE8_JSON: &str = include_str!("../cases/isone8.json");
    pub const TRIANGLE3_JSON: &str = include_str!("../cases/triangle3.json");

    pub fn illustrative() -> SystemCase {
        load_case_bytes(ILLUSTRATIVE_JSON.as_bytes()).expect("bundled case is valid")
    }

    pub fn isone8() -> SystemCase {
        load_case_bytes(ISONE8_JSON.as_bytes()).expect("bundled case is valid")
    }

    /// Three nodes in a loop; the n1–n3 line binds.
    pub fn triangle3() -> SystemCase {
        load_case_bytes(TRIANGLE3_JSON.as_bytes()).expect("bundled case is valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> serde_json::Value {
        serde_json::json!({
            "generators": [{"id": "G1", "p_max": 10.0, "c2": 0.1, "c1": 1.0, "c_beta": 1.0,
                            "epsilon": 0.05, "epsilon_ext": 1e-4}],
            "wind": [{"forecast": 1.0, "std": 1.0}],
            "demand": 5.0,
            "voll": 100.0
        })
    }

    fn load(v: &serde_json::Value) -> Result<SystemCase> {
        load_case_bytes(v.to_string().as_bytes())
    }

    #[test]
    fn illustrative_case_data() {
        let c = bundled::illustrative();
        assert_eq!(c.generators.len(), 3);
        let c2: Vec<f64> = c.generators.iter().map(|g| g.c2).collect();
        let c1: Vec<f64> = c.generators.iter().map(|g| g.c1).collect();
        let cb: Vec<f64> = c.generators.iter().map(|g| g.c_beta).collect();
        let pm: Vec<f64> = c.generators.iter().map(|g| g.p_max).collect();
        assert_eq!(c2, [0.01, 0.05, 0.025]);
        assert_eq!(c1, [10.0, 35.0, 50.0]);
        assert_eq!(cb, [700.0, 300.0, 600.0]);
        assert_eq!(pm, [75.0, 160.0, 120.0]);
        assert_eq!(c.total_demand(), 270.0);
        let w = aggregate_wind(&c);
        assert_eq!((w.forecast, w.std), (150.0, 50.0));
        assert!(c.generators.iter().all(|g| g.epsilon == 0.05 && g.epsilon_ext == 5e-5));
        assert_eq!(c.voll, 9000.0);
    }

    #[test]
    fn empty_generators_rejected() {
        let mut v = minimal();
        v["generators"] = serde_json::json!([]);
        assert!(matches!(load(&v), Err(Error::Invariant(_))));
    }

    #[test]
    fn unknown_node_in_line() {
        let mut v = minimal();
        v["network"] = serde_json::json!({
            "nodes": [{"id": "system", "demand": 5.0}],
            "lines": [{"from": "system", "to": "nowhere", "susceptance": 1.0, "f_max": 1.0}]
        });
        match load(&v) {
            Err(Error::UnknownNode(n)) => assert_eq!(n, "nowhere"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn schema_errors_name_the_field() {
        let mut v = minimal();
        v["generators"][0]["p_max"] = serde_json::json!("big");
        match load(&v) {
            Err(Error::Schema { field, .. }) => assert_eq!(field, "generators[0].p_max"),
            other => panic!("{other:?}"),
        }
        let mut v = minimal();
        v["generators"][0]["epsilon_ext"] = serde_json::json!(0.5);
        match load(&v) {
            Err(Error::Schema { field, .. }) => assert_eq!(field, "generators[0].epsilon_ext"),
            other => panic!("{other:?}"),
        }
        assert!(load_case_bytes(b"{not json").is_err());
    }

    #[test]
    fn wind_aggregation() {
        let mut v = minimal();
        v["wind"] = serde_json::json!([{"forecast": 1.0, "std": 3.0}, {"forecast": 2.0, "std": 4.0}]);
        let w = aggregate_wind(&load(&v).unwrap());
        assert_eq!((w.forecast, w.std, w.mean), (3.0, 5.0, 0.0));
        v["wind"] = serde_json::json!([]);
        let c = load(&v).unwrap();
        let w = aggregate_wind(&c);
        assert_eq!((w.forecast, w.std), (0.0, 0.0));
        assert!(w.gaussian().is_err());
    }

    #[test]
    fn round_trip_bundled() {
        for c in [bundled::illustrative(), bundled::isone8(), bundled::triangle3()] {
            let again = load_case_bytes(c.to_json().unwrap().as_bytes()).unwrap();
            assert_eq!(c, again);
            assert_eq!(c.hash(), again.hash());
        }
    }

    #[test]
    fn demand_must_match_network() {
        let mut v = minimal();
        v["network"] = serde_json::json!({"nodes": [{"id": "system", "demand": 7.0}]});
        assert!(matches!(load(&v), Err(Error::Schema { .. })));
    }
}
