//! Text tables (2 decimals) and CSV exports (full precision).

use std::fmt::Write;

use riskclear_core::formulations::ClearingResult;
use riskclear_core::model::SystemCase;
use riskclear_core::network::NetworkClearingResult;
use riskclear_core::pricing::{EnergyPrice, PriceSet};
use serde::Serialize;

fn cell(x: Option<f64>) -> String {
    x.map_or("-".to_string(), |v| format!("{v:.2}"))
}

/// One block per model: p, α and β for each generator.
pub fn dispatch_table(case: &SystemCase, results: &[&ClearingResult]) -> String {
    let w = case.generators.iter().map(|g| g.id.len()).max().unwrap_or(0).max(9);
    let mut s = format!("{:<8} {:<w$} {:>10} {:>8} {:>8}\n", "model", "generator", "p (MW)", "alpha", "beta");
    for r in results {
        for (n, g) in case.generators.iter().enumerate() {
            let beta = r.beta.as_ref().map(|b| b[n]);
            let _ = writeln!(
                s,
                "{:<8} {:<w$} {:>10} {:>8} {:>8}",
                r.model.to_string(),
                g.id,
                cell(Some(r.p[n])),
                cell(Some(r.alpha[n])),
                cell(beta)
            );
        }
    }
    s
}

fn energy_cell(p: &PriceSet) -> String {
    match &p.pi {
        EnergyPrice::System(v) => cell(Some(*v)),
        EnergyPrice::Nodal(_) => "nodal".to_string(),
    }
}

/// π, ρ, χ and the scheduled cost per model.
pub fn price_table(rows: &[(&ClearingResult, &PriceSet)]) -> String {
    let mut s = format!("{:<8} {:>10} {:>10} {:>10} {:>12}\n", "model", "pi", "rho", "chi", "cost");
    for (r, p) in rows {
        let _ = writeln!(
            s,
            "{:<8} {:>10} {:>10} {:>10} {:>12}",
            r.model.to_string(),
            energy_cell(p),
            cell(Some(p.rho)),
            cell(p.chi),
            cell(Some(r.scheduled_cost))
        );
    }
    s
}

fn lmp_header(results: &[NetworkClearingResult]) -> Vec<String> {
    results
        .iter()
        .map(|r| {
            let tag = if r.locational.is_some() { " loc" } else { "" };
            format!("{}{tag}", r.base.model)
        })
        .collect()
}

/// Nodal demand and one LMP column per network result.
pub fn lmp_table(case: &SystemCase, results: &[NetworkClearingResult]) -> String {
    let Some(net) = &case.network else { return String::new() };
    let w = net.nodes.iter().map(|n| n.id.len()).max().unwrap_or(0).max(4);
    let mut s = format!("{:<w$} {:>10}", "node", "demand");
    for h in lmp_header(results) {
        let _ = write!(s, " {h:>12}");
    }
    s.push('\n');
    for node in &net.nodes {
        let _ = write!(s, "{:<w$} {:>10}", node.id, cell(Some(node.demand)));
        for r in results {
            let _ = write!(s, " {:>12}", cell(r.lmp.get(&node.id).copied()));
        }
        s.push('\n');
    }
    s
}

pub fn lmp_csv(case: &SystemCase, results: &[NetworkClearingResult]) -> String {
    let Some(net) = &case.network else { return String::new() };
    let mut s = String::from("node,demand");
    for h in lmp_header(results) {
        let _ = write!(s, ",{}", h.replace(' ', "_"));
    }
    s.push('\n');
    for node in &net.nodes {
        let _ = write!(s, "{},{}", node.id, node.demand);
        for r in results {
            let _ = write!(s, ",{}", r.lmp.get(&node.id).copied().unwrap_or(f64::NAN));
        }
        s.push('\n');
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareRow {
    pub model: String,
    pub generator: String,
    pub p: f64,
    pub alpha: f64,
    pub beta: Option<f64>,
    /// None when prices are nodal.
    pub pi: Option<f64>,
    pub rho: f64,
    pub chi: Option<f64>,
    pub scheduled_cost: f64,
}

pub fn compare_rows(case: &SystemCase, rows: &[(&ClearingResult, &PriceSet)]) -> Vec<CompareRow> {
    let mut out = Vec::new();
    for (r, p) in rows {
        let pi = match &p.pi {
            EnergyPrice::System(v) => Some(*v),
            EnergyPrice::Nodal(_) => None,
        };
        for (n, g) in case.generators.iter().enumerate() {
            out.push(CompareRow {
                model: r.model.to_string(),
                generator: g.id.clone(),
                p: r.p[n],
                alpha: r.alpha[n],
                beta: r.beta.as_ref().map(|b| b[n]),
                pi,
                rho: p.rho,
                chi: p.chi,
                scheduled_cost: r.scheduled_cost,
            });
        }
    }
    out
}

pub fn compare_csv(case: &SystemCase, rows: &[(&ClearingResult, &PriceSet)]) -> String {
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    let mut s = String::from("model,generator,p,alpha,beta,pi,rho,chi,scheduled_cost\n");
    for r in compare_rows(case, rows) {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.model,
            r.generator,
            r.p,
            r.alpha,
            opt(r.beta),
            opt(r.pi),
            r.rho,
            opt(r.chi),
            r.scheduled_cost
        );
    }
    s
}
