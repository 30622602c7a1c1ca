//! DC-network LDT-CC clearing: nodal balances with line limits, either with
//! system-wide reserve shares or with locational reserve matrices (A, B)
//! indexed by wind node.
//!
//! Flows follow f = B(θ_from − θ_to) with B in MW/rad; the first node is the
//! angle reference. Reserve deliverability after activation is not modeled:
//! line limits apply to the scheduled operating point only.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::convexcore::{self, ConvexProgram, LinearExpr};
use crate::error::{Error, Result};
use crate::formulations::builders::{add_extreme_rows, add_generator_vars, add_regular_rows, add_reserve_rows};
use crate::formulations::{
    all_duals, alpha_var, beta_var, check_ldt_bound, common_sigma_hat, derive_omega_star, ext_label,
    normalize_ldt_duals, p_var, reg_label, reg_min_label, require_optimal, scheduled_cost, sigma_hats, ClearingResult,
    DualSelection, ModelKind, RESERVE_EXT, RESERVE_REG, SOLVER_TOL, TIE_BREAK,
};
use crate::model::{aggregate_wind, NetworkSpec, Node, SystemCase, SYSTEM_NODE};
use crate::pricing::{EnergyPrice, PriceSet};
use crate::probkit::normal_quantile;

pub fn balance_label(node: &str) -> String {
    format!("balance_{node}")
}
pub fn flow_var(line: &str) -> String {
    format!("f[{line}]")
}
pub fn theta_var(node: &str) -> String {
    format!("theta[{node}]")
}
pub fn flow_label(line: &str) -> String {
    format!("flow_{line}")
}
pub fn flow_max_label(line: &str) -> String {
    format!("flow_max_{line}")
}
pub fn flow_min_label(line: &str) -> String {
    format!("flow_min_{line}")
}
pub fn a_var(gen: &str, node: &str) -> String {
    format!("A[{gen},{node}]")
}
pub fn b_var(gen: &str, node: &str) -> String {
    format!("B[{gen},{node}]")
}
pub fn reserve_reg_label(node: &str) -> String {
    format!("{RESERVE_REG}_{node}")
}
pub fn reserve_ext_label(node: &str) -> String {
    format!("{RESERVE_EXT}_{node}")
}

/// How the per-wind-node dominant points are resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodalOmegaRule {
    /// Ω*ᵢ = Ω*·σᵢ²/Σσ², the most likely error vector whose sum is Ω*.
    /// Summing the extreme equalities forces ΣΩ*ᵢ = Ω*, so only the split is
    /// free.
    DominantPointSplit,
}

/// Reserve layout of the locational model; matrices are generator × wind node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationalReserves {
    pub wind_nodes: Vec<String>,
    pub node_sigma: Vec<f64>,
    /// dΩ*ᵢ/dΩ*, the share of the dominant point carried by each wind node.
    pub weights: Vec<f64>,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub omega_star: BTreeMap<String, f64>,
    pub omega_star_rule: NodalOmegaRule,
    /// Whether Ω*ᵢ/σᵢ clears Φ⁻¹(1 − ε_ext) at each wind node.
    pub ldt_bound_met: BTreeMap<String, bool>,
    pub reserve_prices: BTreeMap<String, (f64, f64)>,
    /// Multiplier of each regular-limit cone.
    pub cone_duals: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkClearingResult {
    #[serde(flatten)]
    pub base: ClearingResult,
    pub lmp: BTreeMap<String, f64>,
    pub flows: BTreeMap<String, f64>,
    pub angles: BTreeMap<String, f64>,
    /// (η⁺, η⁻) of the upper and lower flow limits.
    pub congestion_duals: BTreeMap<String, (f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub locational: Option<LocationalReserves>,
}

impl NetworkClearingResult {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&serde_json::to_value(self)?)?)
    }

    /// Nodal balances, flow limits and reserve sums.
    pub fn validate(&self, case: &SystemCase, tol: f64) -> Result<()> {
        let net = network(case)?;
        let bad = |m: String| Err(Error::Invariant(m));
        let scale = case.total_demand().abs().max(1.0);
        for nd in &net.nodes {
            let gen: f64 =
                case.generators.iter().zip(&self.base.p).filter(|(g, _)| g.node == nd.id).map(|(_, p)| p).sum();
            let mut out = 0.0;
            for l in &net.lines {
                let f = self.flows[&l.key()];
                if l.from == nd.id {
                    out += f;
                }
                if l.to == nd.id {
                    out -= f;
                }
            }
            let resid = gen + nodal_wind(case, &nd.id) - nd.demand - out;
            if resid.abs() > tol * scale {
                return bad(format!("node {} is out of balance by {resid:.3e}", nd.id));
            }
        }
        for l in &net.lines {
            let f = self.flows[&l.key()];
            if f.abs() > l.f_max * (1.0 + tol) {
                return bad(format!("line {} carries {f} above its limit {}", l.key(), l.f_max));
            }
        }
        match &self.locational {
            None => self.base.validate(case, tol),
            Some(loc) => {
                for (k, node) in loc.wind_nodes.iter().enumerate() {
                    let sa: f64 = loc.a.iter().map(|r| r[k]).sum();
                    let sb: f64 = loc.b.iter().map(|r| r[k]).sum();
                    if (sa - 1.0).abs() > tol || (sb - 1.0).abs() > tol {
                        return bad(format!("reserve columns at {node} sum to {sa} and {sb}"));
                    }
                }
                Ok(())
            }
        }
    }
}

fn network(case: &SystemCase) -> Result<&NetworkSpec> {
    case.network.as_ref().ok_or_else(|| Error::Invariant("case has no network section".into()))
}

fn nodal_wind(case: &SystemCase, node: &str) -> f64 {
    case.wind.iter().filter(|w| w.node == node).map(|w| w.forecast).sum()
}

/// The same case on a single node named `system` with no lines.
pub fn single_node_wrapper(case: &SystemCase) -> SystemCase {
    let mut c = case.clone();
    let d = case.total_demand();
    for g in &mut c.generators {
        g.node = SYSTEM_NODE.into();
    }
    for w in &mut c.wind {
        w.node = SYSTEM_NODE.into();
    }
    c.network = Some(NetworkSpec { nodes: vec![Node { id: SYSTEM_NODE.into(), demand: d }], lines: Vec::new() });
    c.demand = Some(d);
    c
}

/// Copy of `case` with `delta` MW more demand at `node`.
pub fn with_nodal_demand(case: &SystemCase, node: &str, delta: f64) -> Result<SystemCase> {
    let mut c = case.clone();
    let net = c.network.as_mut().ok_or_else(|| Error::Invariant("case has no network section".into()))?;
    let nd = net.nodes.iter_mut().find(|n| n.id == node).ok_or_else(|| Error::UnknownNode(node.into()))?;
    nd.demand += delta;
    if let Some(d) = c.demand.as_mut() {
        *d += delta;
    }
    Ok(c)
}

/// Nodal balances −Σp + Σout f − Σin f = −(dᵢ − Ŵᵢ), flow-angle coupling and
/// flow limits.
fn add_network_rows(prog: &mut ConvexProgram, case: &SystemCase, net: &NetworkSpec, p: &[usize]) {
    let flows: Vec<usize> =
        net.lines.iter().map(|l| prog.add_var(flow_var(&l.key()), f64::NEG_INFINITY, f64::INFINITY)).collect();
    let angles: Vec<Option<usize>> = net
        .nodes
        .iter()
        .enumerate()
        .map(|(i, nd)| (i > 0).then(|| prog.add_var(theta_var(&nd.id), f64::NEG_INFINITY, f64::INFINITY)))
        .collect();
    for nd in &net.nodes {
        let mut row: Vec<(usize, f64)> =
            case.generators.iter().enumerate().filter(|(_, g)| g.node == nd.id).map(|(n, _)| (p[n], -1.0)).collect();
        for (k, l) in net.lines.iter().enumerate() {
            if l.from == nd.id {
                row.push((flows[k], 1.0));
            } else if l.to == nd.id {
                row.push((flows[k], -1.0));
            }
        }
        prog.add_eq(balance_label(&nd.id), row, -(nd.demand - nodal_wind(case, &nd.id)));
    }
    for (k, l) in net.lines.iter().enumerate() {
        let key = l.key();
        let mut row = vec![(flows[k], 1.0)];
        if let Some(t) = angles[net.node_index(&l.from).unwrap()] {
            row.push((t, -l.susceptance));
        }
        if let Some(t) = angles[net.node_index(&l.to).unwrap()] {
            row.push((t, l.susceptance));
        }
        prog.add_eq(flow_label(&key), row, 0.0);
        prog.add_ineq(flow_max_label(&key), vec![(flows[k], 1.0)], l.f_max);
        prog.add_ineq(flow_min_label(&key), vec![(flows[k], -1.0)], l.f_max);
    }
}

/// LDT-CC with the system balance replaced by nodal balances and DC flows.
pub fn build_network_ldtcc(case: &SystemCase) -> Result<ConvexProgram> {
    let net = network(case)?;
    let sigma = aggregate_wind(case).gaussian()?.std;
    let sh = common_sigma_hat(case, sigma)?;
    let omega_star = derive_omega_star(case)?;
    let mut prog = ConvexProgram::new();
    let v = add_generator_vars(&mut prog, case, sigma, true);
    add_network_rows(&mut prog, case, net, &v.p);
    add_reserve_rows(&mut prog, &v);
    add_regular_rows(&mut prog, case, &v, &vec![sh; case.generators.len()]);
    add_extreme_rows(&mut prog, case, &v, sh, omega_star);
    Ok(prog)
}

/// Wind nodes in network order with their σᵢ, Ω*-shares and Ω*ᵢ.
#[derive(Debug, Clone, PartialEq)]
pub struct WindNodes {
    pub nodes: Vec<String>,
    pub sigma: Vec<f64>,
    pub weights: Vec<f64>,
    pub omega_star: Vec<f64>,
}

pub fn wind_nodes(case: &SystemCase) -> Result<WindNodes> {
    let net = network(case)?;
    let total = derive_omega_star(case)?;
    let mut out = WindNodes { nodes: Vec::new(), sigma: Vec::new(), weights: Vec::new(), omega_star: Vec::new() };
    for nd in &net.nodes {
        let var: f64 = case.wind.iter().filter(|w| w.node == nd.id).map(|w| w.std * w.std).sum();
        if var > 0.0 {
            out.nodes.push(nd.id.clone());
            out.sigma.push(var.sqrt());
        }
    }
    if out.nodes.is_empty() {
        return Err(Error::Domain("no uncertainty to balance: every wind std is zero".into()));
    }
    let tv: f64 = out.sigma.iter().map(|s| s * s).sum();
    out.weights = out.sigma.iter().map(|s| s * s / tv).collect();
    out.omega_star = out.weights.iter().map(|w| w * total).collect();
    Ok(out)
}

/// Locational LDT-CC: generator n covers share A[n,i] of the regular error and
/// B[n,i] of the extreme error at wind node i. The regular limit is the cone
/// ‖ẑ(σᵢA[n,i])ᵢ‖ ≤ p_max − p; the extreme equality is
/// p + Σᵢ ẑσᵢA[n,i] + Σᵢ (Ω*ᵢ − ẑσᵢ)B[n,i] = p_max.
pub fn build_locational_ldtcc(case: &SystemCase) -> Result<ConvexProgram> {
    let net = network(case)?;
    let wn = wind_nodes(case)?;
    let sigma = aggregate_wind(case).gaussian()?.std;
    let z = common_sigma_hat(case, sigma)? / sigma;
    let k = wn.nodes.len();
    let mut prog = ConvexProgram::new();
    let mut p = Vec::new();
    let mut a = Vec::new();
    let mut b = Vec::new();
    for (n, g) in case.generators.iter().enumerate() {
        let pi = prog.add_var(p_var(&g.id), g.p_min, g.p_max);
        prog.add_quadratic(pi, pi, g.c2);
        prog.add_linear(pi, g.c1);
        p.push(pi);
        let mut ar = Vec::new();
        let mut br = Vec::new();
        for i in 0..k {
            let ai = prog.add_var(a_var(&g.id, &wn.nodes[i]), 0.0, f64::INFINITY);
            prog.add_quadratic(ai, ai, g.c2 * wn.sigma[i] * wn.sigma[i]);
            prog.add_linear(ai, TIE_BREAK * n as f64);
            // Extreme capacity B[n,i]Ω*ᵢ is paid at C_β per MW of Ω*.
            let bi = prog.add_var(b_var(&g.id, &wn.nodes[i]), 0.0, f64::INFINITY);
            prog.add_linear(bi, g.c_beta * wn.weights[i] + TIE_BREAK * n as f64);
            ar.push(ai);
            br.push(bi);
        }
        a.push(ar);
        b.push(br);
    }
    add_network_rows(&mut prog, case, net, &p);
    for i in 0..k {
        prog.add_eq(reserve_reg_label(&wn.nodes[i]), a.iter().map(|r| (r[i], -1.0)).collect(), -1.0);
        prog.add_eq(reserve_ext_label(&wn.nodes[i]), b.iter().map(|r| (r[i], -1.0)).collect(), -1.0);
    }
    for (n, g) in case.generators.iter().enumerate() {
        let rows: Vec<LinearExpr> = (0..k).map(|i| LinearExpr::new().term(a[n][i], wn.sigma[i])).collect();
        prog.add_soc(reg_label(&g.id), z, rows.clone(), LinearExpr::new().term(p[n], -1.0).plus(g.p_max));
        if case.options.enforce_min_side {
            prog.add_soc(reg_min_label(&g.id), z, rows, LinearExpr::var(p[n]).plus(-g.p_min));
        }
        let mut row = vec![(p[n], 1.0)];
        for i in 0..k {
            row.push((a[n][i], z * wn.sigma[i]));
            row.push((b[n][i], wn.omega_star[i] - z * wn.sigma[i]));
        }
        prog.add_eq(ext_label(&g.id), row, g.p_max);
    }
    Ok(prog)
}

/// πᵢ = dual of `balance_i`; raising dᵢ by 1 MW raises cost by πᵢ.
pub fn extract_lmps(duals: &BTreeMap<String, f64>, case: &SystemCase) -> Result<BTreeMap<String, f64>> {
    network(case)?
        .nodes
        .iter()
        .map(|nd| {
            duals
                .get(&balance_label(&nd.id))
                .map(|v| (nd.id.clone(), *v))
                .ok_or_else(|| Error::InconsistentDuals(format!("no dual for the balance at {}", nd.id)))
        })
        .collect()
}

/// Clear a network case with aggregate (`locational = false`) or locational
/// reserves. Energy prices are reported in the demand-sensitivity member of
/// the dual family so they equal nodal marginal costs.
pub fn clear_network(case: &SystemCase, locational: bool) -> Result<NetworkClearingResult> {
    let net = network(case)?;
    let sigma = aggregate_wind(case).gaussian()?.std;
    let sh = common_sigma_hat(case, sigma)?;
    let omega_star = derive_omega_star(case)?;
    check_ldt_bound(case, omega_star, sigma)?;
    let ids: Vec<String> = case.generators.iter().map(|g| g.id.clone()).collect();

    let prog = if locational { build_locational_ldtcc(case)? } else { build_network_ldtcc(case)? };
    let sol = convexcore::solve(&prog, SOLVER_TOL)?;
    require_optimal(&sol, case.options.duality_gap_tol)?;
    let kkt = convexcore::kkt_residuals(&prog, &sol);
    let mut duals = all_duals(&sol);
    let p: Vec<f64> = ids.iter().map(|id| sol.value(&p_var(id))).collect();
    let ext: Vec<String> = ids.iter().map(|id| ext_label(id)).collect();
    let mut direction: Vec<(String, f64)> = net.nodes.iter().map(|n| (balance_label(&n.id), 1.0)).collect();

    let (alpha, beta, loc, cost) = if locational {
        let wn = wind_nodes(case)?;
        let z = sh / sigma;
        let grab = |f: fn(&str, &str) -> String| -> Vec<Vec<f64>> {
            ids.iter().map(|g| wn.nodes.iter().map(|i| sol.value(&f(g, i))).collect()).collect()
        };
        let a = grab(a_var);
        let b = grab(b_var);
        let share = |m: &Vec<Vec<f64>>| -> Vec<f64> {
            m.iter().map(|r| r.iter().zip(&wn.weights).map(|(x, w)| x * w).sum()).collect()
        };
        let (alpha, beta) = (share(&a), share(&b));
        for (i, node) in wn.nodes.iter().enumerate() {
            direction.push((reserve_reg_label(node), z * wn.sigma[i]));
            direction.push((reserve_ext_label(node), wn.omega_star[i] - z * wn.sigma[i]));
        }
        let cost = case
            .generators
            .iter()
            .enumerate()
            .map(|(n, g)| {
                let var: f64 = a[n].iter().zip(&wn.sigma).map(|(x, s)| (x * s).powi(2)).sum();
                g.c2 * (p[n] * p[n] + var) + g.c1 * p[n] + g.c_beta * beta[n]
            })
            .sum();
        let z_ext = case
            .generators
            .iter()
            .map(|g| normal_quantile(1.0 - g.epsilon_ext))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max);
        let cone_duals = case
            .generators
            .iter()
            .map(|g| {
                let z0 = sol.duals_soc.get(&reg_label(&g.id)).and_then(|v| v.first().copied());
                (g.id.clone(), z0.unwrap_or(0.0))
            })
            .collect();
        let loc = LocationalReserves {
            wind_nodes: wn.nodes.clone(),
            node_sigma: wn.sigma.clone(),
            weights: wn.weights.clone(),
            a,
            b,
            omega_star: wn.nodes.iter().cloned().zip(wn.omega_star.iter().copied()).collect(),
            omega_star_rule: NodalOmegaRule::DominantPointSplit,
            ldt_bound_met: wn
                .nodes
                .iter()
                .zip(wn.omega_star.iter().zip(&wn.sigma))
                .map(|(n, (o, s))| (n.clone(), o / s >= z_ext))
                .collect(),
            reserve_prices: BTreeMap::new(),
            cone_duals,
        };
        (alpha, beta, Some(loc), cost)
    } else {
        let alpha: Vec<f64> = ids.iter().map(|id| sol.value(&alpha_var(id))).collect();
        let beta: Vec<f64> = ids.iter().map(|id| sol.value(&beta_var(id))).collect();
        direction.push((RESERVE_REG.to_string(), sh));
        direction.push((RESERVE_EXT.to_string(), omega_star - sh));
        let cost = scheduled_cost(case, sigma, &p, &alpha, &beta);
        (alpha, beta, None, cost)
    };

    let rule = DualSelection::DemandSensitivity;
    normalize_ldt_duals(&mut duals, &ext, &beta, &direction, rule);
    let loc = loc.map(|mut l| {
        l.reserve_prices = l
            .wind_nodes
            .iter()
            .map(|n| (n.clone(), (duals[&reserve_reg_label(n)], duals[&reserve_ext_label(n)])))
            .collect();
        l
    });

    let lmp = extract_lmps(&duals, case)?;
    let flows = net.lines.iter().map(|l| (l.key(), sol.value(&flow_var(&l.key())))).collect();
    let angles = net
        .nodes
        .iter()
        .enumerate()
        .map(|(i, n)| (n.id.clone(), if i == 0 { 0.0 } else { sol.value(&theta_var(&n.id)) }))
        .collect();
    let congestion_duals = net
        .lines
        .iter()
        .map(|l| {
            let k = l.key();
            (k.clone(), (sol.dual_ineq(&flow_max_label(&k)), sol.dual_ineq(&flow_min_label(&k))))
        })
        .collect();

    let base = ClearingResult {
        model: ModelKind::LdtCc,
        case_hash: case.hash(),
        generators: ids,
        p,
        alpha,
        lambda_star: Some(beta.iter().map(|&b| (b > 1e-9).then(|| omega_star / (sigma * sigma * b))).collect()),
        beta: Some(beta),
        omega_star: Some(omega_star),
        omega_eps: None,
        sigma,
        sigma_hat: sigma_hats(case, sigma)?,
        scheduled_cost: cost,
        objective_value: sol.objective_value,
        duality_gap: sol.duality_gap,
        duals,
        nonlinear: Vec::new(),
        cut_count: 0,
        cut_log: None,
        dual_selection: Some(rule),
        kkt,
        options: case.options,
    };
    Ok(NetworkClearingResult { base, lmp, flows, angles, congestion_duals, locational: loc })
}

/// Nodal energy prices with the reserve prices of the clearing. For the
/// locational model ρ and χ are the prices of a uniform share across all wind
/// nodes, Σᵢρᵢ and Σᵢχᵢ.
pub fn network_prices(r: &NetworkClearingResult) -> PriceSet {
    let (rho, chi) = match &r.locational {
        None => (r.base.dual(RESERVE_REG), r.base.dual(RESERVE_EXT)),
        Some(l) => l.reserve_prices.values().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y)),
    };
    PriceSet { pi: EnergyPrice::Nodal(r.lmp.clone()), rho, chi: Some(chi) }
}

/// (Σπᵢdᵢ − Σπᵢ₍ₙ₎pₙ − ΣπᵢŴᵢ, Σ(η⁺ + η⁻)f_max): merchandising surplus and
/// congestion rent, equal at an optimum.
pub fn congestion_rent(r: &NetworkClearingResult, case: &SystemCase) -> Result<(f64, f64)> {
    let net = network(case)?;
    let load: f64 = net.nodes.iter().map(|n| r.lmp[&n.id] * n.demand).sum();
    let gen: f64 = case.generators.iter().zip(&r.base.p).map(|(g, p)| r.lmp[&g.node] * p).sum();
    let wind: f64 = case.wind.iter().map(|w| r.lmp[&w.node] * w.forecast).sum();
    let rent: f64 = net
        .lines
        .iter()
        .map(|l| {
            let (up, dn) = r.congestion_duals[&l.key()];
            (up + dn) * l.f_max
        })
        .sum();
    Ok((load - gen - wind, rent))
}
