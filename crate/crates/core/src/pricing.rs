//! Prices from multipliers, settlements, and the equilibrium check.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::convexcore::{self, lower_label, upper_label, ConvexProgram, LinearExpr};
use crate::cuttingplane::{self, CutProblem, LimitSide, NonlinearConstraint};
use crate::error::{Error, Result};
use crate::formulations::{
    self, alpha_var, beta_var, ext_label, p_var, reg_label, reg_min_label, ClearingResult, ModelKind, BALANCE, RESERVE,
    RESERVE_EXT, RESERVE_REG, SOLVER_TOL,
};
use crate::model::SystemCase;

/// Relative agreement required between the two price computations.
pub const PRICE_AGREEMENT: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EnergyPrice {
    System(f64),
    Nodal(BTreeMap<String, f64>),
}

impl EnergyPrice {
    /// Price seen at `node`; a system price applies everywhere.
    pub fn at(&self, node: &str) -> f64 {
        match self {
            EnergyPrice::System(p) => *p,
            EnergyPrice::Nodal(m) => m.get(node).copied().unwrap_or(f64::NAN),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSet {
    pub pi: EnergyPrice,
    pub rho: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chi: Option<f64>,
}

impl PriceSet {
    pub fn system_pi(&self) -> f64 {
        match &self.pi {
            EnergyPrice::System(p) => *p,
            EnergyPrice::Nodal(_) => f64::NAN,
        }
    }

    /// Negative reserve prices point at a setup problem; report them.
    pub fn sign_warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if self.rho < -1e-6 {
            w.push(format!("regular reserve price is negative ({:.6})", self.rho));
        }
        if let Some(c) = self.chi.filter(|c| *c < -1e-6) {
            w.push(format!("extreme reserve price is negative ({c:.6})"));
        }
        w
    }
}

fn reserve_label(r: &ClearingResult) -> &'static str {
    if r.model.has_extreme_reserve() {
        RESERVE_REG
    } else {
        RESERVE
    }
}

/// Per-generator prices implied by the stationarity rows, for generators
/// whose corresponding variable is off its bounds.
struct Stationarity {
    pi: Vec<f64>,
    rho: Vec<f64>,
    chi: Vec<f64>,
}

fn stationarity_prices(r: &ClearingResult, case: &SystemCase) -> Stationarity {
    let tie = 1e-9;
    let beta = r.beta_or_zero();
    let omega = r.omega_star.unwrap_or(0.0);
    let mut out = Stationarity { pi: Vec::new(), rho: Vec::new(), chi: Vec::new() };
    for (n, g) in case.generators.iter().enumerate() {
        let id = &g.id;
        let sh = r.sigma_hat[n];
        let mu = r.dual(&ext_label(id));
        let delta = r.dual(&reg_label(id));
        let delta_min = r.dual(&reg_min_label(id));
        let (mut np, mut na, mut nb) = (0.0, 0.0, 0.0);
        for s in r.nonlinear.iter().filter(|s| &s.generator == id) {
            np += s.multiplier * s.grad_p;
            na += s.multiplier * s.grad_alpha;
            nb += s.multiplier * s.grad_beta;
        }
        // Off its bounds: away from them and carrying no bound multiplier.
        let free = |name: String, v: f64, lo: f64, hi: f64| {
            let span = if hi.is_finite() { (hi - lo).max(1.0) } else { 1.0 };
            let m = r.dual(&lower_label(&name)).abs() + r.dual(&upper_label(&name)).abs();
            v > lo + 1e-6 * span && v < hi - 1e-6 * span && m < 1e-6
        };
        if free(p_var(id), r.p[n], g.p_min, g.p_max) {
            out.pi.push(2.0 * g.c2 * r.p[n] + g.c1 + mu + delta - delta_min + np);
        }
        if free(alpha_var(id), r.alpha[n], 0.0, f64::INFINITY) {
            let a = 2.0 * g.c2 * r.sigma * r.sigma * r.alpha[n] + tie * n as f64 + sh * (mu + delta + delta_min) + na;
            out.rho.push(a);
        }
        if free(beta_var(id), beta[n], 0.0, f64::INFINITY) {
            out.chi.push(g.c_beta + tie * n as f64 + (omega - sh) * mu + nb);
        }
    }
    out
}

fn agree(name: &str, dual: f64, formula: &[f64]) -> Result<()> {
    for f in formula {
        if (f - dual).abs() > PRICE_AGREEMENT * dual.abs().max(1.0) {
            return Err(Error::InconsistentDuals(format!(
                "{name}: multiplier {dual:.6} but stationarity gives {f:.6}"
            )));
        }
    }
    Ok(())
}

/// π, ρ, χ read off the balance and reserve multipliers, cross-checked
/// against the stationarity rows of every generator that is off its bounds.
pub fn extract_prices(r: &ClearingResult, case: &SystemCase) -> Result<PriceSet> {
    let pi = r.dual(BALANCE);
    let rho = r.dual(reserve_label(r));
    let chi = r.model.has_extreme_reserve().then(|| r.dual(RESERVE_EXT));
    let st = stationarity_prices(r, case);
    agree("energy price", pi, &st.pi)?;
    agree("regular reserve price", rho, &st.rho)?;
    if let Some(c) = chi {
        agree("extreme reserve price", c, &st.chi)?;
    }
    Ok(PriceSet { pi: EnergyPrice::System(pi), rho, chi })
}

/// π and ρ from the ratio-of-sums closed forms, χ from the marginal extreme
/// provider. Bound multipliers enter through the same stationarity rows.
pub fn closed_form_prices_ldtcc(r: &ClearingResult, case: &SystemCase) -> Result<PriceSet> {
    if r.model != ModelKind::LdtCc {
        return Err(Error::Unsupported("closed forms apply to LDT-CC results".into()));
    }
    if let Some(g) = case.generators.iter().find(|g| g.c2 <= 0.0) {
        return Err(Error::Domain(format!("closed forms need c2 > 0 ({} has {})", g.id, g.c2)));
    }
    let s2 = r.sigma * r.sigma;
    let omega = r.omega_star.unwrap_or(0.0);
    let beta = r.beta_or_zero();
    let (mut num_pi, mut den_pi, mut num_rho, mut den_rho) = (case.net_demand(), 0.0, 1.0, 0.0);
    let mut chis = Vec::new();
    for (n, g) in case.generators.iter().enumerate() {
        let id = &g.id;
        let pv = formulations::p_var(id);
        let av = formulations::alpha_var(id);
        let mu = r.dual(&ext_label(id));
        let delta = r.dual(&reg_label(id)) + r.dual(&reg_min_label(id));
        let nu_p = r.dual(&convexcore::upper_label(&pv)) - r.dual(&convexcore::lower_label(&pv));
        let nu_a = r.dual(&convexcore::lower_label(&av));
        let sh = r.sigma_hat[n];
        num_pi += (g.c1 + mu + delta + nu_p) / (2.0 * g.c2);
        den_pi += 1.0 / (2.0 * g.c2);
        num_rho += (sh * (mu + delta) - nu_a + 1e-9 * n as f64) / (2.0 * g.c2 * s2);
        den_rho += 1.0 / (2.0 * g.c2 * s2);
        if beta[n] > 1e-6 {
            chis.push((id.clone(), g.c_beta + 1e-9 * n as f64 + mu * (omega - sh)));
        }
    }
    let chi = chis.first().map(|c| c.1).unwrap_or(f64::NAN);
    for (id, c) in &chis {
        if (c - chi).abs() > PRICE_AGREEMENT * chi.abs().max(1.0) {
            return Err(Error::InconsistentDuals(format!(
                "extreme providers disagree on χ: {id} gives {c:.6}, expected {chi:.6}"
            )));
        }
    }
    Ok(PriceSet { pi: EnergyPrice::System(num_pi / den_pi), rho: num_rho / den_rho, chi: Some(chi) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProducerSettlement {
    pub id: String,
    pub revenue: f64,
    pub cost: f64,
    pub profit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Settlement {
    pub producers: Vec<ProducerSettlement>,
    pub consumer_payment: f64,
    pub reserve_payment: f64,
    pub deficit: f64,
}

impl Settlement {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("producer,revenue,cost,profit\n");
        for p in &self.producers {
            s.push_str(&format!("{},{},{},{}\n", p.id, p.revenue, p.cost, p.profit));
        }
        s
    }
}

/// Γₙ = πpₙ + ραₙ + χβₙ against each producer's expected cost.
pub fn settle(r: &ClearingResult, prices: &PriceSet, case: &SystemCase) -> Settlement {
    let beta = r.beta_or_zero();
    let chi = prices.chi.unwrap_or(0.0);
    let s2 = r.sigma * r.sigma;
    let producers = case
        .generators
        .iter()
        .enumerate()
        .map(|(n, g)| {
            let revenue = prices.pi.at(&g.node) * r.p[n] + prices.rho * r.alpha[n] + chi * beta[n];
            let cost = g.c2 * (r.p[n] * r.p[n] + s2 * r.alpha[n] * r.alpha[n]) + g.c1 * r.p[n] + g.c_beta * beta[n];
            ProducerSettlement { id: g.id.clone(), revenue, cost, profit: revenue - cost }
        })
        .collect();
    let consumer_payment = match (&prices.pi, &case.network) {
        (EnergyPrice::Nodal(_), Some(net)) => {
            let load: f64 = net.nodes.iter().map(|nd| prices.pi.at(&nd.id) * nd.demand).sum();
            let wind: f64 = case.wind.iter().map(|w| prices.pi.at(&w.node) * w.forecast).sum();
            load - wind
        }
        _ => prices.pi.at("") * case.net_demand(),
    };
    let reserve_payment = prices.rho + chi;
    Settlement { producers, consumer_payment, reserve_payment, deficit: reserve_payment.max(0.0) }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProducerCheck {
    pub id: String,
    pub dispatched_profit: f64,
    pub best_profit: f64,
    pub gap: f64,
    pub best_response: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumReport {
    pub producers: Vec<ProducerCheck>,
    pub market_clearing_residual: f64,
    pub violations: Vec<String>,
}

impl EquilibriumReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Re-solve every producer's own profit maximization at the posted prices and
/// compare with the central dispatch.
pub fn verify_equilibrium(
    r: &ClearingResult,
    prices: &PriceSet,
    case: &SystemCase,
    tol: f64,
) -> Result<EquilibriumReport> {
    let beta = r.beta_or_zero();
    let chi = prices.chi.unwrap_or(0.0);
    let mut report = EquilibriumReport { producers: Vec::new(), market_clearing_residual: 0.0, violations: Vec::new() };
    for (n, g) in case.generators.iter().enumerate() {
        let pi = prices.pi.at(&g.node);
        let (prog, nonlinear) = producer_problem(r, case, n, pi, prices.rho, chi)?;
        let x = if nonlinear.is_empty() {
            let sol = convexcore::solve(&prog, SOLVER_TOL)?;
            formulations_require(&sol)?;
            sol.x
        } else {
            let cp = CutProblem { base: prog.clone(), nonlinear_constraints: nonlinear };
            let (sol, log) = cuttingplane::solve_with_cuts(
                &cp,
                case.options.cut_tolerance,
                case.options.max_cut_iterations,
                SOLVER_TOL,
            )?;
            if !log.converged {
                return Err(Error::IterationLimit(format!("producer {} best response", g.id)));
            }
            sol.x
        };
        let profit = |p: f64, a: f64, b: f64| {
            pi * p + prices.rho * a + chi * b - (g.c2 * (p * p + r.sigma * r.sigma * a * a) + g.c1 * p + g.c_beta * b)
        };
        let b_best = if x.len() > 2 { x[2] } else { 0.0 };
        let best = profit(x[0], x[1], b_best);
        let dispatched = profit(r.p[n], r.alpha[n], beta[n]);
        let gap = best - dispatched;
        if gap > tol {
            report.violations.push(format!(
                "{}: best response earns {best:.6} but dispatch earns {dispatched:.6} (gap {gap:.3e})",
                g.id
            ));
        }
        if dispatched < -tol {
            report.violations.push(format!("{}: negative profit {dispatched:.6}", g.id));
        }
        report.producers.push(ProducerCheck {
            id: g.id.clone(),
            dispatched_profit: dispatched,
            best_profit: best,
            gap,
            best_response: x,
        });
    }
    let sp: f64 = r.p.iter().sum();
    let sa: f64 = r.alpha.iter().sum();
    let mut res = (sp - case.net_demand()).abs().max((sa - 1.0).abs());
    if r.beta.is_some() {
        res = res.max((beta.iter().sum::<f64>() - 1.0).abs());
    }
    report.market_clearing_residual = res;
    if res > 1e-6 {
        report.violations.push(format!("markets do not clear (residual {res:.3e})"));
    }
    Ok(report)
}

fn formulations_require(sol: &convexcore::Solution) -> Result<()> {
    match sol.status {
        convexcore::SolveStatus::Optimal => Ok(()),
        convexcore::SolveStatus::Infeasible => Err(Error::Infeasible("producer problem".into())),
        convexcore::SolveStatus::IterationLimit => Err(Error::IterationLimit("producer problem".into())),
    }
}

/// One producer's profit maximization with variables (p, α[, β]) and the
/// same technical constraints it faces in the central problem.
fn producer_problem(
    r: &ClearingResult,
    case: &SystemCase,
    n: usize,
    pi: f64,
    rho: f64,
    chi: f64,
) -> Result<(ConvexProgram, Vec<NonlinearConstraint>)> {
    let g = &case.generators[n];
    let s = r.sigma;
    let sh = r.sigma_hat[n];
    let mut prog = ConvexProgram::new();
    let p = prog.add_var("p", g.p_min, g.p_max);
    // The central Σα = Σβ = 1 rows imply these bounds; one producer alone needs them.
    let a = prog.add_var("alpha", 0.0, 1.0);
    prog.add_quadratic(p, p, g.c2);
    prog.add_quadratic(a, a, g.c2 * s * s);
    prog.add_linear(p, g.c1 - pi);
    prog.add_linear(a, -rho);
    let b = r.model.has_extreme_reserve().then(|| {
        let b = prog.add_var("beta", 0.0, 1.0);
        prog.add_linear(b, g.c_beta - chi);
        b
    });
    let min_side = case.options.enforce_min_side;
    let mut nonlinear = Vec::new();
    let max_mean = LinearExpr::var(p).plus(-g.p_max);
    let min_mean = LinearExpr::new().term(p, -1.0).plus(g.p_min);
    let sides = if min_side { vec![max_mean, min_mean] } else { vec![max_mean] };
    match r.model {
        ModelKind::Cc | ModelKind::LdtCc => {
            prog.add_ineq("reg", vec![(p, 1.0), (a, sh)], g.p_max);
            if min_side {
                prog.add_ineq("reg_min", vec![(p, -1.0), (a, sh)], -g.p_min);
            }
            if let (Some(b), Some(omega)) = (b, r.omega_star) {
                prog.add_eq("ext", vec![(p, 1.0), (a, sh), (b, omega - sh)], g.p_max);
            }
        }
        ModelKind::Wcc | ModelKind::LdtWcc => {
            for (k, m) in sides.into_iter().enumerate() {
                let terms = match b {
                    Some(b) => {
                        formulations::ldtwcc_terms(m, a, b, s, r.omega_star.unwrap_or(0.0), r.omega_eps.unwrap_or(0.0))
                    }
                    None => formulations::wcc_terms(m, a, s),
                };
                let side = if k == 0 { LimitSide::Max } else { LimitSide::Min };
                nonlinear.push(NonlinearConstraint {
                    label: format!("limit{k}"),
                    generator: g.id.clone(),
                    side,
                    terms,
                    rhs: g.epsilon,
                    convention: case.options.extreme_scale,
                });
            }
        }
    }
    Ok((prog, nonlinear))
}

#[cfg(test)]
mod tests;
