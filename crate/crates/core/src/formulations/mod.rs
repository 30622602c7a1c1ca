//! The four single-node market-clearing models and their results.

pub(crate) mod builders;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::convexcore::{self, KktResiduals, Solution, SolveStatus};
use crate::cuttingplane::{self, CutLog, CutProblem, LimitSide};
use crate::error::{Error, Result};
use crate::model::{aggregate_wind, ModelOptions, OmegaEpsRule, SystemCase};
use crate::probkit::normal_quantile;

pub use builders::{build_cc, build_ldtcc, build_ldtwcc, build_wcc, ldtwcc_terms, wcc_terms};

/// Interior-point tolerance used for every clearing solve.
pub const SOLVER_TOL: f64 = 1e-10;

/// Lexicographic perturbation on α/β linear costs so ties resolve the same way every run.
pub(crate) const TIE_BREAK: f64 = 1e-9;

pub const BALANCE: &str = "balance";
pub const RESERVE: &str = "reserve";
pub const RESERVE_REG: &str = "reserve_reg";
pub const RESERVE_EXT: &str = "reserve_ext";

pub fn p_var(id: &str) -> String {
    format!("p[{id}]")
}
pub fn alpha_var(id: &str) -> String {
    format!("alpha[{id}]")
}
pub fn beta_var(id: &str) -> String {
    format!("beta[{id}]")
}
pub fn ext_label(id: &str) -> String {
    format!("ext_{id}")
}
pub fn reg_label(id: &str) -> String {
    format!("reg_{id}")
}
pub fn reg_min_label(id: &str) -> String {
    format!("reg_min_{id}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "CC")]
    Cc,
    #[serde(rename = "WCC")]
    Wcc,
    #[serde(rename = "LDTCC")]
    LdtCc,
    #[serde(rename = "LDTWCC")]
    LdtWcc,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Cc, ModelKind::Wcc, ModelKind::LdtCc, ModelKind::LdtWcc];

    pub fn has_extreme_reserve(self) -> bool {
        matches!(self, ModelKind::LdtCc | ModelKind::LdtWcc)
    }

    pub fn cli_name(self) -> &'static str {
        match self {
            ModelKind::Cc => "cc",
            ModelKind::Wcc => "wcc",
            ModelKind::LdtCc => "ldt-cc",
            ModelKind::LdtWcc => "ldt-wcc",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Cc => "CC",
            ModelKind::Wcc => "WCC",
            ModelKind::LdtCc => "LDT-CC",
            ModelKind::LdtWcc => "LDT-WCC",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "cc" => Ok(ModelKind::Cc),
            "wcc" => Ok(ModelKind::Wcc),
            "ldt-cc" | "ldtcc" => Ok(ModelKind::LdtCc),
            "ldt-wcc" | "ldtwcc" => Ok(ModelKind::LdtWcc),
            other => Err(Error::Domain(format!("unknown model `{other}`"))),
        }
    }
}

/// Which member of the LDT-CC dual family is reported.
///
/// Summing the per-generator extreme equalities reproduces a combination of
/// the balance and reserve rows, so their multipliers are only determined up
/// to a shift along one direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DualSelection {
    /// Shift so the smallest extreme-equality multiplier among generators with
    /// β > 0 is zero.
    MinNonnegativeExtreme,
    /// Shift so Σ μₙβₙ = 0; the energy price then equals the derivative of cost
    /// with respect to demand when Ω* moves with it.
    DemandSensitivity,
}

/// State of one nonlinear expectation constraint at the returned point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonlinearSummary {
    pub label: String,
    pub generator: String,
    pub side: LimitSide,
    pub value: f64,
    pub rhs: f64,
    pub multiplier: f64,
    pub grad_p: f64,
    pub grad_alpha: f64,
    pub grad_beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClearingResult {
    pub model: ModelKind,
    pub case_hash: String,
    pub generators: Vec<String>,
    pub p: Vec<f64>,
    pub alpha: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_star: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_eps: Option<f64>,
    /// λ*ₙ = Ω*/(σ²βₙ) where βₙ > 0.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_star: Option<Vec<Option<f64>>>,
    pub sigma: f64,
    pub sigma_hat: Vec<f64>,
    pub scheduled_cost: f64,
    pub objective_value: f64,
    pub duality_gap: f64,
    pub duals: BTreeMap<String, f64>,
    #[serde(default)]
    pub nonlinear: Vec<NonlinearSummary>,
    pub cut_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cut_log: Option<CutLog>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dual_selection: Option<DualSelection>,
    pub kkt: KktResiduals,
    pub options: ModelOptions,
}

impl ClearingResult {
    pub fn beta_or_zero(&self) -> Vec<f64> {
        self.beta.clone().unwrap_or_else(|| vec![0.0; self.p.len()])
    }

    pub fn dual(&self, label: &str) -> f64 {
        self.duals.get(label).copied().unwrap_or(0.0)
    }

    /// Check the result's own invariants against `case`.
    pub fn validate(&self, case: &SystemCase, tol: f64) -> Result<()> {
        let bad = |m: String| Err(Error::Invariant(m));
        if self.generators.len() != case.generators.len() || self.p.len() != self.generators.len() {
            return bad("result does not match the case's generator list".into());
        }
        let r = case.net_demand();
        let sp: f64 = self.p.iter().sum();
        if (sp - r).abs() > tol * r.abs().max(1.0) {
            return bad(format!("Σp = {sp} but D − Ŵ = {r}"));
        }
        let sa: f64 = self.alpha.iter().sum();
        if (sa - 1.0).abs() > tol {
            return bad(format!("Σα = {sa}"));
        }
        if let Some(b) = &self.beta {
            let sb: f64 = b.iter().sum();
            if (sb - 1.0).abs() > tol {
                return bad(format!("Σβ = {sb}"));
            }
        }
        let cost = scheduled_cost(case, self.sigma, &self.p, &self.alpha, &self.beta_or_zero());
        if (cost - self.scheduled_cost).abs() > 1e-8 * cost.abs().max(1.0) {
            return bad(format!("scheduled cost {} disagrees with {cost}", self.scheduled_cost));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&serde_json::to_value(self)?)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Expected system cost Σ C₂(p² + σ²α²) + C₁p + C_β β.
pub fn scheduled_cost(case: &SystemCase, sigma: f64, p: &[f64], alpha: &[f64], beta: &[f64]) -> f64 {
    case.generators
        .iter()
        .enumerate()
        .map(|(n, g)| g.c2 * (p[n] * p[n] + sigma * sigma * alpha[n] * alpha[n]) + g.c1 * p[n] + g.c_beta * beta[n])
        .sum()
}

/// Φ⁻¹(1 − εₙ)·σ for every generator.
pub fn sigma_hats(case: &SystemCase, sigma: f64) -> Result<Vec<f64>> {
    case.generators.iter().map(|g| Ok(normal_quantile(1.0 - g.epsilon)? * sigma)).collect()
}

pub(crate) fn common_sigma_hat(case: &SystemCase, sigma: f64) -> Result<f64> {
    let e0 = case.generators[0].epsilon;
    if case.generators.iter().any(|g| g.epsilon != e0) {
        return Err(Error::Unsupported("extreme-reserve models need a common epsilon across generators".into()));
    }
    Ok(normal_quantile(1.0 - e0)? * sigma)
}

/// Ω* = Σp_max − (D − Ŵ), from summing the extreme equalities.
pub fn derive_omega_star(case: &SystemCase) -> Result<f64> {
    let omega = case.total_capacity() - case.net_demand();
    if omega < 0.0 {
        return Err(Error::Infeasible(format!(
            "capacity {} is below net demand {}",
            case.total_capacity(),
            case.net_demand()
        )));
    }
    Ok(omega)
}

/// The large-deviation bound Ω*/σ ≥ Φ⁻¹(1 − ε_ext) for every generator.
pub fn check_ldt_bound(case: &SystemCase, omega_star: f64, sigma: f64) -> Result<()> {
    for g in &case.generators {
        let need = normal_quantile(1.0 - g.epsilon_ext)?;
        if omega_star / sigma < need {
            return Err(Error::Infeasible(format!(
                "dominant point Ω* = {omega_star:.4} lies inside the {:.1e} tail boundary {:.4} of {}",
                g.epsilon_ext,
                need * sigma,
                g.id
            )));
        }
    }
    Ok(())
}

pub fn omega_eps(case: &SystemCase, omega_star: f64, sigma: f64) -> Result<f64> {
    let eps = match case.options.omega_eps_rule {
        OmegaEpsRule::RegularBoundary => common_sigma_hat(case, sigma)?,
        OmegaEpsRule::FractionOfOmegaStar { kappa } => kappa * omega_star,
    };
    if eps >= omega_star {
        return Err(Error::Infeasible(format!("region boundary Ω_ε = {eps:.4} must lie below Ω* = {omega_star:.4}")));
    }
    Ok(eps)
}

/// Shift the LDT extreme-equality dual family to the member picked by `rule`.
///
/// `direction` lists the non-extreme rows of the null direction with their
/// weights; every extreme equality moves by +1. For the aggregate model that
/// is +1 on each balance row, σ̂ on the regular reserve row and Ω* − σ̂ on the
/// extreme reserve row. `weights` are the per-generator shares of Ω* used by
/// the demand-sensitivity rule. Returns the shift applied.
pub(crate) fn normalize_ldt_duals(
    duals: &mut BTreeMap<String, f64>,
    ext_labels: &[String],
    weights: &[f64],
    direction: &[(String, f64)],
    rule: DualSelection,
) -> f64 {
    let mu: Vec<f64> = ext_labels.iter().map(|l| duals[l]).collect();
    let t = match rule {
        DualSelection::MinNonnegativeExtreme => {
            -mu.iter().zip(weights).filter(|(_, b)| **b > 1e-6).map(|(m, _)| *m).fold(f64::INFINITY, f64::min)
        }
        DualSelection::DemandSensitivity => {
            let sb: f64 = weights.iter().sum();
            -mu.iter().zip(weights).map(|(m, b)| m * b).sum::<f64>() / sb
        }
    };
    if !t.is_finite() {
        return 0.0;
    }
    for l in ext_labels {
        *duals.get_mut(l).unwrap() += t;
    }
    for (l, w) in direction {
        *duals.entry(l.clone()).or_insert(0.0) += w * t;
    }
    t
}

pub(crate) fn require_optimal(sol: &Solution, gap_tol: f64) -> Result<()> {
    match sol.status {
        SolveStatus::Optimal => {}
        SolveStatus::Infeasible => return Err(Error::Infeasible("market clearing is infeasible".into())),
        SolveStatus::IterationLimit => return Err(Error::IterationLimit("solver hit its iteration limit".into())),
    }
    if sol.duality_gap > gap_tol {
        return Err(Error::IterationLimit(format!(
            "duality gap {:.3e} exceeds tolerance {gap_tol:.1e}",
            sol.duality_gap
        )));
    }
    Ok(())
}

pub(crate) fn all_duals(sol: &Solution) -> BTreeMap<String, f64> {
    sol.duals_eq.iter().chain(&sol.duals_ineq).map(|(k, v)| (k.clone(), *v)).collect()
}

/// Clear `case` with the chosen model.
pub fn clear(case: &SystemCase, kind: ModelKind) -> Result<ClearingResult> {
    let wind = aggregate_wind(case);
    let sigma = wind.gaussian()?.std;
    let opts = case.options;
    let ids: Vec<String> = case.generators.iter().map(|g| g.id.clone()).collect();
    let sh = sigma_hats(case, sigma)?;
    let col = |sol: &Solution, f: fn(&str) -> String| -> Vec<f64> { ids.iter().map(|id| sol.value(&f(id))).collect() };

    let mut res = ClearingResult {
        model: kind,
        case_hash: case.hash(),
        generators: ids.clone(),
        p: Vec::new(),
        alpha: Vec::new(),
        beta: None,
        omega_star: None,
        omega_eps: None,
        lambda_star: None,
        sigma,
        sigma_hat: sh.clone(),
        scheduled_cost: 0.0,
        objective_value: 0.0,
        duality_gap: 0.0,
        duals: BTreeMap::new(),
        nonlinear: Vec::new(),
        cut_count: 0,
        cut_log: None,
        dual_selection: None,
        kkt: KktResiduals { stationarity: 0.0, primal: 0.0, dual: 0.0, complementarity: 0.0 },
        options: opts,
    };

    let (sol, prog_for_kkt, cut) = match kind {
        ModelKind::Cc => {
            let prog = build_cc(case)?;
            let sol = convexcore::solve(&prog, SOLVER_TOL)?;
            (sol, prog, None)
        }
        ModelKind::LdtCc => {
            let omega_star = derive_omega_star(case)?;
            check_ldt_bound(case, omega_star, sigma)?;
            res.omega_star = Some(omega_star);
            let prog = build_ldtcc(case)?;
            let sol = convexcore::solve(&prog, SOLVER_TOL)?;
            (sol, prog, None)
        }
        ModelKind::Wcc => {
            let problem = build_wcc(case)?;
            run_cuts(problem, &opts)?
        }
        ModelKind::LdtWcc => {
            let omega_star = derive_omega_star(case)?;
            check_ldt_bound(case, omega_star, sigma)?;
            let eps = omega_eps(case, omega_star, sigma)?;
            res.omega_star = Some(omega_star);
            res.omega_eps = Some(eps);
            let problem = build_ldtwcc(case, omega_star, eps)?;
            run_cuts(problem, &opts)?
        }
    };
    require_optimal(&sol, opts.duality_gap_tol)?;

    res.p = col(&sol, p_var);
    res.alpha = col(&sol, alpha_var);
    if kind.has_extreme_reserve() {
        res.beta = Some(col(&sol, beta_var));
    }
    res.objective_value = sol.objective_value;
    res.duality_gap = sol.duality_gap;
    res.duals = all_duals(&sol);
    res.kkt = convexcore::kkt_residuals(&prog_for_kkt, &sol);

    if let (Some(beta), Some(omega_star)) = (&res.beta, res.omega_star) {
        res.lambda_star = Some(beta.iter().map(|&b| (b > 1e-9).then(|| omega_star / (sigma * sigma * b))).collect());
    }
    if kind == ModelKind::LdtCc {
        let rule = DualSelection::MinNonnegativeExtreme;
        let beta = res.beta.clone().unwrap();
        let sh = common_sigma_hat(case, sigma)?;
        let omega_star = res.omega_star.unwrap();
        let ext: Vec<String> = ids.iter().map(|id| ext_label(id)).collect();
        let direction =
            [(BALANCE.to_string(), 1.0), (RESERVE_REG.to_string(), sh), (RESERVE_EXT.to_string(), omega_star - sh)];
        normalize_ldt_duals(&mut res.duals, &ext, &beta, &direction, rule);
        res.dual_selection = Some(rule);
    }
    if let Some((problem, log)) = cut {
        res.nonlinear = summarize_nonlinear(&problem, &log, &sol, &ids);
        res.cut_count = log.cut_count();
        res.cut_log = Some(log);
    }
    res.scheduled_cost = scheduled_cost(case, sigma, &res.p, &res.alpha, &res.beta_or_zero());
    Ok(res)
}

type CutOutcome = (Solution, convexcore::ConvexProgram, Option<(CutProblem, CutLog)>);

fn run_cuts(problem: CutProblem, opts: &ModelOptions) -> Result<CutOutcome> {
    let (sol, log) = cuttingplane::solve_with_cuts(&problem, opts.cut_tolerance, opts.max_cut_iterations, SOLVER_TOL)?;
    if !log.converged {
        // The last round still found violated constraints and added cuts for them.
        let last = log.iterations.last().map(|it| it.violations.as_slice()).unwrap_or(&[]);
        let rhs = |label: &str| problem.nonlinear_constraints.iter().find(|c| c.label == label).map_or(0.0, |c| c.rhs);
        let worst = last.iter().map(|(l, v)| (l.as_str(), v - rhs(l))).fold(("", f64::NEG_INFINITY), |a, b| {
            if b.1 > a.1 {
                b
            } else {
                a
            }
        });
        return Err(Error::IterationLimit(format!(
            "cut budget of {} iterations exhausted; the last round still cut {} constraints, worst excess {:.3e} on `{}`",
            log.iterations.len(),
            last.len(),
            worst.1,
            worst.0
        )));
    }
    // KKT of the final relaxation: base rows plus every cut.
    let mut prog = problem.base.clone();
    for c in log.active_cuts() {
        prog.add_ineq(c.label.clone(), c.coeffs.clone(), c.rhs);
    }
    Ok((sol, prog, Some((problem, log))))
}

fn summarize_nonlinear(problem: &CutProblem, log: &CutLog, sol: &Solution, ids: &[String]) -> Vec<NonlinearSummary> {
    problem
        .nonlinear_constraints
        .iter()
        .map(|c| {
            let g = c.gradient(&sol.x);
            let at = |name: String| problem.base.var_index(&name).map(|i| g[i]).unwrap_or(0.0);
            debug_assert!(ids.contains(&c.generator));
            NonlinearSummary {
                label: c.label.clone(),
                generator: c.generator.clone(),
                side: c.side,
                value: c.value(&sol.x),
                rhs: c.rhs,
                multiplier: log.multipliers.get(&c.label).copied().unwrap_or(0.0),
                grad_p: at(p_var(&c.generator)),
                grad_alpha: at(alpha_var(&c.generator)),
                grad_beta: at(beta_var(&c.generator)),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests;
