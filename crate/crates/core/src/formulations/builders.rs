use crate::convexcore::{ConvexProgram, LinearExpr};
use crate::cuttingplane::{CutProblem, ExpectationTerm, LimitSide, NonlinearConstraint};
use crate::error::Result;
use crate::model::{aggregate_wind, SystemCase};
use crate::probkit::{lower_hazard, region_variance_factors, upper_hazard};

use super::*;

pub(crate) struct Vars {
    pub p: Vec<usize>,
    pub alpha: Vec<usize>,
    pub beta: Vec<usize>,
}

/// Per-generator (p, α[, β]) with the expected-cost objective.
pub(crate) fn add_generator_vars(prog: &mut ConvexProgram, case: &SystemCase, sigma: f64, with_beta: bool) -> Vars {
    let mut v = Vars { p: Vec::new(), alpha: Vec::new(), beta: Vec::new() };
    for (n, g) in case.generators.iter().enumerate() {
        let p = prog.add_var(p_var(&g.id), g.p_min, g.p_max);
        // α, β ≤ 1 is implied by the reserve rows; an explicit bound would make
        // the reserve prices non-unique whenever one unit carries all reserve.
        let a = prog.add_var(alpha_var(&g.id), 0.0, f64::INFINITY);
        prog.add_quadratic(p, p, g.c2);
        prog.add_linear(p, g.c1);
        prog.add_quadratic(a, a, g.c2 * sigma * sigma);
        prog.add_linear(a, TIE_BREAK * n as f64);
        v.p.push(p);
        v.alpha.push(a);
        if with_beta {
            let b = prog.add_var(beta_var(&g.id), 0.0, f64::INFINITY);
            prog.add_linear(b, g.c_beta + TIE_BREAK * n as f64);
            v.beta.push(b);
        }
    }
    v
}

// Rows are written demand-minus-supply so their multipliers read as prices.
pub(crate) fn add_reserve_rows(prog: &mut ConvexProgram, v: &Vars) {
    let with_beta = !v.beta.is_empty();
    let reserve = if with_beta { RESERVE_REG } else { RESERVE };
    prog.add_eq(reserve, v.alpha.iter().map(|&i| (i, -1.0)).collect(), -1.0);
    if with_beta {
        prog.add_eq(RESERVE_EXT, v.beta.iter().map(|&i| (i, -1.0)).collect(), -1.0);
    }
}

fn base(case: &SystemCase, sigma: f64, with_beta: bool) -> (ConvexProgram, Vars) {
    let mut prog = ConvexProgram::new();
    let v = add_generator_vars(&mut prog, case, sigma, with_beta);
    prog.add_eq(BALANCE, v.p.iter().map(|&i| (i, -1.0)).collect(), -case.net_demand());
    add_reserve_rows(&mut prog, &v);
    (prog, v)
}

pub(crate) fn add_regular_rows(prog: &mut ConvexProgram, case: &SystemCase, v: &Vars, sh: &[f64]) {
    for (n, g) in case.generators.iter().enumerate() {
        prog.add_ineq(reg_label(&g.id), vec![(v.p[n], 1.0), (v.alpha[n], sh[n])], g.p_max);
        if case.options.enforce_min_side {
            prog.add_ineq(reg_min_label(&g.id), vec![(v.p[n], -1.0), (v.alpha[n], sh[n])], -g.p_min);
        }
    }
}

/// p + (α − β)σ̂ + βΩ* = p_max per generator.
pub(crate) fn add_extreme_rows(prog: &mut ConvexProgram, case: &SystemCase, v: &Vars, sh: f64, omega_star: f64) {
    for (n, g) in case.generators.iter().enumerate() {
        prog.add_eq(ext_label(&g.id), vec![(v.p[n], 1.0), (v.alpha[n], sh), (v.beta[n], omega_star - sh)], g.p_max);
    }
}

/// Chance-constrained dispatch with affine reserve policy.
pub fn build_cc(case: &SystemCase) -> Result<ConvexProgram> {
    let sigma = aggregate_wind(case).gaussian()?.std;
    let sh = sigma_hats(case, sigma)?;
    let (mut prog, v) = base(case, sigma, false);
    add_regular_rows(&mut prog, case, &v, &sh);
    Ok(prog)
}

/// LDT-CC with Ω* fixed by [`derive_omega_star`], which makes βΩ* linear.
pub fn build_ldtcc(case: &SystemCase) -> Result<ConvexProgram> {
    let sigma = aggregate_wind(case).gaussian()?.std;
    let sh = common_sigma_hat(case, sigma)?;
    let omega_star = derive_omega_star(case)?;
    let (mut prog, v) = base(case, sigma, true);
    add_regular_rows(&mut prog, case, &v, &vec![sh; case.generators.len()]);
    add_extreme_rows(&mut prog, case, &v, sh, omega_star);
    Ok(prog)
}

fn limit_mean(v: &Vars, n: usize, side: LimitSide, case: &SystemCase) -> LinearExpr {
    let g = &case.generators[n];
    match side {
        LimitSide::Max => LinearExpr::var(v.p[n]).plus(-g.p_max),
        LimitSide::Min => LinearExpr::new().term(v.p[n], -1.0).plus(g.p_min),
    }
}

fn sides(case: &SystemCase) -> Vec<LimitSide> {
    if case.options.enforce_min_side {
        vec![LimitSide::Max, LimitSide::Min]
    } else {
        vec![LimitSide::Max]
    }
}

fn side_tag(side: LimitSide) -> &'static str {
    match side {
        LimitSide::Max => "max",
        LimitSide::Min => "min",
    }
}

/// Weighted chance constraints: E[max(p + αΩ − p_max, 0)] ≤ ε per generator.
pub fn build_wcc(case: &SystemCase) -> Result<CutProblem> {
    let sigma = aggregate_wind(case).gaussian()?.std;
    let (prog, v) = base(case, sigma, false);
    let mut nl = Vec::new();
    for (n, g) in case.generators.iter().enumerate() {
        for side in sides(case) {
            nl.push(NonlinearConstraint {
                label: format!("wcc_{}_{}", side_tag(side), g.id),
                generator: g.id.clone(),
                side,
                terms: wcc_terms(limit_mean(&v, n, side, case), v.alpha[n], sigma),
                rhs: g.epsilon,
                convention: case.options.extreme_scale,
            });
        }
    }
    Ok(CutProblem { base: prog, nonlinear_constraints: nl })
}

/// LDT-WCC: the expectation is split at Ω_ε into a regular region (affine in
/// α) and an extreme region (shifted by βΩ*), each with its conditional
/// moments.
pub fn build_ldtwcc(case: &SystemCase, omega_star: f64, omega_eps: f64) -> Result<CutProblem> {
    if !(omega_eps < omega_star) {
        return Err(Error::Domain(format!("need Ω_ε < Ω*, got {omega_eps} and {omega_star}")));
    }
    let sigma = aggregate_wind(case).gaussian()?.std;
    let (prog, v) = base(case, sigma, true);
    let mut nl = Vec::new();
    for (n, g) in case.generators.iter().enumerate() {
        for side in sides(case) {
            let m0 = limit_mean(&v, n, side, case);
            let terms = ldtwcc_terms(m0, v.alpha[n], v.beta[n], sigma, omega_star, omega_eps);
            nl.push(NonlinearConstraint {
                label: format!("ldtwcc_{}_{}", side_tag(side), g.id),
                generator: g.id.clone(),
                side,
                terms,
                rhs: g.epsilon,
                convention: case.options.extreme_scale,
            });
        }
    }
    Ok(CutProblem { base: prog, nonlinear_constraints: nl })
}

/// Single expectation term E(mean, σα).
pub fn wcc_terms(mean: LinearExpr, alpha: usize, sigma: f64) -> Vec<ExpectationTerm> {
    vec![ExpectationTerm { mean, scale: LinearExpr::new().term(alpha, sigma) }]
}

/// Region terms split at z = Ω_ε/σ, with conditional moments
/// below: μ − ασh_b, ασ√v_b; above: μ + βΩ* + (α − β)σh_a, (α − β)σ√v_a.
pub fn ldtwcc_terms(
    mean: LinearExpr,
    alpha: usize,
    beta: usize,
    sigma: f64,
    omega_star: f64,
    omega_eps: f64,
) -> Vec<ExpectationTerm> {
    let z = omega_eps / sigma;
    let hb = lower_hazard(z);
    let ha = upper_hazard(z);
    let (vb, va) = region_variance_factors(z);
    let below = ExpectationTerm {
        mean: mean.clone().term(alpha, -sigma * hb),
        scale: LinearExpr::new().term(alpha, sigma * vb.sqrt()),
    };
    let above = ExpectationTerm {
        mean: mean.term(beta, omega_star - sigma * ha).term(alpha, sigma * ha),
        scale: LinearExpr::new().term(alpha, sigma * va.sqrt()).term(beta, -sigma * va.sqrt()),
    };
    vec![below, above]
}
