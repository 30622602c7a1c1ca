//! Outer approximation of truncated-Gaussian expectation constraints by
//! first-order cuts.
//!
//! Every nonlinear constraint here has the form Σₖ E(μₖ(x), σₖ(x)) ≤ rhs where
//! μₖ and σₖ are affine in x and E is the expected overload.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::convexcore::{self, ConvexProgram, LinearExpr, Solution, SolveStatus};
use crate::error::{Error, Result};
use crate::model::ExtremeScale;
use crate::probkit::{expected_overload, expected_overload_grad};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LimitSide {
    Max,
    Min,
}

/// One expectation term with affine mean and scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectationTerm {
    pub mean: LinearExpr,
    pub scale: LinearExpr,
}

/// Value and (∂/∂μ, ∂/∂σ) of a single term under the given scale convention.
pub fn term_value_grad(mu: f64, sigma: f64, conv: ExtremeScale) -> (f64, f64, f64) {
    if sigma >= 0.0 {
        let (dm, ds) = expected_overload_grad(mu, sigma);
        return (expected_overload(mu, sigma), dm, ds);
    }
    match conv {
        ExtremeScale::Magnitude => {
            let (dm, ds) = expected_overload_grad(mu, -sigma);
            (expected_overload(mu, -sigma), dm, -ds)
        }
        // The closed form at σ < 0 equals −E(−μ, −σ) = E[min(Y, 0)].
        ExtremeScale::Signed => {
            let (dm, ds) = expected_overload_grad(-mu, -sigma);
            (-expected_overload(-mu, -sigma), dm, ds)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonlinearConstraint {
    pub label: String,
    pub generator: String,
    pub side: LimitSide,
    pub terms: Vec<ExpectationTerm>,
    pub rhs: f64,
    pub convention: ExtremeScale,
}

impl NonlinearConstraint {
    pub fn value(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|t| term_value_grad(t.mean.eval(x), t.scale.eval(x), self.convention).0).sum()
    }

    /// Dense gradient over all program variables.
    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        for t in &self.terms {
            let (_, dm, ds) = term_value_grad(t.mean.eval(x), t.scale.eval(x), self.convention);
            for &(i, c) in &t.mean.terms {
                g[i] += dm * c;
            }
            for &(i, c) in &t.scale.terms {
                g[i] += ds * c;
            }
        }
        g
    }

    /// True when every term is convex in x, so tangent cuts are globally valid.
    pub fn is_convex(&self) -> bool {
        self.convention == ExtremeScale::Magnitude
            || self.terms.iter().all(|t| t.scale.terms.iter().all(|&(_, c)| c >= 0.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutProblem {
    pub base: ConvexProgram,
    pub nonlinear_constraints: Vec<NonlinearConstraint>,
}

/// Linear row `coeffs·x ≤ rhs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutRow {
    pub label: String,
    pub constraint: String,
    pub coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
    /// Dropped from the relaxation when its constraint was re-linearized.
    #[serde(default)]
    pub retired: bool,
}

impl CutRow {
    pub fn lhs(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(i, c)| c * x[i]).sum()
    }
}

/// Tangent row g(x*) + ∇g(x*)·(x − x*) ≤ rhs.
pub fn make_cut(c: &NonlinearConstraint, point: &[f64], label: String) -> Result<CutRow> {
    let value = c.value(point);
    let grad = c.gradient(point);
    let coeffs: Vec<(usize, f64)> = grad.iter().enumerate().filter(|(_, g)| **g != 0.0).map(|(i, g)| (i, *g)).collect();
    if coeffs.is_empty() && value > c.rhs {
        return Err(Error::DegenerateCut(format!("`{}` is violated at a point where its gradient vanishes", c.label)));
    }
    let at: f64 = coeffs.iter().map(|&(i, g)| g * point[i]).sum();
    Ok(CutRow { label, constraint: c.label.clone(), coeffs, rhs: c.rhs - value + at, retired: false })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutIteration {
    pub violations: Vec<(String, f64)>,
    pub cuts_added: Vec<String>,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct CutLog {
    pub iterations: Vec<CutIteration>,
    pub converged: bool,
    pub cuts: Vec<CutRow>,
    /// Multiplier of each nonlinear constraint: sum of its cut duals.
    pub multipliers: BTreeMap<String, f64>,
}

impl CutLog {
    pub fn cut_count(&self) -> usize {
        self.cuts.len()
    }

    /// Cuts still present in the final relaxation.
    pub fn active_cuts(&self) -> impl Iterator<Item = &CutRow> {
        self.cuts.iter().filter(|c| !c.retired)
    }
}

const MAX_RELINEARIZE: usize = 30;

/// Kelley's loop: solve the relaxation, cut off every violated constraint,
/// repeat. Returns the last relaxation even when the iteration limit is hit;
/// check `CutLog::converged`.
pub fn solve_with_cuts(problem: &CutProblem, tol: f64, max_iter: usize, solver_tol: f64) -> Result<(Solution, CutLog)> {
    let mut prog = problem.base.clone();
    let mut log = CutLog::default();
    let mut counts = vec![0usize; problem.nonlinear_constraints.len()];
    for _ in 0..max_iter.max(1) {
        let sol = convexcore::solve(&prog, solver_tol)?;
        match sol.status {
            SolveStatus::Optimal => {}
            SolveStatus::Infeasible => return Err(Error::Infeasible("cutting-plane relaxation is infeasible".into())),
            SolveStatus::IterationLimit => {
                return Err(Error::IterationLimit("relaxation solve did not converge".into()))
            }
        }
        let mut step = CutIteration { violations: Vec::new(), cuts_added: Vec::new(), objective: sol.objective_value };
        for (k, c) in problem.nonlinear_constraints.iter().enumerate() {
            let v = c.value(&sol.x);
            if v - c.rhs > tol {
                step.violations.push((c.label.clone(), v));
                let cut = make_cut(c, &sol.x, format!("cut:{}:{}", c.label, counts[k]))?;
                counts[k] += 1;
                prog.add_ineq(cut.label.clone(), cut.coeffs.clone(), cut.rhs);
                step.cuts_added.push(cut.label.clone());
                log.cuts.push(cut);
            }
        }
        let done = step.violations.is_empty();
        log.iterations.push(step);
        if done {
            let sol = relinearize(problem, &mut log, &mut counts, sol, tol, solver_tol)?;
            log.converged = true;
            return Ok((sol, log));
        }
    }
    // Iteration limit: return the final relaxation with its violations.
    let sol = convexcore::solve(&prog, solver_tol)?;
    log.multipliers = aggregate_multipliers(problem, &log.cuts, &sol);
    Ok((sol, log))
}

/// Kelley's loop has converged, but a multiplier may be spread over cuts
/// taken at earlier iterates, so the cut duals need not equal ν·∇g(x*).
/// Refine with SQP steps: tangents of every constraint at the current point
/// plus the curvature ½ν(x − xₖ)ᵀ∇²g(x − xₖ) in the objective. At the fixed
/// point the tangents are taken at the optimum itself and the curvature term
/// vanishes. Falls back to the Kelley solution if the steps do not settle.
fn relinearize(
    problem: &CutProblem,
    log: &mut CutLog,
    counts: &mut [usize],
    kelley: Solution,
    tol: f64,
    solver_tol: f64,
) -> Result<Solution> {
    let stale = |cuts: &[CutRow], sol: &Solution, m: &BTreeMap<String, f64>| {
        problem.nonlinear_constraints.iter().any(|c| {
            let nu = m[&c.label];
            nu > 1e-9 && dual_consistency(c, cuts, sol, nu) > 1e-7 * nu.max(1.0)
        })
    };
    log.multipliers = aggregate_multipliers(problem, &log.cuts, &kelley);
    if !stale(&log.cuts, &kelley, &log.multipliers) {
        return Ok(kelley);
    }
    let mut x = kelley.x.clone();
    let mut nu = log.multipliers.clone();
    for _ in 0..MAX_RELINEARIZE {
        let mut prog = problem.base.clone();
        for c in &problem.nonlinear_constraints {
            add_curvature(&mut prog, c, &x, nu[&c.label]);
        }
        let mut cuts = Vec::new();
        for (k, c) in problem.nonlinear_constraints.iter().enumerate() {
            let cut = make_cut(c, &x, format!("cut:{}:{}", c.label, counts[k] + cuts.len()))?;
            if !cut.coeffs.is_empty() {
                prog.add_ineq(cut.label.clone(), cut.coeffs.clone(), cut.rhs);
                cuts.push(cut);
            }
        }
        let mut sol = convexcore::solve(&prog, solver_tol)?;
        if sol.status != SolveStatus::Optimal {
            break;
        }
        sol.objective_value = problem.base.objective.eval(&sol.x);
        let worst =
            problem.nonlinear_constraints.iter().map(|c| c.value(&sol.x) - c.rhs).fold(f64::NEG_INFINITY, f64::max);
        let scale = 1.0 + x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let moved = sol.x.iter().zip(&x).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        x = sol.x.clone();
        let m = aggregate_multipliers(problem, &cuts, &sol);
        if worst <= tol && moved <= 1e-9 * scale && !stale(&cuts, &sol, &m) {
            for c in &mut log.cuts {
                c.retired = true;
            }
            let mut step =
                CutIteration { violations: Vec::new(), cuts_added: Vec::new(), objective: sol.objective_value };
            for cut in cuts {
                let k = problem.nonlinear_constraints.iter().position(|c| c.label == cut.constraint).unwrap();
                counts[k] += 1;
                step.cuts_added.push(cut.label.clone());
                log.cuts.push(cut);
            }
            log.iterations.push(step);
            log.multipliers = m;
            return Ok(sol);
        }
        nu = m;
    }
    Ok(kelley)
}

/// Add ½ν(x − x₀)ᵀH(x − x₀) to the objective, H the Hessian of `c` at x₀.
/// Each convex term contributes (φ(r)/s)·uuᵀ with u = ∇μ − r∇s along its
/// affine mean and scale; concave terms (signed, negative scale) are skipped
/// so the subproblem stays convex.
fn add_curvature(prog: &mut ConvexProgram, c: &NonlinearConstraint, x0: &[f64], nu: f64) {
    if nu <= 0.0 {
        return;
    }
    for t in &c.terms {
        let mu = t.mean.eval(x0);
        let sigma = t.scale.eval(x0);
        let flip = match (sigma > 0.0, c.convention) {
            (true, _) => 1.0,
            (false, ExtremeScale::Magnitude) if sigma < 0.0 => -1.0,
            _ => continue,
        };
        let s = flip * sigma;
        let r = mu / s;
        let w = (nu * crate::probkit::normal_pdf(r) / s).min(1e8);
        if w < 1e-14 {
            continue;
        }
        let mut u: BTreeMap<usize, f64> = BTreeMap::new();
        for &(i, a) in &t.mean.terms {
            *u.entry(i).or_default() += a;
        }
        for &(i, a) in &t.scale.terms {
            *u.entry(i).or_default() -= r * flip * a;
        }
        let u: Vec<(usize, f64)> = u.into_iter().filter(|(_, v)| *v != 0.0).collect();
        let ux0: f64 = u.iter().map(|&(i, v)| v * x0[i]).sum();
        for (a, &(i, ui)) in u.iter().enumerate() {
            prog.add_quadratic(i, i, 0.5 * w * ui * ui);
            for &(j, uj) in &u[a + 1..] {
                prog.add_quadratic(i, j, w * ui * uj);
            }
            prog.add_linear(i, -w * ux0 * ui);
        }
        prog.objective.constant += 0.5 * w * ux0 * ux0;
    }
}

fn aggregate_multipliers(problem: &CutProblem, cuts: &[CutRow], sol: &Solution) -> BTreeMap<String, f64> {
    let mut m: BTreeMap<String, f64> = problem.nonlinear_constraints.iter().map(|c| (c.label.clone(), 0.0)).collect();
    for cut in cuts.iter().filter(|c| !c.retired) {
        *m.entry(cut.constraint.clone()).or_default() += sol.dual_ineq(&cut.label);
    }
    m
}

/// ‖Σ (cut dual · cut row) − ν·∇g(x)‖∞ for one constraint.
pub fn dual_consistency(c: &NonlinearConstraint, cuts: &[CutRow], sol: &Solution, multiplier: f64) -> f64 {
    let mut agg = vec![0.0; sol.x.len()];
    for cut in cuts.iter().filter(|r| r.constraint == c.label && !r.retired) {
        let d = sol.dual_ineq(&cut.label);
        for &(i, v) in &cut.coeffs {
            agg[i] += d * v;
        }
    }
    let g = c.gradient(&sol.x);
    agg.iter().zip(&g).map(|(a, gi)| (a - multiplier * gi).abs()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(rhs: f64) -> CutProblem {
        // min −x s.t. E(x − 1, 0.5) ≤ rhs, x ≤ 10.
        let mut base = ConvexProgram::new();
        let x = base.add_var("x", f64::NEG_INFINITY, 10.0);
        base.add_linear(x, -1.0);
        let c = NonlinearConstraint {
            label: "toy".into(),
            generator: "G".into(),
            side: LimitSide::Max,
            terms: vec![ExpectationTerm { mean: LinearExpr::var(x).plus(-1.0), scale: LinearExpr::constant(0.5) }],
            rhs,
            convention: ExtremeScale::Signed,
        };
        CutProblem { base, nonlinear_constraints: vec![c] }
    }

    fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn toy_matches_bisection() {
        let (sol, log) = solve_with_cuts(&toy(0.05), 1e-10, 100, 1e-10).unwrap();
        assert!(log.converged);
        let oracle = bisect(|x| expected_overload(x - 1.0, 0.5) - 0.05, -10.0, 10.0);
        assert!((sol.x[0] - oracle).abs() < 1e-6, "{} vs {oracle}", sol.x[0]);
        for w in log.iterations.windows(2) {
            assert!(w[1].objective >= w[0].objective - 1e-7);
        }
    }

    #[test]
    fn no_nonlinear_constraints_is_one_solve() {
        let mut p = toy(0.05);
        p.nonlinear_constraints.clear();
        let (sol, log) = solve_with_cuts(&p, 1e-8, 100, 1e-10).unwrap();
        assert!(log.converged);
        assert_eq!(log.iterations.len(), 1);
        assert!((sol.x[0] - 10.0).abs() < 1e-6);
    }

    #[test]
    fn degenerate_scale_gives_deterministic_row() {
        // σ̃ = 0 and μ̃ > 0: the cut is μ̃ ≤ rhs, i.e. x − 1 ≤ 0.05.
        let mut p = toy(0.05);
        p.nonlinear_constraints[0].terms[0].scale = LinearExpr::constant(0.0);
        let cut = make_cut(&p.nonlinear_constraints[0], &[3.0], "c".into()).unwrap();
        assert_eq!(cut.coeffs, vec![(0, 1.0)]);
        assert!((cut.rhs - 1.05).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_violation_is_reported() {
        let c = NonlinearConstraint {
            label: "flat".into(),
            generator: "G".into(),
            side: LimitSide::Max,
            terms: vec![ExpectationTerm { mean: LinearExpr::constant(1.0), scale: LinearExpr::constant(0.0) }],
            rhs: 0.5,
            convention: ExtremeScale::Signed,
        };
        assert!(matches!(make_cut(&c, &[0.0], "c".into()), Err(Error::DegenerateCut(_))));
    }

    #[test]
    fn signed_and_magnitude_agree_for_positive_scale() {
        for &(m, s) in &[(-1.0, 0.3), (0.5, 2.0), (0.0, 1.0)] {
            let a = term_value_grad(m, s, ExtremeScale::Signed);
            let b = term_value_grad(m, s, ExtremeScale::Magnitude);
            assert_eq!(a, b);
        }
        let (v, _, _) = term_value_grad(1.0, -2.0, ExtremeScale::Magnitude);
        assert!((v - expected_overload(1.0, 2.0)).abs() < 1e-15);
        let (v, _, _) = term_value_grad(1.0, -2.0, ExtremeScale::Signed);
        assert!((v + expected_overload(-1.0, 2.0)).abs() < 1e-15);
    }
}
