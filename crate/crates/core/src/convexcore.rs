//! Solver-agnostic convex program (quadratic objective, linear rows,
//! second-order cones) and its primal/dual solution.
//!
//! Sign convention for every multiplier reported here:
//! L = f + Σ μ·(g − b) + Σ λ·(h − c), with μ ≥ 0 for `g ≤ b` rows.
//! The backend is clarabel, which solves
//! min ½xᵀPx + qᵀx s.t. Ax + s = b, s ∈ K with stationarity Px + q + Aᵀz = 0,
//! so its z is already in that convention.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-9;

/// Affine form Σ cᵢxᵢ + constant.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LinearExpr {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl LinearExpr {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        Self { terms: Vec::new(), constant: c }
    }

    pub fn var(i: usize) -> Self {
        Self { terms: vec![(i, 1.0)], constant: 0.0 }
    }

    pub fn term(mut self, i: usize, c: f64) -> Self {
        self.terms.push((i, c));
        self
    }

    pub fn plus(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    pub fn push(&mut self, i: usize, c: f64) {
        self.terms.push((i, c));
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|&(i, c)| c * x[i]).sum::<f64>() + self.constant
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { terms: self.terms.iter().map(|&(i, c)| (i, c * s)).collect(), constant: self.constant * s }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
}

/// f(x) = Σ c·xᵢxⱼ + Σ qᵢxᵢ + constant.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub quadratic: Vec<(usize, usize, f64)>,
    pub linear: Vec<(usize, f64)>,
    pub constant: f64,
}

impl Objective {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let q: f64 = self.quadratic.iter().map(|&(i, j, c)| c * x[i] * x[j]).sum();
        let l: f64 = self.linear.iter().map(|&(i, c)| c * x[i]).sum();
        q + l + self.constant
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        for &(i, j, c) in &self.quadratic {
            g[i] += c * x[j];
            g[j] += c * x[i];
        }
        for &(i, c) in &self.linear {
            g[i] += c;
        }
        g
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearConstraint {
    pub label: String,
    pub row: Vec<(usize, f64)>,
    pub rhs: f64,
}

impl LinearConstraint {
    pub fn lhs(&self, x: &[f64]) -> f64 {
        self.row.iter().map(|&(i, c)| c * x[i]).sum()
    }
}

/// ‖scale·(rows·x)‖₂ ≤ bound·x.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SocBlock {
    pub label: String,
    pub scale: f64,
    pub rows: Vec<LinearExpr>,
    pub bound: LinearExpr,
}

impl SocBlock {
    /// ‖scale·rows‖ − bound; positive means violated.
    pub fn violation(&self, x: &[f64]) -> f64 {
        let norm = self.rows.iter().map(|r| (self.scale * r.eval(x)).powi(2)).sum::<f64>().sqrt();
        norm - self.bound.eval(x)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConvexProgram {
    pub variables: Vec<Variable>,
    pub objective: Objective,
    pub eq_constraints: Vec<LinearConstraint>,
    pub ineq_constraints: Vec<LinearConstraint>,
    pub soc_blocks: Vec<SocBlock>,
}

impl ConvexProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, name: impl Into<String>, lower: f64, upper: f64) -> usize {
        self.variables.push(Variable { name: name.into(), lower, upper });
        self.variables.len() - 1
    }

    pub fn num_vars(&self) -> usize {
        self.variables.len()
    }

    pub fn var_index(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v.name == name)
    }

    pub fn add_quadratic(&mut self, i: usize, j: usize, c: f64) {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        self.objective.quadratic.push((i, j, c));
    }

    pub fn add_linear(&mut self, i: usize, c: f64) {
        self.objective.linear.push((i, c));
    }

    pub fn add_eq(&mut self, label: impl Into<String>, row: Vec<(usize, f64)>, rhs: f64) {
        self.eq_constraints.push(LinearConstraint { label: label.into(), row, rhs });
    }

    pub fn add_ineq(&mut self, label: impl Into<String>, row: Vec<(usize, f64)>, rhs: f64) {
        self.ineq_constraints.push(LinearConstraint { label: label.into(), row, rhs });
    }

    pub fn add_soc(&mut self, label: impl Into<String>, scale: f64, rows: Vec<LinearExpr>, bound: LinearExpr) {
        self.soc_blocks.push(SocBlock { label: label.into(), scale, rows, bound });
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        let bad = |what: &str| Err(Error::Domain(format!("program: {what}")));
        for v in &self.variables {
            if v.lower.is_nan() || v.upper.is_nan() || v.lower > v.upper {
                return bad(&format!("variable `{}` has bounds [{}, {}]", v.name, v.lower, v.upper));
            }
        }
        let mut labels = HashSet::new();
        let rows = self.eq_constraints.iter().chain(&self.ineq_constraints);
        for c in rows {
            if !labels.insert(c.label.as_str()) {
                return bad(&format!("duplicate label `{}`", c.label));
            }
            if c.row.iter().any(|&(i, v)| i >= n || !v.is_finite()) || !c.rhs.is_finite() {
                return bad(&format!("row `{}` is malformed", c.label));
            }
        }
        for s in &self.soc_blocks {
            if !labels.insert(s.label.as_str()) {
                return bad(&format!("duplicate label `{}`", s.label));
            }
            let exprs = s.rows.iter().chain(std::iter::once(&s.bound));
            if exprs.flat_map(|e| e.terms.iter()).any(|&(i, _)| i >= n) || !s.scale.is_finite() {
                return bad(&format!("cone `{}` is malformed", s.label));
            }
        }
        for &(i, j, c) in &self.objective.quadratic {
            if i >= n || j >= n || !c.is_finite() {
                return bad("quadratic term out of range");
            }
        }
        if self.objective.linear.iter().any(|&(i, c)| i >= n || !c.is_finite()) {
            return bad("linear term out of range");
        }
        for (i, d) in self.hessian_diagonal().iter().enumerate() {
            if *d < 0.0 {
                return bad(&format!("objective not convex in `{}`", self.variables[i].name));
            }
        }
        Ok(())
    }

    fn hessian_diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.num_vars()];
        for &(i, j, c) in &self.objective.quadratic {
            if i == j {
                d[i] += 2.0 * c;
            }
        }
        d
    }

    /// Largest absolute coefficient, used to scale residual tolerances.
    pub fn data_norm(&self) -> f64 {
        let mut m: f64 = 0.0;
        for &(_, _, c) in &self.objective.quadratic {
            m = m.max(c.abs());
        }
        for &(_, c) in &self.objective.linear {
            m = m.max(c.abs());
        }
        for c in self.eq_constraints.iter().chain(&self.ineq_constraints) {
            m = m.max(c.rhs.abs());
            for &(_, v) in &c.row {
                m = m.max(v.abs());
            }
        }
        m
    }

    /// Plain-text listing of the program, stable for diffing.
    pub fn to_text(&self) -> String {
        let name = |i: usize| self.variables[i].name.as_str();
        let fmt_row =
            |row: &[(usize, f64)]| row.iter().map(|&(i, c)| format!("{c:+} {}", name(i))).collect::<Vec<_>>().join(" ");
        let mut out = String::new();
        out.push_str("minimize\n");
        for &(i, j, c) in &self.objective.quadratic {
            let _ = writeln!(out, "  {c:+} {}*{}", name(i), name(j));
        }
        let _ = writeln!(out, "  {}", fmt_row(&self.objective.linear));
        let _ = writeln!(out, "  {:+}", self.objective.constant);
        out.push_str("bounds\n");
        for v in &self.variables {
            let _ = writeln!(out, "  {} <= {} <= {}", v.lower, v.name, v.upper);
        }
        out.push_str("equalities\n");
        for c in &self.eq_constraints {
            let _ = writeln!(out, "  {}: {} = {}", c.label, fmt_row(&c.row), c.rhs);
        }
        out.push_str("inequalities\n");
        for c in &self.ineq_constraints {
            let _ = writeln!(out, "  {}: {} <= {}", c.label, fmt_row(&c.row), c.rhs);
        }
        out.push_str("cones\n");
        for s in &self.soc_blocks {
            let rows: Vec<String> =
                s.rows.iter().map(|r| format!("[{} {:+}]", fmt_row(&r.terms), r.constant)).collect();
            let _ = writeln!(
                out,
                "  {}: {} * ||{}|| <= {} {:+}",
                s.label,
                s.scale,
                rows.join(", "),
                fmt_row(&s.bound.terms),
                s.bound.constant
            );
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    IterationLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub status: SolveStatus,
    /// Primal values in variable order.
    pub x: Vec<f64>,
    pub primal: BTreeMap<String, f64>,
    pub duals_eq: BTreeMap<String, f64>,
    /// Inequality rows plus finite variable bounds (`lb:name`, `ub:name`).
    pub duals_ineq: BTreeMap<String, f64>,
    pub duals_soc: BTreeMap<String, Vec<f64>>,
    pub objective_value: f64,
    pub dual_objective: f64,
    pub duality_gap: f64,
    pub iterations: u32,
}

impl Solution {
    pub fn value(&self, name: &str) -> f64 {
        self.primal.get(name).copied().unwrap_or(f64::NAN)
    }

    pub fn dual_eq(&self, label: &str) -> f64 {
        self.duals_eq.get(label).copied().unwrap_or(f64::NAN)
    }

    pub fn dual_ineq(&self, label: &str) -> f64 {
        self.duals_ineq.get(label).copied().unwrap_or(0.0)
    }

    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

pub fn lower_label(name: &str) -> String {
    format!("lb:{name}")
}

pub fn upper_label(name: &str) -> String {
    format!("ub:{name}")
}

// One row of the conic form Ax + s = b, tagged by where its dual goes.
enum RowKind {
    Eq(usize),
    Ineq(usize),
    Lower(usize),
    Upper(usize),
    Soc(usize),
}

struct Conic {
    triplets: Vec<(usize, usize, f64)>,
    b: Vec<f64>,
    kinds: Vec<RowKind>,
    cones: Vec<SupportedConeT<f64>>,
}

fn to_conic(prog: &ConvexProgram) -> Conic {
    let mut triplets = Vec::new();
    let mut b = Vec::new();
    let mut kinds = Vec::new();
    let mut cones = Vec::new();

    for (k, c) in prog.eq_constraints.iter().enumerate() {
        let r = b.len();
        triplets.extend(c.row.iter().map(|&(j, v)| (r, j, v)));
        b.push(c.rhs);
        kinds.push(RowKind::Eq(k));
    }
    if !prog.eq_constraints.is_empty() {
        cones.push(SupportedConeT::ZeroConeT(prog.eq_constraints.len()));
    }

    let start = b.len();
    for (k, c) in prog.ineq_constraints.iter().enumerate() {
        let r = b.len();
        triplets.extend(c.row.iter().map(|&(j, v)| (r, j, v)));
        b.push(c.rhs);
        kinds.push(RowKind::Ineq(k));
    }
    for (j, v) in prog.variables.iter().enumerate() {
        if v.lower.is_finite() {
            triplets.push((b.len(), j, -1.0));
            b.push(-v.lower);
            kinds.push(RowKind::Lower(j));
        }
        if v.upper.is_finite() {
            triplets.push((b.len(), j, 1.0));
            b.push(v.upper);
            kinds.push(RowKind::Upper(j));
        }
    }
    if b.len() > start {
        cones.push(SupportedConeT::NonnegativeConeT(b.len() - start));
    }

    for (k, s) in prog.soc_blocks.iter().enumerate() {
        let r = b.len();
        triplets.extend(s.bound.terms.iter().map(|&(j, v)| (r, j, -v)));
        b.push(s.bound.constant);
        kinds.push(RowKind::Soc(k));
        for row in &s.rows {
            let r = b.len();
            triplets.extend(row.terms.iter().map(|&(j, v)| (r, j, -s.scale * v)));
            b.push(s.scale * row.constant);
            kinds.push(RowKind::Soc(k));
        }
        cones.push(SupportedConeT::SecondOrderConeT(s.rows.len() + 1));
    }
    Conic { triplets, b, kinds, cones }
}

fn csc(m: usize, n: usize, triplets: &[(usize, usize, f64)]) -> CscMatrix<f64> {
    // Merge duplicates and order column-major.
    let mut merged: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for &(i, j, v) in triplets {
        *merged.entry((j, i)).or_insert(0.0) += v;
    }
    let mut colptr = vec![0usize; n + 1];
    let mut rowval = Vec::with_capacity(merged.len());
    let mut nzval = Vec::with_capacity(merged.len());
    for (&(j, i), &v) in &merged {
        if v != 0.0 {
            colptr[j + 1] += 1;
            rowval.push(i);
            nzval.push(v);
        }
    }
    for j in 0..n {
        colptr[j + 1] += colptr[j];
    }
    CscMatrix::new(m, n, colptr, rowval, nzval)
}

/// Solve `prog` to relative tolerance `tol`.
///
/// Infeasibility and the iteration limit come back as a [`Solution`] with the
/// matching status (duals then hold the solver's certificate); only malformed
/// programs and numerical breakdowns are errors.
pub fn solve(prog: &ConvexProgram, tol: f64) -> Result<Solution> {
    prog.validate()?;
    let n = prog.num_vars();
    let conic = to_conic(prog);
    let m = conic.b.len();

    let mut p_trip = Vec::new();
    for &(i, j, c) in &prog.objective.quadratic {
        // c·xᵢxⱼ = ½xᵀPx with Pᵢᵢ = 2c on the diagonal, Pᵢⱼ = c above it.
        p_trip.push((i, j, if i == j { 2.0 * c } else { c }));
    }
    let p = csc(n, n, &p_trip);
    let mut q = vec![0.0; n];
    for &(i, c) in &prog.objective.linear {
        q[i] += c;
    }
    let a = csc(m, n, &conic.triplets);

    let settings = DefaultSettingsBuilder::default()
        .verbose(false)
        .max_iter(200)
        .tol_feas(tol)
        .tol_gap_abs(tol)
        .tol_gap_rel(tol)
        .tol_ktratio(tol.max(1e-8))
        .presolve_enable(false)
        .build()
        .map_err(|e| Error::Solver(format!("settings: {e}")))?;
    let mut solver = DefaultSolver::new(&p, &q, &a, &conic.b, &conic.cones, settings)
        .map_err(|e| Error::Solver(format!("{e:?}")))?;
    solver.solve();
    let sol = &solver.solution;

    let status = match sol.status {
        SolverStatus::Solved | SolverStatus::AlmostSolved => SolveStatus::Optimal,
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => SolveStatus::Infeasible,
        SolverStatus::MaxIterations | SolverStatus::MaxTime => SolveStatus::IterationLimit,
        other => return Err(Error::Solver(format!("backend stopped with {other:?}"))),
    };

    let x = sol.x.clone();
    let primal = prog.variables.iter().zip(&x).map(|(v, &xv)| (v.name.clone(), xv)).collect();
    let mut duals_eq = BTreeMap::new();
    let mut duals_ineq = BTreeMap::new();
    let mut duals_soc: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (kind, &z) in conic.kinds.iter().zip(&sol.z) {
        match *kind {
            RowKind::Eq(k) => {
                duals_eq.insert(prog.eq_constraints[k].label.clone(), z);
            }
            RowKind::Ineq(k) => {
                duals_ineq.insert(prog.ineq_constraints[k].label.clone(), z);
            }
            RowKind::Lower(j) => {
                duals_ineq.insert(lower_label(&prog.variables[j].name), z);
            }
            RowKind::Upper(j) => {
                duals_ineq.insert(upper_label(&prog.variables[j].name), z);
            }
            RowKind::Soc(k) => {
                duals_soc.entry(prog.soc_blocks[k].label.clone()).or_default().push(z);
            }
        }
    }

    let objective_value = sol.obj_val + prog.objective.constant;
    let dual_objective = sol.obj_val_dual + prog.objective.constant;
    let duality_gap = (objective_value - dual_objective).abs() / (1.0 + objective_value.abs());
    Ok(Solution {
        status,
        x,
        primal,
        duals_eq,
        duals_ineq,
        duals_soc,
        objective_value,
        dual_objective,
        duality_gap,
        iterations: sol.iterations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.primal).max(self.dual).max(self.complementarity)
    }
}

/// Max-norm residual of each KKT block, recomputed from the program data.
pub fn kkt_residuals(prog: &ConvexProgram, sol: &Solution) -> KktResiduals {
    let x = &sol.x;
    let mut grad = prog.objective.gradient(x);
    let mut primal: f64 = 0.0;
    let mut dual: f64 = 0.0;
    let mut comp: f64 = 0.0;

    for c in &prog.eq_constraints {
        let lam = sol.dual_eq(&c.label);
        for &(i, v) in &c.row {
            grad[i] += lam * v;
        }
        primal = primal.max((c.lhs(x) - c.rhs).abs());
    }
    let mut ineq = |label: &str, row: &[(usize, f64)], slack: f64| {
        let mu = sol.dual_ineq(label);
        for &(i, v) in row {
            grad[i] += mu * v;
        }
        primal = primal.max(-slack);
        dual = dual.max(-mu);
        comp = comp.max((mu * slack).abs());
    };
    for c in &prog.ineq_constraints {
        ineq(&c.label, &c.row, c.rhs - c.lhs(x));
    }
    for (j, v) in prog.variables.iter().enumerate() {
        if v.lower.is_finite() {
            ineq(&lower_label(&v.name), &[(j, -1.0)], x[j] - v.lower);
        }
        if v.upper.is_finite() {
            ineq(&upper_label(&v.name), &[(j, 1.0)], v.upper - x[j]);
        }
    }
    for s in &prog.soc_blocks {
        primal = primal.max(s.violation(x));
        let Some(z) = sol.duals_soc.get(&s.label) else { continue };
        for &(i, v) in &s.bound.terms {
            grad[i] -= z[0] * v;
        }
        for (row, zk) in s.rows.iter().zip(&z[1..]) {
            for &(i, v) in &row.terms {
                grad[i] -= zk * s.scale * v;
            }
        }
        let tail = z[1..].iter().map(|v| v * v).sum::<f64>().sqrt();
        dual = dual.max(tail - z[0]);
        let slack0 = s.bound.eval(x);
        let inner: f64 =
            z[0] * slack0 + s.rows.iter().zip(&z[1..]).map(|(r, zk)| zk * s.scale * r.eval(x)).sum::<f64>();
        comp = comp.max(inner.abs());
    }
    let stationarity = grad.iter().fold(0.0_f64, |m, g| m.max(g.abs()));
    KktResiduals { stationarity, primal, dual, complementarity: comp }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_bound_dual() {
        // min x² s.t. x ≥ 3, written as −x ≤ −3.
        let mut p = ConvexProgram::new();
        let x = p.add_var("x", f64::NEG_INFINITY, f64::INFINITY);
        p.add_quadratic(x, x, 1.0);
        p.add_ineq("floor", vec![(x, -1.0)], -3.0);
        let s = solve(&p, DEFAULT_TOL).unwrap();
        assert!(s.is_optimal());
        assert!((s.value("x") - 3.0).abs() < 1e-7);
        assert!((s.dual_ineq("floor") - 6.0).abs() < 1e-6);
        assert!((s.objective_value - 9.0).abs() < 1e-6);
        assert!(kkt_residuals(&p, &s).max() < 1e-6);
    }

    #[test]
    fn cone_norm() {
        let mut p = ConvexProgram::new();
        let x0 = p.add_var("x0", 3.0, 3.0);
        let x1 = p.add_var("x1", 4.0, 4.0);
        let t = p.add_var("t", f64::NEG_INFINITY, f64::INFINITY);
        p.add_linear(t, 1.0);
        p.add_soc("norm", 1.0, vec![LinearExpr::var(x0), LinearExpr::var(x1)], LinearExpr::var(t));
        let s = solve(&p, DEFAULT_TOL).unwrap();
        assert!((s.value("t") - 5.0).abs() < 1e-7);
        let r = kkt_residuals(&p, &s);
        assert!(r.max() < 1e-6, "{r:?}");
    }

    #[test]
    fn infeasible_status() {
        let mut p = ConvexProgram::new();
        let x = p.add_var("x", 0.0, 1.0);
        p.add_linear(x, 1.0);
        p.add_eq("fix", vec![(x, 1.0)], 2.0);
        assert_eq!(solve(&p, DEFAULT_TOL).unwrap().status, SolveStatus::Infeasible);
    }

    #[test]
    fn hand_built_lp_duals() {
        // min −x − 2y s.t. x + y ≤ 4, y ≤ 3, x,y ≥ 0 → (1,3), duals 1 and 1.
        let mut p = ConvexProgram::new();
        let x = p.add_var("x", 0.0, f64::INFINITY);
        let y = p.add_var("y", 0.0, f64::INFINITY);
        p.add_linear(x, -1.0);
        p.add_linear(y, -2.0);
        p.add_ineq("cap", vec![(x, 1.0), (y, 1.0)], 4.0);
        p.add_ineq("ylim", vec![(y, 1.0)], 3.0);
        let s = solve(&p, 1e-12).unwrap();
        assert!((s.value("x") - 1.0).abs() < 1e-8);
        assert!((s.value("y") - 3.0).abs() < 1e-8);
        assert!((s.dual_ineq("cap") - 1.0).abs() < 1e-8);
        assert!((s.dual_ineq("ylim") - 1.0).abs() < 1e-8);
        let r = kkt_residuals(&p, &s);
        assert!(r.max() < 1e-8, "{r:?}");
    }

    #[test]
    fn perturbed_primal_breaks_stationarity() {
        let mut p = ConvexProgram::new();
        let x = p.add_var("x", f64::NEG_INFINITY, f64::INFINITY);
        p.add_quadratic(x, x, 1.0);
        p.add_ineq("floor", vec![(x, -1.0)], -3.0);
        let mut s = solve(&p, DEFAULT_TOL).unwrap();
        s.x[0] += 1e-2;
        assert!(kkt_residuals(&p, &s).stationarity > 1e-3);
    }

    #[test]
    fn validation_rejects_duplicates_and_bad_bounds() {
        let mut p = ConvexProgram::new();
        let x = p.add_var("x", 0.0, 1.0);
        p.add_eq("a", vec![(x, 1.0)], 0.5);
        p.add_ineq("a", vec![(x, 1.0)], 0.5);
        assert!(p.validate().is_err());
        let mut q = ConvexProgram::new();
        q.add_var("x", 2.0, 1.0);
        assert!(q.validate().is_err());
        let mut r = ConvexProgram::new();
        let x = r.add_var("x", 0.0, 1.0);
        r.add_quadratic(x, x, -1.0);
        assert!(r.validate().is_err());
    }

    #[test]
    fn text_dump_lists_rows() {
        let mut p = ConvexProgram::new();
        let x = p.add_var("x", 0.0, 1.0);
        p.add_eq("balance", vec![(x, 1.0)], 0.5);
        let t = p.to_text();
        assert!(t.contains("balance: +1 x = 0.5"));
    }
}
