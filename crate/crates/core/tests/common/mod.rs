// Gauss–Kronrod nodes and weights are copied at their tabulated precision.
#![allow(clippy::excessive_precision, dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use riskclear_core::model::{Generator, ModelOptions, SystemCase, WindSpec};

const GK_NODES: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.0,
];
const GK_WEIGHTS: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const GAUSS_WEIGHTS: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

fn gk15(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = GK_WEIGHTS[7] * fc;
    let mut g = GAUSS_WEIGHTS[3] * fc;
    for i in 0..7 {
        let x = h * GK_NODES[i];
        let s = f(c - x) + f(c + x);
        k += GK_WEIGHTS[i] * s;
        if i % 2 == 1 {
            g += GAUSS_WEIGHTS[i / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// Adaptive Gauss–Kronrod 7/15 on [a, b] to absolute tolerance `tol`.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
        let (v, err) = gk15(f, a, b);
        if err <= tol || depth > 50 {
            return v;
        }
        let m = 0.5 * (a + b);
        rec(f, a, m, 0.5 * tol, depth + 1) + rec(f, m, b, 0.5 * tol, depth + 1)
    }
    rec(f, a, b, tol, 0)
}

pub fn phi(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// E[max(μ + σZ, 0)] by quadrature; for σ < 0 the signed form E[min(μ + |σ|Z, 0)].
pub fn overload_by_quadrature(mu: f64, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return mu.max(0.0);
    }
    let s = sigma.abs();
    let f = |z: f64| (mu + s * z) * phi(z);
    let root = -mu / s;
    if sigma > 0.0 {
        let a = root.max(-40.0);
        integrate(&f, a, a.max(40.0), 1e-14)
    } else {
        let b = root.min(40.0);
        integrate(&f, b.min(-40.0), b, 1e-14)
    }
}

/// Seeded random case with 3–8 generators whose dominant point clears the
/// large-deviation bound with some margin, so all four models are feasible.
pub fn random_case(seed: u64) -> SystemCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(3..=8);
    let generators: Vec<Generator> = (0..n)
        .map(|i| Generator {
            id: format!("G{}", i + 1),
            p_min: 0.0,
            p_max: rng.gen_range(50.0..200.0),
            c2: rng.gen_range(0.005..0.06),
            c1: rng.gen_range(5.0..60.0),
            c_beta: rng.gen_range(100.0..900.0),
            epsilon: 0.05,
            epsilon_ext: 5e-5,
            node: riskclear_core::model::SYSTEM_NODE.to_string(),
        })
        .collect();
    let cap: f64 = generators.iter().map(|g| g.p_max).sum();
    let sigma = rng.gen_range(0.03..0.12) * cap;
    let omega_star = rng.gen_range(4.5 * sigma..0.7 * cap);
    let net = cap - omega_star;
    let forecast = rng.gen_range(0.1..0.5) * net;
    SystemCase {
        name: format!("random-{seed}"),
        generators,
        wind: vec![WindSpec {
            id: "W1".into(),
            forecast,
            std: sigma,
            node: riskclear_core::model::SYSTEM_NODE.to_string(),
        }],
        network: None,
        demand: Some(net + forecast),
        voll: 9000.0,
        options: ModelOptions::default(),
    }
}

use riskclear_core::cuttingplane::CutProblem;
use riskclear_core::formulations::{self, alpha_var, beta_var, p_var, ClearingResult, ModelKind};

pub fn cut_problem(case: &SystemCase, kind: ModelKind) -> CutProblem {
    match kind {
        ModelKind::Wcc => formulations::build_wcc(case).unwrap(),
        ModelKind::LdtWcc => {
            let os = formulations::derive_omega_star(case).unwrap();
            let sigma = riskclear_core::model::aggregate_wind(case).std;
            let eps = formulations::omega_eps(case, os, sigma).unwrap();
            formulations::build_ldtwcc(case, os, eps).unwrap()
        }
        _ => panic!("{kind} has no expectation constraints"),
    }
}

/// Place a result's (p, α, β) into the program's variable vector.
pub fn point_of(problem: &CutProblem, r: &ClearingResult) -> Vec<f64> {
    let mut x = vec![0.0; problem.base.num_vars()];
    let beta = r.beta_or_zero();
    for (n, id) in r.generators.iter().enumerate() {
        x[problem.base.var_index(&p_var(id)).unwrap()] = r.p[n];
        x[problem.base.var_index(&alpha_var(id)).unwrap()] = r.alpha[n];
        if let Some(i) = problem.base.var_index(&beta_var(id)) {
            x[i] = beta[n];
        }
    }
    x
}

/// Largest excess of Σ E(μ̃, σ̃) over ε, each term integrated numerically.
pub fn worst_exact_excess(problem: &CutProblem, x: &[f64]) -> f64 {
    problem
        .nonlinear_constraints
        .iter()
        .map(|c| {
            let v: f64 = c
                .terms
                .iter()
                .map(|t| {
                    let s = t.scale.eval(x);
                    match c.convention {
                        riskclear_core::model::ExtremeScale::Signed => overload_by_quadrature(t.mean.eval(x), s),
                        riskclear_core::model::ExtremeScale::Magnitude => {
                            overload_by_quadrature(t.mean.eval(x), s.abs())
                        }
                    }
                })
                .sum();
            v - c.rhs
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Largest relative mismatch between analytic constraint gradients and
/// central differences over `n` random points near `base`.
pub fn worst_gradient_error(problem: &CutProblem, base: &[f64], n: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let x: Vec<f64> = base
            .iter()
            .map(|v| if v.abs() > 1.0 { v * rng.gen_range(0.8..1.2) } else { rng.gen_range(0.05..0.95) })
            .collect();
        for c in &problem.nonlinear_constraints {
            let g = c.gradient(&x);
            for i in 0..x.len() {
                let h = 1e-6 * x[i].abs().max(1.0);
                let (mut up, mut dn) = (x.clone(), x.clone());
                up[i] += h;
                dn[i] -= h;
                let fd = (c.value(&up) - c.value(&dn)) / (2.0 * h);
                worst = worst.max((fd - g[i]).abs() / g[i].abs().max(1.0));
            }
        }
    }
    worst
}
