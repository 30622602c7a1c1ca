//! Out-of-sample Monte-Carlo evaluation of a cleared schedule.
//!
//! Ω is the wind forecast error (Ω > 0 is surplus), so the generators respond
//! to the deficit d = −Ω. Outputs are clipped at their limits; any remaining
//! deficit is unserved energy at voll and any remaining surplus is spilled at
//! no cost.

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formulations::{ClearingResult, ModelKind};
use crate::model::SystemCase;
use crate::probkit::{normal_cdf, normal_quantile};

/// Compensated (Neumaier) running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

fn neumaier(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut s = NeumaierSum::default();
    for x in xs {
        s.add(x);
    }
    s.value()
}

/// Generator outputs under one realization.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyDispatch {
    pub raw: Vec<f64>,
    pub clipped: Vec<f64>,
}

/// Deficit at which the extreme piece of the policy takes over, if any.
pub fn extreme_boundary(r: &ClearingResult) -> Option<f64> {
    match r.model {
        ModelKind::Cc | ModelKind::Wcc => None,
        ModelKind::LdtCc => r.sigma_hat.first().copied(),
        ModelKind::LdtWcc => r.omega_eps,
    }
}

/// Unclipped output of generator `n` at deficit `d`.
///
/// LDT-CC deploys regular reserve up to σ̂ and extreme reserve beyond it,
/// p + (α − β)σ̂ + βd, which is its extreme equality at d = Ω*. LDT-WCC
/// switches to p + βΩ* + (α − β)d beyond Ω_ε, the piece its expectation
/// constraint was built on.
fn raw_output(r: &ClearingResult, n: usize, d: f64) -> f64 {
    let (p, a) = (r.p[n], r.alpha[n]);
    let b = r.beta.as_ref().map_or(0.0, |b| b[n]);
    match (r.model, extreme_boundary(r)) {
        (ModelKind::LdtCc, Some(sh)) if d > sh => p + (a - b) * sh + b * d,
        (ModelKind::LdtWcc, Some(eps)) if d > eps => p + b * r.omega_star.unwrap_or(0.0) + (a - b) * d,
        _ => p + a * d,
    }
}

/// Policy outputs at wind error `omega`, raw and clipped to each generator's
/// limits.
pub fn apply_policy(r: &ClearingResult, case: &SystemCase, omega: f64) -> PolicyDispatch {
    let d = -omega;
    let raw: Vec<f64> = (0..r.p.len()).map(|n| raw_output(r, n, d)).collect();
    let clipped = raw.iter().zip(&case.generators).map(|(x, g)| x.clamp(g.p_min, g.p_max)).collect();
    PolicyDispatch { raw, clipped }
}

/// Output jump of each generator where the policy switches pieces: the
/// extreme piece minus the regular piece at the boundary. Only the LDT-WCC
/// policy is discontinuous, by β(Ω* − Ω_ε).
pub fn policy_jumps(r: &ClearingResult) -> Vec<f64> {
    let Some(b0) = extreme_boundary(r) else {
        return vec![0.0; r.p.len()];
    };
    (0..r.p.len())
        .map(|n| {
            let below = raw_output(r, n, b0);
            let beta = r.beta.as_ref().map_or(0.0, |b| b[n]);
            let above = match r.model {
                ModelKind::LdtCc => r.p[n] + (r.alpha[n] - beta) * b0 + beta * b0,
                _ => r.p[n] + beta * r.omega_star.unwrap_or(0.0) + (r.alpha[n] - beta) * b0,
            };
            above - below
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioOutcome {
    pub omega: f64,
    pub cost: f64,
    pub unserved: f64,
    pub spilled: f64,
    /// Generators whose policy output left their limits.
    pub violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioAggregate {
    pub mean_cost: f64,
    pub std_cost: f64,
    pub scenario_count: usize,
    pub seed: u64,
    pub mean_unserved: f64,
    pub mean_spilled: f64,
    /// ΣC_β·β, the extreme-reserve capacity charge; not part of the
    /// per-scenario cost.
    pub reserve_capacity_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub model: ModelKind,
    pub case_hash: String,
    pub policy_jumps: Vec<f64>,
    pub scenarios: Vec<ScenarioOutcome>,
    pub aggregate: ScenarioAggregate,
}

impl ScenarioReport {
    /// Mean and sample std of the per-scenario costs.
    pub fn cost_moments(scenarios: &[ScenarioOutcome]) -> (f64, f64) {
        let n = scenarios.len();
        if n == 0 {
            return (0.0, 0.0);
        }
        let mean = neumaier(scenarios.iter().map(|s| s.cost)) / n as f64;
        if n == 1 {
            return (mean, 0.0);
        }
        let ss = neumaier(scenarios.iter().map(|s| (s.cost - mean).powi(2)));
        (mean, (ss / (n - 1) as f64).sqrt())
    }

    /// The stored aggregates agree with the scenario list.
    pub fn validate(&self) -> Result<()> {
        let (m, s) = Self::cost_moments(&self.scenarios);
        let a = &self.aggregate;
        if a.scenario_count != self.scenarios.len() || m != a.mean_cost || s != a.std_cost {
            return Err(Error::Invariant("report aggregates disagree with its scenarios".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&serde_json::to_value(self)?)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("scenario,omega,cost,unserved,spilled,violations\n");
        for (i, o) in self.scenarios.iter().enumerate() {
            s.push_str(&format!("{i},{},{},{},{},{}\n", o.omega, o.cost, o.unserved, o.spilled, o.violations));
        }
        s
    }

    pub fn summary(&self) -> String {
        let a = &self.aggregate;
        format!(
            "{:<8} mean {:>12.2}  std {:>12.2}  n {}  seed {}  unserved {:.4} MWh  spilled {:.4} MWh",
            self.model.to_string(),
            a.mean_cost,
            a.std_cost,
            a.scenario_count,
            a.seed,
            a.mean_unserved,
            a.mean_spilled
        )
    }
}

/// Cost and energy accounting for one realization.
pub fn scenario_outcome(r: &ClearingResult, case: &SystemCase, omega: f64) -> ScenarioOutcome {
    let dispatch = apply_policy(r, case, omega);
    let violations = dispatch.raw.iter().zip(&case.generators).filter(|(x, g)| **x > g.p_max || **x < g.p_min).count();
    let supply = neumaier(dispatch.clipped.iter().copied());
    let residual = case.net_demand() - omega - supply;
    let (unserved, spilled) = if residual > 0.0 { (residual, 0.0) } else { (0.0, -residual) };
    let production = neumaier(dispatch.clipped.iter().zip(&case.generators).map(|(q, g)| g.c2 * q * q + g.c1 * q));
    ScenarioOutcome { omega, cost: production + case.voll * unserved, unserved, spilled, violations }
}

/// i-th uniform of the ChaCha20 stream for `seed`, mapped into (0, 1).
///
/// Each draw is one 64-bit word at a fixed counter position, so the stream
/// can be split across workers without changing any value.
pub fn uniform_at(seed: u64, i: u64) -> f64 {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_word_pos(2 * i as u128);
    to_unit(rng.next_u64())
}

fn to_unit(x: u64) -> f64 {
    ((x >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// n draws of N(0, σ²) by inverse CDF of the seeded uniform stream.
pub fn sample_omegas(sigma: f64, n: usize, seed: u64) -> Result<Vec<f64>> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    (0..n).map(|_| Ok(sigma * normal_quantile(to_unit(rng.next_u64()))?)).collect()
}

/// n draws of N(0, σ²) conditioned on |Ω| > threshold.
pub fn sample_tail_omegas(sigma: f64, threshold: f64, n: usize, seed: u64) -> Result<Vec<f64>> {
    let tail = normal_cdf(-threshold / sigma);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            // Map (0, 1) onto the two tails, each carrying half the mass.
            let u = to_unit(rng.next_u64());
            let (q, sign) = if u < 0.5 { (2.0 * u * tail, -1.0) } else { (2.0 * (u - 0.5) * tail, 1.0) };
            Ok(sign * sigma * -normal_quantile(q.max(f64::MIN_POSITIVE))?)
        })
        .collect()
}

fn report_from(r: &ClearingResult, case: &SystemCase, omegas: &[f64], seed: u64) -> ScenarioReport {
    let scenarios: Vec<ScenarioOutcome> = omegas.iter().map(|&w| scenario_outcome(r, case, w)).collect();
    let (mean_cost, std_cost) = ScenarioReport::cost_moments(&scenarios);
    let n = scenarios.len().max(1) as f64;
    let beta = r.beta_or_zero();
    ScenarioReport {
        model: r.model,
        case_hash: r.case_hash.clone(),
        policy_jumps: policy_jumps(r),
        aggregate: ScenarioAggregate {
            mean_cost,
            std_cost,
            scenario_count: scenarios.len(),
            seed,
            mean_unserved: neumaier(scenarios.iter().map(|s| s.unserved)) / n,
            mean_spilled: neumaier(scenarios.iter().map(|s| s.spilled)) / n,
            reserve_capacity_cost: case.generators.iter().zip(&beta).map(|(g, b)| g.c_beta * b).sum(),
        },
        scenarios,
    }
}

/// Draw Ω ~ N(0, σ²) with `seed` and evaluate the schedule on every draw.
pub fn evaluate(r: &ClearingResult, case: &SystemCase, n_scenarios: usize, seed: u64) -> Result<ScenarioReport> {
    if r.case_hash != case.hash() {
        return Err(Error::Invariant("result was cleared on a different case".into()));
    }
    let omegas = sample_omegas(r.sigma, n_scenarios, seed)?;
    Ok(report_from(r, case, &omegas, seed))
}

/// Same as [`evaluate`] with draws conditioned on |Ω| > `threshold`.
pub fn evaluate_tail(
    r: &ClearingResult,
    case: &SystemCase,
    threshold: f64,
    n_scenarios: usize,
    seed: u64,
) -> Result<ScenarioReport> {
    let omegas = sample_tail_omegas(r.sigma, threshold, n_scenarios, seed)?;
    Ok(report_from(r, case, &omegas, seed))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub generator: String,
    pub violations: usize,
    pub frequency: f64,
    pub epsilon: f64,
    /// ε + 3√(ε(1 − ε)/n).
    pub bound: f64,
}

impl CoverageRow {
    pub fn passed(&self) -> bool {
        self.frequency <= self.bound
    }
}

/// Empirical frequency of p + αd > p_max (and < p_min when the min side is
/// enforced) per generator.
pub fn coverage_check(r: &ClearingResult, case: &SystemCase, n: usize, seed: u64) -> Result<Vec<CoverageRow>> {
    let omegas = sample_omegas(r.sigma, n, seed)?;
    let mut counts = vec![0usize; r.p.len()];
    for &w in &omegas {
        let d = apply_policy(r, case, w);
        for (k, (x, g)) in d.raw.iter().zip(&case.generators).enumerate() {
            if *x > g.p_max || (case.options.enforce_min_side && *x < g.p_min) {
                counts[k] += 1;
            }
        }
    }
    Ok(case
        .generators
        .iter()
        .zip(counts)
        .map(|(g, c)| {
            let e = g.epsilon;
            CoverageRow {
                generator: g.id.clone(),
                violations: c,
                frequency: c as f64 / n as f64,
                epsilon: e,
                bound: e + 3.0 * (e * (1.0 - e) / n as f64).sqrt(),
            }
        })
        .collect())
}
