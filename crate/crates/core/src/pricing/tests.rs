use super::*;
use crate::formulations::clear;
use crate::model::bundled;

fn solved(kind: ModelKind) -> (SystemCase, ClearingResult, PriceSet) {
    let case = bundled::illustrative();
    let r = clear(&case, kind).unwrap();
    let p = extract_prices(&r, &case).unwrap();
    (case, r, p)
}

#[test]
fn closed_forms_match_multipliers() {
    let (case, r, p) = solved(ModelKind::LdtCc);
    let cf = closed_form_prices_ldtcc(&r, &case).unwrap();
    assert!((cf.system_pi() - p.system_pi()).abs() < 1e-3);
    assert!((cf.rho - p.rho).abs() < 1e-3);
    assert!((cf.chi.unwrap() - p.chi.unwrap()).abs() < 1e-3);
}

#[test]
fn closed_form_without_binding_limits_is_dispatch_marginal_cost() {
    // Loose limits: nothing binds, so π is the harmonic-weighted marginal cost
    // of an unconstrained dispatch; check it against a direct solve of
    // Σ (π − c1)/(2c2) = D − Ŵ.
    let mut case = bundled::illustrative();
    for g in &mut case.generators {
        g.p_max = 2000.0;
    }
    let r = clear(&case, ModelKind::LdtCc).unwrap();
    let cf = closed_form_prices_ldtcc(&r, &case).unwrap();
    let s: f64 = case.generators.iter().map(|g| 1.0 / (2.0 * g.c2)).sum();
    let t: f64 = case.generators.iter().map(|g| g.c1 / (2.0 * g.c2)).sum();
    let unconstrained = (case.net_demand() + t) / s;
    let any_at_zero = r.p.iter().any(|p| *p < 1e-6);
    if !any_at_zero {
        assert!((cf.system_pi() - unconstrained).abs() < 1e-6);
    }
    assert!((cf.system_pi() - extract_prices(&r, &case).unwrap().system_pi()).abs() < 1e-3);
}

#[test]
fn deficit_equals_reserve_prices() {
    let (case, r, p) = solved(ModelKind::Cc);
    let s = settle(&r, &p, &case);
    assert!((s.deficit - 83.333_333).abs() < 1e-4);
    let (case, r, p) = solved(ModelKind::LdtCc);
    let s = settle(&r, &p, &case);
    assert!((s.deficit - (p.rho + p.chi.unwrap())).abs() < 1e-9);
}

#[test]
fn zero_reserve_prices_give_zero_deficit() {
    let ps = PriceSet { pi: EnergyPrice::System(10.0), rho: 0.0, chi: None };
    let (case, r, _) = solved(ModelKind::Cc);
    assert_eq!(settle(&r, &ps, &case).deficit, 0.0);
}

#[test]
fn payment_identity() {
    let (case, r, p) = solved(ModelKind::LdtWcc);
    let s = settle(&r, &p, &case);
    let beta = r.beta_or_zero();
    for (n, ps) in s.producers.iter().enumerate() {
        let expect = p.system_pi() * r.p[n] + p.rho * r.alpha[n] + p.chi.unwrap() * beta[n];
        assert!((ps.revenue - expect).abs() < 1e-9);
    }
}

#[test]
fn equilibrium_and_cost_recovery_all_models() {
    for kind in ModelKind::ALL {
        let (case, r, p) = solved(kind);
        let rep = verify_equilibrium(&r, &p, &case, 1e-3).unwrap();
        assert!(rep.passed(), "{kind}: {:?}", rep.violations);
        for ps in settle(&r, &p, &case).producers {
            assert!(ps.profit >= -1e-6 * ps.revenue.abs(), "{kind} {}: {}", ps.id, ps.profit);
        }
    }
}

#[test]
fn perturbed_price_breaks_equilibrium() {
    let (case, r, mut p) = solved(ModelKind::LdtCc);
    p.pi = EnergyPrice::System(p.system_pi() + 1.0);
    let rep = verify_equilibrium(&r, &p, &case, 1e-3).unwrap();
    assert!(!rep.passed());
}

#[test]
fn prices_scale_with_costs() {
    for kind in [ModelKind::Cc, ModelKind::LdtCc, ModelKind::LdtWcc] {
        let (case, r, p) = solved(kind);
        let scaled = case.with_scaled_costs(3.0);
        let r3 = clear(&scaled, kind).unwrap();
        let p3 = extract_prices(&r3, &scaled).unwrap();
        for (a, b) in r.p.iter().zip(&r3.p) {
            assert!((a - b).abs() < 1e-5, "{kind}");
        }
        assert!((p3.system_pi() - 3.0 * p.system_pi()).abs() < 1e-4 * p3.system_pi().abs());
        assert!((p3.rho - 3.0 * p.rho).abs() < 1e-4 * p3.rho.abs().max(1.0), "{kind} {} {}", p3.rho, p.rho);
    }
}

#[test]
fn print_prices() {
    for kind in ModelKind::ALL {
        let (_, r, p) = solved(kind);
        println!("{kind}: {p:?} cost {}", r.scheduled_cost);
    }
}
