use super::*;
use crate::convexcore::LinearExpr;
use crate::model::bundled;
use crate::probkit::normal_quantile;

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

fn solved(kind: ModelKind) -> (SystemCase, ClearingResult) {
    let c = bundled::illustrative();
    let r = clear(&c, kind).unwrap();
    (c, r)
}

#[test]
fn cc_row() {
    let (_, r) = solved(ModelKind::Cc);
    assert!(close(&r.p, &[75.0, 45.0, 0.0], 0.01), "{:?}", r.p);
    assert!(close(&r.alpha, &[0.0, 1.0 / 3.0, 2.0 / 3.0], 0.01), "{:?}", r.alpha);
    assert!(r.beta.is_none() && r.omega_star.is_none());
}

#[test]
fn ldtcc_row() {
    let (_, r) = solved(ModelKind::LdtCc);
    assert!(close(&r.p, &[75.0, 45.0, 0.0], 0.01));
    assert!(close(&r.alpha, &[0.0, 0.0, 1.0], 0.01), "{:?}", r.alpha);
    assert!(close(r.beta.as_ref().unwrap(), &[0.0, 0.75, 0.25], 0.01));
    assert_eq!(r.dual_selection, Some(DualSelection::MinNonnegativeExtreme));
}

#[test]
fn ldtwcc_row() {
    let (_, r) = solved(ModelKind::LdtWcc);
    assert!(close(&r.p, &[75.0, 45.0, 0.0], 0.01));
    assert!(close(&r.alpha, &[0.0, 0.44, 0.56], 0.02), "{:?}", r.alpha);
    assert!(close(r.beta.as_ref().unwrap(), &[0.0, 1.0, 0.0], 0.02));
    assert!(r.cut_count > 0);
}

#[test]
fn omega_star_from_capacity() {
    let c = bundled::illustrative();
    // 75 + 160 + 120 − (270 − 150)
    assert_eq!(derive_omega_star(&c).unwrap(), 235.0);

    let mut doubled = c.clone();
    for g in &mut doubled.generators {
        g.p_max *= 2.0;
    }
    assert_eq!(derive_omega_star(&doubled).unwrap(), 235.0 + 355.0);

    let mut tight = c.clone();
    tight.generators.truncate(1);
    tight.generators[0].p_max = tight.net_demand();
    assert_eq!(derive_omega_star(&tight).unwrap(), 0.0);
}

#[test]
fn extreme_policy_hits_every_limit_at_the_dominant_point() {
    let (c, r) = solved(ModelKind::LdtCc);
    let os = r.omega_star.unwrap();
    let beta = r.beta.clone().unwrap();
    for (n, g) in c.generators.iter().enumerate() {
        let sh = r.sigma_hat[n];
        let at = r.p[n] + (r.alpha[n] - beta[n]) * sh + beta[n] * os;
        assert!((at - g.p_max).abs() <= 1e-6, "{}: {at}", g.id);
    }
}

#[test]
fn sigma_hat_is_the_gaussian_quantile() {
    let (_, r) = solved(ModelKind::Cc);
    let want = normal_quantile(0.95).unwrap() * 50.0;
    assert!(r.sigma_hat.iter().all(|s| (s - want).abs() < 1e-12));
    assert!((want - 82.2427).abs() < 1e-4);
}

#[test]
fn lambda_star_only_where_beta_is_positive() {
    let (_, r) = solved(ModelKind::LdtCc);
    let ls = r.lambda_star.clone().unwrap();
    assert!(ls[0].is_none());
    let b = r.beta.clone().unwrap();
    let l1 = ls[1].unwrap();
    assert!((l1 - 235.0 / (2500.0 * b[1])).abs() < 1e-9);
}

#[test]
fn results_satisfy_their_invariants() {
    let c = bundled::illustrative();
    for kind in ModelKind::ALL {
        let r = clear(&c, kind).unwrap();
        r.validate(&c, 1e-9).unwrap();
        assert!(r.duality_gap <= c.options.duality_gap_tol);
        let back = ClearingResult::from_json(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
    }
}

#[test]
fn scheduled_costs_order_on_the_illustrative_case() {
    let c = bundled::illustrative();
    let cost = |k| clear(&c, k).unwrap().scheduled_cost;
    let (cc, wcc, ldtcc, ldtwcc) =
        (cost(ModelKind::Cc), cost(ModelKind::Wcc), cost(ModelKind::LdtCc), cost(ModelKind::LdtWcc));
    assert!(cc <= ldtwcc + 1e-6 && ldtwcc <= ldtcc + 1e-6, "{cc} {ldtwcc} {ldtcc}");
    // WCC is LDT-WCC without the β obligations.
    assert!(wcc <= ldtwcc + 1e-6);
}

#[test]
fn wcc_solutions_meet_the_exact_constraints() {
    let c = bundled::illustrative();
    for kind in [ModelKind::Wcc, ModelKind::LdtWcc] {
        let r = clear(&c, kind).unwrap();
        assert!(!r.nonlinear.is_empty());
        for s in &r.nonlinear {
            assert!(s.value - s.rhs <= c.options.cut_tolerance, "{}: {}", s.label, s.value);
        }
    }
}

#[test]
fn equal_participation_removes_the_above_region_scale() {
    let terms = ldtwcc_terms(LinearExpr::constant(-10.0), 0, 1, 50.0, 235.0, 100.0);
    let x = [0.4, 0.4];
    assert_eq!(terms[1].scale.eval(&x), 0.0);
    assert!(terms[0].scale.eval(&x) > 0.0);
}

#[test]
fn one_generator_carries_everything() {
    let mut c = bundled::illustrative();
    c.generators.truncate(1);
    c.generators[0].p_max = 500.0;
    let r = clear(&c, ModelKind::LdtCc).unwrap();
    assert!((r.p[0] - c.net_demand()).abs() < 1e-6);
    assert!((r.alpha[0] - 1.0).abs() < 1e-9);
    assert!((r.beta.unwrap()[0] - 1.0).abs() < 1e-9);
}

#[test]
fn short_capacity_is_infeasible() {
    let mut c = bundled::illustrative();
    c.demand = Some(600.0);
    for kind in ModelKind::ALL {
        match clear(&c, kind) {
            Err(Error::Infeasible(_)) => {}
            other => panic!("{kind}: {other:?}"),
        }
    }
}

#[test]
fn ldt_bound_rejects_a_close_dominant_point() {
    // Ω* = 40 MW sits inside the 5e-5 tail boundary 3.89σ = 194.5 MW.
    let mut c = bundled::illustrative();
    c.demand = Some(465.0);
    assert_eq!(derive_omega_star(&c).unwrap(), 40.0);
    assert!(matches!(clear(&c, ModelKind::LdtCc), Err(Error::Infeasible(_))));
}

#[test]
fn no_wind_is_rejected() {
    let mut c = bundled::illustrative();
    c.wind.clear();
    for kind in ModelKind::ALL {
        let e = clear(&c, kind).unwrap_err();
        assert!(e.to_string().contains("no uncertainty to balance"), "{e}");
    }
}

#[test]
fn two_sided_cc_moves_off_the_one_sided_dispatch() {
    let mut c = bundled::illustrative();
    c.options.enforce_min_side = true;
    let r = clear(&c, ModelKind::Cc).unwrap();
    // p₃ = 0 with α₃ = 2/3 breaks p₃ − α₃σ̂ ≥ 0, so the solver moves away from it.
    assert!(!close(&r.alpha, &[0.0, 1.0 / 3.0, 2.0 / 3.0], 0.01), "{:?}", r.alpha);
    for (n, g) in c.generators.iter().enumerate() {
        assert!(r.p[n] - r.alpha[n] * r.sigma_hat[n] >= g.p_min - 1e-6);
    }
    // Its extreme piece needs about Ω* = 235 MW of downward room; Σp is 120.
    assert!(matches!(clear(&c, ModelKind::LdtWcc), Err(Error::Infeasible(_))));
}

#[test]
fn vanishing_uncertainty_reduces_to_economic_dispatch() {
    let mut c = bundled::illustrative();
    c.wind[0].std = 1e-9;
    let r = clear(&c, ModelKind::Cc).unwrap();
    // Merit order with 120 MW to serve: G1 full, then G2 at its 35 $/MWh.
    assert!(close(&r.p, &[75.0, 45.0, 0.0], 1e-6));
    assert!((r.dual(BALANCE) - 39.5).abs() < 1e-6);
}

#[test]
fn model_names_roundtrip() {
    for k in ModelKind::ALL {
        assert_eq!(k.cli_name().parse::<ModelKind>().unwrap(), k);
    }
    assert!("lp".parse::<ModelKind>().is_err());
}
