mod common;

use common::*;
use riskclear_core::formulations::{clear, ModelKind};
use riskclear_core::model::{bundled, ExtremeScale};

#[test]
fn converged_solutions_satisfy_the_integrated_constraints() {
    let mut cases = vec![bundled::illustrative()];
    cases.extend((0..5).map(random_case));
    for case in &cases {
        for kind in [ModelKind::Wcc, ModelKind::LdtWcc] {
            let r = clear(case, kind).unwrap();
            let prob = cut_problem(case, kind);
            let x = point_of(&prob, &r);
            let excess = worst_exact_excess(&prob, &x);
            assert!(excess <= 1e-6, "{} {kind}: {excess:e}", case.name);
        }
    }
}

#[test]
fn cut_gradients_match_central_differences() {
    let case = bundled::illustrative();
    for kind in [ModelKind::Wcc, ModelKind::LdtWcc] {
        let r = clear(&case, kind).unwrap();
        let prob = cut_problem(&case, kind);
        let x = point_of(&prob, &r);
        let err = worst_gradient_error(&prob, &x, 20, 3);
        assert!(err <= 1e-6, "{kind}: {err:e}");
    }
}

#[test]
fn magnitude_convention_is_also_consistent() {
    let mut case = bundled::illustrative();
    case.options.extreme_scale = ExtremeScale::Magnitude;
    let r = clear(&case, ModelKind::LdtWcc).unwrap();
    let prob = cut_problem(&case, ModelKind::LdtWcc);
    let x = point_of(&prob, &r);
    assert!(worst_exact_excess(&prob, &x) <= 1e-6);
    assert!(worst_gradient_error(&prob, &x, 20, 4) <= 1e-6);
}

#[test]
fn cut_log_records_every_cut() {
    let case = bundled::illustrative();
    let r = clear(&case, ModelKind::LdtWcc).unwrap();
    let log = r.cut_log.unwrap();
    assert!(log.converged);
    let listed: usize = log.iterations.iter().map(|it| it.cuts_added.len()).sum();
    assert_eq!(listed, log.cuts.len());
    assert_eq!(r.cut_count, log.cuts.len());
    // Final iteration found nothing violated.
    assert!(log.iterations.last().unwrap().violations.is_empty());
}
