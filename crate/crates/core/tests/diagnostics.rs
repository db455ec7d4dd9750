use cvxfeas::{
    angle_statistics, estimate_kappa, estimate_rates, recession_report, solve_cip, solve_map, solve_sip,
    trace_angle_statistics, CipProblem, ConvexSet, DiagnosticsError, MaxAffine, RateClass, SipProblem,
    SolverConfig, Vector, WorkingSetPolicy,
};
use std::sync::Arc;

fn v(x: &[f64]) -> Vector {
    Vector::from_column_slice(x)
}

fn lens() -> (SipProblem, Vector) {
    let sets = vec![ConvexSet::ball(v(&[0.0, 0.0]), 1.0).unwrap(), ConvexSet::ball(v(&[1.9, 0.0]), 1.0).unwrap()];
    (SipProblem::new(sets, v(&[0.95, 2.5])).unwrap(), v(&[0.95, (1.0f64 - 0.95 * 0.95).sqrt()]))
}

fn current() -> SolverConfig {
    SolverConfig { policy: WorkingSetPolicy::CurrentRoundOnly, ..Default::default() }
}

#[test]
fn lens_rates_separate_the_methods() {
    let (problem, corner) = lens();
    let (_, fast) = solve_sip(&problem, &current()).unwrap();
    let (_, slow) = solve_map(&problem, &current()).unwrap();
    let fast = estimate_rates(&fast, &corner, &[1, 2]).unwrap();
    let slow = estimate_rates(&slow, &corner, &[1, 2]).unwrap();
    assert!(matches!(fast.classification, RateClass::Quadratic { .. } | RateClass::Superlinear { .. }));
    match slow.classification {
        RateClass::Linear { factor } => assert!((0.5..0.8).contains(&factor), "{factor}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn rate_report_matches_errors() {
    let (problem, corner) = lens();
    let (_, trace) = solve_map(&problem, &current()).unwrap();
    let report = estimate_rates(&trace, &corner, &[1]).unwrap();
    let errors: Vec<f64> = trace.iterates().map(|x| (x - &corner).norm()).collect();
    assert_eq!(report.errors, errors);
    for (i, q) in report.q_ratios.iter().enumerate() {
        assert_eq!(*q, errors[i + 1] / errors[i]);
    }
    assert_eq!(report, estimate_rates(&trace, &corner, &[1]).unwrap());
}

#[test]
fn kappa_is_finite_for_transversal_balls() {
    let (problem, corner) = lens();
    let (_, trace) = solve_map(&problem, &current()).unwrap();
    let k = estimate_kappa(&trace, &corner).unwrap();
    assert!(k.tail_max.is_finite() && k.tail_max >= 1.0);
    assert!(k.running_max.windows(2).all(|w| w[1] >= w[0]));
    assert_eq!(k.running_max.len(), k.ratios.len());
}

#[test]
fn kappa_of_a_wedge_is_bounded_below_by_one() {
    let sets = vec![
        ConvexSet::halfspace(v(&[2.0, -1.0]), 0.0).unwrap(),
        ConvexSet::halfspace(v(&[-1.0, 2.0]), 0.0).unwrap(),
    ];
    let problem = SipProblem::new(sets, v(&[1.0, 1.0])).unwrap();
    let (_, trace) = solve_map(&problem, &SolverConfig { max_outer: 60, ..Default::default() }).unwrap();
    let k = estimate_kappa(&trace, &Vector::zeros(2)).unwrap();
    assert!(k.ratios.iter().all(|(_, r)| *r >= 1.0 - 1e-9));
    assert!(k.tail_max < 10.0);
}

#[test]
fn zigzag_normals_keep_a_fixed_angle() {
    let problem = CipProblem::new(Arc::new(MaxAffine::zigzag()), v(&[1.0, 1.0])).unwrap();
    let (_, trace) = solve_cip(&problem, &SolverConfig { max_outer: 20, ..current() }).unwrap();
    let stats = trace_angle_statistics(&trace, 2, 0.05);
    let expected = (-0.8f64).acos();
    for m in stats.per_window_min.iter().skip(1).take(trace.len() - 2) {
        assert!((m.unwrap() - expected).abs() < 1e-12);
    }
    assert_eq!(stats.first_round_within, None);
}

#[test]
fn angle_windows_find_near_duplicates() {
    let rounds = vec![vec![v(&[1.0, 0.0])], vec![v(&[0.0, 1.0])], vec![v(&[1.0, 0.01])]];
    let s = angle_statistics(&rounds, 3, 0.05);
    assert_eq!(s.per_window_min[0], None);
    assert!((s.per_window_min[1].unwrap() - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
    assert!((s.per_window_min[2].unwrap() - 0.01f64.atan()).abs() < 1e-12);
    assert_eq!(s.first_round_within, Some(2));
    assert_eq!(angle_statistics(&rounds, 1, 0.05).first_round_within, None);
}

#[test]
fn exp_strips_diverge_along_the_axis() {
    let sets = vec![ConvexSet::exp_above(), ConvexSet::exp_below()];
    let problem = SipProblem::new(sets.clone(), Vector::zeros(2)).unwrap();
    let config = SolverConfig { policy: WorkingSetPolicy::AllAccumulating, divergence_norm_cap: 15.0, ..Default::default() };
    let (_, trace) = solve_sip(&problem, &config).unwrap();
    let report = recession_report(&trace, &sets).unwrap();
    assert!((report.direction[1].atan2(report.direction[0])).abs() < 0.05);
    assert!(report.per_set_recession_residuals.iter().all(|r| *r <= 1e-6));
}

#[test]
fn recession_needs_a_divergent_trace() {
    let (problem, _) = lens();
    let (_, trace) = solve_sip(&problem, &current()).unwrap();
    assert_eq!(recession_report(&trace, problem.sets()), Err(DiagnosticsError::NotDiverging));
}

#[test]
fn short_traces_are_rejected() {
    let problem = SipProblem::new(vec![ConvexSet::ball(v(&[0.0, 0.0]), 1.0).unwrap()], v(&[3.0, 0.0])).unwrap();
    let (_, trace) = solve_sip(&problem, &current()).unwrap();
    assert!(matches!(
        estimate_rates(&trace, &v(&[1.0, 0.0]), &[1]),
        Err(DiagnosticsError::TooFewIterations { .. })
    ));
    assert!(estimate_rates(&trace, &Vector::zeros(3), &[1]).is_err());
}
