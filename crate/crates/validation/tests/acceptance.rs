//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use cvxfeas::{
    check_farkas, estimate_rates, gi_solve, gi_step, recession_report, solve_bap, solve_cip, solve_map, solve_sip,
    BapProblem, Certificate, CipProblem, ConvexFunction, ConvexSet, GiOutcome, GiState, GluedExp, MaxAffine,
    OutcomeKind, QpOptions, QpProblem, RateClass, SipProblem, SolveOutcome, SolveTrace, SolverConfig, StepOutcome,
    Vector, WorkingSetPolicy,
};
use clap::Parser;
use cvxfeas_cli::commands::{diagnose_file, diagnose_records, run_solver};
use cvxfeas_cli::config::{ConfigFile, FlagOverrides, RunSettings};
use cvxfeas_cli::problem::parse_problem;
use cvxfeas_cli::{run, Cli};
use cvxfeas_testkit::{enumerate_projection, feasible_corpus, feasible_inequalities, gaussian_vector, nnls, random_qp, rng};
use rand::Rng;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

type Outcome = Result<String, String>;

fn v(x: &[f64]) -> Vector {
    Vector::from_column_slice(x)
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(start: Instant, limit: Duration) -> Result<(), String> {
    let took = start.elapsed();
    ensure(took < limit, || format!("took {took:?}, limit {limit:?}"))
}

struct QpInstance {
    problem: QpProblem,
    samples: Vec<Vector>,
}

/// Mixed draws: contradictory polyhedra, polyhedra around known feasible
/// points, and unstructured offsets where only enumeration knows the answer.
fn qp_instances(count: usize) -> Vec<QpInstance> {
    let mut r = rng(20_240_901);
    (0..count)
        .map(|k| {
            let n = r.gen_range(1..=4);
            let m = r.gen_range(2..=8);
            match k % 3 {
                0 | 1 => {
                    let qp = random_qp(&mut r, n, m, k % 3 == 1, 20);
                    QpInstance {
                        problem: QpProblem::new(qp.anchor, qp.normals, qp.offsets).unwrap(),
                        samples: qp.feasible_points,
                    }
                }
                _ => {
                    let normals: Vec<Vector> = (0..m).map(|_| gaussian_vector(&mut r, n)).collect();
                    let offsets: Vec<f64> = (0..m).map(|_| r.gen_range(-1.5..1.0)).collect();
                    let anchor = gaussian_vector(&mut r, n) * 2.0;
                    QpInstance { problem: QpProblem::new(anchor, normals, offsets).unwrap(), samples: Vec::new() }
                }
            }
        })
        .collect()
}

fn criterion_1() -> Outcome {
    let cases = qp_instances(600);
    let start = Instant::now();
    let (mut solved, mut certified) = (0, 0);
    for (k, inst) in cases.iter().enumerate() {
        let p = &inst.problem;
        let normals: Vec<Vector> = p.normals().to_vec();
        let oracle = enumerate_projection(p.anchor(), &normals, p.offsets(), 1e-10);
        match (gi_solve(p, &QpOptions::default()).map_err(|e| e.to_string())?, oracle) {
            (GiOutcome::Solved(s), Some(x)) => {
                let gap = (s.primal() - &x).amax();
                ensure(gap <= 1e-8, || format!("instance {k}: optimum off by {gap:e}"))?;
                solved += 1;
            }
            (GiOutcome::Infeasible(c), None) => {
                ensure(check_farkas(&c, p, 1e-8), || format!("instance {k}: certificate rejected"))?;
                certified += 1;
            }
            (got, want) => return Err(format!("instance {k}: solver {got:?}, enumeration {want:?}")),
        }
    }
    within(start, Duration::from_secs(10))?;
    Ok(format!("{solved} solved, {certified} certified, {:?}", start.elapsed()))
}

fn criterion_2() -> Outcome {
    let cases = qp_instances(600);
    let opts = QpOptions::default();
    let (mut steps, mut checks) = (0usize, 0usize);
    for (k, inst) in cases.iter().enumerate() {
        let p = &inst.problem;
        let mut state = GiState::initial(p);
        let mut last = 0.0;
        while let StepOutcome::Progressed(s) = gi_step(state, p, &opts).map_err(|e| e.to_string())? {
            let d = (s.primal() - p.anchor()).norm();
            ensure(d >= last - 1e-12, || format!("instance {k}: distance fell from {last} to {d}"))?;
            let moved = (p.anchor() - s.primal()).norm_squared();
            for c in &inst.samples {
                let lhs = (s.primal() - c).norm_squared();
                let rhs = (p.anchor() - c).norm_squared() - moved;
                ensure(lhs <= rhs + 1e-8, || format!("instance {k}: {lhs} > {rhs}"))?;
                checks += 1;
            }
            last = d;
            steps += 1;
            state = s;
        }
    }
    Ok(format!("{steps} inner steps, {checks} sample checks"))
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let problem = CipProblem::new(Arc::new(GluedExp), v(&[0.5])).unwrap();
    let config = SolverConfig {
        policy: WorkingSetPolicy::CurrentRoundOnly,
        tol_feas: f64::MIN_POSITIVE,
        max_outer: 30,
        ..Default::default()
    };
    let (_, trace) = solve_cip(&problem, &config).map_err(|e| e.to_string())?;
    let xs: Vec<f64> = trace.iterates().map(|x| x[0]).collect();
    ensure(xs.len() == 31, || format!("only {} iterates", xs.len()))?;
    let mut expected = 0.5;
    let mut worst: f64 = 0.0;
    for (i, x) in xs.iter().enumerate() {
        worst = worst.max((x - expected).abs() / expected);
        ensure(worst <= 1e-12, || format!("iterate {i}: {x} vs {expected}"))?;
        expected -= expected * expected;
    }
    let report = estimate_rates(&trace, &v(&[0.0]), &[1]).map_err(|e| e.to_string())?;
    within(start, Duration::from_secs(1))?;
    let q = *report.q_ratios.last().ok_or("no q ratios")?;
    ensure(q > 0.99, || {
        format!("iterates match (max rel err {worst:.1e}) but last q ratio is {q:.4}, not above 0.99")
    })?;
    Ok(format!("max rel err {worst:.1e}, last q ratio {q:.4}"))
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let f = Arc::new(MaxAffine::zigzag());
    let problem = CipProblem::new(f.clone(), v(&[1.0, 1.0])).unwrap();
    let slow = SolverConfig { policy: WorkingSetPolicy::CurrentRoundOnly, ..Default::default() };
    let (outcome, trace) = solve_cip(&problem, &slow).map_err(|e| e.to_string())?;
    ensure(outcome.kind() == OutcomeKind::Feasible, || format!("{outcome:?}"))?;
    ensure(outcome.iterations() >= 25, || format!("reached tolerance after {} iterations", outcome.iterations()))?;
    let point = &trace.last().unwrap().iterate;
    ensure(f.evaluate(point).0 > 0.0, || "single-cut iteration reached f <= 0 exactly".into())?;
    let class = estimate_rates(&trace, &Vector::zeros(2), &[1, 2]).map_err(|e| e.to_string())?.classification;
    ensure(matches!(class, RateClass::Linear { .. }), || format!("classified {class}"))?;
    let fast = SolverConfig { policy: WorkingSetPolicy::LastRounds { window: 1 }, ..Default::default() };
    let (outcome, _) = solve_cip(&problem, &fast).map_err(|e| e.to_string())?;
    let SolveOutcome::Feasible { point: p, iterations } = outcome else { return Err(format!("{outcome:?}")) };
    let value = f.evaluate(&p).0;
    ensure(value <= 0.0 && iterations <= 3, || format!("f = {value:e} after {iterations} iterations"))?;
    within(start, Duration::from_secs(1))?;
    Ok(format!("single cut: {} iterations, {class}; two rounds: f = {value:.1e} after {iterations}", trace.len() - 1))
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let sets = vec![ConvexSet::ball(v(&[0.0, 0.0]), 1.0).unwrap(), ConvexSet::ball(v(&[1.9, 0.0]), 1.0).unwrap()];
    let problem = SipProblem::new(sets, v(&[0.95, 2.5])).unwrap();
    let config = SolverConfig { policy: WorkingSetPolicy::CurrentRoundOnly, ..Default::default() };
    let (_, fast) = solve_sip(&problem, &config).map_err(|e| e.to_string())?;
    let limit = fast.last().unwrap().iterate.clone();
    let report = estimate_rates(&fast, &limit, &[1, 2]).map_err(|e| format!("shqp: {e}"))?;
    let quad = &report.quadratic_ratios[0].1;
    let mut sorted = quad.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    let max = sorted[sorted.len() - 1];
    ensure(max <= 10.0 * median, || format!("quadratic ratios {quad:?} not bounded"))?;
    let class = report.classification;
    ensure(matches!(class, RateClass::Quadratic { .. } | RateClass::Superlinear { .. }), || format!("shqp {class}"))?;
    // Both methods converge to the upper corner of the lens; the MAP end
    // point is only tolerance-close to it.
    let (_, slow) = solve_map(&problem, &config).map_err(|e| e.to_string())?;
    let map_class = estimate_rates(&slow, &limit, &[1, 2]).map_err(|e| format!("map: {e}"))?.classification;
    ensure(matches!(map_class, RateClass::Linear { .. }), || format!("map {map_class}"))?;
    within(start, Duration::from_secs(1))?;
    Ok(format!("shqp {class} (quadratic ratio max/median {:.2}), map {map_class}", max / median))
}

fn fejer(trace: &SolveTrace, samples: &[Vector]) -> Result<(), String> {
    let xs: Vec<&Vector> = trace.iterates().collect();
    for (i, pair) in xs.windows(2).enumerate() {
        for c in samples {
            let (a, b) = ((pair[0] - c).norm(), (pair[1] - c).norm());
            ensure(b <= a + 1e-8, || format!("round {i}: distance to a feasible point grew {a} -> {b}"))?;
        }
    }
    Ok(())
}

fn cone(trace: &SolveTrace, base: Option<&Vector>) -> Result<f64, String> {
    let xs: Vec<&Vector> = trace.iterates().collect();
    let mut worst: f64 = 0.0;
    for (i, rec) in trace.records.iter().enumerate().take(xs.len() - 1) {
        let d = base.unwrap_or(xs[i]) - xs[i + 1];
        if d.norm() == 0.0 {
            continue;
        }
        let columns: Vec<Vector> = rec.working_set.iter().map(|h| h.unit_normal().clone()).collect();
        let rel = nnls(&columns, &d).1 / d.norm();
        worst = worst.max(rel);
        ensure(rel <= 1e-6, || format!("round {i}: cone residual {rel:e}"))?;
    }
    Ok(worst)
}

fn policies() -> [WorkingSetPolicy; 4] {
    [
        WorkingSetPolicy::CurrentRoundOnly,
        WorkingSetPolicy::default(),
        WorkingSetPolicy::AllAccumulating,
        WorkingSetPolicy::AnglePruned { max_angle: 0.05, window: 10 },
    ]
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    // Fejer violations per solver: sip, cip, bap.
    let mut violations = [0usize; 3];
    let mut first = [None, None, None];
    let mut runs = 0;
    let mut note = |slot: usize, result: Result<(), String>, what: String| {
        if let Err(e) = result {
            violations[slot] += 1;
            first[slot].get_or_insert(format!("{what}: {e}"));
        }
    };
    for (k, inst) in feasible_corpus(606, 50).iter().enumerate() {
        let samples = inst.sample_feasible(&mut rng(k as u64), 10);
        let sip = SipProblem::new(inst.sets.clone(), inst.start.clone()).unwrap();
        let bap = BapProblem::new(inst.sets.clone(), inst.start.clone()).unwrap();
        for policy in policies() {
            let config = SolverConfig { policy, record_working_sets: true, ..Default::default() };
            let (_, trace) = solve_sip(&sip, &config).map_err(|e| e.to_string())?;
            note(0, fejer(&trace, &samples), format!("sip instance {k} {policy:?}"));
            worst = worst.max(cone(&trace, None).map_err(|e| format!("sip instance {k} {policy:?}: {e}"))?);
            let (_, trace) = solve_bap(&bap, &config).map_err(|e| e.to_string())?;
            note(2, fejer(&trace, &samples), format!("bap instance {k} {policy:?}"));
            worst = worst.max(cone(&trace, Some(&inst.start)).map_err(|e| format!("bap instance {k} {policy:?}: {e}"))?);
            runs += 2;
        }
    }
    for (k, inst) in feasible_inequalities(607, 50).iter().enumerate() {
        let samples = inst.sample_feasible(&mut rng(k as u64), 10);
        let cip = CipProblem::new(inst.f.clone(), inst.start.clone()).unwrap();
        for policy in policies() {
            let config = SolverConfig { policy, record_working_sets: true, ..Default::default() };
            let (_, trace) = solve_cip(&cip, &config).map_err(|e| e.to_string())?;
            note(1, fejer(&trace, &samples), format!("cip instance {k} {policy:?}"));
            worst = worst.max(cone(&trace, None).map_err(|e| format!("cip instance {k} {policy:?}: {e}"))?);
            runs += 1;
        }
    }
    within(start, Duration::from_secs(30))?;
    let summary = format!(
        "{runs} runs, worst cone residual {worst:.1e}; runs with a Fejer violation: sip {}, cip {}, bap {}",
        violations[0], violations[1], violations[2]
    );
    match first.iter().flatten().next() {
        Some(example) => Err(format!("{summary}; first: {example}")),
        None => Ok(summary),
    }
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let pairs = [
        ("balls", vec![ConvexSet::ball(v(&[-2.0, 0.0]), 1.0).unwrap(), ConvexSet::ball(v(&[2.0, 0.0]), 1.0).unwrap()]),
        (
            "boxes",
            vec![
                ConvexSet::boxed(v(&[0.0, 0.0]), v(&[1.0, 1.0])).unwrap(),
                ConvexSet::boxed(v(&[2.0, 0.5]), v(&[3.0, 2.0])).unwrap(),
            ],
        ),
    ];
    // Iteration counts from the first verified run.
    let expected = [("balls", 2, 2), ("boxes", 2, 2)];
    let config = SolverConfig { policy: WorkingSetPolicy::AllAccumulating, ..Default::default() };
    let mut notes = Vec::new();
    for ((name, sets), (_, sip_count, bap_count)) in pairs.into_iter().zip(expected) {
        let sip = solve_sip(&SipProblem::new(sets.clone(), v(&[0.3, 5.0])).unwrap(), &config).map_err(|e| e.to_string())?;
        let bap = solve_bap(&BapProblem::new(sets, v(&[0.3, 5.0])).unwrap(), &config).map_err(|e| e.to_string())?;
        for (solver, (outcome, _), count) in [("sip", sip, sip_count), ("bap", bap, bap_count)] {
            let SolveOutcome::Infeasible { certificate, iterations } = &outcome else {
                return Err(format!("{solver} on {name}: {outcome:?}"));
            };
            ensure(matches!(certificate, Certificate::Farkas { .. }), || format!("{solver} on {name}: no Farkas"))?;
            ensure(certificate.verify(1e-8), || format!("{solver} on {name}: certificate rejected"))?;
            ensure(*iterations <= 50, || format!("{solver} on {name}: {iterations} iterations"))?;
            ensure(*iterations == count, || format!("{solver} on {name}: {iterations} iterations, recorded {count}"))?;
            notes.push(format!("{solver}/{name} {iterations}"));
        }
    }
    within(start, Duration::from_secs(5))?;
    Ok(notes.join(", "))
}

fn criterion_8() -> Outcome {
    let start = Instant::now();
    let sets = vec![ConvexSet::exp_above(), ConvexSet::exp_below()];
    let problem = SipProblem::new(sets.clone(), Vector::zeros(2)).unwrap();
    // Past |x| ~ 21 the gap between the strips drops below the feasibility
    // tolerance, so the divergence test has to fire before that.
    let config = SolverConfig { policy: WorkingSetPolicy::AllAccumulating, divergence_norm_cap: 15.0, ..Default::default() };
    let (outcome, trace) = solve_sip(&problem, &config).map_err(|e| e.to_string())?;
    ensure(outcome.kind() == OutcomeKind::Diverging, || format!("{outcome:?}"))?;
    let report = recession_report(&trace, &sets).map_err(|e| e.to_string())?;
    let angle = report.direction[1].atan2(report.direction[0]).abs();
    ensure(angle <= 0.05, || format!("direction {} is {angle} rad off", report.direction))?;
    let worst = report.per_set_recession_residuals.iter().copied().fold(0.0, f64::max);
    ensure(worst <= 1e-6, || format!("recession residual {worst:e}"))?;
    within(start, Duration::from_secs(10))?;
    Ok(format!("Diverging after {} iterations, angle {angle:.1e}, residual {worst:.1e}", outcome.iterations()))
}

fn criterion_9() -> Outcome {
    let start = Instant::now();
    let mut worst_shift: f64 = 0.0;
    for (k, inst) in feasible_corpus(909, 50).iter().enumerate() {
        let x0 = &inst.start;
        let problem = BapProblem::new(inst.sets.clone(), x0.clone()).unwrap();
        let plain = SolverConfig { policy: WorkingSetPolicy::AllAccumulating, record_working_sets: true, ..Default::default() };
        let merged = SolverConfig { aggregation_enabled: true, ..plain.clone() };
        let (a, trace) = solve_bap(&problem, &plain).map_err(|e| e.to_string())?;
        let d: Vec<f64> = trace.iterates().map(|x| (x - x0).norm()).collect();
        for (i, w) in d.windows(2).enumerate() {
            ensure(w[1] >= w[0] - 1e-10, || format!("instance {k} round {i}: |x - x0| fell {} -> {}", w[0], w[1]))?;
        }
        let (b, trace) = solve_bap(&problem, &merged).map_err(|e| e.to_string())?;
        let (SolveOutcome::Feasible { point: p, .. }, SolveOutcome::Feasible { point: q, .. }) = (&a, &b) else {
            return Err(format!("instance {k}: {a:?} / {b:?}"));
        };
        let shift = (p - q).norm();
        worst_shift = worst_shift.max(shift);
        ensure(shift <= 1e-7, || format!("instance {k}: aggregation moved the result by {shift:e}"))?;
        let xs: Vec<&Vector> = trace.iterates().collect();
        for (i, rec) in trace.records.iter().enumerate().take(xs.len() - 1) {
            let x = xs[i + 1];
            let mut stationarity = x0 - x;
            let mut worst: f64 = 0.0;
            for (h, &u) in rec.working_set.iter().zip(&rec.duals) {
                stationarity -= h.unit_normal() * u;
                let slack = h.unit_normal().dot(x) - h.unit_offset();
                worst = worst.max(slack.max(0.0)).max((u * slack).abs()).max((-u).max(0.0));
            }
            worst = worst.max(stationarity.norm() / (1.0 + x0.norm()));
            ensure(worst <= 1e-8, || format!("instance {k} round {i}: KKT residual {worst:e}"))?;
        }
    }
    within(start, Duration::from_secs(30))?;
    Ok(format!("worst aggregation shift {worst_shift:.1e}"))
}

fn problems_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../problems")
}

struct Invocation {
    code: i32,
    stdout: Vec<u8>,
}

/// One command-line invocation, run in process.
fn cli(args: &[&str]) -> Result<Invocation, String> {
    let parsed = Cli::try_parse_from(std::iter::once("cvxfeas").chain(args.iter().copied())).map_err(|e| e.to_string())?;
    let mut stdout = Vec::new();
    let code = run(&parsed, &mut stdout).map_err(|e| e.to_string())?;
    Ok(Invocation { code, stdout })
}

fn criterion_10() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut checked = 0;
    for (name, policy) in [("lens.json", "current"), ("zigzag.json", "current"), ("orthant_bap.json", "all")] {
        let problem = problems_dir().join(name);
        let problem_arg = problem.to_str().unwrap();
        let mut outputs = Vec::new();
        for run in 0..2 {
            let path = dir.path().join(format!("{name}.{run}.csv"));
            let out = cli(&["solve", "--problem", problem_arg, "--policy", policy, "--trace-out", path.to_str().unwrap()])?;
            ensure(out.code == 0, || format!("{name}: exit {}", out.code))?;
            outputs.push((std::fs::read(&path).map_err(|e| e.to_string())?, out.stdout, path));
        }
        ensure(outputs[0].0 == outputs[1].0, || format!("{name}: trace CSVs differ"))?;
        ensure(outputs[0].1 == outputs[1].1, || format!("{name}: summaries differ"))?;

        let file = parse_problem(&problem).map_err(|e| e.to_string())?;
        let flags = FlagOverrides { policy: Some(policy.into()), ..Default::default() };
        let settings = RunSettings::resolve(&ConfigFile::default(), &flags).map_err(|e| e.to_string())?;
        let (_, trace) = run_solver(&file, &settings.solver).map_err(|e| e.to_string())?;
        let direct = diagnose_records(&file, trace.records, &settings).map_err(|e| e.to_string())?;
        let stored = diagnose_file(&file, &outputs[0].2, &settings).map_err(|e| e.to_string())?;
        ensure(direct == stored, || format!("{name}: report from the stored trace differs"))?;

        let trace_arg = outputs[0].2.to_str().unwrap();
        let a = cli(&["diagnose", "--problem", problem_arg, "--trace", trace_arg, "--policy", policy])?;
        let b = cli(&["diagnose", "--problem", problem_arg, "--trace", trace_arg, "--policy", policy])?;
        ensure(a.code == 0 && a.stdout == b.stdout, || format!("{name}: diagnose output differs"))?;
        checked += 1;
    }
    Ok(format!("{checked} problems, byte-identical traces and reports"))
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        ("QP oracle equivalence", criterion_1),
        ("GI monotonicity and partial-solve Fejer bound", criterion_2),
        ("glued exponential example", criterion_3),
        ("zigzag example", criterion_4),
        ("smooth two-ball fast convergence", criterion_5),
        ("Fejer monotonicity sweep", criterion_6),
        ("finite infeasibility certification", criterion_7),
        ("non-finite infeasible case", criterion_8),
        ("BAP anchor monotonicity and aggregation", criterion_9),
        ("determinism and round trip", criterion_10),
    ];
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let result = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        match result {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", k + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {detail}", k + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
