//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

mod common;

use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use peleg::env::{self, Instance};
use peleg::experiments::{self, Algorithm, ExperimentSpec, Setting, TrialOutcome};
use peleg::learners::{self, ExpWtsLearner};
use peleg::linalg::SpdMatrix;
use peleg::oracle::{self, SolverMethod};
use peleg::peleg::track_select;

const SWEEP_SEED: u64 = 20_240_601;
const GAPS: [f64; 5] = [0.1, 0.2, 0.3, 0.4, 0.5];

struct Suite {
    failed: usize,
}

impl Suite {
    fn report(&mut self, name: &str, passed: bool, detail: String, elapsed: Duration) {
        if !passed {
            self.failed += 1;
        }
        println!(
            "{} {name}: {detail} [{:.1}s]",
            if passed { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64()
        );
    }
}

fn dirichlet<R: Rng>(rng: &mut R, k: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// A weight stream of one of several shapes.
fn weight_stream(kind: usize, k: usize, horizon: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let fixed = dirichlet(rng, k);
    let mut learner = ExpWtsLearner::new(k, 1.0).unwrap();
    (0..horizon)
        .map(|t| match kind {
            0 => dirichlet(rng, k),
            1 => fixed.clone(),
            2 => {
                // mass sweeping around the arms
                let phase = t as f64 / 50.0;
                let raw: Vec<f64> = (0..k)
                    .map(|i| (3.0 * (phase + i as f64 * 2.0 * std::f64::consts::PI / k as f64).cos()).exp())
                    .collect();
                let s: f64 = raw.iter().sum();
                raw.into_iter().map(|v| v / s).collect()
            }
            3 => {
                let w = learner.distribution();
                let gains: Vec<f64> = (0..k).map(|_| rng.random::<f64>()).collect();
                learner.update_gains(&gains);
                w
            }
            _ => {
                // nearly one-hot, switching arm at random times
                let hot = (t / rng.random_range(1..200)) % k;
                let mut w = vec![1e-6; k];
                w[hot] = 1.0;
                let s: f64 = w.iter().sum();
                w.into_iter().map(|v| v / s).collect()
            }
        })
        .collect()
}

fn tracking(suite: &mut Suite) {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut violations = 0u64;
    let mut steps = 0u64;
    for s in 0..1000 {
        let k = 2 + s % 9;
        let stream = weight_stream(s % 5, k, 10_000, &mut rng);
        let mut pulls = vec![1u64; k];
        let mut cum = vec![1.0; k];
        for w in &stream {
            for (c, v) in cum.iter_mut().zip(w) {
                *c += v;
            }
            let arm = track_select(&pulls, &cum);
            pulls[arm] += 1;
            steps += 1;
            if !common::tracking_ok(&pulls, &cum) {
                violations += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    suite.report(
        "tracking exactness",
        violations == 0 && elapsed < Duration::from_secs(10),
        format!("{violations} violations over {steps} steps, 1000 streams, K in 2..=10"),
        elapsed,
    );
}

fn regret(suite: &mut Suite) {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut violations = 0u64;
    let mut worst = 0.0f64;
    for s in 0..100 {
        let k = 2 + s % 9;
        let d2: f64 = rng.random_range(0.05..4.0);
        let mut learner = ExpWtsLearner::new(k, d2).unwrap();
        let bias: Vec<f64> = (0..k).map(|_| rng.random::<f64>()).collect();
        let mut cum = vec![0.0; k];
        let mut alg = 0.0;
        let horizon = 10_000;
        for t in 1..=horizon {
            let loss: Vec<f64> = (0..k)
                .map(|i| match s % 4 {
                    0 => d2 * rng.random::<f64>(),
                    1 => d2 * (0.7 * bias[i] + 0.3 * rng.random::<f64>()),
                    // best arm flips halfway
                    2 => {
                        let good = if t < horizon / 2 { 0 } else { k - 1 };
                        if i == good { 0.2 * d2 } else { 0.6 * d2 }
                    }
                    _ => if (t + i) % 2 == 0 { d2 } else { 0.0 },
                })
                .collect();
            let p = learner.distribution();
            alg += p.iter().zip(&loss).map(|(a, b)| a * b).sum::<f64>();
            for (c, l) in cum.iter_mut().zip(&loss) {
                *c += l;
            }
            let shifted: Vec<f64> = loss.iter().map(|l| l - d2).collect();
            learner.update(&shifted);
            let best = cum.iter().cloned().fold(f64::INFINITY, f64::min);
            let bound = d2 / (2f64.sqrt() - 1.0) * (t as f64 * (k as f64).ln()).sqrt();
            worst = worst.max((alg - best) / bound);
            if alg - best > bound {
                violations += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    suite.report(
        "exp-wts regret",
        violations == 0 && elapsed < Duration::from_secs(30),
        format!("{violations} violations, worst regret/bound {worst:.3}, 100 sequences, t <= 1e4"),
        elapsed,
    );
}

fn unit_ball_point<R: Rng>(rng: &mut R, d: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let r = rng.random_range(0.2..1.0);
    v.iter().map(|x| x * r / n).collect()
}

fn best_response(suite: &mut Suite) {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for i in 0..100 {
        let d = 1 + i % 4;
        let k = rng.random_range(2..=5);
        let arms: Vec<Vec<f64>> = (0..k).map(|_| unit_ball_point(&mut rng, d)).collect();
        let w = common::random_spd(&mut rng, d, 0.5, 2.0);
        let eps = rng.random_range(0.01..1.0);
        let wm = SpdMatrix::from_row_major(d, common::row_major(&w)).unwrap();
        let active: Vec<usize> = (0..k).collect();
        let got = learners::best_response_unconstrained(&wm, &active, &arms, eps).unwrap();
        let mut reference = f64::INFINITY;
        for x in 0..k {
            for y in 0..k {
                if x != y {
                    let a: Vec<f64> = arms[y].iter().zip(&arms[x]).map(|(p, q)| p - q).collect();
                    reference = reference.min(common::qp_halfspace(&w, &a, eps));
                }
            }
        }
        worst = worst.max((got.value - reference).abs() / reference);
    }

    let mut worst_ball = 0.0f64;
    let mut binding = 0;
    for _ in 0..40 {
        let k = 3;
        let arms: Vec<Vec<f64>> = (0..k).map(|_| unit_ball_point(&mut rng, 2)).collect();
        let w = common::random_spd(&mut rng, 2, 0.3, 3.0);
        let eps = rng.random_range(0.05..0.5);
        let wm = SpdMatrix::from_row_major(2, common::row_major(&w)).unwrap();
        // radius between the smallest feasibility threshold and the length
        // of the unconstrained best response, so the ball usually binds
        let active: Vec<usize> = (0..k).collect();
        let free = learners::best_response_unconstrained(&wm, &active, &arms, eps).unwrap();
        let mut lo = f64::INFINITY;
        for x in 0..k {
            for y in x + 1..k {
                let a: Vec<f64> = arms[y].iter().zip(&arms[x]).map(|(p, q)| p - q).collect();
                lo = lo.min(eps / a[0].hypot(a[1]));
            }
        }
        let hi = free.lambda[0].hypot(free.lambda[1]);
        let radius = lo + rng.random_range(0.05..0.95) * (hi - lo).max(1e-3);
        let got = learners::best_response_ball(&wm, &active, &arms, eps, radius);
        let mut reference: Option<f64> = None;
        for x in 0..k {
            for y in 0..k {
                if x != y {
                    let a: Vec<f64> = arms[y].iter().zip(&arms[x]).map(|(p, q)| p - q).collect();
                    if let Some(v) = common::ball_boundary_2d(&w, &a, eps, radius) {
                        reference = Some(reference.map_or(v, |r: f64| r.min(v)));
                    }
                }
            }
        }
        match (got, reference) {
            (Ok(sol), Some(r)) => {
                if sol.value > free.value * (1.0 + 1e-9) {
                    binding += 1;
                }
                worst_ball = worst_ball.max((sol.value - r).abs() / r);
            }
            (Err(peleg::Error::Infeasible), None) => {}
            _ => worst_ball = f64::INFINITY,
        }
    }
    let elapsed = start.elapsed();
    suite.report(
        "best response vs QP oracle",
        worst <= 1e-6 && worst_ball <= 1e-3 && elapsed < Duration::from_secs(60),
        format!(
            "100 instances d <= 4: worst rel err {worst:.2e}; ball vs boundary search (d = 2, {binding}/40 binding): {worst_ball:.2e}"
        ),
        elapsed,
    );
}

fn cells<'a>(outcomes: &'a [TrialOutcome], gap: f64) -> Vec<&'a TrialOutcome> {
    outcomes.iter().filter(|o| o.record.param == gap).collect()
}

fn wall(outcomes: &[&TrialOutcome]) -> Duration {
    Duration::from_secs_f64(outcomes.iter().map(|o| o.record.wall_time_ms).sum::<f64>() / 1e3)
}

fn phase_end_certificate(suite: &mut Suite, outcomes: &[TrialOutcome]) {
    let start = Instant::now();
    let runs = cells(outcomes, 0.3);
    let inst = env::make_setting1(0.3).unwrap();
    let k = inst.num_arms() as f64;
    let mut violations = 0;
    let mut phases = 0;
    let mut worst = 0.0f64;
    for o in &runs {
        let Some(res) = &o.result else {
            violations += 1;
            continue;
        };
        for diag in &res.phase_diag {
            phases += 1;
            let m = diag.phase as i32;
            let delta_m = 0.1 / (m * m) as f64;
            let bound = 0.25f64.powi(m + 1) / (8.0 * (k * k / delta_m).ln());
            let d = inst.dim();
            let mut v = DMatrix::zeros(d, d);
            for (a, &n) in diag.pulls.iter().enumerate() {
                let x = nalgebra::DVector::from_column_slice(inst.arm(a));
                v += &x * x.transpose() * n as f64;
            }
            let mut max = 0.0f64;
            for (i, &a) in diag.active.iter().enumerate() {
                for &b in &diag.active[i + 1..] {
                    let diff: Vec<f64> = inst.arm(a).iter().zip(inst.arm(b)).map(|(p, q)| p - q).collect();
                    max = max.max(common::inv_quad(&v, &diff));
                }
            }
            worst = worst.max(max / bound);
            if max > bound {
                violations += 1;
            }
        }
    }
    let elapsed = start.elapsed() + wall(&runs);
    suite.report(
        "phase-end certificate",
        violations == 0 && runs.len() == 50 && elapsed < Duration::from_secs(120),
        format!("{violations} violations over {phases} phases of {} runs, worst ratio {worst:.4}", runs.len()),
        elapsed,
    );
}

fn delta_pac(suite: &mut Suite, outcomes: &[TrialOutcome]) {
    let mut ok = true;
    let mut parts = Vec::new();
    let mut used = Vec::new();
    for gap in [0.3, 0.5] {
        let runs = cells(outcomes, gap);
        let wins = runs.iter().filter(|o| o.record.success).count();
        ok &= wins >= 45 && runs.len() == 50;
        parts.push(format!("gap {gap}: {wins}/{}", runs.len()));
        used.extend(runs);
    }
    let elapsed = wall(&used);
    suite.report(
        "delta-PAC success",
        ok && elapsed < Duration::from_secs(300),
        parts.join(", "),
        elapsed,
    );
}

fn monotone(suite: &mut Suite, outcomes: &[TrialOutcome]) {
    let means: Vec<f64> = GAPS
        .iter()
        .map(|&g| {
            let taus: Vec<f64> = cells(outcomes, g).iter().map(|o| o.record.tau as f64).collect();
            common::mean_std(&taus).0
        })
        .collect();
    let counts: Vec<usize> = GAPS.iter().map(|&g| cells(outcomes, g).len()).collect();
    let ok = means.windows(2).all(|w| w[1] <= w[0]) && counts.iter().all(|&c| c == 50);
    let all: Vec<&TrialOutcome> = outcomes.iter().collect();
    let elapsed = wall(&all);
    suite.report(
        "mean tau nonincreasing in gap",
        ok && elapsed < Duration::from_secs(1800),
        format!(
            "means {}",
            GAPS.iter()
                .zip(&means)
                .map(|(g, m)| format!("{g}: {m:.0}"))
                .collect::<Vec<_>>()
                .join(", ")
        ),
        elapsed,
    );
}

fn phase_count(suite: &mut Suite, outcomes: &[TrialOutcome]) {
    let start = Instant::now();
    let runs = cells(outcomes, 0.3);
    let limit = (1.0f64 / 0.3).log2().ceil() as usize;
    let within = runs.iter().filter(|o| o.result.is_some() && o.record.phases <= limit).count();
    suite.report(
        "phase count bound",
        within >= 45,
        format!("{within}/{} runs with at most {limit} phases", runs.len()),
        start.elapsed(),
    );
}

fn hardness(suite: &mut Suite) {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut instances: Vec<(String, Instance, Option<f64>)> = Vec::new();
    for gap in [0.2, 0.4, 0.6] {
        let inst = Instance::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![gap, 0.0], 1.0).unwrap();
        instances.push((format!("K=2 gap {gap}"), inst, Some(gap * gap / 4.0)));
    }
    for omega in [0.1, 0.3, 0.5] {
        instances.push((format!("confound omega {omega}"), env::make_setting3(2, omega).unwrap(), None));
    }
    for i in 0..4 {
        let arms: Vec<Vec<f64>> = (0..3).map(|_| unit_ball_point(&mut rng, 2)).collect();
        let theta = unit_ball_point(&mut rng, 2);
        if let Ok(inst) = Instance::new(arms, theta, 1.0) {
            instances.push((format!("random K=3 #{i}"), inst, None));
        }
    }
    instances.push(("standard gap 0.3 (grid step 0.02)".into(), env::make_setting1(0.3).unwrap(), Some(0.01)));

    let mut worst_grid = 0.0f64;
    let mut worst_closed = 0.0f64;
    let mut worst_recip = 0.0f64;
    for (_, inst, closed) in &instances {
        let game = oracle::d_theta_star(inst, SolverMethod::GameSolver, oracle::DEFAULT_BUDGET).unwrap();
        let grid = oracle::d_theta_star(inst, SolverMethod::Grid, 0).unwrap();
        worst_grid = worst_grid.max((game.value - grid.value).abs() / grid.value);
        if let Some(c) = closed {
            worst_closed = worst_closed.max((game.value - c).abs() / c);
        }
        let alloc = oracle::oracle_allocation(inst, SolverMethod::GameSolver, oracle::DEFAULT_BUDGET).unwrap();
        worst_recip = worst_recip.max((alloc.value * game.value - 1.0).abs());
        let alloc_grid = oracle::oracle_allocation(inst, SolverMethod::Grid, 0).unwrap();
        worst_recip = worst_recip.max((alloc_grid.value * game.value - 1.0).abs());
    }
    suite.report(
        "hardness solver cross-check",
        worst_grid <= 0.05 && worst_closed <= 0.05 && worst_recip <= 0.05,
        format!(
            "{} instances: game vs grid {worst_grid:.2e}, vs closed form {worst_closed:.2e}, reciprocity {worst_recip:.2e}",
            instances.len()
        ),
        start.elapsed(),
    );
}

fn design_sum_bound(suite: &mut Suite, outcomes: &[TrialOutcome]) {
    let start = Instant::now();
    let mut ok = true;
    let mut parts = Vec::new();
    for gap in [0.3, 0.5] {
        let inst = env::make_setting1(gap).unwrap();
        let summary = inst.summarize().unwrap();
        let game = oracle::d_theta_star(&inst, SolverMethod::GameSolver, oracle::DEFAULT_BUDGET).unwrap();
        let grid = oracle::d_theta_star(&inst, SolverMethod::Grid, 0).unwrap();
        // both are attained by feasible allocations, so both lower-bound D*
        let d_star = game.value.max(grid.value);
        let rhs = 4.0 * (1.0 / summary.delta_min).log2() / d_star;
        let mut b_star: Vec<f64> = Vec::new();
        let mut worst_lhs = 0.0f64;
        let mut runs = 0;
        for o in cells(outcomes, gap) {
            let Some(res) = &o.result else {
                ok = false;
                continue;
            };
            runs += 1;
            while b_star.len() < res.phases() {
                let m = b_star.len() + 1;
                b_star.push(oracle::b_m_star(&inst, m, SolverMethod::Grid, 0).unwrap());
            }
            let lhs: f64 = (1..=res.phases()).map(|m| 4f64.powi(m as i32) * b_star[m - 1]).sum();
            worst_lhs = worst_lhs.max(lhs);
        }
        ok &= worst_lhs <= rhs && runs > 0;
        parts.push(format!("gap {gap}: max lhs {worst_lhs:.2} <= rhs {rhs:.2} over {runs} runs"));
    }
    suite.report("design-sum bound", ok, parts.join("; "), start.elapsed());
}

fn membership(suite: &mut Suite, outcomes: &[TrialOutcome]) {
    let start = Instant::now();
    let inst = env::make_setting1(0.3).unwrap();
    let mut total = 0;
    let mut good = 0;
    for o in cells(outcomes, 0.3) {
        if let Some(res) = &o.result {
            for diag in &res.phase_diag {
                total += 1;
                if oracle::s_m_membership(&inst, &diag.active, diag.phase)
                    && oracle::s_m_membership(&inst, &diag.survivors, diag.phase + 1)
                {
                    good += 1;
                }
            }
        }
    }
    let frac = good as f64 / total.max(1) as f64;
    suite.report(
        "(extra) favorable-event membership",
        frac >= 0.9 && total > 0,
        format!("{good}/{total} phase transitions"),
        start.elapsed(),
    );
}

fn reproducibility(suite: &mut Suite) {
    let start = Instant::now();
    let mut std_spec = ExperimentSpec::new(Setting::Standard, vec![0.3, 0.5]);
    std_spec.trials = 3;
    std_spec.base_seed = 77;
    std_spec.algorithms = vec![Algorithm::Peleg, Algorithm::OracleBaseline, Algorithm::UniformStatic];
    let mut conf_spec = ExperimentSpec::new(Setting::Confound, vec![2.0, 3.0]);
    conf_spec.trials = 3;
    conf_spec.base_seed = 78;
    conf_spec.algorithms = std_spec.algorithms.clone();

    let render = |spec: &ExperimentSpec| -> (Vec<u8>, Vec<u8>) {
        let recs = experiments::run_experiment(spec).unwrap();
        let mut a = Vec::new();
        experiments::write_records(&mut a, &recs).unwrap();
        let mut b = Vec::new();
        experiments::write_summary(&mut b, &experiments::aggregate(&recs).unwrap()).unwrap();
        (a, b)
    };
    let mut identical = true;
    let mut bytes = 0;
    for spec in [&std_spec, &conf_spec] {
        let first = render(spec);
        let mut threaded = spec.clone();
        threaded.workers = Some(2);
        let second = render(&threaded);
        identical &= first == second;
        bytes += first.0.len();
    }
    suite.report(
        "byte-identical CSV",
        identical,
        format!("two runs each of two specs ({bytes} bytes of records), 1 vs 2 workers"),
        start.elapsed(),
    );
}

fn main() {
    let mut suite = Suite { failed: 0 };
    tracking(&mut suite);
    regret(&mut suite);
    best_response(&mut suite);
    hardness(&mut suite);
    reproducibility(&mut suite);

    let mut spec = ExperimentSpec::new(Setting::Standard, GAPS.to_vec());
    spec.trials = 50;
    spec.base_seed = SWEEP_SEED;
    spec.record_wall_time = true;
    let sweep_start = Instant::now();
    let outcomes = experiments::run_experiment_detailed(&spec).unwrap();
    println!(
        "shared sweep: standard setting, gaps {GAPS:?}, 50 trials, delta 0.1 [{:.1}s]",
        sweep_start.elapsed().as_secs_f64()
    );
    phase_end_certificate(&mut suite, &outcomes);
    delta_pac(&mut suite, &outcomes);
    monotone(&mut suite, &outcomes);
    phase_count(&mut suite, &outcomes);
    design_sum_bound(&mut suite, &outcomes);
    membership(&mut suite, &outcomes);

    if suite.failed > 0 {
        println!("{} criteria failed", suite.failed);
        std::process::exit(1);
    }
    println!("all criteria passed");
}
