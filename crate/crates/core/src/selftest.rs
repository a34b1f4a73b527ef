//! Invariant suites run by `peleg selftest`.
//!
//! Each suite checks the library against a small reference computed here
//! by other means and reports `(name, passed, detail)`.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::env::{self, Instance};
use crate::error::Result;
use crate::learners::{self, ExpWtsLearner};
use crate::linalg::{self, SpdMatrix};
use crate::peleg::{self, PelegConfig};

#[derive(Debug, Clone)]
pub struct SuiteOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn random_simplex<R: Rng>(rng: &mut R, k: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| -rng.random::<f64>().max(1e-300).ln()).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|v| v / s).collect()
}

/// Tracking rule against the bounds `cum_w - (K-1) <= n <= cum_w + 1`.
pub fn tracking_suite(streams: usize, horizon: usize, seed: u64) -> SuiteOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = 0u64;
    let mut steps = 0u64;
    for _ in 0..streams {
        let k = rng.random_range(2..=10);
        // burn-in as in the algorithm
        let mut pulls = vec![1u64; k];
        let mut cum = vec![1.0; k];
        let skew = rng.random_range(0.0..4.0);
        for _ in 0..horizon {
            let mut w = random_simplex(&mut rng, k);
            for (i, v) in w.iter_mut().enumerate() {
                *v *= (-skew * i as f64 / k as f64).exp();
            }
            let s: f64 = w.iter().sum();
            w.iter_mut().for_each(|v| *v /= s);
            for (c, v) in cum.iter_mut().zip(&w) {
                *c += v;
            }
            let arm = peleg::track_select(&pulls, &cum);
            pulls[arm] += 1;
            steps += 1;
            for (n, c) in pulls.iter().zip(&cum) {
                let n = *n as f64;
                if n < c - (k as f64 - 1.0) - 1e-9 || n > c + 1.0 + 1e-9 {
                    violations += 1;
                }
            }
        }
    }
    SuiteOutcome {
        name: "tracking",
        passed: violations == 0,
        detail: format!("{violations} violations over {steps} steps"),
    }
}

/// EXP-WTS regret on losses in `[0, D^2]` against `(D^2 / (sqrt 2 - 1)) sqrt(t ln K)`.
pub fn regret_suite(sequences: usize, horizon: usize, seed: u64) -> SuiteOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = 0u64;
    let mut worst_ratio = 0.0f64;
    for _ in 0..sequences {
        let k = rng.random_range(2..=10);
        let d2 = rng.random_range(0.1..5.0);
        let mut learner = ExpWtsLearner::new(k, d2).expect("valid learner");
        let mut cum_alg = 0.0;
        let mut cum = vec![0.0; k];
        let bias: Vec<f64> = (0..k).map(|_| rng.random::<f64>()).collect();
        let mut loss = vec![0.0; k];
        for t in 1..=horizon {
            let p = learner.distribution();
            for (l, b) in loss.iter_mut().zip(&bias) {
                *l = d2 * (0.5 * b + 0.5 * rng.random::<f64>());
            }
            cum_alg += linalg::dot(&p, &loss);
            for (c, l) in cum.iter_mut().zip(&loss) {
                *c += l;
            }
            // the learner expects losses in [-D^2, 0]
            let shifted: Vec<f64> = loss.iter().map(|l| l - d2).collect();
            learner.update(&shifted);
            let best = cum.iter().cloned().fold(f64::INFINITY, f64::min);
            let bound = d2 / (2f64.sqrt() - 1.0) * (t as f64 * (k as f64).ln()).sqrt();
            let regret = cum_alg - best;
            worst_ratio = worst_ratio.max(regret / bound);
            if regret > bound {
                violations += 1;
            }
        }
    }
    SuiteOutcome {
        name: "regret",
        passed: violations == 0,
        detail: format!("{violations} violations, worst regret/bound {worst_ratio:.3}"),
    }
}

/// Halfspace minimum by projected gradient descent, for reference.
fn halfspace_by_descent(w: &SpdMatrix, a: &[f64], eps: f64) -> f64 {
    let d = a.len();
    let lmax = (0..d)
        .map(|i| (0..d).map(|j| w.get(i, j).abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let step = 1.0 / (2.0 * lmax);
    let aa = linalg::norm_sq(a);
    let project = |v: &mut Vec<f64>| {
        let slack = eps - linalg::dot(v, a);
        if slack > 0.0 {
            for (vi, ai) in v.iter_mut().zip(a) {
                *vi += slack * ai / aa;
            }
        }
    };
    let mut lam: Vec<f64> = a.iter().map(|ai| eps * ai / aa).collect();
    for _ in 0..20_000 {
        let g = w.matvec(&lam);
        for (l, gi) in lam.iter_mut().zip(&g) {
            *l -= step * 2.0 * gi;
        }
        project(&mut lam);
    }
    linalg::quad_form(&lam, w).expect("dimensions match")
}

/// Closed-form best response against descent on every pair.
pub fn best_response_suite(instances: usize, seed: u64) -> SuiteOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let d = rng.random_range(2..=4);
        let k = rng.random_range(2..=5);
        let arms: Vec<Vec<f64>> = (0..k)
            .map(|_| (0..d).map(|_| rng.random_range(-0.7..0.7)).collect())
            .collect();
        let b: Vec<f64> = (0..d * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut data = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                data[i * d + j] = (0..d).map(|l| b[l * d + i] * b[l * d + j]).sum::<f64>() * 0.3;
            }
            data[i * d + i] += 0.5;
        }
        for i in 0..d {
            for j in 0..i {
                data[i * d + j] = data[j * d + i];
            }
        }
        let w = SpdMatrix::from_row_major(d, data).expect("symmetric");
        let eps = rng.random_range(0.05..1.0);
        let active: Vec<usize> = (0..k).collect();
        let got = learners::best_response_unconstrained(&w, &active, &arms, eps)
            .expect("well-posed")
            .value;
        let mut reference = f64::INFINITY;
        for i in 0..k {
            for j in 0..k {
                if i != j {
                    let a = linalg::sub(&arms[j], &arms[i]);
                    reference = reference.min(halfspace_by_descent(&w, &a, eps));
                }
            }
        }
        worst = worst.max((got - reference).abs() / reference);
    }
    SuiteOutcome {
        name: "best-response",
        passed: worst <= 1e-6,
        detail: format!("worst relative error {worst:.2e}"),
    }
}

/// Post-phase certificate, recomputed from the pull counts.
pub fn certificate_suite(runs: usize, seed: u64) -> SuiteOutcome {
    let inst = env::make_setting1(0.5).expect("valid instance");
    let cfg = PelegConfig::default();
    let mut violations = 0;
    let mut phases = 0;
    for r in 0..runs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(r as u64));
        let res = match peleg::run(&inst, &cfg, &mut rng) {
            Ok(res) => res,
            Err(_) => {
                violations += 1;
                continue;
            }
        };
        for diag in &res.phase_diag {
            phases += 1;
            if max_pair_from_counts(&inst, &diag.active, &diag.pulls) > diag.certificate_bound {
                violations += 1;
            }
        }
    }
    SuiteOutcome {
        name: "certificate",
        passed: violations == 0,
        detail: format!("{violations} violations over {phases} phases"),
    }
}

fn max_pair_from_counts(inst: &Instance, active: &[usize], pulls: &[u64]) -> f64 {
    let mut v = SpdMatrix::zeros(inst.dim());
    for (k, &n) in pulls.iter().enumerate() {
        v.add_outer(inst.arm(k), n as f64);
    }
    let mut worst = 0.0f64;
    for (i, &a) in active.iter().enumerate() {
        for &b in &active[i + 1..] {
            let diff = linalg::sub(inst.arm(a), inst.arm(b));
            worst = worst.max(linalg::inv_quad_form(&diff, &v).unwrap_or(f64::INFINITY));
        }
    }
    worst
}

/// Runs all suites, printing one line each. Returns whether all passed.
pub fn run_all<W: Write>(out: &mut W) -> Result<bool> {
    let suites = [
        tracking_suite(200, 2_000, 1),
        regret_suite(20, 2_000, 2),
        best_response_suite(20, 3),
        certificate_suite(2, 4),
    ];
    let mut ok = true;
    for s in &suites {
        writeln!(
            out,
            "{} {}: {}",
            if s.passed { "PASS" } else { "FAIL" },
            s.name,
            s.detail
        )?;
        ok &= s.passed;
    }
    Ok(ok)
}
