//! Instance hardness and optimal designs.
//!
//! Both `D*` and the design values `B_m` are saddle points of
//! `max_w min_c eps_c^2 / |a_c|^2_{W^{-1}}` over a list of candidate
//! directions `a_c = x_j - x_i` with margins `eps_c`, where
//! `W = sum_k w_k x_k x_k^T` and `w` ranges over the simplex on all arms.
//! For `D*` the candidates are `x* - x` with margin the gap of `x`; for
//! `B_m` they are all active pairs with unit margin. The reciprocal
//! `min_w max_c |a_c|^2_{W^{-1}} / eps_c^2` is the optimal-design form.
//!
//! Two solvers: a game solver (exponential weights against the best
//! response, averaged iterate) and an exhaustive simplex grid for `K <= 5`.
//! A singular `W` scores as the worst possible design.

use rand::Rng;
use serde::Serialize;

use crate::env::Instance;
use crate::error::{Error, Result};
use crate::learners::{ExpWtsLearner, Whitened};
use crate::linalg::{self, Cholesky, SpdMatrix};
use crate::peleg::RunResult;

pub const DEFAULT_BUDGET: usize = 50_000;

/// Grid step for up to three arms.
pub const GRID_STEP_FINE: f64 = 1e-3;
/// Grid step for four or five arms.
pub const GRID_STEP_COARSE: f64 = 2e-2;

/// Ridge added to `W` inside the game solver, relative to `trace / d`.
/// Arms that stop receiving gains lose their weight geometrically and can make
/// the iterate numerically singular in directions no candidate uses.
const GAME_RIDGE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverMethod {
    GameSolver,
    Grid,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AllocationResult {
    pub w: Vec<f64>,
    pub value: f64,
    /// Game rounds, or grid points visited.
    pub iterations: usize,
    pub method: SolverMethod,
    /// Game solver only: upper bound on the max-min value minus the value at
    /// the averaged iterate.
    pub duality_gap: Option<f64>,
}

/// Grid step used for `k` arms, if the grid solver supports it.
pub fn grid_step(k: usize) -> Option<f64> {
    match k {
        0..=3 => Some(GRID_STEP_FINE),
        4 | 5 => Some(GRID_STEP_COARSE),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    i: usize,
    j: usize,
    eps: f64,
}

fn hardness_candidates(inst: &Instance) -> Result<Vec<Candidate>> {
    let best = inst.best_arm();
    let top = inst.mean(best);
    let cands: Vec<Candidate> = (0..inst.num_arms())
        .filter(|&k| k != best)
        .map(|k| Candidate {
            i: k,
            j: best,
            eps: top - inst.mean(k),
        })
        .collect();
    if cands.is_empty() {
        return Err(Error::TooFewArms(inst.num_arms()));
    }
    Ok(cands)
}

fn pair_candidates(active: &[usize], arms: &[Vec<f64>]) -> Result<Vec<Candidate>> {
    if active.len() < 2 {
        return Err(Error::TooFewArms(active.len()));
    }
    let d = arms.first().map_or(0, Vec::len);
    for &k in active {
        let x = arms.get(k).ok_or(Error::ArmOutOfRange {
            index: k,
            arms: arms.len(),
        })?;
        if x.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: x.len(),
            });
        }
    }
    let mut sorted = active.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut out = Vec::new();
    for (p, &i) in sorted.iter().enumerate() {
        for &j in &sorted[p + 1..] {
            out.push(Candidate { i, j, eps: 1.0 });
        }
    }
    if out.is_empty() {
        return Err(Error::TooFewArms(1));
    }
    Ok(out)
}

/// `max_c |a_c|^2_{W^{-1}} / eps_c^2`, `+inf` for a singular design.
fn design_objective(arms: &[Vec<f64>], cands: &[Candidate], w: &[f64]) -> f64 {
    let d = arms[0].len();
    let wm = SpdMatrix::weighted_gram(d, arms, w);
    let chol = match Cholesky::factor(&wm) {
        Ok(c) => c,
        Err(_) => return f64::INFINITY,
    };
    let mut a = vec![0.0; d];
    let mut worst = 0.0f64;
    for c in cands {
        for ((av, xj), xi) in a.iter_mut().zip(&arms[c.j]).zip(&arms[c.i]) {
            *av = xj - xi;
        }
        worst = worst.max(chol.inv_quad_form(&a) / (c.eps * c.eps));
    }
    worst
}

fn check_weights(w: &[f64], k: usize) -> Result<()> {
    if w.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            found: w.len(),
        });
    }
    if w.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::InvalidParameter("weights must be nonnegative".into()));
    }
    Ok(())
}

/// `min_{x != x*} gap_x^2 / |x* - x|^2_{W^{-1}}` at the given allocation;
/// zero when `W` is singular.
pub fn hardness_at(inst: &Instance, w: &[f64]) -> Result<f64> {
    check_weights(w, inst.num_arms())?;
    let cands = hardness_candidates(inst)?;
    Ok(1.0 / design_objective(inst.arms(), &cands, w))
}

/// `max_{x, x' in active} |x - x'|^2_{W^{-1}}` at the given allocation;
/// `+inf` when `W` is singular.
pub fn design_value_at(active: &[usize], arms: &[Vec<f64>], w: &[f64]) -> Result<f64> {
    check_weights(w, arms.len())?;
    let cands = pair_candidates(active, arms)?;
    Ok(design_objective(arms, &cands, w))
}

/// Averaged iterate of the game together with the best-response upper bound.
fn game_solve(arms: &[Vec<f64>], cands: &[Candidate], budget: usize) -> Result<(Vec<f64>, f64)> {
    if budget == 0 {
        return Err(Error::InvalidParameter("budget must be positive".into()));
    }
    let k = arms.len();
    let d = arms[0].len();
    let all: Vec<usize> = (0..k).collect();
    let mut learner = ExpWtsLearner::new(k, 1.0)?;
    let mut chol = Cholesky::with_dim(d);
    let mut white = Whitened::new(d);
    let mut wm = SpdMatrix::zeros(d);
    let mut w = vec![0.0; k];
    let mut sum_w = vec![0.0; k];
    let mut sum_gain = vec![0.0; k];
    let mut gains = vec![0.0; k];
    let mut lambda = vec![0.0; d];
    let mut bound = 0.0f64;
    let cols = SpdMatrix::columns(d, arms);
    let mut scratch = vec![0.0; k];

    for _ in 0..budget {
        learner.distribution_into(&mut w);
        wm.assign_weighted_gram_cols(&cols, &w, &mut scratch);
        wm.add_diagonal(GAME_RIDGE * wm.trace() / d as f64);
        chol.refactor(&wm)?;
        white.load(&chol, arms, &all);

        let mut pick = (cands[0], f64::INFINITY, 1.0);
        for &c in cands {
            let q = white.pair_sq(c.i, c.j);
            let value = c.eps * c.eps / q;
            if value < pick.1 {
                pick = (c, value, q);
            }
        }
        let (c, _, q) = pick;
        for ((l, xj), xi) in lambda.iter_mut().zip(&arms[c.j]).zip(&arms[c.i]) {
            *l = xj - xi;
        }
        chol.solve_in_place(&mut lambda);
        for l in lambda.iter_mut() {
            *l *= c.eps / q;
        }

        for ((g, x), sg) in gains.iter_mut().zip(arms).zip(sum_gain.iter_mut()) {
            let u = linalg::dot(&lambda, x);
            *g = u * u;
            *sg += *g;
        }
        for (sw, &wk) in sum_w.iter_mut().zip(&w) {
            *sw += wk;
        }
        bound = gains.iter().fold(bound, |m, &g| m.max(g));
        learner.set_loss_bound(bound);
        learner.update_gains(&gains);
    }

    let t = budget as f64;
    let w_bar: Vec<f64> = sum_w.iter().map(|s| s / t).collect();
    let upper = sum_gain.iter().fold(0.0f64, |m, &g| m.max(g / t));
    Ok((w_bar, upper))
}

/// Visits every point of the simplex grid `{n / steps : sum = steps}` in
/// lexicographic order of the counts.
fn for_each_grid_point(k: usize, steps: usize, mut f: impl FnMut(&[f64])) -> usize {
    fn rec(
        pos: usize,
        remaining: usize,
        steps: usize,
        w: &mut [f64],
        f: &mut dyn FnMut(&[f64]),
    ) -> usize {
        if pos + 1 == w.len() {
            w[pos] = remaining as f64 / steps as f64;
            f(w);
            return 1;
        }
        let mut visited = 0;
        for c in 0..=remaining {
            w[pos] = c as f64 / steps as f64;
            visited += rec(pos + 1, remaining - c, steps, w, f);
        }
        visited
    }
    let mut w = vec![0.0; k];
    rec(0, steps, steps, &mut w, &mut f)
}

fn grid_solve(arms: &[Vec<f64>], cands: &[Candidate]) -> Result<(Vec<f64>, f64, usize)> {
    let k = arms.len();
    let step = grid_step(k).ok_or_else(|| {
        Error::InvalidParameter(format!("grid solver supports at most 5 arms, got {k}"))
    })?;
    let steps = (1.0 / step).round() as usize;
    let mut best_w = vec![1.0 / k as f64; k];
    let mut best = f64::INFINITY;
    let visited = for_each_grid_point(k, steps, |w| {
        let v = design_objective(arms, cands, w);
        if v < best {
            best = v;
            best_w.copy_from_slice(w);
        }
    });
    Ok((best_w, best, visited))
}

/// `D*` and the allocation attaining it.
pub fn d_theta_star(inst: &Instance, method: SolverMethod, budget: usize) -> Result<AllocationResult> {
    let cands = hardness_candidates(inst)?;
    let arms = inst.arms();
    match method {
        SolverMethod::Grid => {
            let (w, recip, visited) = grid_solve(arms, &cands)?;
            Ok(AllocationResult {
                w,
                value: 1.0 / recip,
                iterations: visited,
                method,
                duality_gap: None,
            })
        }
        SolverMethod::GameSolver => {
            let (w, upper) = game_solve(arms, &cands, budget)?;
            let value = 1.0 / design_objective(arms, &cands, &w);
            Ok(AllocationResult {
                w,
                value,
                iterations: budget,
                method,
                duality_gap: Some((upper - value).max(0.0)),
            })
        }
    }
}

/// The allocation `w*` minimising `max_{x != x*} |x* - x|^2_{W^{-1}} / gap_x^2`;
/// `value` is that minimum, the reciprocal of `D*`.
pub fn oracle_allocation(inst: &Instance, method: SolverMethod, budget: usize) -> Result<AllocationResult> {
    let cands = hardness_candidates(inst)?;
    let arms = inst.arms();
    match method {
        SolverMethod::Grid => {
            let (w, value, visited) = grid_solve(arms, &cands)?;
            Ok(AllocationResult {
                w,
                value,
                iterations: visited,
                method,
                duality_gap: None,
            })
        }
        SolverMethod::GameSolver => {
            let (w, upper) = game_solve(arms, &cands, budget)?;
            let value = design_objective(arms, &cands, &w);
            Ok(AllocationResult {
                w,
                value,
                iterations: budget,
                method,
                duality_gap: Some((upper - 1.0 / value).max(0.0)),
            })
        }
    }
}

/// `B = min_w max_{x, x' in active} |x - x'|^2_{W^{-1}}` with `w` over all arms.
pub fn b_m_value(
    active: &[usize],
    arms: &[Vec<f64>],
    method: SolverMethod,
    budget: usize,
) -> Result<AllocationResult> {
    let cands = pair_candidates(active, arms)?;
    match method {
        SolverMethod::Grid => {
            let (w, value, visited) = grid_solve(arms, &cands)?;
            Ok(AllocationResult {
                w,
                value,
                iterations: visited,
                method,
                duality_gap: None,
            })
        }
        SolverMethod::GameSolver => {
            let (w, upper) = game_solve(arms, &cands, budget)?;
            let value = design_objective(arms, &cands, &w);
            Ok(AllocationResult {
                w,
                value,
                iterations: budget,
                method,
                duality_gap: Some((upper - 1.0 / value).max(0.0)),
            })
        }
    }
}

/// `S_m = {x : gap_x < 2^{-m}}`.
pub fn s_m(inst: &Instance, m: usize) -> Vec<usize> {
    let top = inst.mean(inst.best_arm());
    let bound = 0.5f64.powi(m as i32);
    (0..inst.num_arms())
        .filter(|&k| top - inst.mean(k) < bound)
        .collect()
}

/// `B_m*`, the design value over `S_m`; zero when `S_m` is a single arm.
pub fn b_m_star(inst: &Instance, m: usize, method: SolverMethod, budget: usize) -> Result<f64> {
    let set = s_m(inst, m);
    if set.len() < 2 {
        return Ok(0.0);
    }
    Ok(b_m_value(&set, inst.arms(), method, budget)?.value)
}

/// True iff `x*` is active and every active arm lies in `S_m`.
pub fn s_m_membership(inst: &Instance, active: &[usize], m: usize) -> bool {
    let set = s_m(inst, m);
    active.contains(&inst.best_arm()) && active.iter().all(|k| set.contains(k))
}

/// `log(1 / (2.4 delta)) / D*`, the asymptotic lower bound on expected samples.
pub fn lower_bound(delta: f64, d_star: f64) -> f64 {
    (1.0 / (2.4 * delta)).ln() / d_star
}

/// Upper bound on a phase length,
/// `max(2 r_m^2 B_m / eps_m^2 + 1, K)` with `B_m` taken at the given value.
pub fn phase_length_bound(r_m_sq: f64, eps_m: f64, b_m: f64, num_arms: usize) -> f64 {
    (2.0 * r_m_sq * b_m / (eps_m * eps_m) + 1.0).max(num_arms as f64)
}

/// Sample size `N = ceil(log(K / delta) / D*)` and per-arm pull counts
/// `2 floor(w_k N) + 1` of the oracle baseline.
pub fn oracle_pull_counts(num_arms: usize, delta: f64, alloc: &AllocationResult, d_star: f64) -> Result<Vec<u64>> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidParameter(format!("delta = {delta}")));
    }
    if !(d_star > 0.0 && d_star.is_finite()) {
        return Err(Error::InvalidParameter(format!("D* = {d_star}")));
    }
    check_weights(&alloc.w, num_arms)?;
    let n = ((num_arms as f64 / delta).ln() / d_star).ceil();
    Ok(alloc
        .w
        .iter()
        .map(|&wk| 2 * (wk * n).floor() as u64 + 1)
        .collect())
}

/// Non-adaptive baseline: a precomputed allocation, OLS, argmax.
pub fn oracle_baseline_with<R: Rng + ?Sized>(
    inst: &Instance,
    delta: f64,
    alloc: &AllocationResult,
    rng: &mut R,
) -> Result<RunResult> {
    let d_star = hardness_at(inst, &alloc.w)?;
    let counts = oracle_pull_counts(inst.num_arms(), delta, alloc, d_star)?;
    let d = inst.dim();
    let mut v = SpdMatrix::zeros(d);
    let mut b = vec![0.0; d];
    for (k, &n) in counts.iter().enumerate() {
        let x = inst.arm(k);
        for _ in 0..n {
            let y = inst.pull(k, rng)?;
            for (bi, xi) in b.iter_mut().zip(x) {
                *bi += y * xi;
            }
        }
        v.add_outer(x, n as f64);
    }
    let theta_hat = linalg::solve(&v, &b)?;
    let mut recommended = 0;
    let mut best = f64::NEG_INFINITY;
    for (k, x) in inst.arms().iter().enumerate() {
        let m = linalg::dot(&theta_hat, x);
        if m > best {
            best = m;
            recommended = k;
        }
    }
    let tau = counts.iter().sum();
    Ok(RunResult {
        recommended,
        tau,
        phase_lengths: vec![tau],
        phase_diag: Vec::new(),
        success: None,
    })
}

/// The oracle baseline with `w*` from the game solver at the default budget.
pub fn oracle_baseline_run<R: Rng + ?Sized>(inst: &Instance, delta: f64, rng: &mut R) -> Result<RunResult> {
    let alloc = oracle_allocation(inst, SolverMethod::GameSolver, DEFAULT_BUDGET)?;
    oracle_baseline_with(inst, delta, &alloc, rng)
}
