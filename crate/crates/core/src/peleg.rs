//! Phased elimination driven by the pure-exploration game.
//!
//! Each phase `m` plays every arm once, then repeats until the stopping test
//! passes: take `w_t` from the exponential-weights MAX player, let the MIN
//! player best-respond with `lambda_t`, feed the gains `(lambda_t^T x_k)^2`
//! back, and pull the arm chosen by the tracking rule. At the end of the phase
//! an OLS estimate from all of the phase's samples drives elimination at
//! threshold `2^{-(m+2)}`.
//!
//! With the ball ignored (the default) the stopping test is the closed form
//! `max_{x != x'} |x - x'|^2_{V^{-1}} < eps_m^2 / r_m^2`, so the post-phase
//! certificate `max |x - x'|^2_{V^{-1}} <= 4^{-(m+1)} / r_m^2` holds by
//! construction.

use std::io::Write;

use rand::Rng;
use serde::Serialize;

use crate::env::Instance;
use crate::error::{Error, Result};
use crate::learners::{self, ExpWtsLearner, LearningRate, PairScreen, Whitened};
use crate::linalg::{self, Cholesky, SpdMatrix};

/// Floating-point slack on the tracking bounds, per unit of `t`.
const TRACKING_SLACK: f64 = 1e-9;

/// Active-set size from which the best response uses the screened pair search.
const SCREEN_MIN_ARMS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PelegConfig {
    /// Confidence level, in `(0, 1)`.
    pub delta: f64,
    /// Intersect the halfspaces with `B(0, D_m)` in both the stopping test
    /// and the best response.
    pub use_ball: bool,
    pub max_phases: usize,
    pub max_rounds_per_phase: u64,
    /// Burn in on the active arms only instead of on every arm.
    pub burnin_active_only: bool,
    pub learning_rate: LearningRate,
}

impl Default for PelegConfig {
    fn default() -> Self {
        Self {
            delta: 0.1,
            use_ball: false,
            max_phases: 64,
            max_rounds_per_phase: 10_000_000,
            burnin_active_only: false,
            learning_rate: LearningRate::Anytime,
        }
    }
}

impl PelegConfig {
    pub fn with_delta(delta: f64) -> Self {
        Self {
            delta,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "delta must lie in (0, 1), got {}",
                self.delta
            )));
        }
        if self.max_phases == 0 || self.max_rounds_per_phase == 0 {
            return Err(Error::InvalidParameter("safety caps must be positive".into()));
        }
        Ok(())
    }
}

/// Which side of `min{1, D_m sqrt(C) / r_m}` was taken for `eps_m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsilonBranch {
    /// `eps_m = 2^{-(m+1)}`.
    Unit,
    /// `eps_m = D_m sqrt(C) / r_m * 2^{-(m+1)}`.
    Shrunk,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhaseParams {
    pub m: usize,
    /// `delta / m^2`.
    pub delta_m: f64,
    /// Ball radius `D_m`.
    pub d_m: f64,
    pub eps_m: f64,
    /// `8 ln(K^2 / delta_m)`.
    pub r_m_sq: f64,
    pub branch: EpsilonBranch,
}

impl PhaseParams {
    /// Threshold of the closed-form stopping test, `eps_m^2 / r_m^2`.
    pub fn stop_threshold(&self) -> f64 {
        self.eps_m * self.eps_m / self.r_m_sq
    }

    /// Right-hand side of the post-phase certificate, `4^{-(m+1)} / r_m^2`.
    pub fn certificate_bound(&self) -> f64 {
        let unit = 0.5f64.powi(self.m as i32 + 1);
        unit * unit / self.r_m_sq
    }
}

/// Largest squared Euclidean distance between two distinct active arms.
pub fn max_pair_distance_sq(active: &[usize], arms: &[Vec<f64>]) -> f64 {
    let mut best = 0.0f64;
    for (i, &a) in active.iter().enumerate() {
        for &b in &active[i + 1..] {
            let dist: f64 = arms[a]
                .iter()
                .zip(&arms[b])
                .map(|(u, v)| (u - v) * (u - v))
                .sum();
            best = best.max(dist);
        }
    }
    best
}

/// Phase constants `(delta_m, D_m, eps_m, r_m^2)` for phase `m >= 1`.
///
/// `K` is the total number of arms (`arms.len()`); the diameter in `D_m`
/// runs over the active arms only.
pub fn phase_params(
    m: usize,
    active: &[usize],
    arms: &[Vec<f64>],
    delta: f64,
    c: f64,
) -> Result<PhaseParams> {
    if active.len() < 2 {
        return Err(Error::TooFewArms(active.len()));
    }
    if m == 0 {
        return Err(Error::InvalidParameter("phases are numbered from 1".into()));
    }
    if !(c > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "arm set must span the space (C = {c})"
        )));
    }
    let k = arms.len() as f64;
    let delta_m = delta / (m * m) as f64;
    let diam_sq = max_pair_distance_sq(active, arms);
    if !(diam_sq > 0.0) {
        return Err(Error::DegenerateInstance("active arms coincide".into()));
    }
    let d_m = 2.0 * (2f64.sqrt() - 1.0) * (c / (diam_sq * k.ln())).sqrt();
    let r_m_sq = 8.0 * (k * k / delta_m).ln();
    let ratio = d_m * c.sqrt() / r_m_sq.sqrt();
    let (scale, branch) = if ratio >= 1.0 {
        (1.0, EpsilonBranch::Unit)
    } else {
        (ratio, EpsilonBranch::Shrunk)
    };
    let eps_m = scale * 0.5f64.powi(m as i32 + 1);
    Ok(PhaseParams {
        m,
        delta_m,
        d_m,
        eps_m,
        r_m_sq,
        branch,
    })
}

/// Mutable state of one phase.
#[derive(Debug, Clone)]
pub struct PhaseState {
    pub m: usize,
    pub active: Vec<usize>,
    pub params: PhaseParams,
    /// Design matrix `V_t`.
    pub v: SpdMatrix,
    /// `sum_s Y_s x_{k_s}`.
    pub b: Vec<f64>,
    pub pulls: Vec<u64>,
    /// `sum_{s <= t} w_s^k`, seeded with 1 per burned-in arm.
    pub cum_w: Vec<f64>,
    pub t: u64,
}

impl PhaseState {
    /// Empty state before burn-in.
    pub fn new(active: Vec<usize>, params: PhaseParams, num_arms: usize, dim: usize) -> Self {
        Self {
            m: params.m,
            active,
            params,
            v: SpdMatrix::zeros(dim),
            b: vec![0.0; dim],
            pulls: vec![0; num_arms],
            cum_w: vec![0.0; num_arms],
            t: 0,
        }
    }

    fn record<R: Rng + ?Sized>(&mut self, inst: &Instance, k: usize, rng: &mut R) -> Result<()> {
        let y = inst.pull(k, rng)?;
        let x = inst.arm(k);
        self.v.add_outer(x, 1.0);
        for (bi, xi) in self.b.iter_mut().zip(x) {
            *bi += y * xi;
        }
        self.pulls[k] += 1;
        self.t += 1;
        Ok(())
    }

    /// Whether every arm satisfies `cum_w - (K-1) <= n <= cum_w + 1`.
    pub fn tracking_holds(&self) -> bool {
        let k = self.pulls.len() as f64;
        let slack = TRACKING_SLACK * self.t.max(1) as f64;
        self.pulls.iter().zip(&self.cum_w).all(|(&n, &w)| {
            let n = n as f64;
            n >= w - (k - 1.0) - slack && n <= w + 1.0 + slack
        })
    }
}

/// Per-phase record kept in a [`RunResult`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseDiag {
    pub phase: usize,
    pub active: Vec<usize>,
    pub survivors: Vec<usize>,
    /// `N_m`, burn-in included.
    pub length: u64,
    pub params: PhaseParams,
    /// `max_{x != x'} |x - x'|^2_{V^{-1}}` over the active pairs at phase end.
    pub max_pair_inv_quad: f64,
    /// `4^{-(m+1)} / r_m^2`.
    pub certificate_bound: f64,
    pub pulls: Vec<u64>,
    pub theta_hat: Vec<f64>,
    /// Losses clamped into `[-D_m^2, 0]` by the MAX player.
    pub clamped_losses: u64,
    pub tracking_violations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunResult {
    pub recommended: usize,
    /// Total samples `tau`.
    pub tau: u64,
    pub phase_lengths: Vec<u64>,
    pub phase_diag: Vec<PhaseDiag>,
    /// Filled in by a harness that knows the ground truth.
    pub success: Option<bool>,
}

impl RunResult {
    pub fn phases(&self) -> usize {
        self.phase_lengths.len()
    }

    pub fn judge(mut self, inst: &Instance) -> Self {
        self.success = Some(self.recommended == inst.best_arm());
        self
    }
}

/// Reusable buffers for the stopping test and the best response.
struct Workspace {
    chol_v: Cholesky,
    chol_w: Cholesky,
    white_v: Whitened,
    white_w: Whitened,
    white_all: Whitened,
    all: Vec<usize>,
    w: Vec<f64>,
    w_mat: SpdMatrix,
    diff: Vec<f64>,
    lambda: Vec<f64>,
    loss: Vec<f64>,
    screen: PairScreen,
    cols: Vec<f64>,
    scratch: Vec<f64>,
    /// Active pairs (by position) not yet certified below the stopping
    /// threshold. `V` only grows within a phase, so certified pairs stay so.
    pending: Vec<(usize, usize)>,
}

impl Workspace {
    fn new(arms: &[Vec<f64>], dim: usize) -> Self {
        let num_arms = arms.len();
        Self {
            cols: SpdMatrix::columns(dim, arms),
            scratch: vec![0.0; num_arms],
            chol_v: Cholesky::with_dim(dim),
            chol_w: Cholesky::with_dim(dim),
            white_v: Whitened::new(dim),
            white_w: Whitened::new(dim),
            white_all: Whitened::new(dim),
            all: (0..num_arms).collect(),
            w: vec![0.0; num_arms],
            w_mat: SpdMatrix::zeros(dim),
            diff: vec![0.0; dim],
            lambda: vec![0.0; dim],
            loss: vec![0.0; num_arms],
            screen: PairScreen::new(),
            pending: Vec::new(),
        }
    }

    fn start_phase(&mut self, active: usize) {
        self.screen.reset();
        self.pending.clear();
        for p in 0..active {
            for q in (p + 1)..active {
                self.pending.push((p, q));
            }
        }
    }
}

/// Outcome of one evaluation of the stopping test.
#[derive(Debug, Clone, Copy)]
struct StopEval {
    stop: bool,
    /// Closed form: `max pair |x - x'|^2_{V^{-1}}`, or `+inf` if `V` is
    /// singular. Ball form: the minimum ball-constrained value.
    statistic: f64,
    /// Positive when the test passes.
    margin: f64,
}

fn eval_stop(
    state: &PhaseState,
    arms: &[Vec<f64>],
    use_ball: bool,
    ws: &mut Workspace,
) -> Result<StopEval> {
    let p = &state.params;
    if use_ball {
        if ws.chol_v.refactor(&state.v).is_err() {
            return Ok(StopEval {
                stop: false,
                statistic: f64::NAN,
                margin: f64::NEG_INFINITY,
            });
        }
        let value = match learners::best_response_ball(&state.v, &state.active, arms, p.eps_m, p.d_m) {
            Ok(sol) => sol.value,
            Err(Error::Infeasible) => f64::INFINITY,
            Err(e) => return Err(e),
        };
        return Ok(StopEval {
            stop: value > p.r_m_sq,
            statistic: value,
            margin: value - p.r_m_sq,
        });
    }
    let threshold = p.stop_threshold();
    if ws.chol_v.refactor(&state.v).is_err() {
        return Ok(StopEval {
            stop: false,
            statistic: f64::INFINITY,
            margin: f64::NEG_INFINITY,
        });
    }
    ws.white_v.load(&ws.chol_v, arms, &state.active);
    let mut q = f64::NEG_INFINITY;
    let white = &ws.white_v;
    ws.pending.retain(|&(a, b)| {
        let v = white.pair_sq(a, b);
        q = q.max(v);
        v >= threshold
    });
    let stop = ws.pending.is_empty();
    if stop {
        q = ws.white_v.max_pair(state.active.len()).2;
    }
    Ok(StopEval {
        stop,
        statistic: q,
        margin: threshold - q,
    })
}


/// Number of upcoming rounds in which the closed-form test provably cannot
/// pass. After one more pull of `x`, any `q = a^T V^{-1} a` shrinks by at
/// most the factor `1 + x^T V^{-1} x`, and that factor only decreases as `V`
/// grows, so `q / (1 + g_max)^s` lower-bounds the statistic `s` rounds ahead.
fn safe_skip(statistic: f64, threshold: f64, arms: &[Vec<f64>], ws: &mut Workspace) -> u64 {
    if !statistic.is_finite() {
        return 0;
    }
    let target = threshold * (1.0 + 1e-9);
    if statistic <= target {
        return 0;
    }
    ws.white_all.load(&ws.chol_v, arms, &ws.all);
    let d = ws.all.len();
    let g_max = (0..d)
        .map(|p| {
            let y = ws.white_all.row(p);
            linalg::norm_sq(y)
        })
        .fold(0.0f64, f64::max);
    if !(g_max > 0.0) {
        return 0;
    }
    let s = ((statistic / target).ln() / g_max.ln_1p()).floor();
    if s.is_finite() && s > 0.0 {
        // stay well inside the bound's validity
        (s as u64).saturating_sub(1)
    } else {
        0
    }
}

/// Evaluates the stopping test for the current state.
///
/// Closed form (`use_ball = false`): stop iff every active pair has
/// `|x - x'|^2_{V^{-1}} < eps_m^2 / r_m^2`. Ball form: stop iff the
/// ball-constrained minimum exceeds `r_m^2`. A singular `V` never stops.
pub fn stop_check(state: &PhaseState, arms: &[Vec<f64>], cfg: &PelegConfig) -> Result<bool> {
    let mut ws = Workspace::new(arms, state.v.dim());
    ws.start_phase(state.active.len());
    Ok(eval_stop(state, arms, cfg.use_ball, &mut ws)?.stop)
}

/// `argmin_k pulls[k] / cum_w[k]`, lowest index on ties.
pub fn track_select(pulls: &[u64], cum_w: &[f64]) -> usize {
    let mut best = 0;
    let mut best_ratio = f64::INFINITY;
    for (k, (&n, &w)) in pulls.iter().zip(cum_w).enumerate() {
        let ratio = n as f64 / w;
        if ratio < best_ratio {
            best_ratio = ratio;
            best = k;
        }
    }
    best
}

/// `V^{-1} b`.
pub fn ols_estimate(v: &SpdMatrix, b: &[f64]) -> Result<Vec<f64>> {
    linalg::solve(v, b)
}

/// Removes every active arm `x` for which some active `x'` has
/// `theta_hat^T (x' - x) > 2^{-(m+2)}`. The empirical leader always stays.
pub fn eliminate(active: &[usize], arms: &[Vec<f64>], theta_hat: &[f64], m: usize) -> Vec<usize> {
    let threshold = 0.5f64.powi(m as i32 + 2);
    active
        .iter()
        .copied()
        .filter(|&x| {
            !active.iter().any(|&xp| {
                let lead: f64 = theta_hat
                    .iter()
                    .zip(arms[xp].iter().zip(&arms[x]))
                    .map(|(t, (a, b))| t * (a - b))
                    .sum();
                lead > threshold
            })
        })
        .collect()
}

/// Runs the algorithm to completion.
pub fn run<R: Rng + ?Sized>(inst: &Instance, cfg: &PelegConfig, rng: &mut R) -> Result<RunResult> {
    run_traced(inst, cfg, rng, None)
}

/// Like [`run`], optionally writing one CSV line per pull to `trace`:
/// `phase,t,arm,margin`. The margin is that of the stopping test evaluated
/// just before the pull (empty during burn-in).
pub fn run_traced<R: Rng + ?Sized>(
    inst: &Instance,
    cfg: &PelegConfig,
    rng: &mut R,
    trace: Option<&mut dyn Write>,
) -> Result<RunResult> {
    run_phases(inst, cfg, rng, trace, Sampler::Game)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Sampler {
    Game,
    /// Cycle through all arms in index order; same phases, stopping test and
    /// elimination.
    RoundRobin,
}

pub(crate) fn run_phases<R: Rng + ?Sized>(
    inst: &Instance,
    cfg: &PelegConfig,
    rng: &mut R,
    mut trace: Option<&mut dyn Write>,
    sampler: Sampler,
) -> Result<RunResult> {
    cfg.validate()?;
    let arms = inst.arms();
    let (k, d) = (inst.num_arms(), inst.dim());
    let c = linalg::min_eigenvalue(&SpdMatrix::gram(d, arms))?;
    if !(c > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "arms do not span R^{d} (C = {c})"
        )));
    }
    if let Some(out) = trace.as_deref_mut() {
        writeln!(out, "phase,t,arm,margin")?;
    }

    let mut ws = Workspace::new(arms, d);
    let mut active: Vec<usize> = (0..k).collect();
    let mut result = RunResult {
        recommended: 0,
        tau: 0,
        phase_lengths: Vec::new(),
        phase_diag: Vec::new(),
        success: None,
    };

    let mut m = 1;
    while active.len() > 1 {
        if m > cfg.max_phases {
            return Err(Error::NonTermination {
                reason: format!("exceeded {} phases", cfg.max_phases),
                partial: Box::new(result),
            });
        }
        let params = phase_params(m, &active, arms, cfg.delta, c)?;
        let mut state = PhaseState::new(active.clone(), params, k, d);
        ws.start_phase(active.len());

        let burn: Vec<usize> = if cfg.burnin_active_only && sampler == Sampler::Game {
            active.clone()
        } else {
            (0..k).collect()
        };
        for &arm in &burn {
            state.record(inst, arm, rng)?;
            state.cum_w[arm] = 1.0;
            if let Some(out) = trace.as_deref_mut() {
                writeln!(out, "{m},{},{arm},", state.t)?;
            }
        }

        let mut learner = ExpWtsLearner::new(k, params.d_m * params.d_m)?
            .with_schedule(cfg.learning_rate)
            .starting_at(state.t + 1);
        let mut tracking_violations = 0u64;
        let mut skip_until = 0u64;
        let mut last = StopEval {
            stop: false,
            statistic: f64::INFINITY,
            margin: f64::NEG_INFINITY,
        };

        loop {
            if state.t >= skip_until {
                last = eval_stop(&state, arms, cfg.use_ball, &mut ws)?;
                if last.stop {
                    break;
                }
                if !cfg.use_ball && trace.is_none() {
                    let skip = safe_skip(last.statistic, params.stop_threshold(), arms, &mut ws);
                    skip_until = state.t + 1 + skip;
                }
            }
            if state.t >= cfg.max_rounds_per_phase {
                result.phase_lengths.push(state.t);
                result.tau += state.t;
                return Err(Error::NonTermination {
                    reason: format!(
                        "phase {m} exceeded {} rounds",
                        cfg.max_rounds_per_phase
                    ),
                    partial: Box::new(result),
                });
            }

            if sampler == Sampler::RoundRobin {
                let arm = (state.t % k as u64) as usize;
                state.record(inst, arm, rng)?;
                if let Some(out) = trace.as_deref_mut() {
                    writeln!(out, "{m},{},{arm},{:e}", state.t, last.margin)?;
                }
                continue;
            }

            learner.distribution_into(&mut ws.w);
            ws.w_mat
                .assign_weighted_gram_cols(&ws.cols, &ws.w, &mut ws.scratch);
            if cfg.use_ball {
                let sol = learners::best_response_ball(
                    &ws.w_mat,
                    &state.active,
                    arms,
                    params.eps_m,
                    params.d_m,
                )?;
                ws.lambda.copy_from_slice(&sol.lambda);
            } else {
                best_response_in_place(&state.active, arms, params.eps_m, &mut ws)?;
            }
            for (l, x) in ws.loss.iter_mut().zip(arms) {
                let u = linalg::dot(&ws.lambda, x);
                *l = -(u * u);
            }
            learner.update(&ws.loss);

            for (cw, &wk) in state.cum_w.iter_mut().zip(&ws.w) {
                *cw += wk;
            }
            let arm = track_select(&state.pulls, &state.cum_w);
            state.record(inst, arm, rng)?;
            if !state.tracking_holds() {
                tracking_violations += 1;
            }
            if let Some(out) = trace.as_deref_mut() {
                writeln!(out, "{m},{},{arm},{:e}", state.t, last.margin)?;
            }
        }

        let theta_hat = ols_estimate(&state.v, &state.b)?;
        let survivors = eliminate(&state.active, arms, &theta_hat, m);
        result.phase_lengths.push(state.t);
        result.tau += state.t;
        result.phase_diag.push(PhaseDiag {
            phase: m,
            active: state.active.clone(),
            survivors: survivors.clone(),
            length: state.t,
            params,
            max_pair_inv_quad: last.statistic,
            certificate_bound: params.certificate_bound(),
            pulls: state.pulls.clone(),
            theta_hat,
            clamped_losses: learner.clamped(),
            tracking_violations,
        });
        active = survivors;
        m += 1;
    }

    result.recommended = active[0];
    Ok(result)
}

/// Closed-form best response against the current `w`, writing `lambda` into
/// the workspace.
fn best_response_in_place(
    active: &[usize],
    arms: &[Vec<f64>],
    eps: f64,
    ws: &mut Workspace,
) -> Result<()> {
    ws.chol_w.refactor(&ws.w_mat)?;
    let (p, q, norm) = if active.len() >= SCREEN_MIN_ARMS {
        ws.screen
            .max_pair(&ws.w, &ws.chol_w, arms, active, &mut ws.white_w)
    } else {
        ws.white_w.load(&ws.chol_w, arms, active);
        ws.white_w.max_pair(active.len())
    };
    let (x, xp) = (active[p], active[q]);
    for ((dv, a), b) in ws.diff.iter_mut().zip(&arms[xp]).zip(&arms[x]) {
        *dv = a - b;
    }
    ws.lambda.copy_from_slice(&ws.diff);
    ws.chol_w.solve_in_place(&mut ws.lambda);
    for l in ws.lambda.iter_mut() {
        *l *= eps / norm;
    }
    Ok(())
}
