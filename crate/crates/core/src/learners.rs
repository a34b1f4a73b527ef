//! The two players of the pure-exploration game.
//!
//! The MAX player is an exponential-weights learner over the `K` arms. The
//! MIN player best-responds with the `W`-norm-minimal point of a union of
//! halfspaces `{lambda : lambda^T (x' - x) >= eps}`, optionally clipped to a
//! Euclidean ball. Without the ball every halfspace has the closed form
//! `eps^2 / |x' - x|^2_{W^{-1}}`, so the best response is a pair search.

use crate::error::{Error, Result};
use crate::linalg::{self, Cholesky, SpdMatrix};

/// Learning-rate schedule for [`ExpWtsLearner`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LearningRate {
    /// `eta_t = sqrt(8 ln K / t) / L` with `t` the current round.
    #[default]
    Anytime,
    /// Fixed rate per epoch of length `2^j`, restarting the weights at each
    /// epoch boundary.
    Doubling,
}

/// Exponential weights over `K` experts, stored in log space.
///
/// Losses are expected in `[-loss_bound, 0]` (negated gains); values outside
/// are clamped and counted in [`ExpWtsLearner::clamped`].
#[derive(Debug, Clone)]
pub struct ExpWtsLearner {
    log_weights: Vec<f64>,
    loss_bound: f64,
    round: u64,
    schedule: LearningRate,
    steps: u64,
    epoch_end: u64,
    clamped: u64,
}

impl ExpWtsLearner {
    /// Fresh learner with uniform weights, starting at round 1.
    pub fn new(k: usize, loss_bound: f64) -> Result<Self> {
        if k == 0 {
            return Err(Error::TooFewArms(0));
        }
        if !(loss_bound > 0.0 && loss_bound.is_finite()) {
            return Err(Error::InvalidParameter(format!("loss bound = {loss_bound}")));
        }
        Ok(Self {
            log_weights: vec![0.0; k],
            loss_bound,
            round: 1,
            schedule: LearningRate::Anytime,
            steps: 0,
            epoch_end: 1,
            clamped: 0,
        })
    }

    pub fn with_schedule(mut self, schedule: LearningRate) -> Self {
        self.schedule = schedule;
        self
    }

    /// Sets the round index used by the next update (the time-varying rate
    /// reads it). Must be at least 1.
    pub fn starting_at(mut self, round: u64) -> Self {
        self.round = round.max(1);
        self
    }

    pub fn num_experts(&self) -> usize {
        self.log_weights.len()
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn loss_bound(&self) -> f64 {
        self.loss_bound
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    pub fn clamped(&self) -> u64 {
        self.clamped
    }

    /// Replaces the loss scale. Used by the oracle solvers, whose losses have
    /// no a-priori bound.
    pub fn set_loss_bound(&mut self, loss_bound: f64) {
        if loss_bound > 0.0 && loss_bound.is_finite() {
            self.loss_bound = loss_bound;
        }
    }

    pub fn distribution(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.log_weights.len()];
        self.distribution_into(&mut w);
        w
    }

    /// Softmax of the log-weights, written into `out`.
    pub fn distribution_into(&self, out: &mut [f64]) {
        let max = self
            .log_weights
            .iter()
            .fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let mut total = 0.0;
        for (o, &lw) in out.iter_mut().zip(&self.log_weights) {
            *o = (lw - max).exp();
            total += *o;
        }
        for o in out.iter_mut() {
            *o /= total;
        }
    }

    fn learning_rate(&self) -> f64 {
        let log_k = (self.log_weights.len() as f64).ln();
        let horizon = match self.schedule {
            LearningRate::Anytime => self.round as f64,
            LearningRate::Doubling => self.epoch_end as f64,
        };
        (8.0 * log_k / horizon).sqrt() / self.loss_bound
    }

    /// One multiplicative-weights step with the given loss vector.
    pub fn update(&mut self, loss: &[f64]) {
        debug_assert_eq!(loss.len(), self.log_weights.len());
        if self.schedule == LearningRate::Doubling && self.steps >= self.epoch_end {
            // next epoch doubles in length
            self.epoch_end *= 2;
            self.steps = 0;
            self.log_weights.iter_mut().for_each(|v| *v = 0.0);
        }
        let eta = self.learning_rate();
        let bound = self.loss_bound;
        let mut max = f64::NEG_INFINITY;
        for (lw, &l) in self.log_weights.iter_mut().zip(loss) {
            let clipped = if l.is_nan() { 0.0 } else { l.clamp(-bound, 0.0) };
            if clipped != l {
                self.clamped += 1;
            }
            *lw -= eta * clipped;
            max = max.max(*lw);
        }
        for lw in self.log_weights.iter_mut() {
            *lw -= max;
        }
        self.round += 1;
        self.steps += 1;
    }

    /// Update from gains `U_k >= 0`; the loss handed over is `-U`.
    pub fn update_gains(&mut self, gains: &[f64]) {
        let loss: Vec<f64> = gains.iter().map(|g| -g).collect();
        self.update(&loss);
    }
}

/// Minimiser of the MIN player's subproblem.
#[derive(Debug, Clone, PartialEq)]
pub struct BestResponseSolution {
    pub lambda: Vec<f64>,
    /// `(x, x')`: the halfspace `lambda^T (x' - x) >= eps` attaining the minimum.
    pub pair: (usize, usize),
    /// `|lambda|^2_W`.
    pub value: f64,
}

/// Whitened arms `L^{-1} x_k` for repeated pairwise `W^{-1}`-norm queries.
#[derive(Debug, Clone)]
pub(crate) struct Whitened {
    dim: usize,
    ys: Vec<f64>,
}

impl Whitened {
    pub(crate) fn new(dim: usize) -> Self {
        Self {
            dim,
            ys: Vec::new(),
        }
    }

    /// Whitens `arms[idx[0]], arms[idx[1]], ..` in that order.
    pub(crate) fn load<X: AsRef<[f64]>>(&mut self, chol: &Cholesky, arms: &[X], idx: &[usize]) {
        let d = self.dim;
        self.ys.resize(idx.len() * d, 0.0);
        for (p, &k) in idx.iter().enumerate() {
            let y = &mut self.ys[p * d..(p + 1) * d];
            y.copy_from_slice(arms[k].as_ref());
            chol.forward(y);
        }
    }

    /// Whitens one arm into slot `p`; the slots must already be sized by
    /// [`Whitened::load`].
    pub(crate) fn load_one(&mut self, chol: &Cholesky, x: &[f64], p: usize) {
        let d = self.dim;
        let y = &mut self.ys[p * d..(p + 1) * d];
        y.copy_from_slice(x);
        chol.forward(y);
    }

    pub(crate) fn row(&self, p: usize) -> &[f64] {
        &self.ys[p * self.dim..(p + 1) * self.dim]
    }

    #[inline]
    pub(crate) fn pair_sq(&self, p: usize, q: usize) -> f64 {
        let d = self.dim;
        let a = &self.ys[p * d..(p + 1) * d];
        let b = &self.ys[q * d..(q + 1) * d];
        a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum()
    }

    /// Largest `|y_p - y_q|^2` over `p < q`, first in lexicographic order on
    /// ties. Returns `(p, q, value)`.
    pub(crate) fn max_pair(&self, n: usize) -> (usize, usize, f64) {
        let mut best = (0, 1, f64::NEG_INFINITY);
        for p in 0..n {
            for q in (p + 1)..n {
                let v = self.pair_sq(p, q);
                if v > best.2 {
                    best = (p, q, v);
                }
            }
        }
        best
    }
}

/// Exact farthest pair of whitened active arms, screened against a stored
/// baseline `W_0`.
///
/// If `W_t >= rho W_0` in the Loewner order then every
/// `|a|^2_{W_t^{-1}} <= |a|^2_{W_0^{-1}} / rho`. For `W = sum_k w_k x_k x_k^T`
/// the choice `rho = min_k w_k(t) / w_k(0)` over arms with `w_k(0) > 0`
/// qualifies. Pairs are visited by decreasing baseline value and the scan
/// stops once no remaining pair can reach the best exact value. Result and
/// tie-breaking match [`Whitened::max_pair`].
#[derive(Debug, Clone)]
pub(crate) struct PairScreen {
    base_w: Vec<f64>,
    order: Vec<(usize, usize, f64)>,
    stamp: Vec<u64>,
    round: u64,
    stale: bool,
    rebuilds: u64,
}

/// Exact evaluations in one round after which the baseline is refreshed.
const SCREEN_REBUILD_AFTER: usize = 16;

impl PairScreen {
    pub(crate) fn new() -> Self {
        Self {
            base_w: Vec::new(),
            order: Vec::new(),
            stamp: Vec::new(),
            round: 0,
            stale: true,
            rebuilds: 0,
        }
    }

    /// Forget the baseline, e.g. when the active set changes.
    pub(crate) fn reset(&mut self) {
        self.stale = true;
    }

    #[cfg(test)]
    pub(crate) fn rebuilds(&self) -> u64 {
        self.rebuilds
    }

    fn rebuild(
        &mut self,
        w: &[f64],
        chol: &Cholesky,
        arms: &[Vec<f64>],
        active: &[usize],
        white: &mut Whitened,
    ) -> (usize, usize, f64) {
        let n = active.len();
        white.load(chol, arms, active);
        self.order.clear();
        for p in 0..n {
            for q in (p + 1)..n {
                self.order.push((p, q, white.pair_sq(p, q)));
            }
        }
        self.order.sort_by(|a, b| {
            b.2.partial_cmp(&a.2)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then((a.0, a.1).cmp(&(b.0, b.1)))
        });
        self.base_w.clear();
        self.base_w.extend_from_slice(w);
        self.stale = false;
        self.rebuilds += 1;
        self.order[0]
    }

    pub(crate) fn max_pair(
        &mut self,
        w: &[f64],
        chol: &Cholesky,
        arms: &[Vec<f64>],
        active: &[usize],
        white: &mut Whitened,
    ) -> (usize, usize, f64) {
        self.round += 1;
        let mut rho = f64::INFINITY;
        if !self.stale {
            for (&b, &c) in self.base_w.iter().zip(w) {
                if b > 0.0 {
                    rho = rho.min(c / b);
                }
            }
        }
        if self.stale || !(rho > 0.0 && rho.is_finite()) {
            return self.rebuild(w, chol, arms, active, white);
        }
        let n = active.len();
        self.stamp.resize(n, 0);
        let scale = (1.0 + 1e-9) / rho;
        let mut best = (0, 1, f64::NEG_INFINITY);
        let mut evaluated = 0;
        for &(p, q, d0) in &self.order {
            if d0 * scale < best.2 {
                break;
            }
            for idx in [p, q] {
                if self.stamp[idx] != self.round {
                    white.load_one(chol, &arms[active[idx]], idx);
                    self.stamp[idx] = self.round;
                }
            }
            let v = white.pair_sq(p, q);
            evaluated += 1;
            if v > best.2 || (v == best.2 && (p, q) < (best.0, best.1)) {
                best = (p, q, v);
            }
        }
        if evaluated > SCREEN_REBUILD_AFTER {
            self.stale = true;
        }
        best
    }
}

fn check_inputs(w: &SpdMatrix, active: &[usize], arms: &[Vec<f64>], eps: f64) -> Result<()> {
    if active.len() < 2 {
        return Err(Error::TooFewArms(active.len()));
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidParameter(format!("eps = {eps}")));
    }
    for &k in active {
        let x = arms.get(k).ok_or(Error::ArmOutOfRange {
            index: k,
            arms: arms.len(),
        })?;
        if x.len() != w.dim() {
            return Err(Error::DimensionMismatch {
                expected: w.dim(),
                found: x.len(),
            });
        }
    }
    Ok(())
}

/// `lambda = eps * W^{-1} a / |a|^2_{W^{-1}}`, the minimiser of
/// `|lambda|_W^2` on `{lambda^T a >= eps}`.
pub(crate) fn halfspace_minimizer(chol: &Cholesky, a: &[f64], eps: f64) -> (Vec<f64>, f64) {
    let mut z = a.to_vec();
    chol.forward(&mut z);
    let q = linalg::norm_sq(&z);
    chol.backward(&mut z);
    for v in z.iter_mut() {
        *v *= eps / q;
    }
    (z, eps * eps / q)
}

/// Best response over the union of halfspaces, no ball.
///
/// For each ordered pair of distinct active arms the halfspace minimum is
/// `eps^2 / |x' - x|^2_{W^{-1}}`; the smallest wins, ties going to the
/// lexicographically first pair.
pub fn best_response_unconstrained(
    w: &SpdMatrix,
    active: &[usize],
    arms: &[Vec<f64>],
    eps: f64,
) -> Result<BestResponseSolution> {
    check_inputs(w, active, arms, eps)?;
    let mut active = active.to_vec();
    active.sort_unstable();
    let chol = Cholesky::factor(w)?;
    let mut white = Whitened::new(w.dim());
    white.load(&chol, arms, &active);
    let (p, q, _) = white.max_pair(active.len());
    let (x, xp) = (active[p], active[q]);
    let a = linalg::sub(&arms[xp], &arms[x]);
    let (lambda, value) = halfspace_minimizer(&chol, &a, eps);
    Ok(BestResponseSolution {
        lambda,
        pair: (x, xp),
        value,
    })
}

/// Exact minimiser of `|lambda|^2_W` over `{lambda^T a >= eps, |lambda|_2 <= radius}`.
/// `None` when the two sets do not meet.
pub fn halfspace_ball_minimizer(
    w: &SpdMatrix,
    a: &[f64],
    eps: f64,
    radius: f64,
) -> Result<Option<(Vec<f64>, f64)>> {
    let a_norm = linalg::norm_sq(a).sqrt();
    if a_norm == 0.0 {
        return Ok(None);
    }
    let min_norm = eps / a_norm;
    if min_norm > radius {
        return Ok(None);
    }
    let chol = Cholesky::factor(w)?;
    let (lambda, value) = halfspace_minimizer(&chol, a, eps);
    if linalg::norm_sq(&lambda).sqrt() <= radius {
        return Ok(Some((lambda, value)));
    }
    let value_of = |l: &[f64]| linalg::quad_form(l, w);
    if min_norm >= radius * (1.0 - 1e-12) {
        // only the point eps * a / |a|^2 is feasible
        let l: Vec<f64> = a.iter().map(|v| v * eps / (a_norm * a_norm)).collect();
        let v = value_of(&l)?;
        return Ok(Some((l, v)));
    }

    // Both constraints active: (W + mu I) lambda is parallel to a, and
    // |lambda(mu)|_2 decreases towards eps / |a| as mu grows.
    let lambda_at = |mu: f64| -> Result<Vec<f64>> {
        let mut shifted = w.clone();
        shifted.add_diagonal(mu);
        let c = Cholesky::factor(&shifted)?;
        Ok(halfspace_minimizer(&c, a, eps).0)
    };
    let norm = |l: &[f64]| linalg::norm_sq(l).sqrt();
    let mut lo = 0.0;
    let mut hi = (w.trace() / w.dim() as f64).max(1e-12);
    let mut l_hi = lambda_at(hi)?;
    while norm(&l_hi) > radius {
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            return Ok(None);
        }
        l_hi = lambda_at(hi)?;
    }
    for _ in 0..200 {
        if radius - norm(&l_hi) <= 1e-10 || hi - lo <= 1e-15 * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let l_mid = lambda_at(mid)?;
        if norm(&l_mid) > radius {
            lo = mid;
        } else {
            hi = mid;
            l_hi = l_mid;
        }
    }
    let v = value_of(&l_hi)?;
    Ok(Some((l_hi, v)))
}

/// Best response over the union of halfspaces intersected with the ball
/// `B(0, radius)`.
///
/// Pairs are visited in increasing order of their unconstrained value, which
/// lower-bounds the constrained one; the search stops once no remaining pair
/// can improve. Infeasible pairs are skipped; if every pair is infeasible the
/// call fails with [`Error::Infeasible`].
pub fn best_response_ball(
    w: &SpdMatrix,
    active: &[usize],
    arms: &[Vec<f64>],
    eps: f64,
    radius: f64,
) -> Result<BestResponseSolution> {
    check_inputs(w, active, arms, eps)?;
    if !(radius > 0.0) {
        return Err(Error::InvalidParameter(format!("radius = {radius}")));
    }
    let mut active = active.to_vec();
    active.sort_unstable();
    let chol = Cholesky::factor(w)?;
    let mut white = Whitened::new(w.dim());
    white.load(&chol, arms, &active);

    // (unconstrained value, x, x'), in lexicographic order before sorting so
    // a stable sort keeps the tie-break.
    let n = active.len();
    let mut pairs = Vec::with_capacity(n * (n - 1) / 2);
    for p in 0..n {
        for q in (p + 1)..n {
            pairs.push((eps * eps / white.pair_sq(p, q), active[p], active[q]));
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut best: Option<BestResponseSolution> = None;
    for (lower, x, xp) in pairs {
        if let Some(b) = &best {
            if lower >= b.value {
                break;
            }
        }
        let a = linalg::sub(&arms[xp], &arms[x]);
        if let Some((lambda, value)) = halfspace_ball_minimizer(w, &a, eps, radius)? {
            let better = match &best {
                None => true,
                Some(b) => value < b.value || (value == b.value && (x, xp) < b.pair),
            };
            if better {
                best = Some(BestResponseSolution {
                    lambda,
                    pair: (x, xp),
                    value,
                });
            }
        }
    }
    best.ok_or(Error::Infeasible)
}
