//! Simulated linear bandit environment and the three benchmark settings.
//!
//! Arm indices are zero-based throughout the crate.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, SpdMatrix};

/// Slack allowed on the unit-norm constraint, to absorb rounding in
/// normalised vectors.
const NORM_SLACK: f64 = 1e-12;

/// Number of arms sampled on the sphere for the second setting.
pub const SPHERE_ARMS: usize = 100;
/// Interpolation weight towards the runner-up arm in the sphere setting.
pub const SPHERE_GAMMA: f64 = 0.01;
/// Redraws allowed when a sphere sample has a tied closest pair.
pub const SPHERE_MAX_RETRIES: usize = 100;
/// Angle of the confounding arm when none is given.
pub const DEFAULT_OMEGA: f64 = 0.1;

/// Ground truth for one bandit problem: arms, hidden parameter and noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "InstanceDoc", into = "InstanceDoc")]
pub struct Instance {
    arms: Vec<Vec<f64>>,
    theta_star: Vec<f64>,
    noise_std: f64,
    best: usize,
}

/// On-disk JSON form of an [`Instance`].
#[derive(Debug, Clone, Serialize, Deserialize)]
struct InstanceDoc {
    arms: Vec<Vec<f64>>,
    theta_star: Vec<f64>,
    #[serde(default = "default_noise_std")]
    noise_std: f64,
}

fn default_noise_std() -> f64 {
    1.0
}

impl TryFrom<InstanceDoc> for Instance {
    type Error = Error;

    fn try_from(doc: InstanceDoc) -> Result<Self> {
        Instance::new(doc.arms, doc.theta_star, doc.noise_std)
    }
}

impl From<Instance> for InstanceDoc {
    fn from(inst: Instance) -> Self {
        InstanceDoc {
            arms: inst.arms,
            theta_star: inst.theta_star,
            noise_std: inst.noise_std,
        }
    }
}

/// Derived ground-truth quantities of an instance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstanceSummary {
    pub best_arm: usize,
    /// `theta*^T (x* - x_i)` for every arm.
    pub gaps: Vec<f64>,
    pub delta_min: f64,
    /// Smallest eigenvalue of `sum_k x_k x_k^T`.
    pub c: f64,
}

impl Instance {
    pub fn new(arms: Vec<Vec<f64>>, theta_star: Vec<f64>, noise_std: f64) -> Result<Self> {
        if arms.len() < 2 {
            return Err(Error::TooFewArms(arms.len()));
        }
        let d = theta_star.len();
        if d == 0 {
            return Err(Error::InvalidParameter("dimension must be at least 1".into()));
        }
        if theta_star.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("theta_star has non-finite entries".into()));
        }
        if !(noise_std >= 0.0 && noise_std.is_finite()) {
            return Err(Error::InvalidParameter(format!("noise_std = {noise_std}")));
        }
        for (k, x) in arms.iter().enumerate() {
            if x.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: x.len(),
                });
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter(format!("arm {k} has non-finite entries")));
            }
            let n = linalg::norm_sq(x).sqrt();
            if n > 1.0 + NORM_SLACK {
                return Err(Error::InvalidParameter(format!("arm {k} has norm {n} > 1")));
            }
        }
        let best = unique_argmax(&arms, &theta_star)?;
        Ok(Self {
            arms,
            theta_star,
            noise_std,
            best,
        })
    }

    pub fn arms(&self) -> &[Vec<f64>] {
        &self.arms
    }

    pub fn arm(&self, k: usize) -> &[f64] {
        &self.arms[k]
    }

    pub fn theta_star(&self) -> &[f64] {
        &self.theta_star
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }

    pub fn num_arms(&self) -> usize {
        self.arms.len()
    }

    pub fn dim(&self) -> usize {
        self.theta_star.len()
    }

    pub fn best_arm(&self) -> usize {
        self.best
    }

    pub fn with_noise_std(mut self, noise_std: f64) -> Result<Self> {
        if !(noise_std >= 0.0 && noise_std.is_finite()) {
            return Err(Error::InvalidParameter(format!("noise_std = {noise_std}")));
        }
        self.noise_std = noise_std;
        Ok(self)
    }

    /// Expected reward `theta*^T x_k`.
    pub fn mean(&self, k: usize) -> f64 {
        linalg::dot(&self.arms[k], &self.theta_star)
    }

    /// One noisy reward from arm `k`. Always consumes exactly one normal
    /// draw from `rng`, even when the noise level is zero.
    pub fn pull<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Result<f64> {
        if k >= self.arms.len() {
            return Err(Error::ArmOutOfRange {
                index: k,
                arms: self.arms.len(),
            });
        }
        let eta: f64 = rng.sample(StandardNormal);
        Ok(self.mean(k) + self.noise_std * eta)
    }

    pub fn summarize(&self) -> Result<InstanceSummary> {
        let best = unique_argmax(&self.arms, &self.theta_star)?;
        let top = self.mean(best);
        let gaps: Vec<f64> = (0..self.num_arms()).map(|k| top - self.mean(k)).collect();
        let delta_min = gaps
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != best)
            .map(|(_, &g)| g)
            .fold(f64::INFINITY, f64::min);
        let c = linalg::min_eigenvalue(&SpdMatrix::gram(self.dim(), &self.arms))?;
        Ok(InstanceSummary {
            best_arm: best,
            gaps,
            delta_min,
            c,
        })
    }
}

fn unique_argmax(arms: &[Vec<f64>], theta: &[f64]) -> Result<usize> {
    let means: Vec<f64> = arms.iter().map(|x| linalg::dot(x, theta)).collect();
    let mut best = 0;
    for k in 1..means.len() {
        if means[k] > means[best] {
            best = k;
        }
    }
    let ties = means.iter().filter(|&&m| m == means[best]).count();
    if ties > 1 {
        return Err(Error::DegenerateInstance(format!(
            "{ties} arms share the maximal mean {}",
            means[best]
        )));
    }
    Ok(best)
}

fn basis(d: usize, k: usize) -> Vec<f64> {
    let mut e = vec![0.0; d];
    e[k] = 1.0;
    e
}

/// Standard bandit: the canonical basis of R^5 with `theta* = (delta, 0, .., 0)`.
pub fn make_setting1(delta: f64) -> Result<Instance> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::InvalidParameter(format!("gap must be positive, got {delta}")));
    }
    let d = 5;
    let arms = (0..d).map(|k| basis(d, k)).collect();
    let mut theta = vec![0.0; d];
    theta[0] = delta;
    Instance::new(arms, theta, 1.0)
}

/// Unit sphere: 100 uniform arms on `S^{d-1}`; the closest pair `(u, v)`
/// (largest inner product) defines `theta* = u + gamma (v - u)`, making `u`
/// the best arm. `u` is the lower-indexed member of the pair.
pub fn make_setting2<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Result<Instance> {
    if d < 2 {
        return Err(Error::InvalidParameter(format!("sphere setting needs d >= 2, got {d}")));
    }
    for _ in 0..SPHERE_MAX_RETRIES {
        let arms: Vec<Vec<f64>> = (0..SPHERE_ARMS).map(|_| sphere_point(d, rng)).collect();
        let Some((u, v)) = closest_pair(&arms) else {
            continue;
        };
        let theta: Vec<f64> = arms[u]
            .iter()
            .zip(&arms[v])
            .map(|(a, b)| a + SPHERE_GAMMA * (b - a))
            .collect();
        match Instance::new(arms, theta, 1.0) {
            Ok(inst) if inst.best_arm() == u => return Ok(inst),
            Ok(_) | Err(Error::DegenerateInstance(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::DegenerateInstance(format!(
        "no sphere sample with a unique closest pair after {SPHERE_MAX_RETRIES} draws"
    )))
}

fn sphere_point<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let g: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let n = linalg::norm_sq(&g).sqrt();
        if n > 1e-8 {
            return g.into_iter().map(|v| v / n).collect();
        }
    }
}

/// Pair `(i, j)`, `i < j`, with the largest inner product; `None` on a tie.
fn closest_pair(arms: &[Vec<f64>]) -> Option<(usize, usize)> {
    let mut best = (0, 1);
    let mut best_ip = f64::NEG_INFINITY;
    let mut tied = false;
    for i in 0..arms.len() {
        for j in (i + 1)..arms.len() {
            let ip = linalg::dot(&arms[i], &arms[j]);
            if ip > best_ip {
                best_ip = ip;
                best = (i, j);
                tied = false;
            } else if ip == best_ip {
                tied = true;
            }
        }
    }
    (!tied).then_some(best)
}

/// Standard bandit with a confounding arm: `e_1..e_d` plus
/// `(cos w, sin w, 0, .., 0)`, with `theta* = e_1`.
pub fn make_setting3(d: usize, omega: f64) -> Result<Instance> {
    if d < 2 {
        return Err(Error::InvalidParameter(format!("confound setting needs d >= 2, got {d}")));
    }
    if !(omega > 0.0 && omega < std::f64::consts::FRAC_PI_2) {
        return Err(Error::InvalidParameter(format!(
            "omega must lie in (0, pi/2), got {omega}"
        )));
    }
    let mut arms: Vec<Vec<f64>> = (0..d).map(|k| basis(d, k)).collect();
    let mut extra = vec![0.0; d];
    extra[0] = omega.cos();
    extra[1] = omega.sin();
    arms.push(extra);
    Instance::new(arms, basis(d, 0), 1.0)
}
