//! Reference computations shared by the integration tests. Nothing here
//! calls into the library's linear algebra.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;

pub fn to_dmatrix(dim: usize, data: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(dim, dim, data)
}

/// Symmetric positive definite matrix with eigenvalues in `[lo, hi]`.
pub fn random_spd<R: Rng>(rng: &mut R, d: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    let g = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    let q = g.qr().q();
    let eig = DVector::from_fn(d, |_, _| rng.random_range(lo..hi));
    let m = &q * DMatrix::from_diagonal(&eig) * q.transpose();
    // exact symmetry
    DMatrix::from_fn(d, d, |i, j| if i <= j { m[(i, j)] } else { m[(j, i)] })
}

pub fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let d = m.nrows();
    (0..d * d).map(|n| m[(n / d, n % d)]).collect()
}

/// `a^T M^{-1} a` through an explicit nalgebra inverse.
pub fn inv_quad(m: &DMatrix<f64>, a: &[f64]) -> f64 {
    let inv = m.clone().try_inverse().expect("invertible");
    let v = DVector::from_column_slice(a);
    (v.transpose() * inv * &v)[(0, 0)]
}

/// `min |lambda|_W^2` over `{lambda^T a >= eps}` by accelerated projected
/// gradient descent.
pub fn qp_halfspace(w: &DMatrix<f64>, a: &[f64], eps: f64) -> f64 {
    let d = a.len();
    let a = DVector::from_column_slice(a);
    let aa = a.dot(&a);
    let lmax = w.clone().symmetric_eigen().eigenvalues.max();
    let step = 1.0 / (2.0 * lmax);
    let project = |v: DVector<f64>| {
        let slack = eps - v.dot(&a);
        if slack > 0.0 {
            v + &a * (slack / aa)
        } else {
            v
        }
    };
    let mut x = project(DVector::zeros(d));
    let mut y = x.clone();
    let mut t = 1.0f64;
    for _ in 0..5_000 {
        let grad = w * &y * 2.0;
        let next = project(&y - grad * step);
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        y = &next + (&next - &x) * ((t - 1.0) / t_next);
        x = next;
        t = t_next;
    }
    (x.transpose() * w * &x)[(0, 0)]
}

/// Minimum of a unimodal-on-bracket function: dense sampling, then golden
/// section around the best sample.
fn min_1d(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    let n = 20_000;
    let at = |i: usize| lo + (hi - lo) * i as f64 / n as f64;
    let best = (0..=n).min_by(|&i, &j| f(at(i)).total_cmp(&f(at(j)))).unwrap();
    let (mut a, mut b) = (at(best.saturating_sub(1)), at((best + 1).min(n)));
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if f(c) < f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    f(0.5 * (a + b)).min(f(at(best)))
}

/// `min |lambda|_W^2` over the halfspace intersected with `B(0, radius)` in
/// two dimensions. The origin is infeasible, so unless the halfspace
/// minimiser lies in the ball the optimum sits on the boundary of the lens:
/// the chord of the line inside the ball or the arc inside the halfspace.
/// Both are searched directly.
pub fn ball_boundary_2d(w: &DMatrix<f64>, a: &[f64], eps: f64, radius: f64) -> Option<f64> {
    let an = (a[0] * a[0] + a[1] * a[1]).sqrt();
    let foot = eps / an;
    if foot > radius {
        return None;
    }
    let q = |x: f64, y: f64| w[(0, 0)] * x * x + 2.0 * w[(0, 1)] * x * y + w[(1, 1)] * y * y;
    let inv = w.clone().try_inverse().expect("invertible");
    let z = &inv * DVector::from_column_slice(a);
    let s = eps / (a[0] * z[0] + a[1] * z[1]);
    if (z[0] * s).hypot(z[1] * s) <= radius {
        return Some(q(z[0] * s, z[1] * s));
    }
    let (ux, uy) = (a[0] / an, a[1] / an);
    let (px, py) = (-uy, ux);
    let half = (radius * radius - foot * foot).max(0.0).sqrt();
    let chord = min_1d(|t| q(ux * foot + px * t, uy * foot + py * t), -half, half);
    let open = (foot / radius).min(1.0).acos();
    let base = uy.atan2(ux);
    let arc = min_1d(|th| q(radius * (base + th).cos(), radius * (base + th).sin()), -open, open);
    Some(chord.min(arc))
}

/// Checks the tracking bounds for one arm count after a pull.
pub fn tracking_ok(pulls: &[u64], cum: &[f64]) -> bool {
    let k = pulls.len() as f64;
    pulls
        .iter()
        .zip(cum)
        .all(|(&n, &c)| (n as f64) >= c - (k - 1.0) - 1e-9 && (n as f64) <= c + 1.0 + 1e-9)
}

/// Population mean and standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, v.sqrt())
}
