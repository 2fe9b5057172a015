//! Survival probability of Poisson Galton–Watson trees and the derived
//! quantities used by every sampler: its derivative and inverse, the dual
//! (conditioned-on-extinction) parameter, the rate ratio `f`, level counts
//! and the first two moments of aggregation-tree sizes.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::{adaptive_simpson, adaptive_simpson_graded};

/// Upper truncation point for integrals over `[λ, ∞)`.
pub const TAIL_CUTOFF: f64 = 40.0;
/// Absolute tolerance of the adaptive quadrature.
pub const QUAD_TOL: f64 = 1e-10;
/// Default right end of the second-moment ODE.
pub const H_LAMBDA_MAX: f64 = 15.0;

const ROOT_TOL: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurvivalEval {
    pub lambda: f64,
    pub theta: f64,
    /// `1 - θ - exp(-λθ)` at the returned root.
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualPair {
    pub s: f64,
    pub s_star: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentCurves {
    pub grid: Vec<f64>,
    pub g_vals: Vec<f64>,
    pub h_vals: Vec<f64>,
    pub lambda_max: f64,
    /// Estimated error of the boundary condition `h(λ_max) = 1`.
    pub boundary_error: f64,
}

/// Residual of the survival equation, `1 - t - exp(-λ t)`, computed without cancellation.
#[inline]
pub fn survival_residual(lambda: f64, t: f64) -> f64 {
    -t - (-lambda * t).exp_m1()
}

/// θ(λ) by bracketed Newton iteration; assumes `lambda` finite.
fn theta_solve(lambda: f64) -> f64 {
    if lambda <= 1.0 {
        return 0.0;
    }
    let mut lo = 1e-16_f64;
    let mut hi = -(-lambda).exp_m1();
    // θ is concave with θ'(1+) = 2, so 2(λ-1) bounds the root from above;
    // Newton from the right of a concave decreasing crossing never overshoots.
    let mut t = hi.min(2.0 * (lambda - 1.0));
    if t <= lo {
        t = 0.5 * (lo + hi);
    }
    for _ in 0..200 {
        let fval = survival_residual(lambda, t);
        if fval > 0.0 {
            lo = t;
        } else {
            hi = t;
        }
        let dval = -1.0 + lambda * (-lambda * t).exp();
        let mut next = if dval != 0.0 { t - fval / dval } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        let step = (next - t).abs();
        t = next;
        if step <= ROOT_TOL * t.max(1e-300) || hi - lo <= ROOT_TOL * t {
            break;
        }
    }
    // One more Newton step takes the converged root to full precision.
    let d = -1.0 + lambda * (-lambda * t).exp();
    let polished = t - survival_residual(lambda, t) / d;
    if d != 0.0 && polished > 0.0 && polished < 1.0 && (polished - t).abs() <= 1e-10 * t {
        polished
    } else {
        t
    }
}

/// Survival probability θ(λ) of a Poisson(λ) Galton–Watson tree.
pub fn theta(lambda: f64) -> Result<f64> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::domain("theta", format!("lambda must be finite and >= 0, got {lambda}")));
    }
    Ok(theta_solve(lambda))
}

pub fn survival(lambda: f64) -> Result<SurvivalEval> {
    let t = theta(lambda)?;
    Ok(SurvivalEval { lambda, theta: t, residual: survival_residual(lambda, t) })
}

/// `1 - θ(λ)` evaluated as `exp(-λθ)`, accurate when θ is close to one.
#[inline]
pub fn one_minus_theta(lambda: f64) -> f64 {
    if lambda <= 1.0 {
        return 1.0;
    }
    (-lambda * theta_fast(lambda)).exp()
}

#[inline]
fn theta_prime_unchecked(lambda: f64, t: f64) -> f64 {
    let q = (-lambda * t).exp();
    // 1 - λ(1-θ) = 1 - s*, rewritten to avoid cancellation near λ = 1.
    let one_minus_dual = t * lambda - (lambda - 1.0);
    let one_minus_dual = if one_minus_dual > 1e-3 { 1.0 - lambda * q } else { one_minus_dual };
    t * q / one_minus_dual
}

/// θ'(λ) from implicit differentiation of the survival equation.
pub fn theta_prime(lambda: f64) -> Result<f64> {
    if !lambda.is_finite() || lambda <= 1.0 {
        return Err(Error::domain("theta_prime", format!("lambda must be > 1, got {lambda}")));
    }
    Ok(theta_prime_unchecked(lambda, theta_solve(lambda)))
}

/// Inverse of θ on (0, 1): the closed form `-ln(1-p)/p`.
pub fn theta_inv(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain("theta_inv", format!("p must lie in (0,1), got {p}")));
    }
    Ok(theta_inv_unchecked(p))
}

#[inline]
pub(crate) fn theta_inv_unchecked(p: f64) -> f64 {
    -(-p).ln_1p() / p
}

/// Dual parameter `s* = s(1 - θ(s))`.
pub fn dual(s: f64) -> Result<f64> {
    if !s.is_finite() || s < 1.0 {
        return Err(Error::domain("dual", format!("s must be >= 1, got {s}")));
    }
    Ok(dual_unchecked(s))
}

#[inline]
pub(crate) fn dual_unchecked(s: f64) -> f64 {
    s * one_minus_theta(s)
}

pub fn dual_pair(s: f64) -> Result<DualPair> {
    Ok(DualPair { s, s_star: dual(s)? })
}

/// `1 - s*` without cancellation.
#[inline]
fn one_minus_dual(s: f64) -> f64 {
    let t = theta_fast(s);
    let direct = 1.0 - s * (-s * t).exp();
    if direct > 1e-3 {
        direct
    } else {
        s * t - (s - 1.0)
    }
}

#[inline]
pub(crate) fn f_ratio_unchecked(x: f64) -> f64 {
    one_minus_theta(x) / one_minus_dual(x)
}

/// `(1 - θ(x)) / (1 - x*)`: the mean number of vertices added per unit of
/// activation time, per unit of the aggregation rate.
pub fn f_ratio(x: f64) -> Result<f64> {
    if !x.is_finite() || x <= 1.0 {
        return Err(Error::domain("f_ratio", format!("x must be > 1, got {x}")));
    }
    Ok(f_ratio_unchecked(x))
}

/// `(1 - θ(y)) / (1 - y*)^3`, the second-moment weight.
pub(crate) fn f3_unchecked(y: f64) -> f64 {
    let d = one_minus_dual(y);
    one_minus_theta(y) / (d * d * d)
}

/// Analytic bound on `∫_A^∞ (1-θ)`: `exp(-Aθ(A)) / θ(A)`.
pub fn tail_bound(a: f64) -> f64 {
    let t = theta_solve(a);
    (-a * t).exp() / t
}

/// `∫_λ^z f_ratio`, with `z = ∞` truncated at [`TAIL_CUTOFF`].
pub fn f_integral(lambda: f64, z: f64) -> Result<f64> {
    if !(lambda > 1.0) || z.is_nan() || z < lambda {
        return Err(Error::domain("f_integral", format!("need 1 < lambda <= z, got ({lambda}, {z})")));
    }
    let upper = z.min(TAIL_CUTOFF);
    if upper <= lambda {
        return Ok(0.0);
    }
    let body = adaptive_simpson_graded(&f_ratio_unchecked, lambda, upper, 1.0, 24, QUAD_TOL);
    Ok(body)
}

/// `n_k(λ, z) = β^k / k!` with `β = ∫_λ^z f_ratio`.
pub fn level_count(lambda: f64, z: f64, k: u32) -> Result<f64> {
    if !(lambda > 1.0) || z.is_nan() || z < lambda {
        return Err(Error::domain("level_count", format!("need 1 < lambda <= z, got ({lambda}, {z})")));
    }
    if k == 0 {
        return Ok(1.0);
    }
    let beta = f_integral(lambda, z)?;
    let mut v = 1.0;
    for i in 1..=k {
        v *= beta / i as f64;
    }
    Ok(v)
}

/// Mean size of an aggregation tree started at activation time λ.
pub fn mean_size_g(lambda: f64) -> Result<f64> {
    if !lambda.is_finite() || lambda <= 1.0 {
        return Err(Error::domain("mean_size_g", format!("lambda must be > 1, got {lambda}")));
    }
    Ok(f_integral(lambda, f64::INFINITY)?.exp())
}

/// Λ(λ) = ∫_λ^∞ (1 - θ): mean number of aggregation atoms above λ.
pub fn tail_mass(lambda: f64) -> Result<f64> {
    if !lambda.is_finite() || lambda <= 1.0 {
        return Err(Error::domain("tail_mass", format!("lambda must be > 1, got {lambda}")));
    }
    if lambda >= TAIL_CUTOFF {
        return Ok(0.0);
    }
    Ok(adaptive_simpson(&one_minus_theta, lambda, TAIL_CUTOFF, QUAD_TOL))
}

/// Second moment `h` (and first moment `g`) of aggregation-tree sizes on an
/// ascending grid, by backward RK4 integration of the moment ODEs from
/// `h(λ_max) = 1`.
pub fn second_moment_h(grid: &[f64]) -> Result<MomentCurves> {
    if grid.is_empty() {
        return Err(Error::domain("second_moment_h", "empty grid"));
    }
    if grid.iter().any(|&x| !x.is_finite() || x <= 1.0) {
        return Err(Error::domain("second_moment_h", "grid must lie in (1, lambda_max]"));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::domain("second_moment_h", "grid must be strictly ascending"));
    }
    let lambda_max = H_LAMBDA_MAX.max(*grid.last().unwrap());
    // Both moments start from the singleton tree at λ_max, which keeps
    // h - g² non-negative along the backward integration.
    let tail = f_integral(lambda_max, f64::INFINITY)?;
    let rhs = |y: f64, g: f64, h: f64| -> (f64, f64) {
        let f = f_ratio_unchecked(y);
        let gp = -f * g;
        let hp = 2.0 * g * gp - f * h - (f3_unchecked(y) - f) * g * g;
        (gp, hp)
    };
    let mut y = lambda_max;
    let mut g = 1.0;
    let mut h = 1.0;
    let mut g_vals = vec![0.0; grid.len()];
    let mut h_vals = vec![0.0; grid.len()];
    for idx in (0..grid.len()).rev() {
        let target = grid[idx];
        while y > target {
            let step = (1e-3f64).min((y - 1.0) / 50.0).min(y - target);
            let dt = -step;
            let (k1g, k1h) = rhs(y, g, h);
            let (k2g, k2h) = rhs(y + 0.5 * dt, g + 0.5 * dt * k1g, h + 0.5 * dt * k1h);
            let (k3g, k3h) = rhs(y + 0.5 * dt, g + 0.5 * dt * k2g, h + 0.5 * dt * k2h);
            let (k4g, k4h) = rhs(y + dt, g + dt * k3g, h + dt * k3h);
            g += dt / 6.0 * (k1g + 2.0 * k2g + 2.0 * k3g + k4g);
            h += dt / 6.0 * (k1h + 2.0 * k2h + 2.0 * k3h + k4h);
            y += dt;
            if (y - target).abs() < 1e-14 {
                y = target;
            }
        }
        g_vals[idx] = g;
        h_vals[idx] = h;
    }
    // To first order h(λ_max) - 1 ≈ 3 × (mean number of attached vertices).
    let boundary_error = 3.0 * tail.exp_m1() + tail_bound(TAIL_CUTOFF);
    Ok(MomentCurves { grid: grid.to_vec(), g_vals, h_vals, lambda_max, boundary_error })
}

/// Memo table for θ on a log grid of `λ - 1`, read through cubic Hermite
/// interpolation with Fritsch–Carlson limited slopes. A lookup whose
/// survival-equation residual exceeds `1e-9`, or whose Newton-estimated root
/// error exceeds `1e-12`, falls back to the exact solver.
pub struct ThetaTable {
    log_lo: f64,
    inv_step: f64,
    xs: Vec<f64>,
    ts: Vec<f64>,
    ds: Vec<f64>,
}

pub const THETA_TABLE_POINTS: usize = 10_000;
const THETA_TABLE_MIN: f64 = 1e-4;
const THETA_TABLE_MAX: f64 = 49.0;

impl ThetaTable {
    pub fn build(points: usize) -> Self {
        let log_lo = THETA_TABLE_MIN.ln();
        let log_hi = THETA_TABLE_MAX.ln();
        let step = (log_hi - log_lo) / (points - 1) as f64;
        let xs: Vec<f64> = (0..points).map(|i| 1.0 + (log_lo + step * i as f64).exp()).collect();
        let ts: Vec<f64> = xs.iter().map(|&x| theta_solve(x)).collect();
        let mut ds: Vec<f64> = xs.iter().zip(&ts).map(|(&x, &t)| theta_prime_unchecked(x, t)).collect();
        for i in 0..points - 1 {
            let h = xs[i + 1] - xs[i];
            let secant = (ts[i + 1] - ts[i]) / h;
            if secant <= 0.0 {
                ds[i] = 0.0;
                ds[i + 1] = 0.0;
                continue;
            }
            let a = ds[i] / secant;
            let b = ds[i + 1] / secant;
            let r = a * a + b * b;
            if r > 9.0 {
                let tau = 3.0 / r.sqrt();
                ds[i] = tau * a * secant;
                ds[i + 1] = tau * b * secant;
            }
        }
        Self { log_lo, inv_step: 1.0 / step, xs, ts, ds }
    }

    /// Interpolated θ, or `None` outside the tabulated range.
    #[inline]
    pub fn interpolate(&self, lambda: f64) -> Option<f64> {
        let e = lambda - 1.0;
        if !(THETA_TABLE_MIN..THETA_TABLE_MAX).contains(&e) {
            return None;
        }
        let pos = (e.ln() - self.log_lo) * self.inv_step;
        let i = (pos as usize).min(self.xs.len() - 2);
        let (x0, x1) = (self.xs[i], self.xs[i + 1]);
        let h = x1 - x0;
        let s = (lambda - x0) / h;
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        Some(h00 * self.ts[i] + h10 * h * self.ds[i] + h01 * self.ts[i + 1] + h11 * h * self.ds[i + 1])
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }
}

fn theta_table() -> &'static ThetaTable {
    static TABLE: OnceLock<ThetaTable> = OnceLock::new();
    TABLE.get_or_init(|| ThetaTable::build(THETA_TABLE_POINTS))
}

/// θ through the memo table; exact whenever the table is not accurate enough.
#[inline]
pub fn theta_fast(lambda: f64) -> f64 {
    if lambda <= 1.0 {
        return 0.0;
    }
    if let Some(t) = theta_table().interpolate(lambda) {
        let res = survival_residual(lambda, t).abs();
        // |F'(θ)| = 1 - s*, which vanishes at criticality.
        let slope = (lambda * t - (lambda - 1.0)).abs();
        if res <= 1e-9 && res <= 1e-12 * slope {
            return t;
        }
    }
    theta_solve(lambda)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Plain bisection on the survival equation, independent of the Newton path.
    fn theta_bisect(lambda: f64) -> f64 {
        let (mut lo, mut hi) = (1e-300_f64, 1.0_f64);
        for _ in 0..2000 {
            let mid = 0.5 * (lo + hi);
            if 1.0 - mid - (-lambda * mid).exp() > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-16 {
                break;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn theta_at_and_below_criticality_is_zero() {
        assert_eq!(theta(1.0).unwrap(), 0.0);
        assert_eq!(theta(0.3).unwrap(), 0.0);
        assert_eq!(theta(0.0).unwrap(), 0.0);
    }

    #[test]
    fn theta_rejects_non_finite() {
        assert!(theta(f64::NAN).is_err());
        assert!(theta(f64::INFINITY).is_err());
        assert!(theta(-1.0).is_err());
    }

    #[test]
    fn theta_two_matches_bisection_oracle() {
        let oracle = theta_bisect(2.0);
        assert!((oracle - 0.796_812_130_2).abs() < 1e-9, "oracle {oracle}");
        assert!((theta(2.0).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn theta_near_one_expansion() {
        let eps = 1e-3;
        let approx = 2.0 * eps - 8.0 / 3.0 * eps * eps;
        let diff = theta(1.0 + eps).unwrap() - approx;
        // o(ε²): the next term is O(ε³) ≈ 1e-9.
        assert!(diff.abs() < 0.05 * eps * eps, "diff {diff}");
    }

    #[test]
    fn theta_prime_values() {
        // Central finite differences on the bisection oracle.
        let h = 1e-5;
        let fd = (theta_bisect(2.0 + h) - theta_bisect(2.0 - h)) / (2.0 * h);
        assert!((fd - 0.272_8).abs() < 1e-3);
        assert!((theta_prime(2.0).unwrap() - fd).abs() / fd < 1e-7);
        assert!((theta_prime(1.001).unwrap() - 2.0).abs() / 2.0 < 0.05);
        assert!(theta_prime(20.0).unwrap() < 1e-6);
        assert!(theta_prime(1.0).is_err());
    }

    #[test]
    fn theta_inv_round_trips() {
        let x = theta_inv(theta(1.7).unwrap()).unwrap();
        assert!((x - 1.7).abs() < 1e-9);
        let p = theta_bisect(2.0);
        assert!((theta_inv(p).unwrap() - 2.0).abs() < 1e-7);
        let small = theta_inv(1e-6).unwrap();
        assert!(small > 1.0 && small < 1.001);
        assert!(theta_inv(0.0).is_err());
        assert!(theta_inv(1.0).is_err());
    }

    #[test]
    fn dual_values() {
        assert_eq!(dual(1.0).unwrap(), 1.0);
        let d2 = dual(2.0).unwrap();
        assert!((d2 - 2.0 * (1.0 - theta_bisect(2.0))).abs() < 1e-12);
        assert!((d2 - 0.4064).abs() < 1e-4);
        assert!((2.0 * (-2.0f64).exp() - d2 * (-d2).exp()).abs() < 1e-12);
        let eps = 1e-3;
        let approx = 1.0 - eps + 2.0 / 3.0 * eps * eps;
        assert!((dual(1.0 + eps).unwrap() - approx).abs() < 0.05 * eps * eps);
        assert!(dual(0.99).is_err());
    }

    #[test]
    fn f_ratio_values() {
        let v = f_ratio(1.01).unwrap();
        let approx = 1.0 / 0.01 - 4.0 / 3.0;
        assert!((v - approx).abs() / approx < 0.05);
        let t2 = theta_bisect(2.0);
        let oracle = (1.0 - t2) / (1.0 - 2.0 * (1.0 - t2));
        assert!((f_ratio(2.0).unwrap() - oracle).abs() < 1e-12);
        assert!((oracle - 0.342).abs() < 1e-3);
        let mut prev = f64::INFINITY;
        for i in 0..200 {
            let x = 3.0 + 0.1 * i as f64;
            let v = f_ratio(x).unwrap();
            assert!(v > 0.0 && v < prev);
            prev = v;
        }
        assert!(f_ratio(1.0).is_err());
    }

    #[test]
    fn level_counts() {
        assert_eq!(level_count(1.3, 2.0, 0).unwrap(), 1.0);
        assert_eq!(level_count(1.3, f64::INFINITY, 0).unwrap(), 1.0);
        // Composite Simpson oracle with 20000 panels on a smooth integrand.
        let n = 20_000;
        let (a, b) = (1.5, 2.0);
        let h = (b - a) / n as f64;
        let mut s = f_ratio(a).unwrap() + f_ratio(b).unwrap();
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f_ratio(a + h * i as f64).unwrap();
        }
        let oracle = s * h / 3.0;
        let v = level_count(1.5, 2.0, 1).unwrap();
        assert!((v - oracle).abs() < 1e-9, "{v} vs {oracle}");
        assert!((v - 0.3128).abs() < 1e-3);
        let beta = f_integral(1.2, 3.0).unwrap();
        let total: f64 = (0..60).map(|k| level_count(1.2, 3.0, k).unwrap()).sum();
        assert!((total - beta.exp()).abs() < 1e-9);
        assert!(level_count(2.0, 1.5, 1).is_err());
        assert!(level_count(1.0, 1.5, 1).is_err());
    }

    #[test]
    fn g_limits() {
        let g20 = mean_size_g(20.0).unwrap();
        assert!((1.0..=1.0 + 1e-6).contains(&g20));
        let a = mean_size_g(1.1).unwrap() * 0.1;
        let b = mean_size_g(1.01).unwrap() * 0.01;
        assert!(a / b < 1.5 && b / a < 1.5, "{a} {b}");
        assert!(mean_size_g(1.0).is_err());
    }

    #[test]
    fn h_curves() {
        let grid: Vec<f64> = (0..60).map(|i| 1.02 + 0.25 * i as f64).collect();
        let curves = second_moment_h(&grid).unwrap();
        for ((&l, &g), &h) in grid.iter().zip(&curves.g_vals).zip(&curves.h_vals) {
            assert!(g >= 1.0 && h >= g * g, "at {l}: g={g} h={h}");
            let exact = mean_size_g(l).unwrap();
            assert!((g - exact).abs() / exact < 1e-6, "g ODE {g} vs quad {exact}");
        }
        for w in curves.h_vals.windows(2) {
            assert!(w[1] <= w[0]);
        }
        let at_max = second_moment_h(&[2.0, 15.0]).unwrap();
        assert_eq!(at_max.h_vals[1], 1.0);
        assert!(second_moment_h(&[0.9, 2.0]).is_err());
    }

    #[test]
    fn h_quartic_bound_near_one() {
        let grid: Vec<f64> = (0..40).map(|i| 1.0 + 0.5 * (0.85f64).powi(i)).rev().collect();
        let curves = second_moment_h(&grid).unwrap();
        let scaled: Vec<f64> =
            grid.iter().zip(&curves.h_vals).map(|(x, h)| h * (x - 1.0).powi(4)).collect();
        let max = scaled.iter().cloned().fold(0.0, f64::max);
        assert!(max < 10.0, "{scaled:?}");
    }

    #[test]
    fn table_matches_solver() {
        let table = theta_table();
        for i in 0..2000 {
            let x = 1.0 + 2e-4 + 47.0 * (i as f64 / 2000.0).powi(3);
            let t = table.interpolate(x).unwrap();
            assert!((t - theta_solve(x)).abs() < 1e-9, "at {x}");
            assert!((theta_fast(x) - theta_solve(x)).abs() < 1e-9);
        }
    }
}
