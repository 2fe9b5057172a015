//! Adaptive Simpson quadrature.

const MAX_DEPTH: u32 = 50;

/// Integrates `f` over `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    recurse(f, a, b, fa, fm, fb, whole, tol, MAX_DEPTH)
}

#[allow(clippy::too_many_arguments)]
fn recurse<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Splits `[a, b]` into `pieces` geometric sub-intervals (relative to `origin`)
/// before applying adaptive Simpson; keeps the recursion shallow for
/// integrands with a pole just left of `a`.
pub fn adaptive_simpson_graded<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    origin: f64,
    pieces: usize,
    tol: f64,
) -> f64 {
    debug_assert!(a > origin && b >= a);
    let la = (a - origin).ln();
    let lb = (b - origin).ln();
    let mut total = 0.0;
    let mut lo = a;
    for i in 1..=pieces {
        let hi = if i == pieces {
            b
        } else {
            origin + (la + (lb - la) * i as f64 / pieces as f64).exp()
        };
        total += adaptive_simpson(f, lo, hi, tol / pieces as f64);
        lo = hi;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_and_exponential() {
        let v = adaptive_simpson(&|x: f64| x * x * x, 0.0, 2.0, 1e-12);
        assert!((v - 4.0).abs() < 1e-12);
        let v = adaptive_simpson(&|x: f64| (-x).exp(), 0.0, 30.0, 1e-12);
        assert!((v - (1.0 - (-30.0f64).exp())).abs() < 1e-11);
    }

    #[test]
    fn graded_handles_near_pole() {
        let v = adaptive_simpson_graded(&|x: f64| 1.0 / (x - 1.0), 1.001, 3.0, 1.0, 16, 1e-11);
        assert!((v - (2.0f64 / 0.001).ln()).abs() < 1e-9, "{v}");
    }
}
