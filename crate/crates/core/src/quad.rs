//! Composite Simpson quadrature with doubling refinement, plus cumulative
//! integrals on uniform node sets. Summation order is fixed so results are
//! identical at any worker count.

use thiserror::Error;

/// Default absolute/relative tolerance used by the coefficient and eigen
/// quadratures.
pub const QUAD_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadError {
    #[error("quadrature did not converge on [{a}, {b}]: last delta {delta:e}")]
    NotConverged { a: f64, b: f64, delta: f64 },
    #[error("integrand returned a non-finite value at x = {x}")]
    NonFinite { x: f64 },
}

/// Composite Simpson with `n` panels (`n` even) on `[a, b]`.
pub fn simpson_panels<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, n: usize) -> Result<f64, QuadError> {
    debug_assert!(n >= 2 && n % 2 == 0);
    let h = (b - a) / n as f64;
    let mut s_end = f(a) + f(b);
    if !s_end.is_finite() {
        return Err(QuadError::NonFinite { x: a });
    }
    let mut s4 = 0.0;
    let mut s2 = 0.0;
    for i in 1..n {
        let x = a + i as f64 * h;
        let v = f(x);
        if !v.is_finite() {
            return Err(QuadError::NonFinite { x });
        }
        if i % 2 == 1 {
            s4 += v;
        } else {
            s2 += v;
        }
    }
    s_end += 4.0 * s4 + 2.0 * s2;
    Ok(s_end * h / 3.0)
}

/// Simpson on `[a, b]`, doubling the panel count until two successive levels
/// agree within `tol * max(1, |I|)` (Richardson check, factor 15).
pub fn simpson_adaptive<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    tol: f64,
) -> Result<f64, QuadError> {
    if a == b {
        return Ok(0.0);
    }
    let mut n = 16usize;
    let mut prev = simpson_panels(f, a, b, n)?;
    for _ in 0..16 {
        n *= 2;
        let cur = simpson_panels(f, a, b, n)?;
        let delta = (cur - prev).abs();
        if delta <= 15.0 * tol * cur.abs().max(1.0) {
            return Ok(cur);
        }
        prev = cur;
    }
    Err(QuadError::NotConverged {
        a,
        b,
        delta: f64::NAN,
    })
}

/// Simpson over a piecewise-smooth integrand: integrates each segment
/// between consecutive breakpoints separately so jumps and kinks do not
/// spoil the convergence order. Endpoint samples are nudged inward so a
/// jump sitting exactly on a breakpoint is read from the segment's side.
pub fn simpson_piecewise<F: Fn(f64) -> f64>(
    f: &F,
    breakpoints: &[f64],
    tol: f64,
) -> Result<f64, QuadError> {
    let mut total = 0.0;
    for w in breakpoints.windows(2) {
        if w[1] > w[0] {
            let nudge = (w[1] - w[0]) * 1e-12;
            let (lo, hi) = (w[0] + nudge, w[1] - nudge);
            let g = |x: f64| f(x.clamp(lo, hi));
            total += simpson_adaptive(&g, w[0], w[1], tol)?;
        }
    }
    Ok(total)
}

/// Cumulative integral of samples on a uniform grid, fourth order.
///
/// Even nodes advance by the classic Simpson pair; odd nodes use the
/// three-point Newton–Cotes half rule. `out[0] = 0`.
pub fn cumulative_uniform(values: &[f64], h: f64) -> Vec<f64> {
    let n = values.len();
    let mut out = vec![0.0; n];
    if n < 2 {
        return out;
    }
    if n == 2 {
        out[1] = 0.5 * h * (values[0] + values[1]);
        return out;
    }
    let mut i = 0;
    while i + 2 < n {
        out[i + 1] = out[i] + h / 12.0 * (5.0 * values[i] + 8.0 * values[i + 1] - values[i + 2]);
        out[i + 2] = out[i] + h / 3.0 * (values[i] + 4.0 * values[i + 1] + values[i + 2]);
        i += 2;
    }
    if i + 1 < n {
        // even node count: close the last interval with the mirrored half rule
        out[i + 1] =
            out[i] + h / 12.0 * (-values[i - 1] + 8.0 * values[i] + 5.0 * values[i + 1]);
    }
    out
}

/// Simpson weights for samples on a uniform grid (odd node count preferred;
/// an even count falls back to trapezoid on the last interval).
pub fn simpson_weights(n: usize, h: f64) -> Vec<f64> {
    let mut w = vec![0.0; n];
    if n < 2 {
        return w;
    }
    if n == 2 {
        return vec![0.5 * h, 0.5 * h];
    }
    let m = if n % 2 == 1 { n - 1 } else { n - 2 };
    w[0] += h / 3.0;
    for i in 1..m {
        w[i] += if i % 2 == 1 { 4.0 * h / 3.0 } else { 2.0 * h / 3.0 };
    }
    w[m] += h / 3.0;
    if n % 2 == 0 {
        w[n - 2] += 0.5 * h;
        w[n - 1] += 0.5 * h;
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simpson_converges_on_smooth_integrand() {
        let v = simpson_adaptive(&|x: f64| (-x).exp(), 0.0, 3.0, 1e-12).unwrap();
        assert!((v - (1.0 - (-3.0f64).exp())).abs() < 1e-12);
    }

    #[test]
    fn piecewise_handles_jumps_exactly() {
        // indicator * exp: jump at 1.0 must not degrade accuracy
        let f = |x: f64| if x <= 1.0 { (0.5 * x).exp() } else { 0.0 };
        let v = simpson_piecewise(&f, &[0.0, 1.0, 2.0], 1e-12).unwrap();
        let exact = ((0.5f64).exp() - 1.0) / 0.5;
        assert!((v - exact).abs() < 1e-11);
    }

    #[test]
    fn cumulative_uniform_fourth_order() {
        let n = 257;
        let h = 2.0 / (n - 1) as f64;
        let vals: Vec<f64> = (0..n).map(|i| (i as f64 * h).cos()).collect();
        let cum = cumulative_uniform(&vals, h);
        for (i, c) in cum.iter().enumerate() {
            let exact = (i as f64 * h).sin();
            assert!((c - exact).abs() < 1e-9, "i={} err={}", i, (c - exact).abs());
        }
    }

    #[test]
    fn non_finite_integrand_is_reported() {
        let r = simpson_adaptive(&|x: f64| 1.0 / x, 0.0, 1.0, 1e-8);
        assert!(matches!(r, Err(QuadError::NonFinite { .. })));
    }

    #[test]
    fn simpson_weights_integrate_cubics() {
        let n = 9;
        let h = 1.0 / (n - 1) as f64;
        let w = simpson_weights(n, h);
        let s: f64 = (0..n).map(|i| w[i] * (i as f64 * h).powi(3)).sum();
        assert!((s - 0.25).abs() < 1e-14);
    }
}
