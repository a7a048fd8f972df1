//! Quadrature, ODE stepping and exponential integrals.

use crate::model::TimeGrid;

/// Relative tolerance used for every closed-form integral in the crate.
pub const QUAD_RTOL: f64 = 1e-10;

const MAX_DEPTH: u32 = 48;

/// Adaptive Simpson quadrature of `f` over `[a, b]`.
///
/// The tolerance is relative to a coarse estimate of `∫|f|`, which keeps the
/// recursion finite when the signed integral nearly cancels.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, rtol: f64) -> f64 {
    if b == a {
        return 0.0;
    }
    let (lo, hi, sign) = if b > a { (a, b, 1.0) } else { (b, a, -1.0) };
    const PANELS: usize = 8;
    let h = (hi - lo) / PANELS as f64;

    let mut coarse_abs = 0.0;
    for k in 0..=64 {
        let w = if k == 0 || k == 64 { 0.5 } else { 1.0 };
        coarse_abs += w * f(lo + (hi - lo) * k as f64 / 64.0).abs();
    }
    coarse_abs *= (hi - lo) / 64.0;
    let tol = (rtol * coarse_abs).max(f64::MIN_POSITIVE) / PANELS as f64;

    let mut total = 0.0;
    for p in 0..PANELS {
        let x0 = lo + h * p as f64;
        let x1 = if p + 1 == PANELS { hi } else { lo + h * (p + 1) as f64 };
        let (f0, f1) = (f(x0), f(x1));
        let xm = 0.5 * (x0 + x1);
        let fm = f(xm);
        let whole = (x1 - x0) / 6.0 * (f0 + 4.0 * fm + f1);
        total += simpson_step(&f, x0, x1, f0, fm, f1, whole, tol, MAX_DEPTH);
    }
    sign * total
}

#[allow(clippy::too_many_arguments)]
fn simpson_step(
    f: &impl Fn(f64) -> f64,
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
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Classical fourth-order Runge-Kutta on the nodes of `grid`.
pub fn rk4<const N: usize>(grid: &TimeGrid, y0: [f64; N], rhs: impl Fn(f64, &[f64; N]) -> [f64; N]) -> Vec<[f64; N]> {
    let mut out = Vec::with_capacity(grid.len());
    out.push(y0);
    let mut y = y0;
    for k in 0..grid.steps() {
        let t = grid.point(k);
        let h = grid.point(k + 1) - t;
        let k1 = rhs(t, &y);
        let k2 = rhs(t + 0.5 * h, &axpy(&y, 0.5 * h, &k1));
        let k3 = rhs(t + 0.5 * h, &axpy(&y, 0.5 * h, &k2));
        let k4 = rhs(t + h, &axpy(&y, h, &k3));
        for i in 0..N {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        out.push(y);
    }
    out
}

fn axpy<const N: usize>(y: &[f64; N], h: f64, k: &[f64; N]) -> [f64; N] {
    std::array::from_fn(|i| y[i] + h * k[i])
}

/// `∫₀ᵗ u^j e^{b u} du` for `j <= 4`, accurate for every real `b`
/// including the removable singularity at `b = 0`.
pub fn exp_moment(j: u32, b: f64, t: f64) -> f64 {
    assert!(j <= 4, "exp_moment supports j <= 4");
    let x = b * t;
    if x.abs() <= 1.0 {
        // Σ_k b^k t^{k+j+1} / (k! (k+j+1)), all terms well conditioned.
        let mut term = t.powi(j as i32 + 1); // b^k t^{k+j+1} / k!
        let mut sum = 0.0;
        for k in 0..60 {
            let add = term / (k + j + 1) as f64;
            sum += add;
            if add.abs() <= 1e-17 * sum.abs() {
                break;
            }
            term *= x / (k + 1) as f64;
        }
        return sum;
    }
    // Integration by parts: M_j = (t^j e^{bt} - j M_{j-1}) / b.
    let e = x.exp();
    let mut m = x.exp_m1() / b;
    for i in 1..=j {
        m = (t.powi(i as i32) * e - i as f64 * m) / b;
    }
    m
}

/// `E(b, t) = (e^{bt} - 1) / b`, with limit `t` at `b = 0`.
pub fn expm1_ratio(b: f64, t: f64) -> f64 {
    exp_moment(0, b, t)
}

/// Divided difference `(E(b + h, t) - E(b, t)) / h`, i.e.
/// `∫₀ᵗ e^{bu} (e^{hu} - 1)/h du`, stable as `h → 0`.
pub fn expm1_divided(b: f64, h: f64, t: f64) -> f64 {
    if (h * t).abs() < 1e-3 {
        // Σ_k h^{k-1}/k! ∫ u^k e^{bu} du, truncated after k = 4.
        exp_moment(1, b, t)
            + h / 2.0 * exp_moment(2, b, t)
            + h * h / 6.0 * exp_moment(3, b, t)
            + h * h * h / 24.0 * exp_moment(4, b, t)
    } else {
        (expm1_ratio(b + h, t) - expm1_ratio(b, t)) / h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simpson_matches_known_integrals() {
        let v = integrate(|x| x.exp(), 0.0, 1.0, 1e-12);
        assert!((v - (1f64.exp() - 1.0)).abs() < 1e-12);
        let v = integrate(|x| (3.0 * x).sin(), 0.0, std::f64::consts::PI, 1e-12);
        assert!((v - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(integrate(|x| x, 2.0, 2.0, 1e-10), 0.0);
        let v = integrate(|x| x * x, 1.0, 0.0, 1e-12);
        assert!((v + 1.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn simpson_handles_cancelling_integrands() {
        let v = integrate(|x| x - 0.5, 0.0, 1.0, 1e-10);
        assert!(v.abs() < 1e-14);
    }

    #[test]
    fn rk4_is_fourth_order() {
        let err = |steps| {
            let g = TimeGrid::new(1.0, steps);
            let y = rk4(&g, [1.0], |_, y| [y[0]]);
            (y[steps][0] - 1f64.exp()).abs()
        };
        let ratio = err(20) / err(40);
        assert!(ratio > 14.0 && ratio < 18.0, "{ratio}");
    }

    #[test]
    fn exp_moments_match_quadrature() {
        for &b in &[-3.0, -0.7, -1e-9, 0.0, 1e-9, 0.35, 0.9, 2.5] {
            for &t in &[0.0, 0.3, 1.0, 2.0] {
                for j in 0..=4 {
                    let q = integrate(|u| u.powi(j as i32) * (b * u).exp(), 0.0, t, 1e-13);
                    let e = exp_moment(j, b, t);
                    assert!(
                        (q - e).abs() <= 1e-12 * (1.0 + q.abs()),
                        "j={j} b={b} t={t}: {q} vs {e}"
                    );
                }
            }
        }
    }

    #[test]
    fn divided_difference_is_continuous_in_h() {
        for &b in &[-0.35, 0.0, 0.15] {
            let at = |h| expm1_divided(b, h, 1.0);
            let q = |h: f64| integrate(|u| (b * u).exp() * (h * u).exp_m1() / h, 0.0, 1.0, 1e-13);
            for &h in &[1e-9, 1e-7, 1e-5, 0.01, 0.5] {
                assert!((at(h) - q(h)).abs() < 1e-11, "b={b} h={h}");
            }
        }
    }
}
