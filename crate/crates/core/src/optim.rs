//! One-dimensional maximisation.

/// Golden-section search for the maximiser of a unimodal `f` on `[lo, hi]`.
///
/// Stops once the bracket is narrower than `width` and returns the best point
/// seen together with its value.
pub fn golden_section_max(f: impl Fn(f64) -> f64, lo: f64, hi: f64, width: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo.min(hi), lo.max(hi));
    let mut x1 = b - inv_phi * (b - a);
    let mut x2 = a + inv_phi * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    // The bracket shrinks geometrically; the cap guards against width = 0.
    for _ in 0..400 {
        if b - a <= width {
            break;
        }
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (b - a);
            f2 = f(x2);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - inv_phi * (b - a);
            f1 = f(x1);
        }
    }
    let mut best = if f1 >= f2 { (x1, f1) } else { (x2, f2) };
    for x in [a, b] {
        let fx = f(x);
        if fx > best.1 {
            best = (x, fx);
        }
    }
    best
}

/// Doubles `hi` from `start` until `f(hi) < f(hi / 2)`.
///
/// Returns `None` if no decrease is seen after `max_doublings` doublings.
pub fn bracket_right(f: impl Fn(f64) -> f64, start: f64, max_doublings: u32) -> Option<f64> {
    let mut hi = start;
    for _ in 0..=max_doublings {
        if f(hi) < f(0.5 * hi) {
            return Some(hi);
        }
        hi *= 2.0;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_interior_maximum() {
        let (x, v) = golden_section_max(|x| -(x - 0.3).powi(2) + 2.0, 0.0, 1.0, 1e-12);
        // The flat top limits the location to about sqrt(eps).
        assert!((x - 0.3).abs() < 1e-7);
        assert!((v - 2.0).abs() < 1e-15);
    }

    #[test]
    fn finds_boundary_maximum() {
        let (x, _) = golden_section_max(|x| -x, 0.0, 5.0, 1e-12);
        assert!(x.abs() < 1e-11);
    }

    #[test]
    fn effort_example() {
        // a ↦ 4a − 2a³/3 peaks at √2.
        let (a, _) = golden_section_max(|a| 4.0 * a - 2.0 * a.powi(3) / 3.0, 0.0, 10.0, 1e-12);
        assert!((a - 2f64.sqrt()).abs() < 1e-7);
    }

    #[test]
    fn bracket_detects_decrease_and_gives_up() {
        let hi = bracket_right(|x| -(x - 10.0).powi(2), 1.0, 60).unwrap();
        assert!((10.0..=32.0).contains(&hi));
        assert!(bracket_right(|x| x, 1.0, 60).is_none());
    }
}
