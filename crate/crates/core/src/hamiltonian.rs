//! The agent's Hamiltonian and the principal's scalar Hamiltonians.
//!
//! Sensitivities `z` are nonnegative throughout the model; the formulas are
//! evaluated with `|z|` exactly as they are written so that negative inputs
//! stay well defined.

use crate::error::{Error, Result};
use crate::model::{MeanFieldModel, RiskAversePenalties};
use crate::optim::{bracket_right, golden_section_max};

/// Width of the golden-section bracket used by [`maximize_h`].
pub const H_ARGMAX_WIDTH: f64 = 1e-12;
/// Maximum number of bracket doublings before declaring `h` non-coercive.
pub const MAX_DOUBLINGS: u32 = 60;

/// Law-dependent inputs of the drift at one instant.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PopulationMoments {
    pub mean_x: f64,
    pub mean_effort: f64,
    pub var_x: f64,
}

/// Maximiser of the agent's Hamiltonian in effort.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffortMax {
    pub effort: f64,
    /// `z a* - c(a*)`: the Hamiltonian at the maximum for a zero state and
    /// zero population moments.
    pub value: f64,
}

/// Maximiser of the principal's Hamiltonian in the sensitivity `z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensitivityMax {
    pub z: f64,
    pub value: f64,
}

/// `b = a + alpha x + beta1 E[X] + beta2 E[a] - gamma Var[X]`.
pub fn drift_b(model: &MeanFieldModel, x: f64, pop: PopulationMoments, a: f64) -> f64 {
    a + model.alpha() * x + model.beta1() * pop.mean_x + model.beta2() * pop.mean_effort - model.gamma() * pop.var_x
}

/// Effort cost `c |a|^n / n`.
pub fn cost(model: &MeanFieldModel, a: f64) -> f64 {
    model.c() * a.abs().powf(model.n()) / model.n()
}

/// `a* = (|z| / c)^{1/(n-1)}`.
pub fn optimal_effort_level(model: &MeanFieldModel, z: f64) -> f64 {
    (z.abs() / model.c()).powf(1.0 / (model.n() - 1.0))
}

pub fn optimal_effort(model: &MeanFieldModel, z: f64) -> EffortMax {
    let effort = optimal_effort_level(model, z);
    EffortMax {
        effort,
        value: z * effort - cost(model, effort),
    }
}

/// Solves the first-order condition `z = c a^{n-1}` by bisection on `a >= 0`.
///
/// Independent of the closed form; used to cross-check [`optimal_effort`].
pub fn first_order_effort(model: &MeanFieldModel, z: f64) -> f64 {
    let z = z.abs();
    if z == 0.0 {
        return 0.0;
    }
    let foc = |a: f64| z - model.c() * a.powf(model.n() - 1.0);
    let (mut lo, mut hi) = (0.0, 1.0);
    while foc(hi) > 0.0 {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if foc(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// `g* = |z|^{n/(n-1)} c^{-1/(n-1)} (1 - 1/n) + z (alpha x + beta1 E[X] + beta2 E[a] - gamma Var[X])`.
pub fn g_star(model: &MeanFieldModel, z: f64, x: f64, pop: PopulationMoments) -> f64 {
    let n = model.n();
    let rate =
        model.alpha() * x + model.beta1() * pop.mean_x + model.beta2() * pop.mean_effort - model.gamma() * pop.var_x;
    z.abs().powf(n / (n - 1.0)) * model.c().powf(-1.0 / (n - 1.0)) * (1.0 - 1.0 / n) + z * rate
}

/// `H(u, z) = (1+beta2) (|z|/c)^{1/(n-1)} e^{kappa (T-u)} - |z|^{n/(n-1)} / (c^{1/(n-1)} n)`.
pub fn principal_h(model: &MeanFieldModel, u: f64, z: f64) -> f64 {
    let n = model.n();
    let p = 1.0 / (n - 1.0);
    let az = z.abs();
    (1.0 + model.beta2()) * (az / model.c()).powf(p) * (model.kappa() * (model.horizon() - u)).exp()
        - az.powf(n * p) / (model.c().powf(p) * n)
}

/// `h(u, z)`: [`principal_h`] minus the mean-variance penalty terms.
pub fn risk_averse_h(model: &MeanFieldModel, pen: &RiskAversePenalties, u: f64, z: f64) -> f64 {
    let s2 = model.sigma() * model.sigma();
    principal_h(model, u, z) - (pen.lambda_xi + pen.lambda_x_xi) * s2 * z * z
        + 2.0 * pen.lambda_x_xi * s2 * z * (model.alpha() * (model.horizon() - u)).exp()
}

/// First and second derivatives of `h(u, ·)` at `z > 0`.
fn h_derivatives(model: &MeanFieldModel, pen: &RiskAversePenalties, u: f64, z: f64) -> (f64, f64) {
    let n = model.n();
    let p = 1.0 / (n - 1.0);
    let cp = model.c().powf(-p);
    let growth = (1.0 + model.beta2()) * (model.kappa() * (model.horizon() - u)).exp();
    let s2 = model.sigma() * model.sigma();
    let l = pen.lambda_xi + pen.lambda_x_xi;
    let d1 = growth * cp * p * z.powf(p - 1.0) - cp * p * z.powf(p) - 2.0 * l * s2 * z
        + 2.0 * pen.lambda_x_xi * s2 * (model.alpha() * (model.horizon() - u)).exp();
    let d2 = growth * cp * p * (p - 1.0) * z.powf(p - 2.0) - cp * p * p * z.powf(p - 1.0) - 2.0 * l * s2;
    (d1, d2)
}

/// Maximises `h(u, ·)` over `z >= 0`.
///
/// The right end of the search interval is doubled from 1 until `h` drops,
/// then golden-section search narrows the bracket to [`H_ARGMAX_WIDTH`]. The
/// objective is smooth at any interior point, so a single Newton step on `h'`
/// removes the flat-top error of the bracket search; the step is kept only
/// when it reduces `|h'|`.
pub fn maximize_h(model: &MeanFieldModel, pen: &RiskAversePenalties, u: f64) -> Result<SensitivityMax> {
    let h = |z: f64| risk_averse_h(model, pen, u, z);
    let z_max = bracket_right(h, 1.0, MAX_DOUBLINGS).ok_or(Error::NonCoercive {
        u,
        doublings: MAX_DOUBLINGS,
    })?;
    let (mut z, mut value) = golden_section_max(h, 0.0, z_max, H_ARGMAX_WIDTH);
    if z > 0.0 {
        let (d1, d2) = h_derivatives(model, pen, u, z);
        if d2 < 0.0 {
            let candidate = z - d1 / d2;
            if candidate > 0.0 && candidate <= z_max {
                let (d1_new, _) = h_derivatives(model, pen, u, candidate);
                if d1_new.abs() <= d1.abs() {
                    z = candidate;
                    value = h(z);
                }
            }
        }
    }
    Ok(SensitivityMax { z, value })
}

/// Closed-form maximiser of `h(u, ·)` for quadratic cost:
/// `z* = ((1+beta2) e^{kappa (T-u)} + 2 c lambdaXXi sigma² e^{alpha (T-u)}) / (1 + 2 (lambdaXi + lambdaXXi) c sigma²)`.
pub fn quadratic_h_argmax(model: &MeanFieldModel, pen: &RiskAversePenalties, u: f64) -> Result<f64> {
    if (model.n() - 2.0).abs() > 0.0 {
        return Err(Error::Unsupported(format!(
            "closed-form risk-averse sensitivity needs n = 2, got n = {}",
            model.n()
        )));
    }
    let s2 = model.sigma() * model.sigma();
    let c = model.c();
    let tau = model.horizon() - u;
    Ok(((1.0 + model.beta2()) * (model.kappa() * tau).exp()
        + 2.0 * c * pen.lambda_x_xi * s2 * (model.alpha() * tau).exp())
        / (1.0 + 2.0 * (pen.lambda_xi + pen.lambda_x_xi) * c * s2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelParams;

    fn model(f: impl FnOnce(&mut ModelParams)) -> MeanFieldModel {
        let mut p = ModelParams::baseline();
        f(&mut p);
        p.validate().unwrap()
    }

    fn zero_pen() -> RiskAversePenalties {
        RiskAversePenalties::default()
    }

    #[test]
    fn drift_examples() {
        let m = model(|_| {});
        assert_eq!(drift_b(&m, 0.0, PopulationMoments::default(), 0.0), 0.0);
        let pop = PopulationMoments {
            mean_x: 1.0,
            mean_effort: 2.0,
            var_x: 0.5,
        };
        assert!((drift_b(&m, 1.0, pop, 1.0) - 2.25).abs() < 1e-15);
        let m = model(|p| p.gamma = 0.0);
        let only_effort = model(|p| {
            p.gamma = 0.0;
            p.alpha = 0.0;
            p.beta1 = 0.0;
            p.beta2 = 0.0;
        });
        assert_eq!(drift_b(&only_effort, 0.0, PopulationMoments::default(), 1.0), 1.0);
        assert_eq!(drift_b(&m, 0.0, PopulationMoments::default(), 1.0), 1.0);
    }

    #[test]
    fn cost_examples() {
        let m = model(|p| {
            p.c = 2.0;
            p.n = 3.0;
        });
        assert_eq!(cost(&m, 0.0), 0.0);
        assert!((cost(&m, 2.0) - 16.0 / 3.0).abs() < 1e-14);
        assert_eq!(cost(&model(|_| {}), 1.0), 0.5);
    }

    #[test]
    fn effort_examples() {
        let m = model(|p| {
            p.c = 2.0;
            p.n = 3.0;
        });
        assert_eq!(optimal_effort(&m, 0.0).effort, 0.0);
        assert!((optimal_effort(&m, 4.0).effort - 2f64.sqrt()).abs() < 1e-15);
        for n in [1.3, 2.0, 3.0, 5.5] {
            let m = model(|p| p.n = n);
            assert!((optimal_effort(&m, 1.0).effort - 1.0).abs() < 1e-15);
        }
        // Golden-section on a ↦ z a − c aⁿ/n.
        let (a, _) = golden_section_max(|a| 4.0 * a - cost(&m, a), 0.0, 10.0, 1e-12);
        assert!((a - 2f64.sqrt()).abs() < 1e-6);
    }

    #[test]
    fn first_order_condition_agrees_with_closed_form() {
        for n in [1.2, 1.5, 2.0, 2.7, 4.0] {
            for c in [0.3, 1.0, 2.5] {
                let m = model(|p| {
                    p.n = n;
                    p.c = c;
                });
                for z in [0.0, 1e-3, 0.4, 1.0, 3.7, 25.0] {
                    let a = optimal_effort(&m, z).effort;
                    let root = first_order_effort(&m, z);
                    assert!((a - root).abs() <= 1e-10 * (1.0 + a), "n={n} c={c} z={z}");
                }
            }
        }
    }

    #[test]
    fn g_star_examples() {
        let m = model(|p| {
            p.alpha = 0.0;
            p.beta1 = 0.0;
            p.beta2 = 0.0;
            p.gamma = 0.0;
        });
        assert_eq!(g_star(&m, 0.0, 0.0, PopulationMoments::default()), 0.0);
        assert!((g_star(&m, 1.0, 0.0, PopulationMoments::default()) - 0.5).abs() < 1e-15);
        let m = model(|p| {
            p.beta1 = 0.0;
            p.beta2 = 0.0;
            p.gamma = 0.0;
        });
        assert!((g_star(&m, 1.0, 2.0, PopulationMoments::default()) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn g_star_equals_drift_times_z_minus_cost() {
        let pop = PopulationMoments {
            mean_x: 0.4,
            mean_effort: 1.3,
            var_x: 0.8,
        };
        for n in [1.5, 2.0, 3.0] {
            let m = model(|p| p.n = n);
            for z in [0.0, 0.5, 1.0, 2.2] {
                let a = optimal_effort(&m, z).effort;
                let direct = drift_b(&m, -0.7, pop, a) * z - cost(&m, a);
                assert!((direct - g_star(&m, z, -0.7, pop)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn principal_h_examples() {
        let m = model(|_| {});
        assert_eq!(principal_h(&m, 0.3, 0.0), 0.0);
        let m0 = model(|p| p.beta2 = 0.0);
        assert!((principal_h(&m0, 1.0, 1.0) - 0.5).abs() < 1e-15);
        assert!((principal_h(&m, 0.0, 1.0) - (1.5 * 0.35f64.exp() - 0.5)).abs() < 1e-14);
        assert!((principal_h(&m, 0.0, 1.0) - 1.62860).abs() < 1e-5);
    }

    #[test]
    fn risk_averse_h_examples() {
        let m = model(|_| {});
        for u in [0.0, 0.4, 1.0] {
            for z in [0.0, 0.3, 2.0] {
                assert_eq!(risk_averse_h(&m, &zero_pen(), u, z), principal_h(&m, u, z));
            }
        }
        let m = model(|p| p.beta2 = 0.0);
        let pen = RiskAversePenalties::new(0.0, 0.5, 0.0).unwrap();
        assert!(risk_averse_h(&m, &pen, 1.0, 1.0).abs() < 1e-15);
        let pen = RiskAversePenalties::new(0.0, 0.0, 1.0).unwrap();
        assert_eq!(risk_averse_h(&m, &pen, 0.3, 0.0), 0.0);
    }

    #[test]
    fn maximize_h_examples() {
        let m = model(|_| {});
        for k in 0..=10 {
            let u = k as f64 / 10.0;
            let got = maximize_h(&m, &zero_pen(), u).unwrap();
            let want = 1.5 * (0.35 * (1.0 - u)).exp();
            assert!((got.z - want).abs() < 1e-8, "u={u}: {} vs {want}", got.z);
        }

        let m = model(|p| {
            p.alpha = 0.0;
            p.beta1 = 0.0;
            p.beta2 = 0.0;
        });
        let pen = RiskAversePenalties::new(0.0, 0.5, 0.0).unwrap();
        for u in [0.0, 0.5, 1.0] {
            assert!((maximize_h(&m, &pen, u).unwrap().z - 0.5).abs() < 1e-8);
        }

        let m = model(|p| p.beta2 = 0.0);
        let pen = RiskAversePenalties::new(0.0, 0.0, 0.7).unwrap();
        assert!((maximize_h(&m, &pen, 1.0).unwrap().z - 1.0).abs() < 1e-8);
        assert!((quadratic_h_argmax(&m, &pen, 1.0).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn maximize_h_without_newton_for_small_exponents() {
        let m = model(|p| p.n = 1.5);
        for u in [0.0, 0.5, 1.0] {
            let got = maximize_h(&m, &zero_pen(), u).unwrap();
            // Interior optimum of H is z* = (1+beta2) e^{kappa(T-u)} for every n.
            let want = 1.5 * (0.35 * (1.0 - u)).exp();
            assert!((got.z - want).abs() < 1e-6, "{} vs {want}", got.z);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn effort_is_monotone_in_z(n in 1.1..5.0f64, c in 0.1..5.0f64, z1 in 0.0..10.0f64, z2 in 0.0..10.0f64) {
                let m = model(|p| { p.n = n; p.c = c; });
                let (lo, hi) = if z1 <= z2 { (z1, z2) } else { (z2, z1) };
                prop_assert!(optimal_effort(&m, lo).effort <= optimal_effort(&m, hi).effort);
            }

            #[test]
            fn g_star_dominates_an_effort_grid(n in 1.3..4.0f64, c in 0.2..3.0f64, z in 0.0..4.0f64, x in -2.0..2.0f64) {
                let m = model(|p| { p.n = n; p.c = c; });
                let pop = PopulationMoments { mean_x: 0.3, mean_effort: 0.9, var_x: 0.4 };
                let a_star = optimal_effort(&m, z).effort;
                let top = 2.0 * a_star + 1.0;
                let mut best = f64::NEG_INFINITY;
                for k in 0..=20_000 {
                    let a = top * k as f64 / 20_000.0;
                    best = best.max(drift_b(&m, x, pop, a) * z - cost(&m, a));
                }
                let g = g_star(&m, z, x, pop);
                prop_assert!(g >= best - 1e-12);
                prop_assert!(g - best <= 1e-4 * (1.0 + g.abs()));
            }

            #[test]
            fn maximize_h_beats_random_probes(
                n in 1.5..3.5f64,
                u in 0.0..1.0f64,
                lxi in 0.0..1.0f64,
                lxxi in 0.0..1.0f64,
                probes in proptest::collection::vec(0.0..1.0f64, 50),
            ) {
                let m = model(|p| p.n = n);
                let pen = RiskAversePenalties::new(0.3, lxi, lxxi).unwrap();
                let best = maximize_h(&m, &pen, u).unwrap();
                let z_max = bracket_right(|z| risk_averse_h(&m, &pen, u, z), 1.0, MAX_DOUBLINGS).unwrap();
                for w in probes {
                    prop_assert!(best.value >= risk_averse_h(&m, &pen, u, w * z_max) - 1e-12);
                }
            }
        }
    }
}
