//! Closed-form optimal contracts, efforts, moment curves and principal values.
//!
//! Notation: `kappa = alpha + beta1`, `E(b, t) = (e^{bt} - 1)/b` and
//! `D(t) = ∫₀ᵗ e^{-kappa u} E(2 alpha, u) du`. Under the optimal effort the
//! state variance is policy independent,
//! `V(t) = v0 e^{2 alpha t} + sigma² E(2 alpha, t)`, and the mean solves a
//! linear ODE driven by `(1+beta2) a*(t) - gamma V(t)`.

use std::cell::RefCell;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::hamiltonian::{cost, maximize_h, optimal_effort_level};
use crate::model::{Branch, DeterministicCurve, GaussianLaw, MeanFieldModel, RiskAversePenalties, TimeGrid};
use crate::quad::{exp_moment, expm1_divided, expm1_ratio, integrate, rk4, QUAD_RTOL};

/// Which principal the policy was computed for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    RiskNeutral,
    RiskAverse,
}

/// Optimal sensitivity and effort sampled on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyPair {
    pub kind: PolicyKind,
    pub z_star: DeterministicCurve,
    pub a_star: DeterministicCurve,
}

/// Mean `f` and second moment `g` of the equilibrium state.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentCurves {
    pub f: DeterministicCurve,
    pub g: DeterministicCurve,
}

impl MomentCurves {
    pub fn grid(&self) -> TimeGrid {
        self.f.grid()
    }

    /// `g - f²` on the grid.
    pub fn variance(&self) -> DeterministicCurve {
        let values = self
            .f
            .values()
            .iter()
            .zip(self.g.values())
            .map(|(f, g)| g - f * f)
            .collect();
        DeterministicCurve::new(self.f.grid(), values).expect("variance curve built from finite moments")
    }

    pub fn mean_at(&self, t: f64) -> f64 {
        self.f.eval(t)
    }

    pub fn variance_at(&self, t: f64) -> f64 {
        let f = self.f.eval(t);
        self.g.eval(t) - f * f
    }

    /// Builds curves from mean and variance samples.
    pub fn from_mean_variance(mean: DeterministicCurve, variance: &DeterministicCurve) -> Self {
        let g = mean
            .values()
            .iter()
            .zip(variance.values())
            .map(|(m, v)| v + m * m)
            .collect();
        let g = DeterministicCurve::new(mean.grid(), g).expect("second moment built from finite curves");
        Self { f: mean, g }
    }

    /// Largest absolute gap between the two mean curves and between the two
    /// second-moment curves.
    pub fn sup_distance(&self, other: &Self) -> (f64, f64) {
        (self.f.sup_distance(&other.f), self.g.sup_distance(&other.g))
    }
}

/// Optimal contract: fixed part, law and sensitivity.
#[derive(Debug, Clone, PartialEq)]
pub struct ContractSpec {
    pub kind: PolicyKind,
    pub delta: f64,
    pub law: GaussianLaw,
    pub z_star: DeterministicCurve,
    /// The constants displayed next to the theorem for the law of the
    /// contract, kept for comparison only.
    pub printed_law: GaussianLaw,
    /// The explicit fixed salary formula, defined when `alpha > 0` and
    /// `alpha != beta1`.
    pub printed_delta: Option<f64>,
}

impl ContractSpec {
    /// Evaluates the contract on one sampled state path.
    ///
    /// The risk-neutral contract is
    /// `delta + beta1 (1+beta2) ∫ e^{kappa (T-t)} X_t dt + (1+beta2) (X_T - e^{kappa T} X_0)`;
    /// the risk-averse one is `delta - alpha ∫ z X dt + ∫ z dX`. Time
    /// integrals use the trapezoidal rule and `∫ z dX` uses `z` averaged over
    /// each step.
    pub fn evaluate_path(&self, model: &MeanFieldModel, grid: &TimeGrid, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), grid.len());
        let dt = grid.dt();
        let steps = grid.steps();
        match self.kind {
            PolicyKind::RiskNeutral => {
                let kappa = model.kappa();
                let horizon = grid.horizon();
                let weight = |k: usize| (kappa * (horizon - grid.point(k))).exp();
                let mut integral = 0.0;
                for k in 0..steps {
                    integral += 0.5 * dt * (weight(k) * x[k] + weight(k + 1) * x[k + 1]);
                }
                self.delta
                    + model.beta1() * (1.0 + model.beta2()) * integral
                    + (1.0 + model.beta2()) * (x[steps] - (kappa * horizon).exp() * x[0])
            }
            PolicyKind::RiskAverse => {
                let z = |k: usize| self.z_star.eval(grid.point(k));
                let mut value = self.delta;
                for k in 0..steps {
                    let (z0, z1) = (z(k), z(k + 1));
                    value += 0.5 * (z0 + z1) * (x[k + 1] - x[k]);
                    value -= model.alpha() * 0.5 * dt * (z0 * x[k] + z1 * x[k + 1]);
                }
                value
            }
        }
    }
}

/// `z*(t) = (1+beta2) e^{kappa (T-t)}`.
pub fn z_star_at(model: &MeanFieldModel, t: f64) -> f64 {
    (1.0 + model.beta2()) * (model.kappa() * (model.horizon() - t)).exp()
}

/// `a*(t) = (z*(t)/c)^{1/(n-1)}`.
pub fn a_star_at(model: &MeanFieldModel, t: f64) -> f64 {
    optimal_effort_level(model, z_star_at(model, t))
}

pub fn optimal_policy(model: &MeanFieldModel) -> PolicyPair {
    optimal_policy_on(model, model.grid())
}

pub fn optimal_policy_on(model: &MeanFieldModel, grid: TimeGrid) -> PolicyPair {
    let z_star = DeterministicCurve::from_fn(grid, |t| z_star_at(model, t));
    let a_star = z_star.map(|z| optimal_effort_level(model, z));
    PolicyPair {
        kind: PolicyKind::RiskNeutral,
        z_star,
        a_star,
    }
}

/// `(1+beta2)^{n/(n-1)} c^{-1/(n-1)} (1 - 1/n)`, the running gain `H(u, z*_u)`
/// divided by `e^{kappa n/(n-1) (T-u)}`.
fn gain_rate(model: &MeanFieldModel) -> f64 {
    let n = model.n();
    (1.0 + model.beta2()).powf(n / (n - 1.0)) * model.c().powf(-1.0 / (n - 1.0)) * (1.0 - 1.0 / n)
}

/// `K` with `a*(u) = K e^{-kappa u/(n-1)}`.
fn effort_scale(model: &MeanFieldModel) -> f64 {
    ((1.0 + model.beta2()) * (model.kappa() * model.horizon()).exp() / model.c()).powf(1.0 / (model.n() - 1.0))
}

/// Equilibrium state variance `V(t)`.
pub fn variance_at(model: &MeanFieldModel, t: f64) -> f64 {
    let a2 = 2.0 * model.alpha();
    model.v0() * (a2 * t).exp() + model.sigma().powi(2) * expm1_ratio(a2, t)
}

/// Equilibrium mean `f(t)`.
///
/// Uses the four-exponential form `lambda1 e^{kappa t} + lambda2 e^{-kappa t/(n-1)}
/// + lambda3 e^{2 alpha t} + lambda4` when `alpha > 0` and `alpha != beta1`;
/// elsewhere the removable singularities are resolved by [`mean_at_unified`].
pub fn mean_at(model: &MeanFieldModel, t: f64) -> f64 {
    if t == 0.0 {
        return model.m0();
    }
    match model.branch() {
        Branch::Generic => {
            let l = lambdas(model);
            let (kappa, n) = (model.kappa(), model.n());
            l[0] * (kappa * t).exp()
                + l[1] * (-kappa * t / (n - 1.0)).exp()
                + l[2] * (2.0 * model.alpha() * t).exp()
                + l[3]
        }
        _ => mean_at_unified(model, t),
    }
}

/// `lambda1..lambda4` of the four-exponential mean; only meaningful in the
/// generic branch.
pub fn lambdas(model: &MeanFieldModel) -> [f64; 4] {
    let (alpha, kappa, gamma, n) = (model.alpha(), model.kappa(), model.gamma(), model.n());
    let s2 = model.sigma().powi(2);
    let v0 = model.v0();
    let drive = (1.0 + model.beta2()) * effort_scale(model) * (n - 1.0) / (kappa * n);
    let l1 = model.m0() + drive + gamma * s2 / (kappa * (2.0 * alpha - kappa)) + gamma / (2.0 * alpha - kappa) * v0;
    let l2 = -drive;
    let l3 = -gamma * s2 / (2.0 * alpha * (2.0 * alpha - kappa)) - gamma * v0 / (2.0 * alpha - kappa);
    let l4 = -gamma * s2 / (2.0 * alpha * kappa);
    [l1, l2, l3, l4]
}

/// Branch-free form of the equilibrium mean:
/// `m0 e^{kt} + (1+beta2) K e^{kt} E(-k n/(n-1), t) - gamma e^{kt} (v0 E(2 alpha - k, t) + sigma² D(t))`.
pub fn mean_at_unified(model: &MeanFieldModel, t: f64) -> f64 {
    let (alpha, kappa, n) = (model.alpha(), model.kappa(), model.n());
    let growth = (kappa * t).exp();
    growth
        * (model.m0() + (1.0 + model.beta2()) * effort_scale(model) * expm1_ratio(-kappa * n / (n - 1.0), t)
            - model.gamma()
                * (model.v0() * expm1_ratio(2.0 * alpha - kappa, t)
                    + model.sigma().powi(2) * expm1_divided(-kappa, 2.0 * alpha, t)))
}

/// Closed-form moment curves for the optimal policy on the model grid.
pub fn moment_curves(model: &MeanFieldModel) -> MomentCurves {
    moment_curves_on(model, model.grid())
}

pub fn moment_curves_on(model: &MeanFieldModel, grid: TimeGrid) -> MomentCurves {
    let f = DeterministicCurve::from_fn(grid, |t| mean_at(model, t));
    let g = DeterministicCurve::from_fn(grid, |t| {
        let m = mean_at(model, t);
        variance_at(model, t) + m * m
    });
    MomentCurves { f, g }
}

/// Integrates the moment ODEs
/// `f' = (1+beta2) a(t) + kappa f - gamma g + gamma f²`,
/// `g' = 2 alpha g + 2 f (f' - alpha f) + sigma²`
/// with classical RK4 for an arbitrary deterministic effort.
pub fn moment_curves_rk4(model: &MeanFieldModel, grid: TimeGrid, effort: impl Fn(f64) -> f64) -> MomentCurves {
    let (alpha, kappa, gamma, b2) = (model.alpha(), model.kappa(), model.gamma(), model.beta2());
    let s2 = model.sigma().powi(2);
    let m0 = model.m0();
    let sol = rk4(&grid, [m0, m0 * m0 + model.v0()], |t, y| {
        let (f, g) = (y[0], y[1]);
        let df = (1.0 + b2) * effort(t) + kappa * f - gamma * g + gamma * f * f;
        let dg = 2.0 * alpha * g + 2.0 * f * (df - alpha * f) + s2;
        [df, dg]
    });
    MomentCurves {
        f: DeterministicCurve::new(grid, sol.iter().map(|y| y[0]).collect()).expect("finite RK4 mean"),
        g: DeterministicCurve::new(grid, sol.iter().map(|y| y[1]).collect()).expect("finite RK4 second moment"),
    }
}

/// Contract law, fixed part and the printed comparison values for the
/// risk-neutral principal.
pub fn contract_spec(model: &MeanFieldModel) -> ContractSpec {
    let horizon = model.horizon();
    if horizon == 0.0 {
        return ContractSpec {
            kind: PolicyKind::RiskNeutral,
            delta: model.r0(),
            law: GaussianLaw::new(model.r0(), 0.0),
            z_star: optimal_policy(model).z_star,
            printed_law: printed_contract_law(model),
            printed_delta: (model.branch() == Branch::Generic).then(|| printed_delta(model)),
        };
    }
    let mean = model.r0() + integrate(|u| cost(model, a_star_at(model, u)), 0.0, horizon, QUAD_RTOL);
    let variance = model.sigma().powi(2) * integrate(|u| z_star_at(model, u).powi(2), 0.0, horizon, QUAD_RTOL);
    let variable = expected_variable_part(model);
    ContractSpec {
        kind: PolicyKind::RiskNeutral,
        delta: mean - variable,
        law: GaussianLaw::new(mean, variance),
        z_star: optimal_policy(model).z_star,
        printed_law: printed_contract_law(model),
        printed_delta: (model.branch() == Branch::Generic).then(|| printed_delta(model)),
    }
}

/// `E[beta1 (1+beta2) ∫ e^{kappa (T-t)} X_t dt + (1+beta2) (X_T - e^{kappa T} X_0)]`.
pub fn expected_variable_part(model: &MeanFieldModel) -> f64 {
    let (horizon, kappa, b2) = (model.horizon(), model.kappa(), model.beta2());
    let running = if model.beta1() == 0.0 {
        0.0
    } else {
        integrate(
            |t| (kappa * (horizon - t)).exp() * mean_at(model, t),
            0.0,
            horizon,
            QUAD_RTOL,
        )
    };
    model.beta1() * (1.0 + b2) * running + (1.0 + b2) * (mean_at(model, horizon) - (kappa * horizon).exp() * model.m0())
}

/// Law constants as displayed with the theorem:
/// mean `R0 + (1+beta2)^{n/(n-1)}/(n c) (e^{n/(n-1) kappa T} - 1)`,
/// variance `sigma² (1+beta2)² (e^{2 kappa T} - 1)`.
pub fn printed_contract_law(model: &MeanFieldModel) -> GaussianLaw {
    let (n, kappa, horizon) = (model.n(), model.kappa(), model.horizon());
    let b = 1.0 + model.beta2();
    let mean = model.r0() + b.powf(n / (n - 1.0)) / (n * model.c()) * ((n / (n - 1.0) * kappa * horizon).exp() - 1.0);
    let variance = model.sigma().powi(2) * b * b * ((2.0 * kappa * horizon).exp() - 1.0);
    GaussianLaw::new(mean, variance)
}

/// The explicit fixed-salary formula of the generic branch, term by term.
pub fn printed_delta(model: &MeanFieldModel) -> f64 {
    let (alpha, beta1, kappa, gamma, n, c) = (
        model.alpha(),
        model.beta1(),
        model.kappa(),
        model.gamma(),
        model.n(),
        model.c(),
    );
    let (s2, v0, horizon) = (model.sigma().powi(2), model.v0(), model.horizon());
    let b = 1.0 + model.beta2();
    let p = n / (n - 1.0);
    let c_root = c.powf(1.0 / (n - 1.0));
    let head = (b - 1.0 / n) * b.powf(p) / (n * kappa * c_root) * ((kappa * p * horizon).exp() - 1.0);
    let bracket =
        horizon * beta1 * (model.m0() + gamma * s2 / (kappa * (alpha - beta1)) + gamma * v0 / (alpha - beta1))
            + 0.5 * gamma * s2 * (1.0 - (-kappa * horizon).exp()) / (kappa * kappa)
            - gamma * alpha * (s2 / (2.0 * alpha) + v0) / (alpha - beta1).powi(2)
                * (((alpha - beta1) * horizon).exp() - 1.0)
            + b * (n - 1.0) * beta1 / (n * c_root * kappa)
                * (kappa * horizon / (n - 1.0)).exp()
                * (horizon - (n - 1.0) / (n * kappa) * (1.0 - (-p * kappa * horizon).exp()));
    model.r0() - head - b * (kappa * horizon).exp() * bracket
}

/// Principal's value `v(t, m1, m2, V1)` on moment-parametrised measures:
/// `m1` is the mean of the output, `m2` the mean of the agent's continuation
/// utility and `var1` the variance of the output.
///
/// Dispatches on [`Branch`] to the four closed forms.
pub fn principal_value(model: &MeanFieldModel, t: f64, m1: f64, m2: f64, var1: f64) -> f64 {
    let s = model.horizon() - t;
    let (alpha, beta1, kappa, gamma, n) = (model.alpha(), model.beta1(), model.kappa(), model.gamma(), model.n());
    let s2 = model.sigma().powi(2);
    let rate = gain_rate(model);
    let p = n / (n - 1.0);
    match model.branch() {
        Branch::NoDrift => s * rate + m1 - m2 - gamma * s * var1 - gamma * s2 * s * s / 2.0,
        Branch::AlphaZero => {
            let e = (beta1 * s).exp();
            rate * expm1_ratio(beta1 * p, s) + m1 * e
                - m2
                - gamma * (e - 1.0) / beta1 * var1
                - gamma * s2 * e * exp_moment(1, -beta1, s)
        }
        Branch::Generic => {
            let (ek, ea) = ((kappa * s).exp(), (2.0 * alpha * s).exp());
            (1.0 + model.beta2()).powf(p) / (kappa * model.c().powf(1.0 / (n - 1.0)))
                * (1.0 - 1.0 / n).powi(2)
                * ((kappa * p * s).exp() - 1.0)
                + m1 * ek
                - m2
                - gamma / (2.0 * alpha - kappa) * (ea - ek) * (var1 + s2 / (2.0 * alpha))
                - gamma * s2 / (2.0 * alpha * kappa) * (1.0 - ek)
        }
        Branch::Resonant => {
            let ea = (2.0 * alpha * s).exp();
            rate * expm1_ratio(kappa * p, s) + m1 * (kappa * s).exp()
                - m2
                - gamma * ea * s * (var1 + s2 / (2.0 * alpha))
                - gamma * s2 / (4.0 * alpha * alpha) * (1.0 - ea)
        }
    }
}

/// Branch-free principal value:
/// `A E(kappa n/(n-1), s) + m1 e^{kappa s} - m2 - gamma e^{kappa s} (V1 E(2 alpha - kappa, s) + sigma² D(s))`
/// with `s = T - t`.
pub fn principal_value_unified(model: &MeanFieldModel, t: f64, m1: f64, m2: f64, var1: f64) -> f64 {
    let s = model.horizon() - t;
    let (alpha, kappa, n) = (model.alpha(), model.kappa(), model.n());
    let ek = (kappa * s).exp();
    gain_rate(model) * expm1_ratio(kappa * n / (n - 1.0), s) + m1 * ek
        - m2
        - model.gamma()
            * ek
            * (var1 * expm1_ratio(2.0 * alpha - kappa, s)
                + model.sigma().powi(2) * expm1_divided(-kappa, 2.0 * alpha, s))
}

/// Value at the initial law and the reservation utility, `v(0, m0, R0, v0)`.
pub fn initial_value(model: &MeanFieldModel) -> f64 {
    principal_value(model, 0.0, model.m0(), model.r0(), model.v0())
}

/// The principal's optimum is attained: `f(T) - E[xi*]`, which must equal
/// [`initial_value`].
pub fn realized_value(model: &MeanFieldModel) -> f64 {
    mean_at(model, model.horizon()) - contract_spec(model).law.mean
}

/// Effort of the quadratic-cost risk-averse principal as displayed:
/// `(1+beta2)/(c (1 + 2 L c sigma²)) e^{kappa (T-t)} + 2 lambdaXXi sigma² / (1 + 2 L c sigma²) e^{alpha (T-t)}`
/// with `L = lambdaXi + lambdaXXi`.
pub fn quadratic_risk_averse_effort(model: &MeanFieldModel, pen: &RiskAversePenalties, t: f64) -> f64 {
    let (c, s2) = (model.c(), model.sigma().powi(2));
    let denom = 1.0 + 2.0 * (pen.lambda_xi + pen.lambda_x_xi) * c * s2;
    let tau = model.horizon() - t;
    (1.0 + model.beta2()) / (c * denom) * (model.kappa() * tau).exp()
        + 2.0 * pen.lambda_x_xi * s2 / denom * (model.alpha() * tau).exp()
}

/// Optimal policy and contract of the mean-variance principal.
///
/// Zero penalties reduce to [`optimal_policy`] and [`contract_spec`].
/// Otherwise `z*` is obtained by numerically maximising `h(u, ·)` at every
/// point where it is needed, the law integrals use adaptive Simpson on that
/// pointwise maximiser and the fixed part
/// `delta = R0 + ∫ (c(a*) - z* ((1+beta2) a* + beta1 f - gamma V)) dt` is
/// accumulated alongside the mean ODE with RK4 on the model grid.
pub fn risk_averse_solution(model: &MeanFieldModel, pen: &RiskAversePenalties) -> Result<(PolicyPair, ContractSpec)> {
    if pen.is_zero() {
        return Ok((optimal_policy(model), contract_spec(model)));
    }
    let failure: RefCell<Option<Error>> = RefCell::new(None);
    let z_at = |u: f64| match maximize_h(model, pen, u) {
        Ok(m) => m.z,
        Err(e) => {
            failure.borrow_mut().get_or_insert(e);
            0.0
        }
    };
    let grid = model.grid();
    let z_star = DeterministicCurve::from_fn(grid, z_at);
    let a_star = z_star.map(|z| optimal_effort_level(model, z));

    let horizon = model.horizon();
    let mean = model.r0()
        + integrate(
            |u| cost(model, optimal_effort_level(model, z_at(u))),
            0.0,
            horizon,
            QUAD_RTOL,
        );
    let variance = model.sigma().powi(2) * integrate(|u| z_at(u).powi(2), 0.0, horizon, QUAD_RTOL);

    let (kappa, b2, beta1, gamma) = (model.kappa(), model.beta2(), model.beta1(), model.gamma());
    let sol = rk4(&grid, [model.m0(), 0.0], |t, y| {
        let z = z_at(t);
        let a = optimal_effort_level(model, z);
        let v = variance_at(model, t);
        let df = (1.0 + b2) * a + kappa * y[0] - gamma * v;
        let dd = cost(model, a) - z * ((1.0 + b2) * a + beta1 * y[0] - gamma * v);
        [df, dd]
    });
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    let delta = model.r0() + sol.last().map_or(0.0, |y| y[1]);
    let policy = PolicyPair {
        kind: PolicyKind::RiskAverse,
        z_star: z_star.clone(),
        a_star,
    };
    let printed_law = if model.n() == 2.0 {
        let c = model.c();
        let a2 = |t: f64| quadratic_risk_averse_effort(model, pen, t).powi(2);
        GaussianLaw::new(
            model.r0() + c / 2.0 * integrate(a2, 0.0, horizon, QUAD_RTOL),
            integrate(|t| c * c * model.sigma().powi(2) * a2(t), 0.0, horizon, QUAD_RTOL),
        )
    } else {
        GaussianLaw::new(f64::NAN, f64::NAN)
    };
    let contract = ContractSpec {
        kind: PolicyKind::RiskAverse,
        delta,
        law: GaussianLaw::new(mean, variance),
        z_star,
        printed_law,
        printed_delta: None,
    };
    Ok((policy, contract))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::principal_h;
    use crate::model::ModelParams;

    fn model(f: impl FnOnce(&mut ModelParams)) -> MeanFieldModel {
        let mut p = ModelParams::baseline();
        f(&mut p);
        p.validate().unwrap()
    }

    /// One model per branch plus a generic model with a Gaussian start.
    fn branch_models() -> Vec<MeanFieldModel> {
        vec![
            model(|p| {
                p.alpha = 0.0;
                p.beta1 = 0.0;
            }),
            model(|p| p.alpha = 0.0),
            model(|p| {
                p.alpha = 0.2;
                p.beta1 = 0.2;
            }),
            model(|_| {}),
            model(|p| {
                p.n = 3.0;
                p.c = 2.0;
                p.m0 = 0.7;
                p.v0 = 0.4;
                p.gamma = 0.5;
            }),
        ]
    }

    #[test]
    fn policy_examples() {
        let m = model(|p| {
            p.alpha = 0.0;
            p.beta1 = 0.0;
            p.beta2 = 0.0;
            p.c = 2.0;
            p.n = 3.0;
        });
        let pol = optimal_policy(&m);
        assert!(pol.z_star.values().iter().all(|&z| z == 1.0));
        assert!(pol.a_star.values().iter().all(|&a| (a - 0.5f64.sqrt()).abs() < 1e-15));

        let m = model(|p| {
            p.c = 2.0;
            p.n = 3.0;
        });
        assert!((a_star_at(&m, 0.0) - (0.75 * 0.35f64.exp()).sqrt()).abs() < 1e-14);
        assert!((a_star_at(&m, 0.0) - 1.031650).abs() < 1e-6);
        let pol = optimal_policy(&m);
        assert_eq!(*pol.z_star.values().last().unwrap(), 1.5);
        assert!((z_star_at(&m, 0.0) - 2.128601).abs() < 1e-6);
        for (z, a) in pol.z_star.values().iter().zip(pol.a_star.values()) {
            assert!((a - (z / 2.0).sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn optimal_z_maximizes_principal_h() {
        let m = model(|_| {});
        for k in 0..=100 {
            let t = k as f64 / 100.0;
            let best = principal_h(&m, t, z_star_at(&m, t));
            for j in 0..200 {
                let z = 6.0 * j as f64 / 199.0;
                assert!(best >= principal_h(&m, t, z) - 1e-15);
            }
        }
    }

    #[test]
    fn mean_examples() {
        let m = model(|p| {
            p.alpha = 0.0;
            p.beta1 = 0.0;
            p.beta2 = 0.0;
            p.gamma = 0.0;
        });
        let mc = moment_curves(&m);
        for t in [0.0, 0.25, 0.5, 1.0] {
            assert!((mc.mean_at(t) - t).abs() < 1e-12);
        }
        let m = model(|p| {
            p.gamma = 0.0;
            p.beta1 = 0.0;
            p.beta2 = 0.0;
            p.m0 = 1.0;
        });
        let want = 0.25f64.exp() + integrate(|u| (0.5 * (1.0 - u)).exp(), 0.0, 1.0, 1e-13);
        assert!((mean_at(&m, 1.0) - want).abs() < 1e-12);
        assert!((mean_at(&m, 1.0) - 2.581468).abs() < 1e-6);
    }

    #[test]
    fn initial_moments() {
        for m in branch_models() {
            let mc = moment_curves(&m);
            assert!((mc.f.values()[0] - m.m0()).abs() < 1e-14);
            assert!((mc.g.values()[0] - m.m0().powi(2) - m.v0()).abs() < 1e-14);
        }
    }

    #[test]
    fn closed_form_moments_match_rk4_in_every_branch() {
        for m in branch_models() {
            let grid = m.grid();
            let closed = moment_curves(&m);
            let ode = moment_curves_rk4(&m, grid, |t| a_star_at(&m, t));
            let (df, dg) = closed.sup_distance(&ode);
            assert!(df < 1e-9 && dg < 1e-9, "{:?}: {df} {dg}", m.branch());
            for t in [0.0, 0.3, 1.0] {
                assert!((mean_at(&m, t) - mean_at_unified(&m, t)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn moment_ode_residual_is_small() {
        for m in branch_models() {
            let mc = moment_curves(&m);
            let grid = mc.grid();
            let (f, g) = (mc.f.values(), mc.g.values());
            let h = grid.dt();
            let (alpha, kappa, gamma) = (m.alpha(), m.kappa(), m.gamma());
            for k in 1..grid.steps() {
                let t = grid.point(k);
                let df = (f[k + 1] - f[k - 1]) / (2.0 * h);
                let dg = (g[k + 1] - g[k - 1]) / (2.0 * h);
                let rhs_f = (1.0 + m.beta2()) * a_star_at(&m, t) + kappa * f[k] - gamma * g[k] + gamma * f[k] * f[k];
                let rhs_g = 2.0 * alpha * g[k] + 2.0 * f[k] * (rhs_f - alpha * f[k]) + m.sigma().powi(2);
                assert!((df - rhs_f).abs() < 1e-4);
                assert!((dg - rhs_g).abs() < 1e-4);
            }
            assert!(mc.variance().values().iter().all(|&v| v >= -1e-9));
        }
    }

    #[test]
    fn contract_examples() {
        let m = model(|p| {
            p.alpha = 0.0;
            p.beta1 = 0.0;
            p.beta2 = 0.0;
            p.gamma = 0.0;
        });
        let cs = contract_spec(&m);
        assert!((cs.law.mean - 0.5).abs() < 1e-12);
        assert!((cs.law.variance - 1.0).abs() < 1e-12);
        assert!((cs.delta + 0.5).abs() < 1e-12);

        let m0 = model(|p| p.horizon = 0.0);
        let cs = contract_spec(&m0);
        assert_eq!(cs.law.mean, m0.r0());
        assert_eq!(cs.law.variance, 0.0);
        assert_eq!(cs.delta, m0.r0());

        let m = model(|_| {});
        let want = 2.25 * (0.7f64.exp() - 1.0) / 0.7;
        assert!((contract_spec(&m).law.variance - want).abs() < 1e-9 * want);
        assert!((want - 3.258491).abs() < 1e-6);
    }

    #[test]
    fn delta_by_moments_equals_delta_by_running_cost() {
        for m in branch_models() {
            let cs = contract_spec(&m);
            let horizon = m.horizon();
            let direct = m.r0()
                + integrate(
                    |t| {
                        let a = a_star_at(&m, t);
                        cost(&m, a)
                            - z_star_at(&m, t)
                                * ((1.0 + m.beta2()) * a + m.beta1() * mean_at(&m, t) - m.gamma() * variance_at(&m, t))
                    },
                    0.0,
                    horizon,
                    1e-12,
                );
            assert!(
                (cs.delta - direct).abs() < 1e-8,
                "{:?}: {} vs {direct}",
                m.branch(),
                cs.delta
            );
        }
    }

    #[test]
    fn printed_delta_agrees_when_the_effort_spillover_vanishes() {
        let m = model(|p| p.beta2 = 0.0);
        let cs = contract_spec(&m);
        assert!((cs.printed_delta.unwrap() - cs.delta).abs() < 1e-6);
        let m = model(|p| {
            p.beta2 = 0.0;
            p.v0 = 0.3;
            p.m0 = -0.4;
            p.gamma = 0.6;
            p.alpha = 0.4;
        });
        let cs = contract_spec(&m);
        assert!((cs.printed_delta.unwrap() - cs.delta).abs() < 1e-6);
        assert!(contract_spec(&model(|p| p.alpha = 0.0)).printed_delta.is_none());
    }

    #[test]
    fn value_examples() {
        let m = model(|_| {});
        for (m1, m2, v1) in [(0.3, -0.2, 0.0), (1.0, 0.5, 2.0)] {
            assert!((principal_value(&m, 1.0, m1, m2, v1) - (m1 - m2)).abs() < 1e-15);
        }
        let m = model(|p| {
            p.gamma = 0.0;
            p.beta1 = 0.0;
            p.beta2 = 0.0;
        });
        let want = 0.5f64.exp() - 1.0 + 0.25f64.exp();
        for v1 in [0.0, 3.0] {
            assert!((principal_value(&m, 0.0, 1.0, 0.0, v1) - want).abs() < 1e-12);
        }
        let quad = integrate(|u| principal_h(&m, u, z_star_at(&m, u)), 0.0, 1.0, 1e-13) + 0.25f64.exp();
        assert!((quad - want).abs() < 1e-12);
        assert!((want - 1.932746).abs() < 1e-6);
    }

    #[test]
    fn value_decreases_with_gamma() {
        let v = |g: f64| initial_value(&model(|p| p.gamma = g));
        assert!(v(0.2 + 1e-4) < v(0.2 - 1e-4));
    }

    #[test]
    fn value_matches_quadrature_of_its_definition() {
        let m = model(|p| {
            p.m0 = 0.4;
            p.v0 = 0.3;
            p.r0 = 0.2;
        });
        let horizon = m.horizon();
        let gamma_term = integrate(
            |u| {
                (m.kappa() * (horizon - u)).exp()
                    * ((2.0 * m.alpha() * u).exp() * m.v0()
                        + m.sigma().powi(2) / (2.0 * m.alpha()) * ((2.0 * m.alpha() * u).exp() - 1.0))
            },
            0.0,
            horizon,
            1e-13,
        );
        let want = integrate(|u| principal_h(&m, u, z_star_at(&m, u)), 0.0, horizon, 1e-13)
            + m.m0() * (m.kappa() * horizon).exp()
            - m.r0()
            - m.gamma() * gamma_term;
        assert!((initial_value(&m) - want).abs() < 1e-8);
    }

    #[test]
    fn value_is_attained_by_the_contract() {
        for m in branch_models() {
            assert!(
                (initial_value(&m) - realized_value(&m)).abs() < 1e-8,
                "{:?}",
                m.branch()
            );
        }
    }

    #[test]
    fn branches_agree_with_unified_form_and_each_other() {
        for m in branch_models() {
            for t in [0.0, 0.4, 1.0] {
                let a = principal_value(&m, t, 0.3, 0.1, 0.7);
                let b = principal_value_unified(&m, t, 0.3, 0.1, 0.7);
                assert!((a - b).abs() < 1e-12, "{:?}", m.branch());
            }
        }
        let v = |alpha: f64, beta1: f64| {
            let m = model(|p| {
                p.alpha = alpha;
                p.beta1 = beta1;
            });
            principal_value(&m, 0.0, 0.3, 0.1, 0.7)
        };
        assert!((v(0.25, 0.25 + 1e-8) - v(0.25, 0.25)).abs() < 1e-5);
        assert!((v(0.25, 0.25 - 1e-8) - v(0.25, 0.25)).abs() < 1e-5);
        assert!((v(1e-9, 0.3) - v(0.0, 0.3)).abs() < 1e-6);
        assert!((v(0.0, 1e-9) - v(0.0, 0.0)).abs() < 1e-6);
    }

    #[test]
    fn risk_averse_examples() {
        let m = model(|_| {});
        let (pol, cs) = risk_averse_solution(&m, &RiskAversePenalties::default()).unwrap();
        assert_eq!(pol, optimal_policy(&m));
        assert_eq!(cs, contract_spec(&m));

        let m = model(|p| {
            p.alpha = 0.0;
            p.beta1 = 0.0;
            p.beta2 = 0.0;
        });
        let pen = RiskAversePenalties::new(0.0, 0.5, 0.0).unwrap();
        let (pol, _) = risk_averse_solution(&m, &pen).unwrap();
        assert!(pol.a_star.values().iter().all(|&a| (a - 0.5).abs() < 1e-8));
    }

    #[test]
    fn risk_averse_quadratic_closed_form() {
        let m = model(|p| p.gamma = 0.0);
        let pen = RiskAversePenalties::new(0.1, 0.1, 0.1).unwrap();
        let (pol, cs) = risk_averse_solution(&m, &pen).unwrap();
        for (k, t) in pol.a_star.grid().points().enumerate() {
            assert!((pol.a_star.values()[k] - quadratic_risk_averse_effort(&m, &pen, t)).abs() < 1e-8);
        }
        assert!((cs.law.mean - cs.printed_law.mean).abs() < 1e-8);
        assert!((cs.law.variance - cs.printed_law.variance).abs() < 1e-8);
    }

    #[test]
    fn risk_averse_contract_pays_its_law_mean() {
        // E[xi] computed from the contract representation equals R0 + ∫ c(a*).
        let m = model(|p| p.gamma = 0.3);
        let pen = RiskAversePenalties::new(0.1, 0.2, 0.3).unwrap();
        let (pol, cs) = risk_averse_solution(&m, &pen).unwrap();
        let grid = m.grid();
        let a = |t: f64| pol.a_star.eval(t);
        let mc = moment_curves_rk4(&m, grid, a);
        let expected = cs.delta
            + integrate(
                |t| {
                    cs.z_star.eval(t)
                        * ((1.0 + m.beta2()) * a(t) + m.beta1() * mc.mean_at(t) - m.gamma() * variance_at(&m, t))
                },
                0.0,
                1.0,
                1e-10,
            );
        assert!((expected - cs.law.mean).abs() < 1e-5, "{expected} vs {}", cs.law.mean);
    }

    #[test]
    fn risk_averse_effort_falls_with_salary_penalties() {
        let m = model(|p| p.gamma = 0.0);
        let effort = |lxi: f64, lxxi: f64| {
            let pen = RiskAversePenalties::new(0.1, lxi, lxxi).unwrap();
            risk_averse_solution(&m, &pen).unwrap().0.a_star
        };
        let base = effort(0.1, 0.1);
        for other in [effort(0.2, 0.1), effort(0.1, 0.2)] {
            for (a, b) in other.values().iter().zip(base.values()) {
                assert!(a <= b);
            }
        }
    }
}
