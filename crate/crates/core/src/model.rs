//! Model parameters, time grids and deterministic curves.
//!
//! The output of a representative agent follows
//!
//! ```text
//! dX_t = (a_t + alpha X_t + beta1 E[X_t] + beta2 E[a_t] - gamma Var[X_t]) dt + sigma dW_t
//! ```
//!
//! and effort costs `c |a|^n / n`. Everything else in the crate is derived from
//! a validated [`MeanFieldModel`].

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of grid intervals used for policy and moment curves.
pub const DEFAULT_STEPS: usize = 1000;

/// Absolute threshold used to detect the removable singularities of the
/// closed forms (`alpha = 0`, `kappa = 0`, `alpha = beta1`).
pub const BRANCH_EPS: f64 = 1e-12;

/// Raw, unvalidated model parameters as they appear in config files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub gamma: f64,
    pub sigma: f64,
    pub c: f64,
    pub n: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    #[serde(rename = "R0")]
    pub r0: f64,
    pub m0: f64,
    pub v0: f64,
}

impl ModelParams {
    /// `alpha = 0.25, beta1 = 0.1, beta2 = 0.5, gamma = 0.2, sigma = c = 1, n = 2, T = 1`,
    /// zero reservation utility and a Dirac initial law at 0.
    pub fn baseline() -> Self {
        Self {
            alpha: 0.25,
            beta1: 0.1,
            beta2: 0.5,
            gamma: 0.2,
            sigma: 1.0,
            c: 1.0,
            n: 2.0,
            horizon: 1.0,
            r0: 0.0,
            m0: 0.0,
            v0: 0.0,
        }
    }

    pub fn validate(self) -> Result<MeanFieldModel> {
        MeanFieldModel::new(self)
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Reads a TOML or JSON document, chosen by file extension (`.json` is
    /// JSON, anything else TOML).
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Self::from_json_str(&text),
            _ => Self::from_toml_str(&text),
        }
    }
}

/// Which closed-form expression applies to the value function and moments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    /// `alpha = beta1 = 0`.
    NoDrift,
    /// `alpha = 0 < beta1`.
    AlphaZero,
    /// `alpha = beta1 > 0`, where `2 alpha = kappa`.
    Resonant,
    /// `alpha > 0`, `alpha != beta1`.
    Generic,
}

/// A parameter set that satisfies every admissibility constraint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(transparent)]
pub struct MeanFieldModel {
    params: ModelParams,
}

impl MeanFieldModel {
    pub fn new(p: ModelParams) -> Result<Self> {
        let fields = [
            ("alpha", p.alpha),
            ("beta1", p.beta1),
            ("beta2", p.beta2),
            ("gamma", p.gamma),
            ("sigma", p.sigma),
            ("c", p.c),
            ("n", p.n),
            ("T", p.horizon),
            ("R0", p.r0),
            ("m0", p.m0),
            ("v0", p.v0),
        ];
        for (name, v) in fields {
            if !v.is_finite() {
                return Err(Error::invalid(name, format!("{name} must be finite")));
            }
        }
        if !(0.0..0.5).contains(&p.alpha) {
            return Err(Error::invalid("alpha", "alpha must lie in [0, 0.5)"));
        }
        for (name, v) in [("beta1", p.beta1), ("beta2", p.beta2), ("gamma", p.gamma)] {
            if v < 0.0 {
                return Err(Error::invalid(name, format!("{name} must be nonnegative")));
            }
        }
        if p.sigma <= 0.0 {
            return Err(Error::invalid("sigma", "sigma must be positive"));
        }
        if p.c <= 0.0 {
            return Err(Error::invalid("c", "c must be positive"));
        }
        if p.n <= 1.0 {
            return Err(Error::invalid("n", "n must exceed 1"));
        }
        // T = 0 is accepted as the degenerate empty-horizon contract.
        if p.horizon < 0.0 {
            return Err(Error::invalid("T", "T must be nonnegative"));
        }
        if p.v0 < 0.0 {
            return Err(Error::invalid("v0", "v0 must be nonnegative"));
        }
        Ok(Self { params: p })
    }

    pub fn params(&self) -> ModelParams {
        self.params
    }

    /// Copy of the parameters with `f` applied, re-validated.
    pub fn with(&self, f: impl FnOnce(&mut ModelParams)) -> Result<Self> {
        let mut p = self.params;
        f(&mut p);
        Self::new(p)
    }

    pub fn alpha(&self) -> f64 {
        self.params.alpha
    }
    pub fn beta1(&self) -> f64 {
        self.params.beta1
    }
    pub fn beta2(&self) -> f64 {
        self.params.beta2
    }
    pub fn gamma(&self) -> f64 {
        self.params.gamma
    }
    pub fn sigma(&self) -> f64 {
        self.params.sigma
    }
    pub fn c(&self) -> f64 {
        self.params.c
    }
    pub fn n(&self) -> f64 {
        self.params.n
    }
    pub fn horizon(&self) -> f64 {
        self.params.horizon
    }
    pub fn r0(&self) -> f64 {
        self.params.r0
    }
    pub fn m0(&self) -> f64 {
        self.params.m0
    }
    pub fn v0(&self) -> f64 {
        self.params.v0
    }

    /// `kappa = alpha + beta1`, the growth rate of the population mean.
    pub fn kappa(&self) -> f64 {
        self.params.alpha + self.params.beta1
    }

    pub fn branch(&self) -> Branch {
        let (a, b1) = (self.params.alpha, self.params.beta1);
        if a.abs() <= BRANCH_EPS {
            if self.kappa().abs() <= BRANCH_EPS {
                Branch::NoDrift
            } else {
                Branch::AlphaZero
            }
        } else if (a - b1).abs() <= BRANCH_EPS {
            Branch::Resonant
        } else {
            Branch::Generic
        }
    }

    /// Uniform grid with [`DEFAULT_STEPS`] intervals on `[0, T]`.
    pub fn grid(&self) -> TimeGrid {
        TimeGrid::new(self.params.horizon, DEFAULT_STEPS)
    }

    /// Initial law `lambda_0`: Gaussian, or Dirac when `v0 = 0`.
    pub fn initial_law(&self) -> GaussianLaw {
        GaussianLaw::new(self.params.m0, self.params.v0)
    }
}

/// Penalties of the mean-variance principal.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskAversePenalties {
    #[serde(rename = "lambdaX")]
    pub lambda_x: f64,
    #[serde(rename = "lambdaXi")]
    pub lambda_xi: f64,
    #[serde(rename = "lambdaXXi")]
    pub lambda_x_xi: f64,
}

impl RiskAversePenalties {
    pub fn new(lambda_x: f64, lambda_xi: f64, lambda_x_xi: f64) -> Result<Self> {
        Self {
            lambda_x,
            lambda_xi,
            lambda_x_xi,
        }
        .validated()
    }

    pub fn validated(self) -> Result<Self> {
        for (name, v) in [
            ("lambdaX", self.lambda_x),
            ("lambdaXi", self.lambda_xi),
            ("lambdaXXi", self.lambda_x_xi),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(name, format!("{name} must be finite and nonnegative")));
            }
        }
        Ok(self)
    }

    pub fn is_zero(&self) -> bool {
        self.lambda_x == 0.0 && self.lambda_xi == 0.0 && self.lambda_x_xi == 0.0
    }
}

/// Uniform grid `0 = t_0 < ... < t_steps = T`.
///
/// A zero horizon yields the single point `t_0 = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Self {
        assert!(
            horizon >= 0.0 && horizon.is_finite(),
            "grid horizon must be finite and nonnegative"
        );
        let steps = if horizon == 0.0 { 0 } else { steps.max(1) };
        Self { horizon, steps }
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dt(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.horizon / self.steps as f64
        }
    }

    pub fn point(&self, k: usize) -> f64 {
        debug_assert!(k <= self.steps);
        if k == self.steps {
            self.horizon
        } else {
            self.horizon * (k as f64 / self.steps as f64)
        }
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.steps).map(move |k| self.point(k))
    }
}

/// A scalar function of time sampled on a grid, linearly interpolated.
#[derive(Debug, Clone, PartialEq)]
pub struct DeterministicCurve {
    grid: TimeGrid,
    values: Vec<f64>,
}

impl DeterministicCurve {
    pub fn new(grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Parse(format!(
                "curve has {} values for a grid of {} points",
                values.len(),
                grid.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Parse(format!("curve value at index {k} is not finite")));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: TimeGrid, f: impl Fn(f64) -> f64) -> Self {
        let values = grid.points().map(f).collect();
        Self { grid, values }
    }

    pub fn constant(grid: TimeGrid, v: f64) -> Self {
        Self {
            grid,
            values: vec![v; grid.len()],
        }
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Piecewise-linear evaluation; arguments outside `[0, T]` are clamped.
    pub fn eval(&self, t: f64) -> f64 {
        let steps = self.grid.steps();
        if steps == 0 || t <= 0.0 {
            return self.values[0];
        }
        if t >= self.grid.horizon() {
            return self.values[steps];
        }
        let s = t / self.grid.dt();
        let k = (s.floor() as usize).min(steps - 1);
        let w = s - k as f64;
        self.values[k] * (1.0 - w) + self.values[k + 1] * w
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn sup_distance(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Normal law `N(mean, variance)`; a zero variance is a Dirac mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianLaw {
    pub mean: f64,
    pub variance: f64,
}

impl GaussianLaw {
    pub fn new(mean: f64, variance: f64) -> Self {
        debug_assert!(variance >= 0.0);
        Self { mean, variance }
    }

    pub fn std_dev(&self) -> f64 {
        self.variance.max(0.0).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example() -> ModelParams {
        ModelParams {
            gamma: 0.0,
            ..ModelParams::baseline()
        }
    }

    #[test]
    fn accepts_the_reference_parameters() {
        let m = example().validate().unwrap();
        assert_eq!(m.params(), example());
    }

    #[test]
    fn rejects_alpha_at_one_half() {
        let err = ModelParams {
            alpha: 0.5,
            ..example()
        }
        .validate()
        .unwrap_err();
        assert!(err.to_string().contains("alpha must lie in [0, 0.5)"), "{err}");
    }

    #[test]
    fn rejects_unit_exponent() {
        let err = ModelParams { n: 1.0, ..example() }.validate().unwrap_err();
        assert!(err.to_string().contains("n must exceed 1"), "{err}");
    }

    #[test]
    fn rejects_negative_ranges() {
        for p in [
            ModelParams {
                beta1: -0.1,
                ..example()
            },
            ModelParams {
                gamma: -1.0,
                ..example()
            },
            ModelParams {
                sigma: 0.0,
                ..example()
            },
            ModelParams { c: 0.0, ..example() },
            ModelParams { v0: -1.0, ..example() },
            ModelParams {
                horizon: -1.0,
                ..example()
            },
            ModelParams {
                m0: f64::NAN,
                ..example()
            },
        ] {
            assert!(p.validate().is_err(), "{p:?}");
        }
    }

    #[test]
    fn kappa_and_branches() {
        let m = ModelParams {
            alpha: 0.0,
            beta1: 0.0,
            ..example()
        }
        .validate()
        .unwrap();
        assert_eq!(m.kappa(), 0.0);
        assert_eq!(m.branch(), Branch::NoDrift);

        let m = example().validate().unwrap();
        assert!((m.kappa() - 0.35).abs() < 1e-15);
        assert_eq!(m.branch(), Branch::Generic);

        let m = ModelParams {
            alpha: 0.25,
            beta1: 0.25,
            ..example()
        }
        .validate()
        .unwrap();
        assert_eq!(m.kappa(), 0.5);
        assert_eq!(m.branch(), Branch::Resonant);

        let m = ModelParams {
            alpha: 0.0,
            beta1: 0.3,
            ..example()
        }
        .validate()
        .unwrap();
        assert_eq!(m.branch(), Branch::AlphaZero);
    }

    #[test]
    fn config_documents_reject_unknown_keys() {
        let toml_doc = "alpha = 0.25\nbeta1 = 0.1\nbeta2 = 0.5\ngamma = 0.0\nsigma = 1.0\nc = 1.0\nn = 2.0\nT = 1.0\nR0 = 0.0\nm0 = 0.0\nv0 = 0.0\n";
        assert_eq!(ModelParams::from_toml_str(toml_doc).unwrap(), example());
        let with_extra = format!("{toml_doc}delta = 3.0\n");
        assert!(ModelParams::from_toml_str(&with_extra).is_err());

        let json = serde_json::to_string(&example()).unwrap();
        assert!(json.contains("\"T\"") && json.contains("\"R0\""));
        assert_eq!(ModelParams::from_json_str(&json).unwrap(), example());
        assert!(ModelParams::from_json_str(r#"{"alpha": 0.1}"#).is_err());
    }

    #[test]
    fn grid_spacing_and_endpoints() {
        let g = TimeGrid::new(1.0, 1000);
        assert_eq!(g.len(), 1001);
        assert_eq!(g.point(0), 0.0);
        assert_eq!(g.point(1000), 1.0);
        assert!((g.dt() * g.steps() as f64 - 1.0).abs() < 1e-15);
        let pts: Vec<f64> = g.points().collect();
        assert!(pts.windows(2).all(|w| w[1] > w[0]));

        let empty = TimeGrid::new(0.0, 1000);
        assert_eq!(empty.steps(), 0);
        assert_eq!(empty.len(), 1);
    }

    #[test]
    fn curve_interpolates_linearly_and_clamps() {
        let g = TimeGrid::new(2.0, 4);
        let curve = DeterministicCurve::from_fn(g, |t| 3.0 * t + 1.0);
        assert!((curve.eval(0.75) - 3.25).abs() < 1e-14);
        assert_eq!(curve.eval(-1.0), 1.0);
        assert_eq!(curve.eval(5.0), 7.0);
        assert!(DeterministicCurve::new(g, vec![0.0; 3]).is_err());
        assert!(DeterministicCurve::new(g, vec![0.0, 1.0, f64::INFINITY, 0.0, 0.0]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn raw() -> impl Strategy<Value = ModelParams> {
            (
                -0.2..0.7f64,
                -0.2..1.0f64,
                -0.2..1.0f64,
                -0.2..1.0f64,
                -0.5..2.0f64,
                -0.5..3.0f64,
                0.5..4.0f64,
                -0.5..3.0f64,
                -0.5..1.0f64,
            )
                .prop_map(|(alpha, beta1, beta2, gamma, sigma, c, n, horizon, v0)| ModelParams {
                    alpha,
                    beta1,
                    beta2,
                    gamma,
                    sigma,
                    c,
                    n,
                    horizon,
                    r0: 0.3,
                    m0: -0.2,
                    v0,
                })
        }

        proptest! {
            #[test]
            fn validation_is_idempotent_and_enforces_ranges(p in raw()) {
                if let Ok(m) = p.validate() {
                    let again = m.params().validate().unwrap();
                    prop_assert_eq!(again, m);
                    prop_assert!((0.0..0.5).contains(&m.alpha()));
                    prop_assert!(m.beta1() >= 0.0 && m.beta2() >= 0.0 && m.gamma() >= 0.0);
                    prop_assert!(m.sigma() > 0.0 && m.c() > 0.0 && m.n() > 1.0);
                    prop_assert!(m.horizon() >= 0.0 && m.v0() >= 0.0);
                    prop_assert!(m.kappa() >= 0.0);
                }
            }
        }
    }
}
