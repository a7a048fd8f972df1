//! Signs of the comparative statics of the closed-form solution.
//!
//! Every cell is a central difference (one-sided at a zero boundary) of one
//! quantity with respect to one parameter, classified as increasing, flat or
//! decreasing and compared with the expected direction.

use std::path::Path;

use serde::Serialize;

use crate::closed_form::{a_star_at, contract_spec, initial_value, risk_averse_solution};
use crate::error::Result;
use crate::model::{MeanFieldModel, ModelParams, RiskAversePenalties};

/// Relative step of the central differences.
pub const REL_STEP: f64 = 1e-3;
/// Derivatives below this multiple of `1 + |quantity|` count as flat.
pub const FLAT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    ContractMean,
    ContractVariance,
    FixedSalary,
    Effort,
    PrincipalGain,
}

impl Quantity {
    pub fn label(self) -> &'static str {
        match self {
            Quantity::ContractMean => "contract_mean",
            Quantity::ContractVariance => "contract_variance",
            Quantity::FixedSalary => "fixed_salary",
            Quantity::Effort => "effort",
            Quantity::PrincipalGain => "principal_gain",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Parameter {
    C,
    Alpha,
    Beta1,
    Beta2,
    Gamma,
    /// `beta1 / (alpha + beta1)` with `alpha + beta1` held fixed.
    BoosterShare,
    /// `beta2 / (1 + beta2)` with the total effort loading held fixed.
    EffortShare,
    LambdaX,
    LambdaXi,
    LambdaXXi,
}

impl Parameter {
    pub fn label(self) -> &'static str {
        match self {
            Parameter::C => "c",
            Parameter::Alpha => "alpha",
            Parameter::Beta1 => "beta1",
            Parameter::Beta2 => "beta2",
            Parameter::Gamma => "gamma",
            Parameter::BoosterShare => "beta1/(alpha+beta1)",
            Parameter::EffortShare => "beta2/(1+beta2)",
            Parameter::LambdaX => "lambdaX",
            Parameter::LambdaXi => "lambdaXi",
            Parameter::LambdaXXi => "lambdaXXi",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Sign {
    #[serde(rename = "-")]
    Down,
    #[serde(rename = "0")]
    Flat,
    #[serde(rename = "+")]
    Up,
}

impl Sign {
    pub fn symbol(self) -> &'static str {
        match self {
            Sign::Down => "-",
            Sign::Flat => "0",
            Sign::Up => "+",
        }
    }

    pub fn classify(derivative: f64, scale: f64) -> Self {
        if derivative.abs() <= FLAT_TOL * (1.0 + scale.abs()) {
            Sign::Flat
        } else if derivative > 0.0 {
            Sign::Up
        } else {
            Sign::Down
        }
    }
}

/// Which baseline a cell is evaluated at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    /// The supplied model as is.
    Full,
    /// `alpha`, `beta1`, `beta2`, `gamma` set to zero except the one varied.
    OthersZero,
}

/// Whether a cell belongs to the required comparison or is reported only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Required,
    Informative,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SensitivityCell {
    pub quantity: Quantity,
    pub parameter: Parameter,
    pub baseline: Baseline,
    pub scope: Scope,
    pub value: f64,
    pub derivative: f64,
    pub computed: Sign,
    pub expected: Sign,
    pub matches: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensitivityTable {
    pub cells: Vec<SensitivityCell>,
}

impl SensitivityTable {
    /// Required cells whose sign differs from the expected one.
    pub fn required_mismatches(&self) -> Vec<&SensitivityCell> {
        self.cells
            .iter()
            .filter(|c| c.scope == Scope::Required && !c.matches)
            .collect()
    }

    pub fn mismatches(&self) -> Vec<&SensitivityCell> {
        self.cells.iter().filter(|c| !c.matches).collect()
    }

    /// Writes one row per cell:
    /// `quantity,parameter,baseline,scope,value,derivative,computed,expected,match`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        use std::io::Write;
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(
            w,
            "quantity,parameter,baseline,scope,value,derivative,computed,expected,match"
        )?;
        for c in &self.cells {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                c.quantity.label(),
                c.parameter.label(),
                match c.baseline {
                    Baseline::Full => "full",
                    Baseline::OthersZero => "others_zero",
                },
                match c.scope {
                    Scope::Required => "required",
                    Scope::Informative => "informative",
                },
                crate::export::fmt_f64(c.value),
                crate::export::fmt_f64(c.derivative),
                c.computed.symbol(),
                c.expected.symbol(),
                c.matches
            )?;
        }
        w.flush()?;
        Ok(())
    }
}

fn evaluate(model: &MeanFieldModel, pen: &RiskAversePenalties, q: Quantity) -> Result<f64> {
    if pen.is_zero() {
        let spec = contract_spec(model);
        return Ok(match q {
            Quantity::ContractMean => spec.law.mean,
            Quantity::ContractVariance => spec.law.variance,
            Quantity::FixedSalary => spec.delta,
            Quantity::Effort => a_star_at(model, 0.0),
            Quantity::PrincipalGain => initial_value(model),
        });
    }
    let (policy, spec) = risk_averse_solution(model, pen)?;
    Ok(match q {
        Quantity::ContractMean => spec.law.mean,
        Quantity::ContractVariance => spec.law.variance,
        Quantity::FixedSalary => spec.delta,
        Quantity::Effort => policy.a_star.values()[0],
        Quantity::PrincipalGain => f64::NAN,
    })
}

/// Sets `param` to `v`, starting from the parameters `anchor`.
fn apply(p: &mut ModelParams, pen: &mut RiskAversePenalties, param: Parameter, v: f64, anchor: &ModelParams) {
    let (kappa, loading) = (anchor.alpha + anchor.beta1, 1.0 + anchor.beta2);
    match param {
        Parameter::C => p.c = v,
        Parameter::Alpha => p.alpha = v,
        Parameter::Beta1 => p.beta1 = v,
        Parameter::Beta2 => p.beta2 = v,
        Parameter::Gamma => p.gamma = v,
        Parameter::BoosterShare => {
            p.beta1 = kappa * v;
            p.alpha = kappa - p.beta1;
        }
        Parameter::EffortShare => {
            // b = loading ((1 - v) a + v E[a]): rescale effort so that its own
            // coefficient stays one, which moves the cost scale.
            p.beta2 = v / (1.0 - v);
            p.c = anchor.c / (loading * (1.0 - v)).powf(anchor.n);
        }
        Parameter::LambdaX => pen.lambda_x = v,
        Parameter::LambdaXi => pen.lambda_xi = v,
        Parameter::LambdaXXi => pen.lambda_x_xi = v,
    }
}

fn current(p: &ModelParams, pen: &RiskAversePenalties, param: Parameter) -> f64 {
    match param {
        Parameter::C => p.c,
        Parameter::Alpha => p.alpha,
        Parameter::Beta1 => p.beta1,
        Parameter::Beta2 => p.beta2,
        Parameter::Gamma => p.gamma,
        Parameter::BoosterShare => p.beta1 / (p.alpha + p.beta1),
        Parameter::EffortShare => p.beta2 / (1.0 + p.beta2),
        Parameter::LambdaX => pen.lambda_x,
        Parameter::LambdaXi => pen.lambda_xi,
        Parameter::LambdaXXi => pen.lambda_x_xi,
    }
}

/// Finite-difference sign of `q` with respect to `param` at `base`.
pub fn cell(
    base: &ModelParams,
    pen: &RiskAversePenalties,
    q: Quantity,
    param: Parameter,
    baseline: Baseline,
    expected: Sign,
    scope: Scope,
) -> Result<SensitivityCell> {
    let mut p0 = *base;
    if baseline == Baseline::OthersZero {
        if param != Parameter::Alpha {
            p0.alpha = 0.0;
        }
        if param != Parameter::Beta1 {
            p0.beta1 = 0.0;
        }
        if param != Parameter::Beta2 {
            p0.beta2 = 0.0;
        }
        if param != Parameter::Gamma {
            p0.gamma = 0.0;
        }
    }
    let x0 = current(&p0, pen, param);
    let h = REL_STEP * x0.abs().max(1e-2);
    let at = |v: f64| -> Result<f64> {
        let mut p = p0;
        let mut l = *pen;
        apply(&mut p, &mut l, param, v, &p0);
        evaluate(&MeanFieldModel::new(p)?, &l.validated()?, q)
    };
    let value = at(x0)?;
    // Every parameter but `c` is nonnegative: at the boundary use the
    // second-order one-sided stencil.
    let derivative = if x0 - h < 0.0 {
        (4.0 * at(x0 + h)? - at(x0 + 2.0 * h)? - 3.0 * value) / (2.0 * h)
    } else {
        (at(x0 + h)? - at(x0 - h)?) / (2.0 * h)
    };
    let computed = Sign::classify(derivative, value);
    Ok(SensitivityCell {
        quantity: q,
        parameter: param,
        baseline,
        scope,
        value,
        derivative,
        computed,
        expected,
        matches: computed == expected,
    })
}

/// The expected directions, row by row.
fn expected_rows() -> Vec<(Quantity, [Sign; 7])> {
    use Sign::*;
    vec![
        (Quantity::ContractMean, [Down, Up, Up, Up, Flat, Flat, Flat]),
        (Quantity::ContractVariance, [Flat, Up, Up, Up, Flat, Flat, Flat]),
        (Quantity::FixedSalary, [Down, Down, Down, Down, Up, Down, Flat]),
        (Quantity::Effort, [Down, Up, Up, Up, Flat, Flat, Flat]),
        (Quantity::PrincipalGain, [Down, Up, Up, Up, Down, Up, Flat]),
    ]
}

const COLUMNS: [Parameter; 7] = [
    Parameter::C,
    Parameter::Alpha,
    Parameter::Beta1,
    Parameter::Beta2,
    Parameter::Gamma,
    Parameter::BoosterShare,
    Parameter::EffortShare,
];

/// Full table for the risk-neutral model at `base` plus the penalty
/// columns of the risk-averse model at `base` with `penalties`.
///
/// Required cells: contract mean, contract variance, effort and principal
/// gain against `c, alpha, beta1, beta2, gamma`, all at `base`. The
/// fixed-salary row is evaluated with the other couplings set to zero.
/// Everything outside the required block is informative.
pub fn sensitivity_table(base: &MeanFieldModel, penalties: &RiskAversePenalties) -> Result<SensitivityTable> {
    let p = base.params();
    let none = RiskAversePenalties::default();
    let mut cells = Vec::new();
    for (q, signs) in expected_rows() {
        for (&param, &expected) in COLUMNS.iter().zip(&signs) {
            let share = matches!(param, Parameter::BoosterShare | Parameter::EffortShare);
            let baseline = if share || q != Quantity::FixedSalary {
                Baseline::Full
            } else {
                Baseline::OthersZero
            };
            let required = !share && q != Quantity::FixedSalary;
            let scope = if required { Scope::Required } else { Scope::Informative };
            cells.push(cell(&p, &none, q, param, baseline, expected, scope)?);
        }
    }
    use Sign::*;
    for (q, signs) in [
        (Quantity::Effort, [Flat, Down, Down]),
        (Quantity::ContractMean, [Flat, Down, Down]),
        (Quantity::ContractVariance, [Flat, Down, Down]),
    ] {
        for (param, expected) in [Parameter::LambdaX, Parameter::LambdaXi, Parameter::LambdaXXi]
            .into_iter()
            .zip(signs)
        {
            cells.push(cell(
                &p,
                penalties,
                q,
                param,
                Baseline::Full,
                expected,
                Scope::Informative,
            )?);
        }
    }
    Ok(SensitivityTable { cells })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classify_thresholds() {
        assert_eq!(Sign::classify(1e-9, 1.0), Sign::Flat);
        assert_eq!(Sign::classify(1e-3, 1.0), Sign::Up);
        assert_eq!(Sign::classify(-1e-3, 1.0), Sign::Down);
    }

    #[test]
    fn baseline_cells_from_the_examples() {
        let base = ModelParams::baseline();
        let none = RiskAversePenalties::default();
        let mean_c = cell(
            &base,
            &none,
            Quantity::ContractMean,
            Parameter::C,
            Baseline::Full,
            Sign::Down,
            Scope::Required,
        )
        .unwrap();
        assert!(mean_c.matches);
        let var_c = cell(
            &base,
            &none,
            Quantity::ContractVariance,
            Parameter::C,
            Baseline::Full,
            Sign::Flat,
            Scope::Required,
        )
        .unwrap();
        assert_eq!(var_c.computed, Sign::Flat);
        let mean_g = cell(
            &base,
            &none,
            Quantity::ContractMean,
            Parameter::Gamma,
            Baseline::Full,
            Sign::Flat,
            Scope::Required,
        )
        .unwrap();
        assert_eq!(mean_g.computed, Sign::Flat);
        let gain_g = cell(
            &base,
            &none,
            Quantity::PrincipalGain,
            Parameter::Gamma,
            Baseline::Full,
            Sign::Down,
            Scope::Required,
        )
        .unwrap();
        assert!(gain_g.derivative < 0.0);
    }

    #[test]
    fn required_block_matches_at_baseline() {
        let base = MeanFieldModel::new(ModelParams::baseline()).unwrap();
        let pen = RiskAversePenalties::new(0.1, 0.1, 0.1).unwrap();
        let table = sensitivity_table(&base, &pen).unwrap();
        assert_eq!(table.cells.iter().filter(|c| c.scope == Scope::Required).count(), 20);
        assert!(
            table.required_mismatches().is_empty(),
            "{:?}",
            table.required_mismatches()
        );
    }

    #[test]
    fn zero_penalties_use_a_one_sided_stencil() {
        let base = MeanFieldModel::new(ModelParams::baseline()).unwrap();
        let table = sensitivity_table(&base, &RiskAversePenalties::default()).unwrap();
        let xi = table
            .cells
            .iter()
            .find(|c| c.quantity == Quantity::Effort && c.parameter == Parameter::LambdaXi)
            .unwrap();
        assert_eq!(xi.computed, Sign::Down);
    }

    #[test]
    fn booster_share_keeps_kappa() {
        let base = ModelParams::baseline();
        let none = RiskAversePenalties::default();
        let eff = cell(
            &base,
            &none,
            Quantity::Effort,
            Parameter::BoosterShare,
            Baseline::Full,
            Sign::Flat,
            Scope::Informative,
        )
        .unwrap();
        assert_eq!(eff.computed, Sign::Flat);
    }
}
