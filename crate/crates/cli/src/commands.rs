//! One function per subcommand. Each writes its artefacts into the output
//! directory and a `run_meta.json` with the volatile run information.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use mfcl::closed_form::{
    contract_spec, initial_value, moment_curves_on, moment_curves_rk4, optimal_policy_on, printed_contract_law,
    realized_value, risk_averse_solution, variance_at, ContractSpec, MomentCurves, PolicyPair,
};
use mfcl::export::{contract_json, json_f64, json_object, to_json, write_json, write_moments_csv, write_policy_csv};
use mfcl::hjb_check::{verification_report, VerificationOptions};
use mfcl::mfg_sim::{
    agent_utility, fixed_point_meanfield, perturbed_effort, principal_objective, simulate_continuation_utility,
    simulate_equilibrium, FixedPointConfig, MeanFieldMode, SimConfig,
};
use mfcl::nplayer::{convergence_experiment, NPlayerConfig};
use mfcl::quad::integrate;
use mfcl::sensitivity::sensitivity_table;
use mfcl::stats::{ks_normal, summarize};
use mfcl::{MeanFieldModel, Result, RiskAversePenalties, TimeGrid};
use serde_json::Value;

use crate::config::ExperimentConfig;
use crate::Outcome;

/// Standard errors allowed between a simulated utility and its target.
const SE_BAND: f64 = 4.0;

pub struct Run {
    name: &'static str,
    config_path: PathBuf,
    cfg: ExperimentConfig,
    model: MeanFieldModel,
    penalties: RiskAversePenalties,
    out: PathBuf,
    perturb: f64,
}

impl Run {
    pub fn prepare(
        name: &'static str,
        config: &Path,
        seed: Option<u64>,
        out: Option<&Path>,
        perturb: f64,
    ) -> Result<Self> {
        let mut cfg = ExperimentConfig::from_path(config)?;
        if let Some(seed) = seed {
            cfg.override_seed(seed);
        }
        let model = cfg.model.validate()?;
        let penalties = cfg.penalties.unwrap_or_default().validated()?;
        let out = out.map(Path::to_path_buf).unwrap_or_else(|| cfg.output_dir.clone());
        std::fs::create_dir_all(&out)?;
        Ok(Self {
            name,
            config_path: config.to_path_buf(),
            cfg,
            model,
            penalties,
            out,
            perturb,
        })
    }

    pub fn execute(self) -> Result<Outcome> {
        let outcome = match self.name {
            "solve" => self.solve()?,
            "simulate" => self.simulate()?,
            "nplayer" => self.nplayer()?,
            "sensitivity" => self.sensitivity()?,
            _ => self.hjb()?,
        };
        self.write_meta(&outcome)?;
        Ok(outcome)
    }

    fn path(&self, file: &str) -> PathBuf {
        self.out.join(file)
    }

    fn sim_grid(&self) -> TimeGrid {
        TimeGrid::new(self.model.horizon(), self.cfg.sim.steps)
    }

    /// Policy, moments and contract on `grid`, risk-neutral unless penalties are set.
    fn solution(&self, grid: TimeGrid) -> Result<(PolicyPair, MomentCurves, ContractSpec)> {
        if self.penalties.is_zero() {
            let policy = optimal_policy_on(&self.model, grid);
            return Ok((policy, moment_curves_on(&self.model, grid), contract_spec(&self.model)));
        }
        let (policy, spec) = risk_averse_solution(&self.model, &self.penalties)?;
        let moments = moment_curves_rk4(&self.model, grid, |t| policy.a_star.eval(t));
        Ok((policy, moments, spec))
    }

    fn solve(&self) -> Result<Outcome> {
        let (policy, moments, spec) = self.solution(self.model.grid())?;
        write_policy_csv(&self.path("policy.csv"), &policy)?;
        write_moments_csv(&self.path("moments.csv"), &moments)?;
        write_json(&self.path("contract.json"), &contract_json(&spec))?;
        write_json(&self.path("value.json"), &self.value_json(&moments, &spec))?;
        Ok(Outcome::Success)
    }

    fn value_json(&self, moments: &MomentCurves, spec: &ContractSpec) -> Value {
        let m = &self.model;
        let horizon = m.horizon();
        if self.penalties.is_zero() {
            let printed = printed_contract_law(m);
            return json_object([
                ("value", json_f64(initial_value(m))),
                ("realized_value", json_f64(realized_value(m))),
                ("printed_contract_mean", json_f64(printed.mean)),
                ("printed_contract_variance", json_f64(printed.variance)),
                ("printed_delta", spec.printed_delta.map_or(Value::Null, json_f64)),
            ]);
        }
        // The random parts of X_T and xi are sigma ∫ e^{alpha (T-s)} dW and
        // sigma ∫ z* dW, plus e^{alpha T} (X_0 - m0) for X_T.
        let s2 = m.sigma().powi(2);
        let var_x = variance_at(m, horizon);
        let var_xi = spec.law.variance;
        let cov = s2
            * integrate(
                |s| (m.alpha() * (horizon - s)).exp() * spec.z_star.eval(s),
                0.0,
                horizon,
                1e-12,
            );
        let gain = moments.mean_at(horizon) - spec.law.mean;
        let p = &self.penalties;
        let value = gain - p.lambda_x * var_x - p.lambda_xi * var_xi - p.lambda_x_xi * (var_x + var_xi - 2.0 * cov);
        json_object([
            ("value", json_f64(value)),
            ("expected_gain", json_f64(gain)),
            ("terminal_variance", json_f64(var_x)),
            ("contract_variance", json_f64(var_xi)),
            ("covariance", json_f64(cov)),
        ])
    }

    fn simulate(&self) -> Result<Outcome> {
        let block = &self.cfg.sim;
        let grid = self.sim_grid();
        let sim = SimConfig::new(block.particles, grid, block.seed)?
            .with_mode(block.mode)
            .with_execution(block.execution);
        let (policy, analytic, spec) = self.solution(grid)?;
        let (moments, fixed_point) = match block.mode {
            MeanFieldMode::Analytic => (analytic, Value::Null),
            MeanFieldMode::Particle => {
                let fp_cfg = FixedPointConfig {
                    tolerance: block.tolerance,
                    max_iterations: block.max_iterations,
                    ..FixedPointConfig::default()
                };
                let fp = fixed_point_meanfield(&self.model, &policy, &sim, &fp_cfg)?;
                let info = json_object([
                    ("iterations", Value::from(fp.iterations)),
                    ("residual", json_f64(fp.residual)),
                ]);
                (fp.moments, info)
            }
        };
        let ensemble = simulate_equilibrium(&self.model, &policy, &moments, &sim);
        let (ensemble, xi) = simulate_continuation_utility(&ensemble, &self.model, &policy)?;
        let objective = principal_objective(&ensemble, &xi, block.seed, Some(&self.penalties));

        let r0 = self.model.r0();
        let at_optimum = agent_utility(&self.model, &policy, &moments, &spec, &policy.a_star, &sim);
        let mut deviations = Vec::with_capacity(block.perturbations);
        let mut all_dominated = true;
        for i in 0..block.perturbations {
            let effort = perturbed_effort(&policy.a_star, block.amplitude, block.seed, i as u64);
            let est = agent_utility(&self.model, &policy, &moments, &spec, &effort, &sim);
            let dominated = est.value <= at_optimum.value + SE_BAND * est.standard_error.max(at_optimum.standard_error);
            all_dominated &= dominated;
            deviations.push(json_object([
                ("index", Value::from(i)),
                ("estimate", to_json(&est)?),
                ("dominated", Value::from(dominated)),
            ]));
        }

        let estimates = json_object([
            ("agent_utility", to_json(&at_optimum)?),
            ("reservation_utility", json_f64(r0)),
            ("participation_z_score", json_f64(at_optimum.z_score(r0))),
            ("deviations", Value::Array(deviations)),
            ("all_deviations_dominated", Value::from(all_dominated)),
            ("principal_objective", to_json(&objective)?),
            ("fixed_point", fixed_point),
        ]);
        write_json(&self.path("estimates.json"), &estimates)?;

        let summary = summarize(&xi);
        let ks = ks_normal(&xi, spec.law.mean, spec.law.std_dev());
        let gaussian = json_object([
            ("samples", Value::from(summary.count)),
            ("mean", json_f64(summary.mean)),
            ("se_mean", json_f64(summary.se_mean)),
            ("variance", json_f64(summary.variance)),
            ("se_variance", json_f64(summary.se_variance)),
            ("skewness", json_f64(summary.skewness)),
            ("se_skewness", json_f64(summary.se_skewness)),
            ("excess_kurtosis", json_f64(summary.excess_kurtosis)),
            ("se_kurtosis", json_f64(summary.se_kurtosis)),
            ("law_mean", json_f64(spec.law.mean)),
            ("law_variance", json_f64(spec.law.variance)),
            ("ks_statistic", json_f64(ks.statistic)),
            ("ks_p_value", json_f64(ks.p_value)),
        ]);
        write_json(&self.path("gaussian_check.json"), &gaussian)?;
        Ok(Outcome::Success)
    }

    fn nplayer(&self) -> Result<Outcome> {
        let block = self.cfg.nplayer.clone().unwrap_or_default();
        let grid = TimeGrid::new(self.model.horizon(), block.steps);
        let cfg = NPlayerConfig::new(1, block.games, grid, block.seed)?
            .with_scheme(block.scheme)
            .with_execution(self.cfg.sim.execution);
        let report = convergence_experiment(&self.model, &block.ns, &cfg)?;
        report.write_csv(&self.path("convergence.csv"))?;
        write_json(&self.path("convergence.json"), &to_json(&report)?)?;
        Ok(Outcome::Success)
    }

    fn sensitivity(&self) -> Result<Outcome> {
        let table = sensitivity_table(&self.model, &self.penalties)?;
        table.write_csv(&self.path("sensitivity.csv"))?;
        for c in table.mismatches() {
            eprintln!(
                "mfcl: sign mismatch for {} vs {}: computed {} (derivative {:e}), expected {}",
                c.quantity.label(),
                c.parameter.label(),
                c.computed.symbol(),
                c.derivative,
                c.expected.symbol()
            );
        }
        Ok(Outcome::Success)
    }

    fn hjb(&self) -> Result<Outcome> {
        let opts = VerificationOptions {
            perturb: self.perturb,
            particles: self.cfg.sim.particles,
            steps: self.cfg.sim.steps,
            seed: self.cfg.sim.seed,
        };
        let report = verification_report(&self.model, &opts)?;
        report.residual.write_csv(&self.path("residuals.csv"))?;
        write_json(&self.path("verification_report.json"), &to_json(&report)?)?;
        Ok(if report.passed {
            Outcome::Success
        } else {
            Outcome::VerificationFailed
        })
    }

    fn write_meta(&self, outcome: &Outcome) -> Result<()> {
        let timestamp = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        let meta = json_object([
            ("command", Value::from(self.name)),
            ("version", Value::from(env!("CARGO_PKG_VERSION"))),
            ("timestamp", Value::from(timestamp)),
            ("config", Value::from(self.config_path.display().to_string())),
            ("parallel", Value::from(mfcl::Execution::parallel_available())),
            ("success", Value::from(matches!(outcome, Outcome::Success))),
        ]);
        write_json(&self.path("run_meta.json"), &meta)
    }
}
