//! Experiment configuration files.

use std::path::{Path, PathBuf};

use mfcl::mfg_sim::MeanFieldMode;
use mfcl::nplayer::NPlayerScheme;
use mfcl::{Error, Execution, ModelParams, Result, RiskAversePenalties};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelParams,
    #[serde(default)]
    pub penalties: Option<RiskAversePenalties>,
    #[serde(default)]
    pub sim: SimBlock,
    #[serde(default)]
    pub nplayer: Option<NPlayerBlock>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("mfcl-out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimBlock {
    pub particles: usize,
    pub steps: usize,
    pub seed: u64,
    pub mode: MeanFieldMode,
    pub execution: Execution,
    /// Random effort deviations tested against the optimum.
    pub perturbations: usize,
    /// Largest absolute size of a deviation.
    pub amplitude: f64,
    /// Sup-norm change that stops the particle fixed point.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SimBlock {
    fn default() -> Self {
        Self {
            particles: 100_000,
            steps: 100,
            seed: 42,
            mode: MeanFieldMode::Analytic,
            execution: Execution::Parallel,
            perturbations: 20,
            amplitude: 0.5,
            tolerance: 1e-3,
            max_iterations: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NPlayerBlock {
    pub ns: Vec<usize>,
    pub games: usize,
    pub steps: usize,
    pub seed: u64,
    pub scheme: NPlayerScheme,
}

impl Default for NPlayerBlock {
    fn default() -> Self {
        Self {
            ns: vec![4, 16, 64, 256],
            games: 10_000,
            steps: 100,
            seed: 42,
            scheme: NPlayerScheme::Exact,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Reads TOML, or JSON when the extension is `.json`.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Self::from_json_str(&text),
            _ => Self::from_toml_str(&text),
        }
    }

    /// Applies `--seed` to every block that has one.
    pub fn override_seed(&mut self, seed: u64) {
        self.sim.seed = seed;
        if let Some(np) = self.nplayer.as_mut() {
            np.seed = seed;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[model]
alpha = 0.25
beta1 = 0.1
beta2 = 0.5
gamma = 0.0
sigma = 1.0
c = 1.0
n = 2.0
T = 1.0
R0 = 0.0
m0 = 0.0
v0 = 0.0
"#;

    #[test]
    fn defaults_fill_missing_blocks() {
        let cfg = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(cfg.sim, SimBlock::default());
        assert!(cfg.penalties.is_none() && cfg.nplayer.is_none());
        assert_eq!(cfg.output_dir, PathBuf::from("mfcl-out"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("{MINIMAL}\n[sim]\nparticle = 3\n");
        assert!(ExperimentConfig::from_toml_str(&text).is_err());
        let text = MINIMAL.replace("v0 = 0.0", "v0 = 0.0\nkappa = 1.0");
        assert!(ExperimentConfig::from_toml_str(&text).is_err());
    }

    #[test]
    fn json_and_toml_agree() {
        let cfg = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_json_str(&json).unwrap(), cfg);
    }

    #[test]
    fn seed_override_reaches_every_block() {
        let mut cfg = ExperimentConfig::from_toml_str(&format!("{MINIMAL}\n[nplayer]\nns = [2]\n")).unwrap();
        cfg.override_seed(7);
        assert_eq!(cfg.sim.seed, 7);
        assert_eq!(cfg.nplayer.unwrap().seed, 7);
    }
}
