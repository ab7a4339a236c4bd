//! Experiment configuration files (TOML).

use std::path::Path;

use mixlyap::potential::{PotentialProcess, ProcessKind};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    LyapunovScan,
    BandCenterScaling,
    BandEdgeScaling,
    NearEdgeScaling,
    DensityCompare,
    SpectralDensity,
    Moments,
    NormGrowth,
}

impl Experiment {
    pub fn file_stem(&self) -> &'static str {
        match self {
            Experiment::LyapunovScan => "lyapunov_scan",
            Experiment::BandCenterScaling => "band_center_scaling",
            Experiment::BandEdgeScaling => "band_edge_scaling",
            Experiment::NearEdgeScaling => "near_edge_scaling",
            Experiment::DensityCompare => "density_compare",
            Experiment::SpectralDensity => "spectral_density",
            Experiment::Moments => "moments",
            Experiment::NormGrowth => "norm_growth",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessBlock {
    #[serde(flatten)]
    pub kind: ProcessKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensitySetting {
    BandCenter,
    BandEdge,
}

/// Numeric parameters; which ones are required depends on the experiment.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Parameters {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambdas: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub energies: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replicas: Option<usize>,
    /// Spectral densities `D(0)`, `D(π)`; taken from the process when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_pi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub setting: Option<DensitySetting>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bins: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub orbit_steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub orbit_lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wavenumbers: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segment_len: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segments: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub moment: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_max_factor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lengths: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_hat: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub seed: u64,
    /// CSV file name inside the output directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    pub process: ProcessBlock,
    #[serde(default)]
    pub parameters: Parameters,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

fn need<'a, T>(v: &'a Option<T>, name: &str, exp: Experiment) -> Result<&'a T, ConfigError> {
    v.as_ref()
        .ok_or_else(|| invalid(format!("parameters.{name} is required for {}", exp.file_stem())))
}

fn nonempty<'a, T>(v: &'a Option<Vec<T>>, name: &str, exp: Experiment) -> Result<&'a [T], ConfigError> {
    let xs = need(v, name, exp)?;
    if xs.is_empty() {
        return Err(invalid(format!("parameters.{name} must not be empty")));
    }
    Ok(xs)
}

fn positive(xs: &[f64], name: &str) -> Result<(), ConfigError> {
    match xs.iter().find(|x| !(**x > 0.0 && x.is_finite())) {
        Some(x) => Err(invalid(format!("parameters.{name} must be positive, found {x}"))),
        None => Ok(()),
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    /// SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn process(&self) -> PotentialProcess {
        let p = PotentialProcess::new(self.process.kind.clone(), self.seed);
        match self.process.burn_in {
            Some(b) => p.with_burn_in(b),
            None => p,
        }
    }

    pub fn output_name(&self) -> String {
        self.output
            .clone()
            .unwrap_or_else(|| format!("{}.csv", self.experiment.file_stem()))
    }

    pub fn steps(&self) -> u64 {
        self.parameters.steps.unwrap_or(1_000_000)
    }

    pub fn replicas(&self) -> usize {
        self.parameters.replicas.unwrap_or(8)
    }

    /// Checks every parameter the experiment will use.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.process().validate().map_err(|e| invalid(e.to_string()))?;
        if let Some(name) = &self.output {
            if name.is_empty() || name.contains('/') || name.contains('\\') {
                return Err(invalid("output must be a plain file name"));
            }
        }
        let p = &self.parameters;
        let exp = self.experiment;
        if p.steps.is_some_and(|s| s < 10_000) {
            return Err(invalid("parameters.steps must be at least 10000"));
        }
        if p.replicas == Some(0) {
            return Err(invalid("parameters.replicas must be positive"));
        }
        match exp {
            Experiment::LyapunovScan => {
                positive(nonempty(&p.lambdas, "lambdas", exp)?, "lambdas")?;
                nonempty(&p.energies, "energies", exp)?;
            }
            Experiment::BandCenterScaling | Experiment::BandEdgeScaling => {
                positive(nonempty(&p.lambdas, "lambdas", exp)?, "lambdas")?;
            }
            Experiment::NearEdgeScaling => {
                positive(nonempty(&p.lambdas, "lambdas", exp)?, "lambdas")?;
                let eps = *need(&p.epsilon, "epsilon", exp)?;
                if !(eps > 0.0) {
                    return Err(invalid("parameters.epsilon must be positive for near_edge_scaling"));
                }
                let eta = *need(&p.eta, "eta", exp)?;
                if !(eta > 0.0) {
                    return Err(invalid("parameters.eta must be positive"));
                }
            }
            Experiment::DensityCompare => {
                need(&p.setting, "setting", exp)?;
                if p.grid.is_some_and(|g| g < 256) {
                    return Err(invalid("parameters.grid must be at least 256"));
                }
                if p.bins == Some(0) {
                    return Err(invalid("parameters.bins must be positive"));
                }
                if p.orbit_steps.is_some_and(|n| n > 0) {
                    positive(&[*need(&p.orbit_lambda, "orbit_lambda", exp)?], "orbit_lambda")?;
                }
            }
            Experiment::SpectralDensity => {
                nonempty(&p.wavenumbers, "wavenumbers", exp)?;
                if p.segment_len.is_some_and(|n| n < 1000) {
                    return Err(invalid("parameters.segment_len must be at least 1000"));
                }
                if p.segments.is_some_and(|n| n < 8) {
                    return Err(invalid("parameters.segments must be at least 8"));
                }
            }
            Experiment::Moments => {
                let lambdas = nonempty(&p.lambdas, "lambdas", exp)?;
                if lambdas.iter().any(|l| !(*l >= 0.0)) {
                    return Err(invalid("parameters.lambdas must be nonnegative"));
                }
                positive(nonempty(&p.times, "times", exp)?, "times")?;
                let size = *need(&p.size, "size", exp)?;
                if size < 3 || size % 2 == 0 {
                    return Err(invalid("parameters.size must be odd and at least 3"));
                }
                if let Some(q) = p.moment {
                    positive(&[q], "moment")?;
                }
                if let Some(f) = p.t_max_factor {
                    positive(&[f], "t_max_factor")?;
                }
            }
            Experiment::NormGrowth => {
                positive(nonempty(&p.lambdas, "lambdas", exp)?, "lambdas")?;
                nonempty(&p.energies, "energies", exp)?;
                let ls = nonempty(&p.lengths, "lengths", exp)?;
                if ls.contains(&0) {
                    return Err(invalid("parameters.lengths must be positive"));
                }
                if p.samples == Some(0) {
                    return Err(invalid("parameters.samples must be positive"));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCAN: &str = r#"
experiment = "lyapunov_scan"
seed = 7

[process]
kind = "iid"
distribution = "bernoulli"
amplitude = 1.0

[parameters]
lambdas = [0.05]
energies = [-1.5, -1.0, 1.0]
steps = 100000
"#;

    #[test]
    fn parses_and_round_trips() {
        let cfg = ExperimentConfig::parse(SCAN).unwrap();
        assert_eq!(cfg.experiment, Experiment::LyapunovScan);
        assert_eq!(cfg.seed, 7);
        let again = ExperimentConfig::parse(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.hash(), again.hash());
        assert_eq!(cfg.hash().len(), 64);
    }

    #[test]
    fn markov_process_block() {
        let text = r#"
experiment = "spectral_density"
seed = 1
[process]
kind = "markov_chain"
transition = [[0.7, 0.3], [0.3, 0.7]]
values = [1.0, -1.0]
burn_in = 100
[parameters]
wavenumbers = [0.0, 1.0]
"#;
        let cfg = ExperimentConfig::parse(text).unwrap();
        assert_eq!(cfg.process.burn_in, Some(100));
        assert_eq!(ExperimentConfig::parse(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn rejects_empty_energy_list() {
        let text = SCAN.replace("energies = [-1.5, -1.0, 1.0]", "energies = []");
        assert!(matches!(ExperimentConfig::parse(&text), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        let text = SCAN.replace("steps = 100000", "stepz = 100000");
        assert!(matches!(ExperimentConfig::parse(&text), Err(ConfigError::Parse(_))));
        let text = SCAN.replace("lambdas = [0.05]", "lambdas = [-0.05]");
        assert!(matches!(ExperimentConfig::parse(&text), Err(ConfigError::Invalid(_))));
        let text = SCAN.replace("amplitude = 1.0", "amplitude = -1.0");
        assert!(ExperimentConfig::parse(&text).is_err());
    }

    #[test]
    fn shipped_configs_are_valid() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
        let mut seen = 0;
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.extension().is_some_and(|e| e == "toml") {
                let cfg = ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
                assert_eq!(ExperimentConfig::parse(&cfg.to_toml()).unwrap(), cfg);
                seen += 1;
            }
        }
        assert_eq!(seen, 8);
    }
}
