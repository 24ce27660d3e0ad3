//! Experiment configuration: one TOML file per scenario, unknown keys rejected.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::boundary::{JetOptions, LinearizationOptions, Perturbation};
use crate::decomp::SolverOptions;
use crate::error::{Error, Result};
use crate::gauge::{ChartOptions, GaugeOptions};
use crate::geodesic::ShootingOptions;
use crate::inversion::{ClosedLoopOptions, HolderOptions, StabilityOptions};
use crate::metric::{MetricSpec, Profile, TensorTerm};
use crate::simplicity::SimplicityOptions;
use crate::synth::{airy_solenoidal, random_one_form, random_tensor, sym_diff_rule};
use crate::tensorfield::{Grid, Support, SymTensorField};
use crate::xray::{KernelOptions, XrayOptions};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub metric: MetricSpec,
    /// Reference metric `g₀` for jet recovery; Euclidean when absent.
    #[serde(default)]
    pub reference: Option<MetricSpec>,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub inflow: InflowConfig,
    #[serde(default)]
    pub xray: XrayOptions,
    #[serde(default)]
    pub field: Option<FieldConfig>,
    #[serde(default)]
    pub simplicity: SimplicityOptions,
    #[serde(default)]
    pub distance_table: DistanceConfig,
    #[serde(default)]
    pub normal_op: NormalOpConfig,
    #[serde(default)]
    pub decompose: SolverOptions,
    #[serde(default)]
    pub gauge: GaugeConfig,
    #[serde(default)]
    pub jets: JetOptions,
    #[serde(default)]
    pub linearize: LinearizeConfig,
    #[serde(default)]
    pub invert: InvertConfig,
    #[serde(default)]
    pub stability: StabilityOptions,
    #[serde(default)]
    pub holder: HolderOptions,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub n: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { n: 64 }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InflowConfig {
    pub z_count: usize,
    pub w_count: usize,
}

impl Default for InflowConfig {
    fn default() -> Self {
        InflowConfig {
            z_count: 64,
            w_count: 32,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldSource {
    /// Random smooth tensor field.
    Random,
    /// Euclidean divergence-free field from a random stress function.
    Solenoidal,
    /// `dv` of a random smooth 1-form vanishing near `∂Ω`.
    Potential,
    /// Field file in CSV or binary form.
    File,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldConfig {
    pub source: FieldSource,
    #[serde(default)]
    pub path: Option<PathBuf>,
    /// Defaults to the scenario seed.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_cutoff")]
    pub cutoff: f64,
    #[serde(default = "default_max_freq")]
    pub max_freq: usize,
}

fn default_cutoff() -> f64 {
    0.9
}

fn default_max_freq() -> usize {
    2
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistanceConfig {
    pub points: usize,
    pub shooting: ShootingOptions,
}

impl Default for DistanceConfig {
    fn default() -> Self {
        DistanceConfig {
            points: 32,
            shooting: ShootingOptions::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    Composed,
    Kernel,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NormalOpConfig {
    pub route: Route,
    /// Support of the output field for the composed route.
    pub support: Support,
    pub kernel: KernelOptions,
    /// The kernel route evaluates every `stride`-th node along each axis.
    pub stride: usize,
}

impl Default for NormalOpConfig {
    fn default() -> Self {
        NormalOpConfig {
            route: Route::Composed,
            support: Support::Inner,
            kernel: KernelOptions::default(),
            stride: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GaugeMode {
    Boundary,
    Global,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaugeConfig {
    pub mode: GaugeMode,
    pub boundary: GaugeOptions,
    pub semigeodesic: ChartOptions,
}

impl Default for GaugeConfig {
    fn default() -> Self {
        GaugeConfig {
            mode: GaugeMode::Boundary,
            boundary: GaugeOptions::default(),
            semigeodesic: ChartOptions::semigeodesic(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinearizeConfig {
    /// Perturbation `f = g̃ − g`, scaled by each amplitude.
    pub perturbation: Vec<TensorTerm>,
    pub amplitudes: Vec<f64>,
    pub z_count: usize,
    pub w_count: usize,
    pub options: LinearizationOptions,
}

impl Default for LinearizeConfig {
    fn default() -> Self {
        LinearizeConfig {
            perturbation: vec![TensorTerm::Profiled {
                amplitude: 1.0,
                center: [0.1, -0.2],
                profile: Profile::Bump { radius: 0.6 },
                matrix: [[1.0, 0.3], [0.3, 0.5]],
            }],
            amplitudes: vec![0.01, 0.02, 0.04, 0.08],
            z_count: 16,
            w_count: 8,
            options: LinearizationOptions::default(),
        }
    }
}

impl LinearizeConfig {
    pub fn perturbation(&self) -> Perturbation {
        Perturbation {
            terms: self.perturbation.clone(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InvertConfig {
    pub closed_loop: ClosedLoopOptions,
    /// Relative regularization weights for an L-curve sweep; empty keeps
    /// `closed_loop.inversion.regularization`.
    pub l_curve: Vec<f64>,
}

impl Default for InvertConfig {
    fn default() -> Self {
        InvertConfig {
            closed_loop: ClosedLoopOptions::default(),
            l_curve: Vec::new(),
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<ExperimentConfig> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.grid.n, self.metric.domain)
    }

    pub fn reference_metric(&self) -> MetricSpec {
        self.reference
            .clone()
            .unwrap_or_else(|| MetricSpec::euclidean().with_domain(self.metric.domain))
    }

    /// The tensor field named by `[field]`; `base` resolves relative file paths.
    pub fn field(&self, base: &Path) -> Result<SymTensorField> {
        let fc = self
            .field
            .as_ref()
            .ok_or_else(|| Error::Config("missing key `field` (the input tensor field)".into()))?;
        let grid = self.grid()?;
        let seed = fc.seed.unwrap_or(self.seed);
        Ok(match fc.source {
            FieldSource::Random => {
                random_tensor(grid, Support::Inner, seed, fc.cutoff, fc.max_freq)
            }
            FieldSource::Solenoidal => airy_solenoidal(grid, seed, fc.cutoff, fc.max_freq),
            FieldSource::Potential => {
                let v = random_one_form(grid, Support::Inner, seed, fc.cutoff, fc.max_freq);
                let rule = v
                    .rule()
                    .cloned()
                    .expect("random 1-forms carry a closed form");
                SymTensorField::from_rule(grid, Support::Inner, sym_diff_rule(&self.metric, rule))
            }
            FieldSource::File => {
                let rel = fc.path.as_ref().ok_or_else(|| {
                    Error::Config("missing key `field.path` for a field read from file".into())
                })?;
                let path = base.join(rel);
                let file = File::open(&path).map_err(|e| {
                    Error::Config(format!("cannot open field file {}: {e}", path.display()))
                })?;
                let f = if path.extension().is_some_and(|e| e == "csv") {
                    SymTensorField::read_csv(BufReader::new(file))?
                } else {
                    SymTensorField::read_binary(BufReader::new(file))?
                };
                grid.ensure_same(&f.grid)?;
                f
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_uses_defaults() {
        let c = ExperimentConfig::parse("scenario = \"t\"\n").unwrap();
        assert_eq!(c.grid.n, 64);
        assert!(c.field.is_none());
        assert_eq!(c.normal_op.route, Route::Composed);
    }

    #[test]
    fn unknown_keys_are_rejected_with_line_numbers() {
        let text = "scenario = \"t\"\n\n[grid]\nn = 32\nsize = 4\n";
        let e = ExperimentConfig::parse(text).unwrap_err().to_string();
        assert!(e.contains("line 5"), "{e}");
        assert!(e.contains("size"), "{e}");
    }

    #[test]
    fn syntax_errors_carry_line_numbers() {
        let e = ExperimentConfig::parse("scenario = \"t\"\nseed = = 3\n")
            .unwrap_err()
            .to_string();
        assert!(e.contains("line 2"), "{e}");
    }

    #[test]
    fn resolved_config_round_trips() {
        let text = r#"
scenario = "conformal"
seed = 4

[[metric.conformal]]
amplitude = 0.1
center = [0.3, 0.1]
profile = { kind = "gaussian", sharpness = 1.0 }

[field]
source = "random"
"#;
        let c = ExperimentConfig::parse(text).unwrap();
        let again = ExperimentConfig::parse(&c.to_toml().unwrap()).unwrap();
        assert_eq!(again.metric, c.metric);
        assert_eq!(again.to_toml().unwrap(), c.to_toml().unwrap());
    }

    #[test]
    fn missing_field_names_the_key() {
        let c = ExperimentConfig::parse("scenario = \"t\"\n").unwrap();
        let e = c.field(Path::new(".")).unwrap_err().to_string();
        assert!(e.contains("`field`"), "{e}");
    }
}
