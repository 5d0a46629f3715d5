use std::fs;
use std::path::{Path, PathBuf};

use linser_core::geometry::{Descriptor, SpaceModel};
use linser_core::series::SeriesSpec;
use linser_core::weights::{Direction, Weight};
use serde::de::DeserializeOwned;
use serde::Deserialize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Kappa,
    Okounkov,
    Bergman,
    Envelope,
    Energy,
    Volratio,
    Derivative,
    Counterexample,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Kappa => "kappa",
            Command::Okounkov => "okounkov",
            Command::Bergman => "bergman",
            Command::Envelope => "envelope",
            Command::Energy => "energy",
            Command::Volratio => "volratio",
            Command::Derivative => "derivative",
            Command::Counterexample => "counterexample",
        }
    }
}

/// A spec given inline, by a short name, or as `{"file": path}`.
#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum SpecRef<T> {
    File { file: PathBuf },
    Named(String),
    Inline(T),
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub discrepancy: f64,
    pub envelope: f64,
    pub energy: f64,
    pub antisymmetry: f64,
    pub vol_relative: f64,
    pub kink_ratio: f64,
    pub smooth_ratio: f64,
    pub slope_relative: f64,
    pub amplitude: f64,
    pub rescue: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            discrepancy: 0.1,
            envelope: 0.08,
            energy: 0.05,
            antisymmetry: 1e-10,
            vol_relative: 0.05,
            kink_ratio: 0.5,
            smooth_ratio: 0.02,
            slope_relative: 0.05,
            amplitude: 0.15,
            rescue: 0.1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub start: f64,
    pub end: f64,
    pub n: usize,
}

impl GridSpec {
    pub fn points(&self) -> Vec<f64> {
        match self.n {
            0 => Vec::new(),
            1 => vec![self.start],
            n => (0..n).map(|i| self.start + (self.end - self.start) * i as f64 / (n - 1) as f64).collect(),
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub command: Command,
    #[serde(default)]
    pub series: Option<SpecRef<SeriesSpec>>,
    #[serde(default)]
    pub weight: Option<SpecRef<Weight>>,
    /// Second weight of a comparison.
    #[serde(default)]
    pub weight1: Option<SpecRef<Weight>>,
    #[serde(default)]
    pub direction: Option<SpecRef<Direction>>,
    /// The compact set `K`.
    #[serde(default)]
    pub set: Option<SpecRef<Descriptor>>,
    #[serde(default)]
    pub target: Option<SpecRef<Descriptor>>,
    #[serde(default)]
    pub k_max: Option<u32>,
    #[serde(default)]
    pub k_list: Option<Vec<u32>>,
    #[serde(default)]
    pub t_grid: Option<GridSpec>,
    #[serde(default)]
    pub annuli: Option<usize>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

pub fn load(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))
}

fn resolve<T: DeserializeOwned>(r: &SpecRef<T>, named: impl Fn(&str) -> Option<T>) -> Result<T, ConfigError>
where
    T: Clone,
{
    match r {
        SpecRef::Inline(v) => Ok(v.clone()),
        SpecRef::Named(name) => named(name).ok_or_else(|| ConfigError(format!("unknown name `{name}`"))),
        SpecRef::File { file } => {
            let text = fs::read_to_string(file).map_err(|e| ConfigError(format!("{}: {e}", file.display())))?;
            serde_json::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", file.display())))
        }
    }
}

pub fn series(r: &Option<SpecRef<SeriesSpec>>, default: SeriesSpec) -> Result<SeriesSpec, ConfigError> {
    r.as_ref().map_or(Ok(default), |r| {
        resolve(r, |n| match n {
            "full" => Some(SeriesSpec::full(1)),
            "even-degree" => Some(SeriesSpec::even_degree()),
            "simplex" => Some(SeriesSpec::simplex()),
            "product" => SeriesSpec::pullback(SeriesSpec::full(1), SpaceModel::product()).ok(),
            _ => None,
        })
    })
}

pub fn weight(r: &Option<SpecRef<Weight>>, default: Weight) -> Result<Weight, ConfigError> {
    r.as_ref().map_or(Ok(default), |r| {
        resolve(r, |n| match n {
            "paper-disk" => Some(Weight::PaperDisk),
            "fubini-study" => Some(Weight::fubini_study()),
            _ => None,
        })
    })
}

pub fn direction(r: &Option<SpecRef<Direction>>, default: Direction) -> Result<Direction, ConfigError> {
    r.as_ref().map_or(Ok(default), |r| {
        resolve(r, |n| match n {
            "inverse-fs" => Some(Direction::InverseFs),
            "oscillating" => Some(Direction::Oscillating { base: Box::new(Direction::Constant { value: 1.0 }) }),
            _ => None,
        })
    })
}

pub fn descriptor(r: &Option<SpecRef<Descriptor>>, default: Descriptor) -> Result<Descriptor, ConfigError> {
    r.as_ref().map_or(Ok(default), |r| {
        resolve(r, |n| match n {
            "unit-disk" => Some(Descriptor::Disk { radius: 1.0, n_r: 4, n_theta: 16 }),
            "unit-circle" => Some(Descriptor::Circle { radius: 1.0, n: 64 }),
            "sphere" => Some(Descriptor::Sphere { n_rings: 31, n_theta: 16 }),
            _ => None,
        })
    })
}
