use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use prfl_core::bayopt::OptBudget;
use prfl_core::forward::ResponseMode;
use prfl_core::identify::NoiseSpec;
use prfl_core::scenario::{FleetSpec, PriceKind, PriceSpec};
use prfl_core::theta::{ParamBounds, ParamSelection};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Truth fleet as JSON. When absent the fleet is sampled from `fleet`.
    pub fleet_path: Option<PathBuf>,
    pub fleet: FleetSpec,
    pub prices: PriceSpec,
    pub out_dir: PathBuf,
    pub mode: ResponseMode,
    pub train_days: usize,
    pub test_days: usize,
    pub budget: OptBudget,
    pub noise: NoiseConfig,
    /// Parameter names to identify, e.g. `["p_hi", "sigma"]`. All by default.
    pub selection: Option<Vec<String>>,
    pub bounds: ParamBounds,
    pub seeds: Seeds,
    pub theorem1: Theorem1Config,
    pub bench: BenchConfig,
    pub slice: SliceConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            fleet_path: None,
            fleet: FleetSpec {
                n_storage: 1,
                n_generators: 0,
                n_interruptible: 0,
                ..FleetSpec::default()
            },
            prices: PriceSpec::default(),
            out_dir: PathBuf::from("out"),
            mode: ResponseMode::Static,
            train_days: 10,
            test_days: 5,
            budget: OptBudget::new(20, 60, 200, 64).expect("valid default budget"),
            noise: NoiseConfig::default(),
            selection: None,
            bounds: ParamBounds::default(),
            seeds: Seeds::default(),
            theorem1: Theorem1Config::default(),
            bench: BenchConfig::default(),
            slice: SliceConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    None,
    Iid,
    Proportional,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub kind: NoiseKind,
    pub var_agg: f64,
    pub var_fix: f64,
    pub factor: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            kind: NoiseKind::None,
            var_agg: 0.01,
            var_fix: 0.0025,
            factor: 0.005,
        }
    }
}

impl NoiseConfig {
    pub fn spec(&self, periods: usize) -> NoiseSpec {
        match self.kind {
            NoiseKind::None => NoiseSpec::zero(periods),
            NoiseKind::Iid => NoiseSpec::iid(periods, self.var_agg, self.var_fix),
            NoiseKind::Proportional => NoiseSpec::proportional(periods, self.factor),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub data: u64,
    pub opt: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self { data: 1, opt: 2 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Theorem1Config {
    pub counts: Vec<usize>,
    pub trials: usize,
    pub var_agg: f64,
    pub var_fix: f64,
}

impl Default for Theorem1Config {
    fn default() -> Self {
        Self {
            counts: vec![10, 100, 1000],
            trials: 50,
            var_agg: 0.01,
            var_fix: 0.0025,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub sizes: Vec<usize>,
    pub repeats: usize,
    pub dim: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            sizes: vec![100, 200, 400, 600, 800, 1000],
            repeats: 5,
            dim: 6,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SliceConfig {
    pub resolution: usize,
    /// Coordinate pairs to slice. Every pair of the first storage's
    /// parameters when absent.
    pub pairs: Option<Vec<(usize, usize)>>,
}

impl Default for SliceConfig {
    fn default() -> Self {
        Self {
            resolution: 25,
            pairs: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: RunConfig = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        Ok(cfg)
    }

    /// Checks that input paths exist and the numeric settings are usable.
    pub fn check(&self) -> Result<()> {
        if let Some(p) = &self.fleet_path {
            if !p.exists() {
                bail!("fleet file {} does not exist", p.display());
            }
        }
        if self.prices.kind == PriceKind::Csv {
            match &self.prices.path {
                Some(p) if p.exists() => {}
                Some(p) => bail!("price file {} does not exist", p.display()),
                None => bail!("prices.kind = \"csv\" needs prices.path"),
            }
        }
        if self.train_days == 0 {
            bail!("train_days must be at least 1");
        }
        self.budget.validate()?;
        if self.slice.resolution < 2 {
            bail!("slice.resolution must be at least 2");
        }
        Ok(())
    }

    pub fn selection(&self) -> Result<ParamSelection> {
        Ok(match &self.selection {
            Some(names) => ParamSelection::from_names(names)?,
            None => ParamSelection::full(),
        })
    }
}
