//! Built-in environments and the observed policies that generate their paths.

pub mod epidemic;
pub mod gridworld;
pub mod sepsis;
pub mod toy;

use crate::error::{Error, Result};
use crate::mdp::{sample_path, Mdp, ObservedPath, Policy};
use crate::scalar::Scalar;

pub use epidemic::{build_epidemic, EpidemicConfig, EPIDEMIC_SEED};
pub use gridworld::{build_gridworld, GridWorldConfig, GRIDWORLD_SEED};
pub use sepsis::{build_sepsis_lite, SepsisLiteConfig, SepsisPreset};
pub use toy::build_toy;

/// Environment selector used by the CLI and the experiment helpers.
#[derive(Debug, Clone, PartialEq)]
pub enum EnvConfig {
    GridWorld(GridWorldConfig),
    Epidemic(EpidemicConfig),
    Sepsis(SepsisLiteConfig),
}

impl EnvConfig {
    /// Default configuration for `name` (`gridworld`, `epidemic`,
    /// `sepsis-catastrophic` or `sepsis-suboptimal`; `sepsis` means the former).
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "gridworld" => Ok(EnvConfig::GridWorld(GridWorldConfig::default())),
            "epidemic" => Ok(EnvConfig::Epidemic(EpidemicConfig::default())),
            "sepsis" | "sepsis-catastrophic" => Ok(EnvConfig::Sepsis(SepsisLiteConfig::preset(
                SepsisPreset::Catastrophic,
            ))),
            "sepsis-suboptimal" => Ok(EnvConfig::Sepsis(SepsisLiteConfig::preset(
                SepsisPreset::Suboptimal,
            ))),
            other => Err(Error::UnknownEnvironment(other.to_string())),
        }
    }

    pub fn horizon(&self) -> usize {
        match self {
            EnvConfig::GridWorld(c) => c.horizon,
            EnvConfig::Epidemic(c) => c.horizon,
            EnvConfig::Sepsis(c) => c.horizon,
        }
    }

    /// Seed of the canonical observed path.
    pub fn default_seed(&self) -> u64 {
        match self {
            EnvConfig::GridWorld(_) => GRIDWORLD_SEED,
            EnvConfig::Epidemic(_) => EPIDEMIC_SEED,
            EnvConfig::Sepsis(c) => c.seed,
        }
    }

    /// State-label key plotted by rollouts.
    pub fn feature(&self) -> &'static str {
        match self {
            EnvConfig::GridWorld(_) => "r",
            EnvConfig::Epidemic(_) => "I",
            EnvConfig::Sepsis(_) => "hr",
        }
    }

    pub fn build<F: Scalar>(&self) -> Result<Mdp<F>> {
        match self {
            EnvConfig::GridWorld(c) => build_gridworld(c),
            EnvConfig::Epidemic(c) => build_epidemic(c),
            EnvConfig::Sepsis(c) => build_sepsis_lite(c),
        }
    }

    pub fn observed_policy<F: Scalar>(&self, mdp: &Mdp<F>) -> Policy {
        match self {
            EnvConfig::GridWorld(c) => gridworld::gridworld_policy(c),
            EnvConfig::Epidemic(_) => epidemic::epidemic_policy(mdp),
            EnvConfig::Sepsis(c) => sepsis::sepsis_policy(c),
        }
    }

    /// Builds the MDP and samples its observed path with the canonical seed.
    pub fn instance<F: Scalar>(&self) -> Result<(Mdp<F>, ObservedPath)> {
        let mdp = self.build()?;
        let policy = self.observed_policy(&mdp);
        let path = sample_path(&mdp, &policy, self.horizon(), self.default_seed())?;
        Ok((mdp, path))
    }
}

/// Observed (deliberately sub-optimal) policy of a built-in environment.
pub fn observed_policy<F: Scalar>(name: &str, mdp: &Mdp<F>) -> Result<Policy> {
    Ok(EnvConfig::by_name(name)?.observed_policy(mdp))
}
