//! Counterfactual inference on finite-horizon MDPs.
//!
//! Transitions are modelled as a Gumbel-max structural causal model. Given an
//! observed path, posterior noise samples define a time-layered counterfactual
//! MDP. That MDP is pruned to nodes that stay k-step influenced by the
//! observation, and a budgeted dynamic program finds the best policy that
//! changes at most `m` observed actions.
//!
//! All numeric containers are generic over [`Scalar`] (`f64` or `f32`); the
//! `*64` aliases are what the CLI uses.

pub mod cf;
pub mod env;
pub mod error;
pub mod gumbel;
pub mod influence;
pub mod mdp;
pub mod rng;
pub mod scalar;
pub mod solver;

pub use cf::{build_cf_mdp, cf_transition, CacheStats, CfKernelEstimate, CfMdp, LayeredKernel, NominalUnrolling};
pub use error::{Error, Result};
pub use gumbel::{
    build_posterior, gumbel_max_step, posterior_sample_rejection, posterior_sample_topdown,
    GumbelPosterior, GumbelVector, PosteriorKey, Sampler,
};
pub use influence::{
    influenced_states, one_step_influenced, prune_cf_mdp, pruned_size_report, reachback,
    InfluenceSets, PruneMode, PrunedCfMdp, Pruner, SizeReport,
};
pub use mdp::{path_return, sample_path, validate_mdp, Dist, Mdp, MdpDoc, ObservedPath, PathDoc, Policy, ValidationReport};
pub use scalar::Scalar;
pub use solver::{rollout, rollout_trajectories, solve_km, sweep, CfPolicy, RolloutSummary, SweepCell, SweepResult};

pub type Mdp64 = Mdp<f64>;
pub type Mdp32 = Mdp<f32>;
pub type Posterior64 = GumbelPosterior<f64>;
pub type Posterior32 = GumbelPosterior<f32>;
pub type CfMdp64<'a> = CfMdp<'a, f64>;
pub type PrunedCfMdp64 = PrunedCfMdp<f64>;
pub type CfPolicy64 = CfPolicy<f64>;
