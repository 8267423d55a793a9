//! Loading models, paths and posteriors from command-line flags.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use serde::de::DeserializeOwned;

use cfmdp::env::{observed_policy, EnvConfig};
use cfmdp::{
    build_posterior, sample_path, Error, GumbelPosterior, Mdp64, ObservedPath, PathDoc, Posterior64,
    PosteriorKey, PruneMode, Sampler,
};

/// Overrides applied on top of a built-in environment's defaults.
#[derive(Args, Debug, Clone, Default)]
pub struct EnvFlags {
    /// JSON file with the environment's config fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Grid World slip probability.
    #[arg(long)]
    pub slip: Option<f64>,
    /// Epidemic population size.
    #[arg(long)]
    pub population: Option<usize>,
    /// Epidemic initial infected count.
    #[arg(long)]
    pub initial_infected: Option<usize>,
    /// Horizon T of the observed path.
    #[arg(long)]
    pub horizon: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct SourceArgs {
    /// Built-in environment.
    #[arg(long, required_unless_present = "mdp", conflicts_with = "mdp")]
    pub env: Option<String>,
    /// MDP JSON file.
    #[arg(long)]
    pub mdp: Option<PathBuf>,
    #[command(flatten)]
    pub flags: EnvFlags,
}

#[derive(Args, Debug, Clone)]
pub struct PosteriorArgs {
    /// Observed path JSON. Defaults to the environment's canonical path.
    #[arg(long)]
    pub path: Option<PathBuf>,
    /// Seed of the canonical path, overriding the environment default.
    #[arg(long, conflicts_with = "path")]
    pub path_seed: Option<u64>,
    /// Posterior seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Posterior samples per time step.
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    #[arg(long, default_value_t = Sampler::TopDown)]
    pub sampler: Sampler,
    #[arg(long, default_value_t = PruneMode::Strict)]
    pub mode: PruneMode,
    /// Posterior artifact written by `cf-build`, reused instead of resampling.
    #[arg(long)]
    pub posterior: Option<PathBuf>,
}

/// Sorted, deduplicated list of counts given as `3`, `1..=8`, `1..8`
/// (exclusive), `2-5` or comma-separated mixes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Values(pub Vec<usize>);

impl std::str::FromStr for Values {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        parse_list(s).map(Values)
    }
}

fn parse_list(text: &str) -> Result<Vec<usize>, String> {
    let num = |s: &str| s.trim().parse::<usize>().map_err(|_| format!("`{s}` is not a count"));
    let mut out = Vec::new();
    for part in text.split(',') {
        if let Some((a, b)) = part.split_once("..=") {
            out.extend(num(a)?..=num(b)?);
        } else if let Some((a, b)) = part.split_once("..") {
            out.extend(num(a)?..num(b)?);
        } else if let Some((a, b)) = part.split_once('-') {
            out.extend(num(a)?..=num(b)?);
        } else {
            out.push(num(part)?);
        }
    }
    if out.is_empty() {
        return Err(format!("`{text}` selects no values"));
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let value = serde_json::from_reader(BufReader::new(file))
        .map_err(Error::Json)
        .with_context(|| format!("parsing {}", path.display()))?;
    Ok(value)
}

impl EnvFlags {
    pub fn resolve(&self, name: &str) -> anyhow::Result<EnvConfig> {
        let mut cfg = EnvConfig::by_name(name)?;
        if let Some(file) = &self.config {
            cfg = match cfg {
                EnvConfig::GridWorld(_) => EnvConfig::GridWorld(read_json(file)?),
                EnvConfig::Epidemic(_) => EnvConfig::Epidemic(read_json(file)?),
                EnvConfig::Sepsis(_) => EnvConfig::Sepsis(read_json(file)?),
            };
        }
        let misplaced = |flag: &str| Error::InvalidConfig(format!("--{flag} does not apply to {name}"));
        match &mut cfg {
            EnvConfig::GridWorld(c) => {
                if let Some(s) = self.slip {
                    c.slip = s;
                }
                if let Some(h) = self.horizon {
                    c.horizon = h;
                }
            }
            EnvConfig::Epidemic(c) => {
                if let Some(p) = self.population {
                    c.population = p;
                }
                if let Some(i) = self.initial_infected {
                    c.initial_infected = i;
                }
                if let Some(h) = self.horizon {
                    c.horizon = h;
                }
            }
            EnvConfig::Sepsis(c) => {
                if let Some(h) = self.horizon {
                    // The schedule repeats its last action when the horizon grows.
                    let last = c.observed_actions.last().copied().unwrap_or(0);
                    c.observed_actions.resize(h, last);
                    c.horizon = h;
                }
            }
        }
        if self.slip.is_some() && !matches!(cfg, EnvConfig::GridWorld(_)) {
            return Err(misplaced("slip").into());
        }
        if (self.population.is_some() || self.initial_infected.is_some())
            && !matches!(cfg, EnvConfig::Epidemic(_))
        {
            return Err(misplaced("population/--initial-infected").into());
        }
        Ok(cfg)
    }
}

/// An MDP together with the built-in configuration it came from, if any.
pub struct Model {
    pub mdp: Mdp64,
    pub env: Option<(String, EnvConfig)>,
    pub mdp_file: Option<PathBuf>,
}

impl SourceArgs {
    pub fn load(&self) -> anyhow::Result<Model> {
        if let Some(name) = &self.env {
            let cfg = self.flags.resolve(name)?;
            let mdp = cfg.build()?;
            return Ok(Model { mdp, env: Some((name.clone(), cfg)), mdp_file: None });
        }
        let file = self.mdp.as_ref().expect("clap requires --env or --mdp");
        let flags = &self.flags;
        if flags.config.is_some() || flags.slip.is_some() || flags.population.is_some() || flags.initial_infected.is_some() {
            return Err(Error::InvalidConfig("environment flags need --env".into()).into());
        }
        let text = std::fs::read_to_string(file).with_context(|| format!("reading {}", file.display()))?;
        let mdp = Mdp64::from_json(&text)?;
        Ok(Model { mdp, env: None, mdp_file: Some(file.clone()) })
    }
}

impl Model {
    /// Horizon from `--horizon` or the environment default.
    pub fn horizon(&self, flags: &EnvFlags) -> anyhow::Result<usize> {
        match (&self.env, flags.horizon) {
            (Some((_, cfg)), _) => Ok(cfg.horizon()),
            (None, Some(h)) => Ok(h),
            (None, None) => Err(Error::InvalidConfig("--horizon is required with --mdp".into()).into()),
        }
    }

    pub fn sample(&self, policy: Option<&str>, horizon: usize, seed: Option<u64>) -> anyhow::Result<(ObservedPath, u64)> {
        let preset = match (policy, &self.env) {
            (Some(p), _) => p,
            (None, Some((name, _))) => name.as_str(),
            (None, None) => return Err(Error::InvalidConfig("--policy is required with --mdp".into()).into()),
        };
        let pol = match &self.env {
            Some((name, cfg)) if name == preset => cfg.observed_policy(&self.mdp),
            _ => observed_policy(preset, &self.mdp)?,
        };
        let seed = seed.unwrap_or_else(|| self.env.as_ref().map_or(0, |(_, cfg)| cfg.default_seed()));
        Ok((sample_path(&self.mdp, &pol, horizon, seed)?, seed))
    }
}

/// Everything an experiment command needs, plus where it came from.
pub struct Experiment {
    pub model: Model,
    pub path: ObservedPath,
    pub path_file: Option<PathBuf>,
    pub path_seed: Option<u64>,
    pub posterior: Posterior64,
    pub posterior_file: Option<PathBuf>,
    pub posterior_builds: u32,
    pub mode: PruneMode,
}

impl Experiment {
    pub fn load(source: &SourceArgs, args: &PosteriorArgs) -> anyhow::Result<Self> {
        Self::load_with(source, args, None)
    }

    /// Like [`Experiment::load`], with posterior settings taken from `key` instead of the flags.
    pub fn load_with(source: &SourceArgs, args: &PosteriorArgs, key: Option<(usize, Sampler, u64)>) -> anyhow::Result<Self> {
        let model = source.load()?;
        let (path, path_seed) = match &args.path {
            Some(file) => {
                let doc: PathDoc = read_json(file)?;
                (ObservedPath::from_doc(&doc, &model.mdp)?, None)
            }
            None => {
                if model.env.is_none() {
                    return Err(Error::InvalidConfig("--path is required with --mdp".into()).into());
                }
                let h = model.horizon(&source.flags)?;
                let (p, seed) = model.sample(None, h, args.path_seed)?;
                (p, Some(seed))
            }
        };
        let (samples, sampler, seed) = key.unwrap_or((args.samples, args.sampler, args.seed));
        let expected = PosteriorKey {
            mdp_hash: model.mdp.content_hash(),
            path_hash: path.content_hash(),
            n_samples: samples,
            sampler,
            seed,
        };
        let (posterior, builds) = match &args.posterior {
            Some(file) => {
                let f = File::open(file).with_context(|| format!("opening {}", file.display()))?;
                (GumbelPosterior::read_from(BufReader::new(f), Some(&expected))?, 0)
            }
            None => (build_posterior(&model.mdp, &path, samples, sampler, seed)?, 1),
        };
        Ok(Experiment {
            model,
            path,
            path_file: args.path.clone(),
            path_seed,
            posterior,
            posterior_file: args.posterior.clone(),
            posterior_builds: builds,
            mode: args.mode,
        })
    }

    pub fn horizon(&self) -> usize {
        self.path.horizon()
    }

    pub fn check_k(&self, k: usize) -> anyhow::Result<()> {
        let t = self.horizon();
        if !(1..=t + 1).contains(&k) {
            return Err(Error::InvalidConfig(format!("k={k} outside 1..={}", t + 1)).into());
        }
        Ok(())
    }

    pub fn check_m(&self, m: usize) -> anyhow::Result<()> {
        let t = self.horizon();
        if m > t {
            return Err(Error::InvalidConfig(format!("m={m} outside 0..={t}")).into());
        }
        Ok(())
    }
}
