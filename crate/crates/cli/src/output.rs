//! Output files and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use chrono::{SecondsFormat, Utc};
use serde::Serialize;
use sha2::{Digest, Sha256};

use cfmdp::CacheStats;

use crate::context::Experiment;

/// Creates `dir` and tracks the files written into it.
pub struct OutDir {
    dir: PathBuf,
    files: Vec<OutputFile>,
}

#[derive(Debug, Clone, Serialize)]
pub struct OutputFile {
    pub file: String,
    pub bytes: usize,
    pub sha256: String,
}

impl OutDir {
    pub fn create(dir: &Path) -> anyhow::Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(OutDir { dir: dir.to_path_buf(), files: Vec::new() })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> anyhow::Result<PathBuf> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.files.push(OutputFile {
            file: name.to_string(),
            bytes: bytes.len(),
            sha256: hex::encode(Sha256::digest(bytes)),
        });
        Ok(path)
    }

    pub fn write_json(&mut self, name: &str, value: &impl Serialize) -> anyhow::Result<PathBuf> {
        let mut text = serde_json::to_vec_pretty(value)?;
        text.push(b'\n');
        self.write(name, &text)
    }

    pub fn write_csv<T: Serialize>(&mut self, name: &str, rows: impl IntoIterator<Item = T>) -> anyhow::Result<PathBuf> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in rows {
            w.serialize(row)?;
        }
        let bytes = w.into_inner().map_err(|e| anyhow::anyhow!("csv buffer: {e}"))?;
        self.write(name, &bytes)
    }

    /// Writes `manifest.json` listing every file written so far.
    pub fn finish(mut self, manifest: Manifest) -> anyhow::Result<()> {
        let manifest = Manifest { outputs: self.files.clone(), ..manifest };
        self.write_json("manifest.json", &manifest)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Inputs {
    pub env: Option<String>,
    pub mdp_file: Option<String>,
    pub mdp_hash: String,
    pub path_file: Option<String>,
    pub path_hash: String,
    pub posterior_file: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Seeds {
    pub path: Option<u64>,
    pub posterior: u64,
    pub rollout: Option<u64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CacheReport {
    pub posterior_builds: u32,
    pub kernel_hits: u64,
    pub kernel_misses: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub started_at: String,
    pub finished_at: String,
    pub inputs: Inputs,
    pub seeds: Seeds,
    pub settings: serde_json::Value,
    pub cache: CacheReport,
    pub outputs: Vec<OutputFile>,
}

pub fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

fn display(p: &Option<PathBuf>) -> Option<String> {
    p.as_ref().map(|p| p.display().to_string())
}

impl Manifest {
    pub fn new(
        command: &'static str,
        started_at: String,
        exp: &Experiment,
        stats: CacheStats,
        settings: serde_json::Value,
    ) -> Self {
        Manifest {
            tool: "cfmdp",
            version: env!("CARGO_PKG_VERSION"),
            command,
            started_at,
            finished_at: now(),
            inputs: Inputs {
                env: exp.model.env.as_ref().map(|(n, _)| n.clone()),
                mdp_file: display(&exp.model.mdp_file),
                mdp_hash: exp.posterior.key.mdp_hash.clone(),
                path_file: display(&exp.path_file),
                path_hash: exp.posterior.key.path_hash.clone(),
                posterior_file: display(&exp.posterior_file),
            },
            seeds: Seeds {
                path: exp.path_seed,
                posterior: exp.posterior.key.seed,
                rollout: None,
            },
            settings,
            cache: CacheReport {
                posterior_builds: exp.posterior_builds,
                kernel_hits: stats.hits,
                kernel_misses: stats.misses,
            },
            outputs: Vec::new(),
        }
    }
}
