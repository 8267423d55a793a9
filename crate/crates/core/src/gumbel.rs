//! Gumbel-max structural causal model and posterior noise inference.
//!
//! The mechanism picks the next state as the argmax of `ln P(s'|s,a) + G_{s'}`
//! over the support of the row. Given an observed transition, the posterior of
//! the noise vector is sampled either by rejection or top-down: the maximum is
//! drawn first and placed at the observed successor, the rest of the support
//! gets Gumbels truncated below it, and states outside the support keep their
//! prior.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{Mdp, ObservedPath, Row};
use crate::rng::{standard_gumbel, stream_rng, Stream};
use crate::scalar::Scalar;

/// Upper bound on rejection attempts for one accepted sample.
pub const REJECTION_CAP: u64 = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampler {
    TopDown,
    Rejection,
}

impl fmt::Display for Sampler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sampler::TopDown => "topdown",
            Sampler::Rejection => "rejection",
        })
    }
}

impl FromStr for Sampler {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "topdown" => Ok(Sampler::TopDown),
            "rejection" => Ok(Sampler::Rejection),
            other => Err(Error::InvalidConfig(format!("unknown sampler `{other}`"))),
        }
    }
}

/// One noise value per state at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct GumbelVector<F> {
    pub t: usize,
    pub values: Vec<F>,
}

/// Argmax of `ln p + g` over the row's support; ties go to the lowest index.
#[inline]
pub fn argmax_row<F: Scalar>(row: &Row<F>, g: &[F]) -> usize {
    let mut best = row.dist.next[0];
    let mut best_score = row.ln_prob[0] + g[best];
    for (&s, &lp) in row.dist.next.iter().zip(&row.ln_prob).skip(1) {
        let score = lp + g[s];
        if score > best_score {
            best = s;
            best_score = score;
        }
    }
    best
}

/// The Gumbel-max mechanism for a single transition.
pub fn gumbel_max_step<F: Scalar>(mdp: &Mdp<F>, s: usize, a: usize, g: &[F]) -> Result<usize> {
    Ok(argmax_row(mdp.require_row(s, a)?, g))
}

fn observed_row<'m, F: Scalar>(
    mdp: &'m Mdp<F>,
    s: usize,
    a: usize,
    s_next: usize,
) -> Result<&'m Row<F>> {
    let row = mdp.require_row(s, a)?;
    if !row.dist.contains(s_next) {
        return Err(Error::ZeroProbabilityObservation {
            state: mdp.state_name(s).to_string(),
            action: mdp.action_name(a).to_string(),
            next: mdp.state_name(s_next).to_string(),
        });
    }
    Ok(row)
}

fn fill_prior<F: Scalar>(out: &mut [F], rng: &mut impl Rng) {
    for v in out.iter_mut() {
        *v = F::lit(standard_gumbel(rng));
    }
}

/// Standard Gumbel conditioned to lie below `bound`.
///
/// Uses `-ln(e^-b + e^-G)` rearranged so neither exponential overflows.
#[inline]
pub fn truncated_gumbel(bound: f64, rng: &mut impl Rng) -> f64 {
    let g = standard_gumbel(rng);
    let d = bound - g;
    if d > 0.0 {
        g - (-d).exp().ln_1p()
    } else {
        bound - d.exp().ln_1p()
    }
}

/// Rejection sample into `out`; returns the number of attempts used.
fn rejection_one<F: Scalar>(
    row: &Row<F>,
    s_next: usize,
    out: &mut [F],
    rng: &mut impl Rng,
) -> Result<u64> {
    for attempt in 1..=REJECTION_CAP {
        // Support values decide acceptance; the rest are independent of it
        // and are drawn once after acceptance.
        for &s in &row.dist.next {
            out[s] = F::lit(standard_gumbel(rng));
        }
        if argmax_row(row, out) == s_next {
            for s in 0..out.len() {
                if !row.dist.contains(s) {
                    out[s] = F::lit(standard_gumbel(rng));
                }
            }
            return Ok(attempt);
        }
    }
    Err(Error::RejectionBudgetExhausted {
        attempts: REJECTION_CAP,
    })
}

fn topdown_one<F: Scalar>(row: &Row<F>, s_next: usize, out: &mut [F], rng: &mut impl Rng) {
    let ln_z = row
        .dist
        .prob
        .iter()
        .map(|p| p.as_f64())
        .sum::<f64>()
        .ln();
    let top = ln_z + standard_gumbel(rng);
    let mut k = 0;
    for s in 0..out.len() {
        if k < row.dist.next.len() && row.dist.next[k] == s {
            let lp = row.ln_prob[k].as_f64();
            out[s] = if s == s_next {
                F::lit(top - lp)
            } else {
                F::lit(truncated_gumbel(top - lp, rng))
            };
            k += 1;
        } else {
            out[s] = F::lit(standard_gumbel(rng));
        }
    }
    enforce_replay(row, s_next, out);
}

/// Nudges competitors down until the observed successor wins the argmax.
/// Only rounding can make this necessary; each nudge is one ulp.
fn enforce_replay<F: Scalar>(row: &Row<F>, s_next: usize, g: &mut [F]) {
    let x = row.dist.next.binary_search(&s_next).unwrap();
    let target = row.ln_prob[x] + g[s_next];
    for (k, &s) in row.dist.next.iter().enumerate() {
        if s == s_next {
            continue;
        }
        let lp = row.ln_prob[k];
        while lp + g[s] > target || (lp + g[s] == target && s < s_next) {
            g[s] = g[s].next_below();
        }
    }
    debug_assert_eq!(argmax_row(row, g), s_next);
}

/// `n` noise vectors stored row-major, plus the rejection attempt count.
#[derive(Debug, Clone)]
pub struct NoiseSamples<F> {
    pub n_states: usize,
    pub values: Vec<F>,
    pub attempts: u64,
}

impl<F: Scalar> NoiseSamples<F> {
    pub fn len(&self) -> usize {
        self.values.len() / self.n_states.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, i: usize) -> &[F] {
        &self.values[i * self.n_states..(i + 1) * self.n_states]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[F]> {
        self.values.chunks(self.n_states)
    }
}

fn draw_set<F: Scalar>(
    n_states: usize,
    n: usize,
    seed: u64,
    t: usize,
    f: impl Fn(&mut [F], &mut rand_chacha::ChaCha8Rng) -> Result<u64> + Sync,
) -> Result<NoiseSamples<F>> {
    let mut values = vec![F::zero(); n * n_states];
    let attempts = values
        .par_chunks_mut(n_states.max(1))
        .enumerate()
        .map(|(i, out)| {
            let mut rng = stream_rng(seed, Stream::Posterior, t as u64, i as u64);
            f(out, &mut rng)
        })
        .collect::<Result<Vec<u64>>>()?
        .into_iter()
        .sum();
    Ok(NoiseSamples {
        n_states,
        values,
        attempts,
    })
}

/// Prior noise: i.i.d. standard Gumbels for every state.
pub fn prior_samples<F: Scalar>(n_states: usize, n: usize, seed: u64) -> NoiseSamples<F> {
    draw_set(n_states, n, seed, 0, |out, rng| {
        fill_prior(out, rng);
        Ok(0)
    })
    .expect("prior sampling cannot fail")
}

/// Posterior noise samples by rejection: draw from the prior, keep replays.
pub fn posterior_sample_rejection<F: Scalar>(
    mdp: &Mdp<F>,
    s: usize,
    a: usize,
    s_next: usize,
    n: usize,
    seed: u64,
) -> Result<NoiseSamples<F>> {
    let row = observed_row(mdp, s, a, s_next)?;
    draw_set(mdp.n_states(), n, seed, 0, |out, rng| {
        rejection_one(row, s_next, out, rng)
    })
}

/// Exact posterior noise samples by top-down construction.
pub fn posterior_sample_topdown<F: Scalar>(
    mdp: &Mdp<F>,
    s: usize,
    a: usize,
    s_next: usize,
    n: usize,
    seed: u64,
) -> Result<NoiseSamples<F>> {
    let row = observed_row(mdp, s, a, s_next)?;
    draw_set(mdp.n_states(), n, seed, 0, |out, rng| {
        topdown_one(row, s_next, out, rng);
        Ok(1)
    })
}

/// Identifies a posterior so cached artifacts are reused only for the same inputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PosteriorKey {
    pub mdp_hash: String,
    pub path_hash: String,
    pub n_samples: usize,
    pub sampler: Sampler,
    pub seed: u64,
}

/// Per-time posterior noise samples for an observed path.
#[derive(Debug, Clone)]
pub struct GumbelPosterior<F> {
    pub key: PosteriorKey,
    pub n_states: usize,
    /// Whether step `t` was conditioned on an observed successor.
    pub conditioned: Vec<bool>,
    pub layers: Vec<NoiseSamples<F>>,
}

impl<F: Scalar> GumbelPosterior<F> {
    pub fn horizon(&self) -> usize {
        self.layers.len()
    }

    pub fn n_samples(&self) -> usize {
        self.key.n_samples
    }

    pub fn sample(&self, t: usize, i: usize) -> &[F] {
        self.layers[t].get(i)
    }

    pub fn vector(&self, t: usize, i: usize) -> GumbelVector<F> {
        GumbelVector {
            t,
            values: self.sample(t, i).to_vec(),
        }
    }

    /// Writes the binary artifact: magic, header length, JSON header, f64 LE values.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let header = serde_json::to_vec(&ArtifactHeader {
            key: self.key.clone(),
            n_states: self.n_states,
            conditioned: self.conditioned.clone(),
        })?;
        w.write_all(MAGIC)?;
        w.write_all(&(header.len() as u32).to_le_bytes())?;
        w.write_all(&header)?;
        let mut buf = Vec::with_capacity(1 << 16);
        for layer in &self.layers {
            for v in &layer.values {
                buf.extend_from_slice(&v.as_f64().to_le_bytes());
                if buf.len() >= 1 << 16 {
                    w.write_all(&buf)?;
                    buf.clear();
                }
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    /// Reads an artifact, checking it against `expected` when given.
    pub fn read_from(mut r: impl Read, expected: Option<&PosteriorKey>) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::ArtifactMismatch("not a posterior artifact".into()));
        }
        let mut len = [0u8; 4];
        r.read_exact(&mut len)?;
        let mut header = vec![0u8; u32::from_le_bytes(len) as usize];
        r.read_exact(&mut header)?;
        let header: ArtifactHeader = serde_json::from_slice(&header)?;
        if let Some(k) = expected {
            if *k != header.key {
                return Err(Error::ArtifactMismatch(format!(
                    "artifact key {:?} does not match {:?}",
                    header.key, k
                )));
            }
        }
        let per_layer = header.key.n_samples * header.n_states;
        let mut bytes = vec![0u8; per_layer * 8];
        let mut layers = Vec::with_capacity(header.conditioned.len());
        for _ in 0..header.conditioned.len() {
            r.read_exact(&mut bytes)?;
            let values = bytes
                .chunks_exact(8)
                .map(|c| F::lit(f64::from_le_bytes(c.try_into().unwrap())))
                .collect();
            layers.push(NoiseSamples {
                n_states: header.n_states,
                values,
                attempts: 0,
            });
        }
        Ok(GumbelPosterior {
            key: header.key,
            n_states: header.n_states,
            conditioned: header.conditioned,
            layers,
        })
    }
}

const MAGIC: &[u8; 8] = b"CFPOST1\n";

#[derive(Serialize, Deserialize)]
struct ArtifactHeader {
    key: PosteriorKey,
    n_states: usize,
    conditioned: Vec<bool>,
}

/// Posterior noise for every step of `path`.
///
/// Step `t` conditions on `(s_t, a_t, s_{t+1})`. When the final successor is
/// not recorded, the last step keeps prior noise.
pub fn build_posterior<F: Scalar>(
    mdp: &Mdp<F>,
    path: &ObservedPath,
    n: usize,
    sampler: Sampler,
    seed: u64,
) -> Result<GumbelPosterior<F>> {
    if n == 0 {
        return Err(Error::InvalidConfig("posterior sample count must be >= 1".into()));
    }
    path.validate(mdp)?;
    let ns = mdp.n_states();
    let mut layers = Vec::with_capacity(path.horizon());
    let mut conditioned = Vec::with_capacity(path.horizon());
    for t in 0..path.horizon() {
        let (s, a) = path.steps[t];
        let layer = match path.next_state(t) {
            Some(x) => {
                let row = observed_row(mdp, s, a, x)?;
                draw_set(ns, n, seed, t, |out, rng| match sampler {
                    Sampler::TopDown => {
                        topdown_one(row, x, out, rng);
                        Ok(1)
                    }
                    Sampler::Rejection => rejection_one(row, x, out, rng),
                })?
            }
            None => draw_set(ns, n, seed, t, |out, rng| {
                fill_prior(out, rng);
                Ok(0)
            })?,
        };
        conditioned.push(path.next_state(t).is_some());
        layers.push(layer);
    }
    Ok(GumbelPosterior {
        key: PosteriorKey {
            mdp_hash: mdp.content_hash(),
            path_hash: path.content_hash(),
            n_samples: n,
            sampler,
            seed,
        },
        n_states: ns,
        conditioned,
        layers,
    })
}
