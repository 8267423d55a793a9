//! Sepsis-lite: four vitals at three levels with three binary treatments.
//!
//! State is `(hr, bp, o2, glu, abx, vaso, vent)`. Vitals take levels 0 (low),
//! 1 (normal) or 2 (high). The action sets all three treatment flags at once.
//! Each vital moves independently between its current level and at most one
//! other level per step:
//!
//! * an abnormal vital whose treatment is on moves to normal with the
//!   treatment's success probability,
//! * an abnormal vital without treatment recovers with its recovery probability,
//! * a normal vital drifts to its abnormal direction with its deterioration
//!   probability, treated or not.
//!
//! Three or more abnormal vitals is death; all normal with every treatment off
//! is discharge. Both are absorbing. They pay their terminal reward on every
//! step, every other state pays 0.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{DocBuilder, Mdp, Policy};
use crate::scalar::Scalar;

pub const VITALS: [&str; 4] = ["hr", "bp", "o2", "glu"];
pub const TREATMENTS: [&str; 3] = ["abx", "vaso", "vent"];
pub const N_ACTIONS: usize = 8;
pub const N_STATES: usize = 81 * 8;
pub const DEATH_THRESHOLD: usize = 3;

/// Level an untreated normal vital drifts to.
const DRIFT: [u8; 4] = [2, 0, 0, 2];
/// Vital targeted by each treatment.
const TARGET: [usize; 3] = [0, 1, 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SepsisPreset {
    Catastrophic,
    Suboptimal,
}

impl std::str::FromStr for SepsisPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "catastrophic" => Ok(SepsisPreset::Catastrophic),
            "suboptimal" => Ok(SepsisPreset::Suboptimal),
            other => Err(Error::UnknownEnvironment(format!("sepsis preset `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SepsisLiteConfig {
    pub horizon: usize,
    pub treat_success: [f64; 3],
    pub recovery: [f64; 4],
    pub deterioration: [f64; 4],
    pub initial_vitals: [u8; 4],
    pub initial_flags: u8,
    /// Observed action at each time step.
    pub observed_actions: Vec<usize>,
    pub seed: u64,
}

impl SepsisLiteConfig {
    /// Both presets share the dynamics and differ in patient, schedule and seed.
    ///
    /// `Catastrophic` leaves a patient with high heart rate and low blood
    /// pressure untreated; the observed path dies at t=3. `Suboptimal` keeps
    /// ventilation on for a patient with high heart rate and glucose; the
    /// observed path stays alive and is never discharged.
    pub fn preset(p: SepsisPreset) -> Self {
        let (initial_vitals, action, seed) = match p {
            SepsisPreset::Catastrophic => ([2, 0, 1, 1], 0, 4),
            SepsisPreset::Suboptimal => ([2, 1, 1, 2], 4, 41341),
        };
        SepsisLiteConfig {
            horizon: 10,
            treat_success: [0.5; 3],
            recovery: [0.1; 4],
            deterioration: [0.3; 4],
            initial_vitals,
            initial_flags: 0,
            observed_actions: vec![action; 10],
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let probs = self
            .treat_success
            .iter()
            .chain(&self.recovery)
            .chain(&self.deterioration);
        if probs.clone().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidConfig("sepsis probabilities must lie in [0,1]".into()));
        }
        if self.initial_vitals.iter().any(|&v| v > 2) || self.initial_flags > 7 {
            return Err(Error::InvalidConfig("sepsis initial state out of range".into()));
        }
        if self.observed_actions.len() != self.horizon
            || self.observed_actions.iter().any(|&a| a >= N_ACTIONS)
        {
            return Err(Error::InvalidConfig(
                "observed sepsis actions must list one valid action per step".into(),
            ));
        }
        Ok(())
    }
}

pub fn encode(vitals: [u8; 4], flags: u8) -> usize {
    let v = vitals[0] as usize + 3 * vitals[1] as usize + 9 * vitals[2] as usize + 27 * vitals[3] as usize;
    v * 8 + flags as usize
}

pub fn decode(s: usize) -> ([u8; 4], u8) {
    let flags = (s % 8) as u8;
    let mut v = s / 8;
    let mut vitals = [0u8; 4];
    for x in &mut vitals {
        *x = (v % 3) as u8;
        v /= 3;
    }
    (vitals, flags)
}

pub fn abnormal(vitals: [u8; 4]) -> usize {
    vitals.iter().filter(|&&v| v != 1).count()
}

pub fn is_dead(vitals: [u8; 4]) -> bool {
    abnormal(vitals) >= DEATH_THRESHOLD
}

pub fn is_discharged(vitals: [u8; 4], flags: u8) -> bool {
    abnormal(vitals) == 0 && flags == 0
}

/// `1000 - 500 * abnormal`, clamped to `[-1000, 1000]`; death is always `-1000`.
pub fn terminal_reward(vitals: [u8; 4]) -> f64 {
    if is_dead(vitals) {
        return -1000.0;
    }
    (1000.0 - 500.0 * abnormal(vitals) as f64).clamp(-1000.0, 1000.0)
}

pub fn label(s: usize) -> String {
    let (v, f) = decode(s);
    format!(
        "hr={},bp={},o2={},glu={},abx={},vaso={},vent={}",
        v[0],
        v[1],
        v[2],
        v[3],
        f & 1,
        (f >> 1) & 1,
        (f >> 2) & 1
    )
}

fn action_name(a: usize) -> String {
    let on: Vec<&str> = (0..3).filter(|b| a >> b & 1 == 1).map(|b| TREATMENTS[b]).collect();
    if on.is_empty() {
        "none".into()
    } else {
        on.join("+")
    }
}

/// Per-vital outcomes `(level, prob)` under the treatment flags `a`.
fn vital_outcomes(cfg: &SepsisLiteConfig, i: usize, level: u8, a: usize) -> Vec<(u8, f64)> {
    let treated = (0..3).any(|b| a >> b & 1 == 1 && TARGET[b] == i);
    let success = (0..3)
        .filter(|&b| a >> b & 1 == 1 && TARGET[b] == i)
        .map(|b| cfg.treat_success[b])
        .fold(0.0, f64::max);
    let (other, p) = match (level == 1, treated) {
        (false, true) => (1, success),
        (false, false) => (1, cfg.recovery[i]),
        (true, _) => (DRIFT[i], cfg.deterioration[i]),
    };
    if p <= 0.0 || other == level {
        vec![(level, 1.0)]
    } else if p >= 1.0 {
        vec![(other, 1.0)]
    } else {
        vec![(level, 1.0 - p), (other, p)]
    }
}

pub fn build_sepsis_lite<F: Scalar>(cfg: &SepsisLiteConfig) -> Result<Mdp<F>> {
    cfg.validate()?;
    let states = (0..N_STATES).map(label).collect();
    let actions = (0..N_ACTIONS).map(action_name).collect();
    let mut b = DocBuilder::new("sepsis-lite", states, actions);
    for s in 0..N_STATES {
        let (vitals, flags) = decode(s);
        if is_dead(vitals) || is_discharged(vitals, flags) {
            for a in 0..N_ACTIONS {
                b.row(s, a, &[(s, 1.0)], terminal_reward(vitals));
            }
            continue;
        }
        for a in 0..N_ACTIONS {
            let mut to: Vec<([u8; 4], f64)> = vec![([0; 4], 1.0)];
            for (i, &level) in vitals.iter().enumerate() {
                let outs = vital_outcomes(cfg, i, level, a);
                to = to
                    .iter()
                    .flat_map(|&(v, p)| {
                        outs.iter().map(move |&(l, q)| {
                            let mut w = v;
                            w[i] = l;
                            (w, p * q)
                        })
                    })
                    .collect();
            }
            let row: Vec<(usize, f64)> = to.into_iter().map(|(v, p)| (encode(v, a as u8), p)).collect();
            b.row(s, a, &row, 0.0);
        }
    }
    b.initial(encode(cfg.initial_vitals, cfg.initial_flags));
    b.build()
}

/// The preset's fixed action schedule.
pub fn sepsis_policy(cfg: &SepsisLiteConfig) -> Policy {
    Policy::TimeDependent(
        cfg.observed_actions
            .iter()
            .map(|&a| vec![Some(a); N_STATES])
            .collect(),
    )
}
