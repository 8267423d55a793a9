//! Discrete epidemic with vaccination and hypergeometric infection counts.
//!
//! State `(S, I, V)`: susceptible, infected and remaining vaccines. Each step
//! the number of new infections is hypergeometric over the mixed population.
//! Vaccinated individuals leave the population for good.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Discrete, Hypergeometric};

use crate::error::{Error, Result};
use crate::mdp::{DocBuilder, Mdp, Policy};
use crate::scalar::Scalar;

pub const NIL: usize = 0;
pub const VACCINATE_INFECTED: usize = 1;
pub const VACCINATE_SUSCEPTIBLE: usize = 2;

/// Seed under which the do-nothing policy yields infections 1, 2, 3, 6, 8, 9, 9, 9.
pub const EPIDEMIC_SEED: u64 = 25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpidemicConfig {
    pub population: usize,
    pub initial_infected: usize,
    pub horizon: usize,
}

impl Default for EpidemicConfig {
    fn default() -> Self {
        EpidemicConfig {
            population: 10,
            initial_infected: 1,
            horizon: 7,
        }
    }
}

impl EpidemicConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population == 0 {
            return Err(Error::InvalidConfig("population must be >= 1".into()));
        }
        if self.initial_infected > self.population {
            return Err(Error::InvalidConfig("initial infected exceeds population".into()));
        }
        Ok(())
    }

    pub fn states(&self) -> Vec<(usize, usize, usize)> {
        let p = self.population;
        let mut out = Vec::new();
        for s in 0..=p {
            for i in 0..=p - s {
                for v in 0..=2 * p {
                    out.push((s, i, v));
                }
            }
        }
        out
    }

    pub fn initial_state(&self) -> (usize, usize, usize) {
        (
            self.population - self.initial_infected,
            self.initial_infected,
            2 * self.population,
        )
    }
}

pub fn label((s, i, v): (usize, usize, usize)) -> String {
    format!("S={s},I={i},V={v}")
}

/// `P(k)` for `k` newly infected, with the parameterization
/// (population `m`, successes `n`, draws `draws`).
pub fn infection_pmf(m: usize, n: usize, draws: usize) -> Vec<(usize, f64)> {
    if n == 0 || draws == 0 {
        return vec![(0, 1.0)];
    }
    let h = Hypergeometric::new(m as u64, n as u64, draws as u64)
        .expect("successes and draws never exceed the population");
    let lo = (n + draws).saturating_sub(m);
    let hi = n.min(draws);
    (lo..=hi)
        .map(|k| (k, h.pmf(k as u64)))
        .filter(|&(_, p)| p > 0.0)
        .collect()
}

pub fn build_epidemic<F: Scalar>(cfg: &EpidemicConfig) -> Result<Mdp<F>> {
    cfg.validate()?;
    let states = cfg.states();
    let index: std::collections::HashMap<_, _> =
        states.iter().enumerate().map(|(i, &x)| (x, i)).collect();
    let labels = states.iter().map(|&x| label(x)).collect();
    let actions = ["NIL", "V_I", "V_S"].map(String::from).to_vec();
    let mut b = DocBuilder::new("epidemic", labels, actions);
    for (idx, &(s, i, v)) in states.iter().enumerate() {
        let reward = -(i as f64);
        let to = |pmf: Vec<(usize, f64)>, s0: usize, i0: usize, v0: usize| -> Vec<(usize, f64)> {
            pmf.into_iter()
                .map(|(k, p)| (index[&(s0 - k, i0 + k, v0)], p))
                .collect()
        };
        b.row(idx, NIL, &to(infection_pmf(s + i, s.min(i), s), s, i, v), reward);
        if i >= 1 && v >= 1 {
            let pmf = infection_pmf(s + i - 1, s.min(i - 1), s);
            b.row(idx, VACCINATE_INFECTED, &to(pmf, s, i - 1, v - 1), reward);
        }
        if s >= 1 && v >= 1 {
            let pmf = infection_pmf(s + i - 1, (s - 1).min(i), s - 1);
            b.row(idx, VACCINATE_SUSCEPTIBLE, &to(pmf, s - 1, i, v - 1), reward);
        }
    }
    b.initial(index[&cfg.initial_state()]);
    b.build()
}

/// The do-nothing policy.
pub fn epidemic_policy<F: Scalar>(mdp: &Mdp<F>) -> Policy {
    Policy::Stationary(vec![Some(NIL); mdp.n_states()])
}
