//! Finite MDPs, observed paths, policies and finite-horizon value iteration.

use std::collections::HashMap;
use std::fmt;

use indexmap::IndexMap;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};
use crate::scalar::{Scalar, PROB_TOLERANCE};

/// Sparse probability vector over state indices, sorted by index.
#[derive(Debug, Clone, PartialEq)]
pub struct Dist<F> {
    pub next: Vec<usize>,
    pub prob: Vec<F>,
}

impl<F: Scalar> Dist<F> {
    pub fn dirac(s: usize) -> Self {
        Dist {
            next: vec![s],
            prob: vec![F::one()],
        }
    }

    pub fn len(&self) -> usize {
        self.next.len()
    }

    pub fn is_empty(&self) -> bool {
        self.next.is_empty()
    }

    pub fn is_dirac(&self) -> bool {
        self.next.len() == 1
    }

    pub fn prob_of(&self, s: usize) -> F {
        match self.next.binary_search(&s) {
            Ok(i) => self.prob[i],
            Err(_) => F::zero(),
        }
    }

    pub fn contains(&self, s: usize) -> bool {
        self.next.binary_search(&s).is_ok()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, F)> + '_ {
        self.next.iter().copied().zip(self.prob.iter().copied())
    }

    /// Total variation distance to another sparse vector.
    pub fn tv(&self, other: &Dist<F>) -> f64 {
        let mut i = 0;
        let mut j = 0;
        let mut acc = 0.0;
        while i < self.next.len() || j < other.next.len() {
            let a = self.next.get(i).copied().unwrap_or(usize::MAX);
            let b = other.next.get(j).copied().unwrap_or(usize::MAX);
            if a == b {
                acc += (self.prob[i].as_f64() - other.prob[j].as_f64()).abs();
                i += 1;
                j += 1;
            } else if a < b {
                acc += self.prob[i].as_f64();
                i += 1;
            } else {
                acc += other.prob[j].as_f64();
                j += 1;
            }
        }
        acc / 2.0
    }

    pub fn disjoint(&self, other: &Dist<F>) -> bool {
        !self.next.iter().any(|s| other.contains(*s))
    }
}

/// A nominal transition row with cached log-probabilities for the Gumbel-max mechanism.
#[derive(Debug, Clone)]
pub struct Row<F> {
    pub dist: Dist<F>,
    pub ln_prob: Vec<F>,
}

/// Finite MDP with a sparse kernel. Absent rows mean the action is unavailable.
#[derive(Debug, Clone)]
pub struct Mdp<F> {
    name: String,
    states: Vec<String>,
    actions: Vec<String>,
    rows: Vec<Vec<Option<Row<F>>>>,
    rewards: Vec<Vec<F>>,
    initial: Dist<F>,
    state_index: HashMap<String, usize>,
    action_index: HashMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionDoc {
    pub s: String,
    pub a: String,
    pub to: IndexMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardDoc {
    pub s: String,
    pub a: String,
    pub r: f64,
}

/// Serialized MDP as read from and written to JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpDoc {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub name: String,
    pub states: Vec<String>,
    pub actions: Vec<String>,
    pub transitions: Vec<TransitionDoc>,
    #[serde(default)]
    pub rewards: Vec<RewardDoc>,
    pub initial: IndexMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub location: String,
    pub message: String,
}

/// Every invariant violation found in an MDP document. Empty iff valid.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, location: impl Into<String>, message: impl Into<String>) {
        self.violations.push(Violation {
            location: location.into(),
            message: message.into(),
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "{}: {}", v.location, v.message)?;
        }
        Ok(())
    }
}

/// Checks an MDP document against every structural invariant.
pub fn validate_mdp(doc: &MdpDoc) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut states = HashMap::new();
    for (i, s) in doc.states.iter().enumerate() {
        if states.insert(s.as_str(), i).is_some() {
            report.push(format!("state {s}"), "duplicate state identifier");
        }
    }
    let mut actions = HashMap::new();
    for (i, a) in doc.actions.iter().enumerate() {
        if actions.insert(a.as_str(), i).is_some() {
            report.push(format!("action {a}"), "duplicate action identifier");
        }
    }
    if doc.states.is_empty() {
        report.push("states", "state set is empty");
    }

    let mut has_row = vec![false; doc.states.len()];
    let mut seen = HashMap::new();
    for tr in &doc.transitions {
        let loc = format!("row ({},{})", tr.s, tr.a);
        let si = states.get(tr.s.as_str()).copied();
        if si.is_none() {
            report.push(&loc, format!("unknown state `{}`", tr.s));
        }
        if !actions.contains_key(tr.a.as_str()) {
            report.push(&loc, format!("unknown action `{}`", tr.a));
        }
        if seen.insert((tr.s.as_str(), tr.a.as_str()), ()).is_some() {
            report.push(&loc, "duplicate row");
        }
        let mut sum = 0.0;
        for (to, &p) in &tr.to {
            if !states.contains_key(to.as_str()) {
                report.push(&loc, format!("unknown successor state `{to}`"));
            }
            if !p.is_finite() || p < 0.0 {
                report.push(&loc, format!("invalid probability {p} for `{to}`"));
            }
            sum += p;
        }
        if (sum - 1.0).abs() > PROB_TOLERANCE {
            report.push(&loc, format!("row ({},{}) sums to {sum}", tr.s, tr.a));
        }
        if let Some(si) = si {
            has_row[si] = true;
        }
    }
    for (i, ok) in has_row.iter().enumerate() {
        if !ok {
            report.push(format!("state {}", doc.states[i]), "no available action");
        }
    }

    for r in &doc.rewards {
        let loc = format!("reward ({},{})", r.s, r.a);
        if !states.contains_key(r.s.as_str()) {
            report.push(&loc, format!("unknown state `{}`", r.s));
        }
        if !actions.contains_key(r.a.as_str()) {
            report.push(&loc, format!("unknown action `{}`", r.a));
        }
        if !r.r.is_finite() {
            report.push(&loc, "reward is not finite");
        }
        if !seen.contains_key(&(r.s.as_str(), r.a.as_str())) {
            report.push(&loc, "reward for an unavailable action");
        }
    }

    let mut sum = 0.0;
    for (s, &p) in &doc.initial {
        if !states.contains_key(s.as_str()) {
            report.push("initial", format!("unknown state `{s}`"));
        }
        if !p.is_finite() || p < 0.0 {
            report.push("initial", format!("invalid probability {p} for `{s}`"));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > PROB_TOLERANCE {
        report.push("initial", format!("initial distribution sums to {sum}"));
    }
    report
}

/// Converts `(index, prob)` pairs to a sorted sparse vector, dropping zeros and
/// renormalizing sums that are off by more than rounding noise.
fn normalized<F: Scalar>(mut entries: Vec<(usize, f64)>) -> Dist<F> {
    entries.retain(|&(_, p)| p > 0.0);
    entries.sort_by_key(|&(s, _)| s);
    let sum: f64 = entries.iter().map(|&(_, p)| p).sum();
    let scale = if (sum - 1.0).abs() > 1e-12 { 1.0 / sum } else { 1.0 };
    Dist {
        next: entries.iter().map(|&(s, _)| s).collect(),
        prob: entries.iter().map(|&(_, p)| F::lit(p * scale)).collect(),
    }
}

impl<F: Scalar> Mdp<F> {
    /// Builds an MDP from its document form, rejecting invalid input.
    pub fn from_doc(doc: &MdpDoc) -> Result<Self> {
        let report = validate_mdp(doc);
        if !report.is_empty() {
            return Err(Error::InvalidMdp(report));
        }
        let state_index: HashMap<String, usize> = doc
            .states
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        let action_index: HashMap<String, usize> = doc
            .actions
            .iter()
            .enumerate()
            .map(|(i, a)| (a.clone(), i))
            .collect();
        let ns = doc.states.len();
        let na = doc.actions.len();
        let mut rows: Vec<Vec<Option<Row<F>>>> = vec![vec![None; na]; ns];
        for tr in &doc.transitions {
            let s = state_index[&tr.s];
            let a = action_index[&tr.a];
            let dist: Dist<F> =
                normalized(tr.to.iter().map(|(k, &p)| (state_index[k], p)).collect());
            let ln_prob = dist.prob.iter().map(|p| p.ln()).collect();
            rows[s][a] = Some(Row { dist, ln_prob });
        }
        let mut rewards = vec![vec![F::zero(); na]; ns];
        for r in &doc.rewards {
            rewards[state_index[&r.s]][action_index[&r.a]] = F::lit(r.r);
        }
        let initial = normalized(
            doc.initial
                .iter()
                .map(|(k, &p)| (state_index[k], p))
                .collect(),
        );
        Ok(Mdp {
            name: doc.name.clone(),
            states: doc.states.clone(),
            actions: doc.actions.clone(),
            rows,
            rewards,
            initial,
            state_index,
            action_index,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: MdpDoc = serde_json::from_str(text)?;
        Self::from_doc(&doc)
    }

    /// Document form. Rows are listed by state then action, successors by state index.
    pub fn to_doc(&self) -> MdpDoc {
        let mut transitions = Vec::new();
        let mut rewards = Vec::new();
        for s in 0..self.n_states() {
            for a in 0..self.n_actions() {
                if let Some(row) = &self.rows[s][a] {
                    transitions.push(TransitionDoc {
                        s: self.states[s].clone(),
                        a: self.actions[a].clone(),
                        to: row
                            .dist
                            .iter()
                            .map(|(n, p)| (self.states[n].clone(), p.as_f64()))
                            .collect(),
                    });
                    let r = self.rewards[s][a];
                    if r != F::zero() {
                        rewards.push(RewardDoc {
                            s: self.states[s].clone(),
                            a: self.actions[a].clone(),
                            r: r.as_f64(),
                        });
                    }
                }
            }
        }
        MdpDoc {
            name: self.name.clone(),
            states: self.states.clone(),
            actions: self.actions.clone(),
            transitions,
            rewards,
            initial: self
                .initial
                .iter()
                .map(|(s, p)| (self.states[s].clone(), p.as_f64()))
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_doc()).expect("MDP document serializes")
    }

    /// SHA-256 of the canonical compact JSON document.
    pub fn content_hash(&self) -> String {
        let bytes = serde_json::to_vec(&self.to_doc()).expect("MDP document serializes");
        hex::encode(Sha256::digest(&bytes).as_slice())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn n_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn state_name(&self, s: usize) -> &str {
        &self.states[s]
    }

    pub fn action_name(&self, a: usize) -> &str {
        &self.actions[a]
    }

    pub fn state_id(&self, name: &str) -> Result<usize> {
        self.state_index
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownState(name.to_string()))
    }

    pub fn action_id(&self, name: &str) -> Result<usize> {
        self.action_index
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownAction(name.to_string()))
    }

    pub fn row(&self, s: usize, a: usize) -> Option<&Row<F>> {
        self.rows[s][a].as_ref()
    }

    /// Like [`Mdp::row`] but reports a missing row as an error.
    pub fn require_row(&self, s: usize, a: usize) -> Result<&Row<F>> {
        self.row(s, a).ok_or_else(|| Error::MissingKernelRow {
            state: self.states[s].clone(),
            action: self.actions[a].clone(),
        })
    }

    /// Actions with a kernel row at `s`, in index order.
    pub fn available(&self, s: usize) -> impl Iterator<Item = usize> + '_ {
        self.rows[s]
            .iter()
            .enumerate()
            .filter_map(|(a, r)| r.as_ref().map(|_| a))
    }

    pub fn reward(&self, s: usize, a: usize) -> F {
        self.rewards[s][a]
    }

    pub fn initial(&self) -> &Dist<F> {
        &self.initial
    }

    /// Numeric feature parsed from a `key=value,...` state label.
    pub fn feature(&self, s: usize, key: &str) -> Option<f64> {
        self.states[s].split(',').find_map(|kv| {
            let (k, v) = kv.split_once('=')?;
            (k.trim() == key).then(|| v.trim().parse().ok()).flatten()
        })
    }

    /// Edges `s -> s'` of the nominal transition graph, grouped by source.
    pub fn successors(&self, s: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .available(s)
            .flat_map(|a| self.rows[s][a].as_ref().unwrap().dist.next.clone())
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Lists invariant violations of the constructed MDP (empty for any MDP built via `from_doc`).
    pub fn validate(&self) -> ValidationReport {
        validate_mdp(&self.to_doc())
    }
}

/// Deterministic policy, either stationary or indexed by time.
#[derive(Debug, Clone, PartialEq)]
pub enum Policy {
    Stationary(Vec<Option<usize>>),
    TimeDependent(Vec<Vec<Option<usize>>>),
}

impl Policy {
    pub fn action(&self, s: usize, t: usize) -> Option<usize> {
        match self {
            Policy::Stationary(map) => map.get(s).copied().flatten(),
            Policy::TimeDependent(layers) => layers.get(t)?.get(s).copied().flatten(),
        }
    }

    /// Checks every mapped action is available in `mdp` at its state.
    pub fn check(&self, mdp: &Mdp<impl Scalar>) -> Result<()> {
        let layers: Vec<&Vec<Option<usize>>> = match self {
            Policy::Stationary(map) => vec![map],
            Policy::TimeDependent(layers) => layers.iter().collect(),
        };
        for (t, map) in layers.into_iter().enumerate() {
            for (s, a) in map.iter().enumerate() {
                if let Some(a) = *a {
                    if s >= mdp.n_states() || a >= mdp.n_actions() || mdp.row(s, a).is_none() {
                        return Err(Error::UndefinedPolicyAction {
                            state: mdp.states.get(s).cloned().unwrap_or_default(),
                            t,
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

/// Observed trajectory `(s_0,a_0),...,(s_{T-1},a_{T-1})`, optionally followed by `s_T`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservedPath {
    pub steps: Vec<(usize, usize)>,
    pub final_state: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDoc {
    pub t: usize,
    pub s: String,
    pub a: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathDoc {
    pub steps: Vec<StepDoc>,
    #[serde(default, rename = "final", skip_serializing_if = "Option::is_none")]
    pub final_state: Option<String>,
}

impl ObservedPath {
    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    pub fn state(&self, t: usize) -> usize {
        self.steps[t].0
    }

    pub fn action(&self, t: usize) -> usize {
        self.steps[t].1
    }

    /// Observed successor of step `t`, if any.
    pub fn next_state(&self, t: usize) -> Option<usize> {
        if t + 1 < self.steps.len() {
            Some(self.steps[t + 1].0)
        } else if t + 1 == self.steps.len() {
            self.final_state
        } else {
            None
        }
    }

    /// Observed `(state, time)` nodes including `s_T` when present.
    pub fn nodes(&self) -> Vec<(usize, usize)> {
        let mut out: Vec<(usize, usize)> = self
            .steps
            .iter()
            .enumerate()
            .map(|(t, &(s, _))| (s, t))
            .collect();
        if let Some(f) = self.final_state {
            out.push((f, self.steps.len()));
        }
        out
    }

    /// Checks the path against the MDP: positive initial mass and positive-probability steps.
    pub fn validate<F: Scalar>(&self, mdp: &Mdp<F>) -> Result<()> {
        let Some(&(s0, _)) = self.steps.first() else {
            return Ok(());
        };
        if mdp.initial.prob_of(s0) <= F::zero() {
            return Err(Error::InvalidPath(format!(
                "initial state `{}` has zero initial probability",
                mdp.state_name(s0)
            )));
        }
        for t in 0..self.steps.len() {
            let (s, a) = self.steps[t];
            let row = mdp.require_row(s, a)?;
            if let Some(n) = self.next_state(t) {
                if !row.dist.contains(n) {
                    return Err(Error::ZeroProbabilityObservation {
                        state: mdp.state_name(s).to_string(),
                        action: mdp.action_name(a).to_string(),
                        next: mdp.state_name(n).to_string(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn to_doc<F: Scalar>(&self, mdp: &Mdp<F>) -> PathDoc {
        PathDoc {
            steps: self
                .steps
                .iter()
                .enumerate()
                .map(|(t, &(s, a))| StepDoc {
                    t,
                    s: mdp.state_name(s).to_string(),
                    a: mdp.action_name(a).to_string(),
                })
                .collect(),
            final_state: self.final_state.map(|s| mdp.state_name(s).to_string()),
        }
    }

    pub fn from_doc<F: Scalar>(doc: &PathDoc, mdp: &Mdp<F>) -> Result<Self> {
        let mut steps = Vec::with_capacity(doc.steps.len());
        for (i, st) in doc.steps.iter().enumerate() {
            if st.t != i {
                return Err(Error::InvalidPath(format!(
                    "step {i} carries time index {}",
                    st.t
                )));
            }
            steps.push((mdp.state_id(&st.s)?, mdp.action_id(&st.a)?));
        }
        let final_state = doc
            .final_state
            .as_deref()
            .map(|s| mdp.state_id(s))
            .transpose()?;
        let path = ObservedPath { steps, final_state };
        path.validate(mdp)?;
        Ok(path)
    }

    /// SHA-256 of the path's index sequence.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for &(s, a) in &self.steps {
            h.update((s as u64).to_le_bytes());
            h.update((a as u64).to_le_bytes());
        }
        if let Some(f) = self.final_state {
            h.update([1u8]);
            h.update((f as u64).to_le_bytes());
        }
        hex::encode(h.finalize().as_slice())
    }
}

fn draw<F: Scalar>(dist: &Dist<F>, rng: &mut impl rand::Rng) -> usize {
    if dist.is_dirac() {
        return dist.next[0];
    }
    let w = WeightedIndex::new(dist.prob.iter().map(|p| p.as_f64()))
        .expect("validated row has positive mass");
    dist.next[w.sample(rng)]
}

/// Samples a length-`horizon` path under `policy`, recording the final state `s_T`.
pub fn sample_path<F: Scalar>(
    mdp: &Mdp<F>,
    policy: &Policy,
    horizon: usize,
    seed: u64,
) -> Result<ObservedPath> {
    let mut rng = stream_rng(seed, Stream::Path, 0, 0);
    let mut s = draw(mdp.initial(), &mut rng);
    let mut steps = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let a = policy
            .action(s, t)
            .filter(|&a| a < mdp.n_actions() && mdp.row(s, a).is_some())
            .ok_or_else(|| Error::UndefinedPolicyAction {
                state: mdp.state_name(s).to_string(),
                t,
            })?;
        steps.push((s, a));
        s = draw(&mdp.row(s, a).unwrap().dist, &mut rng);
    }
    Ok(ObservedPath {
        steps,
        final_state: (horizon > 0).then_some(s),
    })
}

/// Optimal time-dependent policy and `V_t` for `t = 0..=horizon` (with `V_T = 0`).
pub fn value_iteration<F: Scalar>(mdp: &Mdp<F>, horizon: usize) -> (Policy, Vec<Vec<F>>) {
    let ns = mdp.n_states();
    let mut values = vec![vec![F::zero(); ns]; horizon + 1];
    let mut policy = vec![vec![None; ns]; horizon];
    for t in (0..horizon).rev() {
        for s in 0..ns {
            let mut best: Option<(usize, F)> = None;
            for a in mdp.available(s) {
                let row = &mdp.row(s, a).unwrap().dist;
                let mut ev = F::zero();
                for (n, p) in row.iter() {
                    ev += p * values[t + 1][n];
                }
                let q = mdp.reward(s, a) + ev;
                if best.is_none_or(|(_, b)| q > b) {
                    best = Some((a, q));
                }
            }
            let (a, q) = best.expect("validated MDP has an action at every state");
            values[t][s] = q;
            policy[t][s] = Some(a);
        }
    }
    (Policy::TimeDependent(policy), values)
}

/// Undiscounted return of a path, accumulated from the last step backwards.
pub fn path_return<F: Scalar>(mdp: &Mdp<F>, path: &ObservedPath) -> F {
    path.steps
        .iter()
        .rev()
        .fold(F::zero(), |acc, &(s, a)| mdp.reward(s, a) + acc)
}

/// Builds a document from index-level pieces. Used by environment builders.
pub(crate) struct DocBuilder {
    doc: MdpDoc,
}

impl DocBuilder {
    pub fn new(name: &str, states: Vec<String>, actions: Vec<String>) -> Self {
        DocBuilder {
            doc: MdpDoc {
                name: name.to_string(),
                states,
                actions,
                transitions: Vec::new(),
                rewards: Vec::new(),
                initial: IndexMap::new(),
            },
        }
    }

    pub fn row(&mut self, s: usize, a: usize, to: &[(usize, f64)], reward: f64) {
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(to.len());
        for &(n, p) in to {
            if p <= 0.0 {
                continue;
            }
            match merged.iter_mut().find(|(m, _)| *m == n) {
                Some(e) => e.1 += p,
                None => merged.push((n, p)),
            }
        }
        merged.sort_by_key(|&(n, _)| n);
        self.doc.transitions.push(TransitionDoc {
            s: self.doc.states[s].clone(),
            a: self.doc.actions[a].clone(),
            to: merged
                .into_iter()
                .map(|(n, p)| (self.doc.states[n].clone(), p))
                .collect(),
        });
        if reward != 0.0 {
            self.doc.rewards.push(RewardDoc {
                s: self.doc.states[s].clone(),
                a: self.doc.actions[a].clone(),
                r: reward,
            });
        }
    }

    pub fn initial(&mut self, s: usize) {
        self.doc.initial = IndexMap::from([(self.doc.states[s].clone(), 1.0)]);
    }

    pub fn build<F: Scalar>(self) -> Result<Mdp<F>> {
        Mdp::from_doc(&self.doc)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn doc(rows: &[(&str, &str, &[(&str, f64)])], initial: &[(&str, f64)]) -> MdpDoc {
        let mut states: Vec<String> = Vec::new();
        let mut actions: Vec<String> = Vec::new();
        for (s, a, to) in rows {
            for name in std::iter::once(*s).chain(to.iter().map(|(n, _)| *n)) {
                if !states.iter().any(|x| x == name) {
                    states.push(name.to_string());
                }
            }
            if !actions.iter().any(|x| x == a) {
                actions.push(a.to_string());
            }
        }
        MdpDoc {
            name: String::new(),
            states,
            actions,
            transitions: rows
                .iter()
                .map(|(s, a, to)| TransitionDoc {
                    s: s.to_string(),
                    a: a.to_string(),
                    to: to.iter().map(|(n, p)| (n.to_string(), *p)).collect(),
                })
                .collect(),
            rewards: vec![],
            initial: initial.iter().map(|(n, p)| (n.to_string(), *p)).collect(),
        }
    }

    #[test]
    fn well_formed_two_state_is_valid() {
        let d = doc(
            &[
                ("s0", "a0", &[("s0", 0.5), ("s1", 0.5)]),
                ("s1", "a0", &[("s1", 1.0)]),
            ],
            &[("s0", 1.0)],
        );
        assert!(validate_mdp(&d).is_empty());
    }

    #[test]
    fn short_row_is_reported() {
        let d = doc(
            &[
                ("s0", "a0", &[("s0", 0.4), ("s1", 0.5)]),
                ("s1", "a0", &[("s1", 1.0)]),
            ],
            &[("s0", 1.0)],
        );
        let report = validate_mdp(&d);
        assert_eq!(report.violations.len(), 1);
        assert!(report.violations[0].message.contains("row (s0,a0) sums to 0.9"));
    }

    #[test]
    fn unknown_state_is_named() {
        let mut d = doc(&[("s0", "a0", &[("s0", 1.0)])], &[("s0", 1.0)]);
        d.transitions[0].to.insert("ghost".into(), 0.0);
        let report = validate_mdp(&d);
        assert!(report.to_string().contains("ghost"));
        assert!(Mdp::<f64>::from_doc(&d).is_err());
    }

    #[test]
    fn near_unit_rows_are_renormalized() {
        let d = doc(
            &[("s0", "a0", &[("s0", 0.5), ("s1", 0.5 - 5e-10)]), ("s1", "a0", &[("s1", 1.0)])],
            &[("s0", 1.0)],
        );
        let m = Mdp::<f64>::from_doc(&d).unwrap();
        let sum: f64 = m.row(0, 0).unwrap().dist.prob.iter().sum();
        assert!((sum - 1.0).abs() < 1e-15);
        assert_eq!(Mdp::<f64>::from_doc(&m.to_doc()).unwrap().to_doc(), m.to_doc());
    }

    #[test]
    fn deterministic_chain_path() {
        let d = doc(
            &[
                ("s0", "a", &[("s1", 1.0)]),
                ("s1", "a", &[("s2", 1.0)]),
                ("s2", "a", &[("s2", 1.0)]),
            ],
            &[("s0", 1.0)],
        );
        let m = Mdp::<f64>::from_doc(&d).unwrap();
        let pi = Policy::Stationary(vec![Some(0); 3]);
        let p = sample_path(&m, &pi, 2, 9).unwrap();
        assert_eq!(p.steps, vec![(0, 0), (1, 0)]);
        assert_eq!(p.final_state, Some(2));
        assert_eq!(sample_path(&m, &pi, 2, 9).unwrap(), p);
    }

    #[test]
    fn missing_policy_action_errors() {
        let d = doc(&[("s0", "a", &[("s1", 1.0)]), ("s1", "a", &[("s1", 1.0)])], &[("s0", 1.0)]);
        let m = Mdp::<f64>::from_doc(&d).unwrap();
        let pi = Policy::Stationary(vec![Some(0), None]);
        assert!(matches!(
            sample_path(&m, &pi, 3, 0),
            Err(Error::UndefinedPolicyAction { t: 1, .. })
        ));
    }

    #[test]
    fn forced_single_state_value() {
        let mut d = doc(&[("s", "a", &[("s", 1.0)])], &[("s", 1.0)]);
        d.rewards.push(RewardDoc { s: "s".into(), a: "a".into(), r: 1.0 });
        let m = Mdp::<f64>::from_doc(&d).unwrap();
        let (_, v) = value_iteration(&m, 3);
        assert_eq!(v[0][0], 3.0);
    }

    #[test]
    fn two_armed_bandit_picks_larger_reward() {
        let mut d = doc(
            &[("s", "lo", &[("s", 1.0)]), ("s", "hi", &[("s", 1.0)])],
            &[("s", 1.0)],
        );
        d.rewards.push(RewardDoc { s: "s".into(), a: "hi".into(), r: 5.0 });
        let m = Mdp::<f64>::from_doc(&d).unwrap();
        let (pi, v) = value_iteration(&m, 1);
        assert_eq!(v[0][0], 5.0);
        assert_eq!(pi.action(0, 0), Some(1));
    }

    #[test]
    fn empty_and_zero_reward_returns() {
        let d = doc(&[("s", "a", &[("s", 1.0)])], &[("s", 1.0)]);
        let m = Mdp::<f64>::from_doc(&d).unwrap();
        let empty = ObservedPath { steps: vec![], final_state: None };
        assert_eq!(path_return(&m, &empty), 0.0);
        let p = ObservedPath { steps: vec![(0, 0); 5], final_state: Some(0) };
        assert_eq!(path_return(&m, &p), 0.0);
    }

    #[test]
    fn single_step_frequencies_match_row() {
        let d = doc(
            &[("s", "a", &[("x", 0.2), ("y", 0.5), ("z", 0.3)]), ("x", "a", &[("x", 1.0)]), ("y", "a", &[("y", 1.0)]), ("z", "a", &[("z", 1.0)])],
            &[("s", 1.0)],
        );
        let m = Mdp::<f64>::from_doc(&d).unwrap();
        let row = &m.row(0, 0).unwrap().dist;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let n = 100_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            counts[draw(row, &mut rng)] += 1;
        }
        let tv: f64 = row
            .iter()
            .map(|(s, p)| (counts[s] as f64 / n as f64 - p).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv < 0.02, "tv {tv}");
        let _ = rng.random::<u8>();
    }

    #[test]
    fn feature_parsing() {
        let d = doc(&[("S=9,I=1,V=20", "a", &[("S=9,I=1,V=20", 1.0)])], &[("S=9,I=1,V=20", 1.0)]);
        let m = Mdp::<f64>::from_doc(&d).unwrap();
        assert_eq!(m.feature(0, "I"), Some(1.0));
        assert_eq!(m.feature(0, "V"), Some(20.0));
        assert_eq!(m.feature(0, "Q"), None);
    }

    pub(crate) fn random_doc(rng: &mut impl Rng, ns: usize, na: usize) -> MdpDoc {
        let states: Vec<String> = (0..ns).map(|i| format!("x{i}")).collect();
        let actions: Vec<String> = (0..na).map(|i| format!("u{i}")).collect();
        let mut transitions = Vec::new();
        let mut rewards = Vec::new();
        for s in 0..ns {
            for a in 0..na {
                let mut w: Vec<f64> = (0..ns)
                    .map(|_| if rng.random_bool(0.6) { rng.random_range(0.05..1.0) } else { 0.0 })
                    .collect();
                if w.iter().all(|&x| x == 0.0) {
                    w[rng.random_range(0..ns)] = 1.0;
                }
                let total: f64 = w.iter().sum();
                transitions.push(TransitionDoc {
                    s: states[s].clone(),
                    a: actions[a].clone(),
                    to: w
                        .iter()
                        .enumerate()
                        .filter(|(_, &p)| p > 0.0)
                        .map(|(i, &p)| (states[i].clone(), p / total))
                        .collect(),
                });
                rewards.push(RewardDoc {
                    s: states[s].clone(),
                    a: actions[a].clone(),
                    r: rng.random_range(-5..=5) as f64,
                });
            }
        }
        MdpDoc {
            name: String::new(),
            initial: IndexMap::from([(states[0].clone(), 1.0)]),
            states,
            actions,
            transitions,
            rewards,
        }
    }

    /// Expected value of a fixed time-dependent deterministic policy.
    fn evaluate(m: &Mdp<f64>, table: &[Vec<usize>], t: usize, s: usize) -> f64 {
        if t == table.len() {
            return 0.0;
        }
        let a = table[t][s];
        m.reward(s, a)
            + m.row(s, a)
                .unwrap()
                .dist
                .iter()
                .map(|(n, p)| p * evaluate(m, table, t + 1, n))
                .sum::<f64>()
    }

    fn best_by_enumeration(m: &Mdp<f64>, horizon: usize) -> f64 {
        let ns = m.n_states();
        let na = m.n_actions();
        let cells = ns * horizon;
        let total = na.pow(cells as u32);
        let mut best = f64::NEG_INFINITY;
        for code in 0..total {
            let mut c = code;
            let table: Vec<Vec<usize>> = (0..horizon)
                .map(|_| {
                    (0..ns)
                        .map(|_| {
                            let a = c % na;
                            c /= na;
                            a
                        })
                        .collect()
                })
                .collect();
            best = best.max(evaluate(m, &table, 0, 0));
        }
        best
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn value_iteration_matches_enumeration(seed in any::<u64>(), shape in 0usize..4) {
            // (|S|, |A|, T) kept small enough for exhaustive enumeration.
            let (ns, na, h) = [(4, 2, 4), (3, 3, 2), (2, 3, 4), (4, 1, 4)][shape];
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let m = Mdp::<f64>::from_doc(&random_doc(&mut rng, ns, na)).unwrap();
            let (_, v) = value_iteration(&m, h);
            let oracle = best_by_enumeration(&m, h);
            prop_assert!((v[0][0] - oracle).abs() < 1e-9, "{} vs {}", v[0][0], oracle);
        }

        #[test]
        fn value_iteration_is_bellman_consistent(seed in any::<u64>()) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let m = Mdp::<f64>::from_doc(&random_doc(&mut rng, 4, 3)).unwrap();
            let (pi, v) = value_iteration(&m, 4);
            prop_assert!(v[4].iter().all(|&x| x == 0.0));
            for t in 0..4 {
                for s in 0..4 {
                    let q = |a: usize| m.reward(s, a) + m.row(s, a).unwrap().dist.iter().map(|(n, p)| p * v[t + 1][n]).sum::<f64>();
                    let best = (0..3).map(q).fold(f64::NEG_INFINITY, f64::max);
                    prop_assert!((v[t][s] - best).abs() <= 1e-12);
                    prop_assert!((q(pi.action(s, t).unwrap()) - v[t][s]).abs() <= 1e-12);
                }
            }
        }

        #[test]
        fn json_round_trip_is_identity(seed in any::<u64>()) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let m = Mdp::<f64>::from_doc(&random_doc(&mut rng, 5, 2)).unwrap();
            let back = Mdp::<f64>::from_json(&m.to_json()).unwrap();
            prop_assert_eq!(back.to_json(), m.to_json());
            prop_assert_eq!(back.content_hash(), m.content_hash());
        }
    }
}
