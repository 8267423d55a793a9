//! Optimal (k, m)-constrained counterfactual policies, sweeps and rollouts.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cf::LayeredKernel;
use crate::error::{Error, Result};
use crate::influence::{pruned_size_report, PruneMode, PrunedCfMdp, Pruner, SizeReport};
use crate::mdp::{Mdp, ObservedPath};
use crate::rng::{stream_rng, Stream};
use crate::scalar::Scalar;

/// Per-node table over the budget index `j = 0..=m`.
type BudgetTable<T> = BTreeMap<usize, Vec<T>>;

/// Budget-indexed policy on a pruned counterfactual MDP.
#[derive(Debug, Clone)]
pub struct CfPolicy<F> {
    pub k: usize,
    pub m: usize,
    pub horizon: usize,
    /// `values[t][s][j]`, `None` where no budget-feasible continuation exists.
    pub values: Vec<BudgetTable<Option<F>>>,
    /// `actions[t][s][j]` for `t < T`.
    pub actions: Vec<BudgetTable<Option<usize>>>,
    pub value: F,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyEntry {
    pub t: usize,
    pub s: String,
    pub j: usize,
    pub a: String,
}

impl<F: Scalar> CfPolicy<F> {
    pub fn action(&self, t: usize, s: usize, j: usize) -> Option<usize> {
        self.actions.get(t)?.get(&s)?.get(j).copied().flatten()
    }

    pub fn value_at(&self, t: usize, s: usize, j: usize) -> Option<F> {
        self.values.get(t)?.get(&s)?.get(j).copied().flatten()
    }

    pub fn entries(&self, mdp: &Mdp<F>) -> Vec<PolicyEntry> {
        let mut out = Vec::new();
        for (t, layer) in self.actions.iter().enumerate() {
            for (&s, per_j) in layer {
                for (j, a) in per_j.iter().enumerate() {
                    if let Some(a) = a {
                        out.push(PolicyEntry {
                            t,
                            s: mdp.state_name(s).to_string(),
                            j,
                            a: mdp.action_name(*a).to_string(),
                        });
                    }
                }
            }
        }
        out
    }
}

/// Dynamic program over `(s, t, j)` where `j` counts deviations from the observed actions.
pub fn solve_km<F: Scalar>(
    pruned: &PrunedCfMdp<F>,
    mdp: &Mdp<F>,
    path: &ObservedPath,
    m: usize,
) -> Result<CfPolicy<F>> {
    let horizon = pruned.horizon;
    if path.horizon() != horizon {
        return Err(Error::InvalidConfig("path length differs from pruned horizon".into()));
    }
    let mut values: Vec<BudgetTable<Option<F>>> = vec![BTreeMap::new(); horizon + 1];
    let mut actions: Vec<BudgetTable<Option<usize>>> = vec![BTreeMap::new(); horizon];
    for &s in pruned.layers[horizon].keys() {
        values[horizon].insert(s, vec![Some(F::zero()); m + 1]);
    }
    for t in (0..horizon).rev() {
        let observed = path.action(t);
        let next = &values[t + 1];
        let solved: Vec<(usize, Vec<Option<F>>, Vec<Option<usize>>)> = pruned.layers[t]
            .par_iter()
            .map(|(&s, acts)| {
                // Observed action first so ties resolve toward it, then by index.
                let mut order: Vec<&(usize, _)> = acts.iter().collect();
                order.sort_by_key(|(a, _)| (*a != observed, *a));
                let mut v = vec![None; m + 1];
                let mut pi = vec![None; m + 1];
                for j in 0..=m {
                    let mut best: Option<(usize, F)> = None;
                    for (a, row) in &order {
                        let jn = j + usize::from(*a != observed);
                        if jn > m {
                            continue;
                        }
                        let mut ev = F::zero();
                        let mut feasible = true;
                        for (n, p) in row.iter() {
                            match next.get(&n).and_then(|vs| vs[jn]) {
                                Some(x) => ev += p * x,
                                None => {
                                    feasible = false;
                                    break;
                                }
                            }
                        }
                        if !feasible {
                            continue;
                        }
                        let q = mdp.reward(s, *a) + ev;
                        if best.is_none_or(|(_, b)| q > b) {
                            best = Some((*a, q));
                        }
                    }
                    if let Some((a, q)) = best {
                        v[j] = Some(q);
                        pi[j] = Some(a);
                    }
                }
                (s, v, pi)
            })
            .collect();
        for (s, v, pi) in solved {
            values[t].insert(s, v);
            actions[t].insert(s, pi);
        }
    }
    let value = values[0]
        .get(&pruned.root)
        .and_then(|v| v[0])
        .ok_or(Error::InfeasibleBudget { m })?;
    Ok(CfPolicy {
        k: pruned.k,
        m,
        horizon,
        values,
        actions,
        value,
    })
}

/// One cell of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub k: usize,
    pub m: usize,
    #[serde(rename = "V_s0")]
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub cells: Vec<SweepCell>,
    pub sizes: Vec<SizeReport>,
}

impl SweepResult {
    pub fn value(&self, k: usize, m: usize) -> Option<f64> {
        self.cells
            .iter()
            .find(|c| c.k == k && c.m == m)
            .map(|c| c.value)
    }

    /// Cells that break monotonicity in `m` (fixed `k`) or in `k` (fixed `m`).
    pub fn monotonicity_violations(&self, tol: f64) -> Vec<(SweepCell, SweepCell)> {
        let mut out = Vec::new();
        for a in &self.cells {
            for b in &self.cells {
                let next_m = a.k == b.k && b.m == a.m + 1;
                let next_k = a.m == b.m && b.k == a.k + 1;
                if (next_m || next_k) && b.value + tol < a.value {
                    out.push((*a, *b));
                }
            }
        }
        out
    }
}

/// Solves every `(k, m)` cell on one kernel. The kernel's row cache is shared by all cells.
pub fn sweep<F: Scalar, K: LayeredKernel<F>>(
    kernel: &K,
    path: &ObservedPath,
    ks: &[usize],
    ms: &[usize],
    mode: PruneMode,
) -> Result<SweepResult> {
    let pruner = Pruner::new(kernel, path, mode)?;
    let per_k: Vec<(SizeReport, Vec<SweepCell>)> = ks
        .par_iter()
        .map(|&k| {
            let pruned = pruner.prune(k)?;
            let cells = ms
                .iter()
                .map(|&m| {
                    solve_km(&pruned, kernel.mdp(), path, m).map(|p| SweepCell {
                        k,
                        m,
                        value: p.value.as_f64(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((pruned_size_report(&pruned), cells))
        })
        .collect::<Result<_>>()?;
    let mut result = SweepResult {
        cells: Vec::new(),
        sizes: Vec::new(),
    };
    for (size, cells) in per_k {
        result.sizes.push(size);
        result.cells.extend(cells);
    }
    Ok(result)
}

/// Per-time mean and standard deviation of a state feature over rollouts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutSummary {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub n: usize,
    pub seed: u64,
}

/// One sampled counterfactual trajectory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trajectory {
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
    pub deviations: usize,
}

fn draw<F: Scalar>(row: &crate::mdp::Dist<F>, rng: &mut impl Rng) -> usize {
    if row.is_dirac() {
        return row.next[0];
    }
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (n, p) in row.iter() {
        acc += p.as_f64();
        if u < acc {
            return n;
        }
    }
    *row.next.last().unwrap()
}

/// Samples `n` trajectories of `policy` through the pruned kernels.
pub fn rollout_trajectories<F: Scalar>(
    pruned: &PrunedCfMdp<F>,
    policy: &CfPolicy<F>,
    path: &ObservedPath,
    n: usize,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, Stream::Rollout, 0, i as u64);
            let mut s = pruned.root;
            let mut j = 0;
            let mut states = vec![s];
            let mut actions = Vec::with_capacity(pruned.horizon);
            for t in 0..pruned.horizon {
                let a = policy.action(t, s, j).ok_or_else(|| Error::UndefinedPolicyAction {
                    state: s.to_string(),
                    t,
                })?;
                let row = pruned.row(t, s, a).ok_or_else(|| Error::UndefinedPolicyAction {
                    state: s.to_string(),
                    t,
                })?;
                j += usize::from(a != path.action(t));
                s = draw(row, &mut rng);
                states.push(s);
                actions.push(a);
            }
            Ok(Trajectory {
                states,
                actions,
                deviations: j,
            })
        })
        .collect()
}

/// Rolls out `policy` and summarizes `feature` at every time `0..=T`.
pub fn rollout<F: Scalar>(
    pruned: &PrunedCfMdp<F>,
    policy: &CfPolicy<F>,
    path: &ObservedPath,
    n: usize,
    feature: impl Fn(usize) -> f64,
    seed: u64,
) -> Result<RolloutSummary> {
    if n == 0 {
        return Err(Error::InvalidConfig("rollout count must be >= 1".into()));
    }
    let trajs = rollout_trajectories(pruned, policy, path, n, seed)?;
    let mut mean = Vec::with_capacity(pruned.horizon + 1);
    let mut std = Vec::with_capacity(pruned.horizon + 1);
    for t in 0..=pruned.horizon {
        let xs: Vec<f64> = trajs.iter().map(|tr| feature(tr.states[t])).collect();
        if xs.iter().all(|&x| x == xs[0]) {
            mean.push(xs[0]);
            std.push(0.0);
            continue;
        }
        let mu = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / n as f64;
        mean.push(mu);
        std.push(var.sqrt());
    }
    Ok(RolloutSummary { mean, std, n, seed })
}
