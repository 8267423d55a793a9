//! One-step and k-step influence, influenced-state sets and pruning of layered kernels.
//!
//! Two pruning modes are provided. `Strict` evaluates influence per time layer:
//! an action at `(s, t)` is kept when some continuation of at most `k - 1`
//! further steps reaches a transition whose support meets the observed support
//! at its own time. `Pooled` pools the observed supports over time and keeps
//! transitions whose endpoints lie in the reverse-BFS set `S^{τ,k}`. In both
//! modes transitions leaving layers `t >= T - k + 1` are always kept, and
//! actions that could leave the kept node set are removed until closed.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cf::LayeredKernel;
use crate::error::{Error, Result};
use crate::mdp::{Dist, Mdp, ObservedPath};
use crate::scalar::Scalar;

const INF: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PruneMode {
    #[default]
    Strict,
    Pooled,
}

impl fmt::Display for PruneMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PruneMode::Strict => "strict",
            PruneMode::Pooled => "pooled",
        })
    }
}

impl FromStr for PruneMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "strict" => Ok(PruneMode::Strict),
            "pooled" => Ok(PruneMode::Pooled),
            other => Err(Error::InvalidConfig(format!("unknown prune mode `{other}`"))),
        }
    }
}

/// Supports of the observed transitions, per time and pooled.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InfluenceSets {
    pub per_time: Vec<BTreeSet<usize>>,
    pub pooled: BTreeSet<usize>,
}

/// Whether `(s, a)` at time `t` shares support with the observed transition at `t`.
pub fn one_step_influenced<F: Scalar>(
    mdp: &Mdp<F>,
    path: &ObservedPath,
    t: usize,
    s: usize,
    a: usize,
) -> Result<bool> {
    let row = &mdp.require_row(s, a)?.dist;
    let (os, oa) = path.steps[t];
    let observed = &mdp.require_row(os, oa)?.dist;
    Ok(!row.disjoint(observed))
}

pub fn influenced_states<F: Scalar>(mdp: &Mdp<F>, path: &ObservedPath) -> Result<InfluenceSets> {
    let mut per_time = Vec::with_capacity(path.horizon());
    for &(s, a) in &path.steps {
        per_time.push(
            mdp.require_row(s, a)?
                .dist
                .next
                .iter()
                .copied()
                .collect::<BTreeSet<_>>(),
        );
    }
    let pooled = per_time.iter().flatten().copied().collect();
    Ok(InfluenceSets { per_time, pooled })
}

/// `S^τ` plus every state with a nominal path of at most `k` transitions into it.
pub fn reachback<F: Scalar>(mdp: &Mdp<F>, sets: &InfluenceSets, k: usize) -> BTreeSet<usize> {
    let mut preds = vec![Vec::new(); mdp.n_states()];
    for s in 0..mdp.n_states() {
        for n in mdp.successors(s) {
            preds[n].push(s);
        }
    }
    let mut depth = vec![usize::MAX; mdp.n_states()];
    let mut queue = VecDeque::new();
    for &s in &sets.pooled {
        depth[s] = 0;
        queue.push_back(s);
    }
    while let Some(s) = queue.pop_front() {
        if depth[s] == k {
            continue;
        }
        for &p in &preds[s] {
            if depth[p] == usize::MAX {
                depth[p] = depth[s] + 1;
                queue.push_back(p);
            }
        }
    }
    (0..mdp.n_states())
        .filter(|&s| depth[s] != usize::MAX)
        .collect()
}

/// Minimum number of steps from `(s, a)` at time `t` to a one-step influenced
/// transition at its own time, over nominal supports.
#[derive(Debug, Clone)]
pub struct InfluenceDistance {
    horizon: usize,
    /// `[t][s][a]`, `INF` for unavailable actions or no influence before `T`.
    action: Vec<Vec<Vec<u32>>>,
    /// `[t][s]` for `t = 0..=T`; layer `T` is all `INF`.
    state: Vec<Vec<u32>>,
}

impl InfluenceDistance {
    pub fn compute<F: Scalar>(mdp: &Mdp<F>, sets: &InfluenceSets) -> Self {
        let horizon = sets.per_time.len();
        let ns = mdp.n_states();
        let na = mdp.n_actions();
        let mut action = vec![vec![vec![INF; na]; ns]; horizon];
        let mut state = vec![vec![INF; ns]; horizon + 1];
        for t in (0..horizon).rev() {
            let target = &sets.per_time[t];
            for s in 0..ns {
                for a in mdp.available(s) {
                    let row = &mdp.row(s, a).unwrap().dist;
                    let da = if row.next.iter().any(|n| target.contains(n)) {
                        1
                    } else {
                        let best = row.next.iter().map(|&n| state[t + 1][n]).min().unwrap();
                        best.saturating_add(1)
                    };
                    action[t][s][a] = da;
                    state[t][s] = state[t][s].min(da);
                }
            }
        }
        InfluenceDistance {
            horizon,
            action,
            state,
        }
    }

    pub fn action_distance(&self, t: usize, s: usize, a: usize) -> Option<u32> {
        let d = self.action[t][s][a];
        (d != INF).then_some(d)
    }

    pub fn state_distance(&self, t: usize, s: usize) -> Option<u32> {
        let d = self.state[t][s];
        (d != INF).then_some(d)
    }

    /// Time-layered `S^{τ,k}`: `S^τ` plus states that are k-step influenced at
    /// some layer `t >= 1`. Layer 0 holds only the pinned initial state.
    pub fn layered_reachback(&self, sets: &InfluenceSets, k: usize) -> BTreeSet<usize> {
        let mut out = sets.pooled.clone();
        for t in 1..self.horizon {
            for (s, &d) in self.state[t].iter().enumerate() {
                if d as usize <= k {
                    out.insert(s);
                }
            }
        }
        out
    }
}

/// Pruned counterfactual MDP: kept nodes per layer with their kept actions and rows.
#[derive(Debug, Clone)]
pub struct PrunedCfMdp<F> {
    pub k: usize,
    pub mode: PruneMode,
    pub horizon: usize,
    pub root: usize,
    /// `layers[t][s]` lists kept `(action, row)` pairs; empty at `t = T`.
    pub layers: Vec<BTreeMap<usize, Vec<(usize, Arc<Dist<F>>)>>>,
    /// Admissible `(state, layer)` pairs before reachability, counted over all layers.
    pub nodes_all_layers: usize,
}

impl<F: Scalar> PrunedCfMdp<F> {
    pub fn contains(&self, s: usize, t: usize) -> bool {
        self.layers.get(t).is_some_and(|l| l.contains_key(&s))
    }

    pub fn actions(&self, t: usize, s: usize) -> &[(usize, Arc<Dist<F>>)] {
        self.layers[t].get(&s).map(|v| v.as_slice()).unwrap_or(&[])
    }

    pub fn row(&self, t: usize, s: usize, a: usize) -> Option<&Arc<Dist<F>>> {
        self.actions(t, s)
            .iter()
            .find(|(b, _)| *b == a)
            .map(|(_, r)| r)
    }

    pub fn n_nodes(&self) -> usize {
        self.layers.iter().map(|l| l.len()).sum()
    }

    pub fn nodes(&self) -> BTreeSet<(usize, usize)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(t, l)| l.keys().map(move |&s| (s, t)))
            .collect()
    }

    pub fn distinct_states(&self) -> BTreeSet<usize> {
        self.layers.iter().flat_map(|l| l.keys().copied()).collect()
    }

    /// Kept transitions `(t, s, a, s')` with positive probability.
    pub fn edges(&self) -> BTreeSet<(usize, usize, usize, usize)> {
        let mut out = BTreeSet::new();
        for (t, layer) in self.layers.iter().enumerate() {
            for (&s, acts) in layer {
                for (a, row) in acts {
                    for &n in &row.next {
                        out.insert((t, s, *a, n));
                    }
                }
            }
        }
        out
    }
}

/// Row in the size table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeReport {
    pub k: usize,
    pub nodes_all_layers: usize,
    pub nodes_reachable: usize,
    pub distinct_states: usize,
}

pub fn pruned_size_report<F: Scalar>(pruned: &PrunedCfMdp<F>) -> SizeReport {
    SizeReport {
        k: pruned.k,
        nodes_all_layers: pruned.nodes_all_layers,
        nodes_reachable: pruned.n_nodes(),
        distinct_states: pruned.distinct_states().len(),
    }
}

/// Influence data of one path, reusable across every `k` of a sweep.
pub struct Pruner<'k, F: Scalar, K: LayeredKernel<F>> {
    kernel: &'k K,
    path: ObservedPath,
    mode: PruneMode,
    sets: InfluenceSets,
    distance: InfluenceDistance,
    _f: std::marker::PhantomData<F>,
}

impl<'k, F: Scalar, K: LayeredKernel<F>> Pruner<'k, F, K> {
    pub fn new(kernel: &'k K, path: &ObservedPath, mode: PruneMode) -> Result<Self> {
        if kernel.horizon() != path.horizon() {
            return Err(Error::InvalidConfig(format!(
                "kernel horizon {} differs from path length {}",
                kernel.horizon(),
                path.horizon()
            )));
        }
        let mdp = kernel.mdp();
        let sets = influenced_states(mdp, path)?;
        let distance = InfluenceDistance::compute(mdp, &sets);
        Ok(Pruner {
            kernel,
            path: path.clone(),
            mode,
            sets,
            distance,
            _f: std::marker::PhantomData,
        })
    }

    pub fn sets(&self) -> &InfluenceSets {
        &self.sets
    }

    pub fn distance(&self) -> &InfluenceDistance {
        &self.distance
    }

    /// `S^{τ,k}` as used by this pruner's mode.
    pub fn reach_set(&self, k: usize) -> BTreeSet<usize> {
        match self.mode {
            PruneMode::Strict => self.distance.layered_reachback(&self.sets, k),
            PruneMode::Pooled => reachback(self.kernel.mdp(), &self.sets, k),
        }
    }

    fn free(&self, t: usize, k: usize) -> bool {
        t + k > self.path.horizon()
    }

    fn node_admissible(&self, s: usize, t: usize, k: usize, reach: &BTreeSet<usize>) -> bool {
        if (t == 0 && s == self.kernel.root()) || self.free(t, k) {
            return true;
        }
        match self.mode {
            PruneMode::Strict => {
                self.distance.state_distance(t.min(self.path.horizon()), s)
                    .is_some_and(|d| d as usize <= k)
                    || (t >= 1 && self.sets.per_time[t - 1].contains(&s))
            }
            PruneMode::Pooled => reach.contains(&s),
        }
    }

    pub fn prune(&self, k: usize) -> Result<PrunedCfMdp<F>> {
        if k == 0 {
            return Err(Error::InvalidConfig("k must be >= 1".into()));
        }
        let horizon = self.path.horizon();
        let mdp = self.kernel.mdp();
        let reach = match self.mode {
            PruneMode::Pooled => reachback(mdp, &self.sets, k),
            PruneMode::Strict => BTreeSet::new(),
        };
        let nodes_all_layers = (0..=horizon)
            .map(|t| {
                (0..mdp.n_states())
                    .filter(|&s| self.node_admissible(s, t, k, &reach))
                    .count()
            })
            .sum();

        // Forward expansion through admissible actions.
        let mut layers: Vec<BTreeMap<usize, Vec<(usize, Arc<Dist<F>>)>>> =
            vec![BTreeMap::new(); horizon + 1];
        layers[0].insert(self.kernel.root(), Vec::new());
        for t in 0..horizon {
            let free = self.free(t, k);
            let frontier: Vec<usize> = layers[t].keys().copied().collect();
            let expanded: Vec<(usize, Vec<(usize, Arc<Dist<F>>)>)> = frontier
                .par_iter()
                .map(|&s| {
                    let mut kept = Vec::new();
                    for a in mdp.available(s) {
                        let ok = free
                            || match self.mode {
                                PruneMode::Strict => self
                                    .distance
                                    .action_distance(t, s, a)
                                    .is_some_and(|d| d as usize <= k),
                                PruneMode::Pooled => reach.contains(&s),
                            };
                        if !ok {
                            continue;
                        }
                        let row = self.kernel.layer_row(t, s, a)?;
                        if !free
                            && self.mode == PruneMode::Pooled
                            && !row.next.iter().all(|n| reach.contains(n))
                        {
                            continue;
                        }
                        kept.push((a, row));
                    }
                    Ok((s, kept))
                })
                .collect::<Result<_>>()?;
            for (s, kept) in expanded {
                for (_, row) in &kept {
                    for &n in &row.next {
                        layers[t + 1].entry(n).or_default();
                    }
                }
                layers[t].insert(s, kept);
            }
        }

        // Backward liveness: keep actions whose successors are all live.
        for t in (0..horizon).rev() {
            let (head, tail) = layers.split_at_mut(t + 1);
            let next = &tail[0];
            head[t].retain(|_, acts| {
                acts.retain(|(_, row)| row.next.iter().all(|n| next.contains_key(n)));
                !acts.is_empty()
            });
        }
        if !layers[0].contains_key(&self.kernel.root()) {
            return Err(Error::EmptyPrunedMdp { k });
        }

        // Forward reachability through kept actions.
        let mut reachable: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); horizon + 1];
        reachable[0].insert(self.kernel.root());
        for t in 0..horizon {
            let mut next = BTreeSet::new();
            for s in &reachable[t] {
                for (_, row) in &layers[t][s] {
                    next.extend(row.next.iter().copied());
                }
            }
            reachable[t + 1] = next;
        }
        for (layer, keep) in layers.iter_mut().zip(&reachable) {
            layer.retain(|s, _| keep.contains(s));
        }

        Ok(PrunedCfMdp {
            k,
            mode: self.mode,
            horizon,
            root: self.kernel.root(),
            layers,
            nodes_all_layers,
        })
    }
}

/// Prunes `kernel` for influence horizon `k`. Build a [`Pruner`] to reuse work across `k`.
pub fn prune_cf_mdp<F: Scalar, K: LayeredKernel<F>>(
    kernel: &K,
    path: &ObservedPath,
    k: usize,
    mode: PruneMode,
) -> Result<PrunedCfMdp<F>> {
    Pruner::new(kernel, path, mode)?.prune(k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cf::{build_cf_mdp, NominalUnrolling};
    use crate::gumbel::{build_posterior, Sampler};
    use crate::mdp::tests::random_doc;
    use crate::mdp::{sample_path, Policy};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn chain(n: usize) -> Mdp<f64> {
        let states: Vec<String> = (0..n).map(|i| format!("c{i}")).collect();
        let mut b = crate::mdp::DocBuilder::new("chain", states, vec!["go".into()]);
        for s in 0..n {
            b.row(s, 0, &[((s + 1).min(n - 1), 1.0)], 0.0);
        }
        b.initial(0);
        b.build().unwrap()
    }

    #[test]
    fn deterministic_chain_sets() {
        let m = chain(5);
        let path = sample_path(&m, &Policy::Stationary(vec![Some(0); 5]), 3, 0).unwrap();
        let sets = influenced_states(&m, &path).unwrap();
        assert_eq!(sets.pooled, BTreeSet::from([1, 2, 3]));
        assert!(one_step_influenced(&m, &path, 1, 1, 0).unwrap());
        assert!(!one_step_influenced(&m, &path, 1, 3, 0).unwrap());
        let short = ObservedPath { steps: vec![(2, 0)], final_state: None };
        assert_eq!(influenced_states(&m, &short).unwrap().pooled, BTreeSet::from([3]));
    }

    #[test]
    fn reachback_saturates() {
        let m = chain(6);
        let path = ObservedPath { steps: vec![(3, 0)], final_state: Some(4) };
        let sets = influenced_states(&m, &path).unwrap();
        assert_eq!(reachback(&m, &sets, 1), BTreeSet::from([3, 4]));
        assert_eq!(reachback(&m, &sets, 2), BTreeSet::from([2, 3, 4]));
        assert_eq!(reachback(&m, &sets, 50), BTreeSet::from([0, 1, 2, 3, 4]));
    }

    #[test]
    fn rejects_zero_k() {
        let m = chain(3);
        let path = ObservedPath { steps: vec![(0, 0)], final_state: Some(1) };
        let kern = NominalUnrolling::new(&m, 0, 1);
        assert!(matches!(
            prune_cf_mdp(&kern, &path, 0, PruneMode::Strict),
            Err(Error::InvalidConfig(_))
        ));
    }

    fn random_instance(seed: u64) -> (Mdp<f64>, ObservedPath) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = Mdp::<f64>::from_doc(&random_doc(&mut rng, 6, 3)).unwrap();
        let pi = Policy::Stationary((0..6).map(|s| Some(s % 3)).collect());
        let path = sample_path(&m, &pi, 5, seed).unwrap();
        (m, path)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn pruning_invariants(seed in any::<u64>(), pooled in any::<bool>()) {
            let mode = if pooled { PruneMode::Pooled } else { PruneMode::Strict };
            let (m, path) = random_instance(seed);
            let post = build_posterior(&m, &path, 200, Sampler::TopDown, seed).unwrap();
            let cf = build_cf_mdp(&post, &m, &path);
            let pruner = Pruner::new(&cf, &path, mode).unwrap();
            let h = path.horizon();
            let mut prev: Option<PrunedCfMdp<f64>> = None;
            for k in 1..=h + 2 {
                let p = pruner.prune(k).unwrap();
                // Closure and liveness.
                for t in 0..h {
                    for (s, acts) in &p.layers[t] {
                        prop_assert!(!acts.is_empty());
                        for (_, row) in acts {
                            let mass: f64 = row.iter().filter(|(n, _)| p.contains(*n, t + 1)).map(|(_, q)| q).sum();
                            prop_assert!((mass - 1.0).abs() < 1e-9, "leak at ({s},{t})");
                        }
                    }
                }
                // Observed path preserved.
                for t in 0..h {
                    let (s, a) = path.steps[t];
                    prop_assert!(p.row(t, s, a).is_some(), "k={k} t={t}");
                }
                prop_assert!(p.contains(path.final_state.unwrap(), h));
                // Sets nest.
                let sets = pruner.sets();
                prop_assert!(sets.pooled.is_subset(&pruner.reach_set(k)));
                prop_assert!(pruner.reach_set(k).is_subset(&pruner.reach_set(k + 1)));
                if let Some(q) = &prev {
                    prop_assert!(q.nodes().is_subset(&p.nodes()));
                    prop_assert!(q.nodes_all_layers <= p.nodes_all_layers);
                }
                prev = Some(p);
            }
            // k >= T+1: every reachable node with every action.
            let full = pruner.prune(h + 1).unwrap();
            let mut frontier = BTreeSet::from([path.state(0)]);
            for t in 0..h {
                let mut next = BTreeSet::new();
                for &s in &frontier {
                    prop_assert_eq!(full.actions(t, s).len(), m.available(s).count());
                    for a in m.available(s) {
                        next.extend(cf.layer_row(t, s, a).unwrap().next.iter().copied());
                    }
                }
                prop_assert_eq!(full.layers[t].keys().copied().collect::<BTreeSet<_>>(), frontier);
                frontier = next;
            }
            prop_assert_eq!(full.nodes_all_layers, m.n_states() * (h + 1));
        }
    }
}
