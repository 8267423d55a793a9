mod common;

use std::collections::HashMap;

use cfmdp::env::EnvConfig;
use cfmdp::*;
use common::random_mdp;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn correlation(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

#[test]
fn posterior_layers_are_independent() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mdp = random_mdp(&mut rng, 4, 2, 4);
    let path = sample_path(&mdp, &Policy::Stationary(vec![Some(0); 4]), 3, 2).unwrap();
    let n = 100_000;
    let post = build_posterior(&mdp, &path, n, Sampler::TopDown, 6).unwrap();
    for (t1, t2) in [(0, 1), (1, 2), (0, 2)] {
        for c in 0..4 {
            let xs: Vec<f64> = (0..n).map(|i| post.sample(t1, i)[c]).collect();
            let ys: Vec<f64> = (0..n).map(|i| post.sample(t2, i)[c]).collect();
            let r = correlation(&xs, &ys);
            assert!(r.abs() < 0.02, "t={t1},{t2} component {c}: corr {r}");
        }
    }
}

/// Rows disjoint from the observed transition keep their nominal law up to sampling error.
#[test]
fn disjoint_rows_follow_the_prior() {
    let n = 1000;
    let mut checked = 0;
    for seed in 0..40u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mdp = random_mdp(&mut rng, 6, 2, 3);
        let path = sample_path(&mdp, &Policy::Stationary(vec![Some(0); 6]), 2, seed).unwrap();
        let post = build_posterior(&mdp, &path, n, Sampler::TopDown, seed + 100).unwrap();
        for t in 0..2 {
            let (os, oa) = path.steps[t];
            let observed = &mdp.row(os, oa).unwrap().dist;
            for s in 0..6 {
                for a in 0..2 {
                    let nominal = &mdp.row(s, a).unwrap().dist;
                    if !nominal.disjoint(observed) {
                        continue;
                    }
                    let est = cf_transition(&post, &mdp, t, s, a).unwrap();
                    let bound = 3.0 * (nominal.len() as f64 / n as f64).sqrt();
                    let tv = est.dist.tv(nominal);
                    assert!(tv < bound, "seed {seed} t={t} ({s},{a}): TV {tv} vs {bound}");
                    checked += 1;
                }
            }
        }
    }
    assert!(checked > 50, "only {checked} disjoint rows");
}

fn cf_value_iteration<K: LayeredKernel<f64>>(
    kernel: &K,
    t: usize,
    s: usize,
    memo: &mut HashMap<(usize, usize), f64>,
) -> f64 {
    if t == kernel.horizon() {
        return 0.0;
    }
    if let Some(&v) = memo.get(&(t, s)) {
        return v;
    }
    let mdp = kernel.mdp();
    let mut best = f64::NEG_INFINITY;
    for a in mdp.available(s) {
        let row = kernel.layer_row(t, s, a).unwrap();
        let mut q = mdp.reward(s, a);
        for (n, p) in row.iter() {
            q += p * cf_value_iteration(kernel, t + 1, n, memo);
        }
        best = best.max(q);
    }
    memo.insert((t, s), best);
    best
}

#[test]
fn unrestricted_cells_match_value_iteration() {
    let mut cases: Vec<(Mdp64, ObservedPath)> = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..15 {
        let ns = rng.random_range(2..=6);
        let na = rng.random_range(1..=3);
        let mdp = random_mdp(&mut rng, ns, na, 3);
        let horizon = rng.random_range(1..=5);
        let acts = (0..ns).map(|_| Some(rng.random_range(0..na))).collect();
        let path = sample_path(&mdp, &Policy::Stationary(acts), horizon, rng.random()).unwrap();
        cases.push((mdp, path));
    }
    cases.push(EnvConfig::by_name("gridworld").unwrap().instance().unwrap());
    cases.push(EnvConfig::by_name("epidemic").unwrap().instance().unwrap());
    for (i, (mdp, path)) in cases.iter().enumerate() {
        let h = path.horizon();
        let post = build_posterior(mdp, path, 500, Sampler::TopDown, i as u64).unwrap();
        let cf = build_cf_mdp(&post, mdp, path);
        let oracle = cf_value_iteration(&cf, 0, path.state(0), &mut HashMap::new());
        for mode in [PruneMode::Strict, PruneMode::Pooled] {
            let pruned = prune_cf_mdp(&cf, path, h + 1, mode).unwrap();
            let v = solve_km(&pruned, mdp, path, h).unwrap().value;
            assert!((v - oracle).abs() < 1e-9, "case {i} {mode}: {v} vs {oracle}");
        }
    }
}

fn epidemic_setup() -> (Mdp64, ObservedPath, Posterior64) {
    let (mdp, path) = EnvConfig::by_name("epidemic").unwrap().instance().unwrap();
    let post = build_posterior(&mdp, &path, 1000, Sampler::TopDown, 0).unwrap();
    (mdp, path, post)
}

#[test]
fn rollouts_respect_budget_and_pruned_support() {
    let (mdp, path, post) = epidemic_setup();
    let cf = build_cf_mdp(&post, &mdp, &path);
    let h = path.horizon();
    for (k, m) in [(h + 1, 1), (h + 1, 3), (4, 2), (h, h)] {
        let pruned = prune_cf_mdp(&cf, &path, k, PruneMode::Strict).unwrap();
        let policy = solve_km(&pruned, &mdp, &path, m).unwrap();
        let trajs = rollout_trajectories(&pruned, &policy, &path, 10_000, 3).unwrap();
        for tr in &trajs {
            assert!(tr.deviations <= m);
            let dev = (0..h).filter(|&t| tr.actions[t] != path.action(t)).count();
            assert_eq!(dev, tr.deviations);
            for (t, &s) in tr.states.iter().enumerate() {
                assert!(pruned.contains(s, t), "k={k} m={m}: ({s},{t}) outside the pruned MDP");
            }
        }
        let returns: f64 = trajs
            .iter()
            .map(|tr| (0..h).map(|t| mdp.reward(tr.states[t], tr.actions[t])).sum::<f64>())
            .sum::<f64>()
            / trajs.len() as f64;
        let spread = 3.0 * (h * 10) as f64 / (trajs.len() as f64).sqrt();
        assert!((returns - policy.value).abs() < spread, "k={k} m={m}: {returns} vs {}", policy.value);
    }
}

#[test]
fn rollout_means_stabilize() {
    let (mdp, path, post) = epidemic_setup();
    let cf = build_cf_mdp(&post, &mdp, &path);
    let pruned = prune_cf_mdp(&cf, &path, 5, PruneMode::Strict).unwrap();
    let policy = solve_km(&pruned, &mdp, &path, 2).unwrap();
    let feature = |s| mdp.feature(s, "I").unwrap();
    let a = rollout(&pruned, &policy, &path, 5000, feature, 1).unwrap();
    let b = rollout(&pruned, &policy, &path, 10_000, feature, 2).unwrap();
    for t in 0..=path.horizon() {
        let tol = 3.0 * a.std[t].max(b.std[t]) / (a.n as f64).sqrt() + 1e-12;
        assert!((a.mean[t] - b.mean[t]).abs() <= tol, "t={t}: {} vs {}", a.mean[t], b.mean[t]);
    }
}

#[test]
fn zero_budget_rollout_replays_the_path() {
    let (mdp, path, post) = epidemic_setup();
    let cf = build_cf_mdp(&post, &mdp, &path);
    let observed: Vec<f64> = path.nodes().iter().map(|&(s, _)| mdp.feature(s, "I").unwrap()).collect();
    for k in [1, 3, path.horizon() + 1] {
        let pruned = prune_cf_mdp(&cf, &path, k, PruneMode::Strict).unwrap();
        let policy = solve_km(&pruned, &mdp, &path, 0).unwrap();
        let r = rollout(&pruned, &policy, &path, 500, |s| mdp.feature(s, "I").unwrap(), 9).unwrap();
        assert_eq!(r.mean, observed);
        assert!(r.std.iter().all(|&x| x == 0.0));
    }
}
