#![allow(dead_code)]

use cfmdp::{Dist, Mdp64, MdpDoc};
use cfmdp::mdp::{RewardDoc, TransitionDoc};
use indexmap::IndexMap;
use rand::Rng;

/// Random categorical vector with `len` positive entries summing to one.
pub fn random_probs(rng: &mut impl Rng, len: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..len).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = w.iter().sum();
    w.iter().map(|x| x / total).collect()
}

/// Random MDP where every action is available everywhere and rows have 1..=`max_support` successors.
pub fn random_mdp(rng: &mut impl Rng, ns: usize, na: usize, max_support: usize) -> Mdp64 {
    let states: Vec<String> = (0..ns).map(|i| format!("x{i}")).collect();
    let actions: Vec<String> = (0..na).map(|i| format!("u{i}")).collect();
    let mut transitions = Vec::new();
    let mut rewards = Vec::new();
    for s in 0..ns {
        for a in 0..na {
            let len = rng.random_range(1..=max_support.min(ns));
            let mut succ: Vec<usize> = (0..ns).collect();
            for i in 0..len {
                let j = rng.random_range(i..ns);
                succ.swap(i, j);
            }
            let probs = random_probs(rng, len);
            let to: IndexMap<String, f64> = succ[..len]
                .iter()
                .zip(probs)
                .map(|(&n, p)| (states[n].clone(), p))
                .collect();
            transitions.push(TransitionDoc { s: states[s].clone(), a: actions[a].clone(), to });
            rewards.push(RewardDoc {
                s: states[s].clone(),
                a: actions[a].clone(),
                r: rng.random_range(-3i32..=3) as f64,
            });
        }
    }
    let doc = MdpDoc {
        name: "random".into(),
        initial: IndexMap::from([(states[0].clone(), 1.0)]),
        states,
        actions,
        transitions,
        rewards,
    };
    Mdp64::from_doc(&doc).unwrap()
}

/// Total variation between an empirical count vector over `support` and `dist`.
pub fn tv_counts(support: &[usize], counts: &[usize], dist: &Dist<f64>) -> f64 {
    let n: usize = counts.iter().sum();
    let mut pairs: Vec<(usize, usize)> = support
        .iter()
        .copied()
        .zip(counts.iter().copied())
        .filter(|&(_, c)| c > 0)
        .collect();
    pairs.sort_unstable();
    let emp = Dist {
        next: pairs.iter().map(|p| p.0).collect(),
        prob: pairs.iter().map(|p| p.1 as f64 / n as f64).collect(),
    };
    emp.tv(dist)
}
