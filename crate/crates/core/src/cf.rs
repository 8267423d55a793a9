//! Counterfactual MDPs: time-layered kernels estimated from posterior noise.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use crate::error::Result;
use crate::gumbel::{argmax_row, GumbelPosterior};
use crate::mdp::{Dist, Mdp, ObservedPath};
use crate::scalar::Scalar;

/// A time-layered kernel over nodes `(state, t)`, `t = 0..=T`, rooted at `(root, 0)`.
///
/// Implemented by the counterfactual MDP and by the plain unrolling of the
/// nominal MDP, so pruning and solving work on either.
pub trait LayeredKernel<F: Scalar>: Sync {
    fn mdp(&self) -> &Mdp<F>;
    fn horizon(&self) -> usize;
    fn root(&self) -> usize;
    /// Transition row at layer `t < T`. Errors if `a` is unavailable at `s`.
    fn layer_row(&self, t: usize, s: usize, a: usize) -> Result<Arc<Dist<F>>>;
}

/// Estimated counterfactual row for `(t, s, a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CfKernelEstimate<F> {
    pub t: usize,
    pub s: usize,
    pub a: usize,
    pub dist: Dist<F>,
    pub n_samples: usize,
}

/// Empirical argmax distribution of the mechanism at `(s, a)` over the time-`t` samples.
pub fn cf_transition<F: Scalar>(
    posterior: &GumbelPosterior<F>,
    mdp: &Mdp<F>,
    t: usize,
    s: usize,
    a: usize,
) -> Result<CfKernelEstimate<F>> {
    let row = mdp.require_row(s, a)?;
    let n = posterior.n_samples();
    let dist = if row.dist.is_dirac() {
        row.dist.clone()
    } else {
        let mut counts = vec![0usize; row.dist.len()];
        for g in posterior.layers[t].iter() {
            let winner = argmax_row(row, g);
            counts[row.dist.next.binary_search(&winner).unwrap()] += 1;
        }
        let nf = F::lit(n as f64);
        let mut next = Vec::new();
        let mut prob = Vec::new();
        for (k, &c) in counts.iter().enumerate() {
            if c > 0 {
                next.push(row.dist.next[k]);
                prob.push(F::lit(c as f64) / nf);
            }
        }
        Dist { next, prob }
    };
    Ok(CfKernelEstimate {
        t,
        s,
        a,
        dist,
        n_samples: n,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
}

/// Counterfactual MDP of an observed path. Rows are computed on demand and memoized.
pub struct CfMdp<'a, F: Scalar> {
    mdp: &'a Mdp<F>,
    posterior: &'a GumbelPosterior<F>,
    root: usize,
    cache: RwLock<HashMap<(usize, usize, usize), Arc<Dist<F>>>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

/// Counterfactual MDP with initial mass on `s_0` and layer kernels from `posterior`.
pub fn build_cf_mdp<'a, F: Scalar>(
    posterior: &'a GumbelPosterior<F>,
    mdp: &'a Mdp<F>,
    path: &ObservedPath,
) -> CfMdp<'a, F> {
    assert_eq!(posterior.horizon(), path.horizon(), "posterior built for another path");
    CfMdp {
        mdp,
        posterior,
        root: path.state(0),
        cache: RwLock::new(HashMap::new()),
        hits: AtomicU64::new(0),
        misses: AtomicU64::new(0),
    }
}

impl<'a, F: Scalar> CfMdp<'a, F> {
    pub fn n_layers(&self) -> usize {
        self.posterior.horizon() + 1
    }

    pub fn posterior(&self) -> &GumbelPosterior<F> {
        self.posterior
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
        }
    }
}

impl<F: Scalar> LayeredKernel<F> for CfMdp<'_, F> {
    fn mdp(&self) -> &Mdp<F> {
        self.mdp
    }

    fn horizon(&self) -> usize {
        self.posterior.horizon()
    }

    fn root(&self) -> usize {
        self.root
    }

    fn layer_row(&self, t: usize, s: usize, a: usize) -> Result<Arc<Dist<F>>> {
        if let Some(d) = self.cache.read().unwrap().get(&(t, s, a)) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(d.clone());
        }
        // Concurrent misses on one key compute the same value; the first insert wins.
        let est = cf_transition(self.posterior, self.mdp, t, s, a)?;
        self.misses.fetch_add(1, Ordering::Relaxed);
        let mut cache = self.cache.write().unwrap();
        Ok(cache
            .entry((t, s, a))
            .or_insert_with(|| Arc::new(est.dist))
            .clone())
    }
}

/// The nominal MDP unrolled over `T` layers from a fixed root.
pub struct NominalUnrolling<'a, F: Scalar> {
    mdp: &'a Mdp<F>,
    horizon: usize,
    root: usize,
}

impl<'a, F: Scalar> NominalUnrolling<'a, F> {
    pub fn new(mdp: &'a Mdp<F>, root: usize, horizon: usize) -> Self {
        NominalUnrolling { mdp, horizon, root }
    }
}

impl<F: Scalar> LayeredKernel<F> for NominalUnrolling<'_, F> {
    fn mdp(&self) -> &Mdp<F> {
        self.mdp
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn root(&self) -> usize {
        self.root
    }

    fn layer_row(&self, _t: usize, s: usize, a: usize) -> Result<Arc<Dist<F>>> {
        Ok(Arc::new(self.mdp.require_row(s, a)?.dist.clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gumbel::{build_posterior, Sampler};
    use crate::mdp::tests::random_doc;
    use crate::mdp::{sample_path, MdpDoc, Policy, TransitionDoc};
    use indexmap::IndexMap;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_chain() -> Mdp<f64> {
        let row = |s: &str, a: &str, to: &[(&str, f64)]| TransitionDoc {
            s: s.into(),
            a: a.into(),
            to: to.iter().map(|(n, p)| (n.to_string(), *p)).collect(),
        };
        Mdp::from_doc(&MdpDoc {
            name: "tiny-chain".into(),
            states: vec!["x0".into(), "x1".into(), "x2".into()],
            actions: vec!["a".into(), "b".into()],
            transitions: vec![
                row("x0", "a", &[("x1", 0.9), ("x2", 0.1)]),
                row("x0", "b", &[("x1", 0.1), ("x2", 0.9)]),
                row("x1", "a", &[("x1", 1.0)]),
                row("x2", "a", &[("x2", 1.0)]),
            ],
            rewards: vec![],
            initial: IndexMap::from([("x0".into(), 1.0)]),
        })
        .unwrap()
    }

    #[test]
    fn tiny_chain_intervention_is_certain() {
        let m = tiny_chain();
        let path = ObservedPath {
            steps: vec![(0, 0)],
            final_state: Some(2),
        };
        for sampler in [Sampler::TopDown, Sampler::Rejection] {
            let post = build_posterior(&m, &path, 100_000, sampler, 4).unwrap();
            let est = cf_transition(&post, &m, 0, 0, 1).unwrap();
            assert_eq!(est.dist, Dist::dirac(2), "{sampler}");
        }
    }

    #[test]
    fn tiny_chain_rejection_oracle() {
        // G_x2 - G_x1 > ln 9 under the posterior, so b always picks x2.
        let m = tiny_chain();
        let set = crate::gumbel::posterior_sample_rejection(&m, 0, 0, 2, 1_000_000, 12).unwrap();
        let row_b = m.row(0, 1).unwrap();
        assert!(set.iter().all(|g| argmax_row(row_b, g) == 2));
        assert!(set.iter().all(|g| g[2] - g[1] > 9f64.ln()));
    }

    #[test]
    fn replay_rows_are_exact_diracs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = Mdp::<f64>::from_doc(&random_doc(&mut rng, 5, 3)).unwrap();
        let path = sample_path(&m, &Policy::Stationary(vec![Some(2); 5]), 6, 1).unwrap();
        let post = build_posterior(&m, &path, 1000, Sampler::TopDown, 2).unwrap();
        let cf = build_cf_mdp(&post, &m, &path);
        assert_eq!(cf.n_layers(), 7);
        for t in 0..6 {
            let (s, a) = path.steps[t];
            let d = cf.layer_row(t, s, a).unwrap();
            assert_eq!(*d, Dist::dirac(path.next_state(t).unwrap()));
        }
    }

    #[test]
    fn estimates_are_normalized_and_supported() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = Mdp::<f64>::from_doc(&random_doc(&mut rng, 5, 2)).unwrap();
        let path = sample_path(&m, &Policy::Stationary(vec![Some(0); 5]), 3, 4).unwrap();
        let post = build_posterior(&m, &path, 777, Sampler::TopDown, 3).unwrap();
        for t in 0..3 {
            for s in 0..5 {
                for a in 0..2 {
                    let est = cf_transition(&post, &m, t, s, a).unwrap();
                    let sum: f64 = est.dist.prob.iter().sum();
                    assert!((sum - 1.0).abs() < 1e-9);
                    let nominal = &m.row(s, a).unwrap().dist;
                    assert!(est.dist.next.iter().all(|n| nominal.contains(*n)));
                }
            }
        }
    }

    #[test]
    fn cache_hits_and_identical_values() {
        let m = tiny_chain();
        let path = ObservedPath {
            steps: vec![(0, 0)],
            final_state: Some(2),
        };
        let post = build_posterior(&m, &path, 1000, Sampler::TopDown, 1).unwrap();
        let cf = build_cf_mdp(&post, &m, &path);
        let rows: Vec<_> = std::thread::scope(|sc| {
            let hs: Vec<_> = (0..4)
                .map(|_| sc.spawn(|| cf.layer_row(0, 0, 1).unwrap()))
                .collect();
            hs.into_iter().map(|h| h.join().unwrap()).collect()
        });
        assert!(rows.windows(2).all(|w| w[0] == w[1]));
        let st = cf.stats();
        assert_eq!(st.hits + st.misses, 4);
        assert!(st.misses >= 1);
    }
}
