//! Nine-state example MDP with a single branching transition.
//!
//! `s0 -a0-> {s2, s3}` is the only stochastic row. The remaining edges are
//! deterministic: `s0 -a1-> s1`, `s1 -a0-> s4`, `s2 -a0-> s5`, `s3 -a0-> s5`,
//! `s3 -a1-> s6`, and `s4`, `s5`, `s6` all lead to `s8` under `a0`. `s7` is an
//! isolated self-loop and `s8` is absorbing. The observed path is
//! `s0 -a0-> s2 -a0-> s5 -a0-> s8`.

use crate::error::Result;
use crate::mdp::{DocBuilder, Mdp, ObservedPath};
use crate::scalar::Scalar;

pub const TOY_HORIZON: usize = 3;

pub fn build_toy<F: Scalar>() -> Result<(Mdp<F>, ObservedPath)> {
    let states = (0..9).map(|i| format!("s{i}")).collect();
    let mut b = DocBuilder::new("toy", states, vec!["a0".into(), "a1".into()]);
    b.row(0, 0, &[(2, 0.5), (3, 0.5)], 0.0);
    b.row(0, 1, &[(1, 1.0)], 0.0);
    b.row(1, 0, &[(4, 1.0)], 0.0);
    b.row(2, 0, &[(5, 1.0)], 0.0);
    b.row(3, 0, &[(5, 1.0)], 0.0);
    b.row(3, 1, &[(6, 1.0)], 0.0);
    for s in [4, 5, 6] {
        b.row(s, 0, &[(8, 1.0)], 0.0);
    }
    b.row(7, 0, &[(7, 1.0)], 0.0);
    b.row(8, 0, &[(8, 1.0)], 0.0);
    b.initial(0);
    let mdp = b.build()?;
    let path = ObservedPath {
        steps: vec![(0, 0), (2, 0), (5, 0)],
        final_state: Some(8),
    };
    Ok((mdp, path))
}
