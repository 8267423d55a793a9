//! Slippery 4x4 grid with an absorbing goal and an absorbing danger cell.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{DocBuilder, Mdp, Policy};
use crate::scalar::Scalar;

pub const UP: usize = 0;
pub const DOWN: usize = 1;
pub const LEFT: usize = 2;
pub const RIGHT: usize = 3;
pub const STAY: usize = 4;

/// Seed of the default observed path; the scripted walk slips into danger at t = 3.
pub const GRIDWORLD_SEED: u64 = 0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridWorldConfig {
    pub width: usize,
    pub height: usize,
    pub start: (usize, usize),
    pub goal: (usize, usize),
    pub danger: (usize, usize),
    pub slip: f64,
    /// Per-step penalty per unit of Manhattan distance to the goal.
    pub distance_penalty: f64,
    pub goal_reward: f64,
    pub danger_reward: f64,
    pub horizon: usize,
}

impl Default for GridWorldConfig {
    fn default() -> Self {
        GridWorldConfig {
            width: 4,
            height: 4,
            start: (0, 0),
            goal: (3, 3),
            danger: (1, 2),
            slip: 0.1,
            distance_penalty: 1.0,
            goal_reward: 100.0,
            danger_reward: -100.0,
            horizon: 11,
        }
    }
}

impl GridWorldConfig {
    pub fn validate(&self) -> Result<()> {
        let inside = |(r, c): (usize, usize)| r < self.height && c < self.width;
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidConfig("grid must be non-empty".into()));
        }
        if !inside(self.start) || !inside(self.goal) || !inside(self.danger) {
            return Err(Error::InvalidConfig("start, goal and danger must lie on the grid".into()));
        }
        if self.danger == self.goal || self.goal == self.start || self.danger == self.start {
            return Err(Error::InvalidConfig("start, goal and danger must differ".into()));
        }
        if !(0.0..1.0).contains(&self.slip) {
            return Err(Error::InvalidConfig(format!("slip {} outside [0,1)", self.slip)));
        }
        Ok(())
    }

    pub fn index(&self, (r, c): (usize, usize)) -> usize {
        r * self.width + c
    }

    pub fn cell(&self, s: usize) -> (usize, usize) {
        (s / self.width, s % self.width)
    }

    fn shift(&self, (r, c): (usize, usize), dir: usize) -> (usize, usize) {
        match dir {
            UP if r > 0 => (r - 1, c),
            DOWN if r + 1 < self.height => (r + 1, c),
            LEFT if c > 0 => (r, c - 1),
            RIGHT if c + 1 < self.width => (r, c + 1),
            _ => (r, c),
        }
    }

    fn state_reward(&self, cell: (usize, usize)) -> f64 {
        if cell == self.goal {
            self.goal_reward
        } else if cell == self.danger {
            self.danger_reward
        } else {
            let d = cell.0.abs_diff(self.goal.0) + cell.1.abs_diff(self.goal.1);
            -self.distance_penalty * d as f64
        }
    }
}

pub fn build_gridworld<F: Scalar>(cfg: &GridWorldConfig) -> Result<Mdp<F>> {
    cfg.validate()?;
    let states = (0..cfg.width * cfg.height)
        .map(|s| {
            let (r, c) = cfg.cell(s);
            format!("r={r},c={c}")
        })
        .collect();
    let actions = ["up", "down", "left", "right", "stay"].map(String::from).to_vec();
    let mut b = DocBuilder::new("gridworld", states, actions);
    for s in 0..cfg.width * cfg.height {
        let cell = cfg.cell(s);
        let reward = cfg.state_reward(cell);
        if cell == cfg.goal || cell == cfg.danger {
            b.row(s, STAY, &[(s, 1.0)], reward);
            continue;
        }
        for dir in [UP, DOWN, LEFT, RIGHT] {
            let (p1, p2) = if dir == UP || dir == DOWN { (LEFT, RIGHT) } else { (UP, DOWN) };
            let to = [
                (cfg.index(cfg.shift(cell, dir)), 1.0 - cfg.slip),
                (cfg.index(cfg.shift(cell, p1)), cfg.slip / 2.0),
                (cfg.index(cfg.shift(cell, p2)), cfg.slip / 2.0),
            ];
            b.row(s, dir, &to, reward);
        }
    }
    b.initial(cfg.index(cfg.start));
    b.build()
}

/// Walks along the top toward the danger column, then down into it.
pub fn gridworld_policy(cfg: &GridWorldConfig) -> Policy {
    let (dr, dc) = cfg.danger;
    Policy::Stationary(
        (0..cfg.width * cfg.height)
            .map(|s| {
                let cell = cfg.cell(s);
                let (r, c) = cell;
                Some(if cell == cfg.goal || cell == cfg.danger {
                    STAY
                } else if c < dc {
                    RIGHT
                } else if c > dc {
                    LEFT
                } else if r < dr {
                    DOWN
                } else {
                    UP
                })
            })
            .collect(),
    )
}
