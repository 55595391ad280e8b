//! Visitation counters, the empirical transition model and the UCB bonus.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::GameDims;
use crate::trajectory::Trajectory;

/// Visitation counts `N_h(s, a)` and `N_h(s, a, s')`.
///
/// The same type holds the regular and the lazy counters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    dims: GameDims,
    visits: Vec<u64>,
    next: Vec<u64>,
}

impl Counters {
    pub fn new(dims: GameDims) -> Self {
        Counters {
            dims,
            visits: vec![0; dims.num_cells()],
            next: vec![0; dims.num_cells() * dims.num_states],
        }
    }

    /// Counters with the given `N_h(s, a, s')` table (flat, cell-major);
    /// the marginals are derived from it.
    pub fn from_next_counts(dims: GameDims, next: Vec<u64>) -> Result<Self> {
        if next.len() != dims.num_cells() * dims.num_states {
            return Err(Error::InvalidArgument(format!(
                "count table has {} entries, expected {}",
                next.len(),
                dims.num_cells() * dims.num_states
            )));
        }
        let visits = next.chunks(dims.num_states).map(|row| row.iter().sum()).collect();
        Ok(Counters { dims, visits, next })
    }

    pub fn dims(&self) -> GameDims {
        self.dims
    }

    /// Adds one visit for every `(h, s, a, s')` transition in `traj`.
    pub fn update(&mut self, traj: &Trajectory) -> Result<()> {
        let d = self.dims;
        if traj.len() != d.horizon {
            return Err(Error::InvalidArgument(format!(
                "trajectory has {} steps, expected {}",
                traj.len(),
                d.horizon
            )));
        }
        let mut cells = Vec::with_capacity(d.horizon);
        for (h, step) in traj.steps.iter().enumerate() {
            let next = traj.steps.get(h + 1).map_or(traj.final_state, |s| s.state);
            if step.state >= d.num_states
                || next >= d.num_states
                || step.action.a_max >= d.actions_max
                || step.action.a_min >= d.actions_min
            {
                return Err(Error::OutOfRange(format!("trajectory step {} out of range", h + 1)));
            }
            let cell = d.cell(h, step.state, d.joint_index(step.action.a_max, step.action.a_min));
            cells.push((cell, next));
        }
        for (cell, next) in cells {
            self.visits[cell] += 1;
            self.next[cell * d.num_states + next] += 1;
        }
        Ok(())
    }

    #[inline]
    pub fn visits(&self, h: usize, s: usize, joint: usize) -> u64 {
        self.visits[self.dims.cell(h, s, joint)]
    }

    pub fn next_counts(&self, h: usize, s: usize, joint: usize) -> &[u64] {
        let start = self.dims.cell(h, s, joint) * self.dims.num_states;
        &self.next[start..start + self.dims.num_states]
    }

    /// Flat `N_h(s, a)` table indexed by [`GameDims::cell`].
    pub fn visit_table(&self) -> &[u64] {
        &self.visits
    }

    /// `P_hat(. | s, a)`: empirical frequencies, or uniform for unvisited cells.
    pub fn empirical_transition(&self, h: usize, s: usize, joint: usize) -> Vec<f64> {
        let n = self.visits(h, s, joint);
        let k = self.dims.num_states;
        if n == 0 {
            return vec![1.0 / k as f64; k];
        }
        self.next_counts(h, s, joint).iter().map(|&c| c as f64 / n as f64).collect()
    }

    /// Total number of recorded transitions.
    pub fn total(&self) -> u64 {
        self.visits.iter().sum()
    }
}

/// Parameters of the bonus `beta(n) = sqrt(H^2 S iota / max(n, 1))` with
/// `iota = c ln(S A H K / delta)`, `A` the number of joint actions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BonusConfig {
    #[serde(default = "default_c")]
    pub c: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Planned number of episodes `K`.
    pub episodes: usize,
}

fn default_c() -> f64 {
    1.0
}

fn default_delta() -> f64 {
    0.05
}

impl BonusConfig {
    pub fn new(episodes: usize) -> Self {
        BonusConfig {
            c: default_c(),
            delta: default_delta(),
            episodes,
        }
    }

    pub fn iota(&self, dims: &GameDims) -> Result<f64> {
        if !(self.c > 0.0) || !(self.delta > 0.0 && self.delta < 1.0) || self.episodes == 0 {
            return Err(Error::Config(format!(
                "bonus needs c > 0, 0 < delta < 1 and K >= 1 (got c={}, delta={}, K={})",
                self.c, self.delta, self.episodes
            )));
        }
        let inner = (dims.num_states * dims.joint_actions() * dims.horizon * self.episodes) as f64 / self.delta;
        let iota = self.c * inner.ln();
        if !(iota > 0.0) {
            return Err(Error::Config(format!("iota = {iota} is not positive")));
        }
        Ok(iota)
    }
}

/// `beta(n)` bound to one game's `H` and `S`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bonus {
    scale: f64,
}

impl Bonus {
    pub fn new(dims: &GameDims, cfg: &BonusConfig) -> Result<Self> {
        Ok(Self::from_iota(dims, cfg.iota(dims)?))
    }

    pub fn from_iota(dims: &GameDims, iota: f64) -> Self {
        let h = dims.horizon as f64;
        Bonus {
            scale: h * h * dims.num_states as f64 * iota,
        }
    }

    /// A bonus that is identically zero.
    pub fn zero() -> Self {
        Bonus { scale: 0.0 }
    }

    #[inline]
    pub fn at(&self, n: u64) -> f64 {
        (self.scale / n.max(1) as f64).sqrt()
    }
}

/// `beta(n)` for the given game shape and configuration.
pub fn bonus(n: u64, dims: &GameDims, cfg: &BonusConfig) -> Result<f64> {
    Ok(Bonus::new(dims, cfg)?.at(n))
}

/// True iff some cell visited by `traj` has `N >= 2 N_lazy`.
///
/// `n` must already include `traj`; an unvisited lazy cell always triggers.
pub fn doubling_check(n: &Counters, lazy: &Counters, traj: &Trajectory) -> bool {
    let d = n.dims();
    traj.steps.iter().enumerate().any(|(h, step)| {
        let joint = d.joint_index(step.action.a_max, step.action.a_min);
        n.visits(h, step.state, joint) >= 2 * lazy.visits(h, step.state, joint)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::JointAction;
    use crate::trajectory::Step;

    fn dims() -> GameDims {
        GameDims {
            num_states: 2,
            actions_max: 2,
            actions_min: 2,
            horizon: 2,
            initial_state: 0,
        }
    }

    fn traj() -> Trajectory {
        let step = |state, a_max, a_min| Step {
            state,
            action: JointAction { a_max, a_min },
            reward: 0.0,
        };
        Trajectory {
            steps: vec![step(0, 1, 0), step(1, 0, 1)],
            final_state: 0,
        }
    }

    #[test]
    fn update_increments_visited_cells() {
        let d = dims();
        let mut c = Counters::new(d);
        c.update(&traj()).unwrap();
        assert_eq!(c.visits(0, 0, d.joint_index(1, 0)), 1);
        assert_eq!(c.visits(1, 1, d.joint_index(0, 1)), 1);
        assert_eq!(c.next_counts(0, 0, d.joint_index(1, 0)), &[0, 1]);
        assert_eq!(c.total(), 2);
        c.update(&traj()).unwrap();
        assert_eq!(c.visits(0, 0, d.joint_index(1, 0)), 2);
        assert_eq!(c.next_counts(1, 1, d.joint_index(0, 1)), &[2, 0]);
    }

    #[test]
    fn empirical_rows() {
        let d = GameDims { horizon: 1, num_states: 2, ..dims() };
        let c = Counters::from_next_counts(d, vec![3, 1, 0, 0, 0, 5, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0]).unwrap();
        assert_eq!(c.empirical_transition(0, 0, 0), vec![0.75, 0.25]);
        assert_eq!(c.empirical_transition(0, 0, 1), vec![0.5, 0.5]);
        assert_eq!(c.empirical_transition(0, 0, 2), vec![0.0, 1.0]);
        let d4 = GameDims { num_states: 4, horizon: 1, ..dims() };
        assert_eq!(Counters::new(d4).empirical_transition(0, 0, 0), vec![0.25; 4]);
    }

    #[test]
    fn bonus_formula() {
        let b = Bonus::from_iota(&dims(), 1.0);
        assert!((b.at(4) - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(b.at(0), b.at(1));
        assert_eq!(b.at(16), b.at(4) / 2.0);
        let cfg = BonusConfig::new(10);
        let expected = 1.0 * ((2 * 4 * 2 * 10) as f64 / 0.05).ln();
        assert!((cfg.iota(&dims()).unwrap() - expected).abs() < 1e-12);
        assert!(BonusConfig { delta: 1.5, ..cfg }.iota(&dims()).is_err());
    }

    #[test]
    fn doubling_trigger() {
        let d = dims();
        let t = traj();
        let mut n = Counters::new(d);
        let lazy = Counters::new(d);
        n.update(&t).unwrap();
        assert!(doubling_check(&n, &lazy, &t));
        let lazy = n.clone();
        n.update(&t).unwrap();
        assert!(doubling_check(&n, &lazy, &t));
        // lazy = 3, N = 5 everywhere visited
        let mut lazy = Counters::new(d);
        for _ in 0..3 {
            lazy.update(&t).unwrap();
        }
        let mut n = lazy.clone();
        n.update(&t).unwrap();
        n.update(&t).unwrap();
        assert!(!doubling_check(&n, &lazy, &t));
    }

    #[test]
    fn short_trajectory_rejected() {
        let mut c = Counters::new(dims());
        let mut t = traj();
        t.steps.pop();
        assert!(c.update(&t).is_err());
    }
}
