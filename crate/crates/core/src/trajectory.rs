use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{JointAction, MarkovGame};
use crate::policy::{GeneralPolicy, Side};
use crate::rng::{sample_index, SimRng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub state: usize,
    pub action: JointAction,
    pub reward: f64,
}

/// One played episode: `H` steps plus the state reached after the last one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<Step>,
    pub final_state: usize,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// The encoded prefix `tau_h = (s_1, a_1, ..., s_h)` for 1-based `h`,
    /// with `h = len + 1` giving the prefix that ends at the final state.
    pub fn prefix(&self, h: usize, actions_min: usize) -> Vec<u32> {
        assert!(h >= 1 && h <= self.steps.len() + 1, "prefix length {h} out of range");
        let mut out = Vec::with_capacity(2 * h - 1);
        for (i, step) in self.steps.iter().enumerate() {
            out.push(step.state as u32);
            if i + 1 == h {
                return out;
            }
            out.push((step.action.a_max * actions_min + step.action.a_min) as u32);
        }
        out.push(self.final_state as u32);
        out
    }

    pub fn realized_return(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }
}

/// Plays one episode of `mu x nu`.
///
/// Actions at each step are drawn independently from the two policies'
/// distributions at the current prefix (max-player first), then the next state
/// from `P_h`.
pub fn sample_episode(
    game: &MarkovGame,
    mu: &GeneralPolicy,
    nu: &GeneralPolicy,
    rng: &mut SimRng,
) -> Result<Trajectory> {
    let d = game.dims();
    check_sides(game, mu, nu)?;
    let mut hist: Vec<u32> = Vec::with_capacity(2 * d.horizon + 1);
    let mut steps = Vec::with_capacity(d.horizon);
    let mut state = d.initial_state;
    hist.push(state as u32);
    for h in 0..d.horizon {
        let a_max = sample_index(&mu.probs(&hist)?, rng);
        let a_min = sample_index(&nu.probs(&hist)?, rng);
        let joint = d.joint_index(a_max, a_min);
        let reward = game.reward(h, state, joint);
        let next = sample_index(game.next_state_dist(h, state, joint), rng);
        steps.push(Step {
            state,
            action: JointAction { a_max, a_min },
            reward,
        });
        hist.push(joint as u32);
        hist.push(next as u32);
        state = next;
    }
    Ok(Trajectory {
        steps,
        final_state: state,
    })
}

pub(crate) fn check_sides(game: &MarkovGame, mu: &GeneralPolicy, nu: &GeneralPolicy) -> Result<()> {
    if mu.side() != Side::Max || nu.side() != Side::Min {
        return Err(Error::PolicyFault(
            "expected a max-player policy and a min-player policy".into(),
        ));
    }
    if mu.dims() != game.dims() || nu.dims() != game.dims() {
        return Err(Error::PolicyFault("policy built for a different game shape".into()));
    }
    Ok(())
}
