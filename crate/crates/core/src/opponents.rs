//! Adversaries for the revealed-policy protocol.
//!
//! An opponent commits to a policy before the episode is played, seeing only
//! past trajectories and its own past policies. The harness reveals the
//! returned object to the learner after the episode.

use rand::Rng;

use crate::error::{Error, Result};
use crate::game::MarkovGame;
use crate::guard::Guards;
use crate::policy::{GeneralPolicy, MarkovPolicy, MixedWeights, Side};
use crate::reductions::{LmdpReduction, PomdpReduction};
use crate::rng::{rng_from_seed, sample_index, SimRng};
use crate::trajectory::Trajectory;

/// Everything an opponent may look at when choosing episode `episode`.
#[derive(Debug, Clone, Copy)]
pub struct OpponentView<'a> {
    /// 1-based index of the episode about to be played.
    pub episode: usize,
    pub trajectories: &'a [Trajectory],
    pub own_policies: &'a [GeneralPolicy],
}

pub trait Opponent: Send {
    fn choose(&mut self, view: &OpponentView<'_>) -> Result<GeneralPolicy>;
}

fn check_min_policy(game: &MarkovGame, p: &GeneralPolicy) -> Result<()> {
    if p.side() != Side::Min || p.dims() != game.dims() {
        return Err(Error::WrongGameShape(format!(
            "opponent policy {} is not a min-player policy for this game",
            p.id()
        )));
    }
    Ok(())
}

/// Plays the same policy every episode.
pub struct FixedOpponent {
    policy: GeneralPolicy,
}

impl FixedOpponent {
    pub fn new(game: &MarkovGame, policy: GeneralPolicy) -> Result<Self> {
        check_min_policy(game, &policy)?;
        Ok(FixedOpponent { policy })
    }
}

impl Opponent for FixedOpponent {
    fn choose(&mut self, _: &OpponentView<'_>) -> Result<GeneralPolicy> {
        Ok(self.policy.clone())
    }
}

/// Draws i.i.d. from a finite class each episode.
pub struct FiniteClassSampler {
    policies: Vec<GeneralPolicy>,
    weights: MixedWeights,
    rng: SimRng,
}

impl FiniteClassSampler {
    /// `weights = None` means uniform.
    pub fn new(game: &MarkovGame, policies: Vec<GeneralPolicy>, weights: Option<MixedWeights>, seed: u64) -> Result<Self> {
        if policies.is_empty() {
            return Err(Error::EmptyClass);
        }
        for p in &policies {
            check_min_policy(game, p)?;
        }
        let weights = match weights {
            Some(w) if w.len() != policies.len() => {
                return Err(Error::InvalidArgument(format!(
                    "{} weights for {} policies",
                    w.len(),
                    policies.len()
                )))
            }
            Some(w) => w,
            None => MixedWeights::uniform(policies.len())?,
        };
        Ok(FiniteClassSampler {
            policies,
            weights,
            rng: rng_from_seed(seed),
        })
    }

    pub fn policies(&self) -> &[GeneralPolicy] {
        &self.policies
    }
}

impl Opponent for FiniteClassSampler {
    fn choose(&mut self, _: &OpponentView<'_>) -> Result<GeneralPolicy> {
        let i = sample_index(self.weights.as_slice(), &mut self.rng);
        Ok(self.policies[i].clone())
    }
}

/// Plays `first` through episode `switch_at` and `second` afterwards.
pub struct Switcher {
    first: GeneralPolicy,
    second: GeneralPolicy,
    switch_at: usize,
}

impl Switcher {
    pub fn new(game: &MarkovGame, first: GeneralPolicy, second: GeneralPolicy, switch_at: usize) -> Result<Self> {
        check_min_policy(game, &first)?;
        check_min_policy(game, &second)?;
        Ok(Switcher {
            first,
            second,
            switch_at,
        })
    }
}

impl Opponent for Switcher {
    fn choose(&mut self, view: &OpponentView<'_>) -> Result<GeneralPolicy> {
        Ok(if view.episode <= self.switch_at {
            self.first.clone()
        } else {
            self.second.clone()
        })
    }
}

/// Cycles through a list, one policy per episode.
pub struct Cycle {
    policies: Vec<GeneralPolicy>,
}

impl Cycle {
    pub fn new(game: &MarkovGame, policies: Vec<GeneralPolicy>) -> Result<Self> {
        if policies.is_empty() {
            return Err(Error::EmptyClass);
        }
        for p in &policies {
            check_min_policy(game, p)?;
        }
        Ok(Cycle { policies })
    }
}

impl Opponent for Cycle {
    fn choose(&mut self, view: &OpponentView<'_>) -> Result<GeneralPolicy> {
        Ok(self.policies[(view.episode - 1) % self.policies.len()].clone())
    }
}

/// Against the matching game: each episode plays a fresh uniformly random
/// bit string `b_1, ..., b_H` as a deterministic policy.
pub struct MatchingMemoryAdversary {
    game_dims: crate::game::GameDims,
    rng: SimRng,
}

impl MatchingMemoryAdversary {
    pub fn new(game: &MarkovGame, seed: u64) -> Result<Self> {
        let d = game.dims();
        if d.num_states != 1 || d.actions_max != 2 || d.actions_min != 2 {
            return Err(Error::WrongGameShape(
                "the matching-memory adversary needs one state and binary actions".into(),
            ));
        }
        Ok(MatchingMemoryAdversary {
            game_dims: d,
            rng: rng_from_seed(seed),
        })
    }

    /// The policy playing `bits[h]` at step `h`.
    pub fn bit_policy(&self, bits: &[usize]) -> Result<GeneralPolicy> {
        let label: String = bits.iter().map(|b| if *b == 1 { '1' } else { '0' }).collect();
        Ok(MarkovPolicy::deterministic(self.game_dims, Side::Min, bits)?
            .into_general()
            .with_label(&format!("bits-{label}")))
    }
}

impl Opponent for MatchingMemoryAdversary {
    fn choose(&mut self, _: &OpponentView<'_>) -> Result<GeneralPolicy> {
        let bits: Vec<usize> = (0..self.game_dims.horizon).map(|_| self.rng.gen_range(0..2)).collect();
        self.bit_policy(&bits)
    }
}

/// The fixed general policy that simulates a POMDP.
pub fn pomdp_adversary(reduction: &PomdpReduction, guards: &Guards) -> Result<FixedOpponent> {
    let policy = reduction.adversary(guards)?;
    FixedOpponent::new(&reduction.game, policy)
}

/// Draws one component policy per episode with the mixing weights.
pub fn lmdp_adversary(reduction: &LmdpReduction, seed: u64) -> Result<FiniteClassSampler> {
    FiniteClassSampler::new(
        &reduction.game,
        reduction.opponents.clone(),
        Some(reduction.weights.clone()),
        seed,
    )
}
