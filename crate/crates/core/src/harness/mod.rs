//! The episode loop, regret accounting, and experiment outputs.

mod config;
mod output;
mod regret;

use std::collections::HashMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::game::MarkovGame;
use crate::guard::Guards;
use crate::learners::Learner;
use crate::opponents::{Opponent, OpponentView};
use crate::policy::{GeneralPolicy, PolicyId};
use crate::rng::{derive_seed, rng_from_seed};
use crate::trajectory::{sample_episode, Trajectory};
use crate::value::exact_value;

pub use config::{
    build_learner, build_opponent, build_world, run_experiment, ClassSpec, ExperimentConfig, ExperimentResult, GameSpec, LearnerSpec, OpponentSpec,
    PolicySpec, World,
};
pub use output::{
    read_episode_csv, sha256_hex, write_episode_csv, write_outputs, write_regret_csv, Manifest, EPISODES_FILE,
    EPISODE_HEADER, MANIFEST_FILE, MANIFEST_FORMAT, REGRET_FILE, REGRET_HEADER, REGRET_REALIZED_FILE,
};
pub use regret::{
    deterministic_markov_candidates, hindsight_best_general, hindsight_best_markov, regret_against_class,
    regret_curves, Checkpoints, RegretOptions, RegretRow, RegretSeries,
};

/// One row of the episode log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub learner_policy_id: PolicyId,
    pub opponent_policy_id: PolicyId,
    pub realized_return: f64,
    /// `V^{mu_k x nu_k}(s_1)` under the true model. Never shown to the
    /// learner.
    pub exact_value: f64,
    pub restart: bool,
    pub psi_size: Option<usize>,
    pub eta: f64,
    /// Wall-clock time of the episode, or 0 when timing is off.
    pub micros: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    pub guards: Guards,
    /// Record wall-clock micros. Off by default so logs are reproducible.
    pub timing: bool,
}

/// Records plus the policies each side played.
#[derive(Debug, Clone)]
pub struct RunLog {
    pub records: Vec<EpisodeRecord>,
    pub revealed: Vec<GeneralPolicy>,
    pub learner_policies: Vec<GeneralPolicy>,
}

/// Plays `episodes` episodes. The learner, opponent, and environment draw
/// from generators derived from `seed` under separate labels.
pub fn run_episodes(
    game: &MarkovGame,
    learner: &mut dyn Learner,
    opponent: &mut dyn Opponent,
    episodes: usize,
    seed: u64,
    options: &RunOptions,
) -> Result<RunLog> {
    let mut learner_rng = rng_from_seed(derive_seed(seed, "learner"));
    let mut env_rng = rng_from_seed(derive_seed(seed, "environment"));
    let mut trajectories: Vec<Trajectory> = Vec::with_capacity(episodes);
    let mut revealed: Vec<GeneralPolicy> = Vec::with_capacity(episodes);
    let mut learner_policies = Vec::with_capacity(episodes);
    let mut records = Vec::with_capacity(episodes);
    let mut values: HashMap<(PolicyId, PolicyId), f64> = HashMap::new();
    for k in 1..=episodes {
        let at = |e: crate::error::Error| e.at_episode(k);
        let start = Instant::now();
        let mu = learner.select(&mut learner_rng).map_err(at)?;
        let nu = opponent
            .choose(&OpponentView {
                episode: k,
                trajectories: &trajectories,
                own_policies: &revealed,
            })
            .map_err(at)?;
        let traj = sample_episode(game, &mu, &nu, &mut env_rng).map_err(at)?;
        let report = learner.update(&nu, &traj, k).map_err(at)?;
        let micros = if options.timing {
            start.elapsed().as_micros() as u64
        } else {
            0
        };
        let exact = match values.get(&(mu.id(), nu.id())) {
            Some(&v) => v,
            None => {
                let v = exact_value(game, &mu, &nu, &options.guards).map_err(at)?;
                values.insert((mu.id(), nu.id()), v);
                v
            }
        };
        records.push(EpisodeRecord {
            episode: k,
            learner_policy_id: mu.id(),
            opponent_policy_id: nu.id(),
            realized_return: traj.realized_return(),
            exact_value: exact,
            restart: report.restart,
            psi_size: report.psi_size,
            eta: report.eta,
            micros,
        });
        trajectories.push(traj);
        revealed.push(nu);
        learner_policies.push(mu);
    }
    Ok(RunLog {
        records,
        revealed,
        learner_policies,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::FixedLearner;
    use crate::opponents::MatchingMemoryAdversary;
    use crate::policy::{MarkovPolicy, Side};
    use crate::reductions::matching_game;

    #[test]
    fn uniform_learner_in_matching_game() {
        let g = matching_game(1).unwrap();
        let mut l = FixedLearner::new(MarkovPolicy::uniform(g.dims(), Side::Max).into_general());
        let mut o = MatchingMemoryAdversary::new(&g, 3).unwrap();
        let log = run_episodes(&g, &mut l, &mut o, 20, 1, &RunOptions::default()).unwrap();
        assert_eq!(log.records.len(), 20);
        assert!(log.records.iter().all(|r| r.exact_value == 0.5 && r.micros == 0));
    }

    #[test]
    fn guard_errors_carry_the_episode() {
        let g = matching_game(8).unwrap();
        let mu = crate::testkit::random_history_policy(g.dims(), Side::Max, 0);
        let nu = crate::testkit::random_history_policy(g.dims(), Side::Min, 1);
        let mut l = FixedLearner::new(mu);
        let mut o = crate::opponents::FixedOpponent::new(&g, nu).unwrap();
        let opts = RunOptions {
            guards: Guards {
                history_nodes: 5,
                ..Guards::default()
            },
            timing: false,
        };
        let err = run_episodes(&g, &mut l, &mut o, 3, 1, &opts).unwrap_err();
        assert!(err.is_guard());
        assert!(err.to_string().starts_with("episode 1:"), "{err}");
    }
}
