use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{ExpWeights, Learner, OpeMemo, UpdateReport};
use crate::error::{Error, Result};
use crate::estimation::{doubling_check, Bonus, BonusConfig, Counters};
use crate::game::MarkovGame;
use crate::guard::Guards;
use crate::ope::{optimistic_best_response_set, CoverMode, OptimisticModel};
use crate::policy::{GeneralPolicy, MarkovPolicy, PolicyId, Side};
use crate::rng::SimRng;
use crate::trajectory::Trajectory;

/// Exponential weights over a class of optimistic best responses to
/// mixtures of the opponent policies seen so far, rebuilt on every restart.
///
/// OPE runs on lazy counters that are refreshed only at restarts. A restart
/// happens when the revealed policy is new or some visited cell has doubled
/// its count since the last refresh.
pub struct AdaptiveOpExp3 {
    game: Arc<MarkovGame>,
    epsilon: f64,
    cover: CoverMode,
    budget: usize,
    bonus: Bonus,
    counters: Counters,
    lazy: Counters,
    lazy_model: OptimisticModel,
    psi: Vec<GeneralPolicy>,
    psi_ids: HashSet<PolicyId>,
    last_restart: usize,
    restarts: usize,
    class: Vec<GeneralPolicy>,
    weights: ExpWeights,
    guards: Guards,
    memo: OpeMemo,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdaptiveCheckpoint {
    pub class_ids: Vec<PolicyId>,
    pub weights: ExpWeights,
    pub counters: Counters,
    pub lazy: Counters,
    pub psi_ids: Vec<PolicyId>,
    pub last_restart: usize,
    pub restarts: usize,
}

impl AdaptiveOpExp3 {
    /// `budget` is the planned number of episodes `K`; `epsilon` the cover
    /// radius (commonly `1 / K`).
    pub fn new(
        game: Arc<MarkovGame>,
        bonus_cfg: &BonusConfig,
        epsilon: f64,
        cover: CoverMode,
        guards: Guards,
    ) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon must be positive, got {epsilon}")));
        }
        let d = game.dims();
        let bonus = Bonus::new(&d, bonus_cfg)?;
        let lazy = Counters::new(d);
        let lazy_model = OptimisticModel::new(&game, &lazy, &bonus)?;
        let initial = MarkovPolicy::uniform(d, Side::Max).into_general();
        Ok(AdaptiveOpExp3 {
            epsilon,
            cover,
            budget: bonus_cfg.episodes,
            bonus,
            counters: Counters::new(d),
            lazy,
            lazy_model,
            psi: Vec::new(),
            psi_ids: HashSet::new(),
            last_restart: 0,
            restarts: 0,
            class: vec![initial],
            weights: ExpWeights::new(1),
            guards,
            memo: OpeMemo::default(),
            game,
        })
    }

    /// Rebuilds a learner from a checkpoint. `registry` must contain every
    /// policy listed in the checkpoint's `Psi`; the class is recomputed from
    /// the lazy counters and checked against the stored ids.
    pub fn restore(
        game: Arc<MarkovGame>,
        bonus_cfg: &BonusConfig,
        epsilon: f64,
        cover: CoverMode,
        guards: Guards,
        checkpoint: AdaptiveCheckpoint,
        registry: &HashMap<PolicyId, GeneralPolicy>,
    ) -> Result<Self> {
        let mut l = Self::new(game, bonus_cfg, epsilon, cover, guards)?;
        l.psi = checkpoint
            .psi_ids
            .iter()
            .map(|id| {
                registry
                    .get(id)
                    .cloned()
                    .ok_or_else(|| Error::Config(format!("checkpoint references unknown policy {id}")))
            })
            .collect::<Result<_>>()?;
        l.psi_ids = checkpoint.psi_ids.iter().copied().collect();
        l.lazy = checkpoint.lazy;
        l.counters = checkpoint.counters;
        l.last_restart = checkpoint.last_restart;
        l.restarts = checkpoint.restarts;
        l.lazy_model = OptimisticModel::new(&l.game, &l.lazy, &l.bonus)?;
        if !l.psi.is_empty() {
            l.class = optimistic_best_response_set(&l.lazy_model, &l.psi, l.epsilon, l.cover, &l.guards)?;
        }
        let ids: Vec<PolicyId> = l.class.iter().map(GeneralPolicy::id).collect();
        if ids != checkpoint.class_ids || checkpoint.weights.len() != ids.len() {
            return Err(Error::Config("recomputed class does not match the checkpoint".into()));
        }
        l.weights = checkpoint.weights;
        Ok(l)
    }

    /// `eta = sqrt(|Psi| ln K / ((k - m) H^2))`.
    pub fn rate(psi_size: usize, budget: usize, k: usize, last_restart: usize, horizon: usize) -> f64 {
        let h = horizon as f64;
        let span = (k - last_restart) as f64;
        (psi_size as f64 * (budget as f64).ln() / (span * h * h)).sqrt()
    }

    pub fn class(&self) -> &[GeneralPolicy] {
        &self.class
    }

    pub fn psi(&self) -> &[GeneralPolicy] {
        &self.psi
    }

    pub fn restarts(&self) -> usize {
        self.restarts
    }

    pub fn last_restart(&self) -> usize {
        self.last_restart
    }

    pub fn counters(&self) -> &Counters {
        &self.counters
    }

    pub fn lazy_counters(&self) -> &Counters {
        &self.lazy
    }

    pub fn weights(&self) -> &ExpWeights {
        &self.weights
    }

    fn restart(&mut self, revealed: &GeneralPolicy, k: usize) -> Result<()> {
        self.lazy = self.counters.clone();
        self.lazy_model = OptimisticModel::new(&self.game, &self.lazy, &self.bonus)?;
        if self.psi_ids.insert(revealed.id()) {
            self.psi.push(revealed.clone());
        }
        self.last_restart = k;
        self.class = optimistic_best_response_set(&self.lazy_model, &self.psi, self.epsilon, self.cover, &self.guards)?;
        self.weights = ExpWeights::new(self.class.len());
        self.restarts += 1;
        Ok(())
    }
}

impl Learner for AdaptiveOpExp3 {
    fn select(&mut self, rng: &mut SimRng) -> Result<GeneralPolicy> {
        Ok(self.class[self.weights.sample(rng)].clone())
    }

    fn update(&mut self, revealed: &GeneralPolicy, traj: &Trajectory, k: usize) -> Result<UpdateReport> {
        if k <= self.last_restart {
            return Err(Error::InvalidArgument(format!(
                "episode {k} is not after the last restart {}",
                self.last_restart
            )));
        }
        let values = self.memo.evaluate_class(&self.lazy_model, &self.class, revealed, &self.guards)?;
        self.weights.add(&values);
        let mut eta = Self::rate(self.psi.len(), self.budget, k, self.last_restart, self.game.horizon());
        self.weights.reweight(eta);
        self.counters.update(traj)?;
        let new_opponent = !self.psi_ids.contains(&revealed.id());
        let restart = new_opponent || doubling_check(&self.counters, &self.lazy, traj);
        if restart {
            self.restart(revealed, k)?;
            eta = 0.0;
        }
        Ok(UpdateReport {
            restart,
            psi_size: Some(self.psi.len()),
            eta,
        })
    }

    fn distribution(&self) -> Vec<(GeneralPolicy, f64)> {
        self.class.iter().cloned().zip(self.weights.probs().iter().copied()).collect()
    }

    fn checkpoint(&self) -> Result<serde_json::Value> {
        Ok(serde_json::to_value(AdaptiveCheckpoint {
            class_ids: self.class.iter().map(GeneralPolicy::id).collect(),
            weights: self.weights.clone(),
            counters: self.counters.clone(),
            lazy: self.lazy.clone(),
            psi_ids: self.psi.iter().map(GeneralPolicy::id).collect(),
            last_restart: self.last_restart,
            restarts: self.restarts,
        })?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reductions::matching_game;
    use crate::rng::rng_from_seed;
    use crate::trajectory::sample_episode;

    #[test]
    fn rate_formula() {
        let eta = AdaptiveOpExp3::rate(1, 16, 14, 10, 1);
        assert!((eta - (16f64.ln() / 4.0).sqrt()).abs() < 1e-15);
        assert!((eta - 0.8326).abs() < 1e-4);
    }

    #[test]
    fn first_episode_restarts() {
        let g = Arc::new(matching_game(1).unwrap());
        let mut l = AdaptiveOpExp3::new(g.clone(), &BonusConfig::new(16), 1.0 / 16.0, CoverMode::Auto, Guards::default())
            .unwrap();
        assert_eq!(l.class().len(), 1);
        let nu = MarkovPolicy::constant(g.dims(), Side::Min, 1).unwrap().into_general();
        let mut rng = rng_from_seed(0);
        let mu = l.select(&mut rng).unwrap();
        let t = sample_episode(&g, &mu, &nu, &mut rng).unwrap();
        let r = l.update(&nu, &t, 1).unwrap();
        assert!(r.restart);
        assert_eq!(r.psi_size, Some(1));
        assert_eq!(l.last_restart(), 1);
        assert_eq!(l.restarts(), 1);
    }

    #[test]
    fn repeated_opponent_with_stable_counts_does_not_restart() {
        let g = Arc::new(matching_game(1).unwrap());
        let mut l = AdaptiveOpExp3::new(g.clone(), &BonusConfig::new(64), 1.0 / 64.0, CoverMode::Auto, Guards::default())
            .unwrap();
        let nu = MarkovPolicy::constant(g.dims(), Side::Min, 0).unwrap().into_general();
        let mut rng = rng_from_seed(4);
        let mut restarts_at = Vec::new();
        for k in 1..=64 {
            let mu = l.select(&mut rng).unwrap();
            let t = sample_episode(&g, &mu, &nu, &mut rng).unwrap();
            let r = l.update(&nu, &t, k).unwrap();
            if r.restart {
                restarts_at.push(k);
            }
            // lazy-sync invariant
            let d = g.dims();
            for joint in 0..d.joint_actions() {
                let n = l.counters().visits(0, 0, joint);
                if n > 0 {
                    let lazy = l.lazy_counters().visits(0, 0, joint);
                    assert!(lazy >= 1 && n < 2 * lazy);
                }
            }
        }
        assert_eq!(l.psi().len(), 1);
        // only doubling restarts after the first episode: O(log K) of them
        assert!(restarts_at.len() <= 2 + 2 * 7, "{restarts_at:?}");
    }
}
