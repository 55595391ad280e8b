use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{ExpWeights, Learner, OpeMemo, UpdateReport};
use crate::error::{Error, Result};
use crate::estimation::{Bonus, BonusConfig, Counters};
use crate::game::MarkovGame;
use crate::guard::Guards;
use crate::ope::OptimisticModel;
use crate::policy::{GeneralPolicy, PolicyId};
use crate::rng::SimRng;
use crate::trajectory::Trajectory;

/// Which model the optimistic evaluation runs on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Empirical transitions from the learner's counters plus the bonus.
    #[default]
    Empirical,
    /// The true transitions and no bonus: full-information Hedge over the
    /// class.
    Known,
}

/// Exponential weights over a fixed class with optimistic value gains.
pub struct OpExp3 {
    game: Arc<MarkovGame>,
    class: Vec<GeneralPolicy>,
    weights: ExpWeights,
    counters: Counters,
    bonus: Bonus,
    kind: ModelKind,
    known: Option<OptimisticModel>,
    episodes: usize,
    guards: Guards,
    memo: OpeMemo,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OpExp3Checkpoint {
    pub class_ids: Vec<PolicyId>,
    pub weights: ExpWeights,
    pub counters: Counters,
    pub episodes: usize,
}

impl OpExp3 {
    pub fn new(
        game: Arc<MarkovGame>,
        class: Vec<GeneralPolicy>,
        bonus_cfg: &BonusConfig,
        kind: ModelKind,
        guards: Guards,
    ) -> Result<Self> {
        if class.is_empty() {
            return Err(Error::EmptyClass);
        }
        let d = game.dims();
        for mu in &class {
            if mu.side() != crate::policy::Side::Max || mu.dims() != d {
                return Err(Error::PolicyFault(format!(
                    "class member {} is not a max-player policy for this game",
                    mu.id()
                )));
            }
        }
        let bonus = Bonus::new(&d, bonus_cfg)?;
        let known = (kind == ModelKind::Known).then(|| OptimisticModel::exact(&game));
        Ok(OpExp3 {
            weights: ExpWeights::new(class.len()),
            counters: Counters::new(d),
            bonus,
            kind,
            known,
            episodes: 0,
            guards,
            memo: OpeMemo::default(),
            class,
            game,
        })
    }

    pub fn restore(
        game: Arc<MarkovGame>,
        class: Vec<GeneralPolicy>,
        bonus_cfg: &BonusConfig,
        kind: ModelKind,
        guards: Guards,
        checkpoint: OpExp3Checkpoint,
    ) -> Result<Self> {
        let mut learner = Self::new(game, class, bonus_cfg, kind, guards)?;
        let ids: Vec<PolicyId> = learner.class.iter().map(GeneralPolicy::id).collect();
        if ids != checkpoint.class_ids || checkpoint.weights.len() != ids.len() {
            return Err(Error::Config("checkpoint class does not match the configured class".into()));
        }
        if checkpoint.counters.dims() != learner.game.dims() {
            return Err(Error::Config("checkpoint counters built for a different game".into()));
        }
        learner.weights = checkpoint.weights;
        learner.counters = checkpoint.counters;
        learner.episodes = checkpoint.episodes;
        Ok(learner)
    }

    pub fn class(&self) -> &[GeneralPolicy] {
        &self.class
    }

    pub fn weights(&self) -> &ExpWeights {
        &self.weights
    }

    pub fn counters(&self) -> &Counters {
        &self.counters
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    /// `eta_k = sqrt(ln |Phi| / (k H^2))`.
    pub fn rate(class_size: usize, k: usize, horizon: usize) -> f64 {
        let h = horizon as f64;
        ((class_size as f64).ln() / (k as f64 * h * h)).sqrt()
    }
}

impl Learner for OpExp3 {
    fn select(&mut self, rng: &mut SimRng) -> Result<GeneralPolicy> {
        Ok(self.class[self.weights.sample(rng)].clone())
    }

    fn update(&mut self, revealed: &GeneralPolicy, traj: &Trajectory, k: usize) -> Result<UpdateReport> {
        // OPE against the counters from the start of this episode
        let values = match &self.known {
            Some(model) => self.memo.evaluate_class(model, &self.class, revealed, &self.guards)?,
            None => {
                let model = OptimisticModel::new(&self.game, &self.counters, &self.bonus)?;
                self.memo.evaluate_class(&model, &self.class, revealed, &self.guards)?
            }
        };
        self.weights.add(&values);
        let eta = Self::rate(self.class.len(), k, self.game.horizon());
        self.weights.reweight(eta);
        self.counters.update(traj)?;
        self.episodes = k;
        Ok(UpdateReport {
            restart: false,
            psi_size: None,
            eta,
        })
    }

    fn distribution(&self) -> Vec<(GeneralPolicy, f64)> {
        self.class.iter().cloned().zip(self.weights.probs().iter().copied()).collect()
    }

    fn checkpoint(&self) -> Result<serde_json::Value> {
        Ok(serde_json::to_value(OpExp3Checkpoint {
            class_ids: self.class.iter().map(GeneralPolicy::id).collect(),
            weights: self.weights.clone(),
            counters: self.counters.clone(),
            episodes: self.episodes,
        })?)
    }
}
