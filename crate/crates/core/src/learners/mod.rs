//! Learners for the revealed-policy protocol.
//!
//! Each episode the harness calls [`Learner::select`], plays the episode, and
//! then calls [`Learner::update`] with the opponent's revealed policy and the
//! trajectory. The exponential-weights learners here get a full-information
//! gain for every policy in their class (optimistic values against the
//! revealed policy), so no importance weighting is involved even though the
//! algorithms carry the EXP3 name.

mod adaptive;
mod exp_weights;
mod fixed;
mod op_exp3;

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::guard::Guards;
use crate::ope::{ope_evaluate_fast, OptimisticModel};
use crate::policy::{GeneralPolicy, PolicyId};
use crate::rng::SimRng;
use crate::trajectory::Trajectory;

pub use adaptive::{AdaptiveCheckpoint, AdaptiveOpExp3};
pub use exp_weights::{exp_weights_distribution, CompensatedSum, ExpWeights};
pub use fixed::FixedLearner;
pub use op_exp3::{ModelKind, OpExp3, OpExp3Checkpoint};

/// What an update did, for the episode log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateReport {
    pub restart: bool,
    /// `|Psi|` after the update, for learners that track revealed policies.
    pub psi_size: Option<usize>,
    /// Rate used for the next distribution.
    pub eta: f64,
}

pub trait Learner: Send {
    /// Draws this episode's policy.
    fn select(&mut self, rng: &mut SimRng) -> Result<GeneralPolicy>;

    /// Processes episode `k` (1-based) given the revealed opponent policy.
    fn update(&mut self, revealed: &GeneralPolicy, traj: &Trajectory, k: usize) -> Result<UpdateReport>;

    /// Current distribution over the learner's class, in class order.
    fn distribution(&self) -> Vec<(GeneralPolicy, f64)>;

    /// Resumable state as JSON.
    fn checkpoint(&self) -> Result<serde_json::Value>;
}

/// Class size at which the OPE loop fans out over threads.
pub const PARALLEL_OPE_THRESHOLD: usize = 64;

/// OPE values keyed by `(model snapshot, mu, nu)`. Entries for older
/// snapshots are dropped when the snapshot changes.
#[derive(Debug, Default, Clone)]
pub(crate) struct OpeMemo {
    snapshot: Option<u64>,
    values: HashMap<(PolicyId, PolicyId), f64>,
}

impl OpeMemo {
    /// `OPE(mu x nu)` for every `mu` in `class`, in class order.
    pub(crate) fn evaluate_class(
        &mut self,
        model: &OptimisticModel,
        class: &[GeneralPolicy],
        nu: &GeneralPolicy,
        guards: &Guards,
    ) -> Result<Vec<f64>> {
        if self.snapshot != Some(model.snapshot_id()) {
            self.snapshot = Some(model.snapshot_id());
            self.values.clear();
        }
        let lookup = |mu: &GeneralPolicy| -> Result<(f64, bool)> {
            match self.values.get(&(mu.id(), nu.id())) {
                Some(&v) => Ok((v, false)),
                None => Ok((ope_evaluate_fast(model, mu, nu, guards)?, true)),
            }
        };
        let results: Vec<(f64, bool)> = if class.len() >= PARALLEL_OPE_THRESHOLD {
            class.par_iter().map(lookup).collect::<Result<_>>()?
        } else {
            class.iter().map(lookup).collect::<Result<_>>()?
        };
        for (mu, &(v, fresh)) in class.iter().zip(&results) {
            if fresh {
                self.values.insert((mu.id(), nu.id()), v);
            }
        }
        Ok(results.into_iter().map(|(v, _)| v).collect())
    }
}
