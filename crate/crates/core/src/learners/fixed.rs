use super::{Learner, UpdateReport};
use crate::error::Result;
use crate::policy::GeneralPolicy;
use crate::rng::SimRng;
use crate::trajectory::Trajectory;

/// Plays the same policy every episode.
pub struct FixedLearner {
    policy: GeneralPolicy,
}

impl FixedLearner {
    pub fn new(policy: GeneralPolicy) -> Self {
        FixedLearner { policy }
    }
}

impl Learner for FixedLearner {
    fn select(&mut self, _: &mut SimRng) -> Result<GeneralPolicy> {
        Ok(self.policy.clone())
    }

    fn update(&mut self, _: &GeneralPolicy, _: &Trajectory, _: usize) -> Result<UpdateReport> {
        Ok(UpdateReport {
            restart: false,
            psi_size: None,
            eta: 0.0,
        })
    }

    fn distribution(&self) -> Vec<(GeneralPolicy, f64)> {
        vec![(self.policy.clone(), 1.0)]
    }

    fn checkpoint(&self) -> Result<serde_json::Value> {
        Ok(serde_json::json!({ "policy_id": self.policy.id() }))
    }
}
