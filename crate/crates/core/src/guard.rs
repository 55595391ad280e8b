use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Environment variable that overrides [`Guards::history_nodes`].
pub const GUARD_NODES_ENV: &str = "MGLAB_GUARD_NODES";

/// Size limits for the exponential enumerations in this crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Guards {
    /// Maximum number of history-tree nodes visited by one recursion.
    pub history_nodes: u64,
    /// Maximum number of points in a simplex cover grid.
    pub cover_points: u64,
    /// Maximum number of deterministic Markov policies to enumerate.
    pub markov_candidates: u64,
}

impl Default for Guards {
    fn default() -> Self {
        Guards {
            history_nodes: 1_000_000,
            cover_points: 1_000_000,
            markov_candidates: 100_000,
        }
    }
}

impl Guards {
    /// Applies the `MGLAB_GUARD_NODES` override, if set.
    pub fn with_env_override(mut self) -> Result<Self> {
        if let Ok(raw) = std::env::var(GUARD_NODES_ENV) {
            self.history_nodes = raw.trim().parse().map_err(|_| {
                Error::Config(format!("{GUARD_NODES_ENV} must be a positive integer, got {raw:?}"))
            })?;
        }
        Ok(self)
    }
}

/// Counts visited nodes and fails once a bound is crossed.
#[derive(Debug)]
pub(crate) struct NodeBudget {
    used: u64,
    bound: u64,
    what: &'static str,
}

impl NodeBudget {
    pub(crate) fn new(bound: u64, what: &'static str) -> Self {
        NodeBudget { used: 0, bound, what }
    }

    #[inline]
    pub(crate) fn tick(&mut self) -> Result<()> {
        self.used += 1;
        if self.used > self.bound {
            return Err(Error::GuardExceeded {
                what: self.what,
                bound: self.bound,
            });
        }
        Ok(())
    }
}
