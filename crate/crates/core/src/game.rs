//! The tabular episodic two-player zero-sum Markov game.
//!
//! Steps are 0-based internally (`h = 0..horizon`); the max-player receives
//! `r_h(s, a, b)` and the min-player pays it. Tables are stored flat with the
//! joint action index `a * actions_min + b`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on transition row sums.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// Shape of a game, shared by policies built for it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GameDims {
    pub num_states: usize,
    pub actions_max: usize,
    pub actions_min: usize,
    pub horizon: usize,
    pub initial_state: usize,
}

impl GameDims {
    pub fn joint_actions(&self) -> usize {
        self.actions_max * self.actions_min
    }

    #[inline]
    pub fn joint_index(&self, a_max: usize, a_min: usize) -> usize {
        a_max * self.actions_min + a_min
    }

    #[inline]
    pub fn split_joint(&self, joint: usize) -> JointAction {
        JointAction {
            a_max: joint / self.actions_min,
            a_min: joint % self.actions_min,
        }
    }

    /// Flat index of the `(h, s, joint)` cell.
    #[inline]
    pub fn cell(&self, h: usize, s: usize, joint: usize) -> usize {
        (h * self.num_states + s) * self.joint_actions() + joint
    }

    pub fn num_cells(&self) -> usize {
        self.horizon * self.num_states * self.joint_actions()
    }

    fn check(&self) -> Result<()> {
        if self.num_states == 0 || self.actions_max == 0 || self.actions_min == 0 || self.horizon == 0
        {
            return Err(Error::InvalidGame(
                "num_states, actions_max, actions_min and horizon must be positive".into(),
            ));
        }
        if self.initial_state >= self.num_states {
            return Err(Error::InvalidGame(format!(
                "initial_state {} out of range for {} states",
                self.initial_state, self.num_states
            )));
        }
        Ok(())
    }
}

/// A pair of simultaneous actions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct JointAction {
    pub a_max: usize,
    pub a_min: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarkovGame {
    dims: GameDims,
    transitions: Vec<f64>,
    rewards: Vec<f64>,
}

/// One problem found by [`validate_game`]. Steps are reported 1-based.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    RowSum {
        h: usize,
        s: usize,
        a_max: usize,
        a_min: usize,
        sum: f64,
    },
    NegativeProbability {
        h: usize,
        s: usize,
        a_max: usize,
        a_min: usize,
        next: usize,
        value: f64,
    },
    RewardRange {
        h: usize,
        s: usize,
        a_max: usize,
        a_min: usize,
        value: f64,
    },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::RowSum { h, s, a_max, a_min, sum } => {
                write!(f, "transition row (h={h}, s={s}, a=({a_max},{a_min})) sums to {sum}")
            }
            Violation::NegativeProbability { h, s, a_max, a_min, next, value } => write!(
                f,
                "negative transition probability {value} at (h={h}, s={s}, a=({a_max},{a_min}), s'={next})"
            ),
            Violation::RewardRange { h, s, a_max, a_min, value } => {
                write!(f, "reward {value} outside [0,1] at (h={h}, s={s}, a=({a_max},{a_min}))")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks row sums, probability signs, and reward bounds.
pub fn validate_game(game: &MarkovGame) -> ValidationReport {
    let d = game.dims;
    let mut violations = Vec::new();
    for h in 0..d.horizon {
        for s in 0..d.num_states {
            for a_max in 0..d.actions_max {
                for a_min in 0..d.actions_min {
                    let joint = d.joint_index(a_max, a_min);
                    let row = game.next_state_dist(h, s, joint);
                    let mut sum = 0.0;
                    for (next, &p) in row.iter().enumerate() {
                        if !(p >= 0.0) {
                            violations.push(Violation::NegativeProbability {
                                h: h + 1,
                                s,
                                a_max,
                                a_min,
                                next,
                                value: p,
                            });
                        }
                        sum += p;
                    }
                    if !((sum - 1.0).abs() <= ROW_SUM_TOL) {
                        violations.push(Violation::RowSum { h: h + 1, s, a_max, a_min, sum });
                    }
                    let r = game.reward(h, s, joint);
                    if !(0.0..=1.0).contains(&r) {
                        violations.push(Violation::RewardRange {
                            h: h + 1,
                            s,
                            a_max,
                            a_min,
                            value: r,
                        });
                    }
                }
            }
        }
    }
    ValidationReport { violations }
}

impl MarkovGame {
    /// Builds a game from flat tables and validates it.
    pub fn new(dims: GameDims, transitions: Vec<f64>, rewards: Vec<f64>) -> Result<Self> {
        let game = Self::new_unchecked(dims, transitions, rewards)?;
        let report = validate_game(&game);
        if let Some(v) = report.violations.first() {
            return Err(Error::InvalidGame(format!(
                "{v} ({} violation(s) total)",
                report.violations.len()
            )));
        }
        Ok(game)
    }

    /// Builds a game checking only table shapes, not probability or reward
    /// bounds. Use [`validate_game`] to inspect the result.
    pub fn new_unchecked(dims: GameDims, transitions: Vec<f64>, rewards: Vec<f64>) -> Result<Self> {
        dims.check()?;
        let cells = dims.num_cells();
        if transitions.len() != cells * dims.num_states {
            return Err(Error::InvalidGame(format!(
                "transition table has {} entries, expected {}",
                transitions.len(),
                cells * dims.num_states
            )));
        }
        if rewards.len() != cells {
            return Err(Error::InvalidGame(format!(
                "reward table has {} entries, expected {cells}",
                rewards.len()
            )));
        }
        Ok(MarkovGame { dims, transitions, rewards })
    }

    /// Builds a game from closures `p(h, s, joint, s')` and `r(h, s, joint)`.
    pub fn from_fn(
        dims: GameDims,
        mut transition: impl FnMut(usize, usize, JointAction, usize) -> f64,
        mut reward: impl FnMut(usize, usize, JointAction) -> f64,
    ) -> Result<Self> {
        dims.check()?;
        let mut transitions = Vec::with_capacity(dims.num_cells() * dims.num_states);
        let mut rewards = Vec::with_capacity(dims.num_cells());
        for h in 0..dims.horizon {
            for s in 0..dims.num_states {
                for joint in 0..dims.joint_actions() {
                    let ja = dims.split_joint(joint);
                    for next in 0..dims.num_states {
                        transitions.push(transition(h, s, ja, next));
                    }
                    rewards.push(reward(h, s, ja));
                }
            }
        }
        Self::new(dims, transitions, rewards)
    }

    pub fn dims(&self) -> GameDims {
        self.dims
    }

    pub fn num_states(&self) -> usize {
        self.dims.num_states
    }

    pub fn horizon(&self) -> usize {
        self.dims.horizon
    }

    pub fn initial_state(&self) -> usize {
        self.dims.initial_state
    }

    /// `P_h(. | s, joint)` as a slice over next states.
    #[inline]
    pub fn next_state_dist(&self, h: usize, s: usize, joint: usize) -> &[f64] {
        let start = self.dims.cell(h, s, joint) * self.dims.num_states;
        &self.transitions[start..start + self.dims.num_states]
    }

    #[inline]
    pub fn reward(&self, h: usize, s: usize, joint: usize) -> f64 {
        self.rewards[self.dims.cell(h, s, joint)]
    }

    pub fn transitions(&self) -> &[f64] {
        &self.transitions
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn to_doc(&self) -> GameDoc {
        let d = self.dims;
        let mut transitions = Vec::with_capacity(d.horizon);
        let mut rewards = Vec::with_capacity(d.horizon);
        for h in 0..d.horizon {
            let mut th = Vec::with_capacity(d.num_states);
            let mut rh = Vec::with_capacity(d.num_states);
            for s in 0..d.num_states {
                let mut ts = Vec::with_capacity(d.actions_max);
                let mut rs = Vec::with_capacity(d.actions_max);
                for a in 0..d.actions_max {
                    let mut ta = Vec::with_capacity(d.actions_min);
                    let mut ra = Vec::with_capacity(d.actions_min);
                    for b in 0..d.actions_min {
                        let j = d.joint_index(a, b);
                        ta.push(self.next_state_dist(h, s, j).to_vec());
                        ra.push(self.reward(h, s, j));
                    }
                    ts.push(ta);
                    rs.push(ra);
                }
                th.push(ts);
                rh.push(rs);
            }
            transitions.push(th);
            rewards.push(rh);
        }
        GameDoc {
            num_states: d.num_states,
            actions_max: d.actions_max,
            actions_min: d.actions_min,
            horizon: d.horizon,
            initial_state: d.initial_state,
            transitions,
            rewards,
        }
    }

    pub fn from_doc(doc: &GameDoc) -> Result<Self> {
        let dims = GameDims {
            num_states: doc.num_states,
            actions_max: doc.actions_max,
            actions_min: doc.actions_min,
            horizon: doc.horizon,
            initial_state: doc.initial_state,
        };
        dims.check()?;
        let shape_err = |what: &str| Error::InvalidGame(format!("{what} has the wrong nested shape"));
        if doc.transitions.len() != dims.horizon || doc.rewards.len() != dims.horizon {
            return Err(shape_err("transitions/rewards (horizon axis)"));
        }
        let mut transitions = Vec::with_capacity(dims.num_cells() * dims.num_states);
        let mut rewards = Vec::with_capacity(dims.num_cells());
        for (th, rh) in doc.transitions.iter().zip(&doc.rewards) {
            if th.len() != dims.num_states || rh.len() != dims.num_states {
                return Err(shape_err("transitions/rewards (state axis)"));
            }
            for (ts, rs) in th.iter().zip(rh) {
                if ts.len() != dims.actions_max || rs.len() != dims.actions_max {
                    return Err(shape_err("transitions/rewards (max-action axis)"));
                }
                for (ta, ra) in ts.iter().zip(rs) {
                    if ta.len() != dims.actions_min || ra.len() != dims.actions_min {
                        return Err(shape_err("transitions/rewards (min-action axis)"));
                    }
                    for (row, &r) in ta.iter().zip(ra) {
                        if row.len() != dims.num_states {
                            return Err(shape_err("transitions (next-state axis)"));
                        }
                        transitions.extend_from_slice(row);
                        rewards.push(r);
                    }
                }
            }
        }
        Self::new(dims, transitions, rewards)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_doc())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: GameDoc = serde_json::from_str(text)?;
        Self::from_doc(&doc)
    }
}

/// JSON form of a [`MarkovGame`]; steps are the outermost axis.
///
/// `transitions[h][s][a_max][a_min][s']` and `rewards[h][s][a_max][a_min]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameDoc {
    pub num_states: usize,
    pub actions_max: usize,
    pub actions_min: usize,
    pub horizon: usize,
    pub initial_state: usize,
    pub transitions: Vec<Vec<Vec<Vec<Vec<f64>>>>>,
    pub rewards: Vec<Vec<Vec<Vec<f64>>>>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state() -> MarkovGame {
        let dims = GameDims {
            num_states: 2,
            actions_max: 2,
            actions_min: 2,
            horizon: 2,
            initial_state: 0,
        };
        MarkovGame::from_fn(
            dims,
            |_, s, ja, next| if (s + ja.a_max) % 2 == next { 0.75 } else { 0.25 },
            |_, _, ja| if ja.a_max == ja.a_min { 1.0 } else { 0.0 },
        )
        .unwrap()
    }

    #[test]
    fn well_formed_game_validates() {
        assert!(validate_game(&two_state()).is_ok());
    }

    #[test]
    fn short_row_is_reported_with_coordinates() {
        let g = two_state();
        let mut t = g.transitions().to_vec();
        // (h=0, s=1, joint=(1,0)) row
        let start = g.dims().cell(0, 1, g.dims().joint_index(1, 0)) * 2;
        t[start] = 0.65;
        let bad = MarkovGame::new_unchecked(g.dims(), t, g.rewards().to_vec()).unwrap();
        let report = validate_game(&bad);
        assert_eq!(report.violations.len(), 1);
        match &report.violations[0] {
            Violation::RowSum { h, s, a_max, a_min, sum } => {
                assert_eq!((*h, *s, *a_max, *a_min), (1, 1, 1, 0));
                assert!((sum - 0.9).abs() < 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn reward_out_of_range_is_reported() {
        let g = two_state();
        let mut r = g.rewards().to_vec();
        r[3] = 1.5;
        let bad = MarkovGame::new_unchecked(g.dims(), g.transitions().to_vec(), r).unwrap();
        let report = validate_game(&bad);
        assert!(matches!(
            report.violations.as_slice(),
            [Violation::RewardRange { value, .. }] if *value == 1.5
        ));
        assert!(MarkovGame::new(bad.dims(), bad.transitions().to_vec(), bad.rewards().to_vec()).is_err());
    }

    #[test]
    fn json_round_trip_is_lossless() {
        let dims = GameDims {
            num_states: 3,
            actions_max: 2,
            actions_min: 1,
            horizon: 2,
            initial_state: 2,
        };
        let g = MarkovGame::from_fn(
            dims,
            |h, s, ja, n| [[0.1, 0.2, 0.7], [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]][(h + s + ja.a_max) % 2][n],
            |h, s, _| 0.1 * (h + s) as f64,
        );
        // 1/3 rows do not sum to exactly 1 in floating point, but within tolerance
        let g = g.unwrap();
        let back = MarkovGame::from_json(&g.to_json().unwrap()).unwrap();
        assert_eq!(g, back);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut doc = two_state().to_doc();
        doc.rewards[0].pop();
        assert!(MarkovGame::from_doc(&doc).is_err());
    }
}
