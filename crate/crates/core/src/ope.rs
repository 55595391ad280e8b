//! Optimistic policy evaluation and optimistic best-response sets.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cover::{adaptive_cover, simplex_cover};
use crate::error::{Error, Result};
use crate::estimation::{Bonus, Counters};
use crate::game::{GameDims, MarkovGame};
use crate::guard::Guards;
use crate::policy::{check_dist, GeneralPolicy, MarkovPolicy, MixedWeights, DIST_TOL};
use crate::value::{self, MixtureBestResponse, TraceRow, ValueModel};

/// Empirical transitions plus per-cell bonuses over the known rewards.
///
/// Backups are clipped above at `H - h + 1`. The model is immutable; its
/// `snapshot_id` is a hash of its tables and keys OPE memo entries.
#[derive(Debug, Clone)]
pub struct OptimisticModel {
    dims: GameDims,
    p_hat: Vec<f64>,
    bonus: Vec<f64>,
    rewards: Vec<f64>,
    snapshot_id: u64,
}

impl OptimisticModel {
    /// `P_hat` from `counters` and `beta(N_h(s, a))` at every cell.
    pub fn new(game: &MarkovGame, counters: &Counters, bonus: &Bonus) -> Result<Self> {
        let d = game.dims();
        if counters.dims() != d {
            return Err(Error::WrongGameShape("counters built for a different game".into()));
        }
        let mut p_hat = Vec::with_capacity(d.num_cells() * d.num_states);
        let mut b = Vec::with_capacity(d.num_cells());
        for h in 0..d.horizon {
            for s in 0..d.num_states {
                for joint in 0..d.joint_actions() {
                    p_hat.extend(counters.empirical_transition(h, s, joint));
                    b.push(bonus.at(counters.visits(h, s, joint)));
                }
            }
        }
        Self::build(d, p_hat, b, game.rewards().to_vec())
    }

    /// A model from explicit flat tables (cell-major, as in [`MarkovGame`]).
    pub fn from_parts(game: &MarkovGame, p_hat: Vec<f64>, bonus: Vec<f64>) -> Result<Self> {
        let d = game.dims();
        if p_hat.len() != d.num_cells() * d.num_states || bonus.len() != d.num_cells() {
            return Err(Error::InvalidArgument("model tables have the wrong size".into()));
        }
        for (cell, row) in p_hat.chunks(d.num_states).enumerate() {
            check_dist(row, d.num_states, 1e-12)
                .map_err(|e| Error::InvalidArgument(format!("P_hat row {cell}: {e}")))?;
        }
        Self::build(d, p_hat, bonus, game.rewards().to_vec())
    }

    /// The true transitions with zero bonus.
    pub fn exact(game: &MarkovGame) -> Self {
        let d = game.dims();
        Self::build(d, game.transitions().to_vec(), vec![0.0; d.num_cells()], game.rewards().to_vec())
            .expect("a valid game yields a valid model")
    }

    /// Like [`OptimisticModel::from_parts`] but without validating the tables,
    /// for fault-injection checks.
    pub fn from_parts_unchecked(game: &MarkovGame, p_hat: Vec<f64>, bonus: Vec<f64>) -> Self {
        let d = game.dims();
        let snapshot_id = hash_tables(&p_hat, &bonus);
        OptimisticModel {
            dims: d,
            p_hat,
            bonus,
            rewards: game.rewards().to_vec(),
            snapshot_id,
        }
    }

    fn build(dims: GameDims, p_hat: Vec<f64>, bonus: Vec<f64>, rewards: Vec<f64>) -> Result<Self> {
        if let Some(b) = bonus.iter().find(|b| !(**b >= 0.0) || !b.is_finite()) {
            return Err(Error::InvalidArgument(format!("bonus entries must be finite and >= 0, got {b}")));
        }
        let snapshot_id = hash_tables(&p_hat, &bonus);
        Ok(OptimisticModel {
            dims,
            p_hat,
            bonus,
            rewards,
            snapshot_id,
        })
    }

    pub fn snapshot_id(&self) -> u64 {
        self.snapshot_id
    }

    pub fn p_hat(&self) -> &[f64] {
        &self.p_hat
    }

    pub fn bonus_table(&self) -> &[f64] {
        &self.bonus
    }
}

fn hash_tables(p_hat: &[f64], bonus: &[f64]) -> u64 {
    let mut hasher = Sha256::new();
    for x in p_hat.iter().chain(bonus) {
        hasher.update(x.to_bits().to_le_bytes());
    }
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

impl ValueModel for OptimisticModel {
    fn dims(&self) -> GameDims {
        self.dims
    }

    #[inline]
    fn next_dist(&self, h: usize, s: usize, joint: usize) -> &[f64] {
        let start = self.dims.cell(h, s, joint) * self.dims.num_states;
        &self.p_hat[start..start + self.dims.num_states]
    }

    #[inline]
    fn reward(&self, h: usize, s: usize, joint: usize) -> f64 {
        self.rewards[self.dims.cell(h, s, joint)]
    }

    #[inline]
    fn bonus(&self, h: usize, s: usize, joint: usize) -> f64 {
        self.bonus[self.dims.cell(h, s, joint)]
    }

    fn clips(&self) -> bool {
        true
    }
}

/// OPE over the joint-history tree.
pub fn ope_evaluate(
    model: &OptimisticModel,
    mu: &GeneralPolicy,
    nu: &GeneralPolicy,
    guards: &Guards,
) -> Result<f64> {
    value::evaluate_general(model, mu, nu, guards)
}

/// OPE for Markov policies by state-indexed backward induction.
pub fn ope_evaluate_markov(model: &OptimisticModel, mu: &MarkovPolicy, nu: &MarkovPolicy) -> Result<f64> {
    value::evaluate_markov(model, mu, nu)
}

/// OPE taking the state-indexed path when both policies are Markov.
pub fn ope_evaluate_fast(
    model: &OptimisticModel,
    mu: &GeneralPolicy,
    nu: &GeneralPolicy,
    guards: &Guards,
) -> Result<f64> {
    value::evaluate(model, mu, nu, guards)
}

/// OPE with the per-history `V` and `Q` values, for debugging dumps.
pub fn ope_trace(
    model: &OptimisticModel,
    mu: &GeneralPolicy,
    nu: &GeneralPolicy,
    guards: &Guards,
) -> Result<(f64, Vec<TraceRow>)> {
    let mut rows = Vec::new();
    let v = value::evaluate_general_traced(model, mu, nu, guards, Some(&mut rows))?;
    rows.reverse();
    Ok((v, rows))
}

/// `argmax_mu sum_i w_i OPE(mu x nu_i)` over general policies.
pub fn optimistic_mixture_best_response(
    model: &OptimisticModel,
    opponents: &[GeneralPolicy],
    w: &MixedWeights,
    guards: &Guards,
) -> Result<MixtureBestResponse> {
    value::best_response_to_mixture(model, opponents, w, guards)
}

/// How the mixture simplex is covered when building a best-response set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoverMode {
    /// The composition grid with `m = ceil(2k / epsilon)`.
    Grid,
    /// Longest-edge bisection that stops on cells whose vertices share a
    /// best response, or whose diameter is at most `epsilon`.
    Adaptive,
    /// The grid when it has at most [`AUTO_GRID_LIMIT`] points, otherwise
    /// the adaptive cover.
    #[default]
    Auto,
}

pub const AUTO_GRID_LIMIT: u128 = 4096;

/// One optimistic mixture best response per cover point, merged by id in
/// first-seen order.
pub fn optimistic_best_response_set(
    model: &OptimisticModel,
    psi: &[GeneralPolicy],
    epsilon: f64,
    mode: CoverMode,
    guards: &Guards,
) -> Result<Vec<GeneralPolicy>> {
    if psi.is_empty() {
        return Err(Error::EmptyClass);
    }
    let k = psi.len();
    let use_grid = match mode {
        CoverMode::Grid => true,
        CoverMode::Adaptive => false,
        CoverMode::Auto => {
            let m = crate::cover::grid_resolution(k, epsilon.min(1.0))?;
            crate::cover::grid_size(k, m) <= AUTO_GRID_LIMIT
        }
    };
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    if use_grid {
        let cover = simplex_cover(k, epsilon.min(1.0), guards.cover_points)?;
        for w in &cover.points {
            let br = optimistic_mixture_best_response(model, psi, w, guards)?;
            if seen.insert(br.policy.id()) {
                out.push(br.policy);
            }
        }
    } else {
        let points = adaptive_cover(k, epsilon, guards.cover_points, |w| {
            let w = MixedWeights::new(w.to_vec())?;
            let br = optimistic_mixture_best_response(model, psi, &w, guards)?;
            Ok(LabelledPolicy(br.policy))
        })?;
        for p in points {
            if seen.insert(p.label.0.id()) {
                out.push(p.label.0);
            }
        }
    }
    Ok(out)
}

#[derive(Clone)]
struct LabelledPolicy(GeneralPolicy);

impl PartialEq for LabelledPolicy {
    fn eq(&self, other: &Self) -> bool {
        self.0.id() == other.0.id()
    }
}

/// `sum_i w_i OPE(mu x nu_i)`.
pub fn mixture_ope(
    model: &OptimisticModel,
    mu: &GeneralPolicy,
    opponents: &[GeneralPolicy],
    w: &MixedWeights,
    guards: &Guards,
) -> Result<f64> {
    let mut total = 0.0;
    for (nu, &wi) in opponents.iter().zip(w.as_slice()) {
        if wi > 0.0 {
            total += wi * ope_evaluate_fast(model, mu, nu, guards)?;
        }
    }
    Ok(total)
}

/// Checks `P_hat` rows of a model built by hand; used by the verify suites.
pub fn model_rows_valid(model: &OptimisticModel) -> bool {
    model
        .p_hat
        .chunks(model.dims.num_states)
        .all(|row| check_dist(row, model.dims.num_states, DIST_TOL).is_ok())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::GameDims;
    use crate::policy::Side;
    use crate::rng::rng_from_seed;
    use crate::testkit;

    fn one_step(r: f64) -> MarkovGame {
        let dims = GameDims {
            num_states: 1,
            actions_max: 1,
            actions_min: 1,
            horizon: 1,
            initial_state: 0,
        };
        MarkovGame::from_fn(dims, |_, _, _, _| 1.0, |_, _, _| r).unwrap()
    }

    #[test]
    fn clipping_at_one_step() {
        let g = one_step(0.3);
        let mu = MarkovPolicy::uniform(g.dims(), Side::Max).into_general();
        let nu = MarkovPolicy::uniform(g.dims(), Side::Min).into_general();
        let m = OptimisticModel::from_parts(&g, vec![1.0], vec![0.5]).unwrap();
        assert!((ope_evaluate(&m, &mu, &nu, &Guards::default()).unwrap() - 0.8).abs() < 1e-15);
        let m = OptimisticModel::from_parts(&g, vec![1.0], vec![0.9]).unwrap();
        assert_eq!(ope_evaluate(&m, &mu, &nu, &Guards::default()).unwrap(), 1.0);
    }

    #[test]
    fn negative_bonus_rejected() {
        let g = one_step(0.3);
        assert!(OptimisticModel::from_parts(&g, vec![1.0], vec![-0.1]).is_err());
    }

    #[test]
    fn exact_model_matches_exact_value() {
        let mut rng = rng_from_seed(3);
        for _ in 0..20 {
            let dims = testkit::random_dims(&mut rng, 3, 2, 3);
            let g = testkit::random_game(dims, &mut rng);
            let m = OptimisticModel::exact(&g);
            let mu = testkit::random_history_policy(dims, Side::Max, 1);
            let nu = testkit::random_markov(dims, Side::Min, &mut rng).into_general();
            let a = ope_evaluate(&m, &mu, &nu, &Guards::default()).unwrap();
            let b = value::exact_value_general(&g, &mu, &nu, &Guards::default()).unwrap();
            assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn single_opponent_set_has_one_policy() {
        let g = crate::reductions::matching_game(2).unwrap();
        let m = OptimisticModel::exact(&g);
        let nu = MarkovPolicy::constant(g.dims(), Side::Min, 1).unwrap().into_general();
        let set = optimistic_best_response_set(&m, &[nu.clone()], 0.1, CoverMode::Grid, &Guards::default()).unwrap();
        assert_eq!(set.len(), 1);
        let dup = optimistic_best_response_set(&m, &[nu.clone(), nu], 0.5, CoverMode::Grid, &Guards::default()).unwrap();
        assert_eq!(dup.len(), 1);
    }

    #[test]
    fn two_opponents_at_half_give_at_most_nine() {
        let mut rng = rng_from_seed(8);
        let dims = GameDims {
            num_states: 2,
            actions_max: 2,
            actions_min: 2,
            horizon: 2,
            initial_state: 0,
        };
        let g = testkit::random_game(dims, &mut rng);
        let m = OptimisticModel::exact(&g);
        let psi: Vec<_> = (0..2).map(|_| testkit::random_markov(dims, Side::Min, &mut rng).into_general()).collect();
        let set = optimistic_best_response_set(&m, &psi, 0.5, CoverMode::Grid, &Guards::default()).unwrap();
        assert!(!set.is_empty() && set.len() <= 9, "{}", set.len());
    }

    #[test]
    fn trace_covers_tree() {
        let g = crate::reductions::matching_game(2).unwrap();
        let m = OptimisticModel::exact(&g);
        let mu = MarkovPolicy::uniform(g.dims(), Side::Max).into_general();
        let nu = MarkovPolicy::uniform(g.dims(), Side::Min).into_general();
        let (v, rows) = ope_trace(&m, &mu, &nu, &Guards::default()).unwrap();
        assert_eq!(v, 0.5);
        assert_eq!(rows.len(), 5);
        assert_eq!(rows[0].history, vec![0]);
    }
}
