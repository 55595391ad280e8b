//! Hindsight baselines and regret series.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::EpisodeRecord;
use crate::error::{Error, Result};
use crate::game::{GameDims, MarkovGame};
use crate::guard::Guards;
use crate::nash::nash_value;
use crate::policy::{GeneralPolicy, MarkovPolicy, MixedWeights, PolicyId, Side};
use crate::value::{best_response_to_mixture, exact_value};

/// Relative tolerance under which two hindsight totals count as tied.
const TIE_TOL: f64 = 1e-12;

/// Every deterministic Markov max-player policy, in lexicographic order of
/// the `(h, s)`-major action table.
pub fn deterministic_markov_candidates(dims: GameDims, guards: &Guards) -> Result<Vec<MarkovPolicy>> {
    let cells = dims.horizon * dims.num_states;
    let count = (dims.actions_max as f64).powi(cells as i32);
    if count > guards.markov_candidates as f64 {
        return Err(Error::GuardExceeded {
            what: "deterministic Markov candidates",
            bound: guards.markov_candidates,
        });
    }
    let mut out = Vec::with_capacity(count as usize);
    let mut actions = vec![0usize; cells];
    loop {
        out.push(MarkovPolicy::deterministic(dims, Side::Max, &actions)?);
        let mut i = cells;
        loop {
            if i == 0 {
                return Ok(out);
            }
            i -= 1;
            actions[i] += 1;
            if actions[i] < dims.actions_max {
                break;
            }
            actions[i] = 0;
        }
    }
}

/// Revealed policies grouped by id, in first-seen order, with the index of
/// each episode's group.
struct Distinct {
    policies: Vec<GeneralPolicy>,
    episode_group: Vec<usize>,
}

fn distinct(revealed: &[GeneralPolicy]) -> Distinct {
    let mut index: HashMap<PolicyId, usize> = HashMap::new();
    let mut policies = Vec::new();
    let episode_group = revealed
        .iter()
        .map(|p| {
            *index.entry(p.id()).or_insert_with(|| {
                policies.push(p.clone());
                policies.len() - 1
            })
        })
        .collect();
    Distinct { policies, episode_group }
}

/// For each prefix length `k`, the best total `max_c sum_{t<=k} V(c, nu_t)`
/// over `candidates`, and the first candidate attaining it.
fn prefix_best(
    game: &MarkovGame,
    candidates: &[GeneralPolicy],
    revealed: &[GeneralPolicy],
    guards: &Guards,
) -> Result<Vec<(f64, usize)>> {
    if candidates.is_empty() {
        return Err(Error::EmptyClass);
    }
    let groups = distinct(revealed);
    let columns: Vec<Vec<f64>> = groups
        .policies
        .iter()
        .map(|nu| {
            candidates
                .par_iter()
                .map(|mu| exact_value(game, mu, nu, guards))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let mut totals = vec![0.0; candidates.len()];
    let mut out = Vec::with_capacity(revealed.len());
    for &g in &groups.episode_group {
        for (t, v) in totals.iter_mut().zip(&columns[g]) {
            *t += v;
        }
        out.push(argmax_first(&totals));
    }
    Ok(out)
}

fn argmax_first(totals: &[f64]) -> (f64, usize) {
    let mut best = (totals[0], 0);
    for (i, &t) in totals.iter().enumerate().skip(1) {
        if t > best.0 + TIE_TOL * best.0.abs().max(1.0) {
            best = (t, i);
        }
    }
    best
}

/// The deterministic Markov policy maximizing `sum_k V^{mu x nu_k}`; ties go
/// to the lexicographically smallest action table.
pub fn hindsight_best_markov(
    game: &MarkovGame,
    revealed: &[GeneralPolicy],
    guards: &Guards,
) -> Result<(MarkovPolicy, f64)> {
    if revealed.is_empty() {
        return Err(Error::InvalidArgument("no revealed policies".into()));
    }
    let candidates = deterministic_markov_candidates(game.dims(), guards)?;
    let general: Vec<GeneralPolicy> = candidates.iter().cloned().map(MarkovPolicy::into_general).collect();
    let (total, i) = *prefix_best(game, &general, revealed, guards)?.last().expect("nonempty");
    Ok((candidates[i].clone(), total))
}

/// The best general policy in hindsight: a best response to the empirical
/// mixture of the revealed policies, with its total over all episodes.
pub fn hindsight_best_general(
    game: &MarkovGame,
    revealed: &[GeneralPolicy],
    guards: &Guards,
) -> Result<(GeneralPolicy, f64)> {
    if revealed.is_empty() {
        return Err(Error::InvalidArgument("no revealed policies".into()));
    }
    let (policy, value) = mixture_best(game, revealed, guards)?;
    Ok((policy, value * revealed.len() as f64))
}

fn mixture_best(game: &MarkovGame, revealed: &[GeneralPolicy], guards: &Guards) -> Result<(GeneralPolicy, f64)> {
    let groups = distinct(revealed);
    let mut counts = vec![0usize; groups.policies.len()];
    for &g in &groups.episode_group {
        counts[g] += 1;
    }
    let n = revealed.len() as f64;
    let w = MixedWeights::new(counts.iter().map(|&c| c as f64 / n).collect())?;
    let br = best_response_to_mixture(game, &groups.policies, &w, guards)?;
    Ok((br.policy, br.value))
}

/// Where the general-baseline regret is evaluated.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Checkpoints {
    /// Powers of two and the final episode.
    #[default]
    LogSpaced,
    EveryK,
    /// The listed episodes plus the final one.
    Explicit(Vec<usize>),
}

impl Checkpoints {
    pub fn contains(&self, k: usize, last: usize) -> bool {
        k == last
            || match self {
                Checkpoints::LogSpaced => k.is_power_of_two(),
                Checkpoints::EveryK => true,
                Checkpoints::Explicit(list) => list.contains(&k),
            }
    }
}

/// Which comparators to compute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegretOptions {
    pub markov: bool,
    pub general: bool,
    pub nash: bool,
    pub checkpoints: Checkpoints,
}

impl Default for RegretOptions {
    fn default() -> Self {
        RegretOptions {
            markov: true,
            general: true,
            nash: true,
            checkpoints: Checkpoints::LogSpaced,
        }
    }
}

/// One row of the regret CSV. Missing entries were not computed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegretRow {
    pub k: usize,
    pub regret_markov: Option<f64>,
    pub regret_general: Option<f64>,
    pub nash_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretSeries {
    /// Against the exact values `V^{mu_k x nu_k}`.
    pub rows: Vec<RegretRow>,
    /// The same comparators against realized returns.
    pub realized: Vec<RegretRow>,
    pub hindsight_best_markov: Option<f64>,
    pub hindsight_best_markov_id: Option<PolicyId>,
    pub hindsight_best_general: Option<f64>,
    pub nash_value: Option<f64>,
}

/// Regret of a run for every prefix `k`.
pub fn regret_curves(
    game: &MarkovGame,
    records: &[EpisodeRecord],
    revealed: &[GeneralPolicy],
    options: &RegretOptions,
    guards: &Guards,
) -> Result<RegretSeries> {
    if records.len() != revealed.len() {
        return Err(Error::InvalidArgument("one revealed policy per record is required".into()));
    }
    let big_k = records.len();
    let markov = if options.markov && big_k > 0 {
        let candidates = deterministic_markov_candidates(game.dims(), guards)?;
        let general: Vec<GeneralPolicy> = candidates.into_iter().map(MarkovPolicy::into_general).collect();
        let best = prefix_best(game, &general, revealed, guards)?;
        let id = general[best[big_k - 1].1].id();
        Some((best.into_iter().map(|(t, _)| t).collect::<Vec<_>>(), id))
    } else {
        None
    };
    let mut general = vec![None; big_k];
    if options.general {
        for k in 1..=big_k {
            if options.checkpoints.contains(k, big_k) {
                let (_, v) = mixture_best(game, &revealed[..k], guards)?;
                general[k - 1] = Some(v * k as f64);
            }
        }
    }
    let v_star = if options.nash { Some(nash_value(game)?.value) } else { None };

    let build = |values: &dyn Fn(&EpisodeRecord) -> f64| -> Vec<RegretRow> {
        let mut acc = 0.0;
        records
            .iter()
            .enumerate()
            .map(|(i, r)| {
                acc += values(r);
                let k = i + 1;
                RegretRow {
                    k,
                    regret_markov: markov.as_ref().map(|(m, _)| m[i] - acc),
                    regret_general: general[i].map(|g| g - acc),
                    nash_gap: v_star.map(|v| k as f64 * v - acc),
                }
            })
            .collect()
    };
    let rows = build(&|r| r.exact_value);
    let realized = build(&|r| r.realized_return);
    Ok(RegretSeries {
        rows,
        realized,
        hindsight_best_markov: markov.as_ref().map(|(m, _)| m[big_k - 1]),
        hindsight_best_markov_id: markov.as_ref().map(|(_, id)| *id),
        hindsight_best_general: general.last().copied().flatten(),
        nash_value: v_star,
    })
}

/// Regret against an explicit class: for each `k`,
/// `max_{mu in class} sum_{t<=k} V^{mu x nu_t} - sum_{t<=k} V^{mu_t x nu_t}`.
pub fn regret_against_class(
    game: &MarkovGame,
    records: &[EpisodeRecord],
    revealed: &[GeneralPolicy],
    class: &[GeneralPolicy],
    guards: &Guards,
) -> Result<Vec<f64>> {
    if records.len() != revealed.len() {
        return Err(Error::InvalidArgument("one revealed policy per record is required".into()));
    }
    let best = prefix_best(game, class, revealed, guards)?;
    let mut acc = 0.0;
    Ok(records
        .iter()
        .zip(best)
        .map(|(r, (b, _))| {
            acc += r.exact_value;
            b - acc
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reductions::matching_game;
    use crate::testkit::all_deterministic_markov;

    fn constant(g: &MarkovGame, a: usize) -> GeneralPolicy {
        MarkovPolicy::constant(g.dims(), Side::Min, a).unwrap().into_general()
    }

    #[test]
    fn candidates_match_testkit_enumeration() {
        let d = GameDims {
            num_states: 2,
            actions_max: 3,
            actions_min: 1,
            horizon: 2,
            initial_state: 0,
        };
        let ours = deterministic_markov_candidates(d, &Guards::default()).unwrap();
        let theirs = all_deterministic_markov(d, Side::Max);
        assert_eq!(ours, theirs);
        let tight = Guards {
            markov_candidates: 80,
            ..Guards::default()
        };
        assert!(deterministic_markov_candidates(d, &tight).unwrap_err().is_guard());
    }

    #[test]
    fn matching_h1_hindsight() {
        let g = matching_game(1).unwrap();
        let revealed = vec![constant(&g, 0), constant(&g, 0), constant(&g, 1)];
        let (mu, total) = hindsight_best_markov(&g, &revealed, &Guards::default()).unwrap();
        assert_eq!(mu.action_at(0, 0), Some(0));
        assert_eq!(total, 2.0);
    }

    #[test]
    fn memory_pays_in_matching_h2() {
        let g = matching_game(2).unwrap();
        let d = g.dims();
        let a = MarkovPolicy::deterministic(d, Side::Min, &[0, 0]).unwrap().into_general();
        let b = MarkovPolicy::deterministic(d, Side::Min, &[1, 1]).unwrap().into_general();
        let revealed = vec![a, b];
        let guards = Guards::default();
        let (_, markov) = hindsight_best_markov(&g, &revealed, &guards).unwrap();
        let (_, general) = hindsight_best_general(&g, &revealed, &guards).unwrap();
        // a Markov learner can only match one of the two last bits
        assert_eq!(markov, 1.0);
        // first action is observed before the last, so memory matches both
        assert!(general > markov);
        assert_eq!(general, 2.0);
    }

    #[test]
    fn checkpoints() {
        assert!(Checkpoints::LogSpaced.contains(8, 10));
        assert!(!Checkpoints::LogSpaced.contains(9, 10));
        assert!(Checkpoints::LogSpaced.contains(10, 10));
        assert!(Checkpoints::Explicit(vec![3]).contains(3, 10));
    }
}
