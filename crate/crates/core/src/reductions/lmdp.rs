//! Latent MDPs and their simulation by a Markov game against a finite
//! class of Markov opponents.
//!
//! The game has one state per LMDP state and one per (state, action) pair,
//! and twice the horizon. At odd steps the learner's action moves the game
//! from `s_h` to `(s_h, a_h)`; at even steps the opponent's action
//! `b = 2 s' + r` picks the next state `s'` and the reward `r`. Opponent `t`
//! samples `b` from component `t`, so drawing the opponent with the mixing
//! weights reproduces the LMDP.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{GameDims, MarkovGame};
use crate::guard::{Guards, NodeBudget};
use crate::policy::{check_dist, GeneralPolicy, MarkovPolicy, MixedWeights, Side};
use crate::rng::SimRng;
use crate::testkit::random_dist;

/// One MDP of the mixture. `transitions[h][s][a][s']` and
/// `rewards[h][s][a]` (in `{0, 1}`) both have `horizon` entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LmdpComponent {
    pub transitions: Vec<Vec<Vec<Vec<f64>>>>,
    pub rewards: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lmdp {
    pub num_states: usize,
    pub num_actions: usize,
    pub horizon: usize,
    pub initial_state: usize,
    pub weights: Vec<f64>,
    pub components: Vec<LmdpComponent>,
}

/// A learner policy on LMDP histories `[s_1, a_1, r_1, ..., s_h]`.
pub type LmdpPolicy = Arc<dyn Fn(&[u32]) -> Vec<f64> + Send + Sync>;

impl Lmdp {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidGame(m));
        if self.num_states == 0 || self.num_actions == 0 || self.horizon == 0 {
            return bad("LMDP sizes must be positive".into());
        }
        if self.initial_state >= self.num_states {
            return bad(format!("initial state {} out of range", self.initial_state));
        }
        if self.components.is_empty() || self.components.len() != self.weights.len() {
            return bad("need one mixing weight per component, and at least one component".into());
        }
        MixedWeights::new(self.weights.clone()).map_err(|e| Error::InvalidGame(format!("mixing weights: {e}")))?;
        for (t, c) in self.components.iter().enumerate() {
            if c.transitions.len() != self.horizon || c.rewards.len() != self.horizon {
                return bad(format!("component {t} must have {} steps", self.horizon));
            }
            for h in 0..self.horizon {
                if c.transitions[h].len() != self.num_states || c.rewards[h].len() != self.num_states {
                    return bad(format!("component {t} step {} has the wrong number of states", h + 1));
                }
                for s in 0..self.num_states {
                    if c.transitions[h][s].len() != self.num_actions || c.rewards[h][s].len() != self.num_actions {
                        return bad(format!("component {t} (h={}, s={s}) has the wrong number of actions", h + 1));
                    }
                    for a in 0..self.num_actions {
                        check_dist(&c.transitions[h][s][a], self.num_states, 1e-12).map_err(|e| {
                            Error::InvalidGame(format!("component {t} transition (h={}, s={s}, a={a}): {e}", h + 1))
                        })?;
                        let r = c.rewards[h][s][a];
                        if r != 0.0 && r != 1.0 {
                            return bad(format!("component {t} reward (h={}, s={s}, a={a}) must be 0 or 1", h + 1));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Exact law of `[s_1, a_1, r_1, ..., s_H, a_H, r_H, s_{H+1}]` under
/// `policy`, mixed over components.
pub fn lmdp_trajectory_law(lmdp: &Lmdp, policy: &LmdpPolicy, guards: &Guards) -> Result<BTreeMap<Vec<u32>, f64>> {
    lmdp.validate()?;
    let mut out = BTreeMap::new();
    let mut budget = NodeBudget::new(guards.history_nodes, "LMDP trajectory law (history nodes)");
    for (c, &q) in lmdp.components.iter().zip(&lmdp.weights) {
        if q <= 0.0 {
            continue;
        }
        let mut hist = vec![lmdp.initial_state as u32];
        lmdp_law_node(lmdp, c, policy, &mut hist, q, &mut budget, &mut out)?;
    }
    Ok(out)
}

fn lmdp_law_node(
    lmdp: &Lmdp,
    c: &LmdpComponent,
    policy: &LmdpPolicy,
    hist: &mut Vec<u32>,
    prob: f64,
    budget: &mut NodeBudget,
    out: &mut BTreeMap<Vec<u32>, f64>,
) -> Result<()> {
    budget.tick()?;
    if hist.len() == 3 * lmdp.horizon + 1 {
        *out.entry(hist.clone()).or_insert(0.0) += prob;
        return Ok(());
    }
    let h = hist.len() / 3;
    let s = hist[hist.len() - 1] as usize;
    let dist = policy(hist);
    check_dist(&dist, lmdp.num_actions, 1e-9)
        .map_err(|e| Error::PolicyFault(format!("LMDP policy at {hist:?}: {e}")))?;
    for (a, &pa) in dist.iter().enumerate() {
        if pa <= 0.0 {
            continue;
        }
        let r = c.rewards[h][s][a] as u32;
        for (s2, &p) in c.transitions[h][s][a].iter().enumerate() {
            if p <= 0.0 {
                continue;
            }
            hist.extend_from_slice(&[a as u32, r, s2 as u32]);
            lmdp_law_node(lmdp, c, policy, hist, prob * pa * p, budget, out)?;
            hist.truncate(hist.len() - 3);
        }
    }
    Ok(())
}

/// The simulating game with its opponent class and mixing weights.
#[derive(Debug, Clone)]
pub struct LmdpReduction {
    pub game: MarkovGame,
    pub opponents: Vec<GeneralPolicy>,
    pub weights: MixedWeights,
    pub lmdp: Arc<Lmdp>,
}

pub fn lmdp_to_mg(lmdp: &Lmdp) -> Result<LmdpReduction> {
    lmdp.validate()?;
    let (s_n, a_n) = (lmdp.num_states, lmdp.num_actions);
    let dims = GameDims {
        num_states: s_n + s_n * a_n,
        actions_max: a_n,
        actions_min: 2 * s_n,
        horizon: 2 * lmdp.horizon,
        initial_state: lmdp.initial_state,
    };
    let aug = |s: usize, a: usize| s_n + s * a_n + a;
    let game = MarkovGame::from_fn(
        dims,
        |t, s, ja, next| {
            let target = match (t % 2, s < s_n) {
                (0, true) => aug(s, ja.a_max),
                (1, false) => ja.a_min / 2,
                _ => s,
            };
            if next == target {
                1.0
            } else {
                0.0
            }
        },
        |t, s, ja| if t % 2 == 1 && s >= s_n { (ja.a_min % 2) as f64 } else { 0.0 },
    )?;
    let opponents = lmdp
        .components
        .iter()
        .enumerate()
        .map(|(i, c)| {
            MarkovPolicy::from_fn(dims, Side::Min, |t, s| {
                let mut row = vec![0.0; 2 * s_n];
                if t % 2 == 1 && s >= s_n {
                    let (s0, a) = ((s - s_n) / a_n, (s - s_n) % a_n);
                    let r = c.rewards[t / 2][s0][a] as usize;
                    for (s2, &p) in c.transitions[t / 2][s0][a].iter().enumerate() {
                        row[2 * s2 + r] = p;
                    }
                } else {
                    row[0] = 1.0;
                }
                row
            })
            .map(|p| p.into_general().with_label(&format!("lmdp-component-{i}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LmdpReduction {
        game,
        opponents,
        weights: MixedWeights::new(lmdp.weights.clone())?,
        lmdp: Arc::new(lmdp.clone()),
    })
}

impl LmdpReduction {
    /// Game policy playing `policy` at odd steps and action 0 at even steps.
    pub fn learner_policy(&self, policy: LmdpPolicy, guards: &Guards) -> Result<GeneralPolicy> {
        let lmdp = self.lmdp.clone();
        let (a_n, b_n) = (lmdp.num_actions, 2 * lmdp.num_states);
        GeneralPolicy::from_fn_in_game(&self.game, Side::Max, "lmdp-learner", guards.history_nodes, move |hist| {
            let t = hist.len() / 2;
            if t % 2 == 1 {
                let mut v = vec![0.0; a_n];
                v[0] = 1.0;
                return v;
            }
            let mut key = Vec::with_capacity(3 * t / 2 + 1);
            for h in 0..t / 2 {
                let b = hist[4 * h + 3] as usize % b_n;
                key.push(hist[4 * h]);
                key.push((hist[4 * h + 1] as usize / b_n) as u32);
                key.push((b % 2) as u32);
            }
            key.push(hist[hist.len() - 1]);
            policy(&key)
        })
    }

    /// Maps a complete game trajectory to
    /// `[s_1, a_1, r_1, ..., s_H, a_H, r_H, s_{H+1}]`.
    pub fn map_trajectory(&self, full: &[u32]) -> Vec<u32> {
        let b_n = 2 * self.lmdp.num_states as u32;
        let mut out = Vec::with_capacity(3 * self.lmdp.horizon + 1);
        for h in 0..self.lmdp.horizon {
            let b = full[4 * h + 3] % b_n;
            out.extend_from_slice(&[full[4 * h], full[4 * h + 1] / b_n, b % 2]);
        }
        out.push(full[4 * self.lmdp.horizon]);
        out
    }
}

/// Optimal value of a single MDP by backward induction.
pub fn mdp_optimal_value(lmdp: &Lmdp, component: usize) -> f64 {
    let c = &lmdp.components[component];
    let mut v = vec![0.0; lmdp.num_states];
    for h in (0..lmdp.horizon).rev() {
        v = (0..lmdp.num_states)
            .map(|s| {
                (0..lmdp.num_actions)
                    .map(|a| c.rewards[h][s][a] + c.transitions[h][s][a].iter().zip(&v).map(|(p, x)| p * x).sum::<f64>())
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
    }
    v[lmdp.initial_state]
}

/// A random LMDP with Bernoulli(1/2) rewards and mixing weights from a
/// random simplex point.
pub fn random_lmdp(num_states: usize, num_actions: usize, horizon: usize, components: usize, rng: &mut SimRng) -> Lmdp {
    let mut weights = random_dist(components, rng);
    if weights.iter().any(|&w| w == 0.0) {
        weights = vec![1.0 / components as f64; components];
    }
    let components = (0..components)
        .map(|_| LmdpComponent {
            transitions: (0..horizon)
                .map(|_| {
                    (0..num_states)
                        .map(|_| (0..num_actions).map(|_| random_dist(num_states, rng)).collect())
                        .collect()
                })
                .collect(),
            rewards: (0..horizon)
                .map(|_| {
                    (0..num_states)
                        .map(|_| (0..num_actions).map(|_| if rng.gen::<bool>() { 1.0 } else { 0.0 }).collect())
                        .collect()
                })
                .collect(),
        })
        .collect();
    Lmdp {
        num_states,
        num_actions,
        horizon,
        initial_state: 0,
        weights,
        components,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use crate::value::{best_response_to_mixture, trajectory_law};

    #[test]
    fn sizes() {
        let mut rng = rng_from_seed(0);
        let l = random_lmdp(2, 3, 2, 2, &mut rng);
        let r = lmdp_to_mg(&l).unwrap();
        let d = r.game.dims();
        assert_eq!(d.num_states, 2 + 6);
        assert_eq!((d.actions_max, d.actions_min, d.horizon), (3, 4, 4));
        assert_eq!(r.opponents.len(), 2);
    }

    #[test]
    fn laws_agree_on_random_instances() {
        let g = Guards::default();
        for seed in 0..5 {
            let mut rng = rng_from_seed(seed);
            let l = random_lmdp(2, 2, 2, 2, &mut rng);
            let r = lmdp_to_mg(&l).unwrap();
            let policy: LmdpPolicy = Arc::new(|h: &[u32]| {
                let x = h.iter().map(|&v| v as f64).sum::<f64>();
                let p = 0.2 + 0.6 * (x * 0.37).fract();
                vec![p, 1.0 - p]
            });
            let direct = lmdp_trajectory_law(&l, &policy, &g).unwrap();
            let mu = r.learner_policy(policy, &g).unwrap();
            let mut via_game = BTreeMap::new();
            for (nu, &q) in r.opponents.iter().zip(r.weights.as_slice()) {
                for (t, p) in trajectory_law(&r.game, &mu, nu, &g).unwrap() {
                    *via_game.entry(r.map_trajectory(&t)).or_insert(0.0) += q * p;
                }
            }
            assert_eq!(direct.len(), via_game.len());
            for (t, p) in &direct {
                assert!((p - via_game[t]).abs() <= 1e-12, "{t:?}");
            }
        }
    }

    #[test]
    fn single_component_best_response_is_mdp_optimum() {
        let g = Guards::default();
        for seed in 0..5 {
            let mut rng = rng_from_seed(100 + seed);
            let l = random_lmdp(2, 2, 3, 1, &mut rng);
            let r = lmdp_to_mg(&l).unwrap();
            let br = best_response_to_mixture(&r.game, &r.opponents, &r.weights, &g).unwrap();
            assert!((br.value - mdp_optimal_value(&l, 0)).abs() <= 1e-12);
        }
    }

    #[test]
    fn rewards_must_be_binary() {
        let mut rng = rng_from_seed(3);
        let mut l = random_lmdp(2, 2, 2, 1, &mut rng);
        l.components[0].rewards[0][0][0] = 0.5;
        assert!(lmdp_to_mg(&l).is_err());
    }
}
