//! POMDPs and their simulation by a Markov game against a fixed adversary.
//!
//! The game has one state per observation and one per (observation, action)
//! pair, and twice the horizon. At odd steps the learner's action moves the
//! game from `o_h` to `(o_h, a_h)` and collects the observation's reward; at
//! even steps the opponent's action is the next observation, and the game
//! moves there. The adversary samples that action from the POMDP's
//! conditional law of the next observation given the history so far.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{GameDims, MarkovGame};
use crate::guard::{Guards, NodeBudget};
use crate::policy::{check_dist, GeneralPolicy, Side};
use crate::rng::SimRng;
use crate::testkit::random_dist;

/// A finite-horizon POMDP whose rewards are carried by observations.
///
/// Indices are 0-based. `transitions[h][s][a][s']` is used between steps
/// `h` and `h + 1` (so it has `horizon - 1` entries), `emissions[h][s][o]` is
/// the observation law at step `h`, and `obs_rewards[o]` is the reward
/// collected when `o` is observed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pomdp {
    pub num_hidden: usize,
    pub num_actions: usize,
    pub num_obs: usize,
    pub horizon: usize,
    pub initial: Vec<f64>,
    pub transitions: Vec<Vec<Vec<Vec<f64>>>>,
    pub emissions: Vec<Vec<Vec<f64>>>,
    pub obs_rewards: Vec<f64>,
}

/// A learner policy on POMDP histories `[o_1, a_1, ..., o_h]`.
pub type PomdpPolicy = Arc<dyn Fn(&[u32]) -> Vec<f64> + Send + Sync>;

impl Pomdp {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidGame(m));
        if self.num_hidden == 0 || self.num_actions == 0 || self.num_obs == 0 || self.horizon == 0 {
            return bad("POMDP sizes must be positive".into());
        }
        let row = |v: &[f64], n: usize, what: &str| -> Result<()> {
            check_dist(v, n, 1e-12).map_err(|e| Error::InvalidGame(format!("{what}: {e}")))
        };
        row(&self.initial, self.num_hidden, "initial distribution")?;
        if self.transitions.len() != self.horizon - 1 {
            return bad(format!("expected {} transition steps", self.horizon - 1));
        }
        for (h, step) in self.transitions.iter().enumerate() {
            if step.len() != self.num_hidden {
                return bad(format!("transition step {} has the wrong number of states", h + 1));
            }
            for (s, per_action) in step.iter().enumerate() {
                if per_action.len() != self.num_actions {
                    return bad(format!("transition (h={}, s={s}) has the wrong number of actions", h + 1));
                }
                for (a, r) in per_action.iter().enumerate() {
                    row(r, self.num_hidden, &format!("transition (h={}, s={s}, a={a})", h + 1))?;
                }
            }
        }
        if self.emissions.len() != self.horizon {
            return bad(format!("expected {} emission steps", self.horizon));
        }
        for (h, step) in self.emissions.iter().enumerate() {
            if step.len() != self.num_hidden {
                return bad(format!("emission step {} has the wrong number of states", h + 1));
            }
            for (s, r) in step.iter().enumerate() {
                row(r, self.num_obs, &format!("emission (h={}, s={s})", h + 1))?;
            }
        }
        if self.obs_rewards.len() != self.num_obs || self.obs_rewards.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return bad("observation rewards must be in [0, 1], one per observation".into());
        }
        self.initial_observation()?;
        Ok(())
    }

    /// The first observation, which must be deterministic because the
    /// simulating game has a fixed initial state.
    pub fn initial_observation(&self) -> Result<usize> {
        let mut law = vec![0.0; self.num_obs];
        for (s, &p) in self.initial.iter().enumerate() {
            for (o, &e) in self.emissions[0][s].iter().enumerate() {
                law[o] += p * e;
            }
        }
        match law.iter().position(|&p| (p - 1.0).abs() <= 1e-12) {
            Some(o) => Ok(o),
            None => Err(Error::InvalidGame(
                "the first observation must be deterministic to simulate the POMDP with a fixed initial state".into(),
            )),
        }
    }

    /// Unnormalized forward vector after observing `obs[0]` then, for each
    /// later step, the action `acts[i]` and observation `obs[i + 1]`.
    fn forward(&self, obs: &[usize], acts: &[usize]) -> Vec<f64> {
        let mut alpha: Vec<f64> = (0..self.num_hidden)
            .map(|s| self.initial[s] * self.emissions[0][s][obs[0]])
            .collect();
        for i in 1..obs.len() {
            let mut next = vec![0.0; self.num_hidden];
            for (s, &w) in alpha.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                for (s2, &p) in self.transitions[i - 1][s][acts[i - 1]].iter().enumerate() {
                    next[s2] += w * p;
                }
            }
            for (s2, x) in next.iter_mut().enumerate() {
                *x *= self.emissions[i][s2][obs[i]];
            }
            alpha = next;
        }
        alpha
    }

    /// `P[o_{h+1} = . | o_1, a_1, ..., o_h, a_h]`, or `None` for a history
    /// of probability zero.
    pub fn next_observation_law(&self, obs: &[usize], acts: &[usize]) -> Option<Vec<f64>> {
        let h = obs.len();
        assert!(h >= 1 && h < self.horizon && acts.len() == h);
        let alpha = self.forward(obs, &acts[..h - 1]);
        let total: f64 = alpha.iter().sum();
        if total <= 0.0 {
            return None;
        }
        let mut law = vec![0.0; self.num_obs];
        for (s, &w) in alpha.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (s2, &p) in self.transitions[h - 1][s][acts[h - 1]].iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                for (o, &e) in self.emissions[h][s2].iter().enumerate() {
                    law[o] += w / total * p * e;
                }
            }
        }
        let sum: f64 = law.iter().sum();
        for x in law.iter_mut() {
            *x /= sum;
        }
        Some(law)
    }
}

/// Exact law of `[o_1, a_1, ..., o_H, a_H]` under `policy`.
pub fn pomdp_trajectory_law(pomdp: &Pomdp, policy: &PomdpPolicy, guards: &Guards) -> Result<BTreeMap<Vec<u32>, f64>> {
    pomdp.validate()?;
    let mut out = BTreeMap::new();
    let mut budget = NodeBudget::new(guards.history_nodes, "POMDP trajectory law (history nodes)");
    let o1 = pomdp.initial_observation()?;
    let alpha: Vec<f64> = (0..pomdp.num_hidden)
        .map(|s| pomdp.initial[s] * pomdp.emissions[0][s][o1])
        .collect();
    let mut hist = vec![o1 as u32];
    pomdp_law_node(pomdp, policy, &mut hist, &alpha, 1.0, &mut budget, &mut out)?;
    Ok(out)
}

fn pomdp_law_node(
    pomdp: &Pomdp,
    policy: &PomdpPolicy,
    hist: &mut Vec<u32>,
    alpha: &[f64],
    policy_prob: f64,
    budget: &mut NodeBudget,
    out: &mut BTreeMap<Vec<u32>, f64>,
) -> Result<()> {
    budget.tick()?;
    let h = hist.len() / 2;
    let dist = policy(hist);
    check_dist(&dist, pomdp.num_actions, 1e-9)
        .map_err(|e| Error::PolicyFault(format!("POMDP policy at {hist:?}: {e}")))?;
    for (a, &pa) in dist.iter().enumerate() {
        if pa <= 0.0 {
            continue;
        }
        hist.push(a as u32);
        if h + 1 == pomdp.horizon {
            let mass: f64 = alpha.iter().sum();
            if mass > 0.0 {
                *out.entry(hist.clone()).or_insert(0.0) += policy_prob * pa * mass;
            }
        } else {
            for o in 0..pomdp.num_obs {
                let mut next = vec![0.0; pomdp.num_hidden];
                for (s, &w) in alpha.iter().enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    for (s2, &p) in pomdp.transitions[h][s][a].iter().enumerate() {
                        next[s2] += w * p * pomdp.emissions[h + 1][s2][o];
                    }
                }
                if next.iter().sum::<f64>() > 0.0 {
                    hist.push(o as u32);
                    pomdp_law_node(pomdp, policy, hist, &next, policy_prob * pa, budget, out)?;
                    hist.pop();
                }
            }
        }
        hist.pop();
    }
    Ok(())
}

/// The simulating game together with the maps between the two problems.
#[derive(Debug, Clone)]
pub struct PomdpReduction {
    pub game: MarkovGame,
    pub pomdp: Arc<Pomdp>,
}

pub fn pomdp_to_mg(pomdp: &Pomdp) -> Result<PomdpReduction> {
    pomdp.validate()?;
    let (o_n, a_n) = (pomdp.num_obs, pomdp.num_actions);
    let dims = GameDims {
        num_states: o_n * a_n + o_n,
        actions_max: a_n,
        actions_min: o_n,
        horizon: 2 * pomdp.horizon,
        initial_state: pomdp.initial_observation()?,
    };
    let aug = |o: usize, a: usize| o_n + o * a_n + a;
    let game = MarkovGame::from_fn(
        dims,
        |t, s, ja, next| {
            let target = match (t % 2, s < o_n) {
                (0, true) => aug(s, ja.a_max),
                (1, false) => ja.a_min,
                _ => s,
            };
            if next == target {
                1.0
            } else {
                0.0
            }
        },
        |t, s, _| if t % 2 == 0 && s < o_n { pomdp.obs_rewards[s] } else { 0.0 },
    )?;
    Ok(PomdpReduction {
        game,
        pomdp: Arc::new(pomdp.clone()),
    })
}

impl PomdpReduction {
    pub fn aug_state(&self, o: usize, a: usize) -> usize {
        self.pomdp.num_obs + o * self.pomdp.num_actions + a
    }

    /// Splits a game history into POMDP observations and learner actions.
    fn decode(pomdp: &Pomdp, hist: &[u32]) -> (Vec<usize>, Vec<usize>) {
        let o_n = pomdp.num_obs;
        let mut obs = Vec::new();
        let mut acts = Vec::new();
        let mut t = 0;
        while 2 * t < hist.len() {
            if t % 2 == 0 {
                obs.push(hist[2 * t] as usize);
                if 2 * t + 1 < hist.len() {
                    acts.push(hist[2 * t + 1] as usize / o_n);
                }
            }
            t += 1;
        }
        (obs, acts)
    }

    /// The game policy that plays `policy` at odd steps and action 0 at even
    /// steps.
    pub fn learner_policy(&self, policy: PomdpPolicy, guards: &Guards) -> Result<GeneralPolicy> {
        let pomdp = self.pomdp.clone();
        let a_n = pomdp.num_actions;
        GeneralPolicy::from_fn_in_game(&self.game, Side::Max, "pomdp-learner", guards.history_nodes, move |hist| {
            let t = hist.len() / 2;
            if t % 2 == 1 {
                let mut v = vec![0.0; a_n];
                v[0] = 1.0;
                return v;
            }
            let (obs, acts) = Self::decode(&pomdp, hist);
            let mut key = Vec::with_capacity(2 * obs.len());
            for (i, &o) in obs.iter().enumerate() {
                key.push(o as u32);
                if i < acts.len() {
                    key.push(acts[i] as u32);
                }
            }
            policy(&key)
        })
    }

    /// The fixed adversary that samples the next observation from the
    /// POMDP's conditional law at even steps and plays 0 otherwise.
    pub fn adversary(&self, guards: &Guards) -> Result<GeneralPolicy> {
        let pomdp = self.pomdp.clone();
        let o_n = pomdp.num_obs;
        let point = move |i: usize| {
            let mut v = vec![0.0; o_n];
            v[i] = 1.0;
            v
        };
        GeneralPolicy::from_fn_in_game(&self.game, Side::Min, "pomdp-adversary", guards.history_nodes, move |hist| {
            let t = hist.len() / 2;
            let h = t / 2 + 1;
            if t % 2 == 0 || h >= pomdp.horizon {
                return point(0);
            }
            let (obs, acts) = Self::decode(&pomdp, hist);
            if obs.len() != h || acts.len() != h || obs.iter().any(|&o| o >= o_n) {
                return point(0);
            }
            // zero-probability histories get an arbitrary fixed answer
            pomdp.next_observation_law(&obs, &acts).unwrap_or_else(|| point(0))
        })
    }

    /// Maps a complete game trajectory (as listed by
    /// [`crate::value::trajectory_law`]) to `[o_1, a_1, ..., o_H, a_H]`.
    pub fn map_trajectory(&self, full: &[u32]) -> Vec<u32> {
        let o_n = self.pomdp.num_obs as u32;
        let mut out = Vec::with_capacity(2 * self.pomdp.horizon);
        for h in 0..self.pomdp.horizon {
            out.push(full[4 * h]);
            out.push(full[4 * h + 1] / o_n);
        }
        out
    }

    /// Maps a POMDP trajectory back to the unique game trajectory it
    /// corresponds to under the adversary.
    pub fn unmap_trajectory(&self, traj: &[u32]) -> Vec<u32> {
        let o_n = self.pomdp.num_obs;
        let a_n = self.pomdp.num_actions;
        let horizon = self.pomdp.horizon;
        let mut out = Vec::with_capacity(4 * horizon + 1);
        for h in 0..horizon {
            let o = traj[2 * h] as usize;
            let a = traj[2 * h + 1] as usize;
            let next_obs = if h + 1 < horizon { traj[2 * h + 2] as usize } else { 0 };
            out.push(o as u32);
            out.push((a * o_n) as u32);
            out.push((o_n + o * a_n + a) as u32);
            out.push(next_obs as u32);
            if h + 1 == horizon {
                out.push(0);
            }
        }
        out
    }
}

/// A random POMDP with a deterministic first observation.
pub fn random_pomdp(
    num_hidden: usize,
    num_actions: usize,
    num_obs: usize,
    horizon: usize,
    rng: &mut SimRng,
) -> Pomdp {
    let first_obs = rng.gen_range(0..num_obs);
    let initial = random_dist(num_hidden, rng);
    let transitions = (0..horizon - 1)
        .map(|_| {
            (0..num_hidden)
                .map(|_| (0..num_actions).map(|_| random_dist(num_hidden, rng)).collect())
                .collect()
        })
        .collect();
    let emissions = (0..horizon)
        .map(|h| {
            (0..num_hidden)
                .map(|_| {
                    if h == 0 {
                        let mut v = vec![0.0; num_obs];
                        v[first_obs] = 1.0;
                        v
                    } else {
                        random_dist(num_obs, rng)
                    }
                })
                .collect()
        })
        .collect();
    let obs_rewards = (0..num_obs).map(|_| rng.gen::<f64>()).collect();
    Pomdp {
        num_hidden,
        num_actions,
        num_obs,
        horizon,
        initial,
        transitions,
        emissions,
        obs_rewards,
    }
}

/// The hard combination-lock POMDP: hidden states `0 = good` and `1 = bad`,
/// four actions, observation `0` (reward 0) everywhere except in the good
/// state at the last step, which emits observation `1` (reward 1). Any action
/// other than the special one for the step moves to the absorbing bad state.
/// Returns the POMDP and the special action sequence.
pub fn hard_pomdp_combination_lock(horizon: usize, seed: u64) -> Result<(Pomdp, Vec<usize>)> {
    if horizon < 2 {
        return Err(Error::InvalidArgument("combination lock needs H >= 2".into()));
    }
    let mut rng = crate::rng::rng_from_seed(seed);
    let special: Vec<usize> = (0..horizon - 1).map(|_| rng.gen_range(0..4)).collect();
    let transitions = special
        .iter()
        .map(|&good_action| {
            vec![
                (0..4)
                    .map(|a| if a == good_action { vec![1.0, 0.0] } else { vec![0.0, 1.0] })
                    .collect(),
                vec![vec![0.0, 1.0]; 4],
            ]
        })
        .collect();
    let emissions = (0..horizon)
        .map(|h| {
            if h + 1 == horizon {
                vec![vec![0.0, 1.0], vec![1.0, 0.0]]
            } else {
                vec![vec![1.0, 0.0], vec![1.0, 0.0]]
            }
        })
        .collect();
    let pomdp = Pomdp {
        num_hidden: 2,
        num_actions: 4,
        num_obs: 2,
        horizon,
        initial: vec![1.0, 0.0],
        transitions,
        emissions,
        obs_rewards: vec![0.0, 1.0],
    };
    pomdp.validate()?;
    Ok((pomdp, special))
}

/// Open-loop POMDP policy playing `actions[h]` at step `h`.
pub fn open_loop_policy(actions: Vec<usize>, num_actions: usize) -> PomdpPolicy {
    Arc::new(move |hist: &[u32]| {
        let mut v = vec![0.0; num_actions];
        v[actions[hist.len() / 2]] = 1.0;
        v
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use crate::value::{exact_value_general, trajectory_law};

    #[test]
    fn sizes() {
        let mut rng = rng_from_seed(0);
        let p = random_pomdp(3, 2, 2, 3, &mut rng);
        let r = pomdp_to_mg(&p).unwrap();
        let d = r.game.dims();
        assert_eq!(d.num_states, 6);
        assert_eq!(d.horizon, 6);
        assert_eq!((d.actions_max, d.actions_min), (2, 2));
    }

    #[test]
    fn laws_agree_on_random_instance() {
        let mut rng = rng_from_seed(1);
        let p = random_pomdp(2, 2, 2, 2, &mut rng);
        let r = pomdp_to_mg(&p).unwrap();
        let policy: PomdpPolicy = Arc::new(|h: &[u32]| if h.len() == 1 { vec![0.3, 0.7] } else if h[1] == 0 { vec![1.0, 0.0] } else { vec![0.4, 0.6] });
        let g = Guards::default();
        let direct = pomdp_trajectory_law(&p, &policy, &g).unwrap();
        let mu = r.learner_policy(policy, &g).unwrap();
        let nu = r.adversary(&g).unwrap();
        let mapped = trajectory_law(&r.game, &mu, &nu, &g).unwrap();
        let mut via_game = BTreeMap::new();
        for (t, p) in mapped {
            assert_eq!(r.unmap_trajectory(&r.map_trajectory(&t)), t);
            *via_game.entry(r.map_trajectory(&t)).or_insert(0.0) += p;
        }
        assert_eq!(direct.len(), via_game.len());
        for (t, p) in &direct {
            assert!((p - via_game[t]).abs() <= 1e-12, "{t:?}");
        }
    }

    #[test]
    fn combination_lock() {
        let (p, special) = hard_pomdp_combination_lock(3, 7).unwrap();
        assert_eq!((p.num_hidden, p.num_actions), (2, 4));
        let r = pomdp_to_mg(&p).unwrap();
        let g = Guards::default();
        let adv = r.adversary(&g).unwrap();
        let mut seq = special.clone();
        seq.push(0);
        let good = r.learner_policy(open_loop_policy(seq.clone(), 4), &g).unwrap();
        assert_eq!(exact_value_general(&r.game, &good, &adv, &g).unwrap(), 1.0);
        for h in 0..special.len() {
            let mut wrong = seq.clone();
            wrong[h] = (wrong[h] + 1) % 4;
            let bad = r.learner_policy(open_loop_policy(wrong, 4), &g).unwrap();
            assert_eq!(exact_value_general(&r.game, &bad, &adv, &g).unwrap(), 0.0);
        }
        assert!(adv.is_deterministic().unwrap());
    }

    #[test]
    fn random_first_observation_is_rejected() {
        let mut rng = rng_from_seed(2);
        let mut p = random_pomdp(2, 2, 2, 2, &mut rng);
        p.emissions[0] = vec![vec![0.5, 0.5], vec![0.5, 0.5]];
        assert!(pomdp_to_mg(&p).is_err());
    }
}
